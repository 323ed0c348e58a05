# empty file; marks this as a package
