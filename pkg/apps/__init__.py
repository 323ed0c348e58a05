"""IPVI applications package."""
