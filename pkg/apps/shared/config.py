from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="IPVI_", env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )

    # Core
    log_level: str = Field(default="INFO")

    # Execution
    workers: int = Field(default=1, ge=1)
    output_dir: str = Field(default="runs")
    metrics_port: int | None = None


settings = Settings()
