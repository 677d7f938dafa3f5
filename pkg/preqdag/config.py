import os
from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="PREQDAG_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
    )

    # Application
    app_name: str = "preqdag"
    log_level: str = "INFO"

    # Worker pool
    workers: int = os.cpu_count() or 1

    # Scoring defaults
    default_alpha: float = 0.5
    default_blocks: int = 6
    min_first_split: int = 10

    # Search defaults
    gnp_link_probability: float = 0.25
    curve_top: int = 14

    # Output layout
    cache_dirname: str = "cache"


@lru_cache()
def get_settings() -> Settings:
    return Settings()


settings = get_settings()
