from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    app_name: str = "Valid Intervals Bench"
    debug: bool = False
    log_level: str = "INFO"

    # Where `run` writes rows.csv / aggregate.csv (env: RESULTS_DIR)
    results_dir: str = Field(default="results")

    # Protocol defaults
    default_alpha: float = Field(default=0.1, gt=0, lt=1)
    method_time_budget_s: float = Field(default=600.0, gt=0)
    max_workers: int = Field(default=1, ge=1)

    # Model defaults
    gp_max_n: int = Field(default=20_000, ge=2)
    qd_softness: float = Field(default=160.0, gt=0)
    mc_samples: int = Field(default=50, ge=2)
    ensemble_size: int = Field(default=5, ge=2)

    # HTTP server
    port: int = 8000

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "extra": "ignore",
    }


_settings_instance: Settings = None  # type: ignore[assignment]


def get_settings() -> Settings:
    global _settings_instance
    if _settings_instance is None:
        _settings_instance = Settings()
    return _settings_instance


def reset_settings() -> None:
    """Drop the cached instance so the next get_settings() re-reads the environment."""
    global _settings_instance
    _settings_instance = None  # type: ignore[assignment]
