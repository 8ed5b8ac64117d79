import logging
from pathlib import Path
from functools import lru_cache
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict
from dotenv import load_dotenv

logger = logging.getLogger(__name__)

# Load .env file from project root (2 levels up from backend/app/config.py)
project_root = Path(__file__).resolve().parents[2]
env_path = project_root / ".env"
if env_path.exists():
    load_dotenv(env_path, override=False)
    logger.debug(f"Loaded .env from: {env_path}")

DEFAULT_EMPTY_NODE_MARKER = "∅"


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="COREF_",
        env_file=str(env_path),
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    log_level: str = "INFO"
    log_format: str = Field("text", pattern="^(json|text)$")

    # Empty nodes are surfaced as tokens prefixed by this character
    empty_node_marker: str = Field(DEFAULT_EMPTY_NODE_MARKER, min_length=1, max_length=1)

    # Context windows
    window_size: int = Field(512, ge=2)
    right_context: int = Field(50, ge=0)

    # Runs
    seed: int = 0
    jobs: int = Field(1, ge=1)
    output_dir: str = "runs"


@lru_cache()
def get_settings() -> Settings:
    return Settings()


# Global settings instance
settings = get_settings()
