import os
import logging
from dataclasses import dataclass

from dotenv import load_dotenv

load_dotenv()

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _default_workers() -> int:
    return max(1, (os.cpu_count() or 2) - 1)


@dataclass(frozen=True)
class Settings:
    """Environment-driven defaults for the CLI, batch runner and HTTP service"""

    log_level: str
    workers: int
    output_dir: str
    desk_duration_s: float
    port: int
    max_api_duration_s: float

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            log_level=os.getenv("MANETSIM_LOG_LEVEL", "INFO").upper(),
            workers=int(os.getenv("MANETSIM_WORKERS", _default_workers())),
            output_dir=os.getenv("MANETSIM_OUTPUT_DIR", "results"),
            desk_duration_s=float(os.getenv("MANETSIM_DESK_DURATION", "300")),
            port=int(os.getenv("MANETSIM_PORT", "8000")),
            max_api_duration_s=float(os.getenv("MANETSIM_MAX_API_DURATION", "600")),
        )


settings = Settings.from_env()


def configure_logging(level: str = None) -> None:
    """Configure root logging once for an entry point"""
    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level), logging.INFO),
        format=LOG_FORMAT,
    )
