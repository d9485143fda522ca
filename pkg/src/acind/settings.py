"""Settings - handles process-wide configuration read from the environment"""

import os
from dataclasses import dataclass
from functools import lru_cache

from dotenv import load_dotenv

from .errors import ValidationError

load_dotenv()


@dataclass(frozen=True)
class Settings:
    """Environment-driven configuration"""

    threads: int = 0
    log_level: str = "WARNING"
    progress: bool = False

    @classmethod
    def from_env(cls) -> "Settings":
        """Build settings from ACIND_* environment variables"""
        raw_threads = os.getenv("ACIND_THREADS", "0").strip() or "0"
        try:
            threads = int(raw_threads)
        except ValueError:
            raise ValidationError(f"ACIND_THREADS must be an integer, got {raw_threads!r}")
        if threads < 0:
            raise ValidationError(f"ACIND_THREADS must be >= 0, got {threads}")

        log_level = os.getenv("ACIND_LOG_LEVEL", "WARNING").strip().upper() or "WARNING"
        progress = os.getenv("ACIND_PROGRESS", "").strip().lower() in ("1", "true", "yes", "on")
        return cls(threads=threads, log_level=log_level, progress=progress)

    def worker_count(self) -> int:
        """Resolved thread cap (0 means one worker per CPU)"""
        if self.threads == 0:
            return os.cpu_count() or 1
        return self.threads


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Read the environment once per process"""
    return Settings.from_env()


def worker_count() -> int:
    """Thread cap used for internal parallelism"""
    return get_settings().worker_count()
