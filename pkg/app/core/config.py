# ticketlab/app/core/config.py
"""
Centralized settings/config for the ticket laboratory.

Priority for every value:
  1) explicit CLI flag / ExperimentPlan field   (handled by callers)
  2) TICKETLAB_* environment variable
  3) .env in the project root
  4) defaults below

Desk-scale defaults follow the reference protocol: 15 epochs, 5 seeds x 5 runs,
six pruning steps (50, 60, 80, 90, 95, 98 percent).
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load .env from project root
_PROJECT_ROOT = Path(__file__).resolve().parents[2]
load_dotenv(dotenv_path=_PROJECT_ROOT / ".env")


def _csv(raw: str) -> List[str]:
    if not raw:
        return []
    return [x.strip() for x in raw.split(",") if x.strip()]


def parse_schedule(raw: str) -> List[float]:
    """'50,60,80' -> [50.0, 60.0, 80.0]. Validation happens in PruneSchedule."""
    try:
        return [float(x) for x in _csv(raw)]
    except ValueError as e:
        raise ValueError(f"Invalid schedule '{raw}': {e}") from e


def parse_int_list(raw: str) -> List[int]:
    """'0,1,2' -> [0, 1, 2]; a bare count '5' is NOT expanded here."""
    try:
        return [int(x) for x in _csv(raw)]
    except ValueError as e:
        raise ValueError(f"Invalid integer list '{raw}': {e}") from e


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="TICKETLAB_",
        env_file=str(_PROJECT_ROOT / ".env"),
        extra="ignore",
    )

    # ---------------- App ----------------
    APP_ENV: str = "dev"
    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = False

    # ---------------- Paths ----------------
    OUTPUT_DIR: str = str(_PROJECT_ROOT / "results")
    DATA_DIR: str = str(_PROJECT_ROOT / "data")

    # ---------------- Training ----------------
    EPOCHS: int = 15
    LEARNING_RATE: float = 0.05
    BATCH_SIZE: int = 32
    GRAD_NOISE_STD: float = 0.002

    # ---------------- Protocol ----------------
    SCHEDULE: str = "50,60,80,90,95,98"
    SCHEDULE_DEEP: str = "50,60,90,98,99,99.9"
    SEEDS: int = 5
    RUNS: int = 5
    WORKERS: int = 1
    PROBE_SIZE: int = 512

    # ---------------- Datasets ----------------
    TRAIN_SUBSAMPLE: int = 2000
    TEST_SUBSAMPLE: int = 1000

    # ---------------- Statistics ----------------
    MC_TRIALS: int = 10_000
    EXACT_PMF_LIMIT: int = 1000

    def debug_snapshot(self) -> Dict[str, Any]:
        return {
            "env": self.APP_ENV,
            "log": {"level": self.LOG_LEVEL, "json": self.LOG_JSON},
            "paths": {"output": self.OUTPUT_DIR, "data": self.DATA_DIR},
            "training": {
                "epochs": self.EPOCHS,
                "lr": self.LEARNING_RATE,
                "batch_size": self.BATCH_SIZE,
                "grad_noise_std": self.GRAD_NOISE_STD,
            },
            "protocol": {
                "schedule": get_default_schedule(),
                "seeds": self.SEEDS,
                "runs": self.RUNS,
                "workers": self.WORKERS,
                "probe_size": self.PROBE_SIZE,
            },
            "stats": {"mc_trials": self.MC_TRIALS, "exact_pmf_limit": self.EXACT_PMF_LIMIT},
        }


# --------------- Singleton ---------------
settings = Settings()

# --------------- Tiny helpers (for easy import) ---------------
def get_default_schedule() -> List[float]:
    return parse_schedule(settings.SCHEDULE)


def get_schedule_preset(name: str) -> List[float]:
    """'default' | 'deep' (the larger-network schedule)."""
    key = (name or "default").strip().lower()
    if key == "deep":
        return parse_schedule(settings.SCHEDULE_DEEP)
    if key == "default":
        return get_default_schedule()
    raise ValueError(f"Unknown schedule preset '{name}'")


def get_output_dir() -> Path:
    return Path(settings.OUTPUT_DIR)


def get_data_dir() -> Path:
    return Path(settings.DATA_DIR)


if __name__ == "__main__":
    import orjson

    print(orjson.dumps(settings.debug_snapshot(), option=orjson.OPT_INDENT_2).decode())
