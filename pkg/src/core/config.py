from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Protocol knobs (scenario files override these per run)
    t_prepare_ms: Optional[int] = None  # None -> 2 * expected transfer + swarm deadline
    staleness_max_ms: int = 2000
    checkpoint_interval: int = 10
    eta: float = 0.1
    k_min: int = 3
    swarm_deadline_ms: int = 50
    swarm_jitter_max_ms: int = 2
    user_moved_tick_ms: int = 100
    rendezvous_capacity: int = 64
    policy_overhead_bytes: int = 200
    link_params_bytes: int = 64
    link_latency_bonus_pct: int = 0
    shadowing_sigma_db: float = 0.0

    # Logging
    log_level: str = "INFO"
    log_json: bool = False

    # Run ledger
    ledger_url: str = "sqlite:///waan_runs.db"

    model_config = SettingsConfigDict(env_prefix="WAAN_", env_file=".env", extra="ignore")


settings = Settings()
