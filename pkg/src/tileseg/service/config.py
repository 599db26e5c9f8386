"""Runtime settings: config file first, environment on top."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

_ENV_PREFIX = "TILESEG_"


@dataclass(frozen=True)
class ServiceConfig:
    data_dir: str = "tileseg-data"
    port: int = 8077
    results_per_tile: int = 3  # submissions needed before a tile fuses
    tile_size: int = 40
    overlap_fraction: float = 0.10
    border_fraction: float = 0.10

    @classmethod
    def load(cls, path=None, env=None) -> "ServiceConfig":
        """Defaults, overlaid by the JSON config file, overlaid by env vars.

        Recognized variables: TILESEG_DATA_DIR, TILESEG_PORT, TILESEG_K,
        TILESEG_TILE_SIZE, TILESEG_OVERLAP, TILESEG_BORDER.
        """
        cfg = cls()
        if path is not None:
            raw = json.loads(Path(path).read_text())
            known = {k: raw[k] for k in cfg.__dataclass_fields__ if k in raw}
            if "k" in raw:
                known["results_per_tile"] = raw["k"]
            cfg = replace(cfg, **known)
        env = os.environ if env is None else env

        def pick(name, cast, current):
            value = env.get(_ENV_PREFIX + name)
            return current if value is None else cast(value)

        return replace(
            cfg,
            data_dir=pick("DATA_DIR", str, cfg.data_dir),
            port=pick("PORT", int, cfg.port),
            results_per_tile=pick("K", int, cfg.results_per_tile),
            tile_size=pick("TILE_SIZE", int, cfg.tile_size),
            overlap_fraction=pick("OVERLAP", float, cfg.overlap_fraction),
            border_fraction=pick("BORDER", float, cfg.border_fraction),
        )
