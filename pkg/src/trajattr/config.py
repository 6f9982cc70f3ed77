"""Flat ``key = value`` run configuration."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .data import DEFAULT_MIX, parse_mix
from .errors import ConfigError, DatasetError


@dataclass(frozen=True)
class RunConfig:
    layout: str = "default"
    n_traj: int = 60
    max_len: int = 30
    mix: str = DEFAULT_MIX
    data_seed: int = 7
    d_model: int = 64
    lr: float = 1e-2
    epochs: int = 100
    clip_norm: float = 5.0
    encoder_seed: int = 3
    k_min: int = 2
    k_max: str = "auto"
    cluster_seed: int = 0
    M: str = "auto"
    T_soft: float = 1.0
    distance: str = "wasserstein"
    gamma: float = 0.95
    tol: float = 1e-8
    r_pess: float = -1.0
    eval_states: str = "reachable"
    top_n: int = 3
    out: str = "run"

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(1 <= self.n_traj <= 100_000, "n_traj must be in [1, 100000]")
        need(1 <= self.max_len <= 1000, "max_len must be in [1, 1000]")
        try:
            parse_mix(self.mix)
        except DatasetError as exc:
            raise ConfigError(str(exc)) from exc
        need(2 <= self.d_model <= 1024, "d_model must be in [2, 1024]")
        need(0 < self.lr <= 1, "lr must be in (0, 1]")
        need(0 <= self.epochs <= 100_000, "epochs must be in [0, 100000]")
        need(self.clip_norm > 0, "clip_norm must be positive")
        need(self.k_min >= 1, "k_min must be >= 1")
        need(self.k_max == "auto" or self.k_max.isdigit() and int(self.k_max) >= self.k_min,
             "k_max must be 'auto' or an integer >= k_min")
        need(self.M == "auto" or _is_positive_float(self.M), "M must be 'auto' or a positive number")
        need(self.T_soft > 0, "T_soft must be positive")
        need(self.distance in ("wasserstein", "tv"), "distance must be 'wasserstein' or 'tv'")
        need(0 < self.gamma < 1, "gamma must lie in (0, 1)")
        need(0 < self.tol < 1, "tol must lie in (0, 1)")
        need(self.r_pess <= 0, "r_pess must be <= 0")
        need(self.top_n >= 1, "top_n must be >= 1")
        need(self.eval_states == "reachable" or _parse_cells(self.eval_states) is not None,
             "eval_states must be 'reachable' or 'r,c;r,c;...'")

    def resolved_k_max(self, n_points: int) -> int:
        if self.k_max == "auto":
            return max(self.k_min, min(16, n_points // 3))
        return int(self.k_max)

    def resolved_M(self, n_traj: int) -> float:
        return float(n_traj) if self.M == "auto" else float(self.M)

    def eval_cells(self) -> list[tuple[int, int]] | None:
        return None if self.eval_states == "reachable" else _parse_cells(self.eval_states)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()

    def with_seed(self, seed: int) -> RunConfig:
        return replace(self, data_seed=seed, encoder_seed=seed, cluster_seed=seed)


def _is_positive_float(s: str) -> bool:
    try:
        return float(s) > 0
    except ValueError:
        return False


def _parse_cells(s: str) -> list[tuple[int, int]] | None:
    try:
        cells = []
        for part in s.split(";"):
            r, c = part.strip().strip("()").split(",")
            cells.append((int(r), int(c)))
        return cells
    except ValueError:
        return None


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse ``key = value`` lines; '#' starts a comment."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = value
    values.update({k: str(v) for k, v in overrides.items() if v is not None})
    kwargs = {}
    for key, value in values.items():
        kind = types[key]
        try:
            if kind == "int":
                kwargs[key] = int(value)
            elif kind == "float":
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: cannot parse {value!r} as {kind}") from exc
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path: str | Path, **overrides) -> RunConfig:
    """Load a config file; a relative layout path is resolved against the file's directory."""
    path = Path(path)
    cfg = parse_config(path.read_text(encoding="utf-8"), **overrides)
    if cfg.layout != "default" and not Path(cfg.layout).is_absolute():
        cfg = replace(cfg, layout=str((path.parent / cfg.layout).resolve()))
    return cfg
