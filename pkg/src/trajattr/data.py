"""Offline trajectory datasets: generation from behavior policies and JSONL I/O."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .gridworld import (
    MOVES,
    CellKind,
    N_ACTIONS,
    GridLayout,
    goal_distances,
    next_position,
    step,
)

FORMAT_NAME = "trajattr-dataset"
FORMAT_VERSION = 1

BEHAVIORS = ("uniform", "eps_greedy", "noisy_goal")
DEFAULT_MIX = "uniform:0.4,eps_greedy@0.2:0.4,noisy_goal@0.3:0.2"


@dataclass(frozen=True)
class Trajectory:
    id: int
    obs: tuple[int, ...]
    act: tuple[int, ...]
    rew: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.obs) == len(self.act) == len(self.rew)):
            raise DatasetError(f"trajectory {self.id}: obs/act/rew lengths differ")

    def __len__(self) -> int:
        return len(self.obs)

    @property
    def steps(self) -> list[tuple[int, int, float]]:
        return list(zip(self.obs, self.act, self.rew))


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trajectories:
            raise DatasetError("dataset must contain at least one trajectory (n_traj >= 1)")
        ids = [t.id for t in self.trajectories]
        if ids != list(range(len(ids))):
            raise DatasetError("trajectory ids must be unique and dense 0..n_traj-1 in order")

    @property
    def n_traj(self) -> int:
        return len(self.trajectories)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __getitem__(self, i: int) -> Trajectory:
        return self.trajectories[i]

    def source_ids(self) -> list[int]:
        """Ids in the dataset this one was derived from (identity when not derived)."""
        return list(self.metadata.get("source_ids", range(self.n_traj)))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.trajectories == other.trajectories and self.metadata == other.metadata


@dataclass(frozen=True)
class Behavior:
    name: str
    weight: float
    param: float | None = None

    def label(self) -> str:
        return self.name if self.param is None else f"{self.name}@{self.param:g}"


def parse_mix(text: str) -> list[Behavior]:
    """Parse ``name[@param]:weight`` entries separated by commas."""
    mix = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        try:
            head, weight = part.rsplit(":", 1)
            name, _, param = head.partition("@")
            mix.append(Behavior(name.strip(), float(weight), float(param) if param else None))
        except ValueError as exc:
            raise DatasetError(f"bad behavior mix entry {part!r}") from exc
    validate_mix(mix)
    return mix


def format_mix(mix: list[Behavior]) -> str:
    return ",".join(f"{b.label()}:{b.weight:g}" for b in mix)


def validate_mix(mix: list[Behavior]) -> None:
    if not mix:
        raise DatasetError("behavior mix is empty")
    for b in mix:
        if b.name not in BEHAVIORS:
            raise DatasetError(f"unknown behavior policy {b.name!r}; choose from {BEHAVIORS}")
        if b.weight < 0:
            raise DatasetError(f"negative weight for {b.name}")
        if b.name in ("eps_greedy", "noisy_goal") and b.param is not None and not 0 <= b.param <= 1:
            raise DatasetError(f"{b.name} parameter must lie in [0, 1]")
    if abs(sum(b.weight for b in mix) - 1.0) > 1e-9:
        raise DatasetError("behavior mix weights must sum to 1")


def _greedy_actions(layout, dist, r, c):
    best, best_d = [], math.inf
    for a in range(N_ACTIONS):
        d = dist.get(next_position(layout, r, c, a), math.inf)
        if d < best_d:
            best, best_d = [a], d
        elif d == best_d:
            best.append(a)
    return best if best_d < math.inf else []


def _toward(r, c, target):
    out = []
    for a, (dr, dc) in MOVES.items():
        before = abs(target[0] - r) + abs(target[1] - c)
        after = abs(target[0] - r - dr) + abs(target[1] - c - dc)
        if after < before:
            out.append(int(a))
    return out


def _rollout(layout, behavior, start, max_len, rng, dist, goals):
    state = layout.state(*start)
    target = goals[rng.integers(len(goals))]
    eps = behavior.param if behavior.param is not None else (0.2 if behavior.name == "eps_greedy" else 0.3)
    obs, act, rew = [], [], []
    for _ in range(max_len):
        r, c = state.row, state.col
        if behavior.name == "uniform":
            a = int(rng.integers(N_ACTIONS))
        else:
            if behavior.name == "eps_greedy":
                choices = _greedy_actions(layout, dist, r, c)
            else:
                choices = _toward(r, c, target)
            if rng.random() < eps or not choices:
                a = int(rng.integers(N_ACTIONS))
            else:
                a = int(choices[rng.integers(len(choices))])
        nxt, reward, done = step(layout, state, a)
        obs.append(layout.index(r, c))
        act.append(a)
        rew.append(reward)
        state = nxt
        if done:
            break
    return obs, act, rew


def generate_offline_dataset(
    layout: GridLayout,
    mix: list[Behavior] | str = DEFAULT_MIX,
    n_traj: int = 60,
    max_len: int = 30,
    seed: int = 0,
) -> Dataset:
    """Roll out ``n_traj`` episodes, each under one behavior drawn from ``mix``."""
    if isinstance(mix, str):
        mix = parse_mix(mix)
    validate_mix(mix)
    if n_traj < 1:
        raise DatasetError("n_traj must be >= 1")
    if max_len < 1:
        raise DatasetError("max_len must be >= 1")

    rng = np.random.default_rng(seed)
    weights = np.array([b.weight for b in mix], dtype=float)
    dist = goal_distances(layout)
    goals = layout.cells_of(CellKind.GOAL)
    starts = layout.start_states
    trajectories, labels = [], []
    for i in range(n_traj):
        behavior = mix[int(rng.choice(len(mix), p=weights))]
        start = starts[int(rng.integers(len(starts)))]
        obs, act, rew = _rollout(layout, behavior, start, max_len, rng, dist, goals)
        trajectories.append(Trajectory(i, tuple(obs), tuple(act), tuple(rew)))
        labels.append(behavior.label())

    metadata = {
        "seed": int(seed),
        "mix": format_mix(mix),
        "n_traj": n_traj,
        "max_len": max_len,
        "layout_hash": layout.fingerprint(),
        "behaviors": labels,
    }
    return Dataset(trajectories, metadata)


def subset(data: Dataset, keep_ids: list[int], **extra_meta) -> Dataset:
    """Dataset restricted to ``keep_ids``, re-indexed densely; source ids kept in metadata."""
    source = data.source_ids()
    trajs = []
    for new_id, old_id in enumerate(keep_ids):
        t = data.trajectories[old_id]
        trajs.append(Trajectory(new_id, t.obs, t.act, t.rew))
    meta = {k: v for k, v in data.metadata.items() if k not in ("behaviors", "source_ids", "n_traj")}
    meta["source_ids"] = [source[i] for i in keep_ids]
    meta.update(extra_meta)
    return Dataset(trajs, meta)


def replay_errors(data: Dataset, layout: GridLayout) -> list[str]:
    """Re-simulate every trajectory; return a description of each mismatch."""
    problems = []
    for t in data.trajectories:
        for k, (o, a, r) in enumerate(t.steps):
            state = layout.state_from_index(o)
            if state.terminal:
                problems.append(f"trajectory {t.id} step {k}: starts from terminal cell")
                break
            nxt, reward, done = step(layout, state, a)
            if reward != r:
                problems.append(f"trajectory {t.id} step {k}: reward {r} != simulated {reward}")
            if k + 1 < len(t):
                if done:
                    problems.append(f"trajectory {t.id} step {k}: continues after termination")
                    break
                if layout.index(nxt.row, nxt.col) != t.obs[k + 1]:
                    problems.append(f"trajectory {t.id} step {k}: next observation mismatch")
    return problems


def dumps_dataset(d: Dataset) -> str:
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "metadata": d.metadata}
    lines = [json.dumps(header, sort_keys=True)]
    for t in d.trajectories:
        rec = {"id": t.id, "obs": list(t.obs), "act": list(t.act), "rew": list(t.rew)}
        lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def loads_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DatasetError("line 1: empty dataset file (n_traj >= 1 required)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"line 1: malformed header: {exc.msg}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise DatasetError("line 1: missing dataset header")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetError(f"line 1: unsupported version {header.get('version')!r}")

    trajs = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            tid, obs, act, rew = rec["id"], rec["obs"], rec["act"], rec["rew"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetError(f"line {lineno}: malformed record ({exc})") from exc
        if not isinstance(tid, int) or tid < 0:
            raise DatasetError(f"line {lineno}: id must be a non-negative integer")
        if tid in seen:
            raise DatasetError(f"line {lineno}: id collision on {tid}")
        seen.add(tid)
        if not obs or not (len(obs) == len(act) == len(rew)):
            raise DatasetError(f"line {lineno}: obs/act/rew must be non-empty and equal length")
        if not all(isinstance(x, int) for x in obs + act):
            raise DatasetError(f"line {lineno}: obs and act must be integers")
        if not all(isinstance(x, (int, float)) and math.isfinite(x) for x in rew):
            raise DatasetError(f"line {lineno}: non-finite or non-numeric reward")
        trajs.append(Trajectory(tid, tuple(obs), tuple(act), tuple(float(x) for x in rew)))
    if not trajs:
        raise DatasetError("dataset has no trajectories (n_traj >= 1 required)")
    trajs.sort(key=lambda t: t.id)
    if [t.id for t in trajs] != list(range(len(trajs))):
        raise DatasetError("trajectory ids are not dense 0..n_traj-1")
    return Dataset(trajs, header.get("metadata", {}))


def write_dataset(d: Dataset, path: str | Path) -> None:
    Path(path).write_text(dumps_dataset(d), encoding="utf-8")


def read_dataset(path: str | Path) -> Dataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))
