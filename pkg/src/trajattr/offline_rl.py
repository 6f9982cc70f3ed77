"""Model-based offline RL on tabular grid-world data.

A maximum-likelihood MDP is estimated from the dataset; state-action pairs
never seen in the data lead to an absorbing sink that pays ``r_pess`` per
step forever. The model is solved by value iteration.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConvergenceError, ContractViolation
from .gridworld import N_ACTIONS, CellKind, GridLayout, next_position, step

MAX_SWEEPS = 10_000
# Q-values this close to the row maximum count as ties (broken by lowest action id).
TIE_TOL = 1e-9


@dataclass(frozen=True)
class RLConfig:
    gamma: float = 0.95
    tol: float = 1e-8
    r_pess: float = -1.0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TabularMDP:
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    support: np.ndarray  # (S, A) observation counts
    terminal: np.ndarray  # (S,) bool
    sink: int | None = None

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return self.support > 0


@dataclass
class TabularPolicy:
    action: np.ndarray  # (S,) int, -1 at terminal states
    Q: np.ndarray  # (S, A), zero rows at terminal states
    V: np.ndarray  # (S,)
    gamma: float
    terminal: np.ndarray
    config_fingerprint: str = ""
    sweeps: int = 0

    def __call__(self, s: int) -> int:
        return int(self.action[s])

    def equals(self, other: TabularPolicy) -> bool:
        return (
            self.gamma == other.gamma
            and self.config_fingerprint == other.config_fingerprint
            and np.array_equal(self.action, other.action)
            and np.array_equal(self.Q, other.Q)
            and np.array_equal(self.V, other.V)
            and np.array_equal(self.terminal, other.terminal)
        )


def _terminal_flags(layout: GridLayout) -> np.ndarray:
    flags = np.zeros(layout.n_cells + 1, dtype=bool)
    for i in range(layout.n_cells):
        flags[i] = layout.is_terminal_cell(*layout.position(i))
    return flags


def fit_model(data: Dataset, layout: GridLayout, r_pess: float = -1.0) -> TabularMDP:
    """Count-based MLE model; the last state index is the pessimistic sink."""
    S = layout.n_cells + 1
    sink = S - 1
    counts = np.zeros((S, N_ACTIONS, S))
    rew_sum = np.zeros((S, N_ACTIONS))
    for t in data.trajectories:
        for k, (o, a, r) in enumerate(t.steps):
            if not 0 <= o < layout.n_cells:
                raise ContractViolation(f"trajectory {t.id} step {k}: observation {o} out of range")
            if not 0 <= a < N_ACTIONS:
                raise ContractViolation(f"trajectory {t.id} step {k}: action {a} out of range")
            if k + 1 < len(t):
                nxt = t.obs[k + 1]
            else:
                # the successor of the final step is not stored; recover it from the layout
                nr, nc = next_position(layout, *layout.position(o), a)
                nxt = layout.index(nr, nc)
            counts[o, a, nxt] += 1
            rew_sum[o, a] += r
    support = counts.sum(axis=2)
    terminal = _terminal_flags(layout)
    transition = np.zeros_like(counts)
    reward = np.zeros((S, N_ACTIONS))
    seen = support > 0
    transition[seen] = counts[seen] / support[seen][:, None]
    reward[seen] = rew_sum[seen] / support[seen]
    unseen = ~seen & ~terminal[:, None]
    transition[unseen, sink] = 1.0
    reward[unseen] = r_pess
    return TabularMDP(transition, reward, support, terminal, sink)


def exact_model(layout: GridLayout) -> TabularMDP:
    """Full-support model read directly off the layout (no data, no sink)."""
    S = layout.n_cells
    transition = np.zeros((S, N_ACTIONS, S))
    reward = np.zeros((S, N_ACTIONS))
    terminal = _terminal_flags(layout)[:S]
    support = np.zeros((S, N_ACTIONS))
    for s in range(S):
        if terminal[s]:
            continue
        st = layout.state_from_index(s)
        if layout.kind(st.row, st.col) == CellKind.WALL:
            continue
        for a in range(N_ACTIONS):
            nxt, r, _ = step(layout, st, a)
            transition[s, a, layout.index(nxt.row, nxt.col)] = 1.0
            reward[s, a] = r
            support[s, a] = 1
    for s in range(S):
        if not terminal[s] and support[s].sum() == 0:
            transition[s, :, s] = 1.0  # wall cells: inert self-loops
    return TabularMDP(transition, reward, support, terminal, None)


def greedy_actions(Q: np.ndarray, terminal: np.ndarray) -> np.ndarray:
    best = Q.max(axis=1, keepdims=True)
    action = np.argmax(Q >= best - TIE_TOL, axis=1)
    return np.where(terminal, -1, action)


def value_iteration(mdp: TabularMDP, gamma: float = 0.95, tol: float = 1e-8,
                    config_fingerprint: str = "") -> TabularPolicy:
    """Synchronous Bellman-optimality sweeps until max |dV| < tol."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    P, R, term = mdp.transition, mdp.reward, mdp.terminal
    V = np.zeros(mdp.n_states)
    residual = np.inf
    for sweep in range(1, MAX_SWEEPS + 1):
        Q = R + gamma * P @ V
        V_new = np.where(term, 0.0, Q.max(axis=1))
        residual = float(np.abs(V_new - V).max())
        V = V_new
        if residual < tol:
            break
    else:
        raise ConvergenceError(f"value iteration did not converge in {MAX_SWEEPS} sweeps (residual {residual:.3e})")
    Q = np.where(term[:, None], 0.0, R + gamma * P @ V)
    action = greedy_actions(Q, term)
    V = np.where(term, 0.0, Q.max(axis=1))
    return TabularPolicy(action, Q, V, gamma, term.copy(), config_fingerprint, sweep)


def train_policy(data: Dataset, layout: GridLayout, cfg: RLConfig) -> TabularPolicy:
    mdp = fit_model(data, layout, cfg.r_pess)
    return value_iteration(mdp, cfg.gamma, cfg.tol, cfg.fingerprint())


def bellman_residual(mdp: TabularMDP, pol: TabularPolicy) -> float:
    target = mdp.reward + pol.gamma * mdp.transition @ pol.Q.max(axis=1)
    target = np.where(mdp.terminal[:, None], 0.0, target)
    return float(np.abs(pol.Q - target).max())


def evaluate_policy(mdp: TabularMDP, action: np.ndarray, gamma: float) -> np.ndarray:
    """Exact V of a deterministic policy by solving the linear Bellman system."""
    S = mdp.n_states
    idx = np.arange(S)
    a = np.where(mdp.terminal, 0, action)
    P = mdp.transition[idx, a] * ~mdp.terminal[:, None]
    r = np.where(mdp.terminal, 0.0, mdp.reward[idx, a])
    return np.linalg.solve(np.eye(S) - gamma * P, r)


def initial_state_value(pol: TabularPolicy, start_dist) -> float:
    """Expected V(s0) under a start-state distribution (dense vector or {state: prob})."""
    if isinstance(start_dist, dict):
        dist = np.zeros(len(pol.V))
        for s, p in start_dist.items():
            dist[s] = p
    else:
        dist = np.asarray(start_dist, dtype=float)
    if dist.shape != pol.V.shape:
        raise ValueError("start distribution does not match the number of states")
    if np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
        raise ValueError("start distribution must be non-negative and sum to 1")
    return float(dist @ pol.V)


def uniform_start_dist(layout: GridLayout, n_states: int | None = None) -> np.ndarray:
    n = layout.n_cells + 1 if n_states is None else n_states
    dist = np.zeros(n)
    for r, c in layout.start_states:
        dist[layout.index(r, c)] += 1.0 / len(layout.start_states)
    return dist


def policy_to_json(pol: TabularPolicy) -> str:
    doc = {
        "gamma": pol.gamma,
        "config_fingerprint": pol.config_fingerprint,
        "sweeps": pol.sweeps,
        "action": [int(a) for a in pol.action],
        "terminal": [bool(t) for t in pol.terminal],
        "V": [float(v) for v in pol.V],
        "Q": [[float(q) for q in row] for row in pol.Q],
    }
    return json.dumps(doc, sort_keys=True)


def policy_from_json(text: str) -> TabularPolicy:
    doc = json.loads(text)
    return TabularPolicy(
        np.array(doc["action"], dtype=np.int64),
        np.array(doc["Q"], dtype=float).reshape(len(doc["V"]), -1),
        np.array(doc["V"], dtype=float),
        float(doc["gamma"]),
        np.array(doc["terminal"], dtype=bool),
        doc["config_fingerprint"],
        int(doc["sweeps"]),
    )


def save_policy(pol: TabularPolicy, path: str | Path) -> None:
    Path(path).write_text(policy_to_json(pol) + "\n", encoding="utf-8")


def load_policy(path: str | Path) -> TabularPolicy:
    return policy_from_json(Path(path).read_text(encoding="utf-8"))
