"""Leave-cluster-out explanation policies and cluster attribution of decisions."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .clustering import ClusterSet
from .data import Dataset, subset
from .embedding import DISTANCES, DataEmbedding, complement_label, data_embedding, normalize_distances
from .errors import ContractViolation, DatasetError, TrainingError
from .gridworld import GridLayout, reachable_states
from .offline_rl import RLConfig, TabularPolicy, initial_state_value, train_policy


@dataclass
class ExplanationEntry:
    cluster_id: int
    members: list[int]
    policy: TabularPolicy
    embedding: DataEmbedding
    n_complement: int


@dataclass
class ExplanationSuite:
    original_policy: TabularPolicy
    original_embedding: DataEmbedding
    entries: list[ExplanationEntry]
    config_fingerprint: str
    distance: str = "wasserstein"

    def entry(self, cluster_id: int) -> ExplanationEntry:
        return self.entries[cluster_id]

    def data_distance(self, cluster_id: int) -> float:
        fn = DISTANCES[self.distance]
        return fn(self.original_embedding, self.entries[cluster_id].embedding)


@dataclass
class AttributionResult:
    state: int
    a_orig: int
    distances: dict[int, float]
    candidates: list[int]
    data_distances: dict[int, float]
    c_final: int | None
    exemplars: list[tuple[int, list[int]]] = field(default_factory=list)

    def to_dict(self, layout: GridLayout | None = None) -> dict:
        doc = {
            "state": self.state,
            "a_orig": self.a_orig,
            "distances": {str(k): v for k, v in self.distances.items()},
            "K": self.candidates,
            "w": {str(k): v for k, v in self.data_distances.items()},
            "c_final": self.c_final,
            "exemplars": [{"traj_id": t, "score": s} for t, s in self.exemplars],
        }
        if layout is not None:
            doc["cell"] = list(layout.position(self.state))
        return doc


def complementary_datasets(data: Dataset, cs: ClusterSet) -> list[tuple[int, Dataset]]:
    """For each cluster, the dataset with that cluster's trajectories removed."""
    if len(cs.labels) != data.n_traj:
        raise DatasetError("cluster assignment does not cover the dataset")
    out = []
    for j in range(cs.n_clusters):
        removed = set(cs.members(j))
        keep = [i for i in range(data.n_traj) if i not in removed]
        if not keep:
            raise DatasetError(f"cluster {j} covers the whole dataset; its complement is empty")
        out.append((j, subset(data, keep, removed_cluster=j)))
    return out


def train_explanation_suite(
    data: Dataset,
    layout: GridLayout,
    cs: ClusterSet,
    embeddings: Sequence,
    rl_config: RLConfig,
    M: float | None = None,
    T_soft: float = 1.0,
    distance: str = "wasserstein",
    max_workers: int | None = None,
) -> ExplanationSuite:
    """Train the original policy and one explanation policy per cluster.

    Every policy is trained with the same ``rl_config``; ``M`` defaults to the
    size of the full dataset and is shared by all data embeddings.
    """
    if len(embeddings) != data.n_traj:
        raise DatasetError("need exactly one trajectory embedding per trajectory")
    if distance not in DISTANCES:
        raise ValueError(f"unknown data distance {distance!r}")
    M = float(data.n_traj) if M is None else float(M)
    vectors = [np.asarray(getattr(e, "vector", e), dtype=float) for e in embeddings]

    complements = complementary_datasets(data, cs)
    jobs = [data] + [c for _, c in complements]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        policies = list(pool.map(lambda d: train_policy(d, layout, rl_config), jobs))
    fps = {p.config_fingerprint for p in policies}
    if len(fps) != 1:
        raise TrainingError(f"explanation policies trained with differing configs: {sorted(fps)}")

    original = policies[0]
    d_orig = data_embedding(vectors, M, T_soft, "original")
    entries = []
    for (j, comp), pol in zip(complements, policies[1:]):
        removed = set(cs.members(j))
        kept = [vectors[i] for i in range(data.n_traj) if i not in removed]
        emb = data_embedding(kept, M, T_soft, complement_label(j))
        entries.append(ExplanationEntry(j, cs.members(j), pol, emb, comp.n_traj))
    return ExplanationSuite(original, d_orig, entries, fps.pop(), distance)


def action_distance(a_orig, a_j, space: str = "discrete") -> float:
    if space == "discrete":
        if np.ndim(a_orig) or np.ndim(a_j):
            raise ValueError("discrete actions must be scalars")
        return 0.0 if int(a_orig) == int(a_j) else 1.0
    if space == "continuous":
        x, y = np.atleast_1d(np.asarray(a_orig, float)), np.atleast_1d(np.asarray(a_j, float))
        if x.shape != y.shape:
            raise ValueError("continuous actions differ in dimension")
        return float(((x - y) ** 2).sum())
    raise ValueError(f"unknown action space {space!r}")


def attribute(state: int, suite: ExplanationSuite) -> AttributionResult:
    """Attribute the original policy's action at ``state`` to a trajectory cluster.

    Candidates are the clusters whose explanation policy deviates most from
    the original action; among them the one whose complement embedding is
    closest to the full-data embedding wins (ties to the lowest id). When no
    explanation policy deviates, ``c_final`` is None.
    """
    pol = suite.original_policy
    if not 0 <= state < len(pol.action) or pol.terminal[state]:
        raise ContractViolation(f"state {state} is terminal or invalid")
    a_orig = pol(state)
    dists = {e.cluster_id: action_distance(a_orig, e.policy(state)) for e in suite.entries}
    top = max(dists.values())
    K = [c for c, v in dists.items() if v == top]
    if top == 0:
        return AttributionResult(state, a_orig, dists, K, {}, None)
    w = {k: suite.data_distance(k) for k in K}
    c_final = min(K, key=lambda k: (w[k], k))
    return AttributionResult(state, a_orig, dists, K, w, c_final)


def _manhattan(layout, a, b):
    (r1, c1), (r2, c2) = layout.position(a), layout.position(b)
    return abs(r1 - r2) + abs(c1 - c2)


def select_top_trajectories(
    members: Sequence[int], data: Dataset, layout: GridLayout, state: int, a_orig: int, N: int = 3
) -> list[tuple[int, list[int]]]:
    """Rank cluster trajectories by how well they match the queried (state, action).

    Score is [tier, distance]: tier 0 visits ``state`` and takes ``a_orig``
    there, tier 1 visits ``state``, tier 2 does neither and is ranked by its
    closest Manhattan approach. Ties go to the lower trajectory id.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    scored = []
    for tid in members:
        t = data.trajectories[tid]
        if any(o == state and a == a_orig for o, a in zip(t.obs, t.act)):
            key = [0, 0]
        elif state in t.obs:
            key = [1, 0]
        else:
            key = [2, min(_manhattan(layout, o, state) for o in t.obs)]
        scored.append((key, tid))
    scored.sort()
    return [(tid, key) for key, tid in scored[:N]]


def default_eval_states(layout: GridLayout) -> list[int]:
    return [
        layout.index(r, c)
        for r, c in reachable_states(layout)
        if not layout.is_terminal_cell(r, c)
    ]


def attribute_all(
    states: Sequence[int], suite: ExplanationSuite, data: Dataset, layout: GridLayout, top_n: int = 3
) -> list[AttributionResult]:
    out = []
    for s in states:
        res = attribute(s, suite)
        if res.c_final is not None:
            members = suite.entry(res.c_final).members
            res.exemplars = select_top_trajectories(members, data, layout, s, res.a_orig, top_n)
        out.append(res)
    return out


@dataclass
class MetricsRow:
    policy: str
    value_s0: float
    abs_dq: float | None = None
    contrast: float | None = None
    w_dist: float | None = None
    p_attr: float | None = None


METRIC_COLUMNS = ("policy", "E_V_s0", "E_abs_dQ", "action_contrast", "W_dist", "P_attr")


def metrics_report(
    suite: ExplanationSuite,
    eval_states: Sequence[int],
    start_dist,
    attributions: Sequence[AttributionResult] | None = None,
) -> tuple[list[MetricsRow], float]:
    """Per-policy evaluation rows (original first) and the no-attribution mass.

    Attribution frequencies are taken over the evaluation states where some
    explanation policy deviates; the returned float is the fraction of
    evaluation states with no attribution at all.
    """
    if not eval_states:
        raise ValueError("eval_states must be non-empty")
    if attributions is None:
        attributions = [attribute(s, suite) for s in eval_states]
    orig = suite.original_policy
    states = np.asarray(eval_states)
    a_orig = orig.action[states]
    q_orig = orig.Q[states, a_orig]

    decided = [r.c_final for r in attributions if r.c_final is not None]
    none_mass = 1.0 - len(decided) / len(attributions)
    raw_w = [(e.cluster_id, suite.data_distance(e.cluster_id)) for e in suite.entries]
    norm_w = dict(normalize_distances(raw_w)[0])

    rows = [MetricsRow("orig", initial_state_value(orig, start_dist))]
    for e in suite.entries:
        a_j = e.policy.action[states]
        dq = np.abs(q_orig - orig.Q[states, a_j])
        contrast = np.array([action_distance(x, y) for x, y in zip(a_orig, a_j)])
        p = decided.count(e.cluster_id) / len(decided) if decided else 0.0
        rows.append(
            MetricsRow(
                str(e.cluster_id),
                initial_state_value(e.policy, start_dist),
                float(dq.mean()),
                float(contrast.mean()),
                norm_w[e.cluster_id],
                p,
            )
        )
    return rows, none_mass


def per_state_coupling_violations(suite: ExplanationSuite, eval_states: Sequence[int]) -> int:
    """Count (state, policy) pairs where the actions agree but |dQ| is non-zero."""
    orig = suite.original_policy
    bad = 0
    for s in eval_states:
        a = orig(s)
        for e in suite.entries:
            if e.policy(s) == a and orig.Q[s, a] - orig.Q[s, e.policy(s)] != 0:
                bad += 1
    return bad


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        return math.nan
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def _fmt(v):
    return "-" if v is None else f"{v:.6f}"


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    lines = [",".join(METRIC_COLUMNS)]
    for r in rows:
        lines.append(",".join([r.policy] + [_fmt(v) for v in (r.value_s0, r.abs_dq, r.contrast, r.w_dist, r.p_attr)]))
    return "\n".join(lines) + "\n"


def read_metrics_csv(path: str | Path) -> list[MetricsRow]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines()[1:]:
        if not line:
            continue
        name, *vals = line.split(",")
        nums = [None if v == "-" else float(v) for v in vals]
        rows.append(MetricsRow(name, *nums))
    return rows


def metrics_text(rows: Sequence[MetricsRow], none_mass: float) -> str:
    header = f"{'pi':>5} {'E[V(s0)]':>10} {'E|dQ|':>10} {'contrast':>10} {'W_dist':>10} {'P(c_final)':>11}"
    out = [header, "-" * len(header)]
    for r in rows:
        cells = [_fmt(v) if v is None else f"{v:.4f}" for v in (r.value_s0, r.abs_dq, r.contrast, r.w_dist)]
        p = _fmt(r.p_attr) if r.p_attr is None else f"{r.p_attr:.4f}"
        out.append(f"{r.policy:>5} " + " ".join(f"{c:>10}" for c in cells) + f" {p:>11}")
    out.append(f"no-attribution mass: {none_mass:.4f}")
    return "\n".join(out)


def attributions_json(results: Sequence[AttributionResult], none_mass: float, layout: GridLayout) -> str:
    doc = {
        "none_mass": none_mass,
        "states": [r.to_dict(layout) for r in results],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"
