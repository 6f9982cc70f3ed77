"""Invariant checks over the artifacts of a completed run."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .attribution import complementary_datasets, read_metrics_csv
from .clustering import read_clusters
from .data import read_dataset, replay_errors
from .embedding import SIMPLEX_TOL, read_data_embeddings_csv
from .encoder import load_encoder, read_embeddings_csv
from .offline_rl import TIE_TOL, bellman_residual, fit_model, load_policy
from .pipeline import Run, load_layout, load_run_config


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


def _guard(name, fn):
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failed check
        return Check(name, False, f"{type(exc).__name__}: {exc}")
    return Check(name, bool(ok), detail)


def validate_run(run: Run) -> list[Check]:
    missing = [p for p in (run.config, run.layout, run.dataset, run.encoder, run.traj_embeddings,
                           run.clusters, run.embeddings, run.policy_path(None), run.attributions,
                           run.metrics) if not p.exists()]
    if missing:
        raise FileNotFoundError("missing artifacts: " + ", ".join(str(p) for p in missing))

    cfg = load_run_config(run)
    layout = load_layout(run)
    data = read_dataset(run.dataset)
    checks = []

    def dataset_replay():
        errs = replay_errors(data, layout)
        same_layout = data.metadata.get("layout_hash") == layout.fingerprint()
        return not errs and same_layout, "; ".join(errs[:3]) or ("" if same_layout else "layout hash mismatch")

    def encoder_finite():
        enc = load_encoder(run.encoder)
        bad = [k for k, v in enc.params.items() if not np.all(np.isfinite(v))]
        return not bad, f"non-finite parameters: {bad}" if bad else ""

    def traj_embeddings():
        embs = read_embeddings_csv(run.traj_embeddings)
        ids = [e.traj_id for e in embs]
        dims = {len(e.vector) for e in embs}
        finite = all(np.all(np.isfinite(e.vector)) for e in embs)
        ok = ids == list(range(data.n_traj)) and dims == {cfg.d_model} and finite
        return ok, f"{len(embs)} embeddings, dims {sorted(dims)}"

    def partition():
        cs = read_clusters(run.clusters)
        ok = cs.is_partition(data.n_traj)
        return ok, f"n_c={cs.n_clusters}, sizes={cs.sizes()}"

    def simplex():
        embs = read_data_embeddings_csv(run.embeddings, check=False)
        cs = read_clusters(run.clusters)
        bad = [e.source for e in embs if np.any(e.probs < 0) or abs(e.probs.sum() - 1.0) > SIMPLEX_TOL]
        ok = not bad and len(embs) == cs.n_clusters + 1
        return ok, f"rows off the simplex: {bad}" if bad else f"{len(embs)} rows"

    def policies():
        cs = read_clusters(run.clusters)
        pols = [load_policy(run.policy_path(None))] + [load_policy(run.policy_path(j)) for j in range(cs.n_clusters)]
        datasets = [data] + [d for _, d in complementary_datasets(data, cs)]
        problems = []
        fps = {p.config_fingerprint for p in pols}
        gammas = {p.gamma for p in pols}
        if len(fps) != 1 or len(gammas) != 1:
            problems.append("policies trained under differing configs")
        for name, pol, d in zip(["orig"] + list(range(cs.n_clusters)), pols, datasets):
            live = ~pol.terminal
            idx = np.flatnonzero(live)
            chosen = pol.Q[idx, pol.action[idx]]
            if np.any(np.abs(pol.V[idx] - chosen) > TIE_TOL):
                problems.append(f"{name}: V != Q(s, action(s))")
            if np.any(chosen < pol.Q[idx].max(axis=1) - TIE_TOL):
                problems.append(f"{name}: action not greedy")
            mdp = fit_model(d, layout, cfg.r_pess)
            if bellman_residual(mdp, pol) >= cfg.tol:
                problems.append(f"{name}: Bellman residual above tol")
        return not problems, "; ".join(problems[:5])

    def attributions():
        doc = json.loads(run.attributions.read_text())
        cs = read_clusters(run.clusters)
        problems = []
        for rec in doc["states"]:
            dists = {int(k): v for k, v in rec["distances"].items()}
            top = max(dists.values())
            K = sorted(c for c, v in dists.items() if v == top)
            if sorted(rec["K"]) != K:
                problems.append(f"state {rec['state']}: K is not the argmax set")
            c = rec["c_final"]
            if c is None:
                if top > 0:
                    problems.append(f"state {rec['state']}: no attribution despite deviation")
                continue
            if c not in K:
                problems.append(f"state {rec['state']}: c_final outside K")
            members = set(cs.members(c))
            if any(e["traj_id"] not in members for e in rec["exemplars"]):
                problems.append(f"state {rec['state']}: exemplar outside cluster {c}")
        return not problems, "; ".join(problems[:5]) or f"{len(doc['states'])} states"

    def metrics():
        rows = read_metrics_csv(run.metrics)
        cs = read_clusters(run.clusters)
        problems = []
        if len(rows) != cs.n_clusters + 1:
            problems.append(f"{len(rows)} rows for {cs.n_clusters} clusters")
        cl = rows[1:]
        w = [r.w_dist for r in cl]
        if sum(1 for x in w if x == 1.0) != 1 or any(not 0 <= x <= 1 for x in w):
            problems.append("normalized W_dist must have exactly one 1.0 and lie in [0, 1]")
        p = [r.p_attr for r in cl]
        if any(x < 0 for x in p) or sum(p) > 1 + 1e-6:
            problems.append("attribution frequencies not a sub-distribution")
        if any(rows[0].value_s0 < r.value_s0 - 1e-6 for r in cl):
            problems.append("an explanation policy has higher E[V(s0)] than the original")
        if any(math.isnan(x) for r in cl for x in (r.abs_dq, r.contrast)):
            problems.append("NaN metric")
        return not problems, "; ".join(problems)

    for name, fn in [
        ("dataset replay", dataset_replay),
        ("encoder parameters finite", encoder_finite),
        ("trajectory embeddings", traj_embeddings),
        ("cluster partition", partition),
        ("data embeddings on simplex", simplex),
        ("policy invariants", policies),
        ("attribution invariants", attributions),
        ("metrics table", metrics),
    ]:
        checks.append(_guard(name, fn))
    return checks
