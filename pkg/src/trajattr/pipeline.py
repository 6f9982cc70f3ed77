"""Seeded, cached pipeline stages writing plain-text artifacts into a run directory.

Each stage records a fingerprint of its own parameters combined with the
fingerprints of the stages it reads from, so changing a parameter re-runs
that stage and everything downstream of it, and nothing upstream.
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attribution import (
    ExplanationEntry,
    ExplanationSuite,
    attribute_all,
    attributions_json,
    complementary_datasets,
    default_eval_states,
    metrics_csv,
    metrics_report,
    metrics_text,
)
from .clustering import read_clusters, write_clusters, xmeans
from .config import RunConfig
from .data import generate_offline_dataset, read_dataset, write_dataset
from .embedding import (
    complement_label,
    data_embedding,
    read_data_embeddings_csv,
    write_data_embeddings_csv,
)
from .encoder import (
    EncoderConfig,
    encode_all,
    load_encoder,
    read_embeddings_csv,
    save_encoder,
    train_encoder,
    write_embeddings_csv,
)
from .errors import TrajAttrError
from .gridworld import GridLayout, default_layout_text, parse_layout
from .offline_rl import RLConfig, load_policy, save_policy, train_policy, uniform_start_dist

log = logging.getLogger(__name__)

STAGES = ("gen-data", "train-encoder", "encode", "cluster", "embed", "train-policies", "attribute", "report")
UPSTREAM = {
    "gen-data": (),
    "train-encoder": ("gen-data",),
    "encode": ("train-encoder",),
    "cluster": ("encode",),
    "embed": ("encode", "cluster"),
    "train-policies": ("gen-data", "cluster"),
    "attribute": ("embed", "train-policies"),
    "report": ("attribute",),
}
STAGE_FILE = "stages.json"


class StageError(TrajAttrError):
    def __init__(self, stage: str, paths: list[Path], cause: Exception):
        self.stage = stage
        self.paths = paths
        listed = ", ".join(str(p) for p in paths)
        super().__init__(f"stage {stage!r} failed: {cause} (artifacts: {listed})")


@dataclass
class Run:
    """Paths of one run directory."""

    root: Path

    @property
    def layout(self) -> Path:
        return self.root / "layout.txt"

    @property
    def config(self) -> Path:
        return self.root / "config.txt"

    @property
    def dataset(self) -> Path:
        return self.root / "dataset.jsonl"

    @property
    def encoder(self) -> Path:
        return self.root / "encoder.ckpt"

    @property
    def traj_embeddings(self) -> Path:
        return self.root / "traj_embeddings.csv"

    @property
    def clusters(self) -> Path:
        return self.root / "clusters.csv"

    @property
    def embeddings(self) -> Path:
        return self.root / "embeddings.csv"

    @property
    def policies(self) -> Path:
        return self.root / "policies"

    @property
    def attributions(self) -> Path:
        return self.root / "attributions.json"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics.csv"

    @property
    def report(self) -> Path:
        return self.root / "report.txt"

    def policy_path(self, cluster_id: int | None) -> Path:
        name = "orig.json" if cluster_id is None else f"cluster_{cluster_id:03d}.json"
        return self.policies / name

    def outputs(self, stage: str) -> list[Path]:
        return {
            "gen-data": [self.dataset, self.layout],
            "train-encoder": [self.encoder],
            "encode": [self.traj_embeddings],
            "cluster": [self.clusters, self.clusters.with_name("clusters_centroids.csv")],
            "embed": [self.embeddings],
            "train-policies": [self.policy_path(None)],
            "attribute": [self.attributions],
            "report": [self.metrics, self.report],
        }[stage]

    def stage_record(self) -> dict:
        p = self.root / STAGE_FILE
        return json.loads(p.read_text()) if p.exists() else {}

    def write_stage_record(self, record: dict) -> None:
        (self.root / STAGE_FILE).write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")


def _hash(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()[:16]


def layout_text(cfg: RunConfig) -> str:
    if cfg.layout == "default":
        return default_layout_text()
    return Path(cfg.layout).read_text(encoding="utf-8")


def stage_params(cfg: RunConfig, stage: str) -> dict:
    if stage == "gen-data":
        return {"layout": hashlib.sha256(layout_text(cfg).encode()).hexdigest(), "n_traj": cfg.n_traj,
                "max_len": cfg.max_len, "mix": cfg.mix, "seed": cfg.data_seed}
    if stage == "train-encoder":
        return {"d_model": cfg.d_model, "lr": cfg.lr, "epochs": cfg.epochs,
                "clip_norm": cfg.clip_norm, "seed": cfg.encoder_seed}
    if stage == "encode":
        return {}
    if stage == "cluster":
        return {"k_min": cfg.k_min, "k_max": cfg.k_max, "seed": cfg.cluster_seed}
    if stage == "embed":
        return {"M": cfg.M, "T_soft": cfg.T_soft}
    if stage == "train-policies":
        return {"gamma": cfg.gamma, "tol": cfg.tol, "r_pess": cfg.r_pess}
    if stage == "attribute":
        return {"eval_states": cfg.eval_states, "top_n": cfg.top_n, "distance": cfg.distance}
    return {}


def stage_fingerprints(cfg: RunConfig) -> dict[str, str]:
    fps: dict[str, str] = {}
    for stage in STAGES:
        fps[stage] = _hash(stage, stage_params(cfg, stage), [fps[u] for u in UPSTREAM[stage]])
    return fps


def rl_config(cfg: RunConfig) -> RLConfig:
    return RLConfig(cfg.gamma, cfg.tol, cfg.r_pess)


# -- loaders -----------------------------------------------------------------


def load_layout(run: Run) -> GridLayout:
    return parse_layout(run.layout.read_text(encoding="utf-8"))


def load_suite(run: Run, distance: str = "wasserstein") -> ExplanationSuite:
    cs = read_clusters(run.clusters)
    embs = read_data_embeddings_csv(run.embeddings)
    by_source = {e.source: e for e in embs}
    original = load_policy(run.policy_path(None))
    entries = []
    for j in range(cs.n_clusters):
        pol = load_policy(run.policy_path(j))
        members = cs.members(j)
        entries.append(ExplanationEntry(j, members, pol, by_source[complement_label(j)],
                                        len(cs.labels) - len(members)))
    return ExplanationSuite(original, by_source["original"], entries, original.config_fingerprint, distance)


def eval_state_ids(cfg: RunConfig, layout: GridLayout) -> list[int]:
    cells = cfg.eval_cells()
    if cells is None:
        return default_eval_states(layout)
    return [layout.index(r, c) for r, c in cells]


# -- stages ------------------------------------------------------------------


def _gen_data(cfg: RunConfig, run: Run) -> None:
    text = layout_text(cfg)
    layout = parse_layout(text)
    run.layout.write_text(layout.to_text(), encoding="utf-8")
    data = generate_offline_dataset(layout, cfg.mix, cfg.n_traj, cfg.max_len, cfg.data_seed)
    write_dataset(data, run.dataset)


def _train_encoder(cfg: RunConfig, run: Run) -> None:
    layout = load_layout(run)
    data = read_dataset(run.dataset)
    enc_cfg = EncoderConfig(cfg.d_model, cfg.lr, cfg.epochs, cfg.clip_norm, cfg.encoder_seed)
    save_encoder(train_encoder(data, enc_cfg, layout.n_cells), run.encoder)


def _encode(cfg: RunConfig, run: Run) -> None:
    enc = load_encoder(run.encoder)
    write_embeddings_csv(encode_all(enc, read_dataset(run.dataset)), run.traj_embeddings)


def _cluster(cfg: RunConfig, run: Run) -> None:
    X = np.array([e.vector for e in read_embeddings_csv(run.traj_embeddings)])
    k_max = min(cfg.resolved_k_max(len(X)), len(X))
    cs = xmeans(X, min(cfg.k_min, k_max), k_max, cfg.cluster_seed)
    write_clusters(cs, run.clusters)


def _embed(cfg: RunConfig, run: Run) -> None:
    vecs = [e.vector for e in read_embeddings_csv(run.traj_embeddings)]
    cs = read_clusters(run.clusters)
    M = cfg.resolved_M(len(vecs))
    out = [data_embedding(vecs, M, cfg.T_soft, "original")]
    for j in range(cs.n_clusters):
        removed = set(cs.members(j))
        rest = [v for i, v in enumerate(vecs) if i not in removed]
        out.append(data_embedding(rest, M, cfg.T_soft, complement_label(j)))
    write_data_embeddings_csv(out, run.embeddings)


def _train_policies(cfg: RunConfig, run: Run) -> None:
    layout = load_layout(run)
    data = read_dataset(run.dataset)
    cs = read_clusters(run.clusters)
    rl = rl_config(cfg)
    jobs = [(None, data)] + complementary_datasets(data, cs)
    with ThreadPoolExecutor() as pool:
        policies = list(pool.map(lambda job: train_policy(job[1], layout, rl), jobs))
    run.policies.mkdir(exist_ok=True)
    for old in run.policies.glob("*.json"):
        old.unlink()
    for (cid, _), pol in zip(jobs, policies):
        save_policy(pol, run.policy_path(cid))


def _attribute(cfg: RunConfig, run: Run) -> None:
    layout = load_layout(run)
    data = read_dataset(run.dataset)
    suite = load_suite(run, cfg.distance)
    states = eval_state_ids(cfg, layout)
    results = attribute_all(states, suite, data, layout, cfg.top_n)
    decided = sum(r.c_final is not None for r in results)
    none_mass = 1.0 - decided / len(results)
    run.attributions.write_text(attributions_json(results, none_mass, layout), encoding="utf-8")


def _report(cfg: RunConfig, run: Run) -> None:
    layout = load_layout(run)
    data = read_dataset(run.dataset)
    suite = load_suite(run, cfg.distance)
    states = eval_state_ids(cfg, layout)
    results = attribute_all(states, suite, data, layout, cfg.top_n)
    rows, none_mass = metrics_report(suite, states, uniform_start_dist(layout), results)
    run.metrics.write_text(metrics_csv(rows), encoding="utf-8")
    run.report.write_text(metrics_text(rows, none_mass) + "\n", encoding="utf-8")


RUNNERS = {
    "gen-data": _gen_data,
    "train-encoder": _train_encoder,
    "encode": _encode,
    "cluster": _cluster,
    "embed": _embed,
    "train-policies": _train_policies,
    "attribute": _attribute,
    "report": _report,
}


def run_stage(cfg: RunConfig, run: Run, stage: str, force: bool = False) -> bool:
    """Run one stage unless its cached output is current; returns True if it ran.

    The report stage always runs.
    """
    fps = stage_fingerprints(cfg)
    record = run.stage_record()
    for up in UPSTREAM[stage]:
        if record.get(up) != fps[up]:
            raise StageError(stage, run.outputs(up), RuntimeError(f"upstream stage {up!r} is missing or stale"))
    cached = record.get(stage) == fps[stage] and all(p.exists() for p in run.outputs(stage))
    if cached and not force and stage != "report":
        log.info("stage %s: cached", stage)
        return False
    try:
        RUNNERS[stage](cfg, run)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, run.outputs(stage), exc) from exc
    record = {k: v for k, v in record.items() if k in fps}
    record[stage] = fps[stage]
    # downstream stages are now stale
    for s in STAGES[STAGES.index(stage) + 1 :]:
        if record.get(s) != fps[s]:
            record.pop(s, None)
    run.write_stage_record(record)
    log.info("stage %s: done", stage)
    return True


def run_pipeline(cfg: RunConfig, out: str | Path | None = None) -> tuple[Run, list[str]]:
    """Execute every stage in order; returns the run and the stages that actually ran."""
    run = Run(Path(out if out is not None else cfg.out))
    run.root.mkdir(parents=True, exist_ok=True)
    run.config.write_text(cfg.to_text(), encoding="utf-8")
    ran = [s for s in STAGES if run_stage(cfg, run, s)]
    return run, ran


def load_run_config(run: Run) -> RunConfig:
    from .config import parse_config

    return parse_config(run.config.read_text(encoding="utf-8"))

