"""Recurrent next-token trajectory encoder and average-pooled trajectory embeddings.

Trajectories are tokenized as interleaved (obs, action, reward) tokens and an
LSTM is trained to predict token k+1 from its hidden state after token k.
A trajectory's embedding is the mean of the hidden states over all its tokens.
"""
from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, Trajectory
from .errors import ContractViolation, TokenizationError, TrainingError
from .gridworld import N_ACTIONS, REWARD_VALUES

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PARAM_NAMES = ("embed", "W_x", "W_h", "b", "W_out", "b_out")


@dataclass(frozen=True)
class TokenVocab:
    """Disjoint dense ids: cells first, then actions, then reward buckets."""

    n_obs: int
    n_actions: int = N_ACTIONS
    rewards: tuple[float, ...] = REWARD_VALUES

    @property
    def size(self) -> int:
        return self.n_obs + self.n_actions + len(self.rewards)

    def obs_token(self, o: int) -> int:
        if not 0 <= o < self.n_obs:
            raise TokenizationError(f"observation {o} outside vocabulary of {self.n_obs} cells")
        return o

    def action_token(self, a: int) -> int:
        if not 0 <= a < self.n_actions:
            raise TokenizationError(f"action {a} outside vocabulary")
        return self.n_obs + a

    def reward_token(self, r: float) -> int:
        for i, v in enumerate(self.rewards):
            if abs(r - v) <= 1e-12:
                return self.n_obs + self.n_actions + i
        raise TokenizationError(f"reward {r!r} is not one of the buckets {self.rewards}")


def tokenize(traj: Trajectory, vocab: TokenVocab) -> list[int]:
    tokens = []
    for o, a, r in traj.steps:
        tokens += [vocab.obs_token(o), vocab.action_token(a), vocab.reward_token(r)]
    return tokens


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 64
    lr: float = 1e-2
    epochs: int = 100
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.d_model < 2:
            raise ValueError("d_model must be >= 2")
        if self.lr <= 0 or self.epochs < 0 or self.clip_norm <= 0:
            raise ValueError("lr and clip_norm must be positive, epochs non-negative")


@dataclass
class Encoder:
    params: dict[str, np.ndarray]
    vocab: TokenVocab
    config: EncoderConfig
    loss_history: list[float] = field(default_factory=list)

    @property
    def d_model(self) -> int:
        return self.config.d_model

    def equals(self, other: Encoder) -> bool:
        return (
            self.vocab == other.vocab
            and self.config == other.config
            and self.loss_history == other.loss_history
            and all(np.array_equal(self.params[k], other.params[k]) for k in PARAM_NAMES)
        )


@dataclass(frozen=True)
class TrajectoryEmbedding:
    traj_id: int
    vector: np.ndarray


def init_params(vocab_size: int, d: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(d)
    b = np.zeros(4 * d)
    b[d : 2 * d] = 1.0  # forget gate
    return {
        "embed": rng.normal(0.0, 1.0, (vocab_size, d)),
        "W_x": rng.uniform(-scale, scale, (d, 4 * d)),
        "W_h": rng.uniform(-scale, scale, (d, 4 * d)),
        "b": b,
        "W_out": rng.uniform(-scale, scale, (d, vocab_size)),
        "b_out": np.zeros(vocab_size),
    }


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _pad(seqs: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    L = max(len(s) for s in seqs)
    tokens = np.zeros((len(seqs), L), dtype=np.int64)
    mask = np.zeros((len(seqs), L), dtype=bool)
    for i, s in enumerate(seqs):
        tokens[i, : len(s)] = s
        mask[i, : len(s)] = True
    return tokens, mask


def _forward(params, tokens):
    """Run the LSTM over a padded batch; returns hidden states and a cache for backprop."""
    B, L = tokens.shape
    d = params["W_h"].shape[0]
    h = np.zeros((B, d))
    c = np.zeros((B, d))
    hs = np.zeros((B, L, d))
    cache = []
    for t in range(L):
        x = params["embed"][tokens[:, t]]
        z = x @ params["W_x"] + h @ params["W_h"] + params["b"]
        i = _sigmoid(z[:, :d])
        f = _sigmoid(z[:, d : 2 * d])
        o = _sigmoid(z[:, 2 * d : 3 * d])
        g = np.tanh(z[:, 3 * d :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((x, h, c, i, f, o, g, tc))
        h, c = h_new, c_new
        hs[:, t] = h
    return hs, cache


def loss_and_grads(params, tokens, mask, with_grads=True):
    """Mean next-token cross-entropy over a padded batch and its parameter gradients."""
    B, L = tokens.shape
    d = params["W_h"].shape[0]
    hs, cache = _forward(params, tokens)
    # position t predicts token t+1
    valid = mask[:, 1:]
    n_pred = int(valid.sum())
    if n_pred == 0:
        zero = {k: np.zeros_like(v) for k, v in params.items()}
        return 0.0, zero
    logits = hs[:, :-1] @ params["W_out"] + params["b_out"]
    logits = logits - logits.max(axis=-1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
    targets = tokens[:, 1:]
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = float(-(picked * valid).sum() / n_pred)
    if not with_grads:
        return loss, None

    dlogits = np.exp(logp)
    np.put_along_axis(
        dlogits, targets[..., None],
        np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0, axis=-1,
    )
    dlogits *= valid[..., None] / n_pred

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    h_pred = hs[:, :-1].reshape(-1, d)
    grads["W_out"] = h_pred.T @ dlogits.reshape(-1, dlogits.shape[-1])
    grads["b_out"] = dlogits.sum(axis=(0, 1))
    dh_out = np.zeros((B, L, d))
    dh_out[:, :-1] = dlogits @ params["W_out"].T

    dh_next = np.zeros((B, d))
    dc_next = np.zeros((B, d))
    W_x, W_h = params["W_x"], params["W_h"]
    for t in range(L - 1, -1, -1):
        x, h_prev, c_prev, i, f, o, g, tc = cache[t]
        dh = dh_out[:, t] + dh_next
        dc = dh * o * (1.0 - tc**2) + dc_next
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dh * tc * o * (1.0 - o),
                dc * i * (1.0 - g**2),
            ],
            axis=1,
        )
        grads["W_x"] += x.T @ dz
        grads["W_h"] += h_prev.T @ dz
        grads["b"] += dz.sum(axis=0)
        np.add.at(grads["embed"], tokens[:, t], dz @ W_x.T)
        dh_next = dz @ W_h.T
        dc_next = dc * f
    return loss, grads


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params, grads):
        self.t += 1
        for k in PARAM_NAMES:
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * grads[k]
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * grads[k] ** 2
            m_hat = self.m[k] / (1 - self.beta1**self.t)
            v_hat = self.v[k] / (1 - self.beta2**self.t)
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(grads, max_norm):
    norm = math.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] *= scale
    return norm


def vocab_for(n_cells: int) -> TokenVocab:
    return TokenVocab(n_obs=n_cells)


def train_encoder(data: Dataset, cfg: EncoderConfig, n_cells: int) -> Encoder:
    """Full-batch Adam on teacher-forced next-token cross-entropy.

    ``loss_history[0]`` is the loss at initialization and each later entry the
    loss after one more epoch.
    """
    vocab = vocab_for(n_cells)
    seqs = [tokenize(t, vocab) for t in data.trajectories]
    tokens, mask = _pad(seqs)
    params = init_params(vocab.size, cfg.d_model, cfg.seed)
    opt = _Adam(params, cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        loss, grads = loss_and_grads(params, tokens, mask)
        if not math.isfinite(loss):
            raise TrainingError(
                f"non-finite loss {loss} at epoch {epoch} (learning rate {cfg.lr}); "
                "try lowering lr"
            )
        history.append(loss)
        clip_gradients(grads, cfg.clip_norm)
        opt.update(params, grads)
    if cfg.epochs:
        final, _ = loss_and_grads(params, tokens, mask, with_grads=False)
        if not math.isfinite(final):
            raise TrainingError(f"non-finite final loss (learning rate {cfg.lr})")
        history.append(final)
        log.info("encoder loss %.4f -> %.4f over %d epochs", history[0], final, cfg.epochs)
    return Encoder(params, vocab, cfg, history)


def hidden_states(enc: Encoder, traj: Trajectory) -> np.ndarray:
    """Per-token hidden outputs, shape (3T, d_model)."""
    if len(traj) == 0:
        raise ContractViolation(f"trajectory {traj.id} is empty")
    tokens = np.array([tokenize(traj, enc.vocab)], dtype=np.int64)
    hs, _ = _forward(enc.params, tokens)
    return hs[0]


def encode_trajectory(enc: Encoder, traj: Trajectory) -> TrajectoryEmbedding:
    hs = hidden_states(enc, traj)
    return TrajectoryEmbedding(traj.id, hs.sum(axis=0) / hs.shape[0])


def encode_all(enc: Encoder, data: Dataset) -> list[TrajectoryEmbedding]:
    out = []
    for t in data.trajectories:
        try:
            out.append(encode_trajectory(enc, t))
        except TokenizationError as exc:
            raise TokenizationError(f"trajectory {t.id}: {exc}") from exc
    return out


def save_encoder(enc: Encoder, path: str | Path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "vocab": {"n_obs": enc.vocab.n_obs, "n_actions": enc.vocab.n_actions,
                  "rewards": list(enc.vocab.rewards)},
        "config": asdict(enc.config),
        "loss_history": enc.loss_history,
    }
    buf = io.BytesIO()
    np.savez(buf, meta=np.array(json.dumps(meta, sort_keys=True)), **enc.params)
    Path(path).write_bytes(buf.getvalue())


def load_encoder(path: str | Path) -> Encoder:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported encoder checkpoint version {meta.get('version')!r}")
        params = {k: z[k].copy() for k in PARAM_NAMES}
    v = meta["vocab"]
    vocab = TokenVocab(v["n_obs"], v["n_actions"], tuple(v["rewards"]))
    return Encoder(params, vocab, EncoderConfig(**meta["config"]), meta["loss_history"])


def write_embeddings_csv(embs: list[TrajectoryEmbedding], path: str | Path) -> None:
    d = len(embs[0].vector)
    lines = ["traj_id," + ",".join(f"f{j}" for j in range(d))]
    for e in embs:
        lines.append(f"{e.traj_id}," + ",".join(repr(float(x)) for x in e.vector))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_embeddings_csv(path: str | Path) -> list[TrajectoryEmbedding]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    out = []
    for row in rows:
        parts = row.split(",")
        out.append(TrajectoryEmbedding(int(parts[0]), np.array([float(x) for x in parts[1:]])))
    return out
