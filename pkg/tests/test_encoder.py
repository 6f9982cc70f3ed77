import numpy as np
import pytest

from trajattr.data import Dataset, Trajectory
from trajattr.encoder import (
    PARAM_NAMES,
    EncoderConfig,
    TokenVocab,
    encode_all,
    encode_trajectory,
    hidden_states,
    init_params,
    load_encoder,
    save_encoder,
    tokenize,
    train_encoder,
)
from oracles import gradient_check
from trajattr.errors import ContractViolation, TokenizationError


def _traj(n, tid=0):
    return Trajectory(tid, tuple(range(n)), tuple(i % 4 for i in range(n)), (-0.1,) * (n - 1) + (1.0,))


def test_vocab_size_for_grid(layout):
    v = TokenVocab(layout.n_cells)
    assert v.size == 49 + 4 + 3


def test_tokenize_interleaves():
    v = TokenVocab(9)
    assert tokenize(Trajectory(0, (4,), (2,), (-0.1,)), v) == [4, 9 + 2, 9 + 4 + 2]
    assert len(tokenize(_traj(30), TokenVocab(49))) == 90


def test_reward_buckets():
    v = TokenVocab(9)
    assert {v.reward_token(r) for r in (1.0, -1.0, -0.1)} == {13, 14, 15}
    with pytest.raises(TokenizationError):
        v.reward_token(0.5)


def test_gradients_match_finite_differences():
    errors, names = gradient_check()
    assert len(errors) >= 20
    assert max(errors) < 1e-4
    assert len(names) >= 4


def test_zero_epochs_is_initialization(dataset, layout):
    enc = train_encoder(dataset, EncoderConfig(d_model=8, epochs=0, seed=5), layout.n_cells)
    init = init_params(enc.vocab.size, 8, 5)
    assert all(np.array_equal(enc.params[k], init[k]) for k in PARAM_NAMES)
    assert enc.loss_history == []


def test_training_is_deterministic_and_learns(dataset, layout):
    cfg = EncoderConfig(d_model=16, epochs=15, seed=2)
    a = train_encoder(dataset, cfg, layout.n_cells)
    b = train_encoder(dataset, cfg, layout.n_cells)
    assert a.equals(b)
    assert a.loss_history[-1] < a.loss_history[0]


def test_embedding_is_mean_of_hidden_states(dataset, layout):
    enc = train_encoder(dataset, EncoderConfig(d_model=8, epochs=3, seed=1), layout.n_cells)
    t = Trajectory(0, dataset[0].obs[:1], dataset[0].act[:1], dataset[0].rew[:1])
    hs = hidden_states(enc, t)
    assert hs.shape == (3, 8)
    emb = encode_trajectory(enc, t)
    manual = (hs[0] + hs[1] + hs[2]) / 3
    np.testing.assert_allclose(emb.vector, manual, rtol=0, atol=1e-12)
    assert encode_trajectory(enc, dataset[5]).vector.shape == (8,)


def test_encode_all_preserves_order(dataset, layout):
    enc = train_encoder(dataset, EncoderConfig(d_model=8, epochs=2, seed=1), layout.n_cells)
    embs = encode_all(enc, dataset)
    assert [e.traj_id for e in embs] == list(range(60))


def test_encode_all_reports_failing_id(dataset, layout):
    enc = train_encoder(dataset, EncoderConfig(d_model=4, epochs=0), layout.n_cells)
    bad = Dataset([dataset[0], Trajectory(1, (999,), (0,), (-0.1,))])
    with pytest.raises(TokenizationError, match="trajectory 1"):
        encode_all(enc, bad)


def test_empty_trajectory_rejected(dataset, layout):
    enc = train_encoder(dataset, EncoderConfig(d_model=4, epochs=0), layout.n_cells)
    with pytest.raises(ContractViolation):
        encode_trajectory(enc, Trajectory(0, (), (), ()))


def test_checkpoint_round_trip_is_bit_exact(tmp_path, dataset, layout):
    enc = train_encoder(dataset, EncoderConfig(d_model=8, epochs=2, seed=4), layout.n_cells)
    path = tmp_path / "enc.ckpt"
    save_encoder(enc, path)
    assert load_encoder(path).equals(enc)


def test_trained_embeddings_separate_behaviors(default_run):
    from trajattr.data import read_dataset
    from trajattr.encoder import read_embeddings_csv

    data = read_dataset(default_run.dataset)
    embs = read_embeddings_csv(default_run.traj_embeddings)
    labels = data.metadata["behaviors"]
    i = labels.index("uniform")
    j = labels.index("eps_greedy@0.2")
    assert np.max(np.abs(embs[i].vector - embs[j].vector)) > 1e-9
