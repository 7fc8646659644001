import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from radalign.alignment import (
    EmbeddingTable,
    HashingTextEncoder,
    align_train,
    clip_loss,
    clip_loss_grad,
    embed_corpus,
    load_align_state,
    read_table,
    resolve_mode,
    save_align_state,
    similarity_matrix,
    tokenize,
    write_table,
)
from radalign.alignment import losses as align_losses
from radalign.alignment.train import load_vision_weights
from radalign.alignment.model import build_dual_encoder
from radalign.config import default_vocabulary_names
from radalign.data.dataset import build_volume_set
from radalign.data.synthetic import generate_synthetic_corpus
from radalign.vision import save_state, supervised_train

D = torch.float64
LN_1P_EXP_M1 = 0.31326168751822286  # ln(1 + e^-1), frozen


def naive_clip(S):
    """Symmetric cross-entropy against the diagonal, looped in plain Python floats."""
    n = len(S)
    total = 0.0
    for i in range(n):
        total -= math.log(math.exp(S[i][i]) / sum(math.exp(S[i][j]) for j in range(n)))
        total -= math.log(math.exp(S[i][i]) / sum(math.exp(S[j][i]) for j in range(n)))
    return total / (2 * n)


# --- similarity -----------------------------------------------------------

def test_identity_rows_give_identity_similarity():
    eye = torch.eye(4, dtype=D)
    for mode in (True, False):
        assert torch.equal(similarity_matrix(eye, eye, mode), eye)


def test_row_scaling_behaviour():
    Z, T = torch.randn(3, 5, dtype=D), torch.randn(3, 5, dtype=D)
    Zs = Z.clone()
    Zs[1] *= 2.5
    raw, raw_s = similarity_matrix(Z, T, False), similarity_matrix(Zs, T, False)
    assert torch.allclose(raw_s[1], 2.5 * raw[1], atol=1e-12) and torch.equal(raw_s[0], raw[0])
    assert torch.allclose(similarity_matrix(Zs, T, True), similarity_matrix(Z, T, True), atol=1e-14)


def test_zero_row_rejected_only_when_normalising():
    Z = torch.zeros(2, 3, dtype=D)
    with pytest.raises(ValueError):
        similarity_matrix(Z, torch.ones(2, 3, dtype=D), True)
    assert torch.equal(similarity_matrix(Z, torch.ones(2, 3, dtype=D), False), torch.zeros(2, 2, dtype=D))


# --- loss fixtures --------------------------------------------------------

def test_oracle_constant():
    assert abs(math.log1p(math.exp(-1)) - LN_1P_EXP_M1) < 1e-16


def test_two_by_two_identity():
    assert abs(clip_loss(torch.eye(2, dtype=D)).item() - LN_1P_EXP_M1) < 1e-12


@pytest.mark.parametrize("n", [1, 2, 3, 7, 10])
@pytest.mark.parametrize("coef", [1.0, 0.1])
def test_uniform_similarity_gives_log_n(n, coef):
    S = torch.full((n, n), 0.37, dtype=D)
    assert abs(clip_loss(S, coef).item() - coef * math.log(n)) < 1e-12


def test_single_pair_is_zero():
    assert clip_loss(torch.tensor([[123.4]], dtype=D)).item() == 0.0


def test_matches_naive_loop_and_survives_large_entries():
    rng = np.random.default_rng(0)
    for _ in range(20):
        S = rng.normal(size=(5, 5)) * 3
        assert abs(clip_loss(torch.tensor(S)).item() - naive_clip(S.tolist())) < 1e-12
    big = torch.tensor([[1000.0, 0.0], [0.0, 1000.0]], dtype=D)
    assert clip_loss(big).item() == 0.0
    assert math.isfinite(clip_loss(torch.tensor([[-1000.0, 1000.0], [1000.0, -1000.0]], dtype=D)).item())


def test_no_hidden_temperature():
    assert align_losses.TEMPERATURE == 1.0
    S = torch.randn(4, 4, dtype=D)
    assert abs(clip_loss(S).item() - naive_clip(S.tolist())) < 1e-12


def test_diagonal_dominance_lowers_loss():
    values = [clip_loss(beta * torch.eye(5, dtype=D)).item() for beta in (1, 2, 4, 8)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert all(v >= 0 for v in values)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_loss_invariant_to_pair_relabelling(n, seed):
    g = torch.Generator().manual_seed(seed)
    S = torch.randn(n, n, generator=g, dtype=D)
    p = torch.randperm(n, generator=g)
    assert abs(clip_loss(S).item() - clip_loss(S[p][:, p]).item()) < 1e-12
    assert clip_loss(S).item() >= 0


def test_duplicated_pairs_do_not_lower_loss():
    g = torch.Generator().manual_seed(0)
    Z, T = torch.randn(3, 4, generator=g, dtype=D), torch.randn(3, 4, generator=g, dtype=D)
    base = clip_loss(similarity_matrix(Z, T, True)).item()
    dup = clip_loss(similarity_matrix(Z.repeat(2, 1), T.repeat(2, 1), True)).item()
    assert dup >= base


# --- unnormalised scaling -------------------------------------------------

@pytest.mark.parametrize("alpha", [2.0, 0.5, 3.0])
def test_unnormalised_scaling_is_quadratic(alpha):
    g = torch.Generator().manual_seed(1)
    Z, T = torch.randn(6, 8, generator=g, dtype=D), torch.randn(6, 8, generator=g, dtype=D)
    S = similarity_matrix(Z, T, False)
    scaled = clip_loss(similarity_matrix(alpha * Z, alpha * T, False), 0.1).item()
    assert abs(scaled - clip_loss(alpha ** 2 * S, 0.1).item()) < 1e-9
    normed = clip_loss(similarity_matrix(alpha * Z, alpha * T, True)).item()
    assert abs(normed - clip_loss(similarity_matrix(Z, T, True)).item()) < 1e-9


# --- gradients ------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_clip_gradient(seed):
    g = torch.Generator().manual_seed(seed)
    S = torch.randn(4, 4, generator=g, dtype=D).requires_grad_()
    coef = 0.1 if seed % 2 else 1.0
    analytic = torch.autograd.grad(clip_loss(S, coef), [S])[0]
    h = 1e-6
    numeric = torch.zeros_like(S)
    with torch.no_grad():
        for i in range(4):
            for j in range(4):
                E = torch.zeros_like(S)
                E[i, j] = h
                numeric[i, j] = (clip_loss(S + E, coef) - clip_loss(S - E, coef)) / (2 * h)
    rel = (analytic - numeric).norm() / max(analytic.norm(), numeric.norm())
    assert rel < 1e-4
    assert torch.allclose(analytic, clip_loss_grad(S.detach(), coef), atol=1e-14)


# --- mode resolution and text encoder ------------------------------------

def test_resolve_mode():
    assert resolve_mode({"l2_normalize": "auto", "loss_coefficient": "auto"}, "supervised") == (False, 0.1)
    assert resolve_mode({"l2_normalize": "auto", "loss_coefficient": "auto"}, "random") == (True, 1.0)
    assert resolve_mode({"l2_normalize": True, "loss_coefficient": "auto"}, "supervised") == (True, 1.0)
    assert resolve_mode({"l2_normalize": False, "loss_coefficient": 0.5}, "random") == (False, 0.5)


def test_negation_marks_whole_sentence():
    assert tokenize("No lung nodule. Emphysema is present.") == ["no", "NOT_lung", "NOT_nodule", "emphysema", "is", "present"]
    assert tokenize("Cardiomegaly is not present.") == ["NOT_cardiomegaly", "NOT_is", "not", "NOT_present"]


def test_text_encoder_is_deterministic_and_handles_empty():
    torch.manual_seed(0)
    enc = HashingTextEncoder(64, 8)
    a = enc(["There is emphysema.", ""])
    b = enc(["There is emphysema.", ""])
    assert a.shape == (2, 8) and torch.equal(a, b)


# --- training and persistence ---------------------------------------------

def pair_set(n=24, C=2, shape=(12, 12, 12), seed=0):
    vocab = default_vocabulary_names(C)
    vols, reps, labs = generate_synthetic_corpus(n, vocab, shape, seed, prevalence=0.4)
    return build_volume_set(vols, reps, vocab, target_spacing_mm=(1.5, 1.5, 3.0), pad_shape=shape,
                            targets=labs, reference=labs)


ENC = {"arch": "resnet3d", "widths": [4, 8]}


def align_config(**kw):
    cfg = dict(steps=6, batch_size=6, lr=1e-3, head_lr=None, weight_decay=1e-2, l2_normalize=True,
               loss_coefficient="auto", shared_dim=16, text_dim=16, text_buckets=256, encoder=ENC,
               crop_shape=[8, 8, 8])
    cfg.update(kw)
    return cfg


def test_zero_learning_rate_gives_constant_loss_on_fixed_batch():
    vs = pair_set(n=6)
    # one batch covers the corpus, and crops equal the volume so every step sees identical inputs
    cfg = align_config(lr=0.0, head_lr=0.0, crop_shape=[12, 12, 12])
    state = align_train(cfg, vs, "random", seed=0)
    fresh = build_dual_encoder({**cfg, "l2_normalize": True}, 0)
    assert all(torch.equal(v, fresh.state_dict()[k]) for k, v in state.model.state_dict().items())
    # batch order is reshuffled each step, so float32 sums may differ in the last bit
    assert max(state.loss_history) - min(state.loss_history) < 1e-6


def test_alignment_is_deterministic():
    vs = pair_set()
    a = align_train(align_config(), vs, "random", seed=5)
    b = align_train(align_config(), vs, "random", seed=5)
    assert a.loss_history == b.loss_history


def test_supervised_init_loads_encoder(tmp_path):
    vs = pair_set()
    cfg = dict(steps=3, batch_size=6, lr=1e-3, weight_decay=0.0, label_smoothing=0.1, ass=False, encoder=ENC,
               crop_shape=[8, 8, 8])
    save_state(tmp_path / "sup.ckpt", supervised_train(cfg, vs, seed=0))
    model = build_dual_encoder(align_config(), 9)
    load_vision_weights(model, "supervised", tmp_path / "sup.ckpt")
    from radalign.vision import load_state

    sup = load_state(tmp_path / "sup.ckpt").model.encoder.state_dict()
    assert all(torch.equal(v, sup[k]) for k, v in model.vision.state_dict().items())


def test_supervised_init_shape_mismatch_lists_fields(tmp_path):
    vs = pair_set()
    cfg = dict(steps=1, batch_size=6, lr=1e-3, label_smoothing=0.1, ass=False, encoder={"arch": "resnet3d", "widths": [4, 12]},
               crop_shape=[8, 8, 8])
    save_state(tmp_path / "sup.ckpt", supervised_train(cfg, vs, seed=0))
    with pytest.raises(ValueError, match="expected shape"):
        align_train(align_config(), vs, "supervised", tmp_path / "sup.ckpt", seed=0)


def test_only_vision_init_differs_between_modes(tmp_path):
    vs = pair_set()
    cfg = dict(steps=2, batch_size=6, lr=1e-3, label_smoothing=0.1, ass=False, encoder=ENC, crop_shape=[8, 8, 8])
    save_state(tmp_path / "sup.ckpt", supervised_train(cfg, vs, seed=0))
    rand = build_dual_encoder(align_config(), 0)
    sup = build_dual_encoder(align_config(), 0)
    load_vision_weights(sup, "supervised", tmp_path / "sup.ckpt")
    for name in ("text.embedding.weight", "text_proj.weight", "image_proj.weight"):
        assert torch.equal(rand.state_dict()[name], sup.state_dict()[name])


def test_resume_and_state_roundtrip(tmp_path):
    vs = pair_set()
    straight = align_train(align_config(steps=8), vs, "random", seed=1)
    half = align_train(align_config(steps=4), vs, "random", seed=1)
    save_align_state(tmp_path / "a.ckpt", half)
    resumed = align_train(align_config(steps=8), vs, "random", seed=1, state=load_align_state(tmp_path / "a.ckpt"))
    assert resumed.loss_history == straight.loss_history


def test_embed_corpus_and_table_roundtrip(tmp_path):
    vs = pair_set(n=10)
    state = align_train(align_config(steps=2), vs, "random", seed=0)
    images, texts = embed_corpus(state, vs)
    assert images.vectors.shape == (10, 16) and images.ids == vs.ids
    np.testing.assert_allclose(np.linalg.norm(images.vectors, axis=1), 1.0, atol=1e-6)
    again, _ = embed_corpus(state, vs)
    assert again.vectors.tobytes() == images.vectors.tobytes()
    write_table(tmp_path / "img.emb", images)
    raw = (tmp_path / "img.emb").read_bytes()
    assert raw[:4] == b"EMB1" and raw[12] == 1 and len(raw) == 13 + 4 * 10 * 16
    back = read_table(tmp_path / "img.emb")
    assert back.ids == images.ids and back.normalized and back.vectors.tobytes() == images.vectors.tobytes()


def test_unnormalised_tables_keep_raw_norms():
    vs = pair_set(n=8)
    state = align_train(align_config(steps=2, l2_normalize=False), vs, "random", seed=0)
    images, _ = embed_corpus(state, vs)
    assert not images.normalized
    assert not np.allclose(np.linalg.norm(images.vectors, axis=1), 1.0)


def test_table_validation():
    with pytest.raises(ValueError):
        EmbeddingTable(["a"], np.zeros((2, 3)), True)
