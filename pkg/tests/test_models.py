import numpy as np
import pytest

from forgetbench.autograd import (
    Tape,
    Tensor,
    add,
    backward,
    gru_cell,
    matmul,
    sinusoidal_positions,
    softmax_cross_entropy,
)
from forgetbench.errors import ConfigError, EmptySequenceError
from forgetbench.models import (
    ModelConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
)

from helpers import check_gradients

SMALL = {
    "ANN": ModelConfig("ANN", vocab_size=12, num_classes=4, embed_dim=6, hidden_dim=5,
                       dropout_p=0.2),
    "GRU": ModelConfig("GRU", vocab_size=12, num_classes=4, embed_dim=4, hidden_dim=5,
                       dropout_p=0.0),
    "TRANSFORMER": ModelConfig("TRANSFORMER", vocab_size=12, num_classes=4, embed_dim=8,
                               hidden_dim=8, num_layers=1, num_heads=2, dropout_p=0.2),
}
ARCHS = list(SMALL)


def _sample_input(rng, length=7, real=4, vocab=12):
    ids = rng.integers(1, vocab, size=length)
    mask = np.zeros(length)
    mask[:real] = 1.0
    return ids, mask


def _ones_gates(model):
    return {h.layer_id: Tensor(np.ones(h.width)) for h in model.maskable_layers()}


# ---------------------------------------------------------------------------
# construction


@pytest.mark.parametrize("arch", ARCHS)
def test_same_config_and_seed_is_bit_identical(arch):
    m1 = build_model(SMALL[arch], seed=7)
    m2 = build_model(SMALL[arch], seed=7)
    for (n1, p1), (n2, p2) in zip(m1.named_parameters().items(),
                                  m2.named_parameters().items()):
        assert n1 == n2
        assert np.array_equal(p1.data, p2.data)
    m3 = build_model(SMALL[arch], seed=8)
    assert any(
        not np.array_equal(p.data, q.data)
        for p, q in zip(m1.parameters(), m3.parameters())
    )


def test_ann_exposes_one_handle_of_hidden_width():
    model = build_model(SMALL["ANN"], seed=0)
    handles = model.maskable_layers()
    assert len(handles) == 1
    assert handles[0].layer_id == "hidden"
    assert handles[0].width == SMALL["ANN"].hidden_dim


def test_transformer_handles_cover_blocks_and_pooled():
    cfg = ModelConfig("TRANSFORMER", vocab_size=10, num_classes=3, embed_dim=8,
                      num_layers=3, num_heads=2)
    handles = build_model(cfg, seed=0).maskable_layers()
    assert [h.layer_id for h in handles] == ["block0_ffn", "block1_ffn", "block2_ffn", "pooled"]
    assert [h.width for h in handles] == [32, 32, 32, 8]


@pytest.mark.parametrize("arch", ARCHS)
def test_forward_output_shape_on_l64_input(arch):
    model = build_model(SMALL[arch], seed=1)
    rng = np.random.default_rng(0)
    ids, mask = _sample_input(rng, length=64, real=9)
    logits = model.forward(ids, mask)
    assert logits.shape == (SMALL[arch].num_classes,)
    batch_logits = model.forward(np.stack([ids, ids]), np.stack([mask, mask]))
    assert batch_logits.shape == (2, SMALL[arch].num_classes)


@pytest.mark.parametrize("arch", ARCHS)
def test_parameter_count_matches_closed_form(arch):
    cfg = SMALL[arch]
    model = build_model(cfg, seed=0)
    v, e, h, c = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.num_classes
    if arch == "ANN":
        expected = v * e + (e * h + h) + (h * c + c)
    elif arch == "GRU":
        expected = v * e + 3 * (e * h + h * h + h) + (h * c + c)
    else:
        f = 4 * e
        per_block = 4 * (e * e + e) + 4 * e + (e * f + f) + (f * e + e)
        expected = v * e + cfg.num_layers * per_block + 2 * e + (e * c + c)
    assert model.parameter_count() == expected


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig("MLP", vocab_size=10)
    with pytest.raises(ConfigError):
        ModelConfig("ANN", vocab_size=0)
    with pytest.raises(ConfigError):
        ModelConfig("ANN", vocab_size=10, dropout_p=1.0)
    with pytest.raises(ConfigError):
        ModelConfig("TRANSFORMER", vocab_size=10, embed_dim=10, num_heads=4)


# ---------------------------------------------------------------------------
# gating


@pytest.mark.parametrize("arch", ARCHS)
def test_all_ones_gates_reproduce_ungated_forward_exactly(arch):
    model = build_model(SMALL[arch], seed=3)
    rng = np.random.default_rng(1)
    ids, mask = _sample_input(rng)
    plain = model.forward(ids, mask)
    gated = model.forward(ids, mask, gates=_ones_gates(model))
    assert np.array_equal(plain.data, gated.data)


def test_ann_zero_gates_leave_only_output_bias():
    model = build_model(SMALL["ANN"], seed=3)
    rng = np.random.default_rng(1)
    ids, mask = _sample_input(rng)
    gates = {"hidden": Tensor(np.zeros(SMALL["ANN"].hidden_dim))}
    logits = model.forward(ids, mask, gates=gates)
    assert np.array_equal(logits.data, model.params["b2"].data)


# ---------------------------------------------------------------------------
# pad handling


@pytest.mark.parametrize("arch", ARCHS)
def test_appending_pad_tokens_leaves_logits_unchanged(arch):
    model = build_model(SMALL[arch], seed=5)
    rng = np.random.default_rng(2)
    ids, mask = _sample_input(rng, length=6, real=6)
    short = model.forward(ids, mask)
    padded_ids = np.concatenate([ids, np.zeros(4, dtype=np.int64)])
    padded_mask = np.concatenate([mask, np.zeros(4)])
    long = model.forward(padded_ids, padded_mask)
    assert np.array_equal(short.data, long.data)


@pytest.mark.parametrize("arch", ARCHS)
def test_logits_ignore_content_at_masked_positions(arch):
    model = build_model(SMALL[arch], seed=5)
    rng = np.random.default_rng(3)
    ids, _ = _sample_input(rng, length=6, real=6)
    mask = np.array([1.0, 1.0, 0.0, 1.0, 0.0, 0.0])
    base = model.forward(ids, mask)
    altered = ids.copy()
    altered[2] = (altered[2] + 3) % 12
    altered[4] = (altered[4] + 5) % 12
    assert np.array_equal(base.data, model.forward(altered, mask).data)


def test_transformer_permuting_pad_positions_is_invariant():
    model = build_model(SMALL["TRANSFORMER"], seed=5)
    rng = np.random.default_rng(4)
    ids, _ = _sample_input(rng, length=6, real=6)
    mask = np.array([1.0, 1.0, 1.0, 1.0, 0.0, 0.0])
    base = model.forward(ids, mask)
    swapped = ids.copy()
    swapped[4], swapped[5] = swapped[5], swapped[4]
    assert np.array_equal(base.data, model.forward(swapped, mask).data)


def test_all_pad_input_is_an_error():
    model = build_model(SMALL["ANN"], seed=0)
    with pytest.raises(EmptySequenceError):
        model.forward(np.array([1, 2]), np.array([0.0, 0.0]))


# ---------------------------------------------------------------------------
# composition oracles


def test_gru_single_token_equals_cell_plus_output_layer():
    model = build_model(SMALL["GRU"], seed=9)
    token = 4
    logits = model.forward(np.array([token]), np.array([1.0]))
    x = Tensor(model.params["embedding"].data[np.asarray([token])])
    h0 = Tensor(np.zeros((1, SMALL["GRU"].hidden_dim)))
    state = gru_cell(x, h0, model.cell)
    expected = add(matmul(state, model.params["w_out"]), model.params["b_out"])
    assert np.allclose(logits.data, expected.data[0], atol=1e-14)


def test_transformer_single_token_matches_hand_composition():
    cfg = ModelConfig("TRANSFORMER", vocab_size=9, num_classes=3, embed_dim=4,
                      num_layers=1, num_heads=1, dropout_p=0.0)
    model = build_model(cfg, seed=11)
    token = 5
    logits = model.forward(np.array([token]), np.array([1.0])).data

    def ln(x, g, b, eps=1e-5):
        mu = x.mean()
        var = ((x - mu) ** 2).mean()
        return (x - mu) / np.sqrt(var + eps) * g + b

    p = {k: t.data for k, t in model.named_parameters().items()}
    x = p["embedding"][token] + sinusoidal_positions(1, 4)[0]
    n1 = ln(x, p["block0.ln1_g"], p["block0.ln1_b"])
    value = n1 @ p["block0.w_v"] + p["block0.b_v"]          # single position: weight 1
    x = x + value @ p["block0.w_o"] + p["block0.b_o"]
    n2 = ln(x, p["block0.ln2_g"], p["block0.ln2_b"])
    ffn = np.maximum(n2 @ p["block0.w_f1"] + p["block0.b_f1"], 0.0)
    x = x + ffn @ p["block0.w_f2"] + p["block0.b_f2"]
    pooled = ln(x, p["final_ln_g"], p["final_ln_b"])
    expected = pooled @ p["w_out"] + p["b_out"]
    assert np.allclose(logits, expected, atol=1e-12)


def test_batched_forward_matches_per_row_forward():
    rng = np.random.default_rng(8)
    for arch in ARCHS:
        model = build_model(SMALL[arch], seed=13)
        rows = [_sample_input(rng, real=rng.integers(2, 7)) for _ in range(3)]
        ids = np.stack([r[0] for r in rows])
        mask = np.stack([r[1] for r in rows])
        batched = model.forward(ids, mask).data
        for i, (row_ids, row_mask) in enumerate(rows):
            single = model.forward(row_ids, row_mask).data
            assert np.allclose(batched[i], single, atol=1e-12), arch


# ---------------------------------------------------------------------------
# gradients through the full backbones


@pytest.mark.parametrize("arch", ARCHS)
@pytest.mark.parametrize("seed", range(10))
def test_backbone_gradients_match_finite_differences(arch, seed):
    model = build_model(SMALL[arch], seed=seed)
    rng = np.random.default_rng(1000 + seed)
    ids = rng.integers(0, SMALL[arch].vocab_size, size=(2, 5))
    mask = np.array([[1.0, 1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0, 1.0]])
    labels = rng.integers(0, SMALL[arch].num_classes, size=2)
    check_gradients(
        lambda: softmax_cross_entropy(model.forward(ids, mask), labels),
        model.parameters(),
        tol=1e-4,
    )


# ---------------------------------------------------------------------------
# checkpointing


@pytest.mark.parametrize("arch", ARCHS)
def test_checkpoint_round_trip(arch, tmp_path):
    model = build_model(SMALL[arch], seed=21)
    path = tmp_path / "model.npz"
    save_checkpoint(model, path)
    other = build_model(SMALL[arch], seed=22)
    load_checkpoint(other, path)
    for p, q in zip(model.parameters(), other.parameters()):
        assert np.array_equal(p.data, q.data)


def test_checkpoint_mismatch_is_an_error(tmp_path):
    model = build_model(SMALL["ANN"], seed=0)
    path = tmp_path / "model.npz"
    save_checkpoint(model, path)
    other = build_model(SMALL["GRU"], seed=0)
    with pytest.raises(ConfigError):
        load_checkpoint(other, path)
