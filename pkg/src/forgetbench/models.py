"""The three text-classification backbones with a uniform forward contract.

Each model maps (token_ids, attention_mask) to logits over the full shared
label set and exposes a fixed list of maskable activation layers whose units
can be gated per task. Inputs may be a single sequence (1-D ids) or a batch
(2-D); padded tail positions are clipped before any computation, which is
exact because masked positions never influence the logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autograd import (
    AttentionParams,
    GruParams,
    Tensor,
    add,
    dropout,
    embedding_lookup,
    gru_cell,
    layer_norm,
    masked_mean_pool,
    matmul,
    mul,
    relu,
    self_attention,
    sinusoidal_positions,
)
from .errors import ConfigError, EmptySequenceError, ShapeError

ARCHITECTURES = ("ANN", "GRU", "TRANSFORMER")


@dataclass(frozen=True)
class ModelConfig:
    architecture: str
    vocab_size: int
    num_classes: int = 150
    embed_dim: int = 128
    hidden_dim: int = 256
    num_layers: int = 2
    num_heads: int = 4
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(
                f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}"
            )
        for name in ("vocab_size", "num_classes", "embed_dim", "hidden_dim",
                     "num_layers", "num_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must be in [0, 1)")
        if self.architecture == "TRANSFORMER" and self.embed_dim % self.num_heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )


@dataclass(frozen=True)
class MaskableLayerHandle:
    """Stable identifier of one gateable activation vector."""

    layer_id: str
    width: int


@dataclass(frozen=True)
class HatBinding:
    """Links a parameter to the maskable layers on its output/input side.

    ``out_axis`` indexes units of ``out_handle`` along the parameter, likewise
    for the input side; either side may be absent.
    """

    name: str
    out_handle: Optional[str] = None
    out_axis: Optional[int] = None
    in_handle: Optional[str] = None
    in_axis: Optional[int] = None


class _ParamBank:
    """Ordered parameter store with seeded uniform(-1/sqrt(fan_in)) init."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict[str, Tensor] = {}

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        t = Tensor(self.rng.uniform(-bound, bound, shape), requires_grad=True)
        self.params[name] = t
        return t

    def constant(self, name: str, shape: tuple[int, ...], value: float) -> Tensor:
        t = Tensor(np.full(shape, value), requires_grad=True)
        self.params[name] = t
        return t


def _prepare_inputs(token_ids, attention_mask):
    ids = np.asarray(token_ids, dtype=np.int64)
    mask = np.asarray(attention_mask, dtype=np.float64)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
        mask = mask[None, :]
    if ids.shape != mask.shape:
        raise ShapeError(f"ids shape {ids.shape} != mask shape {mask.shape}")
    if np.any(mask.sum(axis=1) == 0):
        raise EmptySequenceError("input has no unmasked tokens")
    # Clip trailing positions past the last real token in the batch; masked
    # positions cannot influence logits, so this is exact.
    last_real = mask.shape[1] - 1 - np.argmax(mask[:, ::-1], axis=1)
    lmax = int(last_real.max()) + 1
    return ids[:, :lmax], mask[:, :lmax], squeeze


class Model:
    """Shared surface of the three backbones."""

    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        self.seed = seed
        self._bank = _ParamBank(np.random.default_rng(seed))
        self._build(self._bank)

    def _build(self, bank: _ParamBank) -> None:
        raise NotImplementedError

    # -- parameters ---------------------------------------------------------

    @property
    def params(self) -> dict[str, Tensor]:
        return self._bank.params

    def parameters(self) -> list[Tensor]:
        return list(self._bank.params.values())

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self._bank.params)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._bank.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._bank.params) - set(state)
        extra = set(state) - set(self._bank.params)
        if missing or extra:
            raise ConfigError(f"checkpoint mismatch; missing={sorted(missing)}, extra={sorted(extra)}")
        for name, p in self._bank.params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ConfigError(f"checkpoint shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()

    # -- masking ------------------------------------------------------------

    def maskable_layers(self) -> list[MaskableLayerHandle]:
        raise NotImplementedError

    def hat_gradient_bindings(self) -> list[HatBinding]:
        raise NotImplementedError

    # -- forward ------------------------------------------------------------

    def forward(self, token_ids, attention_mask, gates=None, train: bool = False,
                dropout_rng: Optional[np.random.Generator] = None) -> Tensor:
        raise NotImplementedError

    def _maybe_gate(self, h: Tensor, gates, layer_id: str) -> Tensor:
        if gates and layer_id in gates:
            return mul(h, gates[layer_id])
        return h


class AnnModel(Model):
    """Embedding -> masked mean pool -> hidden layer -> relu/dropout -> logits.

    Parameter count: V*E + (E*H + H) + (H*C + C).
    """

    def _build(self, bank: _ParamBank) -> None:
        cfg = self.config
        bank.uniform("embedding", (cfg.vocab_size, cfg.embed_dim), fan_in=1)
        bank.uniform("w1", (cfg.embed_dim, cfg.hidden_dim), fan_in=cfg.embed_dim)
        bank.uniform("b1", (cfg.hidden_dim,), fan_in=cfg.embed_dim)
        bank.uniform("w2", (cfg.hidden_dim, cfg.num_classes), fan_in=cfg.hidden_dim)
        bank.uniform("b2", (cfg.num_classes,), fan_in=cfg.hidden_dim)

    def maskable_layers(self) -> list[MaskableLayerHandle]:
        return [MaskableLayerHandle("hidden", self.config.hidden_dim)]

    def hat_gradient_bindings(self) -> list[HatBinding]:
        return [
            HatBinding("w1", out_handle="hidden", out_axis=1),
            HatBinding("b1", out_handle="hidden", out_axis=0),
        ]

    def forward(self, token_ids, attention_mask, gates=None, train: bool = False,
                dropout_rng=None) -> Tensor:
        ids, mask, squeeze = _prepare_inputs(token_ids, attention_mask)
        p = self.params
        pooled = masked_mean_pool(embedding_lookup(p["embedding"], ids), mask)
        hidden = relu(add(matmul(pooled, p["w1"]), p["b1"]))
        hidden = dropout(hidden, self.config.dropout_p, train, dropout_rng)
        hidden = self._maybe_gate(hidden, gates, "hidden")
        logits = add(matmul(hidden, p["w2"]), p["b2"])
        return logits.reshape((self.config.num_classes,)) if squeeze else logits


class GruModel(Model):
    """Embedding -> gated recurrence -> state at last real token -> logits.

    The recurrent state is frozen through masked steps, so the final state is
    the state at the last unmasked position. Parameter count:
    V*E + 3*(E*H + H*H + H) + (H*C + C).
    """

    def _build(self, bank: _ParamBank) -> None:
        cfg = self.config
        e, h = cfg.embed_dim, cfg.hidden_dim
        bank.uniform("embedding", (cfg.vocab_size, e), fan_in=1)
        tensors = {}
        for gate in ("z", "r", "h"):
            tensors[f"w_{gate}"] = bank.uniform(f"w_{gate}", (e, h), fan_in=e)
            tensors[f"u_{gate}"] = bank.uniform(f"u_{gate}", (h, h), fan_in=h)
            tensors[f"b_{gate}"] = bank.uniform(f"b_{gate}", (h,), fan_in=h)
        self.cell = GruParams(
            w_z=tensors["w_z"], u_z=tensors["u_z"], b_z=tensors["b_z"],
            w_r=tensors["w_r"], u_r=tensors["u_r"], b_r=tensors["b_r"],
            w_h=tensors["w_h"], u_h=tensors["u_h"], b_h=tensors["b_h"],
        )
        bank.uniform("w_out", (h, cfg.num_classes), fan_in=h)
        bank.uniform("b_out", (cfg.num_classes,), fan_in=h)

    def maskable_layers(self) -> list[MaskableLayerHandle]:
        return [MaskableLayerHandle("gru_state", self.config.hidden_dim)]

    def hat_gradient_bindings(self) -> list[HatBinding]:
        bindings = []
        for gate in ("z", "r", "h"):
            bindings.append(HatBinding(f"w_{gate}", out_handle="gru_state", out_axis=1))
            bindings.append(HatBinding(f"u_{gate}", out_handle="gru_state", out_axis=1,
                                       in_handle="gru_state", in_axis=0))
            bindings.append(HatBinding(f"b_{gate}", out_handle="gru_state", out_axis=0))
        return bindings

    def forward(self, token_ids, attention_mask, gates=None, train: bool = False,
                dropout_rng=None) -> Tensor:
        ids, mask, squeeze = _prepare_inputs(token_ids, attention_mask)
        p = self.params
        batch, length = ids.shape
        state = Tensor(np.zeros((batch, self.config.hidden_dim)))
        for t in range(length):
            x_t = embedding_lookup(p["embedding"], ids[:, t])
            new_state = gru_cell(x_t, state, self.cell)
            keep = mask[:, t : t + 1]
            state = add(mul(new_state, Tensor(keep)), mul(state, Tensor(1.0 - keep)))
        state = self._maybe_gate(state, gates, "gru_state")
        logits = add(matmul(state, p["w_out"]), p["b_out"])
        return logits.reshape((self.config.num_classes,)) if squeeze else logits


class TransformerModel(Model):
    """Pre-norm encoder blocks over embeddings + sinusoidal positions.

    Each block: x += attn(ln(x)); x += ffn(ln(x)) with a x4 feed-forward
    expansion; a final layer norm precedes masked mean pooling and the output
    layer. Parameter count:
    V*E + K*(4*(E*E + E) + E*F + F + F*E + E + 4*E) + 2*E + (E*C + C) with F = 4*E.
    """

    def _build(self, bank: _ParamBank) -> None:
        cfg = self.config
        e = cfg.embed_dim
        f = 4 * e
        bank.uniform("embedding", (cfg.vocab_size, e), fan_in=1)
        self.blocks = []
        for k in range(cfg.num_layers):
            pre = f"block{k}"
            bank.constant(f"{pre}.ln1_g", (e,), 1.0)
            bank.constant(f"{pre}.ln1_b", (e,), 0.0)
            attn = AttentionParams(
                w_q=bank.uniform(f"{pre}.w_q", (e, e), fan_in=e),
                b_q=bank.uniform(f"{pre}.b_q", (e,), fan_in=e),
                w_k=bank.uniform(f"{pre}.w_k", (e, e), fan_in=e),
                b_k=bank.uniform(f"{pre}.b_k", (e,), fan_in=e),
                w_v=bank.uniform(f"{pre}.w_v", (e, e), fan_in=e),
                b_v=bank.uniform(f"{pre}.b_v", (e,), fan_in=e),
                w_o=bank.uniform(f"{pre}.w_o", (e, e), fan_in=e),
                b_o=bank.uniform(f"{pre}.b_o", (e,), fan_in=e),
            )
            bank.constant(f"{pre}.ln2_g", (e,), 1.0)
            bank.constant(f"{pre}.ln2_b", (e,), 0.0)
            bank.uniform(f"{pre}.w_f1", (e, f), fan_in=e)
            bank.uniform(f"{pre}.b_f1", (f,), fan_in=e)
            bank.uniform(f"{pre}.w_f2", (f, e), fan_in=f)
            bank.uniform(f"{pre}.b_f2", (e,), fan_in=f)
            self.blocks.append(attn)
        bank.constant("final_ln_g", (e,), 1.0)
        bank.constant("final_ln_b", (e,), 0.0)
        bank.uniform("w_out", (e, cfg.num_classes), fan_in=e)
        bank.uniform("b_out", (cfg.num_classes,), fan_in=e)

    def maskable_layers(self) -> list[MaskableLayerHandle]:
        f = 4 * self.config.embed_dim
        handles = [MaskableLayerHandle(f"block{k}_ffn", f) for k in range(self.config.num_layers)]
        handles.append(MaskableLayerHandle("pooled", self.config.embed_dim))
        return handles

    def hat_gradient_bindings(self) -> list[HatBinding]:
        bindings = []
        for k in range(self.config.num_layers):
            handle = f"block{k}_ffn"
            bindings.append(HatBinding(f"block{k}.w_f1", out_handle=handle, out_axis=1))
            bindings.append(HatBinding(f"block{k}.b_f1", out_handle=handle, out_axis=0))
            bindings.append(HatBinding(f"block{k}.w_f2", in_handle=handle, in_axis=0))
        bindings.append(HatBinding("final_ln_g", out_handle="pooled", out_axis=0))
        bindings.append(HatBinding("final_ln_b", out_handle="pooled", out_axis=0))
        return bindings

    def forward(self, token_ids, attention_mask, gates=None, train: bool = False,
                dropout_rng=None) -> Tensor:
        ids, mask, squeeze = _prepare_inputs(token_ids, attention_mask)
        cfg = self.config
        p = self.params
        positions = sinusoidal_positions(ids.shape[1], cfg.embed_dim)
        x = add(embedding_lookup(p["embedding"], ids), Tensor(positions))
        for k, attn in enumerate(self.blocks):
            pre = f"block{k}"
            normed = layer_norm(x, p[f"{pre}.ln1_g"], p[f"{pre}.ln1_b"])
            att = self_attention(normed, mask, cfg.num_heads, attn)
            att = dropout(att, cfg.dropout_p, train, dropout_rng)
            x = add(x, att)
            normed = layer_norm(x, p[f"{pre}.ln2_g"], p[f"{pre}.ln2_b"])
            ffn_hidden = relu(add(matmul(normed, p[f"{pre}.w_f1"]), p[f"{pre}.b_f1"]))
            ffn_hidden = self._maybe_gate(ffn_hidden, gates, f"{pre}_ffn")
            ffn_out = add(matmul(ffn_hidden, p[f"{pre}.w_f2"]), p[f"{pre}.b_f2"])
            ffn_out = dropout(ffn_out, cfg.dropout_p, train, dropout_rng)
            x = add(x, ffn_out)
        x = layer_norm(x, p["final_ln_g"], p["final_ln_b"])
        pooled = masked_mean_pool(x, mask)
        pooled = self._maybe_gate(pooled, gates, "pooled")
        logits = add(matmul(pooled, p["w_out"]), p["b_out"])
        return logits.reshape((cfg.num_classes,)) if squeeze else logits


_MODEL_CLASSES = {"ANN": AnnModel, "GRU": GruModel, "TRANSFORMER": TransformerModel}


def build_model(config: ModelConfig, seed: int) -> Model:
    """Instantiate a backbone with seed-deterministic parameters."""
    return _MODEL_CLASSES[config.architecture](config, seed)


def save_checkpoint(model: Model, path) -> None:
    """Write parameters as an .npz archive of name -> row-major float64 array."""
    np.savez(path, **model.state_dict())


def load_checkpoint(model: Model, path) -> None:
    with np.load(path) as archive:
        model.load_state_dict({name: archive[name] for name in archive.files})
