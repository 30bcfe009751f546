"""Frozen transformer encoder standing in for a pretrained speech model.

Pre-norm layers (LN -> MHSA -> residual; LN -> FFN -> residual). The model
exposes every intermediate hidden state so a trainable softmax-weighted sum
can combine them for the downstream head. PEFT modules hook into the layer
computation through the ``methods_for_layer`` callback; the backbone itself
never trains unless explicitly unfrozen for the fine-tune baseline.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .serialize import load_checkpoint, save_checkpoint

INIT_STD = 0.02


@dataclass(frozen=True)
class BackboneConfig:
    n_layers: int = 4
    d_model: int = 32
    n_heads: int = 4
    d_ff: int | None = None
    input_dim: int = 16
    seed: int = 0
    # Whether the weighted-sum head also sees the pre-layer input state
    # (n_layers + 1 weights) or transformer layer outputs only (n_layers).
    weighted_sum_includes_input: bool = True

    def __post_init__(self):
        if min(self.n_layers, self.d_model, self.n_heads, self.input_dim) < 1:
            raise ConfigError("all backbone dimensions must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.d_ff is not None and self.d_ff < 1:
            raise ConfigError("d_ff must be >= 1")

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_model

    def to_json(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "input_dim": self.input_dim,
            "seed": self.seed,
            "weighted_sum_includes_input": self.weighted_sum_includes_input,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BackboneConfig":
        return cls(**obj)


@dataclass
class LayerStack:
    """Hidden states h(0)..h(L); h(0) is the projected input representation."""

    states: list[Tensor]

    def __len__(self) -> int:
        return len(self.states)


class BackboneModel:
    def __init__(self, config: BackboneConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self.frozen = True

    def freeze(self) -> None:
        self.frozen = True
        for p in self.params.values():
            p.requires_grad = False

    def unfreeze(self) -> None:
        self.frozen = False
        for p in self.params.values():
            p.requires_grad = True

    def trainable_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if v.requires_grad}

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        """Bitwise copy of all parameter values, for frozen-base audits."""
        return {k: v.data.copy() for k, v in self.params.items()}


def build_backbone(config: BackboneConfig) -> BackboneModel:
    """Deterministically initialize a frozen backbone from its seed."""
    rng = np.random.default_rng(config.seed)
    d, dff = config.d_model, config.ff_width

    def dense(shape):
        return Tensor(rng.normal(0.0, INIT_STD, size=shape))

    params: dict[str, Tensor] = {}
    params["input_proj.w"] = dense((config.input_dim, d))
    params["input_proj.b"] = ad.zeros(d)
    for li in range(config.n_layers):
        pre = f"layer{li}."
        for name in ("w_q", "w_k", "w_v", "w_o"):
            params[pre + f"attn.{name}"] = dense((d, d))
            params[pre + f"attn.b_{name[2:]}"] = ad.zeros(d)
        params[pre + "ln1.scale"] = Tensor(np.ones(d))
        params[pre + "ln1.shift"] = ad.zeros(d)
        params[pre + "ffn.w1"] = dense((d, dff))
        params[pre + "ffn.b1"] = ad.zeros(dff)
        params[pre + "ffn.w2"] = dense((dff, d))
        params[pre + "ffn.b2"] = ad.zeros(d)
        params[pre + "ln2.scale"] = Tensor(np.ones(d))
        params[pre + "ln2.shift"] = ad.zeros(d)
    model = BackboneModel(config, params)
    model.freeze()
    return model


def _project(x: Tensor, w: Tensor, b: Tensor, low_rank_updates) -> Tensor:
    out = ad.add_bias(ad.matmul(x, w), b)
    for a, bb, scaling in low_rank_updates:
        out = ad.add(out, ad.scale(ad.matmul(ad.matmul(x, a), bb), scaling))
    return out


def layer_forward(model: BackboneModel, li: int, h: Tensor, methods=()) -> Tensor:
    """One pre-norm transformer layer with optional PEFT attachments.

    LoRA pairs patch the attention projections they target. Bottleneck
    adapters act on the FFN sublayer: the sequential placement transforms
    the FFN output, the parallel placement is computed from the FFN input;
    all deltas add into the sublayer output before the residual.
    """
    p = model.params
    cfg = model.config
    pre = f"layer{li}."
    d, n_heads = cfg.d_model, cfg.n_heads
    dh = d // n_heads

    lora = [m for m in methods if m.kind == "lora"]
    seq = [m for m in methods if m.kind == "sequential"]
    par = [m for m in methods if m.kind == "parallel"]

    a_in = ad.layer_norm(h, p[pre + "ln1.scale"], p[pre + "ln1.shift"])
    proj = {}
    for name in ("w_q", "w_k", "w_v"):
        updates = [m.update_for(name) for m in lora if m.targets_projection(name)]
        proj[name] = _project(a_in, p[pre + f"attn.{name}"], p[pre + f"attn.b_{name[2:]}"], updates)

    ctx_heads = []
    inv_sqrt = 1.0 / math.sqrt(dh)
    for hi in range(n_heads):
        lo, hi_col = hi * dh, (hi + 1) * dh
        qh = ad.slice_cols(proj["w_q"], lo, hi_col)
        kh = ad.slice_cols(proj["w_k"], lo, hi_col)
        vh = ad.slice_cols(proj["w_v"], lo, hi_col)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), inv_sqrt)
        ctx_heads.append(ad.matmul(ad.softmax(scores, axis=-1), vh))
    ctx = ctx_heads[0] if len(ctx_heads) == 1 else ad.concat_cols(ctx_heads)
    attn_out = ad.add_bias(ad.matmul(ctx, p[pre + "attn.w_o"]), p[pre + "attn.b_o"])
    h = ad.add(h, attn_out)

    f_in = ad.layer_norm(h, p[pre + "ln2.scale"], p[pre + "ln2.shift"])
    hidden = ad.gelu(ad.add_bias(ad.matmul(f_in, p[pre + "ffn.w1"]), p[pre + "ffn.b1"]))
    ffn_out = ad.add_bias(ad.matmul(hidden, p[pre + "ffn.w2"]), p[pre + "ffn.b2"])

    sublayer = ffn_out
    for m in seq:
        sublayer = ad.add(sublayer, m.delta(ffn_out))
    for m in par:
        sublayer = ad.add(sublayer, m.delta(f_in))
    return ad.add(h, sublayer)


def forward_all_layers(model: BackboneModel, x: Tensor, methods_for_layer=None) -> LayerStack:
    """Run the full stack and return every hidden state h(0)..h(L)."""
    cfg = model.config
    if x.data.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise DimensionError(
            f"input has shape {x.shape}, expected [T, {cfg.input_dim}]"
        )
    h = ad.add_bias(ad.matmul(x, model.params["input_proj.w"]), model.params["input_proj.b"])
    states = [h]
    for li in range(cfg.n_layers):
        methods = methods_for_layer(li) if methods_for_layer is not None else ()
        h = layer_forward(model, li, h, methods)
        states.append(h)
    return LayerStack(states)


@dataclass
class WeightedSumHead:
    """Trainable softmax combination over layer states plus a linear head."""

    layer_weights: Tensor
    w: Tensor
    b: Tensor
    task_kind: str  # "seq_classification" | "ctc_tagging"
    includes_input: bool = True

    def trainable_params(self, prefix: str = "head.") -> dict[str, Tensor]:
        return {
            prefix + "layer_weights": self.layer_weights,
            prefix + "w": self.w,
            prefix + "b": self.b,
        }


def build_head(config: BackboneConfig, task_kind: str, n_outputs: int, rng) -> WeightedSumHead:
    n_states = config.n_layers + (1 if config.weighted_sum_includes_input else 0)
    return WeightedSumHead(
        layer_weights=ad.zeros(n_states, requires_grad=True),
        w=Tensor(rng.normal(0.0, INIT_STD, size=(config.d_model, n_outputs)), requires_grad=True),
        b=ad.zeros(n_outputs, requires_grad=True),
        task_kind=task_kind,
        includes_input=config.weighted_sum_includes_input,
    )


def weighted_sum(stack: LayerStack, head: WeightedSumHead) -> Tensor:
    """Softmax(layer_weights)-weighted combination of the hidden states."""
    states = stack.states if head.includes_input else stack.states[1:]
    if len(states) != head.layer_weights.shape[0]:
        raise DimensionError(
            f"{len(states)} states vs {head.layer_weights.shape[0]} layer weights"
        )
    coeffs = ad.softmax(head.layer_weights, axis=-1)
    return ad.weighted_combine(states, coeffs)


def head_output(stack: LayerStack, head: WeightedSumHead) -> Tensor:
    """Task output: classification logits [1, C] or per-frame log-probs [T, C]."""
    combined = weighted_sum(stack, head)
    if head.task_kind == "seq_classification":
        pooled = ad.mean_rows(combined)
        return ad.add_bias(ad.matmul(pooled, head.w), head.b)
    if head.task_kind == "ctc_tagging":
        logits = ad.add_bias(ad.matmul(combined, head.w), head.b)
        return ad.log_softmax(logits, axis=-1)
    raise ConfigError(f"unknown task kind {head.task_kind!r}")


def weighted_sum_param_count(config: BackboneConfig) -> int:
    """Trainable layer-combination weights, counted per configuration."""
    return config.n_layers + (1 if config.weighted_sum_includes_input else 0)


def save_backbone(path, model: BackboneModel, extra_arrays: dict | None = None, extra_meta: dict | None = None) -> None:
    arrays = {f"backbone.{k}": v.data for k, v in model.params.items()}
    if extra_arrays:
        arrays.update({k: v for k, v in extra_arrays.items()})
    meta = {"backbone_config": model.config.to_json()}
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, meta, arrays)


def load_backbone(path) -> tuple[BackboneModel, dict, dict[str, np.ndarray]]:
    """Rebuild a backbone from a checkpoint; returns (model, meta, other arrays)."""
    meta, arrays = load_checkpoint(path)
    config = BackboneConfig.from_json(meta["backbone_config"])
    model = build_backbone(config)
    others: dict[str, np.ndarray] = {}
    for name, arr in arrays.items():
        if name.startswith("backbone."):
            key = name[len("backbone."):]
            if key not in model.params or model.params[key].shape != arr.shape:
                raise ConfigError(f"checkpoint array {name} does not match config")
            model.params[key].data = arr.copy()
        else:
            others[name] = arr
    model.freeze()
    return model, meta, others
