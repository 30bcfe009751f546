"""PEFT methods and their attachment to backbone layers.

Three kinds: sequential and parallel bottleneck adapters on the FFN
sublayer, and low-rank (LoRA) updates on attention projections. Output
projections start at zero, so every freshly attached method leaves the
forward pass bit-identical to the frozen backbone.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import INIT_STD, BackboneConfig, BackboneModel, WeightedSumHead, build_head, forward_all_layers, head_output
from .errors import ConfigError, SpecError

_PROJECTIONS = ("w_q", "w_k", "w_v", "w_o")


@dataclass(frozen=True)
class AdapterConfig:
    bottleneck_dim: int = 32
    placement: str = "sequential"

    def __post_init__(self):
        if self.bottleneck_dim < 1:
            raise ConfigError("adapter bottleneck_dim must be >= 1")
        if self.placement not in ("sequential", "parallel"):
            raise ConfigError(f"unknown adapter placement {self.placement!r}")

    @property
    def kind(self) -> str:
        return self.placement


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 8
    scaling: float = 2.0
    targets: tuple[str, ...] = ("w_q", "w_v")

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError("lora rank must be >= 1")
        if self.scaling <= 0:
            raise ConfigError("lora scaling must be positive")
        if not self.targets or any(t not in _PROJECTIONS for t in self.targets):
            raise ConfigError(f"lora targets must be a non-empty subset of {_PROJECTIONS}")

    @property
    def kind(self) -> str:
        return "lora"


MethodConfig = AdapterConfig | LoraConfig


def _config_to_json(c: MethodConfig) -> dict:
    if isinstance(c, AdapterConfig):
        return {"kind": c.placement, "bottleneck_dim": c.bottleneck_dim}
    return {"kind": "lora", "rank": c.rank, "scaling": c.scaling, "targets": list(c.targets)}


def _config_from_json(obj: dict) -> MethodConfig:
    kind = obj["kind"]
    if kind in ("sequential", "parallel"):
        return AdapterConfig(bottleneck_dim=obj["bottleneck_dim"], placement=kind)
    if kind == "lora":
        return LoraConfig(rank=obj["rank"], scaling=obj.get("scaling", 2.0), targets=tuple(obj.get("targets", ("w_q", "w_v"))))
    raise ConfigError(f"unknown PEFT kind {kind!r}")


class PeftSpec:
    """Per-layer assignment of PEFT methods; layer i gets ``layers[i]``."""

    def __init__(self, layers: list[list[MethodConfig]]):
        self.layers = [list(descs) for descs in layers]
        for li, descs in enumerate(self.layers):
            kinds = [d.kind for d in descs]
            if len(set(kinds)) != len(kinds):
                raise SpecError(f"layer {li} lists the same PEFT kind twice")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @classmethod
    def empty(cls, n_layers: int) -> "PeftSpec":
        return cls([[] for _ in range(n_layers)])

    @classmethod
    def uniform(cls, config: MethodConfig, n_layers: int) -> "PeftSpec":
        return cls([[config] for _ in range(n_layers)])

    @classmethod
    def hybrid(cls, n_layers: int, bottleneck_dim: int = 10, rank: int = 2, scaling: float = 2.0) -> "PeftSpec":
        """All three kinds in every layer, reduced dimensions."""
        descs = [
            AdapterConfig(bottleneck_dim, "sequential"),
            AdapterConfig(bottleneck_dim, "parallel"),
            LoraConfig(rank, scaling),
        ]
        return cls([list(descs) for _ in range(n_layers)])

    def to_json(self) -> list:
        return [[_config_to_json(d) for d in descs] for descs in self.layers]

    @classmethod
    def from_json(cls, obj: list) -> "PeftSpec":
        return cls([[_config_from_json(d) for d in descs] for descs in obj])


class BottleneckAdapter:
    """Down-project, GELU, up-project; the up-projection starts at zero."""

    def __init__(self, config: AdapterConfig, d_model: int, rng, name: str):
        if config.bottleneck_dim >= d_model:
            raise ConfigError(
                f"bottleneck {config.bottleneck_dim} must be < d_model {d_model}"
            )
        b = config.bottleneck_dim
        self.config = config
        self.kind = config.placement
        self.name = name
        self.w_down = Tensor(rng.normal(0.0, INIT_STD, size=(d_model, b)), requires_grad=True)
        self.b_down = ad.zeros(b, requires_grad=True)
        self.w_up = ad.zeros((b, d_model), requires_grad=True)
        self.b_up = ad.zeros(d_model, requires_grad=True)

    def delta(self, x: Tensor) -> Tensor:
        hidden = ad.gelu(ad.add_bias(ad.matmul(x, self.w_down), self.b_down))
        return ad.add_bias(ad.matmul(hidden, self.w_up), self.b_up)

    def forward(self, x: Tensor) -> Tensor:
        """Residual form: x plus the bottleneck transform of x."""
        return ad.add(x, self.delta(x))

    def trainable_params(self, prefix: str = "") -> dict[str, Tensor]:
        base = f"{prefix}{self.name}."
        return {
            base + "w_down": self.w_down,
            base + "b_down": self.b_down,
            base + "w_up": self.w_up,
            base + "b_up": self.b_up,
        }


class LoraPair:
    """Low-rank additive updates on the targeted attention projections."""

    def __init__(self, config: LoraConfig, d_model: int, rng, name: str):
        if config.rank >= d_model:
            raise ConfigError(f"lora rank {config.rank} must be < d_model {d_model}")
        self.config = config
        self.kind = "lora"
        self.name = name
        self.mats: dict[str, tuple[Tensor, Tensor]] = {}
        for target in config.targets:
            a = Tensor(rng.normal(0.0, INIT_STD, size=(d_model, config.rank)), requires_grad=True)
            bb = ad.zeros((config.rank, d_model), requires_grad=True)
            self.mats[target] = (a, bb)

    def targets_projection(self, proj_name: str) -> bool:
        return proj_name in self.mats

    def update_for(self, proj_name: str) -> tuple[Tensor, Tensor, float]:
        a, bb = self.mats[proj_name]
        return a, bb, self.config.scaling

    def trainable_params(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for target, (a, bb) in self.mats.items():
            out[f"{prefix}{self.name}.{target}.a"] = a
            out[f"{prefix}{self.name}.{target}.b"] = bb
        return out


def build_method(config: MethodConfig, d_model: int, rng, name: str):
    if isinstance(config, AdapterConfig):
        return BottleneckAdapter(config, d_model, rng, name)
    return LoraPair(config, d_model, rng, name)


def lora_forward(x: Tensor, w: Tensor, a: Tensor, b: Tensor, scaling: float = 2.0) -> Tensor:
    """x @ w plus the scaled low-rank update (x @ a) @ b."""
    return ad.add(ad.matmul(x, w), ad.scale(ad.matmul(ad.matmul(x, a), b), scaling))


class PeftModel:
    """A frozen backbone with trainable PEFT methods and a weighted-sum head."""

    def __init__(self, backbone: BackboneModel, spec: PeftSpec, methods: list[list], head: WeightedSumHead | None):
        self.backbone = backbone
        self.spec = spec
        self.methods = methods
        self.head = head

    @property
    def task_kind(self) -> str:
        return self.head.task_kind

    def methods_for_layer(self, li: int):
        return self.methods[li]

    def forward_stack(self, x: Tensor):
        return forward_all_layers(self.backbone, x, self.methods_for_layer)

    def output(self, frames: np.ndarray) -> Tensor:
        return head_output(self.forward_stack(ad.tensor(frames)), self.head)

    def trainable_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.backbone.trainable_params())  # empty unless unfrozen
        for layer_methods in self.methods:
            for m in layer_methods:
                out.update(m.trainable_params(prefix="peft."))
        if self.head is not None:
            out.update(self.head.trainable_params())
        return out


def attach_peft(backbone: BackboneModel, spec: PeftSpec, rng, head: WeightedSumHead | None = None) -> PeftModel:
    """Instantiate the spec's methods layer by layer; the base stays frozen.

    Parameter tensors are drawn from ``rng`` in layer order then method
    order, which keeps initialization reproducible across attachment paths.
    """
    if spec.n_layers != backbone.config.n_layers:
        raise SpecError(
            f"spec covers {spec.n_layers} layers, model has {backbone.config.n_layers}"
        )
    methods = []
    for li, descs in enumerate(spec.layers):
        layer_methods = []
        for desc in descs:
            name = f"layer{li}.{desc.kind}"
            layer_methods.append(build_method(desc, backbone.config.d_model, rng, name))
        methods.append(layer_methods)
    return PeftModel(backbone, spec, methods, head)


def build_peft_model(backbone: BackboneModel, spec: PeftSpec, task_kind: str, n_outputs: int, init_seed: int) -> PeftModel:
    """attach_peft plus a freshly initialized head, from one seed."""
    rng = np.random.default_rng(init_seed)
    model = attach_peft(backbone, spec, rng)
    model.head = build_head(backbone.config, task_kind, n_outputs, rng)
    return model


def _adapter_param_count(d_model: int, bottleneck: int) -> int:
    return 2 * d_model * bottleneck + bottleneck + d_model


def _lora_param_count(d_model: int, rank: int, n_targets: int) -> int:
    return 2 * d_model * rank * n_targets


def param_count(spec: PeftSpec, config: BackboneConfig) -> int:
    """Exact count of trainable upstream additions (adapters and LoRA only;
    weighted-sum layer weights and the downstream head are counted apart)."""
    total = 0
    for descs in spec.layers:
        for desc in descs:
            if isinstance(desc, AdapterConfig):
                total += _adapter_param_count(config.d_model, desc.bottleneck_dim)
            else:
                total += _lora_param_count(config.d_model, desc.rank, len(desc.targets))
    return total
