"""The three-component network: shared feature extractor, prediction head
and correction head, plus the two composed forwards.

F1 = prediction head on top of the extractor (softmax output).
F2 = correction head fed the weak label concatenated with the extracted
features (raw output; it regresses a signed correction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from torch import nn

from . import container
from .errors import SchemaError
from .seeding import derive_seed

COMPONENTS = ("phi0", "phi1", "phi2")


@dataclass(frozen=True)
class ArchConfig:
    """Desk-scale architecture: MLP backbone for flat features, a small
    2-conv CNN for image tensors. Head widths follow the published layout
    (three FC layers for prediction, two for correction), ReLU throughout."""

    num_classes: int
    input_shape: tuple[int, ...]
    feature_dim: int = 64
    backbone_widths: tuple[int, ...] = (64, 64)
    conv_channels: tuple[int, int] = (8, 16)
    phi1_widths: tuple[int, ...] = (128, 64)
    phi2_widths: tuple[int, ...] = (64,)
    direct_correction: bool = False

    @classmethod
    def for_dataset(cls, ds, **overrides) -> "ArchConfig":
        return cls(num_classes=ds.num_classes, input_shape=ds.feature_shape, **overrides)

    @property
    def correction_input_dim(self) -> int:
        return self.feature_dim if self.direct_correction \
            else self.feature_dim + self.num_classes

    def to_meta(self) -> dict:
        meta = asdict(self)
        meta["input_shape"] = list(self.input_shape)
        for key in ("backbone_widths", "conv_channels", "phi1_widths", "phi2_widths"):
            meta[key] = list(meta[key])
        return meta

    @classmethod
    def from_meta(cls, meta: dict) -> "ArchConfig":
        kwargs = dict(meta)
        for key in ("input_shape", "backbone_widths", "conv_channels",
                    "phi1_widths", "phi2_widths"):
            kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class ModelTriple:
    """Exclusively owned by one training run; eval-mode forwards are pure."""

    phi0: nn.Module
    phi1: nn.Module
    phi2: nn.Module
    arch: ArchConfig
    init_seed: int

    def modules(self) -> dict[str, nn.Module]:
        return {"phi0": self.phi0, "phi1": self.phi1, "phi2": self.phi2}


def _mlp(widths: list[int], final_relu: bool) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(widths) - 1):
        layers.append(nn.Linear(widths[i], widths[i + 1]))
        if i < len(widths) - 2 or final_relu:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class ConvBackbone(nn.Module):
    """Two conv layers with pooling, projected to the feature width."""

    def __init__(self, input_shape, channels, feature_dim):
        super().__init__()
        c, h, w = input_shape
        self.conv = nn.Sequential(
            nn.Conv2d(c, channels[0], 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(channels[0], channels[1], 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
        )
        flat = channels[1] * (h // 4) * (w // 4)
        self.project = nn.Sequential(nn.Flatten(), nn.Linear(flat, feature_dim), nn.ReLU())

    def forward(self, x):
        return self.project(self.conv(x))


def build_model(arch: ArchConfig, seed: int) -> ModelTriple:
    """Construct the triple with fan-in-scaled uniform init, deterministic
    in seed."""
    if len(arch.input_shape) == 1:
        phi0 = _mlp([arch.input_shape[0], *arch.backbone_widths, arch.feature_dim],
                    final_relu=True)
    elif len(arch.input_shape) == 3:
        phi0 = ConvBackbone(arch.input_shape, arch.conv_channels, arch.feature_dim)
    else:
        raise SchemaError(f"unsupported input shape {arch.input_shape}")
    phi1 = _mlp([arch.feature_dim, *arch.phi1_widths, arch.num_classes], final_relu=False)
    phi2 = _mlp([arch.correction_input_dim, *arch.phi2_widths, arch.num_classes],
                final_relu=False)
    model = ModelTriple(phi0, phi1, phi2, arch, init_seed=seed)
    gen = torch.Generator()
    gen.manual_seed(derive_seed(seed, "init"))
    for name in COMPONENTS:
        _init_params(model.modules()[name], gen)
    for module in model.modules().values():
        module.eval()
    return model


def _init_params(module: nn.Module, gen: torch.Generator) -> None:
    for layer in module.modules():
        if isinstance(layer, (nn.Linear, nn.Conv2d)):
            fan_in = layer.weight.shape[1]
            if isinstance(layer, nn.Conv2d):
                fan_in *= layer.kernel_size[0] * layer.kernel_size[1]
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                layer.weight.uniform_(-bound, bound, generator=gen)
                layer.bias.uniform_(-bound, bound, generator=gen)


def reinitialize(m: ModelTriple, seed: int) -> ModelTriple:
    """Fresh parameters for all three components; deterministic in seed."""
    return build_model(m.arch, seed)


def clone_model(m: ModelTriple) -> ModelTriple:
    fresh = build_model(m.arch, m.init_seed)
    load_state_arrays(fresh, model_state_arrays(m))
    return fresh


def to_tensor(X) -> torch.Tensor:
    if isinstance(X, torch.Tensor):
        return X
    return torch.as_tensor(np.ascontiguousarray(X), dtype=torch.float32)


def f1_forward(m: ModelTriple, x) -> torch.Tensor:
    """Softmax prediction of the extractor + prediction head."""
    logits = m.phi1(m.phi0(to_tensor(x)))
    return torch.softmax(logits, dim=-1)


def f1_logits(m: ModelTriple, x) -> torch.Tensor:
    return m.phi1(m.phi0(to_tensor(x)))


def phi0_features(m: ModelTriple, x) -> torch.Tensor:
    return m.phi0(to_tensor(x))


def f2_forward(m: ModelTriple, x, yw=None) -> torch.Tensor:
    """Raw correction output. The weak label is concatenated in front of
    the extracted features unless the arch is the direct variant, which
    consumes features only."""
    feats = m.phi0(to_tensor(x))
    if m.arch.direct_correction:
        return m.phi2(feats)
    if yw is None:
        raise SchemaError("correction head needs the weak label vector")
    return m.phi2(torch.cat([to_tensor(yw), feats], dim=-1))


def predict_proba(m: ModelTriple, X, batch_size: int = 1024) -> np.ndarray:
    """Batched no-grad F1 forward returning numpy probabilities."""
    X = to_tensor(X)
    outs = []
    with torch.no_grad():
        for start in range(0, len(X), batch_size):
            outs.append(f1_forward(m, X[start:start + batch_size]))
    return torch.cat(outs).numpy()


def set_trainable(m: ModelTriple, trainable: tuple[str, ...]) -> list[torch.nn.Parameter]:
    """Flip requires_grad per component; returns the trainable parameters.
    Frozen components must come out of the stage bitwise unchanged."""
    unknown = set(trainable) - set(COMPONENTS)
    if unknown:
        raise SchemaError(f"unknown components {sorted(unknown)}")
    params = []
    for name, module in m.modules().items():
        flag = name in trainable
        for p in module.parameters():
            p.requires_grad_(flag)
        if flag:
            params.extend(module.parameters())
    return params


def model_state_arrays(m: ModelTriple) -> dict[str, np.ndarray]:
    arrays = {}
    for comp, module in m.modules().items():
        for pname, p in module.state_dict().items():
            arrays[f"{comp}.{pname}"] = p.detach().numpy().copy()
    return arrays


def load_state_arrays(m: ModelTriple, arrays: dict[str, np.ndarray]) -> None:
    for comp, module in m.modules().items():
        state = {}
        for pname in module.state_dict():
            key = f"{comp}.{pname}"
            if key not in arrays:
                raise SchemaError(f"checkpoint missing parameter {key!r}")
            state[pname] = torch.as_tensor(arrays[key])
        module.load_state_dict(state)


def component_snapshot(m: ModelTriple, component: str) -> dict[str, np.ndarray]:
    """Bitwise copy of one component's parameters, for freezing checks."""
    module = m.modules()[component]
    return {k: v.detach().numpy().copy() for k, v in module.state_dict().items()}


def save_checkpoint(m: ModelTriple, path) -> None:
    container.write(path, "weights", model_state_arrays(m),
                    meta={"arch": m.arch.to_meta(), "init_seed": m.init_seed})


def load_checkpoint(path) -> ModelTriple:
    kind, arrays, meta = container.read(path)
    if kind != "weights":
        raise SchemaError(f"expected a weights container, found kind={kind!r}")
    model = build_model(ArchConfig.from_meta(meta["arch"]), int(meta.get("init_seed", 0)))
    load_state_arrays(model, arrays)
    return model
