"""Model loading, preprocessing, and spatial-layer resolution.

"last-layer" means the final module whose output is still spatial
([B, C, H, W]) before flattening; it is found by shape inspection on a
dummy forward pass, which works across architectures without hardcoding
layer names.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn
from torchvision import models as tv_models


class ExportError(RuntimeError):
    pass


class IdentityStub(nn.Module):
    """Passes the preprocessed image straight through as the feature cuboid."""

    def __init__(self):
        super().__init__()
        self.identity = nn.Identity()

    def forward(self, x):
        return self.identity(x)


class _StubPreprocess:
    """to-tensor only: float32 RGB in [0, 1], no resize or normalization."""

    def __call__(self, image):
        arr = np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0
        return torch.from_numpy(arr).permute(2, 0, 1)

    def describe(self) -> dict:
        return {"kind": "to-float", "scale": "1/255", "resize": None,
                "normalize": None}


class _WeightsPreprocess:
    def __init__(self, transform, description: str):
        self._transform = transform
        self._description = description

    def __call__(self, image):
        return self._transform(image.convert("RGB"))

    def describe(self) -> dict:
        return {"kind": "torchvision-weights", "detail": self._description}


def load_model(name: str, pretrained: bool = True):
    """Returns (module in eval mode, preprocess callable with .describe())."""
    if name == "stub-identity":
        model = IdentityStub()
        preprocess = _StubPreprocess()
    else:
        try:
            if pretrained:
                weights = tv_models.get_model_weights(name).DEFAULT
                model = tv_models.get_model(name, weights=weights)
                preprocess = _WeightsPreprocess(
                    weights.transforms(), repr(weights.transforms())
                )
            else:
                model = tv_models.get_model(name, weights=None)
                preprocess = _WeightsPreprocess(
                    tv_models.get_model_weights(name).DEFAULT.transforms(),
                    "default transforms, untrained weights",
                )
        except ValueError as exc:
            raise ExportError(f"unknown model {name!r}: {exc}") from exc
    model.eval()
    return model, preprocess


def spatial_layers(model: nn.Module, example: torch.Tensor) -> list[str]:
    """Names of leaf modules with genuinely spatial outputs, in order.

    "Spatial" means a 4-D [B, C, H, W] output with H * W > 1; that keeps
    global average pools (1x1 output) out of the candidate list.
    """
    order: list[str] = []
    hooks = []

    def make_hook(name):
        def hook(_module, _inputs, output):
            if (
                isinstance(output, torch.Tensor)
                and output.ndim == 4
                and output.shape[2] * output.shape[3] > 1
            ):
                order.append(name)

        return hook

    for name, module in model.named_modules():
        if name and len(list(module.children())) == 0:
            hooks.append(module.register_forward_hook(make_hook(name)))
    if not list(model.named_modules())[1:]:  # single unnamed module
        hooks.append(model.register_forward_hook(make_hook("")))
    try:
        with torch.no_grad():
            model(example)
    finally:
        for h in hooks:
            h.remove()
    return order


def resolve_layer(model: nn.Module, layer: str, example: torch.Tensor) -> str:
    available = spatial_layers(model, example)
    if not available:
        raise ExportError("model produces no spatial activations")
    if layer == "last-layer":
        return available[-1]
    if layer in available:
        return layer
    raise ExportError(
        f"layer {layer!r} not found; spatial layers: {', '.join(available)}"
    )


def record_activation(
    model: nn.Module, layer_name: str, batch: torch.Tensor
) -> np.ndarray:
    """Run one image through the model; return its [H, W, D] activations."""
    captured: list[torch.Tensor] = []

    target = dict(model.named_modules())[layer_name] if layer_name else model

    def hook(_module, _inputs, output):
        captured.append(output.detach())

    handle = target.register_forward_hook(hook)
    try:
        with torch.no_grad():
            model(batch)
    finally:
        handle.remove()
    if not captured:
        raise ExportError(f"layer {layer_name!r} never fired")
    out = captured[-1][0]  # [C, H, W]
    return out.permute(1, 2, 0).contiguous().numpy().astype(np.float32)
