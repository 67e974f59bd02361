"""Backbone loading: frozen published vision models as feature extractors.

Model references
----------------
``torchvision:<name>``             torchvision architecture with its
                                   published default pretrained weights
                                   and their published preprocessing.
``torchvision:<name>:untrained``   the same published architecture with
                                   seeded random weights and the standard
                                   224-crop ImageNet preprocessing; useful
                                   where pretrained weights cannot be
                                   downloaded (air-gapped environments).

The classification head is replaced with an identity so the model emits
its pooled penultimate representation. Models run in inference mode and
are never updated.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
from torch import nn
from torchvision import models as tv_models
from torchvision import transforms

from .errors import ModelError

_HEAD_ATTRS = ("fc", "classifier", "heads", "head")

_UNTRAINED_SEED = 0  # fixed so repeat extractions are bit-reproducible

_DEFAULT_TRANSFORM = transforms.Compose(
    [
        transforms.Resize(256),
        transforms.CenterCrop(224),
        transforms.ToTensor(),
        transforms.Normalize(
            mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]
        ),
    ]
)


@dataclass
class Backbone:
    model_ref: str
    module: nn.Module
    preprocess: object  # callable: PIL image -> CHW float tensor
    device: torch.device

    def preprocessing_description(self) -> str:
        return repr(self.preprocess)

    def preprocessing_hash(self) -> str:
        return hashlib.sha256(self.preprocessing_description().encode()).hexdigest()

    @torch.inference_mode()
    def embed(self, batch: torch.Tensor) -> torch.Tensor:
        out = self.module(batch.to(self.device))
        if out.ndim != 2:
            out = torch.flatten(out, start_dim=1)
        return out.cpu()


def _strip_head(module: nn.Module):
    for attr in _HEAD_ATTRS:
        if hasattr(module, attr) and isinstance(getattr(module, attr), nn.Module):
            setattr(module, attr, nn.Identity())
            return
    raise ModelError(
        "could not locate a classification head to strip "
        f"(looked for attributes {_HEAD_ATTRS})"
    )


def load_backbone(model_ref: str, device: str = "cpu") -> Backbone:
    parts = model_ref.split(":")
    if parts[0] != "torchvision" or len(parts) not in (2, 3):
        raise ModelError(
            f"unsupported model_ref {model_ref!r}: expected torchvision:<name>"
            " or torchvision:<name>:untrained"
        )
    name = parts[1]
    untrained = len(parts) == 3 and parts[2] == "untrained"
    if len(parts) == 3 and not untrained:
        raise ModelError(f"unknown model_ref suffix {parts[2]!r}")

    try:
        dev = torch.device(device)
        if untrained:
            torch.manual_seed(_UNTRAINED_SEED)
            module = tv_models.get_model(name, weights=None)
            preprocess = _DEFAULT_TRANSFORM
        else:
            weights = tv_models.get_model_weights(name).DEFAULT
            module = tv_models.get_model(name, weights=weights)
            preprocess = weights.transforms()
    except ModelError:
        raise
    except Exception as exc:
        raise ModelError(f"failed to load {model_ref!r}: {exc}") from exc

    _strip_head(module)
    module.eval()
    module.to(dev)
    for p in module.parameters():
        p.requires_grad_(False)
    return Backbone(model_ref=model_ref, module=module, preprocess=preprocess, device=dev)
