"""Deterministic ResNet-152 backbone.

The default weight set is generated, never downloaded: convolution and
linear tensors are He-scaled draws from one fixed seed walked over the
sorted state-dict keys, BatchNorm layers are identity affine with frozen
unit running statistics. The identifier names that exact procedure, so the
snapshot is pinned and reproduces bit-for-bit on machines with no model-zoo
access. A locally stored ``.pt`` state dict can be supplied instead by
passing its path as the weights argument.
"""

import math
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torchvision.models import resnet152

SEEDED_WEIGHTS = "resnet152-seeded-v1"
_SEED = 20480
FEATURE_DIM = 2048

# channel statistics the crops are normalized with before inference
CHANNEL_MEAN = (0.485, 0.456, 0.406)
CHANNEL_STD = (0.229, 0.224, 0.225)


class WeightsError(RuntimeError):
    """The requested weight set cannot be produced or loaded."""


def _seeded_fill(module: nn.Module, seed: int) -> None:
    rng = np.random.default_rng(seed)
    sd = module.state_dict()
    for key in sorted(sd):
        t = sd[key]
        if not t.dtype.is_floating_point:
            continue  # num_batches_tracked counters
        if t.ndim >= 2:
            fan_in = int(np.prod(t.shape[1:]))
            vals = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=tuple(t.shape))
            sd[key] = torch.from_numpy(vals.astype(np.float32))
        elif key.endswith("running_var") or key.endswith(".weight"):
            sd[key] = torch.ones_like(t)
        else:
            sd[key] = torch.zeros_like(t)
    module.load_state_dict(sd)


def load_backbone(weights: str = SEEDED_WEIGHTS, device: str = "cpu") -> nn.Module:
    """Build the feature extractor: ResNet-152 up to the pooled 2048 features.

    `weights` is either the pinned identifier or a path to a state dict.
    """
    net = resnet152(weights=None)
    if weights == SEEDED_WEIGHTS:
        _seeded_fill(net, _SEED)
    else:
        path = Path(weights)
        if not path.is_file():
            raise WeightsError(
                f"unknown weight set {weights!r} (not {SEEDED_WEIGHTS!r} "
                f"and no such file)"
            )
        try:
            state = torch.load(path, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        except WeightsError:
            raise
        except Exception as exc:
            raise WeightsError(f"{path}: cannot load state dict: {exc}") from exc
    net.fc = nn.Identity()  # expose the global-average-pooled features
    net.eval()
    return net.to(device)
