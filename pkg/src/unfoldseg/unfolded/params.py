"""Learnable parameters of the unfolded network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..cos_model import SolverConfig
from ..errors import InvalidArgumentError
from ..synth import SplitMix64

# positive scalars are stored pre-softplus
POSITIVE_SCALARS = ("alpha", "mu", "lambda", "lipschitz")


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = float(y)
    if y <= 0:
        raise InvalidArgumentError("softplus_inv needs a positive value")
    return y + np.log(-np.expm1(-y))


def layout(stages, in_channels, n_features, hidden=6, unet_width=4):
    """Ordered ``name -> shape`` map of every parameter."""
    shapes = {}
    h, g, c = hidden, unet_width, in_channels
    for k in range(1, stages + 1):
        p = f"s{k}."
        for name in POSITIVE_SCALARS:
            shapes[p + name] = ()
        shapes[p + "grad_slope"] = ()
        convs = {
            "sofs.small1": (h, n_features, 3, 3),
            "sofs.small2": (h, h, 3, 3),
            "sofs.large1": (h, n_features, 1, 11),
            "sofs.large2": (h, h, 11, 1),
            "sofs.fuse": (2, h, 3, 3),
            "robe.enc1": (g, c + 1, 3, 3),
            "robe.enc2": (g, g, 3, 3),
            "robe.enc3": (g, g, 3, 3),
            "robe.dec2": (g, g, 3, 3),
            "robe.dec1": (g, g, 3, 3),
            "robe.head_b": (c, g, 3, 3),
            "robe.head_c": (c, g, 3, 3),
        }
        for name, shape in convs.items():
            shapes[p + name + ".w"] = shape
            shapes[p + name + ".b"] = (1, shape[0], 1, 1)
        shapes[p + "sofs.skip"] = ()
    return shapes


@dataclass
class ParamSet:
    stages: int
    in_channels: int
    n_features: int
    values: dict = field(default_factory=dict)
    eps_l1: float = 1e-3
    passthrough: bool = False
    hidden: int = 6
    unet_width: int = 4

    def __post_init__(self):
        expected = layout(self.stages, self.in_channels, self.n_features, self.hidden, self.unet_width)
        if set(expected) != set(self.values):
            missing = sorted(set(expected) - set(self.values))
            extra = sorted(set(self.values) - set(expected))
            raise InvalidArgumentError(f"parameter set mismatch: missing {missing[:3]}, extra {extra[:3]}")
        for name, shape in expected.items():
            v = np.asarray(self.values[name], dtype=np.float64)
            if v.shape != shape:
                raise InvalidArgumentError(f"{name}: expected shape {shape}, got {v.shape}")
            self.values[name] = v
        # keep layout order so iteration (and checkpoints) are deterministic
        self.values = {name: self.values[name] for name in expected}

    @property
    def count(self):
        return int(sum(v.size for v in self.values.values()))

    def stage(self, k):
        p = f"s{k}."
        return {name[len(p):]: v for name, v in self.values.items() if name.startswith(p)}

    def effective_scalars(self, k):
        """Positive (alpha, mu, lambda, lipschitz) and the grad-S slope for stage ``k``."""
        s = self.stage(k)
        out = {name: float(softplus(s[name])) for name in POSITIVE_SCALARS}
        out["grad_slope"] = float(s["grad_slope"])
        return out

    def copy(self):
        return ParamSet(
            self.stages, self.in_channels, self.n_features,
            {n: v.copy() for n, v in self.values.items()},
            self.eps_l1, self.passthrough, self.hidden, self.unet_width,
        )


def init_params(stages, in_channels=1, n_features=None, seed=0, solver=None,
                passthrough=False, hidden=6, unet_width=4, skip_gain=4.0):
    """Random kernels (scaled normal, zero bias) and scalars at the solver defaults.

    ``passthrough=True`` gives the refiner-free network whose stages replay the
    model-based solver.
    """
    from .features import feature_count

    if stages < 1:
        raise InvalidArgumentError("stages must be >= 1")
    solver = solver or SolverConfig()
    n_features = feature_count(in_channels) if n_features is None else n_features
    shapes = layout(stages, in_channels, n_features, hidden, unet_width)
    rng = SplitMix64(seed, 17)
    values = {}
    defaults = {"alpha": solver.alpha, "mu": solver.mu, "lambda": solver.lam, "lipschitz": solver.lipschitz}
    for name, shape in shapes.items():
        leaf = name.split(".", 1)[1]
        if leaf in defaults:
            if defaults[leaf] <= 0:
                raise InvalidArgumentError(f"{leaf} default must be > 0 for the softplus parameterisation")
            values[name] = np.array(softplus_inv(defaults[leaf]))
        elif leaf == "grad_slope":
            values[name] = np.array(1.0)
        elif leaf == "sofs.skip":
            values[name] = np.array(float(skip_gain))
        elif name.endswith(".b"):
            values[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            gain = 0.1 if ".head_" in name else 1.0
            values[name] = gain * rng.normal(int(np.prod(shape))).reshape(shape) / np.sqrt(fan_in)
    return ParamSet(stages, in_channels, n_features, values, eps_l1=solver.eps_l1,
                    passthrough=passthrough, hidden=hidden, unet_width=unet_width)
