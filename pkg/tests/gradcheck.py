"""Finite-difference check of every registered parameter of the unfolded network."""

import numpy as np

from unfoldseg import tensor_core as tc
from unfoldseg.unfolded.network import forward
from unfoldseg.unfolded.train import loss_and_grads


def relative_error(a, b, floor=1e-10):
    scale = max(abs(a), abs(b))
    return 0.0 if scale < floor else abs(a - b) / scale


def check_all_parameters(params, c, gt, step=1e-6, seed=0):
    """Directional central differences, one random direction per parameter tensor.

    Returns ``{name: (analytic, numeric, rel_err)}``.
    """
    _, grads = loss_and_grads(params, c, gt)
    rng = np.random.default_rng(seed)
    out = {}
    for name, v in params.values.items():
        d = rng.standard_normal(v.shape)
        d /= np.sqrt(np.sum(d * d))

        def loss_at(x, name=name):
            vals = dict(params.values)
            vals[name] = x
            return float(tc.value(forward(c, params, gt=gt, values=vals).loss))

        numeric = (loss_at(v + step * d) - loss_at(v - step * d)) / (2 * step)
        analytic = float(np.sum(grads[name] * d))
        out[name] = (analytic, numeric, relative_error(analytic, numeric))
    return out
