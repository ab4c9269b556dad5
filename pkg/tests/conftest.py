"""Shared fixtures and oracles: finite differences and a tiny hand-built net."""

import numpy as np
import pytest

from cgap.network import DynamicNetwork, LayerNode
from cgap.nn import ConvParams, FcParams


def finite_difference_check(loss_fn, pairs, rng, n_coords, h, rtol, atol):
    """Compare analytic gradients against central differences of loss_fn.

    pairs is a list of (array, analytic_gradient). loss_fn recomputes the
    scalar loss from the arrays' current contents. The criterion is the usual
    |a - fd| <= rtol * max(|a|, |fd|) + atol; the absolute term exists for
    coordinates whose gradient cancels to ~0, where central differences
    bottom out at the roundoff floor eps * |loss| / h.
    """
    checked = 0
    for arr, grad in pairs:
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        count = min(n_coords, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + h
            up = loss_fn()
            flat[c] = keep - h
            down = loss_fn()
            flat[c] = keep
            fd = (up - down) / (2.0 * h)
            a = float(gflat[c])
            scale = max(abs(a), abs(fd))
            assert abs(a - fd) <= rtol * scale + atol, (
                f"grad {a} vs fd {fd} at coord {c}: "
                f"|diff| {abs(a - fd):.3e} > {rtol} * {scale:.3e} + {atol}"
            )
            checked += 1
    return checked


def he_conv(rng, o, i, k, dtype=np.float32, stride=1, padding=0):
    w = (rng.standard_normal((o, i, k, k)) * np.sqrt(2.0 / (i * k * k))).astype(dtype)
    return ConvParams(w, np.zeros(o, dtype=dtype), stride=stride, padding=padding)


def he_fc(rng, o, i, dtype=np.float32):
    w = (rng.standard_normal((o, i)) * np.sqrt(2.0 / i)).astype(dtype)
    return FcParams(w, np.zeros(o, dtype=dtype))


def tiny_net(seed=0, classes=3, conv_widths=(4, 6), hidden=8, input_hw=12):
    """conv-relu-pool-conv-relu-flatten-fc-relu-fc on a 12x12 single-channel
    input; small enough for structural fuzzing and quick training."""
    rng = np.random.default_rng(seed)
    c1, c2 = conv_widths
    side = (input_hw - 3 + 1) // 2  # after first conv and pool
    side2 = side - 3 + 1  # after second conv
    layers = [
        LayerNode("conv", he_conv(rng, c1, 1, 3)),
        LayerNode("relu"),
        LayerNode("maxpool"),
        LayerNode("conv", he_conv(rng, c2, c1, 3)),
        LayerNode("relu"),
        LayerNode("flatten"),
        LayerNode("fc", he_fc(rng, hidden, c2 * side2 * side2)),
        LayerNode("relu"),
        LayerNode("fc", he_fc(rng, classes, hidden)),
    ]
    return DynamicNetwork(layers, (1, input_hw, input_hw), classes)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
