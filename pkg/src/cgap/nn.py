"""Dense numerical kernels: conv / fc / relu / maxpool / softmax-CE and SGD.

Forward and backward passes are plain numpy with every per-weight gradient
exposed, which the saliency scoring needs. Training runs in float32; pass
float64 arrays for gradient verification.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, GeometryError

DTYPE = np.float32


def _mm(a, b):
    """Matrix product with a fixed, shape-independent reduction order.

    np.einsum without optimization reduces the shared axis strictly in
    sequence for every output element, so inserting or removing zero
    rows/columns (and resizing unrelated rows/columns) leaves surviving
    outputs bit-identical. BLAS-backed ``@`` regroups the reduction by
    shape and does not give that guarantee. Forward passes go through
    here; backward passes have no such stability contract and use ``@``.
    """
    if not a.flags.c_contiguous:
        a = np.ascontiguousarray(a)
    if not b.flags.c_contiguous:
        b = np.ascontiguousarray(b)
    return np.einsum("mk,kn->mn", a, b, optimize=False)


@dataclass
class ConvParams:
    """Weights [O, I, K, K] with a square kernel, bias [O], stride, padding."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights)
        b = np.asarray(self.bias)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise DimensionError(
                f"conv weights must be [O, I, K, K] with square kernel, got {w.shape}"
            )
        if b.shape != (w.shape[0],):
            raise DimensionError(f"conv bias must be [{w.shape[0]}], got {b.shape}")
        if self.stride < 1 or self.padding < 0:
            raise GeometryError(
                f"stride must be >= 1 and padding >= 0, got {self.stride}, {self.padding}"
            )
        self.weights = w
        self.bias = b

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel(self):
        return self.weights.shape[2]


@dataclass
class FcParams:
    """Weights [O, I] (row o holds the fan-in of output o), bias [O]."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights)
        b = np.asarray(self.bias)
        if w.ndim != 2:
            raise DimensionError(f"fc weights must be [O, I], got {w.shape}")
        if b.shape != (w.shape[0],):
            raise DimensionError(f"fc bias must be [{w.shape[0]}], got {b.shape}")
        self.weights = w
        self.bias = b

    @property
    def out_features(self):
        return self.weights.shape[0]

    @property
    def in_features(self):
        return self.weights.shape[1]


@dataclass
class GradientBundle:
    """Gradients mirroring a layer's input, weights and bias."""

    d_input: np.ndarray
    d_weights: np.ndarray
    d_bias: np.ndarray


def conv_output_hw(hi, wi, kernel, stride, padding):
    """Output (height, width) of a convolution, or GeometryError if not integral."""
    num_h = hi + 2 * padding - kernel
    num_w = wi + 2 * padding - kernel
    if num_h < 0 or num_w < 0 or num_h % stride or num_w % stride:
        raise GeometryError(
            f"conv geometry invalid: input {hi}x{wi}, kernel {kernel}, "
            f"stride {stride}, padding {padding}"
        )
    return num_h // stride + 1, num_w // stride + 1


def _pad(x, padding):
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp, kernel, stride, ho, wo):
    """Sliding windows of a padded input as rows [N*ho*wo, C*K*K], channel-major."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, ho, wo, kernel, kernel),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * kernel * kernel
    )


def _check_conv_input(x, p):
    if x.ndim != 4:
        raise DimensionError(f"conv input must be [N, I, H, W], got shape {x.shape}")
    if x.shape[1] != p.in_channels:
        raise DimensionError(
            f"conv input has {x.shape[1]} channels, weights expect {p.in_channels}"
        )


def conv2d_forward(x, p):
    """y[n,o,r,c] = bias[o] + sum_{i,m,n'} w[o,i,m,n'] * x_pad[n,i,r*s+m,c*s+n']."""
    _check_conv_input(x, p)
    ho, wo = conv_output_hw(x.shape[2], x.shape[3], p.kernel, p.stride, p.padding)
    cols = _im2col(_pad(x, p.padding), p.kernel, p.stride, ho, wo)
    return _conv_forward_cols(cols, x.shape[0], ho, wo, p)


def _conv_forward_cols(cols, n, ho, wo, p):
    o = p.out_channels
    w2 = np.ascontiguousarray(p.weights.reshape(o, -1).T)
    y = _mm(cols, w2)
    y += p.bias
    return np.ascontiguousarray(y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))


def conv2d_backward(x, p, dy):
    """Adjoint of conv2d_forward for input, weights and bias."""
    _check_conv_input(x, p)
    ho, wo = conv_output_hw(x.shape[2], x.shape[3], p.kernel, p.stride, p.padding)
    if dy.shape != (x.shape[0], p.out_channels, ho, wo):
        raise DimensionError(
            f"conv dy shape {dy.shape} does not match forward output "
            f"{(x.shape[0], p.out_channels, ho, wo)}"
        )
    cols = _im2col(_pad(x, p.padding), p.kernel, p.stride, ho, wo)
    return _conv_backward_cols(cols, x.shape, p, dy)


def _conv_backward_cols(cols, x_shape, p, dy):
    n, _, hi, wi = x_shape
    o, i, k, _ = p.weights.shape
    _, _, ho, wo = dy.shape
    dy_mat = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(-1, o)
    d_bias = dy.sum(axis=(0, 2, 3))
    d_weights = (dy_mat.T @ cols).reshape(p.weights.shape)
    d_cols = dy_mat @ p.weights.reshape(o, -1)
    hp, wp = hi + 2 * p.padding, wi + 2 * p.padding
    d_xp = np.zeros((n, i, hp, wp), dtype=dy.dtype)
    d_win = d_cols.reshape(n, ho, wo, i, k, k).transpose(0, 3, 1, 2, 4, 5)
    s = p.stride
    for m in range(k):
        for q in range(k):
            d_xp[:, :, m : m + s * ho : s, q : q + s * wo : s] += d_win[..., m, q]
    if p.padding:
        d_xp = d_xp[:, :, p.padding : p.padding + hi, p.padding : p.padding + wi]
    return GradientBundle(np.ascontiguousarray(d_xp), d_weights, d_bias)


def fc_forward(x, p):
    """y = x @ W.T + bias."""
    if x.ndim != 2 or x.shape[1] != p.in_features:
        raise DimensionError(
            f"fc input shape {x.shape} does not match weights [{p.out_features}, "
            f"{p.in_features}]"
        )
    y = _mm(x, np.ascontiguousarray(p.weights.T))
    y += p.bias
    return y


def fc_backward(x, p, dy):
    """d_weights = dy.T @ x, d_input = dy @ W, d_bias = column sums of dy."""
    if x.ndim != 2 or x.shape[1] != p.in_features:
        raise DimensionError(f"fc input shape {x.shape} invalid")
    if dy.shape != (x.shape[0], p.out_features):
        raise DimensionError(
            f"fc dy shape {dy.shape} does not match output "
            f"{(x.shape[0], p.out_features)}"
        )
    return GradientBundle(dy @ p.weights, dy.T @ x, dy.sum(axis=0))


def relu(x, dy=None):
    """Forward max(0, x); with dy given, the backward pass dy * 1[x > 0]."""
    if dy is None:
        return np.maximum(x, 0)
    if dy.shape != x.shape:
        raise DimensionError(f"relu dy shape {dy.shape} != input shape {x.shape}")
    return dy * (x > 0)


def _pool_windows(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise GeometryError(f"maxpool2 needs even spatial extents, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    # window flattened in row-major order, so argmax ties go to the first
    # (row-major) maximal position
    return win.reshape(n, c, h // 2, w // 2, 4)


def maxpool2(x, dy=None):
    """2x2 max pooling with stride 2; with dy given, routes dy to the argmax."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2 input must be [N, C, H, W], got {x.shape}")
    win = _pool_windows(x)
    idx = win.argmax(axis=-1)
    if dy is None:
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    n, c, h, w = x.shape
    if dy.shape != (n, c, h // 2, w // 2):
        raise DimensionError(
            f"maxpool2 dy shape {dy.shape} does not match output "
            f"{(n, c, h // 2, w // 2)}"
        )
    dwin = np.zeros_like(win)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    dx = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx).reshape(n, c, h, w)


def softmax_cross_entropy(logits, labels):
    """Mean NLL of softmax(logits) at labels, plus d_logits = (softmax - onehot)/N."""
    if logits.ndim != 2:
        raise DimensionError(f"logits must be [N, C], got {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"need {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(np.mean(np.log(denom[:, 0]) - z[rows, labels]))
    d = ez / denom
    d[rows, labels] -= 1
    d /= n
    return loss, d


def sgd_update(param, grad, velocity, lr, momentum, weight_decay, mask=None):
    """In place: v <- momentum*v + grad + wd*param; param <- param - lr*v.

    Masked positions receive no update and are pinned to exact zero.
    """
    if grad.shape != param.shape or velocity.shape != param.shape:
        raise DimensionError(
            f"sgd shapes differ: param {param.shape}, grad {grad.shape}, "
            f"velocity {velocity.shape}"
        )
    if mask is not None and mask.shape != param.shape:
        raise DimensionError(f"mask shape {mask.shape} != param shape {param.shape}")
    velocity *= momentum
    velocity += grad
    if weight_decay:
        velocity += weight_decay * param
    if mask is not None:
        dead = ~mask.astype(bool)
        velocity[dead] = 0
        param -= lr * velocity
        param[dead] = 0
    else:
        param -= lr * velocity
