"""Dynamic network container whose per-layer widths change at runtime.

Layers live in a flat ordered list (conv / relu / maxpool / flatten / fc).
Structural primitives insert or remove whole units (conv output channels,
fc hidden neurons) while keeping the adjacent layer dimension-consistent,
including across the flatten boundary. The flatten layout is channel-major
(channel, then row, then column), so conv channel j owns the contiguous
column block [j*h*w, (j+1)*h*w) of the first fc layer.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import DimensionError, GeometryError, StructuralError

PARAM_KINDS = ("conv", "fc")


@dataclass
class LayerNode:
    """One layer: kind, parameters, weight mask and saliency accumulator.

    ``weight_mask`` is a bool array congruent to the weights (True = active);
    positions with mask False must hold exactly 0.0. ``saliency_slot``
    accumulates |grad * weight| between plasticity events and is rebuilt
    congruently on every structural change. ``spatial_out`` caches the
    layer's output (height, width) for the current input resolution; for
    the flatten node it holds the spatial dims being flattened.
    """

    kind: str
    params: object = None
    weight_mask: np.ndarray = None
    saliency_slot: np.ndarray = None
    spatial_out: tuple = None

    def __post_init__(self):
        if self.kind in PARAM_KINDS:
            if self.params is None:
                raise DimensionError(f"{self.kind} layer needs parameters")
            w = self.params.weights
            if self.weight_mask is None:
                self.weight_mask = np.ones(w.shape, dtype=bool)
            if self.saliency_slot is None:
                self.saliency_slot = np.zeros(w.shape, dtype=w.dtype)

    @property
    def out_width(self):
        if self.kind == "conv":
            return self.params.out_channels
        if self.kind == "fc":
            return self.params.out_features
        return None

    @property
    def in_width(self):
        if self.kind == "conv":
            return self.params.in_channels
        if self.kind == "fc":
            return self.params.in_features
        return None


@dataclass
class UnitRef:
    """Names one learning unit: a conv filter or an fc hidden neuron."""

    layer_index: int
    unit_index: int
    unit_kind: str  # "filter" or "neuron"

    def check(self, net):
        if not 0 <= self.layer_index < len(net.layers):
            raise IndexError(f"layer index {self.layer_index} out of range")
        node = net.layers[self.layer_index]
        width = node.out_width
        if width is None or not 0 <= self.unit_index < width:
            raise IndexError(
                f"unit index {self.unit_index} out of range for layer "
                f"{self.layer_index} (width {width})"
            )


class DynamicNetwork:
    """Ordered layer list plus input geometry and a fixed class count."""

    def __init__(self, layers, input_shape, class_count):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.class_count = int(class_count)
        self.refresh_spatial()

    # -- geometry ---------------------------------------------------------

    def refresh_spatial(self):
        """Recompute cached per-layer spatial dims; raises on bad geometry."""
        c, h, w = self.input_shape
        flat = None
        for i, node in enumerate(self.layers):
            if node.kind == "conv":
                if flat is not None:
                    raise GeometryError(f"layer {i}: conv after flatten")
                if node.params.in_channels != c:
                    raise DimensionError(
                        f"layer {i}: conv expects {node.params.in_channels} input "
                        f"channels, gets {c}"
                    )
                h, w = nn.conv_output_hw(
                    h, w, node.params.kernel, node.params.stride, node.params.padding
                )
                c = node.params.out_channels
                node.spatial_out = (h, w)
            elif node.kind == "maxpool":
                if h % 2 or w % 2:
                    raise GeometryError(f"layer {i}: maxpool needs even dims, got {h}x{w}")
                h, w = h // 2, w // 2
                node.spatial_out = (h, w)
            elif node.kind == "relu":
                node.spatial_out = None if flat is not None else (h, w)
            elif node.kind == "flatten":
                node.spatial_out = (h, w)
                flat = c * h * w
            elif node.kind == "fc":
                width = flat if flat is not None else None
                if width is None:
                    raise GeometryError(f"layer {i}: fc before flatten")
                if node.params.in_features != width:
                    raise DimensionError(
                        f"layer {i}: fc expects {node.params.in_features} inputs, "
                        f"gets {width}"
                    )
                flat = node.params.out_features
            else:
                raise DimensionError(f"layer {i}: unknown kind {node.kind!r}")

    def param_indices(self):
        return [i for i, n in enumerate(self.layers) if n.kind in PARAM_KINDS]

    def conv_indices(self):
        return [i for i, n in enumerate(self.layers) if n.kind == "conv"]

    def fc_indices(self):
        return [i for i, n in enumerate(self.layers) if n.kind == "fc"]

    # -- execution --------------------------------------------------------

    def forward(self, x, caches=None, cols_cache=None):
        h = np.asarray(x)
        for i, node in enumerate(self.layers):
            if caches is not None:
                caches.append(h)
            if node.kind == "conv":
                p = node.params
                ho, wo = nn.conv_output_hw(
                    h.shape[2], h.shape[3], p.kernel, p.stride, p.padding
                )
                cols = nn._im2col(nn._pad(h, p.padding), p.kernel, p.stride, ho, wo)
                if cols_cache is not None:
                    cols_cache[i] = cols
                h = nn._conv_forward_cols(cols, h.shape[0], ho, wo, p)
            elif node.kind == "relu":
                h = nn.relu(h)
            elif node.kind == "maxpool":
                h = nn.maxpool2(h)
            elif node.kind == "flatten":
                h = np.ascontiguousarray(h).reshape(h.shape[0], -1)
            elif node.kind == "fc":
                h = nn.fc_forward(h, node.params)
        return h

    def loss_and_gradients(self, x, labels):
        """One forward/backward sweep: (loss, {layer index: GradientBundle}, logits)."""
        caches, cols_cache = [], {}
        logits = self.forward(x, caches=caches, cols_cache=cols_cache)
        loss, d = nn.softmax_cross_entropy(logits, labels)
        bundles = {}
        for i in range(len(self.layers) - 1, -1, -1):
            node, xin = self.layers[i], caches[i]
            if node.kind == "conv":
                p = node.params
                gb = nn._conv_backward_cols(cols_cache[i], xin.shape, p, d)
                bundles[i] = gb
                d = gb.d_input
            elif node.kind == "relu":
                d = nn.relu(xin, d)
            elif node.kind == "maxpool":
                d = nn.maxpool2(xin, d)
            elif node.kind == "flatten":
                d = d.reshape(xin.shape)
            elif node.kind == "fc":
                gb = nn.fc_backward(xin, node.params, d)
                bundles[i] = gb
                d = gb.d_input
        return loss, bundles, logits


# -- wiring helpers --------------------------------------------------------


def next_param_index(net, l):
    """Index of the next parameterized layer after l, or None."""
    for i in range(l + 1, len(net.layers)):
        if net.layers[i].kind in PARAM_KINDS:
            return i
    return None


def consumer_of(net, l):
    """(consumer index, flatten block size or None) for conv layer l.

    Block size is the per-channel column count (h*w at the flatten point)
    when a flatten node separates l from its fc consumer.
    """
    c = next_param_index(net, l)
    if c is None:
        return None, None
    if net.layers[c].kind == "conv":
        return c, None
    for i in range(l + 1, c):
        if net.layers[i].kind == "flatten":
            h, w = net.layers[i].spatial_out
            return c, h * w
    raise StructuralError(f"fc consumer of conv layer {l} without a flatten node")


def fc_junctions(net):
    """(a, b) index pairs of consecutive fc layers; the hidden units between
    them own row i of a's matrix (fan-in) and column i of b's (fan-out)."""
    pairs = []
    for a in net.fc_indices():
        b = next_param_index(net, a)
        if b is not None and net.layers[b].kind == "fc":
            pairs.append((a, b))
    return pairs


# -- structural primitives ---------------------------------------------------


def _insert_rows(arr, pos, block, axis):
    return np.concatenate(
        [
            np.take(arr, range(pos), axis=axis),
            block,
            np.take(arr, range(pos, arr.shape[axis]), axis=axis),
        ],
        axis=axis,
    )


def _delete(arr, idx, axis):
    return np.ascontiguousarray(np.delete(arr, idx, axis=axis))


def insert_output_channel(net, l, j, new_filter, new_bias, consumer_slice):
    """Insert a conv filter at index j of layer l and the matching input slice
    into l's consumer (conv slice [O2,1,K,K], or [O_fc, h*w] fc columns)."""
    node = net.layers[l]
    if node.kind != "conv":
        raise StructuralError(f"layer {l} is {node.kind}, not conv")
    p = node.params
    if not 0 <= j <= p.out_channels:
        raise IndexError(f"channel position {j} out of range 0..{p.out_channels}")
    cidx, block = consumer_of(net, l)
    if cidx is None:
        raise StructuralError(f"conv layer {l} has no consumer to map")
    new_filter = np.asarray(new_filter, dtype=p.weights.dtype)
    if new_filter.shape != p.weights.shape[1:]:
        raise DimensionError(
            f"new filter shape {new_filter.shape} != {p.weights.shape[1:]}"
        )
    consumer = net.layers[cidx]
    cw = consumer.params.weights
    if block is None:
        want = (cw.shape[0], 1) + cw.shape[2:]
    else:
        want = (cw.shape[0], block)
    consumer_slice = np.asarray(consumer_slice, dtype=cw.dtype)
    if consumer_slice.shape != want:
        raise DimensionError(
            f"consumer slice shape {consumer_slice.shape} != expected {want}"
        )

    p.weights = _insert_rows(p.weights, j, new_filter[None], axis=0)
    p.bias = _insert_rows(p.bias, j, np.asarray([new_bias], dtype=p.bias.dtype), axis=0)
    node.weight_mask = _insert_rows(
        node.weight_mask, j, np.ones((1,) + new_filter.shape, dtype=bool), axis=0
    )
    node.saliency_slot = _insert_rows(
        node.saliency_slot, j, np.zeros((1,) + new_filter.shape, p.weights.dtype), axis=0
    )

    if block is None:
        consumer.params.weights = _insert_rows(cw, j, consumer_slice, axis=1)
        consumer.weight_mask = _insert_rows(
            consumer.weight_mask, j, np.ones_like(consumer_slice, dtype=bool), axis=1
        )
        consumer.saliency_slot = _insert_rows(
            consumer.saliency_slot, j, np.zeros_like(consumer_slice), axis=1
        )
    else:
        pos = j * block
        consumer.params.weights = _insert_rows(cw, pos, consumer_slice, axis=1)
        consumer.weight_mask = _insert_rows(
            consumer.weight_mask, pos, np.ones_like(consumer_slice, dtype=bool), axis=1
        )
        consumer.saliency_slot = _insert_rows(
            consumer.saliency_slot, pos, np.zeros_like(consumer_slice), axis=1
        )
    net.refresh_spatial()


def remove_output_channel(net, l, j):
    """Physically delete conv filter j of layer l and the consumer's slice j."""
    node = net.layers[l]
    if node.kind != "conv":
        raise StructuralError(f"layer {l} is {node.kind}, not conv")
    p = node.params
    if p.out_channels < 2:
        raise StructuralError(f"layer {l} has a single filter, refusing to empty it")
    if not 0 <= j < p.out_channels:
        raise IndexError(f"channel {j} out of range 0..{p.out_channels - 1}")
    cidx, block = consumer_of(net, l)
    if cidx is None:
        raise StructuralError(f"conv layer {l} has no consumer")

    p.weights = _delete(p.weights, j, axis=0)
    p.bias = _delete(p.bias, j, axis=0)
    node.weight_mask = _delete(node.weight_mask, j, axis=0)
    node.saliency_slot = _delete(node.saliency_slot, j, axis=0)

    consumer = net.layers[cidx]
    cols = j if block is None else range(j * block, (j + 1) * block)
    consumer.params.weights = _delete(consumer.params.weights, cols, axis=1)
    consumer.weight_mask = _delete(consumer.weight_mask, cols, axis=1)
    consumer.saliency_slot = _delete(consumer.saliency_slot, cols, axis=1)
    net.refresh_spatial()


def insert_hidden_neuron(net, a, i, fan_in_row, fan_out_col, bias):
    """Insert hidden unit i at the fc junction whose fan-in matrix is layer a."""
    node = net.layers[a]
    if node.kind != "fc":
        raise StructuralError(f"layer {a} is {node.kind}, not fc")
    b = next_param_index(net, a)
    if b is None or net.layers[b].kind != "fc":
        raise StructuralError(
            f"layer {a} feeds the class output, its width is fixed"
        )
    pa, pb = node.params, net.layers[b].params
    if not 0 <= i <= pa.out_features:
        raise IndexError(f"neuron position {i} out of range 0..{pa.out_features}")
    fan_in_row = np.asarray(fan_in_row, dtype=pa.weights.dtype)
    fan_out_col = np.asarray(fan_out_col, dtype=pb.weights.dtype)
    if fan_in_row.shape != (pa.in_features,):
        raise DimensionError(
            f"fan-in row length {fan_in_row.shape} != ({pa.in_features},)"
        )
    if fan_out_col.shape != (pb.out_features,):
        raise DimensionError(
            f"fan-out column length {fan_out_col.shape} != ({pb.out_features},)"
        )

    pa.weights = _insert_rows(pa.weights, i, fan_in_row[None], axis=0)
    pa.bias = _insert_rows(pa.bias, i, np.asarray([bias], dtype=pa.bias.dtype), axis=0)
    node.weight_mask = _insert_rows(
        node.weight_mask, i, np.ones((1, pa.in_features), dtype=bool), axis=0
    )
    node.saliency_slot = _insert_rows(
        node.saliency_slot, i, np.zeros((1, pa.in_features), pa.weights.dtype), axis=0
    )

    bnode = net.layers[b]
    pb.weights = _insert_rows(pb.weights, i, fan_out_col[:, None], axis=1)
    bnode.weight_mask = _insert_rows(
        bnode.weight_mask, i, np.ones((pb.out_features, 1), dtype=bool), axis=1
    )
    bnode.saliency_slot = _insert_rows(
        bnode.saliency_slot, i, np.zeros((pb.out_features, 1), pb.weights.dtype), axis=1
    )
    net.refresh_spatial()


def remove_hidden_neuron(net, a, i):
    """Delete hidden unit i: row i of layer a's matrix, column i of its consumer."""
    node = net.layers[a]
    if node.kind != "fc":
        raise StructuralError(f"layer {a} is {node.kind}, not fc")
    b = next_param_index(net, a)
    if b is None or net.layers[b].kind != "fc":
        raise StructuralError(f"layer {a} feeds the class output, refusing removal")
    pa, pb = node.params, net.layers[b].params
    if pa.out_features < 2:
        raise StructuralError(f"layer {a} has a single neuron, refusing to empty it")
    if not 0 <= i < pa.out_features:
        raise IndexError(f"neuron {i} out of range 0..{pa.out_features - 1}")

    pa.weights = _delete(pa.weights, i, axis=0)
    pa.bias = _delete(pa.bias, i, axis=0)
    node.weight_mask = _delete(node.weight_mask, i, axis=0)
    node.saliency_slot = _delete(node.saliency_slot, i, axis=0)

    bnode = net.layers[b]
    pb.weights = _delete(pb.weights, i, axis=1)
    bnode.weight_mask = _delete(bnode.weight_mask, i, axis=1)
    bnode.saliency_slot = _delete(bnode.saliency_slot, i, axis=1)
    net.refresh_spatial()


# -- diagnostics -------------------------------------------------------------


def validate(net):
    """All invariant violations as strings; empty list means the net is sound."""
    out = []
    c, h, w = net.input_shape
    flat = None
    for i, node in enumerate(net.layers):
        if node.kind == "conv":
            p = node.params
            if flat is not None:
                out.append(f"layer {i}: conv appears after flatten")
                continue
            if p.in_channels != c:
                out.append(
                    f"layer {i}: conv input width expected {c}, actual {p.in_channels}"
                )
            try:
                h, w = nn.conv_output_hw(h, w, p.kernel, p.stride, p.padding)
            except GeometryError as e:
                out.append(f"layer {i}: {e}")
                return out
            c = p.out_channels
        elif node.kind == "maxpool":
            if h % 2 or w % 2:
                out.append(f"layer {i}: maxpool on odd extent {h}x{w}")
                return out
            h, w = h // 2, w // 2
        elif node.kind == "flatten":
            flat = c * h * w
        elif node.kind == "fc":
            p = node.params
            if flat is None:
                out.append(f"layer {i}: fc before flatten")
                return out
            if p.in_features != flat:
                out.append(
                    f"layer {i}: fc input width expected {flat}, actual {p.in_features}"
                )
            flat = p.out_features
        if node.kind in PARAM_KINDS:
            p = node.params
            if node.weight_mask is None or node.weight_mask.shape != p.weights.shape:
                out.append(f"layer {i}: weight mask not congruent to weights")
            elif not np.all(p.weights[~node.weight_mask] == 0.0):
                out.append(f"layer {i}: masked weights are not exactly zero")
            if (
                node.saliency_slot is None
                or node.saliency_slot.shape != p.weights.shape
            ):
                out.append(f"layer {i}: saliency slot not congruent to weights")
            if p.bias.shape != (p.weights.shape[0],):
                out.append(f"layer {i}: bias length {p.bias.shape} != {p.weights.shape[0]}")
    fcs = net.fc_indices()
    if fcs:
        last = net.layers[fcs[-1]].params.out_features
        if last != net.class_count:
            out.append(
                f"layer {fcs[-1]}: class-output width expected {net.class_count}, "
                f"actual {last}"
            )
    return out


@dataclass
class NetworkSummary:
    """Width vector plus physical and mask-aware parameter counts."""

    widths: list
    params: int
    effective_params: int

    def __str__(self):
        return "[" + "-".join(str(w) for w in self.widths) + "]"


def describe(net):
    """Per-layer unit counts in bracket notation and parameter totals.

    ``params`` counts every stored weight and bias. ``effective_params``
    drops masked-zero weights and the biases of units whose weights are
    entirely masked out.
    """
    widths, params, effective = [], 0, 0
    for i in net.param_indices():
        node = net.layers[i]
        p = node.params
        widths.append(node.out_width)
        params += p.weights.size + p.bias.size
        live_units = node.weight_mask.reshape(node.out_width, -1).any(axis=1)
        effective += int(node.weight_mask.sum()) + int(live_units.sum())
    return NetworkSummary(widths, int(params), int(effective))


# -- builders ----------------------------------------------------------------


def _he_conv(rng, o, i, k, dtype):
    std = np.sqrt(2.0 / (i * k * k))
    w = (rng.standard_normal((o, i, k, k)) * std).astype(dtype)
    return nn.ConvParams(w, np.zeros(o, dtype=dtype))


def _he_fc(rng, o, i, dtype):
    std = np.sqrt(2.0 / i)
    w = (rng.standard_normal((o, i)) * std).astype(dtype)
    return nn.FcParams(w, np.zeros(o, dtype=dtype))


def build_lenet(
    conv_widths=(20, 50),
    fc_hidden=500,
    class_count=10,
    input_shape=(1, 28, 28),
    kernel=5,
    seed=0,
    dtype=nn.DTYPE,
):
    """Conv-relu-pool stacks followed by fc-relu-fc, LeNet-style."""
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    layers = []
    cin = c
    for width in conv_widths:
        layers.append(LayerNode("conv", _he_conv(rng, width, cin, kernel, dtype)))
        layers.append(LayerNode("relu"))
        layers.append(LayerNode("maxpool"))
        h, w = (h - kernel + 1) // 2, (w - kernel + 1) // 2
        cin = width
    layers.append(LayerNode("flatten"))
    layers.append(LayerNode("fc", _he_fc(rng, fc_hidden, cin * h * w, dtype)))
    layers.append(LayerNode("relu"))
    layers.append(LayerNode("fc", _he_fc(rng, class_count, fc_hidden, dtype)))
    return DynamicNetwork(layers, input_shape, class_count)


def build_vgg(
    block_widths=(64, 128, 256, 512, 512),
    block_sizes=(2, 2, 3, 3, 3),
    fc_hidden=512,
    class_count=10,
    input_shape=(3, 32, 32),
    seed=0,
    dtype=nn.DTYPE,
):
    """3x3 pad-1 conv blocks with pooling, then a two-layer fc head.

    The defaults give the 13-conv variant; block_sizes (2, 2, 4, 4, 4)
    gives the 16-conv one.
    """
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    layers = []
    cin = c
    for width, reps in zip(block_widths, block_sizes):
        for _ in range(reps):
            p = _he_conv(rng, width, cin, 3, dtype)
            p.padding = 1
            layers.append(LayerNode("conv", p))
            layers.append(LayerNode("relu"))
            cin = width
        layers.append(LayerNode("maxpool"))
        h, w = h // 2, w // 2
    layers.append(LayerNode("flatten"))
    layers.append(LayerNode("fc", _he_fc(rng, fc_hidden, cin * h * w, dtype)))
    layers.append(LayerNode("relu"))
    layers.append(LayerNode("fc", _he_fc(rng, class_count, fc_hidden, dtype)))
    return DynamicNetwork(layers, input_shape, class_count)
