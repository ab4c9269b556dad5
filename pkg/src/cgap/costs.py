"""Analytical inference-cost model: FLOPs, parameters, traffic, energy, latency.

Compute counting: a conv layer does O*Ho*Wo*I*K*K multiply-accumulates, an
fc layer O*I; FLOPs are 2 per MAC; pooling and activations count as free.
The traffic/latency side is a deliberate first-order roofline: per layer,
every weight and activation word moves over DRAM once, compute and memory
cycles overlap perfectly, and the slower of the two sets the layer latency.
Energy is a three-term sum (MAC, on-chip buffer at three accesses per MAC,
DRAM per word) with configurable constants; absolute pJ values are only as
good as those constants, relative comparisons between models are the point.

Masked-out weights still count everywhere unless ``zero_skipping`` is set:
scattered zeros do not shrink dense compute or traffic, which is exactly
why structured removal pays off and masking alone does not.
"""

import json
import math
from collections import namedtuple
from dataclasses import dataclass, field, fields

from . import network as ng

ModelCost = namedtuple("ModelCost", ["flops", "params"])


@dataclass(frozen=True)
class HwConfig:
    """Accelerator description for the first-order cost model.

    The default bandwidth equals clock_hz * bus_bits / 8 (512-bit bus at
    300 MHz gives 19.2 GB/s), so the per-cycle DRAM transfer is one bus word.
    """

    word_bits: int = 16
    dram_bandwidth_bytes_per_s: float = 19.2e9
    clock_hz: float = 300e6
    bus_bits: int = 512
    macs_per_cycle: int = 1024
    e_mac_pj: float = 1.0
    e_buf_pj_per_word: float = 3.0
    e_dram_pj_per_word: float = 160.0
    reuse_factor: float = 1.0
    zero_skipping: bool = False

    def __post_init__(self):
        for f in fields(self):
            if f.name == "zero_skipping":
                continue
            if getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")


@dataclass
class LayerCost:
    """Cost record for one layer (or the whole model when summed)."""

    kind: str = "total"
    layer: int = None
    macs: int = 0
    flops: int = 0
    params: int = 0
    activation_words: int = 0
    weight_words: int = 0
    dram_bytes: float = 0.0
    buffer_accesses: int = 0
    energy_pj: float = 0.0
    latency_s: float = 0.0


@dataclass
class CostReport:
    per_layer: list
    total: LayerCost

    def as_dict(self):
        return {
            "per_layer": [vars(c) for c in self.per_layer],
            "total": vars(self.total),
        }


def layer_costs(
    kind,
    out_channels=None,
    in_channels=None,
    kernel=None,
    input_hw=None,
    stride=1,
    padding=0,
    out_features=None,
    in_features=None,
):
    """Dense MAC / FLOP / parameter counts for a single conv or fc layer."""
    if kind == "conv":
        hi, wi = input_hw
        ho, wo = ng.nn.conv_output_hw(hi, wi, kernel, stride, padding)
        macs = out_channels * ho * wo * in_channels * kernel * kernel
        params = out_channels * in_channels * kernel * kernel + out_channels
    elif kind == "fc":
        macs = out_features * in_features
        params = out_features * in_features + out_features
    else:
        raise ValueError(f"layer kind {kind!r} has no compute cost")
    return LayerCost(kind=kind, macs=macs, flops=2 * macs, params=params)


def _param_geometry(net):
    """Yield (index, kind, cost record, input words, output words) walking the
    network at its current physical widths."""
    c, h, w = net.input_shape
    flat = None
    for i, node in enumerate(net.layers):
        if node.kind == "conv":
            p = node.params
            rec = layer_costs(
                "conv",
                out_channels=p.out_channels,
                in_channels=p.in_channels,
                kernel=p.kernel,
                input_hw=(h, w),
                stride=p.stride,
                padding=p.padding,
            )
            in_words = c * h * w
            h, w = node.spatial_out
            c = p.out_channels
            yield i, "conv", rec, in_words, c * h * w
        elif node.kind == "maxpool":
            h, w = node.spatial_out
        elif node.kind == "flatten":
            flat = c * h * w
        elif node.kind == "fc":
            p = node.params
            rec = layer_costs("fc", out_features=p.out_features, in_features=p.in_features)
            yield i, "fc", rec, p.in_features, p.out_features
            flat = p.out_features


def _skipped(rec, node, spatial_out):
    """Rescale a dense record to count only unmasked weights."""
    active = int(node.weight_mask.sum())
    if node.kind == "conv":
        ho, wo = spatial_out
        macs = ho * wo * active
    else:
        macs = active
    return LayerCost(
        kind=rec.kind,
        macs=macs,
        flops=2 * macs,
        params=active + node.params.bias.size,
    )


def model_costs(net, zero_skipping=False):
    """(flops, params) summed over conv and fc layers at current widths.

    Masked-but-present weights count as present unless zero_skipping.
    """
    flops = params = 0
    for i, kind, rec, _, _ in _param_geometry(net):
        if zero_skipping:
            rec = _skipped(rec, net.layers[i], net.layers[i].spatial_out)
        flops += rec.flops
        params += rec.params
    return ModelCost(int(flops), int(params))


def traffic_latency_energy(net, hw):
    """First-order CostReport for a single-sample inference pass."""
    rows = []
    bytes_per_cycle = hw.dram_bandwidth_bytes_per_s / hw.clock_hz
    for i, kind, rec, in_words, out_words in _param_geometry(net):
        if hw.zero_skipping:
            rec = _skipped(rec, net.layers[i], net.layers[i].spatial_out)
        rec.layer = i
        rec.activation_words = in_words + out_words
        rec.weight_words = rec.params
        rec.dram_bytes = (
            (rec.weight_words + rec.activation_words) * hw.word_bits / 8 * hw.reuse_factor
        )
        compute_cycles = math.ceil(rec.macs / hw.macs_per_cycle)
        memory_cycles = math.ceil(rec.dram_bytes / bytes_per_cycle)
        rec.latency_s = max(compute_cycles, memory_cycles) / hw.clock_hz
        rec.buffer_accesses = 3 * rec.macs
        rec.energy_pj = (
            rec.macs * hw.e_mac_pj
            + rec.buffer_accesses * hw.e_buf_pj_per_word
            + (rec.weight_words + rec.activation_words) * hw.e_dram_pj_per_word
        )
        rows.append(rec)
    total = LayerCost()
    for r in rows:
        total.macs += r.macs
        total.flops += r.flops
        total.params += r.params
        total.activation_words += r.activation_words
        total.weight_words += r.weight_words
        total.dram_bytes += r.dram_bytes
        total.buffer_accesses += r.buffer_accesses
        total.energy_pj += r.energy_pj
        total.latency_s += r.latency_s
    return CostReport(rows, total)


_METRICS = (
    "macs",
    "flops",
    "params",
    "activation_words",
    "weight_words",
    "dram_bytes",
    "buffer_accesses",
    "energy_pj",
    "latency_s",
)


@dataclass
class Comparison:
    """Per-model cost reports plus percentage deltas against the first model.

    ``reduction_pct`` is the usual 100*(baseline - x)/baseline. ``delta_pct``
    is the symmetric form 200*(x - baseline)/(x + baseline), which flips sign
    exactly when baseline and candidate swap roles.
    """

    names: list
    reports: dict
    deltas: dict = field(default_factory=dict)

    @property
    def baseline(self):
        return self.names[0]

    def as_dict(self):
        return {
            "baseline": self.baseline,
            "reports": {k: v.as_dict() for k, v in self.reports.items()},
            "deltas": self.deltas,
        }

    def as_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def format_table(self):
        lines = [
            f"{'model':<16}{'dram_bytes':>14}{'latency_s':>14}{'energy_pj':>16}"
            f"{'dram reduction':>16}{'latency reduction':>19}"
        ]
        for name in self.names:
            t = self.reports[name].total
            d = self.deltas[name]
            lines.append(
                f"{name:<16}{t.dram_bytes:>14.0f}{t.latency_s:>14.3e}"
                f"{t.energy_pj:>16.3e}"
                f"{d['dram_bytes']['reduction_pct']:>15.1f}%"
                f"{d['latency_s']['reduction_pct']:>18.1f}%"
            )
        return "\n".join(lines)


def compare(models, hw):
    """Compare >= 2 named models; the first entry is the baseline."""
    models = list(models.items()) if isinstance(models, dict) else list(models)
    if len(models) < 2:
        raise ValueError("compare needs at least two models")
    names = [name for name, _ in models]
    reports = {name: traffic_latency_energy(net, hw) for name, net in models}
    base = reports[names[0]].total
    deltas = {}
    for name in names:
        t = reports[name].total
        deltas[name] = {}
        for m in _METRICS:
            b, x = getattr(base, m), getattr(t, m)
            reduction = 100.0 * (b - x) / b if b else 0.0
            delta = 200.0 * (x - b) / (x + b) if (x + b) else 0.0
            deltas[name][m] = {"reduction_pct": reduction, "delta_pct": delta}
    return Comparison(names, reports, deltas)
