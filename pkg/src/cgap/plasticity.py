"""Saliency-guided width growth and two-step pruning.

Unit importance is the first-order Taylor estimate of the loss change from
zeroing it: per weight |dL/dw * w|, accumulated over the mini-batches since
the previous plasticity event and averaged by batch count. Growth splits
each selected unit into a scaled pair (newborn next to the original, both
sigma-scaled plus a small uniform scalar noise) and makes the mirroring
"mapping" edit in the adjacent layer so dimensions stay consistent. Pruning
first zeroes the lowest-scoring individual weights of every layer, then
physically removes units whose zeroed fraction exceeds the unit rate.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import network as ng
from .errors import StalenessError, StructuralError

SELECTION_POLICIES = ("saliency", "random")


def round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass
class PlasticityConfig:
    """Growth and pruning hyper-parameters.

    beta: fraction of a layer's units duplicated per growth event.
    sigma: scale applied to both halves of a split.
    mu: half-range of the uniform scalar noise added per new tensor.
    gamma_w / gamma_f / gamma_n: weight, filter and neuron pruning rates.
    """

    beta: float = 0.6
    sigma: float = 0.5
    mu: float = 0.1
    gamma_w: float = 0.2
    gamma_f: float = 0.6
    gamma_n: float = 0.6
    selection_policy: str = "saliency"
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if not 0 < self.sigma <= 1:
            raise ValueError(f"sigma must be in (0, 1], got {self.sigma}")
        if not 0 <= self.mu <= 1:
            raise ValueError(f"mu must be in [0, 1], got {self.mu}")
        for name in ("gamma_w", "gamma_f", "gamma_n"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if self.selection_policy not in SELECTION_POLICIES:
            raise ValueError(f"unknown selection policy {self.selection_policy!r}")


@dataclass
class GrowthEvent:
    epoch: int
    layer: int
    picked: list
    width_before: int
    width_after: int


@dataclass
class PruneEvent:
    epoch: int
    layer: int
    unit_kind: str  # "filter" or "neuron"
    removed: list
    width_before: int
    width_after: int


class SaliencyLedger:
    """Per-weight |grad * weight| accumulator bound to a network.

    The accumulators live in each layer's ``saliency_slot`` so structural
    edits keep them congruent automatically (new positions enter at zero).
    """

    def __init__(self, net, batch_count=0):
        self.net = net
        self.batch_count = batch_count
        for i in net.param_indices():
            node = net.layers[i]
            if node.saliency_slot is None or (
                node.saliency_slot.shape != node.params.weights.shape
            ):
                node.saliency_slot = np.zeros_like(node.params.weights)

    def accumulate(self, bundles):
        """Add one mini-batch: slot += |d_weights * weights| for every layer."""
        net = self.net
        for i in net.param_indices():
            if i not in bundles:
                raise StalenessError(f"no gradient bundle for layer {i}")
            node = net.layers[i]
            dw = bundles[i].d_weights
            if dw.shape != node.params.weights.shape:
                raise StalenessError(
                    f"layer {i}: gradient shape {dw.shape} is stale, weights are "
                    f"{node.params.weights.shape} (structure changed without reset?)"
                )
            node.saliency_slot += np.abs(dw * node.params.weights)
        self.batch_count += 1

    def reset(self):
        for i in self.net.param_indices():
            node = self.net.layers[i]
            node.saliency_slot = np.zeros_like(node.params.weights)
        self.batch_count = 0

    def _require_batches(self):
        if self.batch_count < 1:
            raise ValueError("saliency ledger is empty, accumulate batches first")


def filter_growth_scores(ledger, l):
    """Per-filter growth score of conv layer l: sum of the filter's
    accumulated |grad*w| over all its weights, averaged per batch."""
    ledger._require_batches()
    node = ledger.net.layers[l]
    if node.kind != "conv":
        raise StructuralError(f"layer {l} is {node.kind}, not conv")
    return node.saliency_slot.sum(axis=(1, 2, 3)) / ledger.batch_count


def neuron_growth_scores(ledger, a):
    """Per-neuron growth score at the fc junction whose fan-in matrix is
    layer a: column sums of the fan-out matrix's accumulator."""
    ledger._require_batches()
    net = ledger.net
    if net.layers[a].kind != "fc":
        raise StructuralError(f"layer {a} is {net.layers[a].kind}, not fc")
    b = ng.next_param_index(net, a)
    if b is None or net.layers[b].kind != "fc":
        raise StructuralError(f"layer {a} feeds the class output, no junction")
    return net.layers[b].saliency_slot.sum(axis=0) / ledger.batch_count


def select_units(scores, beta, policy, rng):
    """Indices of the units to duplicate: max(1, round-half-up(beta*n)) many,
    highest score first (ties to the lower index), or a uniform sample."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    if n == 0:
        raise ValueError("cannot select from an empty score vector")
    count = min(n, max(1, round_half_up(beta * n)))
    if policy == "saliency":
        order = np.lexsort((np.arange(n), -scores))
        return [int(i) for i in order[:count]]
    if policy == "random":
        return [int(i) for i in rng.choice(n, size=count, replace=False)]
    raise ValueError(f"unknown selection policy {policy!r}")


def _noise(rng, mu):
    return float(rng.uniform(-mu, mu))


def _masked(values, mask):
    out = values.copy()
    out[~mask] = 0
    return out


def _grow_conv(net, ledger, l, config, rng, epoch):
    node = net.layers[l]
    p = node.params
    cidx, block = ng.consumer_of(net, l)
    if cidx is None:
        raise StructuralError(f"conv layer {l} has no consumer, cannot grow")
    scores = filter_growth_scores(ledger, l)
    picked = select_units(scores, config.beta, config.selection_policy, rng)
    before = p.out_channels
    consumer = net.layers[cidx]
    sig = config.sigma
    for j in sorted(picked, reverse=True):
        x1, x2 = _noise(rng, config.mu), _noise(rng, config.mu)
        x3, x4 = _noise(rng, config.mu), _noise(rng, config.mu)
        w_j = p.weights[j].copy()
        b_j = float(p.bias[j])
        newborn = sig * w_j + x1
        p.weights[j] = _masked(sig * w_j + x2, node.weight_mask[j])
        p.bias[j] = sig * b_j
        cw = consumer.params.weights
        cmask = consumer.weight_mask
        if block is None:
            proj = cw[:, j : j + 1].copy()
            sel = (slice(None), slice(j, j + 1))
        else:
            proj = cw[:, j * block : (j + 1) * block].copy()
            sel = (slice(None), slice(j * block, (j + 1) * block))
        mapped = sig * proj + x3
        cw[sel] = _masked(sig * proj + x4, cmask[sel])
        ng.insert_output_channel(net, l, j + 1, newborn, sig * b_j, mapped)
    return GrowthEvent(epoch, l, sorted(picked), before, p.out_channels)


def _grow_junction(net, ledger, a, config, rng, epoch):
    node = net.layers[a]
    b = ng.next_param_index(net, a)
    if b is None or net.layers[b].kind != "fc":
        raise StructuralError(f"layer {a} feeds the class output, cannot grow")
    scores = neuron_growth_scores(ledger, a)
    picked = select_units(scores, config.beta, config.selection_policy, rng)
    pa, pb = node.params, net.layers[b].params
    before = pa.out_features
    sig = config.sigma
    for j in sorted(picked, reverse=True):
        x1, x2 = _noise(rng, config.mu), _noise(rng, config.mu)
        x3, x4 = _noise(rng, config.mu), _noise(rng, config.mu)
        # fan-out column splits like a filter, fan-in row is the mapping side
        col = pb.weights[:, j].copy()
        row = pa.weights[j].copy()
        b_j = float(pa.bias[j])
        newborn_col = sig * col + x1
        pb.weights[:, j] = _masked(sig * col + x2, net.layers[b].weight_mask[:, j])
        mapped_row = sig * row + x3
        pa.weights[j] = _masked(sig * row + x4, node.weight_mask[j])
        pa.bias[j] = sig * b_j
        ng.insert_hidden_neuron(net, a, j + 1, mapped_row, newborn_col, sig * b_j)
    return GrowthEvent(epoch, a, sorted(picked), before, pa.out_features)


def _grow_site(net, ledger, l, config, rng, epoch):
    kind = net.layers[l].kind
    if kind == "conv":
        return _grow_conv(net, ledger, l, config, rng, epoch)
    if kind == "fc":
        return _grow_junction(net, ledger, l, config, rng, epoch)
    raise StructuralError(f"layer {l} ({kind}) has no learning units")


def grow_layer(net, ledger, l, config, rng, epoch=0):
    """Grow one layer (conv filters or fc hidden neurons) and map its
    neighbor, then reset the ledger since the structure changed."""
    event = _grow_site(net, ledger, l, config, rng, epoch)
    ledger.reset()
    return event


def growth_sites(net):
    """Indices that can grow, input to output: every conv with a consumer and
    every fc junction. The class-output layer is never a site."""
    sites = [l for l in net.conv_indices() if ng.next_param_index(net, l) is not None]
    sites += [a for a, _ in ng.fc_junctions(net)]
    return sorted(sites)


def grow_network(net, ledger, config, rng=None, epoch=0):
    """One growth event: sweep all sites bottom to top. Each site's growth
    happens before the next site is scored; scores of untouched units are
    unaffected because new slots enter the accumulators at zero."""
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    events = [_grow_site(net, ledger, l, config, rng, epoch) for l in growth_sites(net)]
    ledger.reset()
    return events


def weight_prune_scores(ledger, l):
    """{flat weight index: |grad*w| per batch} over the active weights of
    layer l; masked weights are excluded."""
    ledger._require_batches()
    node = ledger.net.layers[l]
    if node.kind not in ng.PARAM_KINDS:
        raise StructuralError(f"layer {l} ({node.kind}) has no weights")
    flat_slot = node.saliency_slot.reshape(-1)
    active = np.flatnonzero(node.weight_mask.reshape(-1))
    count = ledger.batch_count
    return {int(i): float(flat_slot[i]) / count for i in active}


def prune_weights(net, l, gamma_w, scores):
    """Zero the floor(gamma_w * active) lowest-scoring weights of layer l and
    clear their mask bits permanently. Ties break toward the lower index."""
    node = net.layers[l]
    active = int(node.weight_mask.sum())
    if len(scores) != active:
        raise ValueError(
            f"layer {l}: scores cover {len(scores)} weights, {active} are active"
        )
    target = int(math.floor(gamma_w * active))
    if target == 0:
        return 0
    victims = sorted(scores, key=lambda i: (scores[i], i))[:target]
    flat_w = node.params.weights.reshape(-1)
    flat_m = node.weight_mask.reshape(-1)
    for i in victims:
        flat_w[i] = 0.0
        flat_m[i] = False
    return target


def _floor_protect(sparsity, candidates):
    # keep the least-sparse unit (lowest index on ties) when all would go
    if len(candidates) == len(sparsity):
        keep = min(range(len(sparsity)), key=lambda u: (sparsity[u], u))
        candidates = [u for u in candidates if u != keep]
    return candidates


def prune_units(net, gamma_f, gamma_n, epoch=0):
    """Physically remove conv filters whose zeroed-weight fraction exceeds
    gamma_f and fc hidden neurons whose fan-out column sparsity exceeds
    gamma_n (strict inequality). Layers never shrink below one unit and the
    class-output layer is exempt."""
    events = []
    for l in net.conv_indices():
        if ng.next_param_index(net, l) is None:
            continue
        node = net.layers[l]
        width = node.params.out_channels
        flat = node.weight_mask.reshape(width, -1)
        # zeros/total rather than 1-mean: the exact quotient makes the strict
        # threshold comparison behave for boundary rates like 6/9
        sparsity = (~flat).sum(axis=1) / flat.shape[1]
        cands = _floor_protect(sparsity, [o for o in range(width) if sparsity[o] > gamma_f])
        for o in sorted(cands, reverse=True):
            ng.remove_output_channel(net, l, o)
        if cands:
            events.append(
                PruneEvent(epoch, l, "filter", sorted(cands), width, width - len(cands))
            )
    for a, b in ng.fc_junctions(net):
        bmask = net.layers[b].weight_mask
        width = net.layers[a].params.out_features
        sparsity = (~bmask).sum(axis=0) / bmask.shape[0]
        cands = _floor_protect(sparsity, [i for i in range(width) if sparsity[i] > gamma_n])
        for i in sorted(cands, reverse=True):
            ng.remove_hidden_neuron(net, a, i)
        if cands:
            events.append(
                PruneEvent(epoch, a, "neuron", sorted(cands), width, width - len(cands))
            )
    return events


def prune_network(net, ledger, config, epoch=0):
    """One pruning event: weight pruning layer by layer from the bottom, then
    a unit-removal pass, then a ledger reset."""
    for l in net.param_indices():
        scores = weight_prune_scores(ledger, l)
        prune_weights(net, l, config.gamma_w, scores)
    events = prune_units(net, config.gamma_f, config.gamma_n, epoch)
    ledger.reset()
    return events
