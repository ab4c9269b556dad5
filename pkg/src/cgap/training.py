"""Training loop: SGD with scheduled LR, growth and pruning triggers.

One run goes through three phases. While capacity remains below the
threshold, every growth-period epochs each layer's most salient units are
duplicated. Once the projected next growth would exceed the capacity
threshold, growth latches off for good. From then on, any epoch whose
training accuracy clears the accuracy threshold triggers a pruning event.
"""

from dataclasses import dataclass, field

import numpy as np

from . import costs
from . import network as ng
from .errors import DivergenceError
from .nn import sgd_update
from .plasticity import (
    PlasticityConfig,
    SaliencyLedger,
    grow_network,
    prune_network,
    round_half_up,
)


def _period(f, name):
    if f <= 0:
        raise ValueError(f"{name} must be positive, got {f}")
    p = round(1.0 / f)
    if p < 1 or abs(p - 1.0 / f) > 1e-9:
        raise ValueError(f"1/{name} must be a positive integer, got 1/{f}")
    return int(p)


@dataclass
class TrainConfig:
    """Hyper-parameters of one run. Frequencies are events per epoch with an
    integral reciprocal (f_growth=1/3 means one event every third epoch)."""

    epochs: int
    batch_size: int = 128
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    f_growth: float = 1.0 / 3.0
    f_pruning: float = 1.0
    tau_capa: int = None
    tau_accu: float = 0.98
    baseline_widths: tuple = None
    plasticity: PlasticityConfig = field(default_factory=PlasticityConfig)
    seed: int = 0
    max_prune_iterations: int = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.tau_accu < 1:
            raise ValueError(f"tau_accu must be in (0, 1), got {self.tau_accu}")
        _period(self.f_growth, "f_growth")
        _period(self.f_pruning, "f_pruning")
        if self.tau_capa is None and self.baseline_widths:
            self.tau_capa = int(self.baseline_widths[0])

    @property
    def growth_period(self):
        return _period(self.f_growth, "f_growth")

    @property
    def pruning_period(self):
        return _period(self.f_pruning, "f_pruning")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_accuracy: float
    active_params: int
    flops: int
    event: str  # "none" | "grow" | "prune"


def lr_at(epoch, config):
    """Initial rate divided by 10 after every 30% of the epoch budget."""
    if not 1 <= epoch <= config.epochs:
        raise ValueError(f"epoch {epoch} outside 1..{config.epochs}")
    step = (3 * config.epochs + 9) // 10  # ceil(0.3 * epochs) in exact arithmetic
    return config.lr0 * 10.0 ** (-((epoch - 1) // step))


def _capacity_allows_growth(net, config):
    if config.tau_capa is None:
        return False
    o1 = ng.describe(net).widths[0]
    projected = o1 + max(1, round_half_up(config.plasticity.beta * o1))
    return projected <= config.tau_capa


def growth_trigger(epoch, net, config):
    """True when the epoch is a growth epoch and the projected post-growth
    first-layer width still fits under the capacity threshold."""
    if epoch % config.growth_period != 0:
        return False
    return _capacity_allows_growth(net, config)


def prune_trigger(epoch, last_train_accuracy, config, growth_ended):
    """True when the epoch is a pruning epoch, growth has permanently ended
    and training accuracy strictly exceeds the accuracy threshold."""
    if epoch % config.pruning_period != 0:
        return False
    return growth_ended and last_train_accuracy > config.tau_accu


def _zero_velocities(net):
    out = {}
    for i in net.param_indices():
        p = net.layers[i].params
        out[i] = (np.zeros_like(p.weights), np.zeros_like(p.bias))
    return out


@dataclass
class TrainState:
    """Everything beyond the weights that a resumed run needs to continue
    bit-exactly: RNG streams, momentum buffers, the saliency ledger and the
    phase latches."""

    epoch: int
    growth_ended: bool
    last_train_accuracy: float
    prune_iterations: int
    shuffle_rng: np.random.Generator
    plasticity_rng: np.random.Generator
    velocities: dict
    ledger: SaliencyLedger

    @classmethod
    def fresh(cls, net, config):
        return cls(
            epoch=0,
            growth_ended=False,
            last_train_accuracy=0.0,
            prune_iterations=0,
            shuffle_rng=np.random.default_rng(config.seed),
            plasticity_rng=np.random.default_rng(config.plasticity.rng_seed),
            velocities=_zero_velocities(net),
            ledger=SaliencyLedger(net),
        )


def evaluate(net, data, batch_size=256):
    """Fraction of samples whose argmax logit matches the label; logit ties
    resolve to the lower class index."""
    correct = 0
    for start in range(0, data.n, batch_size):
        logits = net.forward(data.images[start : start + batch_size])
        pred = np.argmax(logits, axis=1)
        correct += int((pred == data.labels[start : start + batch_size]).sum())
    return correct / data.n


def train(net, train_data, config, test_data=None, state=None, on_epoch=None):
    """Run (or resume) a full training schedule; returns (net, metrics).

    Deterministic for fixed seeds. ``state`` continues a checkpointed run
    from state.epoch + 1; the returned metrics cover only the epochs this
    call executed. ``on_epoch(net, state, metrics_row)`` fires after every
    epoch, e.g. to write checkpoints.
    """
    if state is None:
        state = TrainState.fresh(net, config)
    ledger = state.ledger
    metrics = []
    n = train_data.n
    for epoch in range(state.epoch + 1, config.epochs + 1):
        lr = lr_at(epoch, config)
        order = state.shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            sel = order[start : start + config.batch_size]
            xb = train_data.images[sel]
            yb = train_data.labels[sel]
            loss, bundles, logits = net.loss_and_gradients(xb, yb)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {b}"
                )
            ledger.accumulate(bundles)
            for i in net.param_indices():
                node = net.layers[i]
                vw, vb = state.velocities[i]
                sgd_update(
                    node.params.weights,
                    bundles[i].d_weights,
                    vw,
                    lr,
                    config.momentum,
                    config.weight_decay,
                    node.weight_mask,
                )
                sgd_update(
                    node.params.bias,
                    bundles[i].d_bias,
                    vb,
                    lr,
                    config.momentum,
                    config.weight_decay,
                )
            loss_sum += loss * len(sel)
            correct += int((np.argmax(logits, axis=1) == yb).sum())
        train_loss = loss_sum / n
        train_acc = correct / n

        event = "none"
        # the capacity latch flips before the growth check, so the epoch a
        # growth lands can never also prune
        if not state.growth_ended and not _capacity_allows_growth(net, config):
            state.growth_ended = True
        if not state.growth_ended and growth_trigger(epoch, net, config):
            grow_network(net, ledger, config.plasticity, state.plasticity_rng, epoch)
            state.velocities = _zero_velocities(net)
            event = "grow"
        if prune_trigger(epoch, train_acc, config, state.growth_ended) and (
            config.max_prune_iterations is None
            or state.prune_iterations < config.max_prune_iterations
        ):
            prune_network(net, ledger, config.plasticity, epoch)
            state.velocities = _zero_velocities(net)
            state.prune_iterations += 1
            event = "prune"

        test_acc = evaluate(net, test_data) if test_data is not None else float("nan")
        summary = ng.describe(net)
        row = EpochMetrics(
            epoch=epoch,
            train_loss=train_loss,
            train_accuracy=train_acc,
            test_accuracy=test_acc,
            active_params=summary.effective_params,
            flops=costs.model_costs(net).flops,
            event=event,
        )
        metrics.append(row)
        state.epoch = epoch
        state.last_train_accuracy = train_acc
        if on_epoch is not None:
            on_epoch(net, state, row)
    return net, metrics
