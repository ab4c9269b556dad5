"""Grow-and-prune training for small CNNs with an analytical cost model.

Networks start from a narrow seed, periodically duplicate their most
salient filters and hidden neurons (with the matching dimension edit in
the adjacent layer), and later prune low-saliency weights and the units
those zeros hollow out. The cost model quantifies what the structurally
shrunken inference network saves in FLOPs, memory traffic, energy and
latency on a simple accelerator description.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .costs import (
    Comparison,
    CostReport,
    HwConfig,
    LayerCost,
    ModelCost,
    compare,
    layer_costs,
    model_costs,
    traffic_latency_energy,
)
from .data import Dataset, load_idx, synthetic_dataset
from .errors import (
    CgapError,
    CheckpointError,
    DimensionError,
    DivergenceError,
    GeometryError,
    IdxCountMismatchError,
    IdxError,
    IdxMagicError,
    IdxTruncatedError,
    StalenessError,
    StructuralError,
)
from .exports import export_heatmap, export_metrics
from .network import (
    DynamicNetwork,
    LayerNode,
    NetworkSummary,
    UnitRef,
    build_lenet,
    build_vgg,
    describe,
    fc_junctions,
    insert_hidden_neuron,
    insert_output_channel,
    remove_hidden_neuron,
    remove_output_channel,
    validate,
)
from .nn import (
    ConvParams,
    FcParams,
    GradientBundle,
    conv2d_backward,
    conv2d_forward,
    fc_backward,
    fc_forward,
    maxpool2,
    relu,
    sgd_update,
    softmax_cross_entropy,
)
from .plasticity import (
    GrowthEvent,
    PlasticityConfig,
    PruneEvent,
    SaliencyLedger,
    filter_growth_scores,
    grow_layer,
    grow_network,
    neuron_growth_scores,
    prune_network,
    prune_units,
    prune_weights,
    select_units,
    weight_prune_scores,
)
from .training import (
    EpochMetrics,
    TrainConfig,
    TrainState,
    evaluate,
    growth_trigger,
    lr_at,
    prune_trigger,
    train,
)

__version__ = "0.1.0"
