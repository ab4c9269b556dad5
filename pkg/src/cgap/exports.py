"""CSV exports: per-epoch metrics and weight-magnitude heatmaps."""

import csv
import math
import os
import tempfile

import numpy as np

from .errors import DimensionError

METRICS_HEADER = ["epoch", "train_loss", "train_acc", "test_acc", "params", "flops", "event"]


def _atomic_write_rows(path, rows):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".csv-")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def export_metrics(metrics, path):
    """Write EpochMetrics rows as CSV (LF line endings, '.' decimals)."""
    rows = [METRICS_HEADER]
    for m in metrics:
        test = "" if m.test_accuracy is None or math.isnan(m.test_accuracy) else repr(
            m.test_accuracy
        )
        rows.append(
            [
                m.epoch,
                repr(m.train_loss),
                repr(m.train_accuracy),
                test,
                m.active_params,
                m.flops,
                m.event,
            ]
        )
    _atomic_write_rows(path, rows)


def export_heatmap(net, layer, path):
    """Per-weight |value| grid of one layer as CSV.

    Columns run over the layer's output-wise unit index, rows over the
    input-wise weight index (I*K*K for conv, I for fc), so a grown layer
    widens the grid.
    """
    node = net.layers[layer]
    if node.params is None:
        raise DimensionError(f"layer {layer} ({node.kind}) has no weights")
    w = node.params.weights
    grid = np.abs(w.reshape(w.shape[0], -1)).T
    _atomic_write_rows(path, [[repr(float(v)) for v in row] for row in grid])
