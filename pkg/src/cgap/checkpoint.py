"""Binary checkpoints: "CGAP1" magic, JSON header, float32 blobs, bit masks.

Layout: 5 magic bytes, a little-endian uint32 header length, the UTF-8 JSON
header, then the blob section. Float blobs are little-endian IEEE-754 32-bit
in the order the header manifest lists them; masks follow as packed bitsets.
The header also carries the training state (RNG streams, phase latches), so
a save/load round trip resumes a run bit-exactly and re-saving a loaded
checkpoint reproduces the file byte for byte.
"""

import json
import os
import tempfile

import numpy as np

from . import network as ng
from .errors import CheckpointError
from .nn import ConvParams, FcParams
from .plasticity import SaliencyLedger
from .training import TrainState

MAGIC = b"CGAP1"
VERSION = 1


def _layer_meta(node):
    if node.kind == "conv":
        p = node.params
        return {
            "kind": "conv",
            "out": p.out_channels,
            "in": p.in_channels,
            "kernel": p.kernel,
            "stride": p.stride,
            "padding": p.padding,
        }
    if node.kind == "fc":
        p = node.params
        return {"kind": "fc", "out": p.out_features, "in": p.in_features}
    return {"kind": node.kind}


def _rng_state(gen):
    return gen.bit_generator.state


def _restore_rng(state):
    gen = np.random.default_rng(0)
    gen.bit_generator.state = state
    return gen


def save_checkpoint(net, state, path):
    """Write net (and optionally TrainState) to path atomically."""
    blobs = []
    manifest = []

    def add(layer, name, arr):
        manifest.append({"layer": layer, "field": name, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    for i in net.param_indices():
        node = net.layers[i]
        add(i, "weights", node.params.weights)
        add(i, "bias", node.params.bias)
        if state is not None:
            vw, vb = state.velocities[i]
            add(i, "velocity_w", vw)
            add(i, "velocity_b", vb)
            add(i, "saliency", node.saliency_slot)

    masks = []
    for i in net.param_indices():
        mask = net.layers[i].weight_mask
        masks.append({"layer": i, "count": int(mask.size)})
        blobs.append(np.packbits(mask.reshape(-1)).tobytes())

    header = {
        "version": VERSION,
        "input_shape": list(net.input_shape),
        "class_count": net.class_count,
        "layers": [_layer_meta(n) for n in net.layers],
        "blobs": manifest,
        "masks": masks,
        "state": None
        if state is None
        else {
            "epoch": state.epoch,
            "growth_ended": state.growth_ended,
            "last_train_accuracy": state.last_train_accuracy,
            "prune_iterations": state.prune_iterations,
            "batch_count": state.ledger.batch_count,
            "rng_shuffle": _rng_state(state.shuffle_rng),
            "rng_plasticity": _rng_state(state.plasticity_rng),
        },
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = MAGIC + len(head).to_bytes(4, "little") + head + b"".join(blobs)

    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Read a checkpoint back into (DynamicNetwork, TrainState or None)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:5]!r}, expected {MAGIC!r}")
    if len(raw) < 9:
        raise CheckpointError(f"{path}: truncated header")
    head_len = int.from_bytes(raw[5:9], "little")
    if 9 + head_len > len(raw):
        raise CheckpointError(f"{path}: header length {head_len} exceeds file size")
    try:
        header = json.loads(raw[9 : 9 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from e
    if header.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: version {header.get('version')}, expected {VERSION}"
        )

    off = 9 + head_len
    arrays = {}
    for entry in header["blobs"]:
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        nbytes = 4 * count
        if off + nbytes > len(raw):
            raise CheckpointError(f"{path}: blob section truncated at {entry}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(
            entry["shape"]
        )
        arrays[(entry["layer"], entry["field"])] = arr.copy()
        off += nbytes
    mask_arrays = {}
    for entry in header["masks"]:
        count = int(entry["count"])
        nbytes = (count + 7) // 8
        if off + nbytes > len(raw):
            raise CheckpointError(f"{path}: mask section truncated at {entry}")
        packed = np.frombuffer(raw, dtype=np.uint8, count=nbytes, offset=off)
        mask_arrays[entry["layer"]] = np.unpackbits(packed, count=count).astype(bool)
        off += nbytes

    layers = []
    for i, meta in enumerate(header["layers"]):
        kind = meta["kind"]
        if kind in ("relu", "maxpool", "flatten"):
            layers.append(ng.LayerNode(kind))
            continue
        try:
            w = arrays[(i, "weights")]
            b = arrays[(i, "bias")]
        except KeyError:
            raise CheckpointError(f"{path}: missing blobs for layer {i}") from None
        if kind == "conv":
            want = (meta["out"], meta["in"], meta["kernel"], meta["kernel"])
            params = ConvParams(w, b, stride=meta["stride"], padding=meta["padding"])
        elif kind == "fc":
            want = (meta["out"], meta["in"])
            params = FcParams(w, b)
        else:
            raise CheckpointError(f"{path}: unknown layer kind {kind!r}")
        if w.shape != want:
            raise CheckpointError(
                f"{path}: layer {i} blob shape {w.shape} != header {want}"
            )
        mask = mask_arrays.get(i)
        if mask is None or mask.size != w.size:
            raise CheckpointError(f"{path}: layer {i} mask missing or wrong size")
        node = ng.LayerNode(kind, params, weight_mask=mask.reshape(w.shape))
        sal = arrays.get((i, "saliency"))
        if sal is not None:
            node.saliency_slot = sal
        layers.append(node)

    net = ng.DynamicNetwork(
        layers, tuple(header["input_shape"]), header["class_count"]
    )
    bad = ng.validate(net)
    if bad:
        raise CheckpointError(f"{path}: loaded net fails validation: {bad[0]}")

    meta = header["state"]
    if meta is None:
        return net, None
    velocities = {}
    for i in net.param_indices():
        velocities[i] = (arrays[(i, "velocity_w")], arrays[(i, "velocity_b")])
    state = TrainState(
        epoch=meta["epoch"],
        growth_ended=meta["growth_ended"],
        last_train_accuracy=meta["last_train_accuracy"],
        prune_iterations=meta["prune_iterations"],
        shuffle_rng=_restore_rng(meta["rng_shuffle"]),
        plasticity_rng=_restore_rng(meta["rng_plasticity"]),
        velocities=velocities,
        ledger=SaliencyLedger(net, batch_count=meta["batch_count"]),
    )
    return net, state
