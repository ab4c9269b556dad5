"""TOML experiment configs and dataset specs.

Sections: [model] (architecture and seed widths), [train], [growth],
[prune], [hardware], [data]. Frequencies accept either a float or a
fraction string like "1/3".
"""

import os

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .costs import HwConfig
from .data import load_idx, synthetic_dataset
from .network import build_lenet, build_vgg
from .plasticity import PlasticityConfig
from .training import TrainConfig

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_toml(path):
    with open(path, "rb") as f:
        return tomllib.load(f)


def _frequency(value):
    if isinstance(value, str):
        num, _, den = value.partition("/")
        return float(num) / float(den) if den else float(num)
    return float(value)


def model_from(doc, seed=None):
    """Build the seed network described by [model]."""
    m = dict(doc.get("model", {}))
    arch = m.pop("arch", "lenet")
    if seed is not None:
        m["seed"] = seed
    for key in ("conv_widths", "block_widths", "block_sizes", "input_shape"):
        if key in m:
            m[key] = tuple(m[key])
    if arch == "lenet":
        return build_lenet(**m)
    if arch == "vgg":
        return build_vgg(**m)
    raise ValueError(f"unknown architecture {arch!r}")


def train_config_from(doc, seed=None):
    t = dict(doc.get("train", {}))
    for key in ("f_growth", "f_pruning"):
        if key in t:
            t[key] = _frequency(t[key])
    if "baseline_widths" in t:
        t["baseline_widths"] = tuple(t["baseline_widths"])
    growth = dict(doc.get("growth", {}))
    prune = dict(doc.get("prune", {}))
    plast = PlasticityConfig(**growth, **prune)
    if seed is not None:
        t["seed"] = seed
        plast.rng_seed = seed
    return TrainConfig(plasticity=plast, **t)


def hw_config_from(doc):
    return HwConfig(**doc.get("hardware", {}))


def data_dir(doc=None):
    d = (doc or {}).get("data", {}).get("dir")
    return d or os.environ.get("CGAP_DATA_DIR", "data")


def dataset_from_spec(spec, doc=None):
    """Resolve "mnist:train", "mnist:test" or "synth:key=value,..." specs."""
    source, _, rest = spec.partition(":")
    if source == "mnist":
        if rest not in MNIST_FILES:
            raise ValueError(f"unknown mnist split {rest!r} (use train or test)")
        d = data_dir(doc)
        images, labels = (os.path.join(d, f) for f in MNIST_FILES[rest])
        return load_idx(images, labels, split=f"mnist:{rest}")
    if source == "synth":
        kw = {"classes": 10, "n_per_class": 100, "seed": 0}
        for pair in filter(None, rest.split(",")):
            key, _, value = pair.partition("=")
            if key in ("classes", "n_per_class", "seed", "proto_seed", "jitter"):
                kw[key] = int(value)
            elif key == "noise":
                kw[key] = float(value)
            elif key == "hw":
                side = int(value)
                kw["image_hw"] = (side, side)
            else:
                raise ValueError(f"unknown synth option {key!r}")
        return synthetic_dataset(split=spec, **kw)
    raise ValueError(f"unknown dataset spec {spec!r}")
