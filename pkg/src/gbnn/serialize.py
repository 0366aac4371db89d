"""Model files: an ``.npz`` archive holding a JSON header plus raw arrays.

The header (``__meta__``) records layer types, constructor arguments, frozen
flags and, for ensembles, the shrinkage, class count and init convention.
Every parameter and running statistic is stored as its own float64 array, so
a save/load round trip is bit-exact.
"""
import json
import zipfile

import numpy as np

from . import layers as L
from .boosting import BoostedEnsemble
from .errors import FormatError
from .network import Sequential

FORMAT = "gbnn-model"
VERSION = 1
_STATE = ("running_mean", "running_var")


def _layer_meta(layer, prefix, arrays):
    meta = {"type": layer.kind, "config": layer.config(), "frozen": layer.frozen,
            "params": sorted(layer.params)}
    for name, p in layer.params.items():
        arrays[f"{prefix}/{name}"] = p
    state = [s for s in _STATE if hasattr(layer, s)]
    for s in state:
        arrays[f"{prefix}/{s}"] = getattr(layer, s)
    meta["state"] = state
    return meta


def _network_meta(net, prefix, arrays):
    return [_layer_meta(layer, f"{prefix}/l{j}", arrays)
            for j, layer in enumerate(net.all_layers())]


def _build_layer(meta, prefix, arrays):
    cls = L.LAYER_TYPES.get(meta["type"])
    if cls is None:
        raise FormatError(f"unknown layer type {meta['type']!r}")
    cfg = dict(meta["config"])
    if cls in (L.Dense, L.Conv2D):
        cfg["rng"] = np.random.default_rng(0)
    layer = cls(**cfg)
    for name in meta["params"]:
        arr = arrays[f"{prefix}/{name}"]
        if arr.shape != layer.params[name].shape:
            raise FormatError(f"{prefix}/{name}: stored shape {arr.shape} does not match layer")
        layer.params[name] = np.array(arr, dtype=np.float64)
    for s in meta.get("state", []):
        setattr(layer, s, np.array(arrays[f"{prefix}/{s}"], dtype=np.float64))
    layer.frozen = bool(meta["frozen"])
    layer.zero_grad()
    return layer


def _build_network(meta, prefix, arrays):
    stack = [_build_layer(m, f"{prefix}/l{j}", arrays) for j, m in enumerate(meta)]
    return Sequential(stack[:-1], stack[-1])


def save_model(path, model, extra=None):
    """Write a :class:`Sequential` or :class:`BoostedEnsemble` to ``path``.

    ``extra`` is any JSON-serialisable dict (preprocessing, class names...).
    """
    arrays = {}
    meta = {"format": FORMAT, "version": VERSION, "extra": extra or {}}
    if isinstance(model, BoostedEnsemble):
        meta.update(model="ensemble", kind=model.kind, num_classes=model.num_classes,
                    nu=model.nu, init=model.init,
                    rhos=[np.asarray(r).tolist() for r in model.rhos],
                    stages=[_network_meta(s, f"s{i}", arrays) for i, s in enumerate(model.stages)])
        arrays["init_raw"] = model.init_raw
    elif isinstance(model, Sequential):
        meta.update(model="network", network=_network_meta(model, "net", arrays))
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    header = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=header, **arrays)


def load_model(path):
    """Inverse of :func:`save_model`; returns ``(model, extra)``."""
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {name: z[name] for name in z.files}
        meta = json.loads(arrays.pop("__meta__").tobytes().decode("utf-8"))
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not a readable model file ({exc})") from exc
    if meta.get("format") != FORMAT:
        raise FormatError(f"{path}: unexpected format tag {meta.get('format')!r}")
    if meta.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported version {meta.get('version')!r}")
    try:
        if meta["model"] == "ensemble":
            ens = BoostedEnsemble(meta["num_classes"], meta["nu"], meta["init"],
                                  arrays["init_raw"], meta["kind"])
            ens.stages = [_build_network(m, f"s{i}", arrays) for i, m in enumerate(meta["stages"])]
            ens.rhos = [np.array(r) for r in meta.get("rhos", [])]
            model = ens
        elif meta["model"] == "network":
            model = _build_network(meta["network"], "net", arrays)
        else:
            raise FormatError(f"{path}: unknown model type {meta['model']!r}")
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: incomplete model file ({exc})") from exc
    return model, meta.get("extra", {})
