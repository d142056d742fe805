"""Versioned model checkpoints.

Single-file container: one JSON header line (schema, kind, dimensions,
array directory, training metadata) followed by the raw little-endian
float64 array payloads in directory order.  Writing is fully deterministic
and round-trips bit-exactly; zip-based formats were avoided because they
embed timestamps.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from koopguide.errors import SchemaError
from koopguide.learning.baselines import DmdModel, OneStepNnModel
from koopguide.learning.koopman import KoopmanModel, TrainConfig
from koopguide.learning.mlp import Mlp

_FORMAT = "koopguide-model"
_VERSION = 1


def _mlp_arrays(net: Mlp) -> list[tuple[str, np.ndarray]]:
    out = []
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        out.append((f"W{i}", W))
        out.append((f"b{i}", b))
    return out


def _write(path, kind: str, dims: dict, arrays: list[tuple[str, np.ndarray]], meta: dict) -> None:
    header = {
        "format": _FORMAT,
        "version": _VERSION,
        "kind": kind,
        "dims": dims,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
        "meta": meta,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise SchemaError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(raw[:nl].decode())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise SchemaError(f"{path}: unreadable checkpoint header: {e}") from e
    if header.get("format") != _FORMAT:
        raise SchemaError(f"{path}: not a model checkpoint")
    if header.get("version") != _VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {header.get('version')}")
    off = nl + 1
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = off + 8 * count
        if end > len(raw):
            raise SchemaError(f"{path}: truncated checkpoint (array {entry['name']})")
        arrays[entry["name"]] = np.frombuffer(raw[off:end], dtype="<f8").reshape(shape).astype(float)
        off = end
    if off != len(raw):
        raise SchemaError(f"{path}: trailing bytes after declared arrays")
    return header, arrays


def _restore_mlp(sizes: list[int], arrays: dict[str, np.ndarray]) -> Mlp:
    net = Mlp(sizes, rng=None)
    for i in range(net.n_layers):
        W, b = arrays.get(f"W{i}"), arrays.get(f"b{i}")
        if W is None or b is None:
            raise SchemaError(f"missing network layer {i} arrays")
        if W.shape != net.weights[i].shape or b.shape != net.biases[i].shape:
            raise SchemaError(
                f"network layer {i} has shape {W.shape}, expected {net.weights[i].shape}"
            )
        net.weights[i] = W
        net.biases[i] = b
    return net


def save_model(m: KoopmanModel, path) -> None:
    """Write a lifted-linear model checkpoint (bit-exact round trip)."""
    dims = {
        "state": 3,
        "embed": m.lifted_dim - 3,
        "sizes": m.embedding.sizes,
    }
    arrays = [("A", m.A), ("B1", m.B1), ("B2", m.B2), ("in_shift", m.in_shift), ("in_scale", m.in_scale)]
    arrays += _mlp_arrays(m.embedding)
    meta = {"train_config": _cfg_dict(m.train_config)}
    _write(path, "koopman", dims, arrays, meta)


def load_model(path) -> KoopmanModel:
    """Load a lifted-linear model checkpoint, validating declared dimensions."""
    header, arrays = _read(path)
    if header["kind"] != "koopman":
        raise SchemaError(f"{path}: checkpoint holds a {header['kind']!r} model, expected koopman")
    dims = header["dims"]
    n = dims["state"] + dims["embed"]
    for name, shape in (("A", (n, n)), ("B1", (n, 3)), ("B2", (n, 2))):
        if arrays[name].shape != shape:
            raise SchemaError(f"{path}: array {name} has shape {arrays[name].shape}, expected {shape}")
    sizes = list(dims["sizes"])
    if sizes[0] != dims["state"] or sizes[-1] != dims["embed"]:
        raise SchemaError(f"{path}: embedding sizes {sizes} disagree with declared dims")
    net = _restore_mlp(sizes, arrays)
    cfg = _cfg_from_dict(header["meta"].get("train_config"))
    return KoopmanModel(
        net,
        arrays["A"],
        arrays["B1"],
        arrays["B2"],
        in_shift=arrays["in_shift"],
        in_scale=arrays["in_scale"],
        train_config=cfg,
    )


def save_dmd(m: DmdModel, path) -> None:
    _write(path, "dmd", {"state": 3, "input": 5}, [("A", m.A), ("B", m.B)], {"residual": m.residual})


def save_one_step_nn(m: OneStepNnModel, path) -> None:
    dims = {"sizes": m.net.sizes}
    _write(path, "one_step_nn", dims, _mlp_arrays(m.net), {"train_meta": m.train_meta})


def load_any_model(path):
    """Load whichever model kind the checkpoint declares."""
    header, arrays = _read(path)
    kind = header["kind"]
    if kind == "koopman":
        return load_model(path)
    if kind == "dmd":
        if arrays["A"].shape != (3, 3) or arrays["B"].shape != (3, 5):
            raise SchemaError(f"{path}: dmd arrays have unexpected shapes")
        return DmdModel(arrays["A"], arrays["B"], residual=float(header["meta"].get("residual", np.nan)))
    if kind == "one_step_nn":
        net = _restore_mlp(list(header["dims"]["sizes"]), arrays)
        return OneStepNnModel(net, train_meta=header["meta"].get("train_meta"))
    raise SchemaError(f"{path}: unknown model kind {kind!r}")


def _cfg_dict(cfg: TrainConfig | None):
    if cfg is None:
        return None
    d = asdict(cfg)
    d["hidden"] = list(d["hidden"])
    return d


def _cfg_from_dict(d):
    if d is None:
        return None
    d = dict(d)
    d["hidden"] = tuple(d.get("hidden", ()))
    return TrainConfig(**d)
