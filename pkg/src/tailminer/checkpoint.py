"""Text checkpoint format ``tailminer-weights-v1``.

A JSON document with one entry per named network. Each layer records its
shape, activation tag and row-major weights/biases as 17-significant-digit
decimals, which round-trips float64 exactly::

    {"schema": "tailminer-weights-v1",
     "kind": "backbone",
     "meta": {...},
     "networks": {"main": [{"in": 16, "out": 32, "activation": "relu",
                            "weights": [...], "biases": [...]}]}}
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from tailminer.errors import ParseError
from tailminer.nn import Activation, DenseLayer, Network

SCHEMA = "tailminer-weights-v1"


def _num(x: float) -> str:
    if not np.isfinite(x):
        raise ValueError(f"cannot serialize non-finite weight {x}")
    return format(float(x), ".17g")


def _array(a: np.ndarray) -> str:
    return "[" + ", ".join(_num(v) for v in np.asarray(a).ravel()) + "]"


def dumps(networks: Mapping[str, Network], kind: str, meta: Mapping[str, Any] | None = None) -> str:
    out = [
        "{",
        f'  "schema": {json.dumps(SCHEMA)},',
        f'  "kind": {json.dumps(kind)},',
        f'  "meta": {json.dumps(dict(meta or {}), sort_keys=True)},',
        '  "networks": {',
    ]
    net_blocks = []
    for name, net in networks.items():
        layer_blocks = []
        for layer in net.layers:
            layer_blocks.append(
                "      {"
                f'"in": {layer.n_in}, "out": {layer.n_out}, '
                f'"activation": {json.dumps(layer.activation.value)},\n'
                f'       "weights": {_array(layer.weights)},\n'
                f'       "biases": {_array(layer.biases)}'
                "}"
            )
        net_blocks.append(f"    {json.dumps(name)}: [\n" + ",\n".join(layer_blocks) + "\n    ]")
    out.append(",\n".join(net_blocks))
    out += ["  }", "}", ""]
    return "\n".join(out)


def loads(text: str, source: str | None = None) -> tuple[dict[str, Network], str, dict]:
    """Parse a checkpoint; returns ``(networks, kind, meta)``."""
    try:
        # parse_int=float keeps the sign of "-0"
        doc = json.loads(text, parse_int=float)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not a weights document: {exc.msg}", source, exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise ParseError(f"expected schema {SCHEMA!r}", source)
    networks = {}
    for name, layers in doc.get("networks", {}).items():
        built = []
        for i, spec in enumerate(layers):
            try:
                n_in, n_out = int(spec["in"]), int(spec["out"])
                w = np.array(spec["weights"], dtype=np.float64)
                b = np.array(spec["biases"], dtype=np.float64)
                act = Activation(spec["activation"])
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"network {name!r} layer {i}: {exc}", source) from None
            if w.size != n_in * n_out or b.size != n_out:
                raise ParseError(f"network {name!r} layer {i}: array sizes do not match shape", source)
            built.append(DenseLayer(w.reshape(n_out, n_in), b, act))
        try:
            networks[name] = Network.from_layers(built)
        except Exception as exc:
            raise ParseError(f"network {name!r}: {exc}", source) from None
    meta = _restore_ints(doc.get("meta", {}))
    return networks, str(doc.get("kind", "")), meta


def _restore_ints(obj):
    if isinstance(obj, float) and obj.is_integer():
        return int(obj)
    if isinstance(obj, dict):
        return {k: _restore_ints(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore_ints(v) for v in obj]
    return obj


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, networks: Mapping[str, Network], kind: str, meta: Mapping[str, Any] | None = None) -> None:
    atomic_write_text(path, dumps(networks, kind, meta))


def load(path) -> tuple[dict[str, Network], str, dict]:
    path = Path(path)
    return loads(path.read_text(encoding="utf-8"), str(path))
