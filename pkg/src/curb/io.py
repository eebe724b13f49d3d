"""Deterministic serialization helpers.

All exported floats are quantized to 9 significant digits before hitting
disk, so repeated runs produce byte-identical files and the wire format
round-trips exactly after a single quantization.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import NO_INSTANCE, SemanticPointCloud


def q9(x) -> float:
    """Quantize to 9 significant digits."""
    return float(f"{float(x):.9g}")


def quantize(obj):
    """Recursively quantize floats inside JSON-able structures."""
    if isinstance(obj, float):
        return q9(obj)
    if isinstance(obj, (np.floating,)):
        return q9(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: quantize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [quantize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [quantize(v) for v in obj.tolist()]
    return obj


def dump_json(obj, path) -> None:
    Path(path).write_text(
        json.dumps(quantize(obj), indent=1, sort_keys=False) + "\n",
        encoding="utf-8")


def load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def canonical_json_bytes(obj) -> bytes:
    return json.dumps(quantize(obj), sort_keys=True,
                      separators=(",", ":")).encode()


def save_cloud_ascii(cloud: SemanticPointCloud, path,
                     with_instance: bool = True) -> None:
    """One point per line: x y z class [instance]."""
    lines = []
    for i in range(len(cloud)):
        x, y, z = cloud.xyz[i]
        base = f"{q9(x):.9g} {q9(y):.9g} {q9(z):.9g} {int(cloud.classes[i])}"
        if with_instance:
            base += f" {int(cloud.instance_ids[i])}"
        lines.append(base)
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def load_cloud_ascii(path, frame: str = "world") -> SemanticPointCloud:
    xyz, classes, inst = [], [], []
    text = Path(path).read_text(encoding="utf-8")
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        xyz.append([float(parts[0]), float(parts[1]), float(parts[2])])
        classes.append(int(parts[3]))
        inst.append(int(parts[4]) if len(parts) > 4 else NO_INSTANCE)
    if not xyz:
        return SemanticPointCloud.empty(frame)
    return SemanticPointCloud(np.array(xyz), np.array(classes, dtype=np.int16),
                              np.array(inst, dtype=np.int64), frame)
