"""On-disk formats: one JSON header line followed by row-major float32 data.

The header lists every stored array with its shape; arrays follow in the
same order.  Writing a loaded object reproduces the file byte for byte.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .neural import ARCHS, ConvNetwork, Dense, DenseNetwork
from .nmf import NmfModel
from .transforms.scattering import FeatureMap

_DTYPE = np.dtype("<f4")


class FormatError(ValueError):
    """Raised for malformed or mismatched artifact files."""


def _write(path, kind: str, header: dict, arrays: list) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = dict(header, kind=kind, arrays=[list(a.shape) for a in arrays])
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=_DTYPE).tobytes())


def _read(path, kind: str):
    path = Path(path)
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: bad header") from exc
        if header.get("kind") != kind:
            raise FormatError(f"{path}: expected a {kind} file, got {header.get('kind')!r}")
        arrays = []
        for shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * _DTYPE.itemsize)
            if len(buf) != count * _DTYPE.itemsize:
                raise FormatError(f"{path}: truncated data")
            arrays.append(np.frombuffer(buf, dtype=_DTYPE).astype(np.float64).reshape(shape))
        if fh.read(1):
            raise FormatError(f"{path}: trailing data")
    return header, arrays


def save_feature_map(path, fm: FeatureMap) -> None:
    header = {"level": fm.level, "rows": fm.n_bins, "frames": fm.n_frames,
              "stride": fm.stride, "sample_rate": fm.sample_rate,
              "signed": fm.signed, "bin_labels": list(fm.bin_labels)}
    _write(path, "features", header, [fm.values])


def load_feature_map(path) -> FeatureMap:
    h, (values,) = _read(path, "features")
    return FeatureMap(values, h["stride"], h["level"], h["bin_labels"], h["sample_rate"],
                      h["signed"])


def save_nmf_model(path, model: NmfModel) -> None:
    header = {"rows": model.n_rows, "atoms": model.n_atoms, "sparsity": model.sparsity,
              "descriptor": model.descriptor, "bin_labels": list(model.bin_labels)}
    _write(path, "nmf", header, [model.dictionary])


def load_nmf_model(path) -> NmfModel:
    h, (d,) = _read(path, "nmf")
    return NmfModel(d, h["sparsity"], h["descriptor"], h["bin_labels"])


def save_network(path, net: DenseNetwork) -> None:
    layers = []
    for role, group in (("branch", net.branches), ("trunk", net.trunk),
                        ("output", [net.output])):
        layers += [{"role": role, "n_in": l.n_in, "n_out": l.n_out,
                    "activation": l.activation} for l in group]
    header = {"arch": net.arch, "n_bins": net.n_bins, "n_resolutions": net.n_resolutions,
              "layers": layers}
    _write(path, "network", header, net.params())


def load_network(path) -> DenseNetwork:
    h, arrays = _read(path, "network")
    if h["arch"] not in ARCHS:
        raise FormatError(f"{path}: unknown arch {h['arch']!r}")
    groups = {"branch": [], "trunk": [], "output": []}
    for i, spec in enumerate(h["layers"]):
        w, b = arrays[2 * i], arrays[2 * i + 1]
        groups[spec["role"]].append(Dense(w, b, spec["activation"]))
    cls = ConvNetwork if groups["branch"] else DenseNetwork
    return cls(h["arch"], h["n_bins"], groups["trunk"], groups["output"][0],
               h["n_resolutions"], groups["branch"])


def write_loss_csv(path, losses) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(losses, start=1):
            w.writerow([i, repr(float(v))])


def read_loss_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["loss"]) for r in rows])
