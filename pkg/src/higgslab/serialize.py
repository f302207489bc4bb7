"""Self-describing JSON containers for fields, bundles, metrics, and cocycles.

Payloads carry the grid (tau, N), the bidegree, and the Fourier mode
coefficients as interleaved re/im arrays in C order over (k1, k2[, i, j]).
A document loaded with :func:`from_doc` serializes back byte-for-byte; node
samples of a loaded field are reconstructed deterministically from the modes.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .bundles import FlatBundle, HermitianMetric, HiggsBundle
from .torus import Field, SpectralGrid, TorusModulus

FORMAT = "higgslab.container.v1"

__all__ = [
    "field_to_doc",
    "field_from_doc",
    "to_doc",
    "from_doc",
    "dumps",
    "context_hash",
]


def dumps(doc: dict) -> str:
    """Canonical JSON: sorted keys, fixed separators, no trailing whitespace."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _interleave(arr: np.ndarray) -> list[float]:
    flat = np.ascontiguousarray(arr).reshape(-1)
    out = np.empty(2 * flat.size, dtype=np.float64)
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return out.tolist()


def _deinterleave(data: list[float], shape: tuple[int, ...]) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return (arr[0::2] + 1j * arr[1::2]).reshape(shape)


def field_to_doc(f: Field) -> dict:
    return {
        "bidegree": [f.p, f.q],
        "rank": f.rank if f.is_matrix else 0,
        "modes_re_im": _interleave(f.modes()),
    }


def field_from_doc(grid: SpectralGrid, doc: dict) -> Field:
    N = grid.n_modes
    rank = int(doc["rank"])
    shape = (N, N) if rank == 0 else (N, N, rank, rank)
    modes = _deinterleave(doc["modes_re_im"], shape)
    p, q = doc["bidegree"]
    return Field.from_modes(grid, int(p), int(q), modes)


def _grid_header(grid: SpectralGrid) -> dict:
    return {"tau": [grid.tau.real, grid.tau.imag], "n_modes": grid.n_modes}


def _grid_from_header(doc: dict) -> SpectralGrid:
    tau = complex(doc["tau"][0], doc["tau"][1])
    return SpectralGrid(TorusModulus(tau), int(doc["n_modes"]))


def to_doc(obj) -> dict:
    if isinstance(obj, HiggsBundle):
        return {
            "format": FORMAT,
            "type": "higgs_bundle",
            **_grid_header(obj.grid),
            "rank": obj.rank,
            "sl_constraint": obj.sl_constraint,
            "fields": {"a01": field_to_doc(obj.a01), "theta": field_to_doc(obj.theta)},
        }
    if isinstance(obj, HermitianMetric):
        return {
            "format": FORMAT,
            "type": "hermitian_metric",
            **_grid_header(obj.grid),
            "rank": obj.rank,
            "sl_constraint": obj.sl_constraint,
            "fields": {"h": field_to_doc(obj.h)},
        }
    if isinstance(obj, FlatBundle):
        return {
            "format": FORMAT,
            "type": "flat_bundle",
            **_grid_header(obj.grid),
            "rank": obj.rank,
            "fields": {"m10": field_to_doc(obj.m10), "m01": field_to_doc(obj.m01)},
        }
    if isinstance(obj, Field):
        return {"format": FORMAT, "type": "field", **_grid_header(obj.grid), "payload": field_to_doc(obj)}
    raise TypeError(f"no container for {type(obj).__name__}")


def from_doc(doc: dict):
    if doc.get("format") != FORMAT:
        raise ValueError(f"unknown container format {doc.get('format')!r}")
    grid = _grid_from_header(doc)
    kind = doc["type"]
    if kind == "higgs_bundle":
        return HiggsBundle(
            field_from_doc(grid, doc["fields"]["a01"]),
            field_from_doc(grid, doc["fields"]["theta"]),
            bool(doc["sl_constraint"]),
        )
    if kind == "hermitian_metric":
        return HermitianMetric(field_from_doc(grid, doc["fields"]["h"]), bool(doc["sl_constraint"]))
    if kind == "flat_bundle":
        return FlatBundle(field_from_doc(grid, doc["fields"]["m10"]), field_from_doc(grid, doc["fields"]["m01"]))
    if kind == "field":
        return field_from_doc(grid, doc["payload"])
    raise ValueError(f"unknown container type {kind!r}")


def context_hash(theta: Field, h: Field) -> str:
    """Stable hash of the (theta, h0) pair cocycles are taken against."""
    blob = dumps({"theta": field_to_doc(theta), "h": field_to_doc(h)})
    return hashlib.sha256(blob.encode()).hexdigest()
