"""JSON schemas for models, index tables and breakpoint sweeps.

Every document carries ``schema_version`` and a ``kind`` tag.  A
model file holds either a single station/asset or a system: a list of
models plus the shared resource amount.
"""
from __future__ import annotations

import json

import numpy as np

from .core import IndexTable
from .plates import AssetBreakpoints, AssetModel
from .station import BreakpointSequence, StationModel

__all__ = [
    "SCHEMA_VERSION",
    "model_to_dict",
    "model_from_dict",
    "load_models",
    "save_models",
    "index_table_to_dict",
    "index_table_rows",
    "breakpoints_to_dict",
]

SCHEMA_VERSION = 1


def model_to_dict(model) -> dict:
    if isinstance(model, StationModel):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "station",
            "lambda": model.arrival_rate,
            "mu": model.mu.tolist(),
            "h": model.holding_cost,
        }
    if isinstance(model, AssetModel):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "asset",
            "A": model.top_state,
            "R": model.max_level,
            "lambda": model.up_rates.tolist(),
            "mu": model.down_rates.tolist(),
            "d": model.returns.tolist(),
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(data: dict):
    kind = data.get("kind")
    if kind == "station":
        return StationModel(arrival_rate=float(data["lambda"]),
                            mu=np.asarray(data["mu"], dtype=float),
                            holding_cost=float(data.get("h", 1.0)))
    if kind == "asset":
        asset = AssetModel(up_rates=np.asarray(data["lambda"], dtype=float),
                           down_rates=np.asarray(data["mu"], dtype=float),
                           returns=np.asarray(data["d"], dtype=float))
        if asset.top_state != data["A"] or asset.max_level != data["R"]:
            raise ValueError("declared A/R disagree with rate array shapes")
        return asset
    raise ValueError(f"unknown model kind {kind!r}")


def load_models(path) -> tuple[list, float | None]:
    """Read a model file; returns (models, resource or None).

    Accepts a bare model document or a system document
    ``{"kind": "system", "models": [...], "resource": R}``.
    """
    with open(path) as fh:
        data = json.load(fh)
    if data.get("kind") == "system":
        return [model_from_dict(m) for m in data["models"]], float(data["resource"])
    return [model_from_dict(data)], None


def save_models(models, path, resource=None) -> None:
    if len(models) == 1 and resource is None:
        doc = model_to_dict(models[0])
    else:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "system",
            "models": [model_to_dict(m) for m in models],
            "resource": resource,
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def _clean(x: float):
    return "inf" if np.isinf(x) else float(x)


def index_table_to_dict(table: IndexTable) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "index_table",
        "max_level": table.max_level,
        "state_count": table.state_count,
        "values": [[_clean(v) for v in row] for row in table.values],
    }


def index_table_rows(table: IndexTable):
    """CSV-friendly rows: level, state, index value."""
    yield ("level", "state", "index")
    for a in range(table.max_level):
        for x in range(table.state_count):
            yield (a, x, _clean(table.values[a, x]))


def breakpoints_to_dict(seq) -> dict:
    if isinstance(seq, BreakpointSequence):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "station_breakpoints",
            "breakpoints": [float(j) for j in seq.breakpoints],
            "policies": [np.asarray(p).tolist() for p in seq.policies],
            "exhausted": seq.exhausted,
        }
    if isinstance(seq, AssetBreakpoints):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "asset_breakpoints",
            "breakpoints": [float(b) for b in seq.breakpoints],
            "intervals": [
                {"h_lo": float(lo), "h_hi": _clean(hi),
                 "levels": np.asarray(p.levels).tolist()}
                for lo, hi, p in seq.intervals
            ],
        }
    raise TypeError(f"cannot serialize {type(seq).__name__}")
