"""Model file format: canonical JSON with exact float round-trips.

Canonical means sorted keys and fixed separators, so serialize -> load ->
serialize reproduces the file byte for byte (floats survive exactly via
repr round-tripping).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import SCHEMA_VERSION
from ..errors import DataError
from .booster import GbdtModel, GbdtParams, Tree, _node_from_dict, _node_to_dict


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_json(path: str | Path, obj) -> None:
    Path(path).write_text(canonical_dumps(obj) + "\n", encoding="utf-8")


def load_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"model file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a valid model file: {exc}") from None


def model_to_dict(model: GbdtModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "gbdt",
        "task": model.task,
        "params": model.params.to_dict(),
        "base_scores": model.base_scores.tolist(),
        "bin_edges": [e.tolist() for e in model.bin_edges],
        "trees": [_node_to_dict(t.root) for t in model.trees],
        "gain_totals": model.gain_totals.tolist(),
        "split_counts": model.split_counts.tolist(),
        "train_loss": list(model.train_loss),
        "feature_names": list(model.feature_names) if model.feature_names else None,
        "degenerate": model.degenerate,
        "preprocessing": model.preprocessing,
    }


def model_from_dict(d: dict) -> GbdtModel:
    try:
        if d.get("kind") != "gbdt":
            raise DataError(f"not a model dict (kind={d.get('kind')!r})")
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(
                f"unsupported schema_version {d.get('schema_version')!r} "
                f"(this build reads {SCHEMA_VERSION})"
            )
        names = d["feature_names"]
        return GbdtModel(
            task=d["task"],
            params=GbdtParams.from_dict(d["params"]),
            base_scores=np.array(d["base_scores"], dtype=np.float64),
            trees=[Tree(_node_from_dict(t)) for t in d["trees"]],
            bin_edges=[np.array(e, dtype=np.float64) for e in d["bin_edges"]],
            gain_totals=np.array(d["gain_totals"], dtype=np.float64),
            split_counts=np.array(d["split_counts"], dtype=np.int64),
            train_loss=[float(v) for v in d["train_loss"]],
            feature_names=tuple(names) if names else None,
            degenerate=bool(d["degenerate"]),
            preprocessing=d["preprocessing"],
        )
    except KeyError as exc:
        raise DataError(f"model dict missing field {exc}") from None


def save_model(path: str | Path, model: GbdtModel) -> None:
    save_json(path, model_to_dict(model))


def load_model(path: str | Path) -> GbdtModel:
    return model_from_dict(load_json(path))
