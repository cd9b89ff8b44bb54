"""Versioned, self-describing text persistence for fitted models.

Files are canonical JSON (sorted keys, no whitespace variance) so a
save/load/save cycle is byte-identical; floats round-trip exactly through
repr.
"""

from __future__ import annotations

import json

from .errors import ConfigError
from .forest import Forest, ForestParams, Tree
from .linear import LinearModel, OneHotEncoder

FORMAT_TAG = "agbmap-model"
VERSION = 1


def _dump(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def save_model(model, path) -> None:
    if isinstance(model, LinearModel):
        doc = {
            "format": FORMAT_TAG, "version": VERSION, "kind": "linear",
            "intercept": model.intercept,
            "coefficients": model.coefficients,
            "selected_features": model.selected_features,
            "rss": model.rss, "bic": model.bic, "r2": model.r2, "n": model.n,
            "raw_features": model.raw_features,
            "encoder": model.encoder.levels if model.encoder else None,
        }
    elif isinstance(model, Forest):
        doc = {
            "format": FORMAT_TAG, "version": VERSION, "kind": "forest",
            "params": {"n_trees": model.params.n_trees, "mtry": model.params.mtry,
                       "min_leaf": model.params.min_leaf,
                       "max_depth": model.params.max_depth},
            "seed": model.seed, "oob_error": model.oob_error,
            "feature_names": model.feature_names,
            "categorical": sorted(model.categorical),
            "y_min": model.y_min, "y_max": model.y_max,
            "trees": [t.to_dict() for t in model.trees],
        }
    else:
        raise ConfigError(f"cannot persist model of type {type(model).__name__}")
    _dump(doc, path)


def load_model(path):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != FORMAT_TAG:
        raise ConfigError(f"not an {FORMAT_TAG} file: {path}")
    if doc.get("version") != VERSION:
        raise ConfigError(f"unsupported model version {doc.get('version')!r}")
    if doc["kind"] == "linear":
        enc = OneHotEncoder({k: list(v) for k, v in doc["encoder"].items()}) \
            if doc["encoder"] else None
        return LinearModel(doc["intercept"], dict(doc["coefficients"]),
                           list(doc["selected_features"]), doc["rss"], doc["bic"],
                           doc["r2"], doc["n"], encoder=enc,
                           raw_features=list(doc["raw_features"]))
    if doc["kind"] == "forest":
        params = ForestParams(**doc["params"])
        trees = [Tree.from_dict(t) for t in doc["trees"]]
        return Forest(trees, list(doc["feature_names"]),
                      frozenset(doc["categorical"]), params, doc["seed"],
                      doc["oob_error"], doc["y_min"], doc["y_max"], inbag=None)
    raise ConfigError(f"unknown model kind {doc['kind']!r}")
