"""Versioned JSON records for fitted models.

A record is a JSON object with ``format``, ``version`` and ``kind`` keys and
one entry per model array, stored as nested lists. Floats are written with
``repr`` precision, so a round trip reproduces predictions exactly. Only the
parameters needed for prediction are kept; training histories are dropped.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .linear import MlrModel, PolrModel
from .neural import MlpModel
from .trees import CartTree, GbmModel, RfModel, _stack

FORMAT = "oktacast-model"
VERSION = 1


class RecordError(ValueError):
    pass


def _arr(a):
    return np.asarray(a).tolist()


def _trees_from_stack(feature, threshold, value, depth):
    feature = np.asarray(feature, dtype=np.int64)
    threshold = np.asarray(threshold, dtype=float)
    value = np.asarray(value, dtype=float)
    return [CartTree(feature[t], threshold[t], value[t], depth) for t in range(feature.shape[0])]


def to_record(model) -> dict:
    """Plain-data record of a fitted model."""
    rec = {"format": FORMAT, "version": VERSION}
    if isinstance(model, MlrModel):
        rec.update(
            kind="MLR",
            feature_variant=model.feature_variant,
            intercepts=_arr(model.intercepts),
            weights=_arr(model.weights),
        )
    elif isinstance(model, PolrModel):
        rec.update(
            kind="POLR",
            feature_variant=model.feature_variant,
            cutpoints=_arr(model.cutpoints),
            slope=_arr(model.slope),
            excluded=sorted(int(i) for i in model.excluded),
        )
    elif isinstance(model, MlpModel):
        rec.update(
            kind="MLP",
            feature_variant=model.feature_variant,
            l2_factor=model.l2_factor,
            rng_seed=model.rng_seed,
            feature_mean=_arr(model.feature_mean),
            feature_scale=_arr(model.feature_scale),
            weights=[_arr(W) for W in model.weights],
            biases=[_arr(b) for b in model.biases],
        )
    elif isinstance(model, RfModel):
        feature, threshold, value = model.stacked()
        rec.update(
            kind="RF",
            depth=model.depth,
            mtry=model.mtry,
            seed=model.seed,
            n_features=model.n_features,
            feature=_arr(feature),
            threshold=_arr(threshold),
            value=_arr(value),
        )
    elif isinstance(model, GbmModel):
        per_class = []
        for c in range(len(model.base_scores)):
            if model.trees:
                f, t, v = _stack([rnd[c] for rnd in model.trees])
                per_class.append({"feature": _arr(f), "threshold": _arr(t), "value": _arr(v[..., 0])})
            else:
                per_class.append({"feature": [], "threshold": [], "value": []})
        rec.update(
            kind="GBM",
            depth=model.depth,
            learning_rate=model.learning_rate,
            n_features=model.n_features,
            base_scores=_arr(model.base_scores),
            n_rounds=model.n_rounds,
            trees=per_class,
        )
    else:
        raise RecordError(f"cannot serialize {type(model).__name__}")
    return rec


def from_record(rec: dict):
    """Rebuild a model from :func:`to_record` output."""
    if rec.get("format") != FORMAT:
        raise RecordError("not a model record")
    if rec.get("version") != VERSION:
        raise RecordError(f"unsupported record version {rec.get('version')!r}")
    kind = rec.get("kind")
    f64 = lambda a: np.asarray(a, dtype=float)  # noqa: E731
    if kind == "MLR":
        return MlrModel(f64(rec["intercepts"]), f64(rec["weights"]), rec["feature_variant"])
    if kind == "POLR":
        return PolrModel(
            f64(rec["cutpoints"]), f64(rec["slope"]), frozenset(rec["excluded"]), rec["feature_variant"]
        )
    if kind == "MLP":
        return MlpModel(
            [f64(W) for W in rec["weights"]],
            [f64(b) for b in rec["biases"]],
            f64(rec["feature_mean"]),
            f64(rec["feature_scale"]),
            rec["l2_factor"],
            rec["rng_seed"],
            rec["feature_variant"],
        )
    if kind == "RF":
        trees = _trees_from_stack(rec["feature"], rec["threshold"], rec["value"], rec["depth"])
        return RfModel(trees, rec["depth"], rec["mtry"], rec["seed"], rec["n_features"])
    if kind == "GBM":
        n_rounds = rec["n_rounds"]
        n_nodes = 2 ** (rec["depth"] + 1) - 1
        classes = []
        for c in rec["trees"]:
            value = np.asarray(c["value"], dtype=float).reshape(n_rounds, n_nodes)[..., None]
            feature = np.asarray(c["feature"], dtype=np.int64).reshape(n_rounds, n_nodes)
            threshold = np.asarray(c["threshold"], dtype=float).reshape(n_rounds, n_nodes)
            classes.append(_trees_from_stack(feature, threshold, value, rec["depth"]))
        trees = [[classes[c][m] for c in range(len(classes))] for m in range(n_rounds)]
        return GbmModel(
            f64(rec["base_scores"]), trees, rec["learning_rate"], rec["depth"], rec["n_features"],
            rounds_run=n_rounds,
        )
    raise RecordError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(to_record(model), allow_nan=False) + "\n")


def load_model(path):
    return from_record(json.loads(Path(path).read_text()))
