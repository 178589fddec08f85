"""Performance model: feature encoding plus a bagged ensemble of
single-hidden-layer sigmoid networks trained on log execution times.

Training minimizes mean squared error on the logarithm of the time, which
makes the optimization target the relative rather than absolute error.
Invalid samples never reach training. Everything is deterministic given
the training seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigMismatchError, DivergenceError, InsufficientDataError, ParseError
from .measurement import SampleSet
from .paramspace import Configuration, ParamSpace
from .rng import make_rng
from .serialize import dumps_17g

HIDDEN_UNITS = 30
DEFAULT_BAG_COUNT = 11
MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Gradient-descent hyperparameters. The seed fully determines weight
    initialization, fold assignment, and batch order."""

    epochs: int = 500
    learning_rate: float = 0.03
    batch_size: int = 32
    momentum: float = 0.9
    weight_init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0 or not self.weight_init_scale > 0:
            raise ValueError("learning_rate and weight_init_scale must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


class Encoder:
    """Maps configurations to feature vectors in [0, 1], one feature per
    parameter: a value's rank in its ordered value list, normalized by
    count - 1. Binary 0/1 flags map to 0.0 and 1.0 unchanged."""

    def __init__(self, params: list[tuple[str, tuple[int, ...]]]):
        self.params = [(name, tuple(values)) for name, values in params]
        self._ranks = [{v: i for i, v in enumerate(values)} for _, values in self.params]
        self._spans = [max(len(values) - 1, 1) for _, values in self.params]

    @classmethod
    def from_space(cls, space: ParamSpace) -> "Encoder":
        return cls([(p.name, p.values) for p in space.params])

    @property
    def input_dim(self) -> int:
        return len(self.params)

    def validate_config(self, config: Configuration) -> None:
        if len(config) != len(self.params):
            raise ConfigMismatchError(
                f"configuration has {len(config)} values, encoder expects "
                f"{len(self.params)}"
            )
        for (name, _), ranks, v in zip(self.params, self._ranks, config):
            if v not in ranks:
                raise ConfigMismatchError(
                    f"value {v} is not admissible for parameter {name!r}"
                )

    def encode(self, config: Configuration) -> np.ndarray:
        self.validate_config(config)
        return np.array(
            [ranks[v] / span for ranks, span, v in zip(self._ranks, self._spans, config)],
            dtype=np.float64,
        )

    def encode_indices(self, indices) -> np.ndarray:
        """Vectorized encoding straight from configuration indices."""
        idx = np.asarray(indices, dtype=np.int64)
        out = np.empty((idx.shape[0], len(self.params)), dtype=np.float64)
        rem = idx.copy()
        for col in range(len(self.params) - 1, -1, -1):
            count = len(self.params[col][1])
            rem, digit = np.divmod(rem, count)
            out[:, col] = digit / self._spans[col]
        return out

    def to_json(self) -> list[dict]:
        return [
            {
                "name": name,
                "values": list(values),
                "kind": "binary" if values == (0, 1) else "rank",
            }
            for name, values in self.params
        ]

    @classmethod
    def from_json(cls, doc: list[dict]) -> "Encoder":
        return cls([(p["name"], tuple(p["values"])) for p in doc])


class Network:
    """One feed-forward network: HIDDEN_UNITS sigmoid units, linear output.

    The raw output regresses the standardized log time; target_mean and
    target_std invert the standardization of its training fold.
    """

    def __init__(self, weights_hidden: np.ndarray, biases_hidden: np.ndarray,
                 weights_out: np.ndarray, bias_out: float,
                 target_mean: float = 0.0, target_std: float = 1.0,
                 first_epoch_loss: float | None = None,
                 final_epoch_loss: float | None = None):
        self.weights_hidden = np.asarray(weights_hidden, dtype=np.float64)
        self.biases_hidden = np.asarray(biases_hidden, dtype=np.float64)
        self.weights_out = np.asarray(weights_out, dtype=np.float64)
        self.bias_out = float(bias_out)
        self.target_mean = float(target_mean)
        self.target_std = float(target_std)
        self.first_epoch_loss = first_epoch_loss
        self.final_epoch_loss = final_epoch_loss
        hidden, d = self.weights_hidden.shape
        if (hidden != self.biases_hidden.shape[0]
                or hidden != self.weights_out.shape[0]):
            raise ValueError("inconsistent network weight shapes")
        for arr in (self.weights_hidden, self.biases_hidden, self.weights_out):
            if not np.all(np.isfinite(arr)):
                raise ValueError("network weights must be finite")

    @property
    def input_dim(self) -> int:
        return self.weights_hidden.shape[1]

    def forward_batch(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(
                f"feature length {x.shape[-1]} does not match input_dim "
                f"{self.input_dim}"
            )
        h = _sigmoid(x @ self.weights_hidden.T + self.biases_hidden)
        return h @ self.weights_out + self.bias_out

    def forward(self, features: np.ndarray) -> float:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("forward expects a single feature vector")
        return float(self.forward_batch(x[np.newaxis, :])[0])

    def predict_log_batch(self, features: np.ndarray) -> np.ndarray:
        """Network output mapped back to (unstandardized) log time."""
        return self.forward_batch(features) * self.target_std + self.target_mean


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # overflow in exp saturates to 0/1, which is the correct limit
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def forward(net: Network, features) -> float:
    return net.forward(np.asarray(features, dtype=np.float64))


def gradient(net: Network, features, target: float) -> dict[str, np.ndarray]:
    """Exact single-sample backpropagation gradients of (output - target)**2."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ValueError(f"feature shape {x.shape} does not match ({net.input_dim},)")
    h = _sigmoid(net.weights_hidden @ x + net.biases_hidden)
    out = float(h @ net.weights_out + net.bias_out)
    dout = 2.0 * (out - target)
    dz = dout * net.weights_out * h * (1.0 - h)
    return {
        "weights_hidden": np.outer(dz, x),
        "biases_hidden": dz,
        "weights_out": dout * h,
        "bias_out": np.array(dout),
    }


def _fit(X: np.ndarray, targets: np.ndarray, cfg: TrainConfig,
         seed_parts: tuple[int, ...]) -> Network:
    """Mini-batch gradient descent on standardized targets."""
    n, d = X.shape
    mean = float(targets.mean())
    std = float(targets.std())
    if std == 0.0:
        std = 1.0
    t = (targets - mean) / std

    rng = make_rng(*seed_parts)
    W1 = rng.uniform(-0.5, 0.5, (HIDDEN_UNITS, d)) * cfg.weight_init_scale
    b1 = np.zeros(HIDDEN_UNITS)
    w2 = rng.uniform(-0.5, 0.5, HIDDEN_UNITS) * cfg.weight_init_scale
    b2 = 0.0
    lr = cfg.learning_rate
    mom = cfg.momentum
    vW1 = np.zeros_like(W1)
    vb1 = np.zeros_like(b1)
    vw2 = np.zeros_like(w2)
    vb2 = 0.0

    first_loss = final_loss = math.nan
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sse = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            Xb = X[idx]
            tb = t[idx]
            m = idx.size
            h = _sigmoid(Xb @ W1.T + b1)
            out = h @ w2 + b2
            r = out - tb
            sse += float(r @ r)
            dout = (2.0 / m) * r
            dw2 = h.T @ dout
            db2 = dout.sum()
            dz = np.outer(dout, w2) * h * (1.0 - h)
            vW1 = mom * vW1 - lr * (dz.T @ Xb)
            vb1 = mom * vb1 - lr * dz.sum(axis=0)
            vw2 = mom * vw2 - lr * dw2
            vb2 = mom * vb2 - lr * db2
            W1 += vW1
            b1 += vb1
            w2 += vw2
            b2 += vb2
        loss = sse / n
        if not math.isfinite(loss):
            raise DivergenceError("training loss became non-finite", epoch=epoch)
        if epoch == 1:
            first_loss = loss
        final_loss = loss

    return Network(W1, b1, w2, b2, target_mean=mean, target_std=std,
                   first_epoch_loss=first_loss, final_epoch_loss=final_loss)


def _training_matrix(samples: SampleSet, encoder: Encoder) -> tuple[np.ndarray, np.ndarray]:
    valid = samples.valid_samples()
    if not valid:
        raise InsufficientDataError("no valid samples to train on")
    X = np.stack([encoder.encode(s.config) for s in valid])
    y = np.log([s.outcome.time for s in valid])
    return X, y


def train_network(samples: SampleSet, space: ParamSpace, cfg: TrainConfig) -> Network:
    """Train a single network on all valid samples.

    Seeded identically to member 0 of a k=1 ensemble, so the two paths
    produce the same network.
    """
    encoder = Encoder.from_space(space)
    X, y = _training_matrix(samples, encoder)
    return _fit(X, y, cfg, (cfg.seed, 0))


class Ensemble:
    """k networks trained on overlapping folds; prediction is the
    geometric mean of the member time predictions (mean in log space)."""

    def __init__(self, members: list[Network], encoder: Encoder, space_name: str):
        if not members:
            raise ValueError("an ensemble needs at least one member")
        dims = {m.input_dim for m in members}
        if dims != {encoder.input_dim}:
            raise ValueError("member input dimensions do not match the encoder")
        self.members = tuple(members)
        self.encoder = encoder
        self.space_name = space_name

    @property
    def k(self) -> int:
        return len(self.members)

    def predict_features(self, features: np.ndarray) -> np.ndarray:
        logs = self.members[0].predict_log_batch(features)
        for member in self.members[1:]:
            logs = logs + member.predict_log_batch(features)
        return np.exp(logs / len(self.members))

    def predict(self, config: Configuration) -> float:
        x = self.encoder.encode(config)
        return float(self.predict_features(x[np.newaxis, :])[0])

    def predict_indices(self, indices) -> np.ndarray:
        return self.predict_features(self.encoder.encode_indices(indices))


def _fit_star(task: tuple) -> Network:
    return _fit(*task)


def train_ensemble(samples: SampleSet, space: ParamSpace, k: int = DEFAULT_BAG_COUNT,
                   cfg: TrainConfig = TrainConfig(), jobs: int = 1) -> Ensemble:
    """Bagging by fold exclusion: valid samples split into k near-equal
    folds; member i trains on everything except fold i. k=1 trains a
    single network on all samples.

    Members are independent (per-member derived seeds), so jobs > 1 trains
    them in parallel with results identical to sequential training.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    encoder = Encoder.from_space(space)
    X, y = _training_matrix(samples, encoder)
    n = X.shape[0]
    if n < k:
        raise InsufficientDataError(
            f"{n} valid samples cannot fill {k} folds"
        )
    if k == 1:
        tasks = [(X, y, cfg, (cfg.seed, 0))]
    else:
        folds = np.array_split(make_rng(cfg.seed).permutation(n), k)
        tasks = []
        for i, fold in enumerate(folds):
            keep = np.setdiff1d(np.arange(n), fold, assume_unique=True)
            tasks.append((X[keep], y[keep], cfg, (cfg.seed, i)))
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            members = list(pool.map(_fit_star, tasks))
    else:
        members = [_fit_star(t) for t in tasks]
    return Ensemble(members, encoder, space.name)


def predict(ensemble: Ensemble, config: Configuration) -> float:
    return ensemble.predict(config)


# -- persistence -------------------------------------------------------------


def model_to_json(ensemble: Ensemble) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "space_name": ensemble.space_name,
        "k": ensemble.k,
        "input_dim": ensemble.encoder.input_dim,
        "encoder": ensemble.encoder.to_json(),
        "target_transform": [
            {"mean": m.target_mean, "std": m.target_std} for m in ensemble.members
        ],
        "members": [
            {
                "weights_hidden": m.weights_hidden.tolist(),
                "biases_hidden": m.biases_hidden.tolist(),
                "weights_out": m.weights_out.tolist(),
                "bias_out": m.bias_out,
            }
            for m in ensemble.members
        ],
    }


def save_model(ensemble: Ensemble, path) -> None:
    Path(path).write_text(dumps_17g(model_to_json(ensemble)) + "\n")


def load_model(path) -> Ensemble:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"not a valid model file: {exc}", path=path) from exc
    try:
        version = doc["schema_version"]
        if version != MODEL_SCHEMA_VERSION:
            raise ParseError(
                f"unsupported model schema version {version}", path=path
            )
        encoder = Encoder.from_json(doc["encoder"])
        members = []
        for member, transform in zip(doc["members"], doc["target_transform"], strict=True):
            members.append(
                Network(
                    np.asarray(member["weights_hidden"], dtype=np.float64),
                    np.asarray(member["biases_hidden"], dtype=np.float64),
                    np.asarray(member["weights_out"], dtype=np.float64),
                    float(member["bias_out"]),
                    target_mean=float(transform["mean"]),
                    target_std=float(transform["std"]),
                )
            )
        if len(members) != doc["k"]:
            raise ParseError("member count does not match k", path=path)
        if doc["input_dim"] != encoder.input_dim:
            raise ParseError("input_dim does not match encoder", path=path)
        return Ensemble(members, encoder, doc["space_name"])
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad model file: {exc}", path=path) from exc
