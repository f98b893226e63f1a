"""
Committee surrogates for one- and two-body hydrodynamic coefficients.

Every quantity of interest (QoI) gets its own committee of shallow
feedforward networks mapping the cluster inputs to the QoI on the whole
frequency grid:

    one-body:  [R, RD]          -> a, b, fe_re, fe_im
    two-body:  [R, RD, l, theta] -> a11, a12, b11, b12, fe1_re, fe1_im

Committees are grown by pool-based batch-mode query by committee: train,
rank the candidate pool by committee variance, cluster the most uncertain
fifth with k-means and send the centroids to the hydro oracle.
"""

import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import qmc
from sklearn.cluster import KMeans

from hydro_oracle import OneBodyOutputs, PairOutputs
from settings import __version__, worker_count
from wec_types import RADIUS_BOUNDS, SLENDERNESS_BOUNDS, DRAFT_BOUNDS, FrequencyGrid, WecGeometry

logger = logging.getLogger(__name__)

BUNDLE_FORMAT = "wecfarm-surrogate"
BUNDLE_VERSION = "1.0"

ONE_BODY_QOIS = ("a", "b", "fe_re", "fe_im")
TWO_BODY_QOIS = ("a11", "a12", "b11", "b12", "fe1_re", "fe1_im")
HISTORY_COLUMNS = ["round", "pool_var", "max_mse", "n_samples", "pool_var_max"]

SPLIT_FRACTIONS = (0.70, 0.15, 0.15)
POOL_CHUNK = 5000


class TrainingDivergedError(RuntimeError):
    """Raised when a committee member's loss becomes NaN or infinite."""


class BundleVersionError(ValueError):
    pass


class BundleChecksumError(ValueError):
    pass


class ExtrapolationWarning(UserWarning):
    """Surrogate evaluated outside the box it was trained on."""


def _logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# activation, derivative expressed through the activation's output
ACTIVATIONS: Dict[str, Tuple[Callable, Callable]] = {
    "tanh": (np.tanh, lambda h: 1.0 - h ** 2),
    "logistic": (_logistic, lambda h: h * (1.0 - h)),
}


def qoi_kind(qoi: str) -> str:
    if qoi in ONE_BODY_QOIS:
        return "one_body"
    if qoi in TWO_BODY_QOIS:
        return "two_body"
    raise ValueError(f"Unknown quantity of interest '{qoi}'")


@dataclass(frozen=True)
class NetSpec:
    input_width: int
    output_width: int
    hidden: Tuple[int, ...] = (32, 32)
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_width not in (2, 4):
            raise ValueError(f"Input width must be 2 or 4, got {self.input_width}")
        if self.output_width < 1:
            raise ValueError(f"Output width must be positive, got {self.output_width}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError(f"Hidden layer sizes must be positive, got {self.hidden}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation '{self.activation}'")

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.input_width,) + self.hidden + (self.output_width,)


@dataclass
class ShallowNetwork:
    """Feedforward network on scaled inputs/outputs; the last layer is linear."""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "tanh"

    @classmethod
    def initialize(cls, spec: NetSpec, rng: np.random.Generator) -> "ShallowNetwork":
        sizes = spec.layer_sizes
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-2], sizes[1:-1]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        # zero output layer: an untrained member predicts the target mean
        weights.append(np.zeros((sizes[-2], sizes[-1])))
        biases.append(np.zeros(sizes[-1]))
        return cls(weights, biases, spec.activation)

    def copy(self) -> "ShallowNetwork":
        return ShallowNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                              self.activation)

    def _layers(self, x: np.ndarray) -> List[np.ndarray]:
        act, _ = ACTIVATIONS[self.activation]
        outputs = [x]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            outputs.append(act(outputs[-1] @ w + b))
        outputs.append(outputs[-1] @ self.weights[-1] + self.biases[-1])
        return outputs

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._layers(x)[-1]

    def gradients(self, x: np.ndarray, y: np.ndarray) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
        """MSE loss on (x, y) and its gradients with respect to every weight and bias."""
        _, act_prime = ACTIVATIONS[self.activation]
        outputs = self._layers(x)
        residual = outputs[-1] - y
        loss = float(np.mean(residual ** 2))
        delta = 2.0 * residual / residual.size
        grad_w: List[np.ndarray] = [None] * len(self.weights)
        grad_b: List[np.ndarray] = [None] * len(self.biases)
        for layer in range(len(self.weights) - 1, -1, -1):
            grad_w[layer] = outputs[layer].T @ delta
            grad_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * act_prime(outputs[layer])
        return loss, grad_w, grad_b

    def to_dict(self) -> Dict:
        return {"weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases],
                "activation": self.activation}

    @classmethod
    def from_dict(cls, data: Dict) -> "ShallowNetwork":
        return cls([np.asarray(w, dtype=float) for w in data["weights"]],
                   [np.asarray(b, dtype=float) for b in data["biases"]],
                   data["activation"])


@dataclass
class Committee:
    """
    Networks sharing one NetSpec plus the scaling they were trained with.

    Inputs are mapped from [x_low, x_high] to [-1, 1]; outputs are
    standardized with y_mean / y_std.
    """
    qoi: str
    spec: NetSpec
    members: List[ShallowNetwork]
    x_low: np.ndarray
    x_high: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    history: List[Dict] = field(default_factory=list)

    @property
    def n_members(self) -> int:
        return len(self.members)

    def scale_inputs(self, x: np.ndarray) -> np.ndarray:
        span = np.where(self.x_high > self.x_low, self.x_high - self.x_low, 1.0)
        return 2.0 * (x - self.x_low) / span - 1.0

    def outside_box(self, x, tol: float = 1e-9) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        span = np.maximum(self.x_high - self.x_low, 1.0)
        margin = tol * span
        return np.any((x < self.x_low - margin) | (x > self.x_high + margin), axis=1)

    def member_outputs(self, x: np.ndarray) -> np.ndarray:
        """Unscaled predictions of every member, shape (n_members, n_points, n_outputs)."""
        xs = self.scale_inputs(x)
        return np.stack([m.forward(xs) * self.y_std + self.y_mean for m in self.members])

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.history, columns=HISTORY_COLUMNS)

    def to_dict(self) -> Dict:
        return {
            "qoi": self.qoi,
            "spec": {"input_width": self.spec.input_width, "output_width": self.spec.output_width,
                     "hidden": list(self.spec.hidden), "activation": self.spec.activation},
            "members": [m.to_dict() for m in self.members],
            "x_low": self.x_low.tolist(),
            "x_high": self.x_high.tolist(),
            "y_mean": self.y_mean.tolist(),
            "y_std": self.y_std.tolist(),
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Committee":
        return cls(
            qoi=data["qoi"],
            spec=NetSpec(**data["spec"]),
            members=[ShallowNetwork.from_dict(m) for m in data["members"]],
            x_low=np.asarray(data["x_low"], dtype=float),
            x_high=np.asarray(data["x_high"], dtype=float),
            y_mean=np.asarray(data["y_mean"], dtype=float),
            y_std=np.asarray(data["y_std"], dtype=float),
            history=list(data.get("history", [])),
        )


@dataclass
class Dataset:
    """Oracle-measured inputs and targets with a fixed train/val/test tag per row."""
    inputs: np.ndarray
    targets: np.ndarray
    splits: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        self.splits = np.asarray(self.splits, dtype=object)
        if not (len(self.inputs) == len(self.targets) == len(self.splits)):
            raise ValueError("Dataset inputs, targets and splits differ in length")

    @staticmethod
    def assign_splits(n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        n_train = max(1, int(round(SPLIT_FRACTIONS[0] * n))) if n else 0
        n_val = int(round(SPLIT_FRACTIONS[1] * n))
        n_val = min(n_val, n - n_train)
        tags = np.array(["train"] * n_train + ["val"] * n_val + ["test"] * (n - n_train - n_val),
                        dtype=object)
        return tags[rng.permutation(n)]

    @classmethod
    def build(cls, inputs, targets, seed: int) -> "Dataset":
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        return cls(inputs, targets, cls.assign_splits(len(inputs), seed))

    def extended(self, inputs, targets, seed: int) -> "Dataset":
        """New rows get their own seeded split; existing tags are kept."""
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        if len(inputs) == 0:
            return self
        return Dataset(np.vstack([self.inputs, inputs]),
                       np.vstack([self.targets, np.atleast_2d(targets)]),
                       np.concatenate([self.splits, self.assign_splits(len(inputs), seed)]))

    def __len__(self) -> int:
        return len(self.inputs)

    def part(self, tag: str) -> Tuple[np.ndarray, np.ndarray]:
        mask = self.splits == tag
        return self.inputs[mask], self.targets[mask]


@dataclass
class TrainMetrics:
    val_mse: List[float]
    test_mse: float
    epochs_run: List[int]

    @property
    def max_mse(self) -> float:
        return float(max(self.val_mse)) if self.val_mse else float("nan")


def init_committee(spec: NetSpec, n: int, seed: int, qoi: str = "") -> Committee:
    """n independently initialized members; deterministic per seed."""
    if n < 2:
        raise ValueError(f"A committee needs at least 2 members, got {n}")
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
    members = [ShallowNetwork.initialize(spec, rng) for rng in rngs]
    return Committee(qoi, spec, members,
                     x_low=-np.ones(spec.input_width), x_high=np.ones(spec.input_width),
                     y_mean=np.zeros(spec.output_width), y_std=np.ones(spec.output_width))


def _train_member(network: ShallowNetwork, x_train, y_train, x_val, y_val, epochs: int,
                  learning_rate: float, batch_size: int, patience: int,
                  subsample_fraction: float, seed: int, member: int):
    rng = np.random.default_rng(seed)
    n_sub = max(1, int(math.ceil(subsample_fraction * len(x_train))))
    chosen = rng.choice(len(x_train), size=n_sub, replace=False)
    xs, ys = x_train[chosen], y_train[chosen]
    if len(x_val) == 0:
        x_val, y_val = xs, ys

    net = network.copy()
    params = net.weights + net.biases
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    best = net.copy()
    best_loss = float(np.mean((net.forward(x_val) - y_val) ** 2))
    stale = 0
    epochs_run = 0
    for epoch in range(epochs):
        order = rng.permutation(n_sub)
        for start in range(0, n_sub, batch_size):
            batch = order[start:start + batch_size]
            loss, grad_w, grad_b = net.gradients(xs[batch], ys[batch])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"Member {member} of committee diverged at epoch {epoch} (loss={loss})")
            step += 1
            for p, g, m, v in zip(params, grad_w + grad_b, m_state, v_state):
                m *= beta1
                m += (1.0 - beta1) * g
                v *= beta2
                v += (1.0 - beta2) * g ** 2
                m_hat = m / (1.0 - beta1 ** step)
                v_hat = v / (1.0 - beta2 ** step)
                p -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        epochs_run = epoch + 1
        val_loss = float(np.mean((net.forward(x_val) - y_val) ** 2))
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(
                f"Member {member} of committee diverged at epoch {epoch} (validation loss={val_loss})")
        if val_loss < best_loss:
            best_loss, best, stale = val_loss, net.copy(), 0
        else:
            stale += 1
            if stale >= patience:
                break
    return best, epochs_run


def _mse(committee: Committee, network: ShallowNetwork, x: np.ndarray, y: np.ndarray) -> float:
    if len(x) == 0:
        return float("nan")
    pred = network.forward(committee.scale_inputs(x)) * committee.y_std + committee.y_mean
    return float(np.mean((pred - y) ** 2))


def held_out_mse(committee: Committee, inputs, targets) -> float:
    """MSE of the committee mean, averaged over points and outputs."""
    mean, _ = predict(committee, inputs, warn=False)
    return float(np.mean((mean - np.atleast_2d(targets)) ** 2))


def train(committee: Committee, data: Dataset, epochs: int = 500, seed: int = 0,
          learning_rate: float = 1e-2, batch_size: int = 64, patience: int = 25,
          subsample_fraction: float = 0.8, box: Optional[Tuple[np.ndarray, np.ndarray]] = None,
          n_jobs: Optional[int] = None) -> Tuple[Committee, TrainMetrics]:
    """
    Adam mini-batch training of every member on its own sub-sample of the
    training split, with early stopping on the validation split.

    Args:
        committee: Initialized or previously trained committee
        data: Dataset with at least one training row
        epochs: Epoch budget per member; 0 returns the committee unchanged
        seed: Seeds sub-sampling and batch order
        box: Input box for scaling; defaults to the dataset's bounding box

    Returns:
        (trained committee, metrics in unscaled QoI units)
    """
    if len(data) == 0:
        raise ValueError("Cannot train on an empty dataset")
    x_train, y_train = data.part("train")
    if len(x_train) == 0:
        raise ValueError("Dataset has no training rows")
    x_val, y_val = data.part("val")
    x_test, y_test = data.part("test")

    if epochs == 0:
        val = [_mse(committee, m, x_val, y_val) for m in committee.members]
        test = held_out_mse(committee, x_test, y_test) if len(x_test) else float("nan")
        return committee, TrainMetrics(val, test, [0] * committee.n_members)

    if box is None:
        box = (data.inputs.min(axis=0), data.inputs.max(axis=0))
    y_mean = y_train.mean(axis=0)
    y_std = y_train.std(axis=0)
    y_std = np.where(y_std > 1e-12, y_std, 1.0)
    scaled = Committee(committee.qoi, committee.spec, committee.members,
                       np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float),
                       y_mean, y_std, list(committee.history))

    def prepare(x, y):
        return scaled.scale_inputs(x), (y - y_mean) / y_std

    xs_train, ys_train = prepare(x_train, y_train)
    xs_val, ys_val = prepare(x_val, y_val)
    seeds = np.random.SeedSequence(seed).generate_state(committee.n_members)
    n_jobs = worker_count() if n_jobs is None else n_jobs
    results = Parallel(n_jobs=min(n_jobs, committee.n_members))(
        delayed(_train_member)(member, xs_train, ys_train, xs_val, ys_val, epochs, learning_rate,
                               batch_size, patience, subsample_fraction, int(s), idx)
        for idx, (member, s) in enumerate(zip(committee.members, seeds)))

    scaled.members = [net for net, _ in results]
    val = [_mse(scaled, m, x_val, y_val) if len(x_val) else _mse(scaled, m, x_train, y_train)
           for m in scaled.members]
    test = held_out_mse(scaled, x_test, y_test) if len(x_test) else float("nan")
    metrics = TrainMetrics(val, test, [n for _, n in results])
    logger.debug("Trained %s committee: max val MSE %.3e, test MSE %.3e, epochs %s",
                 committee.qoi, metrics.max_mse, test, metrics.epochs_run)
    return scaled, metrics


def predict(committee: Committee, inputs, warn: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Committee mean and population variance per output.

    Inputs outside the training box raise an ExtrapolationWarning and are
    still evaluated.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    if warn:
        outside = committee.outside_box(x)
        if np.any(outside):
            warnings.warn(f"{int(outside.sum())} input(s) outside the {committee.qoi} training box",
                          ExtrapolationWarning, stacklevel=2)
    outputs = committee.member_outputs(x)
    return outputs.mean(axis=0), outputs.var(axis=0)


def ranking_variance(variance: np.ndarray) -> np.ndarray:
    """Per-point variance averaged over output dimensions."""
    return np.asarray(variance).mean(axis=-1)


def kmeans(points, k: int, seed: int) -> np.ndarray:
    """
    Lloyd k-means with seeded k-means++ initialization.

    Empty clusters are re-seeded at the point farthest from its centroid.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if not 1 <= k <= len(points):
        raise ValueError(f"k must lie in [1, {len(points)}], got {k}")
    model = KMeans(n_clusters=k, n_init=1, random_state=seed, max_iter=300).fit(points)
    return model.cluster_centers_


@dataclass(frozen=True)
class QbcConfig:
    kind: str
    committee_size: int
    pool_size: int
    batch_size: int
    interior_points: int
    hidden: Tuple[int, ...] = (32, 32)
    activation: str = "tanh"
    top_fraction: float = 0.2
    k_max: int = 20
    var_tol: float = 1e-3
    mse_tol: float = 1e-3
    epochs: int = 500
    learning_rate: float = 1e-2
    minibatch: int = 64
    patience: int = 25
    subsample_fraction: float = 0.8
    distance_range: Tuple[float, float] = (11.0, 1001.0)
    safety_distance: float = 10.0

    def __post_init__(self):
        if self.kind not in ("one_body", "two_body"):
            raise ValueError(f"Unknown cluster kind '{self.kind}'")
        if not 0.0 < self.top_fraction <= 1.0:
            raise ValueError(f"top_fraction must lie in (0, 1], got {self.top_fraction}")

    @classmethod
    def from_settings(cls, settings: Dict, kind: str) -> "QbcConfig":
        s = settings["surrogate"]
        suffix = "one_body" if kind == "one_body" else "two_body"
        return cls(
            kind=kind,
            committee_size=s[f"committee_{suffix}"],
            pool_size=s[f"pool_{suffix}"],
            batch_size=s[f"batch_{suffix}"],
            interior_points=s[f"interior_{suffix}"],
            hidden=tuple(s["hidden"]),
            activation=s["activation"],
            top_fraction=s["top_fraction"],
            k_max=s["k_max"],
            var_tol=s["var_tol"],
            mse_tol=s["mse_tol"],
            epochs=s["epochs"],
            learning_rate=s["learning_rate"],
            minibatch=s["batch_size"],
            patience=s["patience"],
            subsample_fraction=s["subsample_fraction"],
            distance_range=tuple(s["distance_range_m"]),
            safety_distance=settings["problem"]["safety_distance_m"],
        )

    @property
    def input_width(self) -> int:
        return 2 if self.kind == "one_body" else 4

    def box(self) -> Tuple[np.ndarray, np.ndarray]:
        low = [RADIUS_BOUNDS[0], SLENDERNESS_BOUNDS[0]]
        high = [RADIUS_BOUNDS[1], SLENDERNESS_BOUNDS[1]]
        if self.kind == "two_body":
            low += [self.distance_range[0], 0.0]
            high += [self.distance_range[1], np.pi]
        return np.array(low), np.array(high)


def admissible(x: np.ndarray, config: QbcConfig) -> np.ndarray:
    """Rows whose draft lies in bounds and, for pairs, whose spacing clears 2R + s_d."""
    x = np.atleast_2d(x)
    draft = x[:, 0] / x[:, 1]
    ok = (draft >= DRAFT_BOUNDS[0] - 1e-12) & (draft <= DRAFT_BOUNDS[1] + 1e-12)
    if config.kind == "two_body":
        ok &= x[:, 2] >= 2.0 * x[:, 0] + config.safety_distance - 1e-9
    return ok


def _project(x: np.ndarray, config: QbcConfig) -> np.ndarray:
    x = np.array(x, dtype=float)
    low, high = config.box()
    rd_low = np.maximum(low[1], x[:, 0] / DRAFT_BOUNDS[1])
    rd_high = np.minimum(high[1], x[:, 0] / DRAFT_BOUNDS[0])
    x[:, 1] = np.clip(x[:, 1], rd_low, rd_high)
    if config.kind == "two_body":
        x[:, 2] = np.clip(np.maximum(x[:, 2], 2.0 * x[:, 0] + config.safety_distance),
                          low[2], high[2])
    return x


def rejection_sample(sampler: Callable[[int], np.ndarray], n: int, config: QbcConfig) -> np.ndarray:
    kept = []
    total = 0
    for _ in range(1000):
        if total >= n:
            break
        batch = sampler(max(2 * (n - total), 16))
        batch = batch[admissible(batch, config)]
        kept.append(batch)
        total += len(batch)
    if total < n:
        raise RuntimeError(f"Could not draw {n} admissible {config.kind} inputs")
    return np.vstack(kept)[:n]


def initial_design(config: QbcConfig, seed: int) -> np.ndarray:
    """Box corners projected into the admissible region plus Latin-hypercube interior points."""
    low, high = config.box()
    d = len(low)
    corners = np.array([[high[j] if (i >> j) & 1 else low[j] for j in range(d)]
                        for i in range(2 ** d)])
    corners = np.unique(_project(corners, config), axis=0)
    lhs = qmc.LatinHypercube(d=d, seed=seed)
    interior = rejection_sample(lambda m: qmc.scale(lhs.random(m), low, high),
                                 config.interior_points, config)
    return np.vstack([corners, interior])


def candidate_pool(config: QbcConfig, seed: int) -> np.ndarray:
    low, high = config.box()
    rng = np.random.default_rng(seed)
    return rejection_sample(lambda m: rng.uniform(low, high, (m, len(low))),
                             config.pool_size, config)


class QueryOracle:
    """
    Memoized oracle queries for one cluster kind.

    A query evaluates every QoI of its kind at once, so committees for
    different QoIs share measured points.
    """

    def __init__(self, source, grid: FrequencyGrid, kind: str):
        self.source = source
        self.grid = grid
        self.kind = kind
        self.calls = 0
        self._memo: Dict[Tuple[float, ...], Dict[str, np.ndarray]] = {}

    def __call__(self, x) -> Dict[str, np.ndarray]:
        key = tuple(float(v) for v in x)
        if key not in self._memo:
            self.calls += 1
            geom = WecGeometry(key[0], key[1])
            if self.kind == "one_body":
                out = self.source.single(geom, self.grid)
                values = {"a": out.a, "b": out.b, "fe_re": out.fe_re, "fe_im": out.fe_im}
            else:
                out = self.source.pairs(geom, [key[2]], [key[3]], self.grid)[0]
                values = {"a11": out.a11, "a12": out.a12, "b11": out.b11, "b12": out.b12,
                          "fe1_re": out.fe_re, "fe1_im": out.fe_im}
            self._memo[key] = {k: np.array(v, dtype=float) for k, v in values.items()}
        return self._memo[key]

    def measure(self, points: np.ndarray, qoi: str) -> Tuple[np.ndarray, np.ndarray]:
        """Evaluate rows, dropping (and logging) the ones the oracle rejects."""
        inputs, targets = [], []
        for x in np.atleast_2d(points):
            try:
                values = self(x)
            except (ValueError, RuntimeError) as exc:
                logger.warning("Oracle failed at %s for %s: %s", np.round(x, 6).tolist(), qoi, exc)
                continue
            inputs.append(x)
            targets.append(values[qoi])
        width = len(self.grid)
        if not inputs:
            return np.empty((0, np.atleast_2d(points).shape[1])), np.empty((0, width))
        return np.array(inputs), np.array(targets)


def pool_variance(committee: Committee, pool: np.ndarray) -> np.ndarray:
    """Ranking variance of every pool point, evaluated in chunks."""
    out = []
    for start in range(0, len(pool), POOL_CHUNK):
        _, var = predict(committee, pool[start:start + POOL_CHUNK], warn=False)
        out.append(ranking_variance(var))
    return np.concatenate(out) if out else np.empty(0)


def _committee_for(qoi: str, config: QbcConfig, grid: FrequencyGrid, seed: int) -> Committee:
    spec = NetSpec(config.input_width, len(grid), config.hidden, config.activation)
    return init_committee(spec, config.committee_size, seed, qoi)


def _fit(qoi: str, data: Dataset, config: QbcConfig, grid: FrequencyGrid, seed: int,
         n_jobs: Optional[int]) -> Tuple[Committee, TrainMetrics]:
    committee = _committee_for(qoi, config, grid, seed)
    return train(committee, data, config.epochs, seed, config.learning_rate, config.minibatch,
                 config.patience, config.subsample_fraction, box=config.box(), n_jobs=n_jobs)


def qbc_run(qoi: str, oracle: QueryOracle, config: QbcConfig, seed: int,
            n_jobs: Optional[int] = None) -> Tuple[Committee, Dataset]:
    """
    Pool-based batch-mode query by committee for one QoI.

    Stops when the mean pool variance and the largest member validation MSE
    are both within tolerance, or after k_max acquisition rounds. The
    history has one row per training round.
    """
    if qoi_kind(qoi) != config.kind:
        raise ValueError(f"QoI '{qoi}' does not belong to {config.kind} clusters")
    seeds = np.random.SeedSequence(seed).generate_state(4)
    pool = candidate_pool(config, int(seeds[0]))
    x0, y0 = oracle.measure(initial_design(config, int(seeds[1])), qoi)
    data = Dataset.build(x0, y0, int(seeds[2]))
    round_seeds = np.random.SeedSequence(int(seeds[3])).generate_state(config.k_max + 1)
    history = []

    for rnd in range(config.k_max + 1):
        committee, metrics = _fit(qoi, data, config, oracle.grid, int(round_seeds[rnd]), n_jobs)
        variance = pool_variance(committee, pool)
        row = {"round": rnd, "pool_var": float(variance.mean()), "max_mse": metrics.max_mse,
               "n_samples": len(data), "pool_var_max": float(variance.max())}
        history.append(row)
        logger.info("QBC %s round %d: pool var %.3e (max %.3e), max MSE %.3e, %d samples",
                    qoi, rnd, row["pool_var"], row["pool_var_max"], row["max_mse"], len(data))
        if row["pool_var"] <= config.var_tol and row["max_mse"] <= config.mse_tol:
            break
        if rnd == config.k_max:
            logger.info("QBC %s stopped at the round cap (%d)", qoi, config.k_max)
            break
        n_top = max(1, int(math.ceil(config.top_fraction * len(pool))))
        top = pool[np.argsort(-variance, kind="stable")[:n_top]]
        centroids = kmeans(top, min(config.batch_size, len(top)), int(round_seeds[rnd]))
        x_new, y_new = oracle.measure(centroids, qoi)
        data = data.extended(x_new, y_new, int(round_seeds[rnd]))

    committee.history = history
    return committee, data


def random_sampling_baseline(qoi: str, oracle: QueryOracle, config: QbcConfig, n_samples: int,
                             seed: int, n_jobs: Optional[int] = None) -> Tuple[Committee, Dataset]:
    """Same committee trained on uniformly random admissible inputs."""
    rng = np.random.default_rng(seed)
    low, high = config.box()
    points = rejection_sample(lambda m: rng.uniform(low, high, (m, len(low))), n_samples, config)
    x, y = oracle.measure(points, qoi)
    data = Dataset.build(x, y, seed)
    committee, _ = _fit(qoi, data, config, oracle.grid, seed, n_jobs)
    return committee, data


@dataclass
class SurrogateBundle:
    grid: FrequencyGrid
    committees: Dict[str, Committee]
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [q for q in ONE_BODY_QOIS + TWO_BODY_QOIS if q not in self.committees]
        if missing:
            raise ValueError(f"Bundle is missing committees for {missing}")

    def to_dict(self) -> Dict:
        return {
            "grid": {"values": list(self.grid.values), "depth": self.grid.depth,
                     "g": self.grid.g, "rho": self.grid.rho},
            "committees": {q: c.to_dict() for q, c in self.committees.items()},
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SurrogateBundle":
        g = data["grid"]
        grid = FrequencyGrid(tuple(g["values"]), depth=g["depth"], g=g["g"], rho=g["rho"])
        return cls(grid, {q: Committee.from_dict(c) for q, c in data["committees"].items()},
                   data.get("meta", {}))


def train_bundle(source, grid: FrequencyGrid, one_body: QbcConfig, two_body: QbcConfig,
                 seed: int, n_jobs: Optional[int] = None) -> SurrogateBundle:
    """Run QBC for every QoI; committees of one kind share a memoized oracle."""
    oracles = {"one_body": QueryOracle(source, grid, "one_body"),
               "two_body": QueryOracle(source, grid, "two_body")}
    configs = {"one_body": one_body, "two_body": two_body}
    qoi_seeds = np.random.SeedSequence(seed).generate_state(len(ONE_BODY_QOIS + TWO_BODY_QOIS))
    committees = {}
    for qoi, qoi_seed in zip(ONE_BODY_QOIS + TWO_BODY_QOIS, qoi_seeds):
        kind = qoi_kind(qoi)
        committees[qoi], _ = qbc_run(qoi, oracles[kind], configs[kind], int(qoi_seed), n_jobs)
    meta = {"version": __version__, "source": getattr(source, "name", type(source).__name__),
            "seed": seed, "oracle_calls": {k: o.calls for k, o in oracles.items()}}
    logger.info("Bundle trained with %d one-body and %d two-body oracle calls",
                oracles["one_body"].calls, oracles["two_body"].calls)
    return SurrogateBundle(grid, committees, meta)


def _checksum(payload: Dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_bundle(bundle: SurrogateBundle, path: str, meta: Optional[Dict] = None):
    payload = bundle.to_dict()
    document = {"format": BUNDLE_FORMAT, "version": BUNDLE_VERSION, "meta": meta or {},
                "checksum": _checksum(payload), "payload": payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh)


def load_bundle(path: str) -> SurrogateBundle:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        document = json.loads(text)
        payload = document["payload"]
        stored = document["checksum"]
        version = document["version"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise BundleChecksumError(f"Bundle file {path} is unreadable: {exc}") from exc
    if str(version).split(".")[0] != BUNDLE_VERSION.split(".")[0]:
        raise BundleVersionError(f"Bundle version {version} is not compatible with {BUNDLE_VERSION}")
    if _checksum(payload) != stored:
        raise BundleChecksumError(f"Bundle file {path} failed its checksum")
    return SurrogateBundle.from_dict(payload)


class SurrogateSource:
    """Coefficient source answering one- and two-body queries from a bundle."""

    def __init__(self, bundle: SurrogateBundle):
        self.bundle = bundle
        self.extrapolations = 0
        self.name = "surrogate"

    def _check_grid(self, grid: FrequencyGrid):
        if not np.array_equal(grid.omega, self.bundle.grid.omega):
            raise ValueError("Frequency grid differs from the grid the surrogate was trained on")

    def _predict(self, qois: Sequence[str], x: np.ndarray) -> Dict[str, np.ndarray]:
        outside = self.bundle.committees[qois[0]].outside_box(x)
        if np.any(outside):
            self.extrapolations += int(outside.sum())
            warnings.warn(f"{int(outside.sum())} surrogate input(s) outside the training box",
                          ExtrapolationWarning, stacklevel=3)
        return {q: predict(self.bundle.committees[q], x, warn=False)[0] for q in qois}

    def single(self, geom: WecGeometry, grid: FrequencyGrid) -> OneBodyOutputs:
        self._check_grid(grid)
        out = self._predict(ONE_BODY_QOIS, np.array([[geom.radius, geom.slenderness]]))
        return OneBodyOutputs(grid.omega, out["a"][0], out["b"][0], out["fe_re"][0],
                              out["fe_im"][0])

    def pairs(self, geom: WecGeometry, distances: Sequence[float], thetas: Sequence[float],
              grid: FrequencyGrid) -> List[PairOutputs]:
        self._check_grid(grid)
        if len(distances) == 0:
            return []
        x = np.column_stack([np.full(len(distances), geom.radius),
                             np.full(len(distances), geom.slenderness),
                             np.asarray(distances, dtype=float), np.asarray(thetas, dtype=float)])
        out = self._predict(TWO_BODY_QOIS, x)
        return [PairOutputs(grid.omega, out["a11"][i], out["a12"][i], out["b11"][i],
                            out["b12"][i], out["fe1_re"][i], out["fe1_im"][i])
                for i in range(len(x))]
