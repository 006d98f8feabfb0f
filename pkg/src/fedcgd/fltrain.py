"""Federated averaging with CGD-aware scheduling on a softmax-regression model.

The model is a ``(C, d + 1)`` weight matrix whose last column is the bias.
Each round the available devices run ``tau`` mini-batch SGD steps from the
global model and report control-plane scalars (sigma estimate, label
distribution, loss, update norm). The server builds a scheduling instance
from those reports and the round's channel snapshot, aggregates the
scheduled models and refreshes its sigma / G estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import schedulers as sch
from .datagen import Dataset, DeviceDataset
from .objective import ObjectiveParams, variance_term

# devices this close to the global distribution carry no information about G
G_MIN_L1 = 1e-9

METRIC_FIELDS = (
    "round", "solver", "available", "scheduled", "bandwidth_used_hz", "wemd",
    "variance_term", "objective", "sigma_hat", "g_hat", "train_loss", "test_acc", "seed",
)


@dataclass(frozen=True)
class Hyperparams:
    eta: float = 0.1
    tau: int = 1
    batch: int = 32
    rounds: int = 50

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be >= 0")
        if self.tau < 0 or self.batch < 1 or self.rounds < 0:
            raise ValueError("need tau >= 0, batch >= 1, rounds >= 0")


def init_model(num_classes: int, feature_dim: int) -> np.ndarray:
    return np.zeros((num_classes, feature_dim + 1))


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _probs(model: np.ndarray, xa: np.ndarray) -> np.ndarray:
    logits = xa @ model.T
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(model: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its gradient."""
    if len(y) == 0:
        raise ValueError("empty batch")
    xa = _augment(x)
    p = _probs(model, xa)
    n = len(y)
    loss = -float(np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300))))
    p[np.arange(n), y] -= 1.0
    return loss, p.T @ xa / n


def per_sample_grads(model: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Stacked per-sample gradients, shape ``(n, C, d + 1)``."""
    xa = _augment(x)
    p = _probs(model, xa)
    p[np.arange(len(y)), y] -= 1.0
    return p[:, :, None] * xa[:, None, :]


def _batch_indices(size: int, batch: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(size, size=batch, replace=size < batch)


@dataclass
class LocalResult:
    model: np.ndarray
    sigma: float
    loss: float
    first_batch: np.ndarray = field(repr=False)


def _local_sgd(model, device: DeviceDataset, hp: Hyperparams, rng) -> LocalResult:
    w = model.copy()
    losses = []
    first = None
    for t in range(hp.tau):
        idx = _batch_indices(device.size, hp.batch, rng)
        if t == 0:
            first = idx
        loss, grad = loss_and_grad(w, device.features[idx], device.labels[idx])
        losses.append(loss)
        w -= hp.eta * grad
    if first is None:
        first = _batch_indices(device.size, hp.batch, rng)
    g = per_sample_grads(model, device.features[first], device.labels[first])
    return LocalResult(w, estimate_sigma_device(g), float(np.sum(losses)), first)


def local_update(model, device: DeviceDataset, hp: Hyperparams, rng) -> np.ndarray:
    """``tau`` sequential SGD steps on fresh batches of size ``batch``."""
    return _local_sgd(model, device, hp, rng).model


def aggregate(models, sizes) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    if sizes.size == 0:
        raise ValueError("cannot aggregate an empty schedule")
    alpha = sizes / sizes.sum()
    return np.tensordot(alpha, np.asarray(models), axes=1)


def estimate_sigma_device(grads: np.ndarray) -> float:
    """Root mean squared deviation of per-sample gradients from their mean."""
    g = np.asarray(grads).reshape(len(grads), -1)
    dev = g - g.mean(axis=0)
    return float(np.sqrt(np.mean(np.sum(dev * dev, axis=1))))


def estimate_sigma(device_sigmas, sizes) -> float:
    s = np.asarray(device_sigmas, dtype=float)
    alpha = np.asarray(sizes, dtype=float)
    alpha = alpha / alpha.sum()
    return float(np.sqrt(np.dot(alpha, s * s)))


def estimate_G(pseudo_grads, dists, global_dist, sizes, previous=None, per_class=False):
    """Gradient-dissimilarity scale from scheduled devices' pseudo-gradients.

    Returns the largest ``||f_v - F|| / ||p_v - p||_1`` over devices, or the
    per-class maxima over single-class devices when ``per_class`` is set.
    Falls back to ``previous`` when nothing is estimable.
    """
    f = np.asarray(pseudo_grads, dtype=float).reshape(len(pseudo_grads), -1)
    dists = np.asarray(dists, dtype=float)
    alpha = np.asarray(sizes, dtype=float)
    alpha = alpha / alpha.sum()
    big_f = alpha @ f
    l1 = np.abs(dists - np.asarray(global_dist)).sum(axis=1)
    ok = l1 >= G_MIN_L1
    ratio = np.zeros(len(f))
    ratio[ok] = np.linalg.norm(f[ok] - big_f, axis=1) / l1[ok]
    if not per_class:
        if not ok.any() or ratio[ok].max() <= 0:
            return previous
        return float(ratio[ok].max())
    num_classes = dists.shape[1]
    est = np.full(num_classes, np.nan) if previous is None else np.array(previous, dtype=float)
    fresh = np.zeros(num_classes, dtype=bool)
    for v in np.flatnonzero(ok):
        nz = np.flatnonzero(dists[v] > 0)
        if nz.size != 1 or ratio[v] <= 0:
            continue
        c = nz[0]
        est[c] = ratio[v] if not fresh[c] else max(est[c], ratio[v])
        fresh[c] = True
    if np.all(np.isnan(est)):
        return previous
    # classes never observed inherit the largest known estimate
    return np.where(np.isnan(est), np.nanmax(est), est)


def sampling_divergence(model, devices, batch: int, rng) -> float:
    """One draw of ``||sum_v alpha_v (batch grad - full local grad)||``."""
    sizes = np.array([d.size for d in devices], dtype=float)
    alpha = sizes / sizes.sum()
    total = 0.0
    for a, d in zip(alpha, devices):
        idx = _batch_indices(d.size, batch, rng)
        _, gb = loss_and_grad(model, d.features[idx], d.labels[idx])
        _, gf = loss_and_grad(model, d.features, d.labels)
        total = total + a * (gb - gf)
    return float(np.linalg.norm(total))


def evaluate(model: np.ndarray, test: Dataset) -> float:
    if len(test) == 0:
        raise ValueError("empty test set")
    pred = np.argmax(_augment(test.features) @ model.T, axis=1)
    return float(np.mean(pred == test.labels))


def device_rng(seed: int, rnd: int, device: int, stream: int = 0) -> np.random.Generator:
    """Generator keyed on (seed, round, device), independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence([seed, rnd, device, stream]))


@dataclass
class SolverConfig:
    name: str = "fscd"
    g_mode: str = "scalar"  # or "per-class"
    poc_subset: int | None = None
    smoothing: float | None = None

    def __post_init__(self):
        self.name = sch.SOLVER_ALIASES.get(self.name, self.name)
        if self.name not in {*sch.SOLVERS, "bc", "bn", "poc"}:
            raise ValueError(f"unknown solver {self.name!r}")
        if self.g_mode not in ("scalar", "per-class"):
            raise ValueError(f"unknown G mode {self.g_mode!r}")

    @property
    def uses_estimates(self) -> bool:
        return self.name in sch.SOLVERS


@dataclass
class TrainState:
    round: int
    global_model: np.ndarray
    sigma_hat: float | None = None
    g_hat: float | np.ndarray | None = None
    accumulated_loss: dict = field(default_factory=dict)
    grad_norms: dict = field(default_factory=dict)
    device_models: dict = field(default_factory=dict, repr=False)


@dataclass
class ChannelSnapshot:
    gains: np.ndarray
    min_bandwidths: np.ndarray
    total_bandwidth: float


@dataclass
class RoundMetrics:
    round: int
    solver: str
    available: int
    scheduled: int
    bandwidth_used_hz: float
    wemd: float
    variance_term: float
    objective: float
    sigma_hat: float
    g_hat: float
    train_loss: float
    test_acc: float
    seed: int
    skipped: bool = False
    members: tuple = ()

    def row(self) -> list:
        return [getattr(self, k) for k in METRIC_FIELDS]


def _smooth(old, new, factor):
    if factor is None or old is None or new is None:
        return new
    return factor * np.asarray(old) + (1 - factor) * np.asarray(new)


def _scalar(x) -> float:
    if x is None:
        return math.nan
    return float(np.max(x))


def run_round(
    state: TrainState,
    devices: list[DeviceDataset],
    snapshot: ChannelSnapshot,
    solver: SolverConfig,
    hp: Hyperparams,
    *,
    p_available: float,
    global_dist: np.ndarray,
    test: Dataset,
    train_pool: Dataset,
    seed: int,
) -> tuple[TrainState, RoundMetrics]:
    """One FedAvg round with scheduling; returns the new state and its metrics."""
    rnd = state.round
    num_classes = len(global_dist)
    avail_rng = device_rng(seed, rnd, 0, stream=1)
    available = np.flatnonzero(avail_rng.random(len(devices)) < p_available)

    w0 = state.global_model
    reports = {}
    for v in available:
        reports[int(v)] = _local_sgd(w0, devices[v], hp, device_rng(seed, rnd, int(v)))
    acc_loss = dict(state.accumulated_loss)
    norms = dict(state.grad_norms)
    scale = hp.tau * hp.eta
    for v, rep in reports.items():
        acc_loss[v] = acc_loss.get(v, 0.0) + rep.loss
        norms[v] = float(np.linalg.norm(rep.model - w0) / scale) if scale > 0 else 0.0

    def skip(n_avail, sigma_hat=state.sigma_hat):
        new_state = replace(state, round=rnd + 1, sigma_hat=sigma_hat,
                            accumulated_loss=acc_loss, grad_norms=norms, device_models={})
        metrics = RoundMetrics(
            rnd, solver.name, n_avail, 0, 0.0, math.nan, math.inf, math.inf,
            _scalar(sigma_hat), _scalar(state.g_hat),
            _pool_loss(w0, train_pool), evaluate(w0, test), seed, skipped=True,
        )
        return new_state, metrics

    if not reports:
        return skip(0)

    avail = np.array(sorted(reports))
    sizes = np.array([devices[v].size for v in avail], dtype=float)
    sigma_raw = estimate_sigma([reports[v].sigma for v in avail], sizes)
    sigma_hat = _smooth(state.sigma_hat, sigma_raw, solver.smoothing)
    sigma_hat = None if sigma_hat is None else float(sigma_hat)

    dists = np.array([devices[v].label_dist for v in avail])
    have_g = state.g_hat is not None
    if have_g:
        weights = np.broadcast_to(np.asarray(state.g_hat, dtype=float), (num_classes,)).copy()
    else:
        weights = np.ones(num_classes)
    params = ObjectiveParams(sigma_hat, hp.batch, weights)
    instance = sch.ProblemInstance(
        dists, snapshot.min_bandwidths[avail], global_dist, params, snapshot.total_bandwidth
    )

    name = solver.name
    if name in sch.SOLVERS and not have_g:
        name = "bc"  # bootstrap: no G estimate before the first aggregation
    if name == "bc":
        report = sch.best_channel(instance, snapshot.gains[avail])
    elif name == "bn":
        report = sch.best_norm(instance, [norms[v] for v in avail])
    elif name == "poc":
        report = sch.power_of_choice(
            instance, [acc_loss[v] for v in avail], solver.poc_subset,
            device_rng(seed, rnd, 0, stream=2),
        )
    elif name == "cd":
        report = sch.cd_schedule(instance, device_rng(seed, rnd, 0, stream=3))
    else:
        report = sch.SOLVERS[name](instance)

    local = list(report.schedule.members)
    if not local:
        return skip(len(avail), sigma_hat)
    chosen = avail[local]
    models = [reports[v].model for v in chosen]
    new_global = aggregate(models, sizes[local])

    g_hat = state.g_hat
    if scale > 0:
        pseudo = [(reports[v].model - w0) / scale for v in chosen]
        per_class = solver.g_mode == "per-class"
        g_raw = estimate_G(
            pseudo, dists[local], global_dist, sizes[local],
            previous=state.g_hat if per_class else None, per_class=per_class,
        )
        if g_raw is not None:
            g_hat = _smooth(state.g_hat, g_raw, solver.smoothing)
    if isinstance(g_hat, np.ndarray) and solver.g_mode == "scalar":
        g_hat = float(g_hat)

    group_l1 = float(np.abs(dists[local].mean(axis=0) - global_dist).sum())
    var = variance_term(len(local), params)
    obj = report.schedule.objective_value if have_g else math.nan
    new_state = TrainState(
        round=rnd + 1,
        global_model=new_global,
        sigma_hat=sigma_hat,
        g_hat=g_hat,
        accumulated_loss=acc_loss,
        grad_norms=norms,
        device_models={int(v): reports[v].model for v in chosen},
    )
    metrics = RoundMetrics(
        rnd, solver.name, len(avail), len(local), report.schedule.bandwidth_used,
        group_l1, var, obj, _scalar(sigma_hat), _scalar(g_hat),
        _pool_loss(new_global, train_pool), evaluate(new_global, test), seed,
        members=tuple(int(v) for v in chosen),
    )
    return new_state, metrics


def _pool_loss(model, pool: Dataset) -> float:
    return loss_and_grad(model, pool.features, pool.labels)[0]
