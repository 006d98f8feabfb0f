"""Device-scheduling solvers for one round.

Every solver takes a :class:`ProblemInstance` and returns a
:class:`SolveReport` whose schedule respects the bandwidth budget and never
contains an infeasible device (``min_bandwidths[v] == inf``).

Solvers
-------
greedy_schedule
    Add the device with the largest WEMD reduction while the objective drops.
fscd_schedule
    Fix-sum coordinate descent: swap search at each schedule size with an
    early exit once smaller schedules cannot win.
cd_schedule
    Plain single-flip coordinate descent from a random start.
brute_force
    Exhaustive enumeration, the exact oracle for small fleets.
best_channel, best_norm, power_of_choice
    Best-effort fills in a sorted order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .objective import ObjectiveParams, variance_term

# minimum objective decrease accepted by the descent loops
STRICT_DECREASE = 1e-12
MAX_ORACLE_DEVICES = 24


@dataclass(frozen=True)
class ProblemInstance:
    """One round's scheduling problem.

    ``device_dists`` is a (V, C) array; rows are usually class distributions
    but only non-negativity is enforced (the partition reduction stores raw
    integers there).
    """

    device_dists: np.ndarray
    min_bandwidths: np.ndarray
    global_dist: np.ndarray
    params: ObjectiveParams
    total_bandwidth: float

    def __post_init__(self):
        dists = np.atleast_2d(np.asarray(self.device_dists, dtype=float))
        bws = np.asarray(self.min_bandwidths, dtype=float).reshape(-1)
        glob = np.asarray(self.global_dist, dtype=float).reshape(-1)
        object.__setattr__(self, "device_dists", dists)
        object.__setattr__(self, "min_bandwidths", bws)
        object.__setattr__(self, "global_dist", glob)
        v, c = dists.shape
        if v < 1:
            raise ValueError("instance needs at least one device")
        if bws.shape != (v,):
            raise ValueError(f"expected {v} minimum bandwidths, got {bws.shape[0]}")
        if glob.shape != (c,) or self.params.class_weights.shape != (c,):
            raise ValueError("global distribution / class weights do not match C")
        if np.any(dists < 0) or not np.all(np.isfinite(dists)):
            raise ValueError("device distributions must be finite and >= 0")
        if np.any(glob < 0) or not np.all(np.isfinite(glob)):
            raise ValueError("global distribution must be finite and >= 0")
        if np.any(np.isnan(bws)) or np.any(bws[np.isfinite(bws)] <= 0):
            raise ValueError("feasible devices need a positive minimum bandwidth")
        if not (self.total_bandwidth > 0 and math.isfinite(self.total_bandwidth)):
            raise ValueError("total bandwidth must be positive and finite")

    @property
    def num_devices(self) -> int:
        return self.device_dists.shape[0]

    @property
    def feasible(self) -> np.ndarray:
        return np.isfinite(self.min_bandwidths) & (self.min_bandwidths <= self.total_bandwidth)

    def wemd_of(self, members: Sequence[int]) -> float:
        if len(members) == 0:
            return math.inf
        group = self.device_dists[list(members)].mean(axis=0)
        return float(np.dot(self.params.class_weights, np.abs(group - self.global_dist)))

    def to_json(self) -> dict:
        return {
            "global_dist": self.global_dist.tolist(),
            "devices": [
                {"dist": row.tolist(), "min_bw_hz": float(bw) if math.isfinite(bw) else None}
                for row, bw in zip(self.device_dists, self.min_bandwidths)
            ],
            "sigma": self.params.sigma,
            "batch": self.params.batch_size,
            "g_weights": self.params.class_weights.tolist(),
            "total_bw_hz": self.total_bandwidth,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ProblemInstance":
        try:
            devices = doc["devices"]
            dists, bws = [], []
            for i, dev in enumerate(devices):
                try:
                    dists.append([float(x) for x in dev["dist"]])
                    bw = dev["min_bw_hz"]
                    bws.append(math.inf if bw is None else float(bw))
                except (KeyError, TypeError, ValueError) as exc:
                    raise InstanceFormatError(f"devices[{i}]: {exc!r}") from exc
            params = ObjectiveParams(
                float(doc["sigma"]), int(doc["batch"]), np.asarray(doc["g_weights"], dtype=float)
            )
            return cls(
                np.asarray(dists),
                np.asarray(bws),
                np.asarray(doc["global_dist"], dtype=float),
                params,
                float(doc["total_bw_hz"]),
            )
        except KeyError as exc:
            raise InstanceFormatError(f"missing field {exc.args[0]!r}") from exc
        except InstanceFormatError:
            raise
        except (TypeError, ValueError) as exc:
            raise InstanceFormatError(str(exc)) from exc


class InstanceFormatError(ValueError):
    """A serialized instance could not be decoded."""


def load_instance(path) -> ProblemInstance:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    try:
        return ProblemInstance.from_json(doc)
    except InstanceFormatError as exc:
        raise InstanceFormatError(f"{path}: {exc}") from exc


def save_instance(instance: ProblemInstance, path) -> None:
    Path(path).write_text(json.dumps(instance.to_json(), indent=2) + "\n")


def objective(members: Sequence[int], instance: ProblemInstance) -> float:
    """Variance term plus WEMD of ``members``; ``inf`` for the empty schedule."""
    members = list(members)
    if not members:
        return math.inf
    bad = [v for v in members if not math.isfinite(instance.min_bandwidths[v])]
    if bad:
        raise ValueError(f"schedule contains infeasible devices {bad}")
    return variance_term(len(members), instance.params) + instance.wemd_of(members)


@dataclass(frozen=True)
class Schedule:
    members: tuple[int, ...]
    bandwidth_used: float
    objective_value: float

    @classmethod
    def of(cls, members, instance: ProblemInstance) -> "Schedule":
        members = tuple(sorted(int(v) for v in members))
        used = float(instance.min_bandwidths[list(members)].sum()) if members else 0.0
        return cls(members, used, objective(members, instance))

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class SolveReport:
    schedule: Schedule
    iterations: int
    evaluations: int
    solver_name: str
    no_feasible: bool = False
    trace: list = field(default_factory=list, compare=False, repr=False)

    def to_json(self) -> dict:
        s = self.schedule
        return {
            "solver": self.solver_name,
            "members": list(s.members),
            "objective": s.objective_value if math.isfinite(s.objective_value) else None,
            "bandwidth_used_hz": s.bandwidth_used,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "no_feasible": self.no_feasible,
        }


def _empty_report(instance, name) -> SolveReport:
    return SolveReport(Schedule.of((), instance), 0, 0, name, no_feasible=True)


class _Evaluator:
    """Vectorized objective over candidate groups given their class sums."""

    def __init__(self, instance: ProblemInstance):
        self.d = instance.device_dists
        self.p = instance.global_dist
        self.g = instance.params.class_weights
        self.sigma = instance.params.sigma
        self.b = instance.params.batch_size
        self.count = 0

    def wemd(self, sums: np.ndarray, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        group = sums / np.maximum(n, 1)[..., None]
        self.count += int(np.prod(sums.shape[:-1]))
        # the empty group has no distribution; var() already makes it +inf
        return np.where(n > 0, np.abs(group - self.p) @ self.g, np.inf)

    def var(self, n):
        n = np.asarray(n, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(n > 0, self.sigma / np.sqrt(np.maximum(n, 1) * self.b), np.inf)

    def total(self, sums, n):
        return self.var(n) + self.wemd(sums, n)


def greedy_schedule(instance: ProblemInstance) -> SolveReport:
    """Greedy growth by largest WEMD decrease, restricted to budget-fitting devices."""
    feasible = instance.feasible
    if not feasible.any():
        return _empty_report(instance, "gs")
    ev = _Evaluator(instance)
    bw = instance.min_bandwidths
    budget = instance.total_bandwidth
    remaining = list(np.flatnonzero(feasible))
    members: list[int] = []
    sums = np.zeros_like(instance.global_dist)
    used = 0.0
    current = math.inf
    iterations = 0
    while remaining:
        iterations += 1
        cand = np.array([u for u in remaining if used + bw[u] <= budget], dtype=int)
        if cand.size == 0:
            break
        n = len(members) + 1
        w_new = ev.wemd(sums + ev.d[cand], np.full(cand.size, n))
        k = int(np.argmin(w_new))
        best = int(cand[k])
        new_obj = float(ev.var(n)) + float(w_new[k])
        if not new_obj < current - STRICT_DECREASE:
            break
        members.append(best)
        remaining.remove(best)
        sums = sums + ev.d[best]
        used += bw[best]
        current = new_obj
    return SolveReport(Schedule.of(members, instance), iterations, ev.count, "gs")


def _swap_descent(instance, ev, members, used):
    """Best-swap local search at fixed size; returns (members, used, iterations, value)."""
    bw = instance.min_bandwidths
    budget = instance.total_bandwidth
    feasible = instance.feasible
    n = len(members)
    var = float(ev.var(n))
    sums = ev.d[members].sum(axis=0)
    current = var + float(ev.wemd(sums[None], [n])[0])
    iterations = 0
    while True:
        iterations += 1
        inside = np.array(sorted(members), dtype=int)
        mask = feasible.copy()
        mask[inside] = False
        outside = np.flatnonzero(mask)
        if outside.size == 0:
            break
        new_used = used - bw[inside][:, None] + bw[outside][None, :]
        ok = new_used <= budget
        if not ok.any():
            break
        cand_sums = sums[None, None, :] - ev.d[inside][:, None, :] + ev.d[outside][None, :, :]
        vals = var + ev.wemd(cand_sums, np.full(ok.shape, n))
        vals = np.where(ok, vals, np.inf)
        flat = int(np.argmin(vals))
        i, j = divmod(flat, outside.size)
        if not vals[i, j] < current - STRICT_DECREASE:
            break
        v_out, u_in = int(inside[i]), int(outside[j])
        members = [m for m in members if m != v_out] + [u_in]
        sums = sums - ev.d[v_out] + ev.d[u_in]
        used = float(new_used[i, j])
        current = float(vals[i, j])
    return members, used, iterations, current


def fscd_schedule(instance: ProblemInstance, early_exit: bool = True) -> SolveReport:
    """Fix-sum coordinate descent over schedule sizes, largest size first."""
    feasible = instance.feasible
    if not feasible.any():
        return _empty_report(instance, "fscd")
    ev = _Evaluator(instance)
    bw = instance.min_bandwidths
    order = np.flatnonzero(feasible)
    order = order[np.argsort(bw[order], kind="stable")]
    cum = np.cumsum(bw[order])
    s_max = int(np.searchsorted(cum, instance.total_bandwidth, side="right"))
    sigma, b = instance.params.sigma, instance.params.batch_size
    best_members, best_val = None, math.inf
    iterations = 0
    trace = []
    for s in range(s_max, 0, -1):
        members = [int(v) for v in order[:s]]
        used = float(cum[s - 1])
        members, used, its, val = _swap_descent(instance, ev, members, used)
        iterations += its
        wemd_s = val - sigma / math.sqrt(s * b)
        trace.append((s, tuple(sorted(members)), val))
        if val < best_val:
            best_members, best_val = members, val
        if early_exit:
            smaller_bound = sigma / math.sqrt((s - 1) * b) if s > 1 else math.inf
            if wemd_s + sigma / math.sqrt(s * b) <= smaller_bound:
                break
    return SolveReport(
        Schedule.of(best_members, instance), iterations, ev.count, "fscd", trace=trace
    )


def cd_schedule(instance: ProblemInstance, rng: np.random.Generator) -> SolveReport:
    """Single-flip coordinate descent from a random budget-feasible start."""
    feasible = instance.feasible
    if not feasible.any():
        return _empty_report(instance, "cd")
    ev = _Evaluator(instance)
    bw = instance.min_bandwidths
    budget = instance.total_bandwidth
    feas_idx = np.flatnonzero(feasible)
    x = np.zeros(instance.num_devices, dtype=bool)
    x[feas_idx] = rng.random(feas_idx.size) < 0.5
    # repair an over-budget start by dropping random members
    while bw[x].sum() > budget:
        x[rng.choice(np.flatnonzero(x))] = False
    n = int(x.sum())
    sums = ev.d[x].sum(axis=0)
    used = float(bw[x].sum())
    current = float(ev.total(sums[None], [n])[0]) if n else math.inf
    trace = [(tuple(int(v) for v in np.flatnonzero(x)), current)]
    iterations = 0
    while True:
        iterations += 1
        sign = np.where(x[feas_idx], -1.0, 1.0)
        cand_sums = sums[None, :] + sign[:, None] * ev.d[feas_idx]
        cand_n = n + sign
        cand_used = used + sign * bw[feas_idx]
        vals = ev.total(cand_sums, cand_n)
        vals = np.where(cand_used <= budget, vals, np.inf)
        k = int(np.argmin(vals))
        if not vals[k] < current - STRICT_DECREASE:
            break
        v = int(feas_idx[k])
        x[v] = not x[v]
        sums, n, used, current = cand_sums[k], int(cand_n[k]), float(cand_used[k]), float(vals[k])
    return SolveReport(
        Schedule.of(np.flatnonzero(x), instance), iterations, ev.count, "cd", trace=trace
    )


def brute_force(instance: ProblemInstance, chunk: int = 1 << 16) -> SolveReport:
    """Exact minimizer by enumeration; ties go to the lexicographically smallest set."""
    if instance.num_devices > MAX_ORACLE_DEVICES:
        raise ValueError(
            f"brute force refuses V={instance.num_devices} > {MAX_ORACLE_DEVICES}"
        )
    feas_idx = np.flatnonzero(instance.feasible)
    if feas_idx.size == 0:
        return _empty_report(instance, "oracle")
    ev = _Evaluator(instance)
    m = feas_idx.size
    d = ev.d[feas_idx]
    bw = instance.min_bandwidths[feas_idx]
    bit = 1 << np.arange(m)
    best_val = math.inf
    best_codes = np.zeros(0, dtype=np.int64)
    for start in range(1, 1 << m, chunk):
        codes = np.arange(start, min(start + chunk, 1 << m), dtype=np.int64)
        bits = ((codes[:, None] & bit) != 0).astype(float)
        ok = bits @ bw <= instance.total_bandwidth
        if not ok.any():
            continue
        codes, bits = codes[ok], bits[ok]
        vals = ev.total(bits @ d, bits.sum(axis=1))
        lo = float(vals.min())
        tol = 1e-12 * max(1.0, abs(lo))
        if lo < best_val - tol:
            best_val = lo
            best_codes = codes[vals <= lo + tol]
        elif lo <= best_val + tol:
            best_codes = np.concatenate([best_codes, codes[vals <= best_val + tol]])
    ties = [tuple(int(feas_idx[i]) for i in range(m) if (c >> i) & 1) for c in best_codes]
    members = min(ties) if ties else ()
    return SolveReport(Schedule.of(members, instance), 1, ev.count, "oracle")


def _best_effort(instance: ProblemInstance, order, name: str) -> SolveReport:
    bw = instance.min_bandwidths
    members, used = [], 0.0
    for v in order:
        v = int(v)
        if not math.isfinite(bw[v]):
            continue
        if used + bw[v] > instance.total_bandwidth:
            break
        members.append(v)
        used += bw[v]
    no_feasible = not members and not instance.feasible.any()
    return SolveReport(Schedule.of(members, instance), len(members), 0, name, no_feasible)


def _descending(keys) -> np.ndarray:
    keys = np.asarray(keys, dtype=float)
    return np.argsort(-keys, kind="stable")


def best_channel(instance: ProblemInstance, gains) -> SolveReport:
    return _best_effort(instance, _descending(gains), "bc")


def best_norm(instance: ProblemInstance, norms) -> SolveReport:
    return _best_effort(instance, _descending(norms), "bn")


def power_of_choice(
    instance: ProblemInstance, losses, subset_size: int | None, rng: np.random.Generator
) -> SolveReport:
    """Sample ``subset_size`` devices uniformly, then fill by descending loss."""
    v = instance.num_devices
    if subset_size is None:
        subset_size = math.ceil(v / 2)
    if not 1 <= subset_size <= v:
        raise ValueError(f"subset size must be in [1, {v}], got {subset_size}")
    picked = np.sort(rng.choice(v, size=subset_size, replace=False))
    losses = np.asarray(losses, dtype=float)
    order = picked[_descending(losses[picked])]
    return _best_effort(instance, order, "poc")


def reduce_partition(integers: Sequence[int], s: int) -> ProblemInstance:
    """Scheduling instance whose optimum has zero WEMD iff a size-``s`` subset
    of ``integers`` sums to half the total.

    One class, device "distribution" r_v, target r_sum / (2 s), and a budget
    admitting exactly ``s`` devices. sigma is set so dropping below ``s``
    members always costs more than any WEMD at ``s`` members.
    """
    r = np.asarray(integers, dtype=float)
    n = r.size
    if n == 0 or np.any(r <= 0) or np.any(r != np.round(r)):
        raise ValueError("integers must be a non-empty list of positive integers")
    if not 1 <= s <= math.ceil(n / 2):
        raise ValueError(f"subset size must be in [1, {math.ceil(n / 2)}], got {s}")
    target = r.sum() / (2 * s)
    if s > 1:
        sigma = 1.01 * target / (1 / math.sqrt(s - 1) - 1 / math.sqrt(s))
    else:
        sigma = 1.01 * target
    params = ObjectiveParams(sigma, 1, np.ones(1))
    return ProblemInstance(r[:, None], np.ones(n), np.array([target]), params, float(s))


SOLVERS: dict[str, Callable] = {
    "gs": greedy_schedule,
    "fscd": fscd_schedule,
    "cd": cd_schedule,
    "oracle": brute_force,
}
# aliases accepted on the command line and in configs
SOLVER_ALIASES = {"greedy": "gs", "brute_force": "oracle", "brute-force": "oracle"}
