"""Scheduling objective: sampling variance plus weighted earth moving distance.

For a scheduled group the objective is::

    sigma / sqrt(n * b) + sum_c G_c * |mean_v p_{v,c} - p_c|

with the group distribution taken as the unweighted mean of the members'
class distributions. An empty group scores ``+inf`` so solvers can compare
uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


def as_distribution(probs, atol: float = 1e-9) -> np.ndarray:
    """Validate a class distribution: non-negative entries summing to 1."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("distribution must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("distribution entries must be finite and >= 0")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"distribution sums to {p.sum()!r}, expected 1")
    return p


@dataclass(frozen=True)
class ObjectiveParams:
    sigma: float
    batch_size: int
    class_weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.class_weights, dtype=float)
        object.__setattr__(self, "class_weights", w)
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise ValueError("sigma must be finite and >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("class weights must be a finite non-negative vector")

    @classmethod
    def scalar(cls, sigma: float, batch_size: int, g: float, num_classes: int) -> "ObjectiveParams":
        return cls(sigma, batch_size, np.full(num_classes, float(g)))


def group_distribution(members: Iterable[int], device_dists: Sequence) -> np.ndarray:
    idx = sorted(members)
    if not idx:
        raise ValueError("group distribution of an empty schedule is undefined")
    dists = np.asarray(device_dists, dtype=float)
    return dists[idx].mean(axis=0)


def wemd(group, global_dist, weights) -> float:
    group = np.asarray(group, dtype=float)
    global_dist = np.asarray(global_dist, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not (group.shape == global_dist.shape == weights.shape):
        raise ValueError(
            f"dimension mismatch: {group.shape}, {global_dist.shape}, {weights.shape}"
        )
    return float(np.dot(weights, np.abs(group - global_dist)))


def variance_term(n_scheduled: int, params: ObjectiveParams) -> float:
    if n_scheduled < 0:
        raise ValueError("n_scheduled must be >= 0")
    if n_scheduled == 0:
        return math.inf
    return params.sigma / math.sqrt(n_scheduled * params.batch_size)
