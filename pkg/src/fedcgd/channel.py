"""Uplink radio model for a single cell.

UMi street-canyon path loss and LOS probability, log-normal shadowing,
Shannon rate over an FDMA share, and the closed-form minimum bandwidth that
lets a device push its model through the link before the upload deadline.

An infeasible link (no finite bandwidth meets the deadline) is represented by
``INFEASIBLE``, which is ``math.inf``; it compares greater than any budget, so
feasibility checks reduce to ``np.isfinite``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

INFEASIBLE = math.inf

LN2 = math.log(2.0)
_INV_E = math.exp(-1.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Physical-layer constants of the cell.

    ``noise_psd_w_per_hz`` already includes the receiver noise figure; build
    from dBm values with :meth:`from_db`.
    """

    carrier_freq_ghz: float = 3.5
    total_bandwidth_hz: float = 20e6
    tx_power_w: float = dbm_to_watt(23.0)
    noise_psd_w_per_hz: float = dbm_to_watt(-174.0 + 6.0)
    deadline_s: float = 2.0
    # ~2.6e5 float32 parameters: a small two-block CNN for 32x32 RGB input
    model_bits: float = 8.3e6
    cell_radius_m: float = 250.0
    device_antenna_m: float = 1.5
    bs_antenna_m: float = 10.0
    shadow_std_los_db: float = 4.0
    shadow_std_nlos_db: float = 8.2

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (value > 0):
                raise ValueError(f"ChannelParams.{f.name} must be > 0, got {value!r}")
        for name in ("total_bandwidth_hz", "deadline_s", "model_bits"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"ChannelParams.{name} must be finite")

    @classmethod
    def from_db(
        cls,
        *,
        tx_power_dbm: float = 23.0,
        noise_psd_dbm_per_hz: float = -174.0,
        noise_figure_db: float = 6.0,
        **kwargs,
    ) -> "ChannelParams":
        """Build from dBm / dB quantities, folding the noise figure into N0."""
        return cls(
            tx_power_w=dbm_to_watt(tx_power_dbm),
            noise_psd_w_per_hz=dbm_to_watt(noise_psd_dbm_per_hz + noise_figure_db),
            **kwargs,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelParams":
        d = dict(d)
        db_keys = {"tx_power_dbm", "noise_psd_dbm_per_hz", "noise_figure_db"}
        if db_keys & d.keys():
            db = {k: d.pop(k) for k in db_keys if k in d}
            return cls.from_db(**db, **d)
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LinkState:
    d2d_m: float
    d3d_m: float
    is_los: bool
    shadow_db: float
    avg_gain: float
    min_bandwidth_hz: float

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.min_bandwidth_hz)


def los_probability(d2d_m: float) -> float:
    """UMi street-canyon LOS probability, clamped to 1 inside 18 m."""
    if not d2d_m > 0:
        raise ValueError(f"distance must be positive, got {d2d_m!r}")
    if d2d_m <= 18.0:
        return 1.0
    p = 18.0 / d2d_m + math.exp(-d2d_m / 36.0) * (1.0 - 18.0 / d2d_m)
    return min(1.0, max(0.0, p))


def path_loss_db(d3d_m: float, f_ghz: float, is_los: bool) -> float:
    if not (d3d_m > 0 and f_ghz > 0):
        raise ValueError("distance and frequency must be positive")
    slope = 21.0 if is_los else 31.9
    return 32.4 + slope * math.log10(d3d_m) + 20.0 * math.log10(f_ghz)


def avg_channel_gain(pl_db: float, shadow_db: float) -> float:
    return 10.0 ** (-(pl_db + shadow_db) / 10.0)


def transmission_rate(bw_hz: float, gain: float, params: ChannelParams) -> float:
    if not bw_hz > 0:
        raise ValueError(f"bandwidth must be positive, got {bw_hz!r}")
    snr = params.tx_power_w * gain / (bw_hz * params.noise_psd_w_per_hz)
    return bw_hz * math.log1p(snr) / LN2


def upload_latency(model_bits: float, rate: float) -> float:
    """Seconds to push ``model_bits`` at ``rate``; ``INFEASIBLE`` for a dead link."""
    if rate <= 0:
        return INFEASIBLE
    return model_bits / rate


def lambert_w_m1(x: float) -> float:
    """Lower real branch W_{-1} of the Lambert W function on [-1/e, 0).

    Halley iteration started from the branch-point series near -1/e and from
    the asymptotic ``L1 - log(-L1)`` expansion elsewhere.
    """
    if not (-_INV_E - 1e-16 <= x < 0.0):
        raise ValueError(f"W_-1 is real only on [-1/e, 0), got {x!r}")
    if x <= -_INV_E:
        return -1.0
    q = x + _INV_E
    if q < 0.05:
        p = -math.sqrt(2.0 * math.e * q)
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    else:
        l1 = math.log(-x)
        w = l1 - math.log(-l1)
    for _ in range(64):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w_new = w - step
        if w_new > -1.0:
            # overshoot past the branch point; bisect back onto the lower branch
            w_new = 0.5 * (w - 1.0)
        if abs(w_new - w) <= 1e-15 * abs(w_new):
            w = w_new
            break
        w = w_new
    return w


def feasibility_ratio(gain: float, params: ChannelParams) -> float:
    """Dimensionless Gamma; the deadline is reachable only when it is below 1."""
    return (
        params.noise_psd_w_per_hz * params.model_bits * LN2
        / (params.deadline_s * params.tx_power_w * gain)
    )


def min_bandwidth(gain: float, params: ChannelParams) -> float:
    """Smallest bandwidth meeting the upload deadline, or ``INFEASIBLE``."""
    if not gain > 0:
        raise ValueError(f"gain must be positive, got {gain!r}")
    gamma = feasibility_ratio(gain, params)
    if gamma >= 1.0:
        return INFEASIBLE
    w = lambert_w_m1(-gamma * math.exp(-gamma))
    return -params.model_bits * LN2 / (params.deadline_s * (w + gamma))


def link_state(
    d2d_m: float, is_los: bool, shadow_db: float, params: ChannelParams
) -> LinkState:
    dh = params.bs_antenna_m - params.device_antenna_m
    d3d = math.hypot(d2d_m, dh)
    gain = avg_channel_gain(path_loss_db(d3d, params.carrier_freq_ghz, is_los), shadow_db)
    return LinkState(
        d2d_m=float(d2d_m),
        d3d_m=d3d,
        is_los=bool(is_los),
        shadow_db=float(shadow_db),
        avg_gain=gain,
        min_bandwidth_hz=min_bandwidth(gain, params),
    )


def draw_los(d2d_m: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One LOS/NLOS draw per device; held fixed for the lifetime of a placement."""
    probs = np.array([los_probability(max(float(d), 1e-9)) for d in d2d_m])
    return rng.random(len(probs)) < probs


def draw_shadow(is_los: np.ndarray, params: ChannelParams, rng: np.random.Generator) -> np.ndarray:
    std = np.where(is_los, params.shadow_std_los_db, params.shadow_std_nlos_db)
    return rng.standard_normal(len(std)) * std
