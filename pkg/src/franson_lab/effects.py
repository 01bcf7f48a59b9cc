"""Analytic physical-effect models.

Covers chromatic pulse broadening in fibre, the dispersion-limited fringe
visibility of broadband photons, the squeezing-dependent visibility limit
from multi-pair emission, linear thermo-optic phase tuning, and loss
balancing of the interferometer arms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import qstate, source

__all__ = [
    "FiberDispersion",
    "VisibilityModel",
    "ThermoOpticMap",
    "VoaModel",
    "DEFAULT_VISIBILITY_ANCHORS",
    "fiber_broadening",
    "visibility_vs_bandwidth",
    "visibility_vs_squeezing",
    "phase_from_power",
    "balance_arms",
    "balanced_arm_model",
]

#: (bandwidth nm, visibility) anchor points constraining the dispersion model.
DEFAULT_VISIBILITY_ANCHORS = ((8.8, 0.794), (10.5, 0.707))


@dataclass(frozen=True)
class FiberDispersion:
    """Chromatic dispersion of a fibre link."""

    d_ps_nm_km: float
    length_km: float
    bandwidth_fwhm_nm: float

    def __post_init__(self):
        if self.length_km < 0:
            raise ValueError("fibre length must be non-negative")
        if self.bandwidth_fwhm_nm <= 0:
            raise ValueError("bandwidth must be positive")


def fiber_broadening(disp: FiberDispersion) -> float:
    """Temporal broadening |D| L dlambda in ps."""
    return abs(disp.d_ps_nm_km) * disp.length_km * disp.bandwidth_fwhm_nm


class VisibilityModel:
    """Dispersion-limited visibility of a Gaussian-spectrum wavepacket.

    The interfering replica acquires an effective quadratic spectral phase
    in the delay line; its overlap with the undispersed replica gives

        V(bw) = (1 + (k bw^2)^2) ** -0.25

    with a single group-delay-dispersion constant ``k`` calibrated by least
    squares so the curve passes through the anchor points.
    """

    def __init__(self, gdd_coefficient: float):
        if gdd_coefficient <= 0 or not math.isfinite(gdd_coefficient):
            raise ValueError("dispersion coefficient must be positive and finite")
        self.gdd_coefficient = gdd_coefficient

    @classmethod
    def from_anchors(
        cls, anchors=DEFAULT_VISIBILITY_ANCHORS
    ) -> "VisibilityModel":
        anchors = [(float(b), float(v)) for b, v in anchors]
        if not anchors:
            raise ValueError("at least one anchor point is required")
        for bw, v in anchors:
            if bw <= 0 or not 0.0 < v <= 1.0:
                raise ValueError(f"invalid anchor ({bw}, {v})")
        ordered = sorted(anchors)
        for (_, v_lo), (_, v_hi) in zip(ordered, ordered[1:]):
            if v_hi > v_lo + 1e-12:
                raise ValueError("anchor visibilities must not increase with bandwidth")

        bws = np.array([a[0] for a in anchors])
        vis = np.array([a[1] for a in anchors])

        def objective(log_k):
            model = (1.0 + (math.exp(log_k) * bws**2) ** 2) ** -0.25
            return float(np.sum((model - vis) ** 2))

        res = minimize_scalar(objective, bounds=(-20.0, 5.0), method="bounded")
        return cls(math.exp(res.x))

    def visibility(self, bandwidth_nm: float) -> float:
        if bandwidth_nm < 0:
            raise ValueError("bandwidth must be non-negative")
        x = self.gdd_coefficient * bandwidth_nm**2
        return (1.0 + x * x) ** -0.25


def visibility_vs_bandwidth(bandwidth_nm: float, model: VisibilityModel) -> float:
    """Fringe visibility for photons of the given FWHM bandwidth."""
    if bandwidth_nm <= 0:
        raise ValueError("bandwidth must be positive")
    return model.visibility(bandwidth_nm)


def visibility_vs_squeezing(s: float) -> float:
    """Fringe visibility limit set by multi-pair emission at squeezing ``s``.

    Enumerates coincidence records assuming monochromatic fields and
    lossless propagation, with weights from :func:`source.pulse_pair_probs`
    (the n > 2 remainder enters as three pairs).  Pairs travel the
    interferometers independently with no mutual coherence: each pair
    splits usefully with probability 1/2 and its record follows the
    coherent joint outcome distribution, while every cross pairing of one
    pair's signal tag with another pair's idler tag adds an incoherent
    record spread over the 3x3 slot grid (populating the anti-diagonal
    corners).  The visibility is (max - min) / (max + min) of the
    resulting interfering-slot record rate.
    """
    if s <= 0:
        raise ValueError("visibility is undefined at zero squeezing")
    probs = source.pulse_pair_probs(s)
    weights = {1: probs.p1, 2: probs.p2, 3: probs.higher}
    # per kept pair: joint TT probability (1 + cos phi) / 16; per photon the
    # detected middle-slot probability is 1/4, so an incoherent cross
    # pairing lands in TT with probability 1/16 once both pairs are kept
    rate = []
    for fringe in (0.0, math.pi):
        coherent_tt = (1.0 + math.cos(fringe)) / 16.0
        total = 0.0
        for k, w in weights.items():
            same = k * 0.5 * coherent_tt
            cross = k * (k - 1) * 0.25 * (1.0 / 16.0)
            total += w * (same + cross)
        rate.append(total)
    v_max, v_min = max(rate), min(rate)
    return (v_max - v_min) / (v_max + v_min)


@dataclass(frozen=True)
class ThermoOpticMap:
    """Linear heater power to phase map, phi = phi0 + kappa * P."""

    kappa_rad_per_mw: float
    phi0_rad: float = 0.0

    def __post_init__(self):
        if self.kappa_rad_per_mw == 0 or not math.isfinite(self.kappa_rad_per_mw):
            raise ValueError("kappa must be nonzero and finite")


def phase_from_power(p_mw: float, heater: ThermoOpticMap) -> float:
    """Optical phase in radians imparted at electrical power ``p_mw``."""
    if p_mw < 0:
        raise ValueError("electrical power must be non-negative")
    return heater.phi0_rad + heater.kappa_rad_per_mw * p_mw


@dataclass(frozen=True)
class VoaModel:
    """Variable-attenuator setting balancing the short arm to the long one."""

    transmission: float
    excess_long_arm_loss_db: float

    def __post_init__(self):
        if not 0.0 <= self.transmission <= 1.0:
            raise ValueError("transmission must lie in [0, 1]")


def balance_arms(excess_long_loss_db: float) -> VoaModel:
    """Short-arm power transmission matching the long arm's excess loss."""
    if excess_long_loss_db < 0:
        raise ValueError("excess loss must be non-negative")
    return VoaModel(
        transmission=10.0 ** (-excess_long_loss_db / 10.0),
        excess_long_arm_loss_db=excess_long_loss_db,
    )


def balanced_arm_model(excess_long_loss_db: float) -> qstate.ArmModel:
    """ArmModel with equal amplitude transmissions on both arms.

    Both channels' short arms are attenuated to the long arms' power
    transmission, which restores unit fringe visibility at the cost of rate.
    """
    voa = balance_arms(excess_long_loss_db)
    t = math.sqrt(voa.transmission)
    return qstate.ArmModel(t_short=(t, t), t_long=(t, t))
