"""Photon-pair generation statistics and rate estimators.

The pair-number distribution of a single pumped pulse follows the squeezed
vacuum Fock expansion, P(s, n) = sech(s) C(2n, n) (tanh^2(s) / 4)^n, whose
sum over n is exactly one.  A pulse pair combines two independent pulses;
events with more than two pairs are tracked in an explicit remainder bucket
so totals stay auditable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "PairProbabilities",
    "PowerCalibration",
    "PEstimate",
    "KlyshkoEstimate",
    "squeezed_pair_prob",
    "pulse_pair_probs",
    "single_pulse_pair_prob_max",
    "s_from_pair_probability",
    "spdc_prob_from_power",
    "estimate_p_from_histogram",
    "klyshko_efficiency",
    "brightness",
]


@dataclass(frozen=True)
class PairProbabilities:
    """Per pulse-pair probabilities of generating 0, 1 or 2 photon pairs.

    ``higher`` carries the neglected n > 2 remainder so that
    p0 + p1 + p2 + higher = 1 exactly.
    """

    p0: float
    p1: float
    p2: float
    higher: float

    def __post_init__(self):
        for name in ("p0", "p1", "p2", "higher"):
            v = getattr(self, name)
            if not -1e-12 <= v <= 1.0 + 1e-12:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.p0 + self.p1 + self.p2 > 1.0 + 1e-12:
            raise ValueError("pair probabilities exceed 1")

    def total(self) -> float:
        return self.p0 + self.p1 + self.p2 + self.higher


@dataclass(frozen=True)
class PowerCalibration:
    """Linear pump-power calibration of the per-pulse pair probability."""

    slope_per_uw: float
    gc_loss_db: float = 7.0
    rep_rate_hz: float = 80e6

    def __post_init__(self):
        if self.slope_per_uw <= 0:
            raise ValueError("slope must be positive")


@dataclass(frozen=True)
class PEstimate:
    """Pair-probability estimate with its Poisson-propagated uncertainty."""

    p: float
    sigma: float


@dataclass(frozen=True)
class KlyshkoEstimate:
    """Heralded channel efficiencies from singles and coincidence rates."""

    eta_signal: float
    eta_idler: float
    eta_signal_db: float
    eta_idler_db: float
    average_db: float


def squeezed_pair_prob(s: float, n: int) -> float:
    """Probability of generating exactly ``n`` photon pairs from one pulse.

    P(s, n) = sech(s) * C(2n, n) * (tanh^2(s) / 4)^n.  Evaluated in log
    space so the tail stays accurate for large n.
    """
    if s < 0:
        raise ValueError("squeezing magnitude must be non-negative")
    if n < 0:
        raise ValueError("pair number must be non-negative")
    if s == 0.0:
        return 1.0 if n == 0 else 0.0
    log_sech = -math.log(math.cosh(s))
    if n == 0:
        return math.exp(log_sech)
    log_binom = math.lgamma(2 * n + 1) - 2.0 * math.lgamma(n + 1)
    log_term = log_binom + 2.0 * n * math.log(math.tanh(s) / 2.0)
    return math.exp(log_sech + log_term)


def pulse_pair_probs(s: float) -> PairProbabilities:
    """Zero-, one- and two-pair probabilities for one pump pulse pair.

    p0 = P0^2, p1 = 2 P0 P1, p2 = 2 P0 P2 + P1^2 with P_n = P(s, n); the
    two-pair term combines two pairs from either pulse with one pair from
    each pulse.
    """
    p_n = [squeezed_pair_prob(s, n) for n in range(3)]
    p0 = p_n[0] ** 2
    p1 = 2.0 * p_n[0] * p_n[1]
    p2 = 2.0 * p_n[0] * p_n[2] + p_n[1] ** 2
    higher = max(0.0, 1.0 - p0 - p1 - p2)
    return PairProbabilities(p0, p1, p2, higher)


# P(s, 1) = sech(s) tanh^2(s) / 2 peaks where tanh^2(s) = 2/3.
_S_PEAK = math.atanh(math.sqrt(2.0 / 3.0))


def single_pulse_pair_prob_max() -> float:
    """Maximum of P(s, 1) over all squeezing magnitudes."""
    return squeezed_pair_prob(_S_PEAK, 1)


def s_from_pair_probability(p: float) -> float:
    """Invert P(s, 1) = p on the rising branch by bracketed root finding."""
    if p <= 0:
        raise ValueError("pair probability must be positive")
    p_max = single_pulse_pair_prob_max()
    if p >= p_max:
        raise ValueError(
            f"pair probability {p} exceeds the achievable maximum {p_max:.6f}"
        )
    s = brentq(
        lambda x: squeezed_pair_prob(x, 1) - p,
        1e-12,
        _S_PEAK,
        xtol=1e-15,
        rtol=8.9e-16,
    )
    residual = squeezed_pair_prob(s, 1) - p
    if abs(residual) > 1e-12:
        raise RuntimeError(f"inversion residual {residual} above tolerance")
    return float(s)


def spdc_prob_from_power(power_uw: float, cal: PowerCalibration) -> float:
    """Per-pulse pair probability from off-chip average pump power."""
    if power_uw < 0:
        raise ValueError("pump power must be non-negative")
    return cal.slope_per_uw * power_uw


def estimate_p_from_histogram(
    coincidence_counts_at_0: int, counts_at_rep_period: int
) -> PEstimate:
    """Pair probability from the side-to-centre coincidence peak ratio.

    The centre peak collects true pairs, the peak one repetition period away
    collects photons from independent pulses, so their ratio estimates the
    per-pulse pair probability.  The error assumes Poissonian counts.
    """
    center = float(coincidence_counts_at_0)
    side = float(counts_at_rep_period)
    if center <= 0:
        raise ValueError("centre-peak count must be positive")
    if side < 0:
        raise ValueError("counts must be non-negative")
    p = side / center
    if side == 0:
        return PEstimate(0.0, 1.0 / center)
    sigma = p * math.sqrt(1.0 / side + 1.0 / center)
    return PEstimate(p, sigma)


def klyshko_efficiency(
    singles_s: float, singles_i: float, coincidences: float
) -> KlyshkoEstimate:
    """Per-channel heralded efficiencies from singles and coincidence rates.

    eta_idler = C / S_signal and eta_signal = C / S_idler; ``average_db``
    is the mean of the two dB figures (the geometric mean in linear units),
    matching a singles-to-coincidence system-loss readout.
    """
    if singles_s <= 0 or singles_i <= 0:
        raise ValueError("singles rates must be positive")
    if coincidences < 0:
        raise ValueError("coincidence rate must be non-negative")
    if coincidences == 0:
        raise ValueError("coincidence rate must be positive for an efficiency")
    eta_i = coincidences / singles_s
    eta_s = coincidences / singles_i
    eta_s_db = 10.0 * math.log10(eta_s)
    eta_i_db = 10.0 * math.log10(eta_i)
    return KlyshkoEstimate(
        eta_signal=eta_s,
        eta_idler=eta_i,
        eta_signal_db=eta_s_db,
        eta_idler_db=eta_i_db,
        average_db=0.5 * (eta_s_db + eta_i_db),
    )


def brightness(
    pair_rate_hz: float,
    on_chip_power_mw: float,
    klyshko_signal_db: float = -15.5,
    klyshko_idler_db: float = -15.5,
    coupler_correction_db: float = 7.0,
) -> float:
    """On-chip source brightness in Hz per mW of on-chip average power.

    The detected pair rate is referred back to the generation point through
    both channels' Klyshko efficiencies; one grating-coupler correction is
    removed because the on-chip power reference already sits behind that
    coupler.
    """
    if pair_rate_hz < 0:
        raise ValueError("pair rate must be non-negative")
    if on_chip_power_mw <= 0:
        raise ValueError("on-chip power must be positive")
    correction_db = (
        abs(klyshko_signal_db) + abs(klyshko_idler_db) - coupler_correction_db
    )
    on_chip_rate = pair_rate_hz * 10.0 ** (correction_db / 10.0)
    return on_chip_rate / on_chip_power_mw


def pair_number_distribution(s: float, cutoff: int = 80) -> np.ndarray:
    """P(s, n) for n = 0 .. cutoff, useful for normalisation audits."""
    return np.array([squeezed_pair_prob(s, n) for n in range(cutoff + 1)])
