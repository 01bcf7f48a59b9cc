"""Curve fitting and device calibration.

All fits are damped least squares (scipy's trust-region reflective solver)
with analytic Jacobians and Poisson weighting, floored at one count per bin
to avoid zero-variance weights.  Convergence is declared on a relative
objective change below 1e-10 or after 200 iterations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import erf

__all__ = [
    "FitError",
    "GaussianFit",
    "FringeFit",
    "CalibrationFit",
    "fit_gaussian_peak",
    "fit_fringe",
    "fit_calibration_map",
    "projector_powers",
]

_FTOL = 1e-10
_MAX_ITER = 200


class FitError(RuntimeError):
    """Raised when a fit cannot converge or the data are degenerate."""


def _poisson_weights(counts: np.ndarray) -> np.ndarray:
    """1/sigma weights for Poisson counts, floored at one count."""
    return 1.0 / np.sqrt(np.maximum(counts, 1.0))


def _run_least_squares(residual, jacobian, x0, x_scale=None):
    result = least_squares(
        residual,
        x0,
        jac=jacobian,
        method="trf",
        ftol=_FTOL,
        xtol=_FTOL,
        gtol=_FTOL,
        max_nfev=_MAX_ITER * (len(np.atleast_1d(x0)) + 1),
        x_scale=x_scale if x_scale is not None else "jac",
    )
    if not result.success:
        raise FitError(f"least-squares solver failed: {result.message}")
    return result


def _covariance(jac: np.ndarray) -> np.ndarray:
    """Parameter covariance (J^T J)^-1 of the weighted problem."""
    jtj = jac.T @ jac
    try:
        return np.linalg.inv(jtj)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular normal equations; parameters unconstrained") from exc


@dataclass
class GaussianFit:
    """Gaussian peak parameters with the integral over +-5 sigma."""

    amplitude: float
    mean: float
    sigma: float
    integral_5sigma: float
    covariance: np.ndarray = field(repr=False)
    residual_norm: float

    def to_dict(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "mean": self.mean,
            "sigma": self.sigma,
            "integral_5sigma": self.integral_5sigma,
            "covariance": self.covariance.tolist(),
            "residual_norm": self.residual_norm,
        }


def gaussian_model(t: np.ndarray, amplitude: float, mean: float, sigma: float):
    return amplitude * np.exp(-0.5 * ((t - mean) / sigma) ** 2)


def gaussian_jacobian(t: np.ndarray, amplitude: float, mean: float, sigma: float):
    """Analytic Jacobian of the Gaussian model, columns (A, mu, sigma)."""
    z = (t - mean) / sigma
    g = np.exp(-0.5 * z**2)
    jac = np.empty((t.size, 3))
    jac[:, 0] = g
    jac[:, 1] = amplitude * g * z / sigma
    jac[:, 2] = amplitude * g * z**2 / sigma
    return jac


def fit_gaussian_peak(times, counts) -> GaussianFit:
    """Fit counts versus time to a Gaussian peak.

    Parameters
    ----------
    times, counts : array_like
        At least five samples spanning the peak.

    Raises
    ------
    FitError
        On degenerate (flat) data or failed convergence.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(counts, dtype=float)
    if t.size != y.size or t.size < 5:
        raise FitError("need at least five (time, counts) samples")
    if np.ptp(y) <= 0:
        raise FitError("flat data; no peak to fit")

    w = _poisson_weights(y)
    peak = int(np.argmax(y))
    a0 = float(y[peak])
    mu0 = float(t[peak])
    # second-moment width estimate, clipped to the sample spacing
    weights = np.clip(y - y.min(), 0, None)
    if weights.sum() > 0:
        var = float(np.sum(weights * (t - mu0) ** 2) / weights.sum())
    else:
        var = 0.0
    spacing = float(np.min(np.diff(np.sort(t)))) if t.size > 1 else 1.0
    sigma0 = max(math.sqrt(var), spacing / 2.0)

    def residual(p):
        return (gaussian_model(t, *p) - y) * w

    def jacobian(p):
        return gaussian_jacobian(t, *p) * w[:, None]

    result = _run_least_squares(residual, jacobian, np.array([a0, mu0, sigma0]))
    amplitude, mean, sigma = result.x
    sigma = abs(sigma)
    if sigma <= 0 or not np.isfinite(sigma) or amplitude <= 0:
        raise FitError("fit converged to a degenerate peak")
    integral = amplitude * sigma * math.sqrt(2.0 * math.pi) * erf(5.0 / math.sqrt(2.0))
    return GaussianFit(
        amplitude=float(amplitude),
        mean=float(mean),
        sigma=float(sigma),
        integral_5sigma=float(integral),
        covariance=_covariance(result.jac),
        residual_norm=float(np.linalg.norm(result.fun)),
    )


@dataclass
class FringeFit:
    """Sinusoidal fringe C (1 + V cos(phi + phi0))."""

    offset: float
    amplitude: float
    phase: float
    visibility: float
    visibility_err: float
    covariance: np.ndarray = field(repr=False)
    residual_norm: float

    def to_dict(self) -> dict:
        return {
            "offset": self.offset,
            "amplitude": self.amplitude,
            "phase": self.phase,
            "visibility": self.visibility,
            "visibility_err": self.visibility_err,
            "covariance": self.covariance.tolist(),
            "residual_norm": self.residual_norm,
        }


def fringe_model(phi: np.ndarray, offset: float, visibility: float, phase: float):
    return offset * (1.0 + visibility * np.cos(phi + phase))


def fringe_jacobian(phi: np.ndarray, offset: float, visibility: float, phase: float):
    """Analytic Jacobian, columns (C, V, phi0)."""
    c = np.cos(phi + phase)
    s = np.sin(phi + phase)
    jac = np.empty((phi.size, 3))
    jac[:, 0] = 1.0 + visibility * c
    jac[:, 1] = offset * c
    jac[:, 2] = -offset * visibility * s
    return jac


def _linear_fringe_guess(phi: np.ndarray, y: np.ndarray):
    """Initial (C, V, phi0) from the linear form a + b cos + c sin."""
    design = np.column_stack([np.ones_like(phi), np.cos(phi), np.sin(phi)])
    coeff, *_ = np.linalg.lstsq(design, y, rcond=None)
    a, b, c = coeff
    offset = max(a, 1e-9)
    visibility = min(math.hypot(b, c) / offset, 1.0)
    phase = math.atan2(-c, b)
    return np.array([offset, visibility, phase])


def fit_fringe(phases, counts) -> FringeFit:
    """Fit counts versus phase to C (1 + V cos(phi + phi0)).

    Requires at least four points covering at least pi of phase.  The
    visibility uncertainty comes from the weighted covariance.
    """
    phi = np.asarray(phases, dtype=float)
    y = np.asarray(counts, dtype=float)
    if phi.size != y.size or phi.size < 4:
        raise FitError("need at least four (phase, counts) points")
    if np.ptp(phi) < math.pi - 1e-9:
        raise FitError("phase coverage below pi; fringe is unconstrained")

    w = _poisson_weights(y)

    def residual(p):
        return (fringe_model(phi, *p) - y) * w

    def jacobian(p):
        return fringe_jacobian(phi, *p) * w[:, None]

    result = _run_least_squares(residual, jacobian, _linear_fringe_guess(phi, y))
    offset, visibility, phase = result.x
    # canonical gauge: non-negative visibility, phase in [0, 2 pi)
    if visibility < 0:
        visibility = -visibility
        phase += math.pi
    phase %= 2.0 * math.pi
    if offset <= 0:
        raise FitError("fit converged to a non-positive offset")
    cov = _covariance(result.jac)
    return FringeFit(
        offset=float(offset),
        amplitude=float(offset * visibility),
        phase=float(phase),
        visibility=float(visibility),
        visibility_err=float(math.sqrt(max(cov[1, 1], 0.0))),
        covariance=cov,
        residual_norm=float(np.linalg.norm(result.fun)),
    )


@dataclass
class CalibrationFit:
    """Two-heater interference-map calibration.

    Gauge convention: the zero-power phase offsets are fixed to zero and the
    whole constant phase of the map is attributed to the pump phase, which
    is the only combination the map constrains.
    """

    kappa_s: float
    kappa_i: float
    phi_p: float
    offset: float
    visibility: float
    phi0_s: float = 0.0
    phi0_i: float = 0.0
    covariance: np.ndarray = field(default=None, repr=False)
    residual_norm: float = 0.0

    def to_dict(self) -> dict:
        return {
            "kappa_s": self.kappa_s,
            "kappa_i": self.kappa_i,
            "phi_p": self.phi_p,
            "phi0_s": self.phi0_s,
            "phi0_i": self.phi0_i,
            "offset": self.offset,
            "visibility": self.visibility,
            "covariance": self.covariance.tolist()
            if self.covariance is not None
            else None,
            "residual_norm": self.residual_norm,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def calibration_model(ps, pi, offset, visibility, kappa_s, kappa_i, phi_p):
    return offset * (1.0 + visibility * np.cos(kappa_s * ps + kappa_i * pi - phi_p))


def calibration_jacobian(ps, pi, offset, visibility, kappa_s, kappa_i, phi_p):
    """Analytic Jacobian, columns (C, V, kappa_s, kappa_i, phi_p)."""
    arg = kappa_s * ps + kappa_i * pi - phi_p
    c = np.cos(arg)
    s = np.sin(arg)
    jac = np.empty((ps.size, 5))
    jac[:, 0] = 1.0 + visibility * c
    jac[:, 1] = offset * c
    jac[:, 2] = -offset * visibility * s * ps
    jac[:, 3] = -offset * visibility * s * pi
    jac[:, 4] = offset * visibility * s
    return jac


def _dominant_frequency(x: np.ndarray, y: np.ndarray) -> float:
    """Dominant angular frequency of y(x) from a coarse periodogram."""
    span = np.ptp(x)
    if span <= 0:
        return 0.0
    yc = y - y.mean()
    # candidate frequencies between half a cycle and the pointwise limit
    n_unique = len(np.unique(np.round(x, 9)))
    k_grid = np.linspace(0.5, max(n_unique / 2.0, 2.0), 4096) * 2.0 * math.pi / span
    power = np.abs(np.exp(1j * np.outer(k_grid, x)) @ yc)
    return float(k_grid[int(np.argmax(power))])


def fit_calibration_map(grid_points) -> CalibrationFit:
    """Fit (P_s, P_i, counts) triples to the two-heater interference map.

    counts = C (1 + V cos(kappa_s P_s + kappa_i P_i - phi_p)).  The data
    must span at least 2 pi of phase on each heater axis.

    Raises
    ------
    FitError
        On insufficient span or failed convergence.
    """
    pts = np.asarray(grid_points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 8:
        raise FitError("need at least eight (P_s, P_i, counts) triples")
    ps, pi, y = pts[:, 0], pts[:, 1], pts[:, 2]

    # axis-wise frequency estimates from the marginal oscillation
    kappa_s0 = _marginal_frequency(ps, pi, y)
    kappa_i0 = _marginal_frequency(pi, ps, y)
    if kappa_s0 * np.ptp(ps) < 2.0 * math.pi - 1e-6:
        raise FitError("signal-heater grid spans less than 2 pi of phase")
    if kappa_i0 * np.ptp(pi) < 2.0 * math.pi - 1e-6:
        raise FitError("idler-heater grid spans less than 2 pi of phase")

    w = _poisson_weights(y)

    def residual(p):
        return (calibration_model(ps, pi, *p) - y) * w

    def jacobian(p):
        return calibration_jacobian(ps, pi, *p) * w[:, None]

    offset0 = max(float(y.mean()), 1e-9)
    vis0 = min(max(float(np.ptp(y)) / (2.0 * offset0), 0.05), 1.0)
    best = None
    for phi0 in np.linspace(0.0, 2.0 * math.pi, 8, endpoint=False):
        x0 = np.array([offset0, vis0, kappa_s0, kappa_i0, phi0])
        try:
            result = _run_least_squares(residual, jacobian, x0)
        except FitError:
            continue
        cost = float(np.sum(result.fun**2))
        if best is None or cost < best[0]:
            best = (cost, result)
    if best is None:
        raise FitError("calibration map fit did not converge")
    result = best[1]

    offset, visibility, kappa_s, kappa_i, phi_p = result.x
    # canonical gauge: positive heater slopes, visibility >= 0
    if visibility < 0:
        visibility, phi_p = -visibility, phi_p + math.pi
    if kappa_s < 0 and kappa_i < 0:
        kappa_s, kappa_i, phi_p = -kappa_s, -kappa_i, -phi_p
    if kappa_s <= 0 or kappa_i <= 0:
        raise FitError("heater slopes came out non-positive; map is degenerate")
    phi_p %= 2.0 * math.pi
    return CalibrationFit(
        kappa_s=float(kappa_s),
        kappa_i=float(kappa_i),
        phi_p=float(phi_p),
        offset=float(offset),
        visibility=float(visibility),
        covariance=_covariance(result.jac),
        residual_norm=float(np.linalg.norm(result.fun)),
    )


def _marginal_frequency(axis: np.ndarray, other: np.ndarray, y: np.ndarray) -> float:
    """Frequency along one heater axis, using the slice nearest to the
    other axis' median to keep the orthogonal phase roughly constant."""
    med = np.median(other)
    tol = np.ptp(other) / 20.0 if np.ptp(other) > 0 else 1.0
    mask = np.abs(other - med) <= tol
    if mask.sum() >= 8:
        return _dominant_frequency(axis[mask], y[mask])
    return _dominant_frequency(axis, y)


def projector_powers(
    fit: CalibrationFit,
    desired: tuple[float, float],
    max_power_mw: float | None = None,
) -> tuple[float, float]:
    """Heater powers realising effective analysis phases (phi~_s, phi~_i).

    The pump-phase frame rotation maps the requested phases through
    phi_c = phi~_c + phi_p / 2, so that the fringe argument becomes
    phi~_s + phi~_i.  Returns the smallest non-negative powers.
    """
    two_pi = 2.0 * math.pi
    powers = []
    for phi_tilde, kappa, phi0 in (
        (desired[0], fit.kappa_s, fit.phi0_s),
        (desired[1], fit.kappa_i, fit.phi0_i),
    ):
        target = (phi_tilde + fit.phi_p / 2.0 - phi0) % two_pi
        power = target / kappa
        if max_power_mw is not None and power > max_power_mw:
            raise FitError(
                f"phase {phi_tilde:.3f} rad needs {power:.2f} mW, "
                f"above the {max_power_mw} mW limit"
            )
        powers.append(float(power))
    return powers[0], powers[1]
