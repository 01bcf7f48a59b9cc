"""Two-qubit state tomography by maximum-likelihood estimation.

The density matrix is parameterised by a lower-triangular Cholesky factor
(16 real parameters), which keeps every iterate physical by construction.
The likelihood is extended Poisson over all nine regions of every phase
setting; the overall rate scale is profiled out analytically, leaving a
scale-invariant objective maximised by L-BFGS ascent with an analytic
gradient and deterministic multi-start.

The anti-diagonal corner regions deserve a note: their operators act only
on the cross-bin populations, which vanish for any single-pair state, so
for the states of interest they predict (and observe) near-zero counts.
Keeping them in the likelihood is what pins the cross-bin sector; with
only the seven informative regions the four canonical settings leave one
flat direction that count noise would otherwise excite, inflating every
metric's spread several-fold.  Corner totals are additionally reported as
a double-pair diagnostic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import qstate

__all__ = [
    "CANONICAL_SETTINGS",
    "MeasurementRecord",
    "MleConfig",
    "MetricReport",
    "TomographyResult",
    "MonteCarloErrors",
    "TomographyError",
    "measurement_operators",
    "mle_reconstruct",
    "monte_carlo_errors",
    "report_metrics",
    "forward_counts",
    "records_to_json_file",
    "records_from_json_file",
]

#: The four projector settings (phi~_s, phi~_i) every record set must cover.
CANONICAL_SETTINGS = (
    (0.0, 0.0),
    (math.pi / 2.0, 0.0),
    (math.pi / 2.0, math.pi / 2.0),
    (0.0, math.pi / 2.0),
)

_CHSH_BOUND = 2.0


class TomographyError(RuntimeError):
    """Raised when a reconstruction cannot be carried out."""


@dataclass
class MeasurementRecord:
    """Region counts acquired at one pair of effective analysis phases."""

    phi_s: float
    phi_i: float
    region_counts: dict[str, float]
    acquisition_s: float = 0.0

    def __post_init__(self):
        for label, value in self.region_counts.items():
            if label not in qstate.REGIONS:
                raise ValueError(f"unknown region label {label}")
            if value < 0:
                raise ValueError(f"negative count in region {label}")
        for label in qstate.INFORMATIVE_REGIONS:
            self.region_counts.setdefault(label, 0.0)

    def all_counts(self) -> np.ndarray:
        return np.array(
            [self.region_counts.get(r, 0.0) for r in qstate.REGIONS], dtype=float
        )

    def informative_counts(self) -> np.ndarray:
        return np.array(
            [self.region_counts[r] for r in qstate.INFORMATIVE_REGIONS], dtype=float
        )

    def corner_counts(self) -> dict[str, float]:
        return {
            r: float(self.region_counts.get(r, 0.0)) for r in qstate.CORNER_REGIONS
        }


@dataclass
class MleConfig:
    """Optimiser settings for the maximum-likelihood reconstruction."""

    tolerance: float = 1e-10
    max_iterations: int = 500
    restart_count: int = 8
    rng_seed: int = 7
    parameterization: str = "cholesky"
    likelihood: str = "poisson"

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.parameterization != "cholesky":
            raise ValueError("only the Cholesky parameterization is implemented")
        if self.likelihood != "poisson":
            raise ValueError("only the Poisson likelihood is implemented")


@dataclass
class MetricReport:
    """Entanglement metrics of a reconstructed state."""

    fidelity_phi_plus: float
    concurrence: float
    entropy_bits: float
    reduced_entropy_bits: float
    chsh_max: float
    purity: float
    chsh_violated: bool

    def to_dict(self) -> dict:
        return {
            "fidelity_phi_plus": self.fidelity_phi_plus,
            "concurrence": self.concurrence,
            "entropy_bits": self.entropy_bits,
            "reduced_entropy_bits": self.reduced_entropy_bits,
            "chsh_max": self.chsh_max,
            "purity": self.purity,
            "chsh_violated": self.chsh_violated,
        }


_METRIC_NAMES = (
    "fidelity_phi_plus",
    "concurrence",
    "entropy_bits",
    "chsh_max",
    "purity",
)


@dataclass
class MonteCarloErrors:
    """Metric distributions from Poisson-resampled reconstructions."""

    samples: dict[str, np.ndarray]
    n_trials: int
    n_failed: int

    def mean(self, name: str) -> float:
        return float(self.samples[name].mean())

    def std(self, name: str) -> float:
        return float(self.samples[name].std())

    def summary(self) -> dict:
        return {
            name: {"mean": self.mean(name), "std": self.std(name)}
            for name in self.samples
        }

    def write_csv(self, path) -> None:
        names = list(self.samples)
        columns = np.column_stack([self.samples[n] for n in names])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("trial," + ",".join(names) + "\n")
            for k, row in enumerate(columns):
                fh.write(str(k) + "," + ",".join(f"{v:.9g}" for v in row) + "\n")


@dataclass
class TomographyResult:
    """Reconstructed state with metrics and optional Monte-Carlo errors."""

    rho: np.ndarray
    metrics: MetricReport
    log_likelihood: float
    converged: bool
    informationally_complete: bool
    corner_counts: dict[str, float]
    ll_history: list = field(default_factory=list, repr=False)
    mc: MonteCarloErrors | None = None

    def to_dict(self) -> dict:
        payload = {
            "basis": list(qstate.BASIS),
            "rho_real": self.rho.real.tolist(),
            "rho_imag": self.rho.imag.tolist(),
            "metrics": self.metrics.to_dict(),
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "informationally_complete": self.informationally_complete,
            "corner_counts": self.corner_counts,
        }
        if self.mc is not None:
            payload["monte_carlo"] = {
                "n_trials": self.mc.n_trials,
                "n_failed": self.mc.n_failed,
                "metrics": self.mc.summary(),
            }
        return payload

    def to_json_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# operators and likelihood


def measurement_operators(
    settings, arms: qstate.ArmModel | None = None
) -> list[dict[str, np.ndarray]]:
    """Region operators per setting, in the relative-detection convention.

    EE and LL operators are setting independent; the corner operators act
    only on cross-bin populations, hence vanish on the single-pair sector.
    """
    arms = arms or qstate.ArmModel.balanced()
    out = []
    for phi_s, phi_i in settings:
        ops = qstate.region_operators(qstate.PhaseSettings(phi_s, phi_i), arms)
        out.append(ops)
    return out


def _stack_operators(records, arms):
    ops = measurement_operators(
        [(r.phi_s, r.phi_i) for r in records], arms
    )
    mats = []
    counts = []
    for record, op_map in zip(records, ops):
        region_counts = record.all_counts()
        for label, n_counts in zip(qstate.REGIONS, region_counts):
            mats.append(op_map[label])
            counts.append(n_counts)
    return np.array(mats), np.array(counts)


def _is_informationally_complete(mats: np.ndarray) -> bool:
    """True when the operators plus identity span all Hermitian matrices."""
    stacked = np.concatenate([mats, np.eye(4, dtype=complex)[None]])
    vectors = np.column_stack(
        [stacked.real.reshape(len(stacked), -1), stacked.imag.reshape(len(stacked), -1)]
    )
    return int(np.linalg.matrix_rank(vectors, tol=1e-10)) >= 16


_DIAG_IDX = [(0, 0), (1, 1), (2, 2), (3, 3)]
_LOWER_IDX = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)]


def _params_to_t(t: np.ndarray) -> np.ndarray:
    mat = np.zeros((4, 4), dtype=complex)
    for k, (r, c) in enumerate(_DIAG_IDX):
        mat[r, c] = t[k]
    for k, (r, c) in enumerate(_LOWER_IDX):
        mat[r, c] = t[4 + 2 * k] + 1j * t[5 + 2 * k]
    return mat


def _t_to_params(mat: np.ndarray) -> np.ndarray:
    t = np.zeros(16)
    for k, (r, c) in enumerate(_DIAG_IDX):
        t[k] = mat[r, c].real
    for k, (r, c) in enumerate(_LOWER_IDX):
        t[4 + 2 * k] = mat[r, c].real
        t[5 + 2 * k] = mat[r, c].imag
    return t


def _rho_from_params(t: np.ndarray) -> np.ndarray:
    tm = _params_to_t(t)
    s = tm @ tm.conj().T
    trace = np.trace(s).real
    if trace <= 0:
        raise FloatingPointError("zero-trace Cholesky factor")
    return s / trace


_Q_FLOOR = 1e-300


def _neg_log_likelihood(t, mats, counts, m_total, n_total):
    """Scale-profiled extended Poisson objective and its gradient.

    With q_k = tr(M_k T T^dag) the profiled log likelihood is
    sum_k N_k log q_k - N log sum_j q_j, independent of the scale of T.
    """
    tm = _params_to_t(t)
    s = tm @ tm.conj().T
    q = np.einsum("kij,ji->k", mats, s).real
    q = np.maximum(q, _Q_FLOOR)
    q_sum = float(np.trace(m_total @ s).real)
    if q_sum <= 0:
        return np.inf, np.zeros_like(t)
    with np.errstate(divide="ignore"):
        ll = float(np.sum(counts * np.log(q)) - n_total * math.log(q_sum))
    g_op = np.einsum("k,kij->ij", counts / q, mats) - (n_total / q_sum) * m_total
    c_mat = g_op @ tm  # Wirtinger gradient of ll with respect to conj(T)
    grad = np.zeros(16)
    for k, (r, c) in enumerate(_DIAG_IDX):
        grad[k] = 2.0 * c_mat[r, c].real
    for k, (r, c) in enumerate(_LOWER_IDX):
        grad[4 + 2 * k] = 2.0 * c_mat[r, c].real
        grad[5 + 2 * k] = 2.0 * c_mat[r, c].imag
    return -ll, -grad


def _validate_settings(records) -> None:
    present = [(r.phi_s, r.phi_i) for r in records]
    for target in CANONICAL_SETTINGS:
        if not any(
            abs(p[0] - target[0]) < 1e-9 and abs(p[1] - target[1]) < 1e-9
            for p in present
        ):
            raise TomographyError(
                f"records must include the projector setting {target}"
            )


def mle_reconstruct(
    records,
    config: MleConfig | None = None,
    arms: qstate.ArmModel | None = None,
) -> TomographyResult:
    """Maximum-likelihood density matrix from region-count records.

    Parameters
    ----------
    records : list of MeasurementRecord
        Must cover the four canonical projector settings; counts may not
        all be zero.
    config : MleConfig, optional
    arms : ArmModel, optional
        Arm transmissions baked into the measurement operators.

    Raises
    ------
    TomographyError
        On missing settings, all-zero counts, or failed convergence.
    """
    config = config or MleConfig()
    records = list(records)
    if not records:
        raise TomographyError("no measurement records supplied")
    _validate_settings(records)
    mats, counts = _stack_operators(records, arms)
    n_total = float(counts.sum())
    if n_total <= 0:
        raise TomographyError("all region counts are zero")
    m_total = np.einsum("kij->ij", mats)
    complete = _is_informationally_complete(mats)

    rng = np.random.default_rng(config.rng_seed)
    starts = [_t_to_params(0.5 * np.eye(4, dtype=complex))]
    for _ in range(max(config.restart_count - 1, 0)):
        raw = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        starts.append(_t_to_params(np.tril(raw)))

    best = None
    best_history = None
    for x0 in starts:
        history = []

        def callback(xk):
            value, _ = _neg_log_likelihood(xk, mats, counts, m_total, n_total)
            history.append(-value)

        result = minimize(
            _neg_log_likelihood,
            x0,
            args=(mats, counts, m_total, n_total),
            jac=True,
            method="L-BFGS-B",
            callback=callback,
            options={
                "ftol": config.tolerance,
                "gtol": 1e-12,
                "maxiter": config.max_iterations,
            },
        )
        if not np.isfinite(result.fun):
            continue
        if best is None or result.fun < best.fun:
            best = result
            best_history = history
    if best is None:
        raise TomographyError("likelihood maximisation failed for every start")

    rho = _rho_from_params(best.x)
    # round-off guard: re-symmetrise before validation
    rho = 0.5 * (rho + rho.conj().T)
    corner_totals = {r: 0.0 for r in qstate.CORNER_REGIONS}
    for record in records:
        for label, value in record.corner_counts().items():
            corner_totals[label] += value
    return TomographyResult(
        rho=rho,
        metrics=report_metrics(rho),
        log_likelihood=float(-best.fun),
        converged=bool(best.success),
        informationally_complete=complete,
        corner_counts=corner_totals,
        ll_history=best_history or [],
    )


def report_metrics(rho: np.ndarray) -> MetricReport:
    """Entanglement metrics of a density matrix, with the CHSH flag."""
    chsh = qstate.chsh_max(rho)
    return MetricReport(
        fidelity_phi_plus=qstate.fidelity(rho, qstate.phi_plus()),
        concurrence=qstate.concurrence(rho),
        entropy_bits=qstate.von_neumann_entropy(rho),
        reduced_entropy_bits=qstate.reduced_entropy(rho),
        chsh_max=chsh,
        purity=qstate.purity(rho),
        chsh_violated=bool(chsh > _CHSH_BOUND),
    )


def monte_carlo_errors(
    records,
    config: MleConfig | None = None,
    n_trials: int = 5000,
    arms: qstate.ArmModel | None = None,
    point_estimate: TomographyResult | None = None,
    rng_seed: int = 20_000,
) -> MonteCarloErrors:
    """Metric spreads from Poisson resampling of the region counts.

    Every trial redraws each region count from a Poisson distribution
    centred on the observed count and reruns the MLE starting from the
    point estimate.  Failed trials are counted, never silently dropped.
    A single trial means no resampling: the point estimate is returned as
    the lone sample.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    config = config or MleConfig()
    records = list(records)
    if point_estimate is None:
        point_estimate = mle_reconstruct(records, config, arms)
    if n_trials == 1:
        samples = {
            name: np.array([getattr(point_estimate.metrics, name)])
            for name in _METRIC_NAMES
        }
        return MonteCarloErrors(samples=samples, n_trials=1, n_failed=0)

    mats, counts = _stack_operators(records, arms)
    m_total = np.einsum("kij->ij", mats)
    # warm start: point estimate blended with white noise so the Cholesky
    # factor is full rank and no search direction starts with zero gradient
    rho0 = 0.95 * point_estimate.rho + 0.05 * np.eye(4) / 4.0
    x_start = _t_to_params(np.linalg.cholesky(rho0 / np.trace(rho0).real))

    seeds = np.random.SeedSequence(rng_seed).spawn(n_trials)
    samples = {name: np.empty(n_trials) for name in _METRIC_NAMES}
    n_failed = 0
    for k in range(n_trials):
        rng = np.random.default_rng(seeds[k])
        trial_counts = rng.poisson(counts).astype(float)
        n_total = float(trial_counts.sum())
        if n_total <= 0:
            n_failed += 1
            for name in _METRIC_NAMES:
                samples[name][k] = np.nan
            continue
        result = minimize(
            _neg_log_likelihood,
            x_start,
            args=(mats, trial_counts, m_total, n_total),
            jac=True,
            method="L-BFGS-B",
            options={
                "ftol": config.tolerance,
                "gtol": 1e-12,
                "maxiter": config.max_iterations,
            },
        )
        if not np.isfinite(result.fun):
            n_failed += 1
            for name in _METRIC_NAMES:
                samples[name][k] = np.nan
            continue
        rho = _rho_from_params(result.x)
        rho = 0.5 * (rho + rho.conj().T)
        metrics = report_metrics(rho)
        for name in _METRIC_NAMES:
            samples[name][k] = getattr(metrics, name)

    if n_failed:
        for name in _METRIC_NAMES:
            samples[name] = samples[name][~np.isnan(samples[name])]
    return MonteCarloErrors(samples=samples, n_trials=n_trials, n_failed=n_failed)


# ---------------------------------------------------------------------------
# forward model and serialisation


def forward_counts(
    rho: np.ndarray,
    total_counts: float,
    settings=CANONICAL_SETTINGS,
    arms: qstate.ArmModel | None = None,
    rng: np.random.Generator | None = None,
) -> list[MeasurementRecord]:
    """Expected (or Poisson-sampled) region counts for a known state.

    ``total_counts`` scales the summed expectation over all settings and
    informative regions.  Pass ``rng`` to add Poisson noise.
    """
    mat = qstate.validate_density_matrix(rho)
    ops = measurement_operators(settings, arms)
    raw = []
    for op_map in ops:
        raw.append(
            {
                label: max(float(np.trace(op_map[label] @ mat).real), 0.0)
                for label in qstate.REGIONS
            }
        )
    informative_total = sum(
        sum(p[label] for label in qstate.INFORMATIVE_REGIONS) for p in raw
    )
    scale = total_counts / informative_total
    records = []
    for (phi_s, phi_i), probs in zip(settings, raw):
        counts = {}
        for label in qstate.REGIONS:
            expected = scale * probs[label]
            counts[label] = (
                float(rng.poisson(expected)) if rng is not None else expected
            )
        records.append(MeasurementRecord(phi_s, phi_i, counts))
    return records


def records_to_json_file(records, path) -> None:
    payload = {
        "schema_version": 1,
        "records": [
            {
                "phi_s": r.phi_s,
                "phi_i": r.phi_i,
                "acquisition_s": r.acquisition_s,
                "region_counts": {k: v for k, v in r.region_counts.items()},
            }
            for r in records
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def records_from_json_file(path) -> list[MeasurementRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or "records" not in payload:
        raise TomographyError("records file must hold a 'records' array")
    if payload.get("schema_version") != 1:
        raise TomographyError("unsupported records schema_version")
    records = []
    for entry in payload["records"]:
        records.append(
            MeasurementRecord(
                phi_s=float(entry["phi_s"]),
                phi_i=float(entry["phi_i"]),
                region_counts={
                    str(k): float(v) for k, v in entry["region_counts"].items()
                },
                acquisition_s=float(entry.get("acquisition_s", 0.0)),
            )
        )
    return records
