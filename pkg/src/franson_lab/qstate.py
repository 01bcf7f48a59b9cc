"""Exact two-qubit time-bin state math.

States live in the four-dimensional space spanned by the ordered basis
``(EE, EL, LE, LL)``, where the first letter is the signal channel bin and
the second the idler channel bin (E = early, L = late).  An unbalanced
analysis interferometer on each channel maps each photon onto three output
time slots (E, T, L), with T the interfering middle slot.  The joint output
is summarised over the nine detection regions ``{E,T,L} x {E,T,L}``.

Amplitude convention: each interferometer pass contributes a factor
``1/sqrt(2)`` per photon, so the region probabilities are relative detection
probabilities whose phase-averaged total is one (the instantaneous total
varies with the analysis phases because unmonitored recombiner ports carry
the missing norm).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BASIS",
    "REGIONS",
    "PhaseSettings",
    "ArmModel",
    "OutcomeDistribution",
    "bell_state",
    "phi_plus",
    "pure_density",
    "dephased_bell",
    "werner_state",
    "validate_state",
    "validate_density_matrix",
    "is_valid_density_matrix",
    "channel_transfer",
    "franson_transfer",
    "interfering_probability",
    "region_operators",
    "outcome_probabilities",
    "fidelity",
    "concurrence",
    "purity",
    "von_neumann_entropy",
    "reduced_entropy",
    "chsh_max",
]

#: Ordered two-qubit basis labels.
BASIS = ("EE", "EL", "LE", "LL")

#: Ordered detection-region labels over the 3x3 output slot grid.
REGIONS = ("EE", "ET", "TE", "TT", "EL", "LE", "TL", "LT", "LL")

#: Output slots per channel, indexed 0, 1, 2.
SLOTS = ("E", "T", "L")

#: Anti-diagonal corner regions; unreachable from single-pair (EE/LL) states.
CORNER_REGIONS = ("EL", "LE")

#: The seven regions a single photon pair can populate.
INFORMATIVE_REGIONS = tuple(r for r in REGIONS if r not in CORNER_REGIONS)

_SQRT2 = math.sqrt(2.0)

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

# Spin-flip operator sigma_y (x) sigma_y, standard Pauli convention with
# |E> = |0>, |L> = |1>.
SPIN_FLIP = np.kron(PAULI_Y, PAULI_Y)


@dataclass(frozen=True)
class PhaseSettings:
    """Analysis and pump phases in radians."""

    phi_s: float
    phi_i: float
    phi_p: float = 0.0

    def __post_init__(self):
        for name in ("phi_s", "phi_i", "phi_p"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def canonicalized(self) -> "PhaseSettings":
        """Return a copy with all phases reduced to [0, 2*pi)."""
        two_pi = 2.0 * math.pi
        return PhaseSettings(
            self.phi_s % two_pi, self.phi_i % two_pi, self.phi_p % two_pi
        )

    @property
    def fringe_phase(self) -> float:
        """The combination phi_s + phi_i - phi_p driving the TT fringe."""
        return self.phi_s + self.phi_i - self.phi_p


@dataclass(frozen=True)
class ArmModel:
    """Amplitude transmissions of the short and long interferometer arms.

    Each field is a ``(signal, idler)`` pair of amplitude transmissions in
    [0, 1].  Unit transmissions reproduce the lossless transfer.
    """

    t_short: tuple[float, float] = (1.0, 1.0)
    t_long: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        for pair in (self.t_short, self.t_long):
            for t in pair:
                if not 0.0 <= t <= 1.0:
                    raise ValueError(f"arm transmission {t} outside [0, 1]")

    @classmethod
    def balanced(cls, t: float = 1.0) -> "ArmModel":
        return cls(t_short=(t, t), t_long=(t, t))


@dataclass
class OutcomeDistribution:
    """Relative detection probabilities over the nine output regions.

    ``amplitudes`` is populated for pure-state transfers and is None for
    density-matrix inputs (where only probabilities are defined).
    """

    probabilities: dict[str, float]
    amplitudes: dict[str, complex] | None = None
    settings: PhaseSettings | None = field(default=None, repr=False)

    def __post_init__(self):
        for label in REGIONS:
            if label not in self.probabilities:
                raise ValueError(f"missing region {label}")
            if self.probabilities[label] < -1e-12:
                raise ValueError(f"negative probability for region {label}")
        if self.amplitudes is not None:
            for label in REGIONS:
                p = abs(self.amplitudes[label]) ** 2
                if abs(p - self.probabilities[label]) > 1e-12:
                    raise ValueError(f"|amplitude|^2 != probability in {label}")

    def probability(self, label: str) -> float:
        return self.probabilities[label]

    def total(self) -> float:
        return float(sum(self.probabilities.values()))

    def as_array(self) -> np.ndarray:
        """Probabilities in REGIONS order."""
        return np.array([self.probabilities[r] for r in REGIONS])


def bell_state(phi_p: float = 0.0) -> np.ndarray:
    """Return (|EE> + e^{i phi_p} |LL>) / sqrt(2) as a length-4 vector."""
    psi = np.zeros(4, dtype=complex)
    psi[0] = 1.0 / _SQRT2
    psi[3] = cmath.exp(1j * phi_p) / _SQRT2
    return psi


def phi_plus() -> np.ndarray:
    """The maximally entangled (|EE> + |LL>) / sqrt(2) state."""
    return bell_state(0.0)


def pure_density(state: np.ndarray) -> np.ndarray:
    """Density matrix |psi><psi| of a pure state."""
    psi = validate_state(state)
    return np.outer(psi, psi.conj())


def dephased_bell(phi_p: float, visibility: float) -> np.ndarray:
    """Bell state with its EE-LL coherence scaled by ``visibility``.

    ``visibility=1`` gives the pure state, ``visibility=0`` the fully
    dephased 50/50 mixture of |EE> and |LL>.
    """
    if not 0.0 <= visibility <= 1.0:
        raise ValueError("visibility must lie in [0, 1]")
    rho = pure_density(bell_state(phi_p))
    rho[0, 3] *= visibility
    rho[3, 0] *= visibility
    return rho


def werner_state(v: float) -> np.ndarray:
    """Werner mixture V |Phi+><Phi+| + (1 - V) I/4."""
    if not 0.0 <= v <= 1.0:
        raise ValueError("mixing parameter must lie in [0, 1]")
    return v * pure_density(phi_plus()) + (1.0 - v) * np.eye(4, dtype=complex) / 4.0


def validate_state(state: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    """Check a pure-state vector: shape (4,), unit norm within ``atol``."""
    psi = np.asarray(state, dtype=complex).reshape(-1)
    if psi.shape != (4,):
        raise ValueError("state must have four amplitudes")
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > atol:
        raise ValueError(f"state norm {norm} differs from 1 by more than {atol}")
    return psi


def validate_density_matrix(
    rho: np.ndarray,
    hermiticity_atol: float = 1e-10,
    eigenvalue_atol: float = 1e-10,
    trace_atol: float = 1e-10,
) -> np.ndarray:
    """Check Hermiticity, positivity and unit trace of a 4x4 density matrix."""
    mat = np.asarray(rho, dtype=complex)
    if mat.shape != (4, 4):
        raise ValueError("density matrix must be 4x4")
    if np.max(np.abs(mat - mat.conj().T)) > hermiticity_atol:
        raise ValueError("density matrix is not Hermitian")
    eigvals = np.linalg.eigvalsh(mat)
    if eigvals.min() < -eigenvalue_atol:
        raise ValueError(f"density matrix has negative eigenvalue {eigvals.min()}")
    if abs(np.trace(mat).real - 1.0) > trace_atol:
        raise ValueError(f"density matrix trace {np.trace(mat).real} is not 1")
    return mat


def is_valid_density_matrix(rho: np.ndarray) -> bool:
    try:
        validate_density_matrix(rho)
    except ValueError:
        return False
    return True


def channel_transfer(
    phi: float, t_short: float = 1.0, t_long: float = 1.0
) -> np.ndarray:
    """Single-channel 3x2 transfer matrix from input bins (E, L) to slots.

    The short arm carries no phase, the long arm (delay line plus heater)
    carries ``phi``.  Early via short lands in slot E, early via long and
    late via short both land in slot T, late via long lands in slot L.
    """
    phase = t_long * cmath.exp(1j * phi)
    k = np.zeros((3, 2), dtype=complex)
    k[0, 0] = t_short  # E -> E (short)
    k[1, 0] = phase    # E -> T (long)
    k[1, 1] = t_short  # L -> T (short)
    k[2, 1] = phase    # L -> L (long)
    return k / _SQRT2


def _joint_transfer(settings: PhaseSettings, arms: ArmModel) -> np.ndarray:
    """9x4 joint transfer matrix, rows in REGIONS order, columns in BASIS order."""
    ks = channel_transfer(settings.phi_s, arms.t_short[0], arms.t_long[0])
    ki = channel_transfer(settings.phi_i, arms.t_short[1], arms.t_long[1])
    joint = np.einsum("ae,bf->abef", ks, ki).reshape(9, 4)
    # einsum orders output regions (a, b) row-major over SLOTS x SLOTS;
    # reorder to REGIONS order.
    slot_order = [
        SLOTS.index(r[0]) * 3 + SLOTS.index(r[1]) for r in REGIONS
    ]
    return joint[slot_order]


def franson_transfer(
    state: np.ndarray, settings: PhaseSettings, arms: ArmModel | None = None
) -> OutcomeDistribution:
    """Propagate a pure two-qubit state through both analysis interferometers.

    Amplitudes of coinciding output regions add coherently; for a Bell input
    only the TT region interferes and the anti-diagonal corners are empty.

    Parameters
    ----------
    state : array_like
        Normalised amplitudes over BASIS.
    settings : PhaseSettings
        Analysis phases; ``phi_p`` is a property of the input state and is
        ignored by the transfer itself.
    arms : ArmModel, optional
        Arm transmissions, unit by default.

    Returns
    -------
    OutcomeDistribution
        Region amplitudes and relative detection probabilities.
    """
    psi = validate_state(state)
    arms = arms or ArmModel.balanced()
    amps = _joint_transfer(settings, arms) @ psi
    amplitudes = {label: complex(a) for label, a in zip(REGIONS, amps)}
    probabilities = {label: float(abs(a) ** 2) for label, a in amplitudes.items()}
    return OutcomeDistribution(probabilities, amplitudes, settings)


def interfering_probability(settings: PhaseSettings) -> float:
    """Probability of the joint interfering (TT) outcome for a Bell input.

    Equals (1 + cos(phi_s + phi_i - phi_p)) / 4, the closed form of the
    TT row of the transfer model at unit transmissions.
    """
    return (1.0 + math.cos(settings.fringe_phase)) / 4.0


def region_operators(
    settings: PhaseSettings, arms: ArmModel | None = None
) -> dict[str, np.ndarray]:
    """Positive operators M_r = A_r^dag A_r for the nine regions.

    Probabilities are tr(M_r rho) in the same relative-detection convention
    as :func:`franson_transfer`.  The corner operators EL and LE act only on
    cross-bin populations and vanish on the single-pair (EE/LL) sector.
    """
    arms = arms or ArmModel.balanced()
    rows = _joint_transfer(settings, arms)
    return {
        label: np.outer(row.conj(), row) for label, row in zip(REGIONS, rows)
    }


def outcome_probabilities(
    rho: np.ndarray, settings: PhaseSettings, arms: ArmModel | None = None
) -> OutcomeDistribution:
    """Region probabilities tr(M_r rho) for a density-matrix input."""
    mat = validate_density_matrix(rho)
    ops = region_operators(settings, arms)
    probabilities = {
        label: max(float(np.trace(op @ mat).real), 0.0)
        for label, op in ops.items()
    }
    return OutcomeDistribution(probabilities, None, settings)


def fidelity(rho: np.ndarray, target: np.ndarray) -> float:
    """Overlap <target| rho |target> with a pure target state."""
    mat = validate_density_matrix(rho)
    psi = validate_state(target)
    value = float((psi.conj() @ mat @ psi).real)
    return min(max(value, 0.0), 1.0)


def purity(rho: np.ndarray) -> float:
    """tr(rho^2)."""
    mat = validate_density_matrix(rho)
    return float(np.trace(mat @ mat).real)


def concurrence(rho: np.ndarray) -> float:
    """Wootters concurrence of a two-qubit density matrix.

    max(0, l1 - l2 - l3 - l4) with l_k the decreasing square roots of the
    eigenvalues of rho (sigma_y x sigma_y) rho* (sigma_y x sigma_y).
    """
    mat = validate_density_matrix(rho)
    rho_tilde = SPIN_FLIP @ mat.conj() @ SPIN_FLIP
    eigvals = np.linalg.eigvals(mat @ rho_tilde)
    # abs() guards against tiny negative real parts from round-off
    lams = np.sqrt(np.sort(np.abs(eigvals.real))[::-1])
    return float(max(0.0, lams[0] - lams[1] - lams[2] - lams[3]))


def _entropy_bits(eigvals: np.ndarray) -> float:
    lams = np.clip(eigvals.real, 0.0, None)
    lams = lams[lams > 1e-14]
    return float(-np.sum(lams * np.log2(lams)))


def von_neumann_entropy(rho: np.ndarray) -> float:
    """Global von Neumann entropy in bits, -sum(l log2 l) over eigenvalues."""
    mat = validate_density_matrix(rho)
    return _entropy_bits(np.linalg.eigvalsh(mat))


def reduced_entropy(rho: np.ndarray, channel: int = 0) -> float:
    """Entropy in bits of one channel's reduced single-qubit state.

    ``channel=0`` traces out the idler, ``channel=1`` the signal.  Equals
    one bit for any maximally entangled pure state.
    """
    mat = validate_density_matrix(rho)
    t = mat.reshape(2, 2, 2, 2)
    if channel == 0:
        reduced = np.einsum("ikjk->ij", t)
    elif channel == 1:
        reduced = np.einsum("kikj->ij", t)
    else:
        raise ValueError("channel must be 0 (signal) or 1 (idler)")
    return _entropy_bits(np.linalg.eigvalsh(reduced))


def correlation_matrix(rho: np.ndarray) -> np.ndarray:
    """3x3 Pauli correlation matrix T_ij = tr(rho sigma_i x sigma_j)."""
    mat = validate_density_matrix(rho)
    paulis = (PAULI_X, PAULI_Y, PAULI_Z)
    t = np.empty((3, 3))
    for i, si in enumerate(paulis):
        for j, sj in enumerate(paulis):
            t[i, j] = np.trace(mat @ np.kron(si, sj)).real
    return t


def chsh_max(rho: np.ndarray) -> float:
    """Maximal CHSH value 2 sqrt(u1 + u2) over measurement settings.

    u1, u2 are the two largest eigenvalues of T^T T with T the Pauli
    correlation matrix; values above 2 certify Bell-inequality violation.
    """
    t = correlation_matrix(rho)
    u = np.sort(np.linalg.eigvalsh(t.T @ t))
    return float(2.0 * math.sqrt(max(u[-1] + u[-2], 0.0)))
