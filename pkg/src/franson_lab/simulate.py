"""Seeded Monte-Carlo time-tag engine.

Every pump pulse pair draws a photon-pair count; pairs are split to the two
analysis channels by a probabilistic junction (same-channel events carry no
coincidence and are dropped), each surviving pair samples a joint output
slot from the exact single-pair outcome distribution, and detections are
thinned by channel loss, smeared by Gaussian detector jitter and merged
with Poissonian dark counts.  Double-pair events draw two pairs
independently, with no mutual coherence, which is what populates the
anti-diagonal corner regions.

Pulses are processed in fixed-size blocks with per-block generators spawned
from the master seed, so results are reproducible and independent of the
worker count.  The ``FRANSON_LAB_THREADS`` environment variable caps the
worker pool.  Timestamps are integer picoseconds.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analysis, qstate
from .config import ExperimentConfig

__all__ = [
    "TimeTagStream",
    "TripleRecords",
    "Histogram2D",
    "Collapsed1D",
    "PairCalibrationCounts",
    "run_experiment",
    "run_pair_calibration",
    "match_triples",
    "build_histogram2d",
    "collapse_histogram",
    "single_pair_click_table",
]

_BLOCK_SIZE = 1_000_000

_NO_CLICK = 3  # per-channel outcome index meaning "not detected"


def worker_count() -> int:
    """Worker cap from FRANSON_LAB_THREADS, defaulting to one."""
    raw = os.environ.get("FRANSON_LAB_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        return 1
    return max(1, value)


# ---------------------------------------------------------------------------
# data types


@dataclass
class TimeTagStream:
    """Detected time tags plus the implicit trigger clock.

    Trigger tags are one per pump pulse pair at exact multiples of the
    repetition period; they are materialised lazily because long
    acquisitions have vastly more triggers than photon tags.
    """

    signal_ps: np.ndarray
    idler_ps: np.ndarray
    trigger_period_ps: float
    n_triggers: int
    tau_ps: float

    def __post_init__(self):
        for name in ("signal_ps", "idler_ps"):
            tags = getattr(self, name)
            if tags.size and np.any(np.diff(tags) < 0):
                raise ValueError(f"{name} timestamps must be non-decreasing")

    def trigger_times(self) -> np.ndarray:
        return np.rint(
            np.arange(self.n_triggers, dtype=np.float64) * self.trigger_period_ps
        ).astype(np.int64)

    def n_tags(self) -> dict[str, int]:
        return {
            "trigger": self.n_triggers,
            "signal": int(self.signal_ps.size),
            "idler": int(self.idler_ps.size),
        }

    def write_csv(self, path, chunk: int = 500_000) -> None:
        """Write ``channel,timestamp_ps`` rows, channel-grouped."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("channel,timestamp_ps\n")
            for start in range(0, self.n_triggers, chunk):
                stop = min(start + chunk, self.n_triggers)
                times = np.rint(
                    np.arange(start, stop, dtype=np.float64)
                    * self.trigger_period_ps
                ).astype(np.int64)
                fh.writelines(f"trigger,{t}\n" for t in times)
            for name, tags in (("signal", self.signal_ps), ("idler", self.idler_ps)):
                for start in range(0, tags.size, chunk):
                    fh.writelines(
                        f"{name},{t}\n" for t in tags[start : start + chunk]
                    )


@dataclass
class TripleRecords:
    """Per-trigger (signal delay, idler delay) coincidence records."""

    dt_signal_ps: np.ndarray
    dt_idler_ps: np.ndarray
    n_triggers: int
    tau_ps: float
    window_ps: float

    def __len__(self) -> int:
        return int(self.dt_signal_ps.size)


@dataclass
class Histogram2D:
    """Binned 2D coincidence counts with 3x3 region integrals."""

    counts: np.ndarray
    signal_edges_ps: np.ndarray
    idler_edges_ps: np.ndarray
    bin_width_ps: float
    tau_ps: float
    sigma_ps: float | None
    region_radius_ps: float
    region_counts: np.ndarray  # 3x3, indices (signal slot, idler slot)

    def region(self, label: str) -> int:
        a = qstate.SLOTS.index(label[0])
        b = qstate.SLOTS.index(label[1])
        return int(self.region_counts[a, b])

    def region_summary(self) -> dict[str, int]:
        return {label: self.region(label) for label in qstate.REGIONS}

    def total_records(self) -> int:
        return int(self.counts.sum())

    def write_csv(self, path) -> None:
        """Matrix with idler bin centres as header row, signal centres as
        first column."""
        s_centers = 0.5 * (self.signal_edges_ps[:-1] + self.signal_edges_ps[1:])
        i_centers = 0.5 * (self.idler_edges_ps[:-1] + self.idler_edges_ps[1:])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("signal_ps\\idler_ps," + ",".join(f"{c:g}" for c in i_centers))
            fh.write("\n")
            for center, row in zip(s_centers, self.counts):
                fh.write(f"{center:g}," + ",".join(str(int(v)) for v in row))
                fh.write("\n")

    def write_region_json(self, path) -> None:
        payload = {
            "bin_width_ps": self.bin_width_ps,
            "tau_ps": self.tau_ps,
            "sigma_ps": self.sigma_ps,
            "region_radius_ps": self.region_radius_ps,
            "regions": self.region_summary(),
            "total_records": self.total_records(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class Collapsed1D:
    """Five-peak collapse of the 2D histogram along the main diagonal.

    Peaks from bottom-left to top-right: EE, ET+TE, TT, TL+LT, LL.  The
    anti-diagonal corners are excluded from the peaks and reported apart.
    """

    peaks: tuple[int, int, int, int, int]
    corner_counts: dict[str, int]
    labels: tuple[str, ...] = ("EE", "ET+TE", "TT", "TL+LT", "LL")

    def total(self) -> int:
        return int(sum(self.peaks))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("peak,label,counts\n")
            for k, (label, counts) in enumerate(zip(self.labels, self.peaks)):
                fh.write(f"{k},{label},{counts}\n")
            for label, counts in sorted(self.corner_counts.items()):
                fh.write(f"corner,{label},{counts}\n")


@dataclass
class PairCalibrationCounts:
    """Singles and coincidence counts from a straight-waveguide run."""

    n_pulses: int
    singles_signal: int
    singles_idler: int
    coincidences_center: int
    coincidences_side: int


# ---------------------------------------------------------------------------
# single-pair outcome table


def _channel_kraus(policy: str, phi: float, t_short: float, t_long: float):
    """Physical per-channel amplitude map, rows (E, T, L) x columns (E, L).

    Includes the recombiner output-port split, so per-photon detection
    probability at unit transmission is 1/2 for every policy.
    """
    if policy == "probabilistic":
        return qstate.channel_transfer(phi, t_short, t_long) / math.sqrt(2.0)
    k = np.zeros((3, 2), dtype=complex)
    phase = t_long * np.exp(1j * phi) / math.sqrt(2.0)
    if policy == "energy_basis":
        # both bins are actively routed into the interfering slot
        k[1, 0] = phase
        k[1, 1] = t_short / math.sqrt(2.0)
    elif policy == "time_basis":
        # bins stay temporally separated
        k[0, 0] = t_short / math.sqrt(2.0)
        k[2, 1] = phase
    else:
        raise ValueError(f"unknown routing policy {policy!r}")
    return k


def single_pair_click_table(
    rho: np.ndarray,
    settings: qstate.PhaseSettings,
    arms: qstate.ArmModel,
    policy: str = "probabilistic",
) -> np.ndarray:
    """4x4 joint click probabilities for one split photon pair.

    Indices run over (signal outcome, idler outcome) with outcomes
    (slot E, slot T, slot L, no click); the table sums to one.  For the
    probabilistic policy the detected 3x3 block equals the relative
    detection probabilities of the outcome distribution divided by four.
    """
    mat = qstate.validate_density_matrix(rho)
    ks = _channel_kraus(policy, settings.phi_s, arms.t_short[0], arms.t_long[0])
    ki = _channel_kraus(policy, settings.phi_i, arms.t_short[1], arms.t_long[1])
    effects_s = [np.outer(row.conj(), row) for row in ks]
    effects_i = [np.outer(row.conj(), row) for row in ki]
    effects_s.append(np.eye(2) - sum(effects_s))
    effects_i.append(np.eye(2) - sum(effects_i))
    table = np.empty((4, 4))
    for a, es in enumerate(effects_s):
        for b, ei in enumerate(effects_i):
            table[a, b] = float(np.trace(np.kron(es, ei) @ mat).real)
    table = np.clip(table, 0.0, None)
    total = table.sum()
    if abs(total - 1.0) > 1e-9:
        raise RuntimeError(f"click table sums to {total}, not 1")
    return table / total


# ---------------------------------------------------------------------------
# experiment engine


def _simulate_block(
    seed_seq: np.random.SeedSequence,
    first_pulse: int,
    n_pulses: int,
    period_ps: float,
    tau_ps: float,
    pair_cum: np.ndarray,
    click_cum: np.ndarray,
    eta: tuple[float, float],
    jitter_sigma: float,
    dark_rate_hz: float,
):
    """Simulate one block of pulses; returns unsorted signal/idler tags."""
    rng = np.random.default_rng(seed_seq)
    u = rng.random(n_pulses)
    n_pairs_per_pulse = np.searchsorted(pair_cum, u, side="right")
    pulse_idx = np.nonzero(n_pairs_per_pulse)[0]
    pair_pulse = np.repeat(
        pulse_idx, n_pairs_per_pulse[pulse_idx]
    )  # one row per generated pair

    split_ok = rng.random(pair_pulse.size) < 0.5
    pair_pulse = pair_pulse[split_ok]

    outcome = np.searchsorted(click_cum, rng.random(pair_pulse.size), side="right")
    slot_s, slot_i = np.divmod(outcome, 4)

    tags = []
    for slots, channel_eta in ((slot_s, eta[0]), (slot_i, eta[1])):
        detected = slots != _NO_CLICK
        detected &= rng.random(slots.size) < channel_eta
        pulses = pair_pulse[detected]
        base = np.rint((first_pulse + pulses) * period_ps)
        t = base + slots[detected] * tau_ps
        if jitter_sigma > 0:
            t = t + rng.normal(0.0, jitter_sigma, t.size)
        tags.append(np.rint(t).astype(np.int64))

    block_span_ps = n_pulses * period_ps
    dark_mean = dark_rate_hz * block_span_ps * 1e-12
    for k in range(2):
        n_dark = rng.poisson(dark_mean)
        dark = np.rint(
            first_pulse * period_ps + rng.random(n_dark) * block_span_ps
        ).astype(np.int64)
        tags[k] = np.concatenate([tags[k], dark])
    return tags[0], tags[1]


def run_experiment(cfg: ExperimentConfig) -> TimeTagStream:
    """Simulate one acquisition and return the detected time-tag stream."""
    cfg.validate()
    probs = cfg.pulse_probs()
    # the rare n > 2 remainder is simulated as three independent pairs
    pair_cum = np.cumsum([probs.p0, probs.p1, probs.p2, probs.higher])
    pair_cum[-1] = 1.0

    rho = qstate.dephased_bell(cfg.phi_p_rad, cfg.dispersion_visibility_value())
    table = single_pair_click_table(
        rho, cfg.phases(), cfg.arms(), cfg.routing_policy
    )
    click_cum = np.cumsum(table.reshape(-1))
    click_cum[-1] = 1.0

    n_pulses = cfg.n_pulses()
    period = cfg.period_ps()
    eta = cfg.channel_transmissions()

    starts = list(range(0, n_pulses, _BLOCK_SIZE))
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(len(starts))

    def job(args):
        start, seed = args
        return _simulate_block(
            seed,
            start,
            min(_BLOCK_SIZE, n_pulses - start),
            period,
            cfg.tau_ps,
            pair_cum,
            click_cum,
            eta,
            cfg.jitter_sigma_ps,
            cfg.dark_rate_hz,
        )

    workers = worker_count()
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, zip(starts, seeds)))
    else:
        results = [job(args) for args in zip(starts, seeds)]

    signal = np.sort(np.concatenate([r[0] for r in results])) if results else np.empty(0, np.int64)
    idler = np.sort(np.concatenate([r[1] for r in results])) if results else np.empty(0, np.int64)
    return TimeTagStream(
        signal_ps=signal,
        idler_ps=idler,
        trigger_period_ps=period,
        n_triggers=n_pulses,
        tau_ps=cfg.tau_ps,
    )


def run_pair_calibration(
    pair_prob: float,
    channel_loss_db: tuple[float, float],
    detector_efficiency: float,
    n_pulses: int,
    seed: int = 1,
) -> PairCalibrationCounts:
    """Straight-waveguide pair stream for loss and rate calibration.

    No interferometers: every generated pair sends its signal photon to one
    detector and its idler to the other, each thinned by the channel chain.
    The side coincidences pair a detected signal with a detected idler from
    the following pulse, which is the multi-pulse accidental used by the
    pair-probability estimator.
    """
    if not 0.0 <= pair_prob < 1.0:
        raise ValueError("pair_prob must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    eta = tuple(
        10.0 ** (-db / 10.0) * detector_efficiency for db in channel_loss_db
    )
    singles_s = singles_i = center = side = 0
    prev_block_last_signal = False
    for start in range(0, n_pulses, _BLOCK_SIZE):
        n = min(_BLOCK_SIZE, n_pulses - start)
        pair = rng.random(n) < pair_prob
        det_s = pair & (rng.random(n) < eta[0])
        det_i = pair & (rng.random(n) < eta[1])
        singles_s += int(det_s.sum())
        singles_i += int(det_i.sum())
        center += int((det_s & det_i).sum())
        side += int((det_s[:-1] & det_i[1:]).sum())
        if prev_block_last_signal and det_i.size:
            side += int(det_i[0])
        prev_block_last_signal = bool(det_s[-1]) if n else prev_block_last_signal
    return PairCalibrationCounts(
        n_pulses=n_pulses,
        singles_signal=singles_s,
        singles_idler=singles_i,
        coincidences_center=center,
        coincidences_side=side,
    )


# ---------------------------------------------------------------------------
# coincidence analysis


def _slot_delays(tags: np.ndarray, period_ps: float, tau_ps: float, window_ps: float):
    """Map tags to (pulse index, delay) and keep those near a slot centre."""
    pulse = np.rint(tags / period_ps).astype(np.int64)
    delay = tags - np.rint(pulse * period_ps).astype(np.int64)
    slot = np.clip(np.rint(delay / tau_ps), 0, 2)
    keep = np.abs(delay - slot * tau_ps) <= window_ps
    return pulse[keep], delay[keep]


def match_triples(stream: TimeTagStream, window_ps: float) -> TripleRecords:
    """Form (signal, idler) delay records per trigger.

    A tag joins a record when it falls within ``window_ps`` of one of the
    three slot centres of its nearest trigger; all signal-idler tag
    combinations of one trigger become records.  Deterministic given the
    stream; rejects unsorted input.
    """
    if window_ps <= 0:
        raise ValueError("window must be positive")
    for name, tags in (("signal", stream.signal_ps), ("idler", stream.idler_ps)):
        if tags.size and np.any(np.diff(tags) < 0):
            raise ValueError(f"{name} tags are not sorted")

    period = stream.trigger_period_ps
    s_pulse, s_delay = _slot_delays(stream.signal_ps, period, stream.tau_ps, window_ps)
    i_pulse, i_delay = _slot_delays(stream.idler_ps, period, stream.tau_ps, window_ps)

    if s_pulse.size == 0 or i_pulse.size == 0:
        return TripleRecords(
            np.empty(0, np.int64), np.empty(0, np.int64),
            stream.n_triggers, stream.tau_ps, window_ps,
        )

    su, s_start, s_count = np.unique(s_pulse, return_index=True, return_counts=True)
    iu, i_start, i_count = np.unique(i_pulse, return_index=True, return_counts=True)
    common, s_pos, i_pos = np.intersect1d(
        su, iu, assume_unique=True, return_indices=True
    )
    if common.size == 0:
        return TripleRecords(
            np.empty(0, np.int64), np.empty(0, np.int64),
            stream.n_triggers, stream.tau_ps, window_ps,
        )

    m = s_count[s_pos]
    n = i_count[i_pos]
    sizes = m * n
    total = int(sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    within = np.arange(total) - np.repeat(offsets, sizes)
    srow = np.repeat(s_start[s_pos], sizes) + within // np.repeat(n, sizes)
    irow = np.repeat(i_start[i_pos], sizes) + within % np.repeat(n, sizes)
    return TripleRecords(
        dt_signal_ps=s_delay[srow],
        dt_idler_ps=i_delay[irow],
        n_triggers=stream.n_triggers,
        tau_ps=stream.tau_ps,
        window_ps=window_ps,
    )


def _fit_jitter_sigma(records: TripleRecords, bin_width_ps: float) -> float | None:
    """Estimate the per-axis timing spread from pooled slot residuals."""
    tau = records.tau_ps
    residuals = []
    for d in (records.dt_signal_ps, records.dt_idler_ps):
        slot = np.clip(np.rint(d / tau), 0, 2)
        residuals.append(d - slot * tau)
    pooled = np.concatenate(residuals)
    if pooled.size < 100:
        return None
    width = max(bin_width_ps, 1.0)
    edges = np.arange(pooled.min() - width, pooled.max() + 2 * width, width)
    counts, edges = np.histogram(pooled, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    try:
        fit = analysis.fit_gaussian_peak(centers, counts)
    except analysis.FitError:
        return None
    return fit.sigma


def build_histogram2d(
    records: TripleRecords,
    bin_width_ps: float,
    tau_ps: float | None = None,
    sigma_hint_ps: float | None = None,
) -> Histogram2D:
    """Bin records on the signal-delay x idler-delay plane.

    Region integrals run over squares of half-width five fitted jitter
    sigmas around the nine slot centres, clamped so neighbouring regions
    cannot overlap.
    """
    if bin_width_ps <= 0:
        raise ValueError("bin width must be positive")
    tau = tau_ps if tau_ps is not None else records.tau_ps

    lo = -0.5 * tau
    hi = 2.5 * tau
    edges = np.arange(lo, hi + bin_width_ps, bin_width_ps)
    counts, s_edges, i_edges = np.histogram2d(
        records.dt_signal_ps, records.dt_idler_ps, bins=(edges, edges)
    )

    sigma = _fit_jitter_sigma(records, bin_width_ps)
    if sigma is None:
        sigma = sigma_hint_ps
    radius = 5.0 * sigma if sigma is not None else 0.25 * tau
    radius = min(radius, 0.49 * tau)

    region_counts = np.zeros((3, 3), dtype=np.int64)
    if len(records):
        ds = records.dt_signal_ps
        di = records.dt_idler_ps
        a = np.clip(np.rint(ds / tau).astype(int), 0, 2)
        b = np.clip(np.rint(di / tau).astype(int), 0, 2)
        inside = (np.abs(ds - a * tau) <= radius) & (np.abs(di - b * tau) <= radius)
        np.add.at(region_counts, (a[inside], b[inside]), 1)

    return Histogram2D(
        counts=counts.astype(np.int64),
        signal_edges_ps=s_edges,
        idler_edges_ps=i_edges,
        bin_width_ps=bin_width_ps,
        tau_ps=tau,
        sigma_ps=sigma,
        region_radius_ps=radius,
        region_counts=region_counts,
    )


def collapse_histogram(histogram: Histogram2D) -> Collapsed1D:
    """Sum the region integrals along the five main-diagonal lines."""
    rc = histogram.region_counts
    peaks = (
        int(rc[0, 0]),
        int(rc[0, 1] + rc[1, 0]),
        int(rc[1, 1]),
        int(rc[1, 2] + rc[2, 1]),
        int(rc[2, 2]),
    )
    corners = {"EL": int(rc[0, 2]), "LE": int(rc[2, 0])}
    return Collapsed1D(peaks=peaks, corner_counts=corners)
