"""Command-line front end.

Four subcommands cover the full workflow: ``simulate`` produces time tags
and histograms from a config, ``calibrate`` builds and fits the two-heater
interference map, ``tomo`` reconstructs the two-qubit state with
Monte-Carlo errors, and ``report`` consolidates a finished run directory
into summaries, plot-ready CSVs and rendered figures.

All commands are deterministic under a fixed ``--seed`` and write exactly
one ``run_manifest.json`` per output directory.  Stdout is line-oriented
``key=value`` pairs.  Exit codes: 2 config validation, 3 I/O failure,
4 fit failure, 5 reconstruction failure, 6 missing artifacts.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, analysis, plots, simulate, tomography
from .config import ConfigError, ExperimentConfig

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FIT = 4
EXIT_MLE = 5
EXIT_MISSING = 6

_MANIFEST_NAME = "run_manifest.json"


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _utcnow() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out_dir: Path, command: str, config_path, seed, timestamps=None):
    manifest = {
        "schema_version": 1,
        "command": command,
        "config_path": str(config_path) if config_path else None,
        "seed": seed,
        "output_dir": str(out_dir),
        "tool_version": __version__,
        "timestamps": timestamps
        or {"started": _utcnow(), "finished": _utcnow()},
    }
    with open(out_dir / _MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_out(out: str) -> Path:
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        _fail(EXIT_IO, f"cannot create output directory {out}: {exc}")
    return path


def _load_config(path: str, seed: int | None) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.from_json_file(path)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    if seed is not None:
        cfg = cfg.replace(rng_seed=seed)
    return cfg


def _echo(key: str, value) -> None:
    click.echo(f"{key}={value}")


@click.group()
@click.version_option(version=__version__, prog_name="franson-lab")
def main():
    """Time-bin entangled pair source simulator and analysis toolkit."""


# ---------------------------------------------------------------------------
# simulate


@main.command("simulate")
@click.argument("config_path", type=click.Path(exists=False))
@click.option("--seed", type=int, default=None, help="Override the config RNG seed.")
@click.option("--out", required=True, help="Output directory.")
@click.option("--window", type=float, default=100.0, show_default=True,
              help="Per-slot coincidence half-window in ps.")
@click.option("--bin", "bin_width", type=float, default=5.0, show_default=True,
              help="Histogram bin width in ps.")
def cmd_simulate(config_path, seed, out, window, bin_width):
    """Run one acquisition and write time tags plus histograms."""
    cfg = _load_config(config_path, seed)
    out_dir = _prepare_out(out)
    started = _utcnow()

    stream = simulate.run_experiment(cfg)
    records = simulate.match_triples(stream, window)
    histogram = simulate.build_histogram2d(
        records, bin_width, sigma_hint_ps=cfg.jitter_sigma_ps
    )
    collapsed = simulate.collapse_histogram(histogram)

    try:
        stream.write_csv(out_dir / "timetags.csv")
        histogram.write_csv(out_dir / "histogram2d.csv")
        histogram.write_region_json(out_dir / "histogram2d_regions.json")
        collapsed.write_csv(out_dir / "collapsed1d.csv")
        cfg.to_json_file(out_dir / "config_used.json")
        _write_manifest(
            out_dir, "simulate", config_path, cfg.rng_seed,
            {"started": started, "finished": _utcnow()},
        )
    except OSError as exc:
        _fail(EXIT_IO, f"writing outputs failed: {exc}")

    for channel, n in stream.n_tags().items():
        _echo(f"tags_{channel}", n)
    _echo("records", len(records))
    for label, value in histogram.region_summary().items():
        _echo(f"region_{label}", value)
    _echo("out", out_dir)


# ---------------------------------------------------------------------------
# calibrate


def _simulate_map_point(cfg: ExperimentConfig, window: float) -> int:
    stream = simulate.run_experiment(cfg)
    records = simulate.match_triples(stream, window)
    histogram = simulate.build_histogram2d(
        records, 5.0, sigma_hint_ps=cfg.jitter_sigma_ps
    )
    return histogram.region("TT")


@main.command("calibrate")
@click.argument("grid_path", type=click.Path(exists=False))
@click.option("--seed", type=int, default=None, help="Override the grid seed.")
@click.option("--out", required=True, help="Output directory.")
@click.option("--window", type=float, default=100.0, show_default=True)
def cmd_calibrate(grid_path, seed, out, window):
    """Build (or ingest) the heater calibration map and fit it."""
    try:
        with open(grid_path, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(EXIT_CONFIG, f"cannot read grid file {grid_path}: {exc}")
    if spec.get("schema_version") != 1:
        _fail(EXIT_CONFIG, "grid file needs schema_version 1")

    out_dir = _prepare_out(out)
    started = _utcnow()

    if "measured_points" in spec:
        points = [tuple(map(float, p)) for p in spec["measured_points"]]
        used_seed = seed
    elif "experiment" in spec and "grid_powers_mw" in spec:
        try:
            cfg = ExperimentConfig.from_dict(spec["experiment"])
        except ConfigError as exc:
            _fail(EXIT_CONFIG, str(exc))
        if seed is not None:
            cfg = cfg.replace(rng_seed=seed)
        used_seed = cfg.rng_seed
        p_s = [float(v) for v in spec["grid_powers_mw"]["signal"]]
        p_i = [float(v) for v in spec["grid_powers_mw"]["idler"]]
        seeds = np.random.SeedSequence(cfg.rng_seed).spawn(len(p_s) * len(p_i))
        points = []
        k = 0
        for a in p_s:
            for b in p_i:
                point_cfg = cfg.replace(
                    heater_powers_mw=(a, b),
                    rng_seed=int(seeds[k].generate_state(1)[0]),
                )
                points.append((a, b, float(_simulate_map_point(point_cfg, window))))
                k += 1
    else:
        _fail(EXIT_CONFIG,
              "grid file needs either measured_points or experiment+grid_powers_mw")

    try:
        fit = analysis.fit_calibration_map(points)
    except analysis.FitError as exc:
        _fail(EXIT_FIT, str(exc))

    powers = {}
    for label, setting in zip(
        ("0_0", "pi2_0", "pi2_pi2", "0_pi2"), tomography.CANONICAL_SETTINGS
    ):
        try:
            p = analysis.projector_powers(fit, setting)
        except analysis.FitError as exc:
            _fail(EXIT_FIT, str(exc))
        powers[label] = {"phi_s": setting[0], "phi_i": setting[1],
                         "p_s_mw": p[0], "p_i_mw": p[1]}

    try:
        fit.to_json(out_dir / "calibration_fit.json")
        with open(out_dir / "projector_powers.json", "w", encoding="utf-8") as fh:
            json.dump(powers, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out_dir / "map_counts.csv", "w", encoding="utf-8") as fh:
            fh.write("p_s_mw,p_i_mw,counts\n")
            for a, b, c in points:
                fh.write(f"{a:g},{b:g},{c:g}\n")
        _write_manifest(out_dir, "calibrate", grid_path, used_seed,
                        {"started": started, "finished": _utcnow()})
    except OSError as exc:
        _fail(EXIT_IO, f"writing outputs failed: {exc}")

    _echo("kappa_s_rad_per_mw", f"{fit.kappa_s:.6g}")
    _echo("kappa_i_rad_per_mw", f"{fit.kappa_i:.6g}")
    _echo("phi_p_rad", f"{fit.phi_p:.6g}")
    _echo("visibility", f"{fit.visibility:.6g}")
    _echo("out", out_dir)


# ---------------------------------------------------------------------------
# tomo


def _records_from_simulation(cfg: ExperimentConfig, window: float):
    """Simulate the four canonical projector settings and collect regions."""
    fit = analysis.CalibrationFit(
        kappa_s=cfg.thermo_kappa_rad_per_mw[0],
        kappa_i=cfg.thermo_kappa_rad_per_mw[1],
        phi_p=cfg.phi_p_rad % (2.0 * math.pi),
        offset=1.0,
        visibility=1.0,
        phi0_s=cfg.thermo_phi0_rad[0],
        phi0_i=cfg.thermo_phi0_rad[1],
    )
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(
        len(tomography.CANONICAL_SETTINGS)
    )
    records = []
    for k, setting in enumerate(tomography.CANONICAL_SETTINGS):
        powers = analysis.projector_powers(fit, setting)
        point_cfg = cfg.replace(
            heater_powers_mw=powers,
            rng_seed=int(seeds[k].generate_state(1)[0]),
        )
        stream = simulate.run_experiment(point_cfg)
        triples = simulate.match_triples(stream, window)
        histogram = simulate.build_histogram2d(
            triples, 5.0, sigma_hint_ps=cfg.jitter_sigma_ps
        )
        counts = {label: float(v) for label, v in histogram.region_summary().items()}
        records.append(
            tomography.MeasurementRecord(
                phi_s=setting[0],
                phi_i=setting[1],
                region_counts=counts,
                acquisition_s=cfg.acquisition_s,
            )
        )
    return records


@main.command("tomo")
@click.argument("records_path", required=False, type=click.Path(exists=False))
@click.option("--from-sim", "sim_config", type=click.Path(exists=False),
              help="Simulate the four projector settings from this config.")
@click.option("--trials", type=int, default=5000, show_default=True,
              help="Monte-Carlo resampling trials (1 = point estimate only).")
@click.option("--seed", type=int, default=None)
@click.option("--out", required=True)
@click.option("--window", type=float, default=100.0, show_default=True)
def cmd_tomo(records_path, sim_config, trials, seed, out, window):
    """Reconstruct the two-qubit state from records or a simulated run."""
    if (records_path is None) == (sim_config is None):
        _fail(EXIT_CONFIG, "pass either a records file or --from-sim config")
    out_dir = _prepare_out(out)
    started = _utcnow()

    if sim_config is not None:
        cfg = _load_config(sim_config, seed)
        records = _records_from_simulation(cfg, window)
        used_seed = cfg.rng_seed
        source_path = sim_config
    else:
        try:
            records = tomography.records_from_json_file(records_path)
        except (OSError, tomography.TomographyError, KeyError, ValueError) as exc:
            _fail(EXIT_CONFIG, f"cannot read records: {exc}")
        used_seed = seed if seed is not None else 0
        source_path = records_path

    mle_config = tomography.MleConfig(rng_seed=used_seed or 7)
    try:
        result = tomography.mle_reconstruct(records, mle_config)
        if trials > 1:
            result.mc = tomography.monte_carlo_errors(
                records,
                mle_config,
                n_trials=trials,
                point_estimate=result,
                rng_seed=(used_seed or 0) + 1,
            )
    except tomography.TomographyError as exc:
        _fail(EXIT_MLE, str(exc))

    # fringe of the interfering region versus summed analysis phase
    fringe_payload = None
    try:
        phase_sums = [r.phi_s + r.phi_i for r in records]
        tt_counts = [r.region_counts["TT"] for r in records]
        fringe = analysis.fit_fringe(phase_sums, tt_counts)
        fringe_payload = fringe.to_dict()
        fringe_payload["points"] = [
            {"phase_sum": p, "tt_counts": c} for p, c in zip(phase_sums, tt_counts)
        ]
    except analysis.FitError:
        pass

    try:
        tomography.records_to_json_file(records, out_dir / "records.json")
        result.to_json_file(out_dir / "tomography_result.json")
        if result.mc is not None:
            result.mc.write_csv(out_dir / "metrics_mc.csv")
        if fringe_payload is not None:
            with open(out_dir / "fringe.json", "w", encoding="utf-8") as fh:
                json.dump(fringe_payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
        _write_manifest(out_dir, "tomo", source_path, used_seed,
                        {"started": started, "finished": _utcnow()})
    except OSError as exc:
        _fail(EXIT_IO, f"writing outputs failed: {exc}")

    metrics = result.metrics
    _echo("fidelity", f"{metrics.fidelity_phi_plus:.6f}")
    _echo("concurrence", f"{metrics.concurrence:.6f}")
    _echo("entropy_bits", f"{metrics.entropy_bits:.6f}")
    _echo("chsh_max", f"{metrics.chsh_max:.6f}")
    _echo("purity", f"{metrics.purity:.6f}")
    if result.mc is not None:
        for name in ("fidelity_phi_plus", "concurrence", "entropy_bits"):
            _echo(f"{name}_std", f"{result.mc.std(name):.6f}")
    if fringe_payload is not None:
        _echo("fringe_visibility", f"{fringe_payload['visibility']:.6f}")
    _echo("informationally_complete", result.informationally_complete)
    _echo("out", out_dir)


# ---------------------------------------------------------------------------
# report


def _read_json(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


@main.command("report")
@click.argument("run_dir", type=click.Path(exists=False))
@click.option("--out", default=None,
              help="Report directory (default: <run_dir>/report).")
def cmd_report(run_dir, out):
    """Summarise a finished run directory; renders figures, no recompute."""
    run_path = Path(run_dir)
    if not run_path.is_dir():
        _fail(EXIT_MISSING, f"{run_dir} is not a directory")
    out_dir = _prepare_out(out or run_path / "report")

    summary: dict = {"source_dir": str(run_path)}
    produced = []

    source_manifest = None
    if (run_path / _MANIFEST_NAME).exists():
        try:
            source_manifest = _read_json(run_path / _MANIFEST_NAME)
        except (OSError, json.JSONDecodeError):
            source_manifest = None

    # simulate artifacts
    regions_path = run_path / "histogram2d_regions.json"
    if regions_path.exists():
        regions = _read_json(regions_path)
        summary["regions"] = regions["regions"]
        summary["total_records"] = regions["total_records"]
        hist_csv = run_path / "histogram2d.csv"
        if hist_csv.exists():
            matrix, s_centers, i_centers = _read_histogram_csv(hist_csv)
            fig_path = out_dir / "histogram2d.png"
            _render_matrix(matrix, s_centers, i_centers, regions, fig_path)
            produced.append(fig_path.name)
    collapsed_path = run_path / "collapsed1d.csv"
    if collapsed_path.exists():
        peaks, corners = _read_collapsed_csv(collapsed_path)
        summary["five_peaks"] = peaks
        summary["corner_counts"] = corners
        collapsed = simulate.Collapsed1D(peaks=tuple(peaks), corner_counts=corners)
        fig_path = out_dir / "five_peak.png"
        plots.render_five_peak(collapsed, fig_path)
        produced.append(fig_path.name)

    # calibration artifacts
    cal_path = run_path / "calibration_fit.json"
    if cal_path.exists():
        cal = _read_json(cal_path)
        summary["calibration"] = {
            k: cal[k] for k in ("kappa_s", "kappa_i", "phi_p", "visibility")
        }
        map_csv = run_path / "map_counts.csv"
        if map_csv.exists():
            data = np.loadtxt(map_csv, delimiter=",", skiprows=1)
            data = np.atleast_2d(data)
            fig_path = out_dir / "calibration_map.png"
            plots.render_calibration_map(data[:, 0], data[:, 1], data[:, 2], fig_path)
            produced.append(fig_path.name)

    # tomography artifacts
    tomo_path = run_path / "tomography_result.json"
    if tomo_path.exists():
        result = _read_json(tomo_path)
        summary["metrics"] = result["metrics"]
        if "monte_carlo" in result:
            summary["metric_errors"] = result["monte_carlo"]["metrics"]
        rho = np.array(result["rho_real"]) + 1j * np.array(result["rho_imag"])
        fig_path = out_dir / "density_matrix.png"
        plots.render_density_matrix(rho, fig_path)
        produced.append(fig_path.name)
        mc_csv = run_path / "metrics_mc.csv"
        if mc_csv.exists():
            samples = _read_mc_csv(mc_csv)
            fig_path = out_dir / "mc_metrics.png"
            plots.render_metric_histograms(samples, fig_path)
            produced.append(fig_path.name)
    fringe_path = run_path / "fringe.json"
    if fringe_path.exists():
        fringe = _read_json(fringe_path)
        summary["fringe_visibility"] = fringe["visibility"]
        summary["fringe_visibility_err"] = fringe["visibility_err"]
        phases = [p["phase_sum"] for p in fringe["points"]]
        counts = [p["tt_counts"] for p in fringe["points"]]
        with open(out_dir / "fringe.csv", "w", encoding="utf-8") as fh:
            fh.write("phase_sum_rad,tt_counts\n")
            for p, c in zip(phases, counts):
                fh.write(f"{p:.9g},{c:g}\n")
        fit = analysis.FringeFit(
            offset=fringe["offset"], amplitude=fringe["amplitude"],
            phase=fringe["phase"], visibility=fringe["visibility"],
            visibility_err=fringe["visibility_err"],
            covariance=np.array(fringe["covariance"]), residual_norm=0.0,
        )
        fig_path = out_dir / "fringe.png"
        plots.render_fringe(phases, counts, fit, fig_path)
        produced.append(fig_path.name + ",fringe.csv")

    if len(summary) == 1:
        _fail(EXIT_MISSING, f"no known artifacts in {run_dir}")

    try:
        with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out_dir / "summary.txt", "w", encoding="utf-8") as fh:
            fh.write(_format_summary(summary))
        timestamps = (
            source_manifest.get("timestamps") if source_manifest else None
        )
        _write_manifest(
            out_dir, "report", str(run_path),
            source_manifest.get("seed") if source_manifest else None,
            timestamps,
        )
    except OSError as exc:
        _fail(EXIT_IO, f"writing report failed: {exc}")

    for key in ("fringe_visibility",):
        if key in summary:
            _echo(key, f"{summary[key]:.6f}")
    if "metrics" in summary:
        for name in ("fidelity_phi_plus", "concurrence", "entropy_bits"):
            _echo(name, f"{summary['metrics'][name]:.6f}")
    _echo("artifacts", len(produced))
    _echo("out", out_dir)


def _format_summary(summary: dict) -> str:
    lines = ["franson-lab run summary", "=" * 23, ""]
    if "total_records" in summary:
        lines.append(f"coincidence records: {summary['total_records']}")
    if "regions" in summary:
        ordered = ", ".join(
            f"{k}:{summary['regions'][k]}" for k in summary["regions"]
        )
        lines.append(f"region counts: {ordered}")
    if "five_peaks" in summary:
        lines.append(f"five-peak counts: {summary['five_peaks']}")
    if "calibration" in summary:
        cal = summary["calibration"]
        lines.append(
            "calibration: kappa_s={kappa_s:.4g} rad/mW, kappa_i={kappa_i:.4g} "
            "rad/mW, phi_p={phi_p:.4g} rad, V={visibility:.4g}".format(**cal)
        )
    if "fringe_visibility" in summary:
        lines.append(
            f"fringe visibility: {summary['fringe_visibility']:.4f} "
            f"± {summary.get('fringe_visibility_err', float('nan')):.4f}"
        )
    if "metrics" in summary:
        m = summary["metrics"]
        err = summary.get("metric_errors", {})

        def fmt(name, label):
            value = m[name]
            if name in err:
                return f"{label}: {value:.4f} ± {err[name]['std']:.4f}"
            return f"{label}: {value:.4f}"

        lines.append(fmt("fidelity_phi_plus", "fidelity to Phi+"))
        lines.append(fmt("concurrence", "concurrence"))
        lines.append(fmt("entropy_bits", "von Neumann entropy (bits)"))
        lines.append(fmt("chsh_max", "CHSH maximum"))
        lines.append(f"CHSH violated: {m['chsh_violated']}")
    lines.append("")
    return "\n".join(lines)


def _read_histogram_csv(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        i_centers = np.array([float(v) for v in header[1:]])
        rows = []
        s_centers = []
        for line in fh:
            parts = line.strip().split(",")
            s_centers.append(float(parts[0]))
            rows.append([int(v) for v in parts[1:]])
    return np.array(rows), np.array(s_centers), i_centers


def _read_collapsed_csv(path: Path):
    peaks = [0] * 5
    corners = {}
    with open(path, "r", encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            idx, label, counts = line.strip().split(",")
            if idx == "corner":
                corners[label] = int(counts)
            else:
                peaks[int(idx)] = int(counts)
    return peaks, corners


def _read_mc_csv(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        names = fh.readline().strip().split(",")[1:]
        data = np.loadtxt(fh, delimiter=",")
    data = np.atleast_2d(data)
    return {name: data[:, k + 1] for k, name in enumerate(names)}


def _render_matrix(matrix, s_centers, i_centers, regions, path):
    """Rebuild a Histogram2D shell for plotting from CSV artifacts."""
    bw = float(s_centers[1] - s_centers[0]) if len(s_centers) > 1 else 1.0
    shell = simulate.Histogram2D(
        counts=matrix,
        signal_edges_ps=np.append(s_centers - bw / 2, s_centers[-1] + bw / 2),
        idler_edges_ps=np.append(i_centers - bw / 2, i_centers[-1] + bw / 2),
        bin_width_ps=bw,
        tau_ps=regions["tau_ps"],
        sigma_ps=regions["sigma_ps"],
        region_radius_ps=regions["region_radius_ps"],
        region_counts=np.zeros((3, 3), dtype=np.int64),
    )
    plots.render_histogram2d(shell, path)


if __name__ == "__main__":
    main()
