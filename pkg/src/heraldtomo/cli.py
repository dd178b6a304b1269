"""Command-line pipelines: simulate | reconstruct | analyze | report.

Exit codes: 0 success, 1 usage or config error, 2 runtime error.
Set HERALDTOMO_WORKERS to generate random blocks in parallel; outputs are
identical for any worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from . import __version__
from . import io
from .config import ConfigError, ExperimentConfig, build, load, preset, validate
from .counting import arrival_histogram, fit_arrival_width, g2_table, g2_theory
from .fock import apply_loss, quadrature_pdf, wigner, wigner_marginal, wigner_origin
from .physics import DecayCurve, doppler_time, efficiency_budget, eta_max, fit_gaussian_decay
from .sampler import decay_curve, heralded_trials, sample_clicks, sample_quadratures, synth_traces
from .temporal import filter_width_scan, gaussian_mode, vacuum_reference
from .tomography import ReconstructionSettings, reconstruct

log = logging.getLogger("heraldtomo")

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_config(path) -> ExperimentConfig:
    """Load a YAML config, or the config embedded in a dataset manifest."""
    if path is None:
        return preset()
    p = Path(path)
    if p.is_dir():
        p = p / io.MANIFEST
    if p.name.endswith(".json"):
        try:
            man = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{p}: cannot read manifest ({exc})") from exc
        if not isinstance(man, dict) or "config" not in man:
            raise ConfigError(f"{p}: not a dataset manifest")
        return build(validate(man["config"], name=str(p)), str(p))
    return load(p)


def _override(cfg: ExperimentConfig, args) -> ExperimentConfig:
    raw = json.loads(json.dumps(cfg.raw))
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    for name in ("samples", "traces", "trials"):
        v = getattr(args, name, None)
        if v is not None:
            raw["counts"][name] = v
    try:
        return build(validate(raw), "<command line>")
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def cmd_simulate(args) -> int:
    cfg = _override(_load_config(args.config), args)
    seed, counts = cfg.seed, cfg.counts
    files = {}
    extra = {}
    if counts["samples"]:
        log.info("sampling %d quadratures", counts["samples"])
        files[io.QUADRATURES] = io.format_quadratures(
            sample_quadratures(cfg.source.state, cfg.chain, counts["samples"], seed))
    if counts["traces"]:
        log.info("synthesizing %d traces", counts["traces"])
        files[io.TRACES] = io.format_traces(synth_traces(cfg.source, cfg.chain, cfg.grid, counts["traces"], seed))
    trials = counts["trials"]
    if counts["write_pulses"] is not None:
        trials = heralded_trials(counts["write_pulses"], cfg.source.herald_rate, seed)
        extra["write_pulses"] = counts["write_pulses"]
    extra["heralded_trials"] = trials
    if trials:
        log.info("sampling %d heralded click trials", trials)
        files[io.CLICKS] = io.format_clicks(sample_clicks(cfg.source, cfg.chain, trials, seed))
    mem = cfg.memory
    delays = np.asarray(mem["delays"], dtype=float)
    tau = doppler_time(cfg.atom)
    eff = decay_curve(delays, mem["eta0"], tau, mem["noise"], seed)
    err = np.full(delays.size, mem["noise"] if mem["noise"] > 0 else 1.0)
    files[io.DECAY] = io.format_table(io.DECAY_HEADER, [delays, eff, err])
    files[io.MANIFEST] = io.format_json(io.manifest("simulate", cfg.raw, files, **extra))
    io.write_outputs(args.out, files)
    print(f"wrote {len(files)} files to {args.out} (seed {seed})")
    return 0


def _parse_grid(spec: str):
    try:
        lo, hi, n = spec.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
        if n < 2 or hi <= lo:
            raise ValueError
    except ValueError:
        raise UsageError(f"--grid must look like LO:HI:N with LO < HI and N >= 2, got {spec!r}") from None
    return np.linspace(lo, hi, n)


def _result_dict(res, settings: ReconstructionSettings) -> dict:
    return {
        "eta_assumed": settings.eta,
        "nu_assumed": settings.nu,
        "populations": res.state.populations.tolist(),
        "errorbars": None if res.errorbars is None else res.errorbars.tolist(),
        "loglik": res.loglik,
        "iterations": res.iterations,
        "converged": res.converged,
        "wigner_origin": wigner_origin(res.state),
    }


def cmd_reconstruct(args) -> int:
    dataset = Path(args.dataset)
    cfg = _load_config(args.config if args.config else dataset)
    io.verify(dataset, io.QUADRATURES)
    x = io.read_quadratures(dataset / io.QUADRATURES)
    axis = _parse_grid(args.grid)
    modes = {"raw": cfg.settings, "corrected": cfg.corrected_settings()}
    if args.mode != "both":
        modes = {args.mode: modes[args.mode]}
    n_boot = cfg.bootstrap if args.bootstrap is None else args.bootstrap
    seed = cfg.seed if args.seed is None else args.seed

    results = {}
    for name, settings in modes.items():
        log.info("reconstructing (%s) from %d samples", name, x.size)
        results[name] = (reconstruct(x, settings, n_resamples=n_boot, seed=seed), settings)

    X, P = np.meshgrid(axis, axis, indexing="ij")
    wcols = [X.ravel(), P.ravel()]
    mcols = [axis]
    step = axis[1] - axis[0]
    edges = np.concatenate([axis - step / 2, [axis[-1] + step / 2]])
    hist, _ = np.histogram(x, bins=edges)
    mcols.append(hist / (x.size * step))
    for name, (res, _) in results.items():
        wcols.append(wigner(res.state, X, P).ravel())
        mcols.append(wigner_marginal(res.state, axis))
    names = list(results)
    summary = {
        "dataset": str(dataset),
        "samples": int(x.size),
        "bootstrap_resamples": n_boot,
        "wigner_axis": {"min": float(axis[0]), "max": float(axis[-1]), "points": int(axis.size)},
        **{name: _result_dict(res, s) for name, (res, s) in results.items()},
    }
    files = {
        "reconstruction.json": io.format_json(summary),
        "wigner.csv": io.format_table(["x", "p"] + [f"W_{n}" for n in names], wcols),
        "marginals.csv": io.format_table(["x", "measured"] + [f"marginal_{n}" for n in names], mcols),
    }
    io.write_outputs(args.out, files)
    for name, (res, _) in results.items():
        p = res.state.populations
        e = res.errorbars if res.errorbars is not None else np.full(p.size, np.nan)
        print(f"{name:>9}: p0={p[0]:.4f}±{e[0]:.4f} p1={p[1]:.4f}±{e[1]:.4f} p2={p[2]:.4f}±{e[2]:.4f} "
              f"W(0,0)={wigner_origin(res.state):+.4f}")
    return 0


ANALYSES = {"g2": io.CLICKS, "histogram": io.CLICKS, "filter": io.TRACES, "decay": io.DECAY}


def cmd_analyze(args) -> int:
    dataset = Path(args.dataset)
    cfg = _load_config(args.config if args.config else dataset)
    if args.what:
        wanted = [w.strip() for w in args.what.split(",") if w.strip()]
        unknown = [w for w in wanted if w not in ANALYSES]
        if unknown:
            raise UsageError(f"unknown analysis {unknown[0]!r}; choose from {', '.join(ANALYSES)}")
        for w in wanted:
            if not (dataset / ANALYSES[w]).exists():
                raise io.DatasetError(f"analysis '{w}' needs missing data file {dataset / ANALYSES[w]}")
    else:
        wanted = [w for w, f in ANALYSES.items() if (dataset / f).exists()]
        if not wanted:
            raise io.DatasetError(f"{dataset}: no clicks, traces or decay data to analyze")

    files, summary = {}, {"dataset": str(dataset)}
    clicks = None
    if "g2" in wanted or "histogram" in wanted:
        io.verify(dataset, io.CLICKS)
        clicks = io.read_clicks(dataset / io.CLICKS)
        summary["trials"] = len(clicks)
    if "g2" in wanted:
        table = g2_table(clicks, cfg.analysis["g2_taus"], n_boot=cfg.analysis["g2_bootstrap"], seed=cfg.seed)
        files["g2.csv"] = io.format_table(["tau", "g2", "stderr"],
                                          [[e.tau for e in table], [e.value for e in table], [e.stderr for e in table]])
        by_tau = {e.tau: e for e in table}
        if 0 in by_tau:
            summary["g2_0"] = by_tau[0].value
            summary["g2_0_stderr"] = by_tau[0].stderr
        summary["g2"] = {str(e.tau): e.value for e in table}
    if "histogram" in wanted:
        n_bins = int(np.ceil(cfg.grid.duration / 10e-9))
        edges, h2 = arrival_histogram(clicks, "2", n_bins)
        _, h3 = arrival_histogram(clicks, "3", n_bins)
        files["arrival_histogram.csv"] = io.format_table(["bin_start_s", "spcm2", "spcm3"], [edges[:-1], h2, h3])
        if (h2 + h3).sum() > 10:
            t0, w = fit_arrival_width(edges, h2 + h3)
            summary["arrival_center_s"] = t0
            summary["arrival_half_width_s"] = w
    if "filter" in wanted:
        io.verify(dataset, io.TRACES)
        traces = io.read_traces(dataset / io.TRACES)
        center = cfg.raw["source"]["mode_center"]
        scan = filter_width_scan(traces, cfg.grid, center, cfg.analysis["filter_widths"], min_traces=1)
        files["filter_scan.csv"] = io.format_table(["width_s", "variance", "stderr"],
                                                   [scan.widths, scan.variances, scan.stderr])
        ref = vacuum_reference(traces, gaussian_mode(cfg.grid, center, scan.best), cfg.analysis["vacuum_shift"])
        summary["sigma_opt_s"] = scan.best
        summary["vacuum_variance"] = float(np.var(ref))
        summary["traces"] = scan.n_traces
    if "decay" in wanted:
        io.verify(dataset, io.DECAY)
        tab = io.read_table(dataset / io.DECAY, io.DECAY_HEADER)
        fit = fit_gaussian_decay(DecayCurve(tab["delay_s"], tab["efficiency"], tab["error"]))
        model = fit.eta0 * np.exp(-((tab["delay_s"] / fit.tau) ** 2))
        files["decay_fit.csv"] = io.format_table(["delay_s", "efficiency", "model"],
                                                 [tab["delay_s"], tab["efficiency"], model])
        summary.update(tau_fit_s=fit.tau, eta0=fit.eta0, decay_rms_residual=fit.residual,
                       decay_ill_conditioned=fit.ill_conditioned)
    files["summary.json"] = io.format_json(summary)
    io.write_outputs(args.out, files)
    for k in ("g2_0", "sigma_opt_s", "vacuum_variance", "tau_fit_s", "eta0"):
        if k in summary:
            print(f"{k} = {summary[k]:.6g}")
    return 0


def cmd_report(args) -> int:
    cfg = _override(_load_config(args.config), args)
    eta_det, factors = efficiency_budget(cfg.chain)
    state = cfg.source.state
    detected = apply_loss(state, eta_det)
    rep = {
        "efficiency_budget": {"eta_det": eta_det, "factors": factors},
        "source_populations": state.populations.tolist(),
        "detected_populations": detected.populations.tolist(),
        "detected_wigner_origin": wigner_origin(detected),
        "source_g2": g2_theory(state) if state.mean_photon_number > 0 else None,
        "cooperativity": args.cooperativity,
        "eta_max": eta_max(args.cooperativity),
        "doppler_time_s": doppler_time(cfg.atom),
        "vacuum_pdf_origin": float(quadrature_pdf(state.vacuum(state.cutoff), 0.0)),
    }
    if args.out:
        io.write_outputs(args.out, {"report.json": io.format_json(rep)})
    print(f"eta_det = {eta_det:.4f} ({' x '.join(f'{v:.4f}' for v in factors.values())})")
    print(f"source p1 = {state[1]:.4f} -> detected p1 = {detected[1]:.4f}, W(0,0) = {wigner_origin(detected):+.4f}")
    if rep["source_g2"] is not None:
        print(f"g2(0) = {rep['source_g2']:.4f}")
    print(f"eta_max(C={args.cooperativity:g}) = {rep['eta_max']:.4f}")
    print(f"Doppler time = {rep['doppler_time_s'] * 1e9:.1f} ns")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="heraldtomo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"heraldtomo {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate quadrature, trace, click and decay datasets")
    p.add_argument("--config", help="YAML config or dataset manifest (default: built-in preset)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, help="number of quadrature samples")
    p.add_argument("--traces", type=int, help="number of homodyne traces")
    p.add_argument("--trials", type=int, help="number of heralded click trials")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="maximum-likelihood state reconstruction")
    p.add_argument("dataset", nargs="?")
    p.add_argument("--dataset", dest="dataset_opt")
    p.add_argument("--config", help="override the config recorded in the dataset manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="bootstrap seed")
    p.add_argument("--bootstrap", type=int, help="bootstrap resamples (0 disables)")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--raw", dest="mode", action="store_const", const="raw")
    mode.add_argument("--correct", dest="mode", action="store_const", const="corrected")
    p.set_defaults(mode="both")
    p.add_argument("--grid", default="-4:4:81", help="Wigner/marginal axis LO:HI:N")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("analyze", help="g2, arrival histograms, filter-width scan, decay fit")
    p.add_argument("dataset", nargs="?")
    p.add_argument("--dataset", dest="dataset_opt")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--what", help="comma-separated subset of: g2,histogram,filter,decay")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="closed-form efficiency, cavity and Doppler numbers")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--cooperativity", type=float, default=15.0)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if hasattr(args, "dataset_opt"):
            args.dataset = args.dataset_opt or args.dataset
            if not args.dataset:
                raise UsageError(f"heraldtomo {args.command}: a dataset directory is required")
        if args.command == "report" and args.cooperativity < 0:
            raise UsageError("--cooperativity must be non-negative")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.DatasetError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
