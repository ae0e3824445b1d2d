"""Command-line entry point.

Stages can be chained through files (simulate -> propagate -> analyze) or run
in memory end to end (sweep). Exit status is 0 only when every output was
written and no estimate was flagged as unphysical.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import shot_noise_level
from .config import LABELS, ConfigError, RunConfig, load_config, load_preset
from .dispersion import EdgeGainError, kramers_kronig_phase
from .figures import (
    rebuild,
    render_fig3,
    render_fig4,
    render_figS4,
    render_kk,
    write_fig3_tables,
    write_fig4_table,
    write_theory_table,
)
from .pipeline import (
    analyze_stored,
    measure_shot_noise,
    propagated_shot,
    provenance,
    run_condition,
    shotnoise_traces,
    source_shot,
    summarize,
)
from .traceio import (
    CsvFormatError,
    RunManifest,
    TraceFormatError,
    atomic_write_text,
    read_gain_csv,
    read_manifest,
    read_shot,
    read_trace,
    write_bundle,
    write_manifest,
    write_response_csv,
    write_shot,
    write_trace,
)

log = logging.getLogger("fastlight")

EXIT_OK, EXIT_FLAGGED, EXIT_ERROR = 0, 1, 2


class UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("TBL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(f"{path} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config(args, default_label: str = "reference") -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = load_preset(getattr(args, "preset", None) or default_label)
    cfg = cfg.with_overrides(seed=getattr(args, "seed", None), trials=getattr(args, "trials", None))
    return _with_delays(cfg, args)


def _with_delays(cfg: RunConfig, args) -> RunConfig:
    return cfg.with_analysis(
        delay_min_ns=getattr(args, "delay_min", None),
        delay_max_ns=getattr(args, "delay_max", None),
        delay_step_ns=getattr(args, "delay_step", None),
    )


def _write_json(path: Path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _prepare_out(Path(args.out), args.force)
    shots = []
    for i in range(cfg.trials):
        name = f"shot_{i:04d}"
        write_shot(out / name, source_shot(cfg, i))
        shots.append(name)
        log.info("wrote %s", name)
    noise = []
    for i, tr in enumerate(shotnoise_traces(cfg)):
        name = f"shotnoise_{i:04d}.tbtr"
        write_trace(out / name, tr)
        noise.append(name)
    write_manifest(out, RunManifest(cfg.data, cfg.digest, shots, noise, __version__, "simulate"))
    print(f"{len(shots)} shots written to {out} (config {cfg.digest[:12]})")
    return EXIT_OK


def cmd_propagate(args) -> int:
    src = Path(args.input)
    man = read_manifest(src)
    base = RunConfig.from_dict(man.config)
    medium_cfg = load_config(args.config) if args.config else load_preset(args.preset or "fast")
    # acquisition and source come from the stored shots; the medium from the config
    merged = dict(base.data, label=medium_cfg.label, medium=medium_cfg.data["medium"])
    cfg = RunConfig.from_dict(merged).with_overrides(seed=args.seed)
    out = _prepare_out(Path(args.out), args.force)
    medium = cfg.medium()
    for name in man.shots:
        shot = read_shot(src / name)
        write_shot(out / name, propagated_shot(cfg, shot, medium))
    for name in man.shotnoise:
        shutil.copyfile(src / name, out / name)
    write_manifest(out, RunManifest(cfg.data, cfg.digest, man.shots, man.shotnoise, __version__, "propagate"))
    print(f"{len(man.shots)} shots propagated ({cfg.label}, {cfg.medium_mode}) into {out}")
    return EXIT_OK


def _load_run(directory: Path, args):
    man = read_manifest(directory)
    cfg = _with_delays(RunConfig.from_dict(man.config), args)
    refs = [read_trace(directory / n) for n in man.shotnoise]
    level = shot_noise_level(refs, cfg.sweep_settings().band)
    result = analyze_stored([directory / n for n in man.shots], cfg, level, jobs=getattr(args, "jobs", 1))
    return cfg, result


def _same_source(a: RunConfig, b: RunConfig) -> bool:
    keys = ("r", "source")
    return all(a.data[k] == b.data[k] for k in keys) and a.seed == b.seed and a.length == b.length


def _finish(out: Path, results: dict, cfgs: dict, figures: bool = True) -> int:
    ref = results.get("reference")
    summaries = {}
    flagged = 0
    for label, res in results.items():
        paired = ref is not None and _same_source(cfgs["reference"], cfgs[label])
        s = summarize(res, cfgs[label], ref, paired=paired)
        write_bundle(out, label, cfgs[label].data, cfgs[label].digest, res, s, provenance(cfgs[label]))
        summaries[label] = s
        flagged += s["unphysical_delays"]
    _write_json(out / "summary.json", summaries)
    if figures:
        dt = next(iter(cfgs.values())).sample_period
        c3, h3 = write_fig3_tables(out, results, dt)
        atomic_write_text(out / "fig3.svg", render_fig3(c3, h3))
        f4 = write_fig4_table(out, results)
        atomic_write_text(out / "fig4.svg", render_fig4(f4))
    for label, s in summaries.items():
        line = f"{label:9s} n={s['n_shots']:3d}  xcorr peak {s['xcorr_peak_ns']:+.3f} ns"
        if s.get("peak_advance_ns") is not None and label != "reference":
            line += f"  advance {s['peak_advance_ns']:+.3f} +- {s['peak_advance_sem_ns']:.3f} ns"
        if "fwhm_ns" in s:
            line += f"  MI FWHM {s['fwhm_ns']:.2f} ns"
        print(line)
    if flagged:
        log.warning("%d delay points flagged as unphysical", flagged)
        return EXIT_FLAGGED
    return EXIT_OK


def cmd_analyze(args) -> int:
    out = _prepare_out(Path(args.out), args.force)
    results, cfgs = {}, {}
    inputs = [Path(p) for p in args.input]
    for d in inputs:
        cfg, res = _load_run(d, args)
        if cfg.label in results:
            raise UsageError(f"two inputs carry the label {cfg.label!r}")
        results[cfg.label] = res
        cfgs[cfg.label] = cfg
    return _finish(out, results, cfgs)


def cmd_sweep(args) -> int:
    out = _prepare_out(Path(args.out), args.force)
    results, cfgs = {}, {}
    dirs = {k: getattr(args, k) for k in LABELS if getattr(args, k, None)}
    if dirs:
        for label, d in dirs.items():
            cfg, res = _load_run(Path(d), args)
            results[label], cfgs[label] = res, cfg
    else:
        labels = [s.strip() for s in args.conditions.split(",") if s.strip()]
        for label in labels:
            if label not in LABELS:
                raise UsageError(f"unknown condition {label!r}")
        if args.config:
            base = load_config(args.config)
        else:
            base = None
        for label in labels:
            cfg = load_preset(label) if base is None else RunConfig.from_dict(dict(base.data, label=label, medium=load_preset(label).data["medium"]))
            cfg = _with_delays(cfg.with_overrides(seed=args.seed, trials=args.trials), args)
            cfgs[label] = cfg
        level = measure_shot_noise(next(iter(cfgs.values())))
        for label, cfg in cfgs.items():
            results[label] = run_condition(cfg, jobs=args.jobs, level=level)
    return _finish(out, results, cfgs)


def cmd_kk(args) -> int:
    try:
        profile = read_gain_csv(args.gain)
        resp = kramers_kronig_phase(profile, edge_tol=args.edge_tol)
    except (CsvFormatError, EdgeGainError) as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    write_response_csv(out, resp)
    atomic_write_text(out.with_suffix(".svg"), render_kk(out))
    print(f"medium response written to {out}")
    return EXIT_OK


def cmd_theory_curves(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    r_db = [float(v) for v in args.r_db.split(",")]
    gains = np.linspace(args.g_min, args.g_max, args.g_points)
    path = write_theory_table(out, r_db, gains)
    atomic_write_text(out / "figS4.svg", render_figS4(path))
    print(f"theory curves written to {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    made = rebuild(Path(args.out))
    if not made:
        raise UsageError(f"no figure tables found in {args.out}")
    for p in made:
        print(f"rendered {p}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _common(p, seed=True, trials=True, delays=True):
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--out", required=True, help="output directory (or file for kk)")
    if seed:
        p.add_argument("--seed", type=int, help="64-bit seed overriding the config")
    if trials:
        p.add_argument("--trials", type=int, help="number of shots overriding the config")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-shot work")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    if delays:
        p.add_argument("--delay-min", type=float, help="delay sweep start (ns)")
        p.add_argument("--delay-max", type=float, help="delay sweep end (ns)")
        p.add_argument("--delay-step", type=float, help="delay sweep step (ns, multiple of the sample period)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fastlight",
        description="Simulate and analyze entangled beams sent through fast- and slow-light media.",
        epilog="Set TBL_LOG=INFO or DEBUG for progress messages.",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write source shots and shot-noise traces")
    _common(p, delays=False)
    p.add_argument("--preset", choices=LABELS, help="use a bundled preset instead of --config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("propagate", help="send one beam of stored shots through a medium")
    _common(p, trials=False, delays=False)
    p.add_argument("--in", dest="input", required=True, help="directory written by simulate")
    p.add_argument("--preset", choices=LABELS, help="medium preset (default fast)")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("analyze", help="delay sweeps and correlations of stored shots")
    _common(p, seed=False, trials=False)
    p.add_argument("--in", dest="input", nargs="+", required=True, help="one or more run directories")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="end-to-end reference/fast/slow comparison with figures")
    _common(p)
    p.add_argument("--conditions", default="reference,fast", help="comma-separated presets run in memory")
    for label in LABELS:
        p.add_argument(f"--{label}", help=f"stored run directory for the {label} condition")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("kk", help="minimum-phase response of a gain profile CSV")
    p.add_argument("--gain", required=True, help="CSV with columns freq_hz,gain")
    p.add_argument("--out", required=True, help="output CSV path (an .svg is written beside it)")
    p.add_argument("--edge-tol", type=float, default=1e-3, help="allowed |G-1| at the grid edges")
    p.set_defaults(func=cmd_kk)

    p = sub.add_parser("theory-curves", help="mutual information and inseparability versus gain")
    p.add_argument("--out", required=True)
    p.add_argument("--r-db", default="-1,-2,-3,-4,-6", help="comma-separated squeezing levels (dB)")
    p.add_argument("--g-min", type=float, default=1.0)
    p.add_argument("--g-max", type=float, default=2.5)
    p.add_argument("--g-points", type=int, default=151)
    p.set_defaults(func=cmd_theory_curves)

    p = sub.add_parser("report", help="re-render SVG figures from the CSV tables in a directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, TraceFormatError, CsvFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
