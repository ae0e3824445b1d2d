"""End-to-end runs: simulate, propagate, analyze and summarize one condition."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (
    DelaySweepResult,
    ShotNoiseLevel,
    aggregate,
    analyze_shot,
    compare_peaks,
    edge_timing,
    mi_edge_time,
    mi_feature_shift,
    mi_peak_time,
    shot_noise_level,
)
from .config import RunConfig
from .dispersion import group_delay_in_band, mean_gain_in_band
from .tracesim import (
    ExperimentShot,
    propagate_through_medium,
    shot_noise_reference,
    synthesize_shot,
)

log = logging.getLogger("fastlight")


def source_shot(cfg: RunConfig, index: int) -> ExperimentShot:
    return synthesize_shot(
        cfg.squeezing_spectrum(),
        length=cfg.length,
        sample_period=cfg.sample_period,
        seed=cfg.seed,
        shot_index=index,
        squeezed_joint=cfg.squeezed_joint,
        config_digest=cfg.digest,
    )


def propagated_shot(cfg: RunConfig, shot: ExperimentShot, medium=None) -> ExperimentShot:
    medium = cfg.medium() if medium is None else medium
    out = propagate_through_medium(shot, medium, cfg.medium_mode, seed=cfg.seed, offset=cfg.offset)
    if out.medium_mode is None:
        # an identity medium still records which beam was routed through it
        out = replace(out, medium_mode=cfg.medium_mode)
    return out


def shotnoise_traces(cfg: RunConfig):
    return [shot_noise_reference(cfg.length, cfg.sample_period, cfg.seed, i) for i in range(cfg.shotnoise_traces)]


def measure_shot_noise(cfg: RunConfig) -> ShotNoiseLevel:
    return shot_noise_level(shotnoise_traces(cfg), cfg.sweep_settings().band)


# worker state, set once per process
_W: dict = {}


def _init_worker(cfg_data: dict, level: ShotNoiseLevel):
    cfg = RunConfig(cfg_data)
    _W["cfg"] = cfg
    _W["medium"] = cfg.medium()
    _W["settings"] = cfg.sweep_settings()
    _W["level"] = level


def _work(index: int):
    cfg = _W["cfg"]
    shot = propagated_shot(cfg, source_shot(cfg, index), _W["medium"])
    return analyze_shot(shot, _W["level"], _W["settings"])


def run_condition(cfg: RunConfig, jobs: int = 1, level: Optional[ShotNoiseLevel] = None) -> DelaySweepResult:
    """Simulate and analyze ``cfg.trials`` shots of one condition in memory."""
    if level is None:
        level = measure_shot_noise(cfg)
    indices = range(cfg.trials)
    log.info("%s: %d shots, %d jobs", cfg.label, cfg.trials, jobs)
    if jobs <= 1:
        _init_worker(cfg.data, level)
        results = [_work(i) for i in indices]
    else:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(cfg.data, level)) as ex:
            results = list(ex.map(_work, indices, chunksize=max(1, cfg.trials // (4 * jobs))))
    return aggregate(results, cfg.sweep_settings(), cfg.sample_period, cfg.label, level.rel_sem)


def analyze_shots(shots, cfg: RunConfig, level: ShotNoiseLevel) -> DelaySweepResult:
    settings = cfg.sweep_settings()
    return aggregate([analyze_shot(s, level, settings) for s in shots], settings, cfg.sample_period, cfg.label, level.rel_sem)


def _work_stored(path: str):
    from .traceio import read_shot

    return analyze_shot(read_shot(path), _W["level"], _W["settings"])


def analyze_stored(paths, cfg: RunConfig, level: ShotNoiseLevel, jobs: int = 1) -> DelaySweepResult:
    """Like :func:`analyze_shots` for shot directories, optionally in parallel."""
    paths = [str(p) for p in paths]
    if jobs <= 1:
        _init_worker(cfg.data, level)
        results = [_work_stored(p) for p in paths]
    else:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(cfg.data, level)) as ex:
            results = list(ex.map(_work_stored, paths))
    return aggregate(results, cfg.sweep_settings(), cfg.sample_period, cfg.label, level.rel_sem)


# ---------------------------------------------------------------- summary


def _f(x) -> Optional[float]:
    x = float(x)
    return x if math.isfinite(x) else None


def correlation_fwhm(result: DelaySweepResult) -> Optional[float]:
    """Full width at half maximum of the mean cross-correlation curve."""
    try:
        e = edge_timing(result.xcorr_lags, result.xcorr_mean)
    except ValueError:
        return None
    return e.width


def _mi_width(delays, mi) -> float:
    return edge_timing(delays, mi).width


def summarize(result: DelaySweepResult, cfg: RunConfig, ref: Optional[DelaySweepResult] = None, paired: bool = False) -> dict:
    """Scalar figures for one condition, with shifts relative to ``ref`` if given."""
    ns = 1e9
    peak, peak_sem = result.xcorr_peak
    dpeak, dpeak_sem = result.xcorr_peak_discrete
    insep_min, insep_at = result.insep_min
    out = {
        "label": result.label,
        "n_shots": result.n_shots,
        "xcorr_normalization": "global sqrt(sum f^2 * sum g^2)",
        "xcorr_mode": cfg.data["analysis"]["xcorr_mode"],
        "xcorr_peak_ns": _f(peak * ns),
        "xcorr_peak_sem_ns": _f(peak_sem * ns),
        "xcorr_peak_discrete_ns": _f(dpeak * ns),
        "xcorr_peak_discrete_sem_ns": _f(dpeak_sem * ns),
        "xcorr_peaks_excluded": result.peak_excluded,
        "mi_peak_ns": _f(result.mi_peak * ns),
        "mi_peak_sem_ns": _f(result.mi_peak_sem * ns),
        "mi_peak_bits": _f(np.max(result.mi_bits_mean)),
        "insep_min": _f(insep_min),
        "insep_min_delay_ns": _f(insep_at * ns),
        "unphysical_delays": int(np.count_nonzero(result.unphysical)),
        "peak_advance_ns": None,
        "peak_advance_sem_ns": None,
    }
    fw = correlation_fwhm(result)
    out["correlation_fwhm_ns"] = None if fw is None else _f(fw * ns)
    try:
        e = result.edges()
        out.update(
            leading_edge_ns=_f(e.leading * ns),
            leading_edge_unc_ns=_f(e.leading_unc * ns),
            trailing_edge_ns=_f(e.trailing * ns),
            trailing_edge_unc_ns=_f(e.trailing_unc * ns),
            fwhm_ns=_f(e.width * ns),
            fwhm_unc_ns=_f(e.width_unc * ns),
        )
    except ValueError as exc:
        out["edge_error"] = str(exc)

    medium = cfg.medium()
    band = cfg.sweep_settings().band
    det = (cfg.offset + band.f_lo, cfg.offset + band.f_hi)
    out["medium_band_delay_ns"] = _f(group_delay_in_band(medium, det) * ns)
    out["medium_band_gain"] = _f(mean_gain_in_band(medium, det))
    out["medium_mode"] = cfg.medium_mode

    if ref is not None and ref is not result:
        adv = compare_peaks(ref, result, paired=paired)
        out.update(
            reference_label=ref.label,
            paired=paired,
            peak_advance_ns=_f(adv.advance * ns),
            peak_advance_sem_ns=_f(adv.sem * ns),
            peak_advance_discrete_ns=_f(adv.discrete_advance * ns),
            peak_advance_discrete_sem_ns=_f(adv.discrete_sem * ns),
        )
        if fw:
            out["fractional_advance"] = _f(abs(adv.advance) / fw)
        shifts = {
            "mi_peak_shift": mi_peak_time,
            "leading_edge_shift": mi_edge_time("leading"),
            "trailing_edge_shift": mi_edge_time("trailing"),
            "fwhm_change": _mi_width,
        }
        # edges at a common absolute level: half of the reference MI peak
        half_ref = 0.5 * float(np.max(ref.mi_bits_mean))
        shifts["leading_edge_shift_at_ref_level"] = mi_edge_time("leading", half_ref, absolute=True)
        shifts["trailing_edge_shift_at_ref_level"] = mi_edge_time("trailing", half_ref, absolute=True)
        for name, feat in shifts.items():
            try:
                s = mi_feature_shift(ref, result, feat, paired=paired)
            except ValueError as exc:
                out[f"{name}_error"] = str(exc)
                continue
            out[f"{name}_ns"] = _f(s.shift * ns)
            out[f"{name}_sem_ns"] = _f(s.sem * ns)
    elif ref is result:
        out["peak_advance_ns"] = 0.0
        out["peak_advance_sem_ns"] = 0.0
    return out


def provenance(cfg: RunConfig) -> dict:
    return {
        "tool_version": __version__,
        "seed": cfg.seed,
        "trials": cfg.trials,
        "shotnoise_traces": cfg.shotnoise_traces,
        "numpy": np.__version__,
    }
