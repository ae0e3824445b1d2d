"""Measurement pipeline on homodyne records.

Band powers are periodogram integrals over a detection band normalized to the
same integral for shot noise. Delays are integer-sample shifts of the
conjugate record relative to the probe, with the lag convention of the
discrete cross-correlation ``(f * g)[n] = sum_m f[m] g[n + m]``: a conjugate
that arrives early by ``k`` samples correlates at ``n = -k``.

For delay sweeps all lags are evaluated at once from the band-limited cross
spectra, which is exact for circular shifts of the full record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .gaussian import (
    TwoModeCovariance,
    mutual_information_batch,
    symplectic_eigenvalues_batch,
)
from .tracesim import ExperimentShot, QuadratureTrace


# ---------------------------------------------------------------- band specs


@dataclass(frozen=True)
class NoiseBand:
    f_lo: float = 100e3
    f_hi: float = 2e6

    def __post_init__(self):
        if not 0 <= self.f_lo < self.f_hi:
            raise ValueError("noise band must satisfy 0 <= f_lo < f_hi")

    @property
    def width(self) -> float:
        return self.f_hi - self.f_lo


@dataclass(frozen=True)
class BandpassSpec:
    """First-order high-pass times a Hann-shaped low-pass taper.

    The taper is ``cos^2(pi f / 2F)`` below ``F`` and zero above, with ``F``
    chosen so the amplitude response is ``1/sqrt2`` at ``lowpass_3db``.
    Both stages are applied to magnitude only (zero phase).
    """

    highpass_corner: float = 100e3
    lowpass_3db: float = 1.75e6

    def __post_init__(self):
        if not 0 <= self.highpass_corner < self.lowpass_3db:
            raise ValueError("high-pass corner must lie below the low-pass -3 dB point")

    @property
    def lowpass_zero(self) -> float:
        return math.pi * self.lowpass_3db / (2.0 * math.acos(2.0**-0.25))

    def response(self, f) -> np.ndarray:
        f = np.abs(np.asarray(f, dtype=float))
        fz = self.lowpass_zero
        lp = np.where(f < fz, np.cos(np.pi * np.minimum(f, fz) / (2 * fz)) ** 2, 0.0)
        if self.highpass_corner > 0:
            hp = f / np.sqrt(f**2 + self.highpass_corner**2)
        else:
            hp = np.ones_like(f)
        return hp * lp

    def validate(self, sample_period: float) -> None:
        nyq = 0.5 / sample_period
        if self.highpass_corner >= nyq or self.lowpass_3db >= nyq:
            raise ValueError(f"filter corners must lie below Nyquist ({nyq:g} Hz)")


def bandpass(trace: QuadratureTrace, spec: BandpassSpec = BandpassSpec()) -> QuadratureTrace:
    spec.validate(trace.sample_period)
    n = len(trace)
    freqs = np.fft.rfftfreq(n, trace.sample_period)
    out = np.fft.irfft(np.fft.rfft(trace.samples) * spec.response(freqs), n=n)
    return trace.with_samples(out)


# ------------------------------------------------------------------ spectra


def periodogram(trace: QuadratureTrace):
    """One-sided PSD (units^2/Hz) and its frequency axis."""
    x = trace.samples
    n = x.size
    fs = trace.sample_rate
    spec = np.fft.rfft(x)
    psd = np.abs(spec) ** 2 / (n * fs)
    psd[1 : (n + 1) // 2] *= 2.0
    return np.fft.rfftfreq(n, trace.sample_period), psd


def band_bins(n: int, sample_period: float, band: NoiseBand) -> np.ndarray:
    freqs = np.fft.rfftfreq(n, sample_period)
    if band.f_hi > freqs[-1]:
        raise ValueError(f"band edge {band.f_hi:g} Hz beyond Nyquist {freqs[-1]:g} Hz")
    idx = np.nonzero((freqs >= band.f_lo) & (freqs <= band.f_hi))[0]
    if idx.size == 0:
        raise ValueError("band contains no frequency bins")
    return idx


def _raw_band_power(samples: np.ndarray, sample_period: float, band: NoiseBand) -> float:
    n = samples.size
    idx = band_bins(n, sample_period, band)
    spec = np.fft.rfft(samples)[idx]
    return float(2.0 * np.sum(np.abs(spec) ** 2) / n**2)


@dataclass(frozen=True)
class ShotNoiseLevel:
    """Mean band power of shot-noise records, with its standard error."""

    level: float
    sem: float
    n_traces: int
    band: NoiseBand
    length: int
    sample_period: float

    @property
    def rel_sem(self) -> float:
        """Fractional uncertainty of the level (0 when it cannot be estimated)."""
        return self.sem / self.level if np.isfinite(self.sem) else 0.0


def shot_noise_level(refs, band: NoiseBand = NoiseBand()) -> ShotNoiseLevel:
    if isinstance(refs, ShotNoiseLevel):
        if refs.band != band:
            raise ValueError("shot-noise level was computed for a different band")
        return refs
    if isinstance(refs, QuadratureTrace):
        refs = [refs]
    refs = list(refs)
    if not refs:
        raise ValueError("need at least one shot-noise trace")
    n, dt = len(refs[0]), refs[0].sample_period
    powers = []
    for r in refs:
        if len(r) != n or r.sample_period != dt:
            raise ValueError("shot-noise traces must share length and sample period")
        powers.append(_raw_band_power(r.samples, dt, band))
    powers = np.asarray(powers)
    sem = float(powers.std(ddof=1) / np.sqrt(powers.size)) if powers.size > 1 else float("nan")
    return ShotNoiseLevel(float(powers.mean()), sem, powers.size, band, n, dt)


ShotRef = Union[QuadratureTrace, Sequence[QuadratureTrace], ShotNoiseLevel]


def band_power(trace: QuadratureTrace, band: NoiseBand, shot_ref: ShotRef) -> float:
    """Band-integrated noise power of ``trace`` in shot-noise units."""
    lvl = shot_noise_level(shot_ref, band)
    if len(trace) != lvl.length or trace.sample_period != lvl.sample_period:
        raise ValueError("trace and shot-noise reference differ in length or sample period")
    if isinstance(shot_ref, QuadratureTrace) and shot_ref is trace:
        return 1.0
    return _raw_band_power(trace.samples, trace.sample_period, band) / lvl.level


def joint_trace(a: QuadratureTrace, b: QuadratureTrace, sign: int) -> QuadratureTrace:
    """``(a + sign * b) / sqrt2``."""
    if len(a) != len(b) or a.sample_period != b.sample_period:
        raise ValueError("traces differ in length or sample period")
    return a.with_samples((a.samples + sign * b.samples) / np.sqrt(2.0))


# -------------------------------------------------------- cross-correlation


def _as_array(x) -> np.ndarray:
    return x.samples if isinstance(x, QuadratureTrace) else np.asarray(x, dtype=float)


def cross_correlation(f, g, normalized: bool = True):
    """Linear cross-correlation ``sum_m f[m] g[n+m]`` for all lags.

    Computed with zero-padded FFTs. Returns ``(lags, values)`` with lags
    ``-(N-1) .. N-1`` in samples. The normalized form divides by
    ``sqrt(sum f^2 * sum g^2)``.
    """
    a, b = _as_array(f), _as_array(g)
    if a.shape != b.shape:
        raise ValueError("cross-correlation needs equal-length inputs")
    n = a.size
    m = 1 << (2 * n - 1).bit_length()
    c = np.fft.irfft(np.conj(np.fft.rfft(a, m)) * np.fft.rfft(b, m), m)
    vals = np.concatenate([c[m - (n - 1) :], c[:n]])
    lags = np.arange(-(n - 1), n)
    if normalized:
        vals = vals / _norm(a, b)
    return lags, vals


def _norm(a: np.ndarray, b: np.ndarray) -> float:
    d = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    if d == 0:
        raise ValueError("cannot normalize the correlation of an all-zero trace")
    return d


def cross_correlation_window(f, g, max_lag: int, normalized: bool = True, spectra=None):
    """Linear cross-correlation restricted to ``|n| <= max_lag``.

    Uses one unpadded circular correlation and subtracts the wrapped terms,
    which only involve the first and last ``max_lag`` samples.
    """
    a, b = _as_array(f), _as_array(g)
    if a.shape != b.shape:
        raise ValueError("cross-correlation needs equal-length inputs")
    n = a.size
    L = int(max_lag)
    if not 0 <= L < n:
        raise ValueError("max_lag must lie in [0, N)")
    fa, fb = spectra if spectra is not None else (np.fft.rfft(a), np.fft.rfft(b))
    circ = np.fft.irfft(np.conj(fa) * fb, n)
    lags = np.arange(-L, L + 1)
    vals = circ[lags % n].copy()
    if L > 0:
        wrap_pos = np.convolve(a[n - L :][::-1], b[:L])[:L]  # lags 1..L
        wrap_neg = np.convolve(b[n - L :][::-1], a[:L])[:L]  # lags -1..-L
        vals[L + 1 :] -= wrap_pos
        vals[:L] -= wrap_neg[::-1]
    if normalized:
        vals = vals / _norm(a, b)
    return lags, vals


def parabolic_peak(values: np.ndarray, index: int) -> float:
    """Vertex offset (in samples) of the parabola through ``index - 1 .. index + 1``."""
    y0, y1, y2 = values[index - 1], values[index], values[index + 1]
    den = y0 - 2.0 * y1 + y2
    if den == 0:
        return 0.0
    return float(0.5 * (y0 - y2) / den)


def locate_peak(values: np.ndarray):
    """``(discrete_index, fractional_index)`` of the maximum, or ``None`` if flat
    or if the maximum sits on the window edge."""
    v = np.asarray(values, dtype=float)
    if v.size < 3 or np.ptp(v) == 0:
        return None
    i = int(np.argmax(v))
    if i == 0 or i == v.size - 1:
        return None
    return i, i + parabolic_peak(v, i)


@dataclass(frozen=True)
class PeakAdvance:
    advance: float
    sem: float
    discrete_advance: float
    discrete_sem: float
    n_ref: int
    n_test: int
    excluded_ref: int
    excluded_test: int


def _mean_sem(x: np.ndarray):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 2:
        return float(x.mean()) if x.size else float("nan"), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def curve_peaks(curves, lag_times):
    """Per-curve peak times (discrete, parabolic) and the count of rejected curves."""
    lag_times = np.asarray(lag_times, dtype=float)
    step = float(lag_times[1] - lag_times[0])
    disc, para, bad = [], [], 0
    for c in curves:
        p = locate_peak(c)
        if p is None:
            bad += 1
            continue
        disc.append(lag_times[p[0]])
        para.append(lag_times[0] + p[1] * step)
    return np.asarray(disc), np.asarray(para), bad


def peak_advance(curves_ref, curves_test, lag_times) -> PeakAdvance:
    """Mean test peak minus mean reference peak, with the standard error of that
    difference. Negative means the test curves peak earlier."""
    curves_ref = list(curves_ref)
    curves_test = list(curves_test)
    if len(curves_ref) < 2 or len(curves_test) < 2:
        raise ValueError("need at least two curves per condition")
    d_ref, p_ref, bad_ref = curve_peaks(curves_ref, lag_times)
    d_test, p_test, bad_test = curve_peaks(curves_test, lag_times)
    return _advance_from_peaks(d_ref, p_ref, bad_ref, d_test, p_test, bad_test)


def _advance_from_peaks(d_ref, p_ref, bad_ref, d_test, p_test, bad_test) -> PeakAdvance:
    if min(len(p_ref), len(p_test)) < 2:
        raise ValueError("fewer than two usable peaks in a condition")
    m_r, s_r = _mean_sem(p_ref)
    m_t, s_t = _mean_sem(p_test)
    dm_r, ds_r = _mean_sem(d_ref)
    dm_t, ds_t = _mean_sem(d_test)
    return PeakAdvance(
        advance=m_t - m_r,
        sem=math.hypot(s_r, s_t),
        discrete_advance=dm_t - dm_r,
        discrete_sem=math.hypot(ds_r, ds_t),
        n_ref=len(p_ref),
        n_test=len(p_test),
        excluded_ref=bad_ref,
        excluded_test=bad_test,
    )


def peak_histogram(peak_times, bin_width: float):
    """Counts of peak times on bins one ``bin_width`` wide centered on multiples of it."""
    k = np.rint(np.asarray(peak_times) / bin_width).astype(int)
    if k.size == 0:
        return np.array([]), np.array([], dtype=int)
    bins = np.arange(k.min(), k.max() + 1)
    counts = np.array([(k == b).sum() for b in bins])
    return bins * bin_width, counts


# ----------------------------------------------------------- edge timing


@dataclass(frozen=True)
class EdgeTiming:
    level: float
    leading: float
    leading_unc: float
    trailing: float
    trailing_unc: float

    @property
    def width(self) -> float:
        return self.trailing - self.leading

    @property
    def width_unc(self) -> float:
        return math.hypot(self.leading_unc, self.trailing_unc)


def _crossing(t, y, s, i_out, i_in, level):
    """Linear crossing of ``level`` between neighbours and its propagated error."""
    t0, t1 = t[i_out], t[i_in]
    y0, y1 = y[i_out], y[i_in]
    frac = (level - y0) / (y1 - y0)
    tc = t0 + frac * (t1 - t0)
    slope = (y1 - y0) / (t1 - t0)
    sc = s[i_out] + frac * (s[i_in] - s[i_out])
    return float(tc), float(abs(sc / slope))


def edge_timing(times, values, sems=None, level: float = 0.5, absolute: bool = False) -> EdgeTiming:
    """Leading/trailing crossings of a single-peaked curve.

    The threshold is ``level * max(values)`` unless ``absolute`` is set, in
    which case ``level`` is used as given. Each crossing is found walking
    outwards from the peak and interpolated linearly; its uncertainty is the
    interpolated value-sem divided by the local slope.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    s = np.zeros_like(y) if sems is None else np.asarray(sems, dtype=float)
    ip = int(np.argmax(y))
    thr = float(level) if absolute else float(level * y[ip])
    if y[ip] <= thr:
        raise ValueError("curve never exceeds the requested level")
    left = np.nonzero(y[:ip] < thr)[0]
    right = np.nonzero(y[ip:] < thr)[0]
    if left.size == 0 or right.size == 0:
        raise ValueError("curve does not cross the requested level on both sides")
    il = int(left[-1])
    ir = ip + int(right[0])
    lead, lead_u = _crossing(t, y, s, il, il + 1, thr)
    trail, trail_u = _crossing(t, y, s, ir, ir - 1, thr)
    return EdgeTiming(thr, lead, lead_u, trail, trail_u)


# -------------------------------------------------------- per-shot analysis


@dataclass
class SweepSettings:
    band: NoiseBand = field(default_factory=NoiseBand)
    bandpass: BandpassSpec = field(default_factory=BandpassSpec)
    delays: np.ndarray = field(default_factory=lambda: np.arange(-500, 501) * 0.4e-9)
    xcorr_max_lag: float = 100e-9
    # "circular" suits the periodic records produced by FFT synthesis; "linear"
    # follows the plain lagged sum and is biased toward zero lag by the overlap
    xcorr_mode: str = "circular"
    trigger: bool = False
    trigger_threshold_db: float = -2.0
    trigger_center: float = 750e3
    trigger_rbw: float = 30e3


def delay_grid(d_min: float, d_max: float, step: float) -> np.ndarray:
    """Delays ``d_min .. d_max`` in multiples of ``step`` (seconds)."""
    k0 = int(round(d_min / step))
    k1 = int(round(d_max / step))
    if k1 < k0:
        raise ValueError("delay_max must be >= delay_min")
    return np.arange(k0, k1 + 1) * step


def _delay_samples(delays, sample_period: float, length: int) -> np.ndarray:
    d = np.asarray(delays, dtype=float)
    k = np.rint(d / sample_period)
    if np.any(np.abs(k * sample_period - d) > 1e-6 * sample_period):
        raise ValueError("delays must be integer multiples of the sample period")
    if np.any(np.abs(k) >= length):
        raise ValueError("delay exceeds the trace length")
    return k.astype(np.int64)


def _delay_sign(shot: ExperimentShot) -> int:
    # report delays as the lag of whichever beam crossed the medium
    return -1 if shot.medium_mode == "probe" else 1


@dataclass
class ShotAnalysis:
    shot_index: int
    squeezed_joint: str
    cov: np.ndarray  # (n_delays, 4, 4), shot-noise units
    xcorr: np.ndarray  # combined normalized correlation on the xcorr window
    peak_discrete: Optional[float]
    peak_parabolic: Optional[float]
    triggered: bool = True

    @property
    def x_minus(self) -> np.ndarray:
        c = self.cov
        return 0.5 * (c[:, 0, 0] + c[:, 2, 2] - 2.0 * c[:, 0, 2])

    @property
    def y_plus(self) -> np.ndarray:
        c = self.cov
        return 0.5 * (c[:, 1, 1] + c[:, 3, 3] + 2.0 * c[:, 1, 3])

    @property
    def inseparability(self) -> np.ndarray:
        return self.x_minus + self.y_plus

    @property
    def squeezing_db(self) -> np.ndarray:
        p = self.x_minus if self.squeezed_joint == "XMinus" else self.y_plus
        return 10.0 * np.log10(p)


def _phase_matrix(bins: np.ndarray, lags: np.ndarray, n: int) -> np.ndarray:
    return np.exp(2j * np.pi * np.outer(bins, lags) / n)


def band_covariances(
    spectra, bins: np.ndarray, lags: np.ndarray, level: float, n: int
) -> np.ndarray:
    """Band-limited covariance matrices of (X_p, Y_p, X_c[.+lag], Y_c[.+lag]).

    ``spectra`` are the rfft of the four records in that order. Entry
    ``(a, b)`` of the cross-mode block at lag ``n`` is
    ``(2/N^2) Re sum_k conj(A_k) B_k exp(2 pi i k n / N)`` over band bins,
    i.e. the covariance of ``a[m]`` with ``b[m + n]``.
    """
    s = [sp[bins] for sp in spectra]
    scale = 2.0 / (n * n * level)
    out = np.empty((lags.size, 4, 4))
    for i in range(4):
        for j in range(i, 4):
            if i < 2 <= j:
                continue
            v = scale * float(np.real(np.vdot(s[i], s[j])))
            out[:, i, j] = v
            out[:, j, i] = v
    phase = _phase_matrix(bins, lags, n)
    for i in range(2):
        for j in range(2, 4):
            v = scale * np.real((np.conj(s[i]) * s[j]) @ phase)
            out[:, i, j] = v
            out[:, j, i] = v
    return out


def trigger_passes(shot: ExperimentShot, level_shot_ref, settings: SweepSettings) -> bool:
    """Spectrum-analyzer stand-in: mean PSD of the labelled joint quadrature in
    ``center +- rbw/2`` at least ``|threshold|`` dB below shot noise."""
    band = NoiseBand(
        settings.trigger_center - settings.trigger_rbw / 2,
        settings.trigger_center + settings.trigger_rbw / 2,
    )
    if shot.squeezed_joint == "XMinus":
        j = joint_trace(shot.probe_x, shot.conj_x, -1)
    else:
        j = joint_trace(shot.probe_y, shot.conj_y, +1)
    p = band_power(j, band, shot_noise_level(level_shot_ref, band))
    return 10.0 * np.log10(p) <= settings.trigger_threshold_db


def analyze_shot(
    shot: ExperimentShot,
    level: ShotNoiseLevel,
    settings: SweepSettings,
    trigger_ref=None,
) -> ShotAnalysis:
    """Covariance versus delay and the filtered cross-correlation for one shot."""
    n = shot.length
    dt = shot.sample_period
    if level.length != n or level.sample_period != dt:
        raise ValueError("shot and shot-noise reference differ in length or sample period")
    sign = _delay_sign(shot)
    lags = sign * _delay_samples(settings.delays, dt, n)
    bins = band_bins(n, dt, settings.band)
    spectra = [np.fft.rfft(t.samples) for t in shot.traces()]
    cov = band_covariances(spectra, bins, lags, level.level, n)

    settings.bandpass.validate(dt)
    h = settings.bandpass.response(np.fft.rfftfreq(n, dt))
    filt = [sp * h for sp in spectra]
    max_lag = int(round(settings.xcorr_max_lag / dt))
    window_lags = np.arange(-max_lag, max_lag + 1)
    curves = []
    for a, b in ((0, 2), (1, 3)):
        xa = np.fft.irfft(filt[a], n)
        xb = np.fft.irfft(filt[b], n)
        if settings.xcorr_mode == "linear":
            _, c = cross_correlation_window(xa, xb, max_lag, spectra=(filt[a], filt[b]))
        elif settings.xcorr_mode == "circular":
            circ = np.fft.irfft(np.conj(filt[a]) * filt[b], n)
            c = circ[window_lags % n] / _norm(xa, xb)
        else:
            raise ValueError(f"unknown xcorr_mode {settings.xcorr_mode!r}")
        curves.append(c)
    # X quadratures correlate, Y quadratures anti-correlate
    combined = 0.5 * (curves[0] - curves[1])
    if sign < 0:
        combined = combined[::-1]
    p = locate_peak(combined)
    if p is None:
        pd = pp = None
    else:
        pd = float(window_lags[p[0]] * dt)
        pp = float((window_lags[0] + p[1]) * dt)
    triggered = True
    if settings.trigger:
        triggered = trigger_passes(shot, trigger_ref if trigger_ref is not None else level, settings)
    return ShotAnalysis(shot.shot_index, shot.squeezed_joint, cov, combined, pd, pp, triggered)


# ------------------------------------------------------------- aggregation


@dataclass
class DelaySweepResult:
    delays: np.ndarray
    insep_mean: np.ndarray
    insep_sem: np.ndarray
    sqz_db_mean: np.ndarray
    sqz_db_sem: np.ndarray
    mi_bits_mean: np.ndarray
    mi_bits_sem: np.ndarray
    unphysical: np.ndarray
    cov_mean: np.ndarray
    cov_sem: np.ndarray
    xcorr_lags: np.ndarray
    xcorr_mean: np.ndarray
    # per-shot values, aligned with shot_indices (nan where no peak was found)
    peak_discrete: np.ndarray
    peak_parabolic: np.ndarray
    peak_excluded: int
    mi_peak: float
    mi_peak_sem: float
    n_shots: int
    shot_indices: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    shot_covs: Optional[np.ndarray] = None
    shot_table: list = field(default_factory=list)
    label: str = ""

    @property
    def insep_min(self):
        i = int(np.argmin(self.insep_mean))
        return float(self.insep_mean[i]), float(self.delays[i])

    @property
    def xcorr_peak(self):
        return _mean_sem(self.peak_parabolic)

    @property
    def xcorr_peak_discrete(self):
        return _mean_sem(self.peak_discrete)

    def edges(self, level: float = 0.5, absolute: bool = False) -> EdgeTiming:
        return edge_timing(self.delays, self.mi_bits_mean, self.mi_bits_sem, level, absolute)


def _curve_peak_time(times: np.ndarray, values: np.ndarray) -> float:
    p = locate_peak(values)
    if p is None:
        return float("nan")
    step = times[1] - times[0]
    return float(times[0] + p[1] * step)


def aggregate(
    results: Iterable[ShotAnalysis],
    settings: SweepSettings,
    dt: float,
    label: str = "",
    norm_rel_sem: float = 0.0,
) -> DelaySweepResult:
    """Reduce per-shot analyses to averaged curves with standard errors.

    Inseparability and squeezing are averaged shot by shot. Mutual
    information is computed from the shot-averaged covariance at each delay
    (so per-shot estimation noise does not bias it upward) and its standard
    error comes from a leave-one-shot-out jackknife. ``norm_rel_sem`` is the
    fractional uncertainty of the shot-noise level; it widens the tolerance
    of the unphysical-state flag since every covariance scales with it.
    """
    results = sorted((r for r in results if r.triggered), key=lambda r: r.shot_index)
    n = len(results)
    if n < 2:
        raise ValueError("need at least two (triggered) shots to aggregate")
    delays = np.asarray(settings.delays, dtype=float)
    covs = np.stack([r.cov for r in results])  # (n, d, 4, 4)
    insep = np.stack([r.inseparability for r in results])
    sqz = np.stack([r.squeezing_db for r in results])
    cov_mean = covs.mean(axis=0)
    cov_sem = covs.std(axis=0, ddof=1) / np.sqrt(n)

    loo = (covs.sum(axis=0)[None] - covs) / (n - 1)
    nu_loo = symplectic_eigenvalues_batch(loo)[..., 1]
    nu_pool = symplectic_eigenvalues_batch(cov_mean)[..., 1]
    nu_se = np.sqrt((n - 1) / n * np.sum((nu_loo - nu_loo.mean(axis=0)) ** 2, axis=0))
    nu_se = np.hypot(nu_se, nu_pool * norm_rel_sem)
    unphysical = nu_pool < 1.0 - 3.0 * nu_se

    mi = mutual_information_batch(cov_mean, tol=np.inf)
    mi_loo = mutual_information_batch(loo, tol=np.inf)
    mi_se = np.sqrt((n - 1) / n * np.sum((mi_loo - mi_loo.mean(axis=0)) ** 2, axis=0))

    mi_peak = _curve_peak_time(delays, mi)
    loo_peaks = np.array([_curve_peak_time(delays, m) for m in mi_loo])
    loo_peaks = loo_peaks[np.isfinite(loo_peaks)]
    if loo_peaks.size > 1:
        mi_peak_se = float(np.sqrt((loo_peaks.size - 1) / loo_peaks.size * np.sum((loo_peaks - loo_peaks.mean()) ** 2)))
    else:
        mi_peak_se = float("nan")

    max_lag = int(round(settings.xcorr_max_lag / dt))
    lags = np.arange(-max_lag, max_lag + 1) * dt
    disc = np.array([np.nan if r.peak_discrete is None else r.peak_discrete for r in results])
    para = np.array([np.nan if r.peak_parabolic is None else r.peak_parabolic for r in results])
    excluded = sum(r.peak_discrete is None for r in results)

    i0 = int(np.argmin(np.abs(delays)))
    table = []
    for r in results:
        ins = r.inseparability
        k = int(np.argmin(ins))
        table.append(
            {
                "shot": r.shot_index,
                "squeezed_joint": r.squeezed_joint,
                "insep_at_zero": float(ins[i0]),
                "insep_min": float(ins[k]),
                "insep_min_delay_ns": float(delays[k] * 1e9),
                "sqz_db_min": float(np.min(r.squeezing_db)),
                "xcorr_peak_ns": None if r.peak_parabolic is None else r.peak_parabolic * 1e9,
                "xcorr_peak_discrete_ns": None if r.peak_discrete is None else r.peak_discrete * 1e9,
            }
        )

    return DelaySweepResult(
        delays=delays,
        insep_mean=insep.mean(axis=0),
        insep_sem=insep.std(axis=0, ddof=1) / np.sqrt(n),
        sqz_db_mean=sqz.mean(axis=0),
        sqz_db_sem=sqz.std(axis=0, ddof=1) / np.sqrt(n),
        mi_bits_mean=mi,
        mi_bits_sem=mi_se,
        unphysical=unphysical,
        cov_mean=cov_mean,
        cov_sem=cov_sem,
        xcorr_lags=lags,
        xcorr_mean=np.mean([r.xcorr for r in results], axis=0),
        peak_discrete=disc,
        peak_parabolic=para,
        peak_excluded=excluded,
        mi_peak=mi_peak,
        mi_peak_sem=mi_peak_se,
        n_shots=n,
        shot_indices=np.array([r.shot_index for r in results]),
        shot_covs=covs,
        shot_table=table,
        label=label,
    )


def run_sweep(shots: Iterable[ExperimentShot], settings: SweepSettings, shot_ref, label: str = "") -> DelaySweepResult:
    results = []
    level = None
    dt = None
    for shot in shots:
        if level is None:
            level = shot_noise_level(shot_ref, settings.band)
            dt = shot.sample_period
        results.append(analyze_shot(shot, level, settings, trigger_ref=shot_ref))
    if level is None:
        raise ValueError("no shots given")
    return aggregate(results, settings, dt, label, level.rel_sem)


def delay_sweep_inseparability(shots, delays, band: NoiseBand, shot_ref) -> DelaySweepResult:
    return run_sweep(shots, SweepSettings(band=band, delays=np.asarray(delays, float)), shot_ref)


delay_sweep_mutual_information = delay_sweep_inseparability


@dataclass(frozen=True)
class CovarianceEstimate:
    cov: TwoModeCovariance
    sem: np.ndarray
    nu_min: float
    nu_min_se: float
    physical: bool
    n_shots: int


def estimate_covariance(shots, delay: float, band: NoiseBand, shot_ref) -> CovarianceEstimate:
    """Shot-averaged band-limited covariance at one delay.

    Standard errors combine shot-to-shot scatter with the uncertainty of the
    shot-noise normalization. The estimate is flagged (not clamped) when its
    smallest symplectic eigenvalue is more than three standard errors below 1.
    """
    settings = SweepSettings(band=band, delays=np.array([float(delay)]))
    lvl = None
    covs = []
    for shot in shots:
        if lvl is None:
            lvl = shot_noise_level(shot_ref, band)
        n = shot.length
        dt = shot.sample_period
        if lvl.length != n or lvl.sample_period != dt:
            raise ValueError("shot and shot-noise reference differ in length or sample period")
        lags = _delay_sign(shot) * _delay_samples(settings.delays, dt, n)
        spectra = [np.fft.rfft(t.samples) for t in shot.traces()]
        covs.append(band_covariances(spectra, band_bins(n, dt, band), lags, lvl.level, n)[0])
    if len(covs) < 2:
        raise ValueError("need at least two shots")
    covs = np.stack(covs)
    k = covs.shape[0]
    cov = covs.mean(axis=0)
    rel = lvl.rel_sem
    sem = np.sqrt((covs.std(axis=0, ddof=1) / np.sqrt(k)) ** 2 + (cov * rel) ** 2)
    nu = float(symplectic_eigenvalues_batch(cov)[1])
    loo = (covs.sum(axis=0)[None] - covs) / (k - 1)
    nu_loo = symplectic_eigenvalues_batch(loo)[:, 1]
    nu_jk = np.sqrt((k - 1) / k * np.sum((nu_loo - nu_loo.mean()) ** 2))
    nu_se = float(np.hypot(nu_jk, nu * rel))
    return CovarianceEstimate(
        cov=TwoModeCovariance(cov),
        sem=sem,
        nu_min=nu,
        nu_min_se=nu_se,
        physical=bool(nu >= 1.0 - 3.0 * nu_se),
        n_shots=k,
    )


def _jackknife_se(values: np.ndarray) -> float:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    k = v.size
    if k < 2:
        return float("nan")
    return float(np.sqrt((k - 1) / k * np.sum((v - v.mean()) ** 2)))


def _matched(ref: DelaySweepResult, test: DelaySweepResult):
    common = np.intersect1d(ref.shot_indices, test.shot_indices)
    if common.size < 2:
        raise ValueError("paired comparison needs at least two shots present in both runs")
    ir = np.searchsorted(ref.shot_indices, common)
    it = np.searchsorted(test.shot_indices, common)
    return ir, it


def compare_peaks(ref: DelaySweepResult, test: DelaySweepResult, paired: bool = False) -> PeakAdvance:
    """Cross-correlation peak advance of ``test`` relative to ``ref``.

    With ``paired`` the runs must share source records shot by shot (same
    seed), and the standard error comes from per-shot differences, which
    cancels the source noise common to both runs.
    """
    if not paired:
        return _advance_from_peaks(
            ref.peak_discrete[np.isfinite(ref.peak_discrete)],
            ref.peak_parabolic[np.isfinite(ref.peak_parabolic)],
            ref.peak_excluded,
            test.peak_discrete[np.isfinite(test.peak_discrete)],
            test.peak_parabolic[np.isfinite(test.peak_parabolic)],
            test.peak_excluded,
        )
    ir, it = _matched(ref, test)
    dd = test.peak_discrete[it] - ref.peak_discrete[ir]
    dp = test.peak_parabolic[it] - ref.peak_parabolic[ir]
    m_d, s_d = _mean_sem(dd)
    m_p, s_p = _mean_sem(dp)
    ok = np.isfinite(dp)
    return PeakAdvance(
        advance=m_p,
        sem=s_p,
        discrete_advance=m_d,
        discrete_sem=s_d,
        n_ref=int(ok.sum()),
        n_test=int(ok.sum()),
        excluded_ref=int((~np.isfinite(ref.peak_parabolic[ir])).sum()),
        excluded_test=int((~np.isfinite(test.peak_parabolic[it])).sum()),
    )


@dataclass(frozen=True)
class CurveShift:
    """Difference ``test - ref`` of a curve feature with its standard error."""

    shift: float
    sem: float


def _mi_feature(covs: np.ndarray, delays: np.ndarray, feature) -> np.ndarray:
    """Leave-one-out values of ``feature(delays, mi_curve)``."""
    k = covs.shape[0]
    total = covs.sum(axis=0)
    out = np.empty(k)
    for i in range(k):
        mi = mutual_information_batch((total - covs[i]) / (k - 1), tol=np.inf)
        out[i] = feature(delays, mi)
    return out


def mi_feature_shift(ref: DelaySweepResult, test: DelaySweepResult, feature, paired: bool = True) -> CurveShift:
    """Shift of a feature of the pooled MI curve (peak time, edge time, ...).

    ``feature(delays, mi_curve) -> float``. The standard error is a
    leave-one-shot-out jackknife; with ``paired`` the same shot is dropped
    from both runs so noise common to both cancels in the difference.
    """
    if ref.shot_covs is None or test.shot_covs is None:
        raise ValueError("per-shot covariances are required")
    if not np.array_equal(ref.delays, test.delays):
        raise ValueError("runs use different delay grids")
    value = feature(test.delays, test.mi_bits_mean) - feature(ref.delays, ref.mi_bits_mean)
    if paired:
        ir, it = _matched(ref, test)
        d = _mi_feature(test.shot_covs[it], test.delays, feature) - _mi_feature(ref.shot_covs[ir], ref.delays, feature)
        return CurveShift(float(value), _jackknife_se(d))
    se_r = _jackknife_se(_mi_feature(ref.shot_covs, ref.delays, feature))
    se_t = _jackknife_se(_mi_feature(test.shot_covs, test.delays, feature))
    return CurveShift(float(value), float(np.hypot(se_r, se_t)))


def mi_peak_time(delays, mi) -> float:
    return _curve_peak_time(np.asarray(delays), np.asarray(mi))


def mi_edge_time(side: str, level: float = 0.5, absolute: bool = False):
    """Feature function returning the leading or trailing crossing time."""
    if side not in ("leading", "trailing"):
        raise ValueError("side must be 'leading' or 'trailing'")

    def feature(delays, mi):
        e = edge_timing(delays, mi, None, level, absolute)
        return e.leading if side == "leading" else e.trailing

    return feature
