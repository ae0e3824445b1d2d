"""Synthetic homodyne records of a two-mode squeezed vacuum.

Traces are generated in the frequency domain: white Gaussian noise is shaped
per rfft bin so the joint quadratures ``X- = (X_p - X_c)/sqrt2`` and
``Y+ = (Y_p + Y_c)/sqrt2`` carry variance ``exp(-2 r(f))`` while ``X+`` and
``Y-`` carry ``exp(+2 r(f))``, all in shot-noise units. Every random draw
comes from its own counter-based stream keyed by ``(seed, shot, role)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Optional

import numpy as np

from .dispersion import MediumResponse

DEFAULT_SAMPLE_PERIOD = 0.4e-9
DEFAULT_LENGTH = 1_000_000

TraceMode = Literal["probe", "conjugate", "shotnoise"]
Quadrature = Literal["X", "Y"]
JointLabel = Literal["XMinus", "YPlus"]

# RNG stream roles
_ROLE_SOURCE = (0, 1, 2, 3)  # X+, X-, Y+, Y- of the source
_ROLE_AMP_X, _ROLE_AMP_Y = 10, 11
_ROLE_SHOTNOISE = 20


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for ``seed`` and an integer key path."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class QuadratureTrace:
    samples: np.ndarray
    sample_period: float = DEFAULT_SAMPLE_PERIOD
    mode: TraceMode = "probe"
    quadrature: Quadrature = "X"
    seed_tag: int = 0

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("trace samples must be 1-D")
        if not np.all(np.isfinite(s)):
            raise ValueError("trace contains non-finite samples")
        if not self.sample_period > 0:
            raise ValueError("sample period must be positive")
        if self.mode not in ("probe", "conjugate", "shotnoise"):
            raise ValueError(f"unknown trace mode {self.mode!r}")
        if self.quadrature not in ("X", "Y"):
            raise ValueError(f"unknown quadrature {self.quadrature!r}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.sample_period

    def with_samples(self, samples) -> "QuadratureTrace":
        return replace(self, samples=samples)


@dataclass(frozen=True)
class ExperimentShot:
    probe_x: QuadratureTrace
    probe_y: QuadratureTrace
    conj_x: QuadratureTrace
    conj_y: QuadratureTrace
    squeezed_joint: JointLabel = "XMinus"
    config_digest: str = ""
    shot_index: int = 0
    # which beam went through a dispersive medium, if any
    medium_mode: Optional[str] = None

    def __post_init__(self):
        traces = self.traces()
        n = len(traces[0])
        dt = traces[0].sample_period
        for t in traces:
            if len(t) != n or t.sample_period != dt:
                raise ValueError("all four traces must share length and sample period")
        if self.squeezed_joint not in ("XMinus", "YPlus"):
            raise ValueError(f"unknown joint quadrature label {self.squeezed_joint!r}")

    def traces(self) -> tuple:
        return (self.probe_x, self.probe_y, self.conj_x, self.conj_y)

    @property
    def length(self) -> int:
        return len(self.probe_x)

    @property
    def sample_period(self) -> float:
        return self.probe_x.sample_period


@dataclass(frozen=True)
class SqueezingSpectrum:
    """Squeezing parameter versus detection frequency.

    Flat at ``r`` inside ``band`` with raised-cosine ramps at both edges, zero
    outside. Each ramp spans ``rolloff_fraction`` of its edge frequency and
    lies inside the band. A tabulated ``table = (freq_hz, r)`` overrides the
    flat shape (linear interpolation, zero outside the table).
    """

    r: float = np.log(2.0) / 2.0
    band: tuple = (20e3, 3e6)
    rolloff_fraction: float = 0.1
    table: Optional[tuple] = field(default=None)

    def __post_init__(self):
        f_lo, f_hi = self.band
        if not 0 <= f_lo < f_hi:
            raise ValueError("squeezing band must satisfy 0 <= f_lo < f_hi")
        if not self.r >= 0:
            raise ValueError("squeezing parameter must be >= 0")
        if not 0 <= self.rolloff_fraction < 1:
            raise ValueError("rolloff_fraction must be in [0, 1)")
        if self.table is not None:
            f, r = (np.asarray(a, dtype=float) for a in self.table)
            if f.shape != r.shape or np.any(np.diff(f) <= 0) or np.any(r < 0):
                raise ValueError("squeezing table needs increasing freq and r >= 0")

    def r_of_f(self, f) -> np.ndarray:
        f = np.abs(np.asarray(f, dtype=float))
        if self.table is not None:
            tf, tr = (np.asarray(a, dtype=float) for a in self.table)
            return np.interp(f, tf, tr, left=0.0, right=0.0)
        f_lo, f_hi = self.band
        w_lo = self.rolloff_fraction * f_lo
        w_hi = self.rolloff_fraction * f_hi
        out = np.where((f >= f_lo) & (f <= f_hi), 1.0, 0.0)
        if w_lo > 0:
            m = (f >= f_lo) & (f < f_lo + w_lo)
            out[m] = 0.5 * (1 - np.cos(np.pi * (f[m] - f_lo) / w_lo))
        if w_hi > 0:
            m = (f > f_hi - w_hi) & (f <= f_hi)
            out[m] = 0.5 * (1 - np.cos(np.pi * (f_hi - f[m]) / w_hi))
        return self.r * out


def _check_length(length: int, sample_period: float) -> None:
    if length < 2 or length % 2:
        raise ValueError("trace length must be an even integer >= 2")
    if not sample_period > 0:
        raise ValueError("sample period must be positive")


def synthesize_shot(
    spec: SqueezingSpectrum,
    length: int = DEFAULT_LENGTH,
    sample_period: float = DEFAULT_SAMPLE_PERIOD,
    seed: int = 0,
    shot_index: int = 0,
    squeezed_joint: JointLabel = "XMinus",
    config_digest: str = "",
) -> ExperimentShot:
    """One probe/conjugate record of the two-mode squeezed vacuum."""
    _check_length(length, sample_period)
    nyquist = 0.5 / sample_period
    if spec.table is None and spec.band[1] >= nyquist:
        raise ValueError(f"squeezing band edge {spec.band[1]:g} Hz is above Nyquist {nyquist:g} Hz")
    freqs = np.fft.rfftfreq(length, sample_period)
    r = spec.r_of_f(freqs)
    anti = np.exp(r)  # amplitude of X+ and Y-
    sq = np.exp(-r)  # amplitude of X- and Y+

    spectra = []
    for role in _ROLE_SOURCE:
        w = stream(seed, shot_index, role).standard_normal(length)
        spectra.append(np.fft.rfft(w))
    x_plus = spectra[0] * anti
    x_minus = spectra[1] * sq
    y_plus = spectra[2] * sq
    y_minus = spectra[3] * anti
    h = 1.0 / np.sqrt(2.0)
    comps = {
        ("probe", "X"): h * (x_plus + x_minus),
        ("conjugate", "X"): h * (x_plus - x_minus),
        ("probe", "Y"): h * (y_plus + y_minus),
        ("conjugate", "Y"): h * (y_plus - y_minus),
    }
    traces = {
        key: QuadratureTrace(
            np.fft.irfft(spec_, n=length), sample_period, key[0], key[1], seed_tag=int(seed)
        )
        for key, spec_ in comps.items()
    }
    return ExperimentShot(
        traces[("probe", "X")],
        traces[("probe", "Y")],
        traces[("conjugate", "X")],
        traces[("conjugate", "Y")],
        squeezed_joint=squeezed_joint,
        config_digest=config_digest,
        shot_index=shot_index,
    )


def baseband_transfer(resp: MediumResponse, freqs: np.ndarray, offset: float = 0.0):
    """Transfer and noise weight on non-negative detection frequencies.

    Detection frequency ``f`` sees the medium at detuning ``offset + f``.
    Bins that fall outside the medium grid pass unchanged (``t = 1``, no
    added noise). Returns ``(t, noise_coupling)``.
    """
    det = offset + np.asarray(freqs, dtype=float)
    inside = (det >= resp.freq[0]) & (det <= resp.freq[-1])
    t = np.ones(det.shape, dtype=complex)
    nc = np.zeros(det.shape)
    if inside.any():
        d = det[inside]
        amp = np.interp(d, resp.freq, resp.amplitude)
        ph = np.interp(d, resp.freq, resp.phase)
        t[inside] = amp * np.exp(1j * ph)
        nc[inside] = np.interp(d, resp.freq, resp.noise_coupling)
    return t, nc


def propagate_through_medium(
    shot: ExperimentShot,
    resp: MediumResponse,
    mode: Literal["probe", "conjugate"] = "conjugate",
    seed: int = 0,
    offset: float = 0.0,
) -> ExperimentShot:
    """Pass one beam through ``resp``, adding the amplifier's vacuum noise.

    Per bin: ``X -> t X + sqrt(G-1) X_b`` and ``Y -> t Y - sqrt(G-1) Y_b``
    with ``X_b``, ``Y_b`` an independent vacuum port. The other beam is
    untouched. A medium with unit amplitude and zero phase returns the shot
    unchanged.
    """
    if mode not in ("probe", "conjugate"):
        raise ValueError(f"mode must be 'probe' or 'conjugate', got {mode!r}")
    if resp.is_identity:
        return replace(shot, medium_mode=shot.medium_mode)
    n = shot.length
    dt = shot.sample_period
    freqs = np.fft.rfftfreq(n, dt)
    t, nc = baseband_transfer(resp, freqs, offset)
    noise_w = np.sqrt(nc)
    # the Nyquist and DC bins must stay real for a real output
    t[0] = t[0].real
    if n % 2 == 0:
        t[-1] = t[-1].real
    tx, ty = (shot.probe_x, shot.probe_y) if mode == "probe" else (shot.conj_x, shot.conj_y)
    out = []
    for trace, role, sign in ((tx, _ROLE_AMP_X, 1.0), (ty, _ROLE_AMP_Y, -1.0)):
        spec = np.fft.rfft(trace.samples) * t
        if np.any(noise_w > 0):
            vac = stream(seed, shot.shot_index, role).standard_normal(n)
            spec = spec + sign * noise_w * np.fft.rfft(vac)
        out.append(trace.with_samples(np.fft.irfft(spec, n=n)))
    if mode == "probe":
        return replace(shot, probe_x=out[0], probe_y=out[1], medium_mode="probe")
    return replace(shot, conj_x=out[0], conj_y=out[1], medium_mode="conjugate")


def shot_noise_reference(
    length: int = DEFAULT_LENGTH,
    sample_period: float = DEFAULT_SAMPLE_PERIOD,
    seed: int = 0,
    index: int = 0,
) -> QuadratureTrace:
    """Unit-variance white vacuum record (blocked twin beams)."""
    _check_length(length, sample_period)
    w = stream(seed, index, _ROLE_SHOTNOISE).standard_normal(length)
    return QuadratureTrace(w, sample_period, "shotnoise", "X", seed_tag=int(seed))


def expected_band_covariance(
    spec: SqueezingSpectrum,
    resp: Optional[MediumResponse],
    mode: str,
    band: tuple,
    delays,
    length: int = DEFAULT_LENGTH,
    sample_period: float = DEFAULT_SAMPLE_PERIOD,
    offset: float = 0.0,
) -> np.ndarray:
    """Ensemble-mean band-limited covariance versus reported delay.

    Averages the per-bin covariance of the simulated process over the rfft
    bins of ``band``; the delay enters as a phase ``exp(2 pi i f d)`` on the
    cross-mode block. This is what the delay-sweep estimator converges to.
    """
    freqs = np.fft.rfftfreq(length, sample_period)
    idx = (freqs >= band[0]) & (freqs <= band[1])
    f = freqs[idx]
    r = spec.r_of_f(f)
    c2, s2 = np.cosh(2 * r), np.sinh(2 * r)
    if resp is None:
        t, nc = np.ones(f.shape, complex), np.zeros(f.shape)
    else:
        t, nc = baseband_transfer(resp, f, offset)
    g = np.abs(t) ** 2
    var_med = g * c2 + nc
    d = np.asarray(delays, dtype=float)
    phase = np.exp(2j * np.pi * np.outer(d, f))
    cross = np.real(phase @ (t * s2)) / f.size
    out = np.zeros((d.size, 4, 4))
    vp = np.mean(var_med if mode == "probe" else c2)
    vc = np.mean(var_med if mode == "conjugate" else c2)
    out[:, 0, 0] = out[:, 1, 1] = vp
    out[:, 2, 2] = out[:, 3, 3] = vc
    out[:, 0, 2] = out[:, 2, 0] = cross
    out[:, 1, 3] = out[:, 3, 1] = -cross
    return out
