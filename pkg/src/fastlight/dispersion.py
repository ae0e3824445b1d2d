"""Dispersive gain medium: gain profile, minimum-phase response, group delay.

Frequencies are sideband (two-photon detuning) frequencies in Hz. The phase
that accompanies a gain profile is obtained from ``ln|t| = ln(G)/2`` by a
numerical Hilbert transform, which gives the causal, minimum-phase response.
The refractive index and the cell length never appear separately; only the
accumulated phase ``phi(f)`` acts on the light.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import fsolve


class EdgeGainError(ValueError):
    """Gain does not relax to 1 at the grid edges (the phase would alias)."""


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def uniform_grid(f_min: float, f_max: float, n: int) -> np.ndarray:
    if n < 3 or not f_max > f_min:
        raise ValueError("grid needs n >= 3 points and f_max > f_min")
    return np.linspace(f_min, f_max, n)


def default_grid() -> np.ndarray:
    """+-200 MHz at 10 kHz spacing."""
    return uniform_grid(-200e6, 200e6, 40001)


def _check_uniform(freq: np.ndarray) -> float:
    if freq.ndim != 1 or freq.size < 3:
        raise ValueError("frequency grid must be 1-D with at least 3 points")
    step = np.diff(freq)
    df = float(step.mean())
    if df <= 0 or np.max(np.abs(step - df)) > 1e-6 * df:
        raise ValueError("frequency grid must be strictly increasing and uniform")
    return df


@dataclass(frozen=True)
class LorentzianLine:
    center: float
    width: float
    peak_gain: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"line width must be > 0, got {self.width}")
        if not self.peak_gain >= 0:
            raise ValueError(f"peak gain must be >= 0, got {self.peak_gain}")

    def excess_gain(self, f):
        x = np.asarray(f, dtype=float) - self.center
        return self.peak_gain * self.width**2 / (x**2 + self.width**2)


@dataclass(frozen=True)
class GainProfile:
    freq: np.ndarray
    gain: np.ndarray

    def __post_init__(self):
        f = _readonly(self.freq)
        g = _readonly(self.gain)
        if f.shape != g.shape:
            raise ValueError("freq and gain must have the same length")
        _check_uniform(f)
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise ValueError("gain must be finite and non-negative")
        object.__setattr__(self, "freq", f)
        object.__setattr__(self, "gain", g)

    @property
    def df(self) -> float:
        return float(self.freq[1] - self.freq[0])


@dataclass(frozen=True)
class MediumResponse:
    """Complex transfer ``t(f) = amplitude * exp(i phase)`` plus added-noise weight."""

    freq: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray
    group_delay: np.ndarray
    noise_coupling: np.ndarray = field(default=None)

    def __post_init__(self):
        f = _readonly(self.freq)
        _check_uniform(f)
        amp = _readonly(self.amplitude)
        ph = _readonly(self.phase)
        tau = _readonly(self.group_delay)
        if self.noise_coupling is None:
            nc = _readonly(np.maximum(amp**2 - 1.0, 0.0))
        else:
            nc = _readonly(self.noise_coupling)
        for name, arr in (("amplitude", amp), ("phase", ph), ("group_delay", tau), ("noise_coupling", nc)):
            if arr.shape != f.shape:
                raise ValueError(f"{name} length does not match the frequency grid")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite values")
        if np.any(amp < 1.0 - 1e-12):
            raise ValueError("amplitude below 1: attenuating media are not supported")
        object.__setattr__(self, "freq", f)
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "phase", ph)
        object.__setattr__(self, "group_delay", tau)
        object.__setattr__(self, "noise_coupling", nc)

    @property
    def gain(self) -> np.ndarray:
        return self.amplitude**2

    @property
    def transfer(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phase)

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.amplitude == 1.0) and np.all(self.phase == 0.0))


def synth_gain_profile(lines: Sequence[LorentzianLine], grid) -> GainProfile:
    """``G(f) = 1 + sum_k peak_k w_k^2 / ((f - f_k)^2 + w_k^2)``."""
    freq = np.asarray(grid, dtype=float)
    _check_uniform(freq)
    gain = np.ones_like(freq)
    for line in lines:
        if not freq[0] < line.center < freq[-1]:
            raise ValueError(
                f"line at {line.center:g} Hz lies outside the grid interior "
                f"({freq[0]:g}, {freq[-1]:g})"
            )
        gain = gain + line.excess_gain(freq)
    return GainProfile(freq, gain)


def hilbert_transform(u: np.ndarray, pad_factor: int = 4) -> np.ndarray:
    """Discrete Hilbert transform (``H[cos] = sin``) with zero padding.

    The input is embedded in a zero-filled array ``pad_factor`` times its
    length so the implied periodic extension does not fold the tails back.
    """
    u = np.asarray(u, dtype=float)
    n = u.size
    m = max(pad_factor, 1) * n
    spec = np.fft.fft(u, m)
    spec *= -1j * np.sign(np.fft.fftfreq(m))
    return np.fft.ifft(spec).real[:n]


def group_delay_from_phase(freq: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """``tau = -d phi / d omega`` by second-order centered differences."""
    return -np.gradient(phase, 2.0 * np.pi * np.asarray(freq, dtype=float))


def kramers_kronig_phase(
    profile: GainProfile, edge_tol: float = 1e-3, pad_factor: int = 4
) -> MediumResponse:
    """Minimum-phase response consistent with ``profile``: ``phi = -H[ln|t|]``."""
    g = profile.gain
    edge = max(abs(g[0] - 1.0), abs(g[-1] - 1.0))
    if edge > edge_tol:
        raise EdgeGainError(
            f"gain deviates from 1 by {edge:.3g} at the grid edge (tolerance {edge_tol:g})"
        )
    if np.any(g < 1.0 - edge_tol):
        raise ValueError("gain below 1 inside the grid: only gain media are modeled")
    g = np.maximum(g, 1.0)
    log_amp = 0.5 * np.log(g)
    if np.all(log_amp == 0.0):
        phase = np.zeros_like(log_amp)
    else:
        phase = -hilbert_transform(log_amp, pad_factor)
    amp = np.sqrt(g)
    return MediumResponse(
        freq=profile.freq,
        amplitude=amp,
        phase=phase,
        group_delay=group_delay_from_phase(profile.freq, phase),
        noise_coupling=np.maximum(g - 1.0, 0.0),
    )


def flat_response(grid=None) -> MediumResponse:
    freq = default_grid() if grid is None else np.asarray(grid, dtype=float)
    zeros = np.zeros_like(freq)
    return MediumResponse(freq, np.ones_like(freq), zeros, zeros, zeros)


def linear_phase_response(delay: float, grid=None, gain: float = 1.0) -> MediumResponse:
    """Pure time shift ``phi = -2 pi f delay`` with flat gain (not minimum phase)."""
    freq = default_grid() if grid is None else np.asarray(grid, dtype=float)
    phase = -2.0 * np.pi * freq * delay
    amp = np.full_like(freq, np.sqrt(gain))
    return MediumResponse(freq, amp, phase, np.full_like(freq, delay), np.full_like(freq, gain - 1.0))


def medium_from_lines(lines: Sequence[LorentzianLine], grid=None, edge_tol: float = 1e-3) -> MediumResponse:
    grid = default_grid() if grid is None else grid
    if not lines:
        return flat_response(grid)
    return kramers_kronig_phase(synth_gain_profile(lines, grid), edge_tol=edge_tol)


def _band_mask(freq: np.ndarray, band) -> np.ndarray:
    f_lo, f_hi = band
    if not f_hi > f_lo:
        raise ValueError("band must satisfy f_lo < f_hi")
    if f_lo < freq[0] or f_hi > freq[-1]:
        raise ValueError(f"band {band} lies outside the grid")
    mask = (freq >= f_lo) & (freq <= f_hi)
    if not mask.any():
        raise ValueError(f"band {band} contains no grid points")
    return mask


def group_delay_in_band(resp: MediumResponse, band) -> float:
    """Gain-weighted mean group delay over ``band`` (seconds; negative = advance)."""
    mask = _band_mask(resp.freq, band)
    w = resp.gain[mask]
    return float(np.sum(w * resp.group_delay[mask]) / np.sum(w))


def mean_gain_in_band(resp: MediumResponse, band) -> float:
    return float(np.mean(resp.gain[_band_mask(resp.freq, band)]))


def transfer_at(resp: MediumResponse, f):
    """Linearly interpolated ``(t(f), |nu(f)|^2)``; ``f`` must lie on the grid span."""
    f_arr = np.asarray(f, dtype=float)
    if np.any(f_arr < resp.freq[0]) or np.any(f_arr > resp.freq[-1]):
        raise ValueError("frequency outside the medium grid")
    amp = np.interp(f_arr, resp.freq, resp.amplitude)
    ph = np.interp(f_arr, resp.freq, resp.phase)
    nc = np.interp(f_arr, resp.freq, resp.noise_coupling)
    t = amp * np.exp(1j * ph)
    if f_arr.ndim == 0:
        return complex(t), float(nc)
    return t, nc


def causality_leakage(resp: MediumResponse) -> float:
    """Fraction of impulse-response energy at negative times.

    The unit (instantaneous) part of ``t`` is removed first so the check is
    about the dispersive response rather than being dominated by a delta at
    ``t = 0``. The grid is taken as the full spectrum of a sampled response.
    """
    t = resp.transfer - 1.0
    if np.all(t == 0):
        return 0.0
    n = t.size
    # sample k of the grid corresponds to baseband frequency index k - k0
    k0 = int(np.argmin(np.abs(resp.freq)))
    h = np.fft.ifft(np.roll(t, -k0))
    energy = np.abs(h) ** 2
    neg = energy[(n + 1) // 2 :].sum()
    return float(neg / energy.sum())


def calibrate_doublet(
    target_delay: float,
    target_gain: float,
    band,
    width: float,
    grid=None,
    offset: float = 0.0,
    guess=(12e6, 8.0),
) -> list[LorentzianLine]:
    """Symmetric gain doublet whose gap hosts the band with a given advance.

    Solves for the line separation and peak gain such that the gain-weighted
    band delay equals ``target_delay`` and the gain at the band center equals
    ``target_gain``. Lines sit at ``offset +- d``; ``band`` is in baseband
    (detection) frequency, mapped to detuning by ``offset + f``.
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    f_lo, f_hi = band
    det_band = (offset + f_lo, offset + f_hi)
    f_mid = offset + 0.5 * (f_lo + f_hi)

    def lines_for(d, p):
        return [LorentzianLine(offset - d, width, p), LorentzianLine(offset + d, width, p)]

    def residual(x):
        d, p = x[0] * 1e6, abs(x[1])
        resp = medium_from_lines(lines_for(d, p), grid)
        return [
            (group_delay_in_band(resp, det_band) - target_delay) * 1e9,
            float(np.interp(f_mid, resp.freq, resp.gain)) - target_gain,
        ]

    sol, _, ier, msg = fsolve(residual, [guess[0] / 1e6, guess[1]], full_output=True)
    if ier != 1:
        raise RuntimeError(f"doublet calibration did not converge: {msg}")
    return lines_for(sol[0] * 1e6, abs(sol[1]))
