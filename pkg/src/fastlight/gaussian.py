"""Two-mode Gaussian state calculus in shot-noise units.

All matrices use the quadrature ordering ``(X_p, Y_p, X_c, Y_c)`` and the
normalization in which the vacuum variance of every quadrature is 1.
Entropies and mutual information are reported in bits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal, Sequence, Union

import numpy as np
from scipy.optimize import bisect

Mode = Literal["probe", "conjugate"]

PHYSICAL_TOL = 1e-9

# Symplectic form for ordering (X_p, Y_p, X_c, Y_c).
OMEGA = np.array(
    [
        [0.0, 1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0, 0.0],
    ]
)

_MODE_SLICE = {"probe": slice(0, 2), "conjugate": slice(2, 4)}

# Contraction vectors for X- = (X_p - X_c)/sqrt2 and Y+ = (Y_p + Y_c)/sqrt2.
X_MINUS = np.array([1.0, 0.0, -1.0, 0.0]) / np.sqrt(2.0)
Y_PLUS = np.array([0.0, 1.0, 0.0, 1.0]) / np.sqrt(2.0)


class UnphysicalCovarianceError(ValueError):
    """A covariance matrix violates the uncertainty principle."""


@dataclass(frozen=True, eq=False)
class TwoModeCovariance:
    """Symmetric 4x4 quadrature covariance matrix.

    The constructor symmetrizes its input; asymmetry larger than ``1e-8``
    (relative to the largest entry) is rejected. Physicality is *not*
    enforced here because estimated matrices may legitimately fall slightly
    outside the physical set; use :meth:`check_physical`.
    """

    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"covariance must be 4x4, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("covariance has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m - m.T)) > 1e-8 * scale:
            raise ValueError("covariance matrix is not symmetric")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, TwoModeCovariance):
            return NotImplemented
        return bool(np.array_equal(self.entries, other.entries))

    def block(self, mode: Mode) -> np.ndarray:
        s = _MODE_SLICE[mode]
        return self.entries[s, s]

    @property
    def cross_block(self) -> np.ndarray:
        return self.entries[0:2, 2:4]

    def check_physical(self, tol: float = PHYSICAL_TOL) -> None:
        nu = symplectic_eigenvalues(self).nu
        if nu[-1] < 1.0 - tol:
            raise UnphysicalCovarianceError(
                f"smallest symplectic eigenvalue {nu[-1]:.12g} < 1 - {tol:g}"
            )
        if np.min(np.linalg.eigvalsh(self.entries)) <= 0:
            raise UnphysicalCovarianceError("covariance is not positive definite")

    def is_physical(self, tol: float = PHYSICAL_TOL) -> bool:
        try:
            self.check_physical(tol)
        except UnphysicalCovarianceError:
            return False
        return True


CovLike = Union[TwoModeCovariance, np.ndarray, Sequence[Sequence[float]]]


def as_covariance(cov: CovLike) -> TwoModeCovariance:
    if isinstance(cov, TwoModeCovariance):
        return cov
    return TwoModeCovariance(np.asarray(cov, dtype=float))


@dataclass(frozen=True)
class SqueezeGainParams:
    r: float
    G: float = 1.0

    def __post_init__(self):
        if not self.r >= 0:
            raise ValueError(f"squeezing parameter must be >= 0, got {self.r}")
        if not self.G >= 1:
            raise ValueError(f"gain must be >= 1, got {self.G}")

    @property
    def squeezed_variance(self) -> float:
        return float(np.exp(-2.0 * self.r))

    @property
    def mu(self) -> float:
        return float(np.sqrt(self.G))

    @property
    def nu(self) -> float:
        return float(np.sqrt(self.G - 1.0))


@dataclass(frozen=True)
class SymplecticSpectrum:
    nu: tuple

    def __post_init__(self):
        vals = tuple(sorted((float(v) for v in self.nu), reverse=True))
        object.__setattr__(self, "nu", vals)

    def __iter__(self):
        return iter(self.nu)

    def __len__(self):
        return len(self.nu)


def r_from_db(db: float) -> float:
    """Squeezing parameter for a squeezed variance of ``db`` decibels (negative)."""
    if db > 0:
        raise ValueError("squeezing level in dB must be <= 0")
    return -0.5 * np.log(10.0 ** (db / 10.0))


def db_from_r(r: float) -> float:
    return 10.0 * np.log10(np.exp(-2.0 * r))


def epr_covariance(r: float) -> TwoModeCovariance:
    """Covariance of the pure two-mode squeezed vacuum."""
    if not r >= 0:
        raise ValueError(f"squeezing parameter must be >= 0, got {r}")
    c, s = np.cosh(2 * r), np.sinh(2 * r)
    return TwoModeCovariance(
        np.array(
            [
                [c, 0.0, s, 0.0],
                [0.0, c, 0.0, -s],
                [s, 0.0, c, 0.0],
                [0.0, -s, 0.0, c],
            ]
        )
    )


def apply_phase_insensitive_gain(
    cov: CovLike, G: float, mode: Mode = "conjugate"
) -> TwoModeCovariance:
    """Send one mode through an ideal phase-insensitive amplifier of gain ``G``.

    The amplified mode obeys ``a -> sqrt(G) a + sqrt(G-1) b^dagger`` with ``b``
    in vacuum, so the map on the covariance is ``M V M^T + (G-1) I`` on the
    amplified block, with ``M = sqrt(G)`` on that mode.
    """
    if not G >= 1:
        raise ValueError(f"gain must be >= 1, got {G}")
    if mode not in _MODE_SLICE:
        raise ValueError(f"mode must be 'probe' or 'conjugate', got {mode!r}")
    cov = as_covariance(cov)
    cov.check_physical()
    if G == 1:
        return cov
    s = _MODE_SLICE[mode]
    scale = np.ones(4)
    scale[s] = np.sqrt(G)
    out = cov.entries * np.outer(scale, scale)
    out[s, s] += (G - 1.0) * np.eye(2)
    return TwoModeCovariance(out)


def symplectic_eigenvalues(cov: CovLike) -> SymplecticSpectrum:
    """Moduli of the eigenvalues of ``i Omega V``, one per degenerate pair."""
    cov = as_covariance(cov)
    ev = np.abs(np.linalg.eigvals(1j * OMEGA @ cov.entries))
    ev = np.sort(ev)[::-1]
    return SymplecticSpectrum((ev[0], ev[2]))


def symplectic_eigenvalues_batch(mats: np.ndarray) -> np.ndarray:
    """Symplectic eigenvalues of a stack ``(..., 4, 4)``, sorted descending.

    With ``V = L L^T`` the Hermitian matrix ``L^T (i Omega) L`` is similar to
    ``i Omega V``; its eigenvalues come out as ``+-nu`` without the precision
    loss of the quartic invariants near purity. Raises
    :class:`UnphysicalCovarianceError` for matrices that are not positive
    definite.
    """
    m = np.asarray(mats, dtype=float)
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise UnphysicalCovarianceError("covariance is not positive definite") from exc
    herm = np.swapaxes(chol, -1, -2) @ (1j * OMEGA) @ chol
    ev = np.linalg.eigvalsh(herm)
    return ev[..., [3, 2]]


def _entropy_terms(nu: np.ndarray, tol: float) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    if np.any(nu < 1.0 - tol):
        raise UnphysicalCovarianceError(
            f"symplectic eigenvalue {float(np.min(nu)):.12g} below 1 - {tol:g}"
        )
    nu = np.maximum(nu, 1.0)
    plus = (nu + 1.0) / 2.0
    minus = (nu - 1.0) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        tm = np.where(minus > 0, minus * np.log2(np.where(minus > 0, minus, 1.0)), 0.0)
    return plus * np.log2(plus) - tm


def von_neumann_entropy(
    spectrum: SymplecticSpectrum | Iterable[float], tol: float = PHYSICAL_TOL
) -> float:
    """Entropy in bits of a Gaussian state with the given symplectic spectrum.

    Values within ``tol`` below 1 are treated as 1; anything lower raises
    :class:`UnphysicalCovarianceError`.
    """
    nu = np.fromiter((float(v) for v in spectrum), dtype=float)
    return float(np.sum(_entropy_terms(nu, tol)))


def _marginal_nu(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    na = np.sqrt(np.clip(np.linalg.det(mats[..., 0:2, 0:2]), 0.0, None))
    nb = np.sqrt(np.clip(np.linalg.det(mats[..., 2:4, 2:4]), 0.0, None))
    return na, nb


def mutual_information_batch(mats: np.ndarray, tol: float = PHYSICAL_TOL) -> np.ndarray:
    """Vectorized :func:`mutual_information` over a stack ``(..., 4, 4)``."""
    m = np.asarray(mats, dtype=float)
    na, nb = _marginal_nu(m)
    joint = symplectic_eigenvalues_batch(m)
    return (
        _entropy_terms(na, tol)
        + _entropy_terms(nb, tol)
        - _entropy_terms(joint, tol).sum(axis=-1)
    )


def mutual_information(cov: CovLike, tol: float = PHYSICAL_TOL) -> float:
    """Quantum mutual information ``S(rho_p) + S(rho_c) - S(rho)`` in bits."""
    cov = as_covariance(cov)
    s_p = von_neumann_entropy([np.sqrt(np.linalg.det(cov.block("probe")))], tol)
    s_c = von_neumann_entropy([np.sqrt(np.linalg.det(cov.block("conjugate")))], tol)
    s_pc = von_neumann_entropy(symplectic_eigenvalues(cov), tol)
    return s_p + s_c - s_pc


def inseparability(cov: CovLike) -> float:
    """Sum of the X- and Y+ variances; below 2 certifies entanglement."""
    v = as_covariance(cov).entries
    x_minus = 0.5 * (v[0, 0] + v[2, 2] - 2.0 * v[0, 2])
    y_plus = 0.5 * (v[1, 1] + v[3, 3] + 2.0 * v[1, 3])
    return float(x_minus + y_plus)


def inseparability_closed_form(r: float, G: float) -> float:
    """Inseparability of the EPR state after gain ``G`` on one mode."""
    if not r >= 0:
        raise ValueError(f"squeezing parameter must be >= 0, got {r}")
    if not G >= 1:
        raise ValueError(f"gain must be >= 1, got {G}")
    return float(
        (1 + G) * np.cosh(2 * r) - 2 * np.sqrt(G) * np.sinh(2 * r) + (G - 1)
    )


def entanglement_breaking_gain(r: float, xtol: float = 1e-10) -> float:
    """Smallest gain at which the amplified EPR state stops being inseparable.

    Bisection on the closed-form inseparability, which is increasing in G.
    """
    if not r >= 0:
        raise ValueError(f"squeezing parameter must be >= 0, got {r}")
    if r == 0:
        return 1.0
    lo, hi = 1.0, 2.0
    while inseparability_closed_form(r, hi) < 2.0:
        lo, hi = hi, 2.0 * hi
    return float(bisect(lambda g: inseparability_closed_form(r, g) - 2.0, lo, hi, xtol=xtol))


def partial_transpose(cov: CovLike) -> TwoModeCovariance:
    """Momentum reversal on the conjugate (flip sign of the ``Y_c`` row/column)."""
    v = as_covariance(cov).entries
    p = np.array([1.0, 1.0, 1.0, -1.0])
    return TwoModeCovariance(v * np.outer(p, p))
