"""Stieltjes transform of the limiting spectral measure and derived functions.

For a dimension-ratio profile ``c`` (``sum(c) == 1``) the per-mode
transforms ``g_i(z)`` solve

    g_i**2 - (g + z) * g_i - c_i = 0,      g = sum_i g_i,

and ``g`` is the Stieltjes transform of a compactly supported probability
measure.  Right of the support, ``g`` and every ``g_i`` are negative.

Writing ``w = g + z`` each ``g_i`` is an explicit function of ``w``,

    g_i = phi_i(w) = (w - sqrt(w**2 + 4 c_i)) / 2,

so that ``z(w) = w - sum_i phi_i(w)``.  The right edge of the support is
the minimum of ``z(w)`` over ``w > 0``; this parametrisation gives the
edge and the derivatives for arbitrary profiles.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from ._validation import DomainError

__all__ = [
    "RatioProfile",
    "KernelValue",
    "KernelTerms",
    "eval_g",
    "support_edge",
    "eval_f",
    "eval_h",
    "eval_q",
    "eval_g_derivative",
    "kernel_terms",
    "closed_form_g",
    "DomainError",
]

EDGE_MARGIN = 1e-9
_FP_DAMPING = 0.5
_FP_TOL = 1e-13
_FP_MAX_ITER = 10_000


@dataclass(frozen=True)
class RatioProfile:
    """Limiting ratios ``c_i = n_i / sum_j n_j`` of the tensor dimensions."""

    c: tuple

    def __post_init__(self):
        c = tuple(float(x) for x in self.c)
        if len(c) < 3:
            raise ValueError(f"need at least 3 modes, got {len(c)}")
        if any(not x > 0 for x in c):
            raise ValueError("all ratios must be positive")
        if abs(sum(c) - 1.0) > 1e-12:
            raise ValueError(f"ratios must sum to 1, got {sum(c)!r}")
        object.__setattr__(self, "c", c)

    @classmethod
    def equal(cls, d: int) -> "RatioProfile":
        return cls((1.0 / d,) * d)

    @classmethod
    def from_dims(cls, dims) -> "RatioProfile":
        dims = [int(n) for n in dims]
        total = sum(dims)
        if len(set(dims)) == 1:
            return cls.equal(len(dims))
        c = [n / total for n in dims[:-1]]
        return cls((*c, 1.0 - sum(c)))

    @property
    def d(self) -> int:
        return len(self.c)

    @cached_property
    def is_equal(self) -> bool:
        return all(abs(x - 1.0 / self.d) <= 1e-15 for x in self.c)

    @cached_property
    def edge(self) -> float:
        return support_edge(self)


@dataclass(frozen=True)
class KernelValue:
    z: float
    g: float
    g_per_mode: tuple


@dataclass(frozen=True)
class KernelTerms:
    """Values and z-derivatives of ``g`` and every ``g_i`` at one point."""

    z: float
    g: float
    g_modes: np.ndarray
    dg: float
    dg_modes: np.ndarray


def _phi(w, c):
    return 0.5 * (w - np.sqrt(w * w + 4.0 * c))


def _dphi(w, c):
    return 0.5 * (1.0 - w / np.sqrt(w * w + 4.0 * c))


def _z_of_w(w, c):
    return w - float(np.sum(_phi(w, c)))


def closed_form_g(z: float, d: int) -> float:
    """Closed-form transform for equal ratios ``c_i = 1/d``."""
    disc = z * z - 4.0 * (d - 1) / d
    if disc < 0:
        raise DomainError(f"z={z} lies inside the support")
    return (-z * d + d * np.sqrt(disc)) / (2.0 * (d - 1))


def support_edge(profile: RatioProfile) -> float:
    """Right edge of the support of the limiting measure.

    Equal ratios give ``2 sqrt((d-1)/d)``.  Otherwise the edge is the
    minimum of ``z(w)``, located by solving ``sum_i phi_i'(w) = 1``.
    """
    if profile.is_equal:
        d = profile.d
        return 2.0 * np.sqrt((d - 1) / d)
    c = np.asarray(profile.c)

    def slope(w):
        return 1.0 - float(np.sum(_dphi(w, c)))

    hi = 1.0
    while slope(hi) <= 0:
        hi *= 2.0
    w_star = brentq(slope, 1e-12, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return _z_of_w(w_star, c)


def _check_domain(z: float, profile: RatioProfile) -> float:
    z = float(z)
    if not z >= profile.edge + EDGE_MARGIN:
        raise DomainError(
            f"z={z!r} is not right of the support edge {profile.edge:.10f} (+{EDGE_MARGIN:g})"
        )
    return z


def _solve_w_bracketed(z: float, c: np.ndarray) -> float:
    # physical branch: z(w) increasing for w beyond the edge point
    def slope(w):
        return 1.0 - float(np.sum(_dphi(w, c)))

    hi = 1.0
    while slope(hi) <= 0:
        hi *= 2.0
    w_star = brentq(slope, 1e-12, hi, xtol=1e-15)
    upper = max(2.0 * abs(z), w_star + 1.0)
    while _z_of_w(upper, c) < z:
        upper *= 2.0
    return brentq(lambda w: _z_of_w(w, c) - z, w_star, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def _fixed_point_g(z: float, c: np.ndarray) -> float:
    """Damped fixed-point iteration on ``g``, polished by scalar Newton."""
    g = -1.0 / z
    for _ in range(_FP_MAX_ITER):
        g_new = float(np.sum(_phi(g + z, c)))
        g_next = (1.0 - _FP_DAMPING) * g + _FP_DAMPING * g_new
        if abs(g_next - g) <= _FP_TOL:
            g = g_next
            break
        g = g_next
    for _ in range(8):
        w = g + z
        resid = float(np.sum(_phi(w, c))) - g
        deriv = float(np.sum(_dphi(w, c))) - 1.0
        if deriv >= 0 or abs(resid) < 1e-16:
            break
        step = resid / deriv
        g -= step
        if abs(step) < 1e-16:
            break
    resid = float(np.sum(_phi(g + z, c))) - g
    if not np.isfinite(g) or abs(resid) > 1e-11 or g >= 0:
        g = _solve_w_bracketed(z, c) - z
    return g


def _newton_w_g(z: float, c: np.ndarray) -> float:
    """Newton on ``z(w) = z`` started at ``w = z``.

    ``z(w)`` is convex and ``z(w) > w``, so the iterates decrease
    monotonically to the physical root.
    """
    w = z
    for _ in range(200):
        step = (_z_of_w(w, c) - z) / (1.0 - float(np.sum(_dphi(w, c))))
        w -= step
        if abs(step) <= 1e-15 * max(1.0, abs(w)):
            break
    else:
        w = _solve_w_bracketed(z, c)
    return w - z


def eval_g(z: float, profile: RatioProfile, method: str = "auto") -> KernelValue:
    """Evaluate ``g(z)`` and the per-mode ``g_i(z)`` right of the support.

    Parameters
    ----------
    z : float
        Real point with ``z >= support_edge(profile) + 1e-9``.
    profile : RatioProfile
    method : {"auto", "closed_form", "newton", "fixed_point"}
        ``"auto"`` uses the closed form for equal ratios and ``"newton"``
        otherwise.  ``"fixed_point"`` runs the damped iteration on the
        per-mode quadratics and is kept as an independent check.

    Raises
    ------
    DomainError
        If ``z`` is at or inside the support edge.
    """
    z = _check_domain(z, profile)
    c = np.asarray(profile.c)
    if method == "auto":
        method = "closed_form" if profile.is_equal else "newton"
    if method == "closed_form":
        if not profile.is_equal:
            raise ValueError("closed form only available for equal ratios")
        g = closed_form_g(z, profile.d)
        modes = np.full(profile.d, g / profile.d)
    elif method in ("fixed_point", "newton"):
        g = _fixed_point_g(z, c) if method == "fixed_point" else _newton_w_g(z, c)
        modes = _phi(g + z, c)
        g = float(np.sum(modes))
    else:
        raise ValueError(f"unknown method {method!r}")
    return KernelValue(z=z, g=float(g), g_per_mode=tuple(float(x) for x in modes))


def kernel_terms(z: float, profile: RatioProfile) -> KernelTerms:
    """``g``, ``g_i`` and their first derivatives in ``z``."""
    kv = eval_g(z, profile)
    c = np.asarray(profile.c)
    g_modes = np.asarray(kv.g_per_mode)
    if profile.is_equal:
        d = profile.d
        dg = d * (-1.0 + z / np.sqrt(z * z - 4.0 * (d - 1) / d)) / (2.0 * (d - 1))
        dg_modes = np.full(d, dg / d)
    else:
        w = kv.g + kv.z
        dw = 1.0 / (1.0 - float(np.sum(_dphi(w, c))))
        dg_modes = _dphi(w, c) * dw
        dg = dw - 1.0
    return KernelTerms(z=kv.z, g=kv.g, g_modes=g_modes, dg=float(dg), dg_modes=dg_modes)


def eval_g_derivative(z: float, profile: RatioProfile) -> float:
    """``dg/dz``; closed form for equal ratios, implicit differentiation otherwise."""
    return kernel_terms(z, profile).dg


def eval_f(z: float, profile: RatioProfile) -> float:
    """``f(z) = z + g(z)``."""
    return float(z) + eval_g(z, profile).g


def eval_h(z: float, mode: int, profile: RatioProfile) -> float:
    """``h_i(z) = -c_i / g_i(z)`` for mode ``i`` (0-based)."""
    kv = eval_g(z, profile)
    return -profile.c[mode] / kv.g_per_mode[mode]


def eval_q(z: float, profile: RatioProfile) -> float:
    """``q(z) = z + g(z)/3``, defined for order-3 equal-ratio profiles only."""
    if profile.d != 3 or not profile.is_equal:
        raise ValueError("q is only defined for d=3 with equal ratios")
    return float(z) + eval_g(z, profile).g / 3.0
