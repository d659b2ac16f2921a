"""Consistent SNR estimation by inverting the two-spike ``psi`` system."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import DomainError
from .asymptotics import (
    ALIGN_HIGH,
    ALIGN_LOW,
    PSI_EDGE,
    NewtonConfig,
    _dedupe,
    _snap_unit,
    newton_solve,
    psi_jacobian,
    psi_residual,
)
from .deflation import DeflationRecord, HotellingDeflation
from .stieltjes import closed_form_g

__all__ = [
    "MeasuredTriple",
    "SnrEstimate",
    "NoRootError",
    "estimate_snr",
    "naive_estimate",
    "measure_triple_from_deflation",
    "SNREstimator",
    "ESTIMATE_MARGIN",
]

ESTIMATE_MARGIN = 1e-6
_ALPHA_STARTS = (0.0, 0.25, 0.5, 0.75)
_BETA_SCALES = (0.5, 1.0, 1.5)
_RESIDUAL_TIE = 1e-10


class NoRootError(RuntimeError):
    """The inverse system has no admissible root for the measured triple."""


@dataclass(frozen=True)
class MeasuredTriple:
    """``(lambda1_hat, lambda2_hat, eta_hat)`` from a two-step deflation.

    ``eta_per_mode`` optionally keeps the per-mode ``|<u_1, u_2>|`` that
    were averaged into ``eta_hat``.
    """

    lambda1_hat: float
    lambda2_hat: float
    eta_hat: float
    eta_per_mode: tuple | None = None

    def __post_init__(self):
        for name in ("lambda1_hat", "lambda2_hat", "eta_hat"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not 0.0 <= self.eta_hat <= 1.0:
            raise ValueError(f"eta_hat must lie in [0, 1], got {self.eta_hat}")

    def as_lam(self) -> tuple:
        return (self.lambda1_hat, self.lambda2_hat, self.eta_hat)


@dataclass(frozen=True)
class SnrEstimate:
    beta1_hat: float
    beta2_hat: float
    alpha_hat: float
    rho_hat: tuple
    residual_norm: float
    is_primary: bool = False


def naive_estimate(m: MeasuredTriple) -> tuple:
    """The baseline that reads the singular values as SNRs."""
    return (m.lambda1_hat, m.lambda2_hat)


def measure_triple_from_deflation(record: DeflationRecord) -> MeasuredTriple:
    """Singular values of the first two steps and the mode-averaged
    ``|<u_{1,k}, u_{2,k}>|``."""
    if len(record.steps) < 2:
        raise ValueError("need a deflation record with at least two steps")
    u1, u2 = record.steps[0].vectors, record.steps[1].vectors
    per_mode = tuple(min(1.0, abs(float(a @ b))) for a, b in zip(u1, u2))
    return MeasuredTriple(
        record.steps[0].lam, record.steps[1].lam, float(np.mean(per_mode)), eta_per_mode=per_mode
    )


def _canonical(x, tol):
    """Order a root so that ``beta1 >= beta2``.

    ``psi`` is invariant under swapping the two signals together with
    their alignment rows, so only the ordered pair is identifiable.
    """
    b1, b2 = x[0], x[1]
    swapped = x[[1, 0, 2, 5, 6, 3, 4]]
    if b1 < b2 - tol or (abs(b1 - b2) <= tol and x[3] < x[5]):
        return swapped
    return x


def estimate_snr(m: MeasuredTriple, cfg: NewtonConfig = NewtonConfig()) -> list[SnrEstimate]:
    """Solve ``psi(lam_hat, beta, rho) = 0`` for ``beta = (beta1, beta2, alpha)``
    and ``rho``.

    Returns every admissible root, primary first.  Roots are reported with
    ``beta1_hat >= beta2_hat``.  The primary root has the smallest residual
    (ties within 1e-10 broken by the largest ``beta1_hat``).

    Raises
    ------
    DomainError
        If either singular value is not above ``2 sqrt(2/3) + 1e-6``.
    NoRootError
        If no start converges to an admissible root.
    """
    lam = m.as_lam()
    for name, z in (("lambda1_hat", lam[0]), ("lambda2_hat", lam[1])):
        if not z > PSI_EDGE + ESTIMATE_MARGIN:
            raise DomainError(
                f"{name}={z:.6g} must exceed 2*sqrt(2/3)={PSI_EDGE:.7f}; "
                "the inverse system has no admissible solution there"
            )

    def fun(y):
        return psi_residual(lam, y[:3], y[3:])

    def jac(y):
        return psi_jacobian(lam, y[:3], y[3:])[:, 3:]

    jac_fn = None if cfg.jacobian == "fd" else jac
    f1 = lam[0] + closed_form_g(lam[0], 3)
    f2 = lam[1] + closed_form_g(lam[1], 3)
    rng = np.random.default_rng(cfg.seed)
    per_combo = math.ceil(cfg.num_starts / (len(_ALPHA_STARTS) * len(_BETA_SCALES)))
    lower = [0.0, 0.0] + [ALIGN_LOW] * 5
    upper = [np.inf, np.inf] + [ALIGN_HIGH] * 5
    found = []
    for a0 in _ALPHA_STARTS:
        for scale in _BETA_SCALES:
            for _ in range(per_combo):
                start = [scale * f1, scale * f2, a0, *rng.uniform(0.05, 0.95, size=4)]
                res = newton_solve(fun, jac_fn, start, cfg, lower, upper)
                if not res.success:
                    continue
                x = _snap_unit(res.x, [2, 3, 4, 5, 6])
                if x is None or x[0] < 0 or x[1] < 0:
                    continue
                if np.max(np.abs(fun(x))) > 1e-9:
                    continue
                found.append(_canonical(x, cfg.dedupe_tol))
    roots = _dedupe(found, cfg.dedupe_tol)
    if not roots:
        raise NoRootError(f"no admissible root of psi for measured triple {lam}")
    scored = [(float(np.max(np.abs(fun(x)))), x) for x in roots]
    best = min(s for s, _ in scored)
    scored.sort(key=lambda sx: (sx[0] > best + _RESIDUAL_TIE, -sx[1][0], -sx[1][2]))
    return [
        SnrEstimate(
            beta1_hat=float(x[0]),
            beta2_hat=float(x[1]),
            alpha_hat=float(x[2]),
            rho_hat=tuple(float(v) for v in x[3:]),
            residual_norm=s,
            is_primary=(k == 0),
        )
        for k, (s, x) in enumerate(scored)
    ]


class SNREstimator(BaseEstimator):
    """Estimate the SNRs of a two-spike order-3 tensor.

    ``fit`` runs a two-step :class:`HotellingDeflation`, measures
    ``(lambda1_hat, lambda2_hat, eta_hat)`` and inverts ``psi``.

    Parameters
    ----------
    tol, max_iter : float, int
        Power-iteration settings for the deflation.
    num_starts : int, default=64
        Newton starts for the inverse solve.
    random_state : int, default=0

    Attributes
    ----------
    beta_ : ndarray of shape (2,)
        ``(beta1_hat, beta2_hat)`` with ``beta1_hat >= beta2_hat``.
    alpha_ : float
    rho_ : ndarray of shape (4,)
        ``(rho11, rho12, rho21, rho22)`` estimates.
    naive_beta_ : ndarray of shape (2,)
    triple_ : MeasuredTriple
    estimates_ : list of SnrEstimate
        All admissible roots, primary first.
    deflation_ : HotellingDeflation
    """

    def __init__(self, tol=1e-10, max_iter=500, num_starts=64, random_state=0):
        self.tol = tol
        self.max_iter = max_iter
        self.num_starts = num_starts
        self.random_state = random_state

    def _run(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or len(set(X.shape)) != 1:
            raise ValueError(f"expected a cubical order-3 tensor, got shape {X.shape}")
        deflation = HotellingDeflation(n_components=2, tol=self.tol, max_iter=self.max_iter).fit(X)
        triple = measure_triple_from_deflation(deflation.record_)
        cfg = NewtonConfig(num_starts=self.num_starts, seed=self.random_state or 0)
        return deflation, triple, estimate_snr(triple, cfg)

    def fit(self, X, y=None):
        self.deflation_, self.triple_, self.estimates_ = self._run(X)
        best = self.estimates_[0]
        self.beta_ = np.array([best.beta1_hat, best.beta2_hat])
        self.alpha_ = best.alpha_hat
        self.rho_ = np.array(best.rho_hat)
        self.naive_beta_ = np.array(naive_estimate(self.triple_))
        return self

    def predict(self, X):
        """Primary ``(beta1_hat, beta2_hat, alpha_hat)`` for each tensor.

        ``X`` is one order-3 tensor or a sequence of them; returns an
        array of shape ``(n_tensors, 3)``.
        """
        X = np.asarray(X, dtype=float)
        batch = X[None] if X.ndim == 3 else X
        out = []
        for T in batch:
            best = self._run(T)[2][0]
            out.append([best.beta1_hat, best.beta2_hat, best.alpha_hat])
        return np.array(out)
