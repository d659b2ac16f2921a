"""Limiting singular values and alignments of Hotelling tensor deflation.

Two equation systems are provided:

* the general rank-``r``, order-``d`` system in the unknowns
  ``lambda_j``, ``rho_ijk`` and ``eta_ijk`` (:func:`theorem2_residual`);
* the seven-equation system ``psi`` for two spikes of order three with
  equal dimensions, where every alignment is mode independent
  (:func:`psi_residual`).

Index conventions: ``rho[i, j, k] = lim |<x_{i,k}, u_{j,k}>|`` (signal
``i``, deflation step ``j``, mode ``k``); ``eta[p, k]`` is
``lim |<u_{i,k}, u_{j,k}>|`` for the ``p``-th pair ``i < j`` in
``itertools.combinations`` order.  All indices are 0-based.

The reduced ``psi`` unknowns are ``lam = (lambda1, lambda2, eta)``,
``beta = (beta1, beta2, alpha)`` and ``rho = (rho11, rho12, rho21, rho22)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._validation import DomainError, check_nonnegative, check_unit_interval
from .stieltjes import RatioProfile, kernel_terms

__all__ = [
    "NewtonConfig",
    "NewtonResult",
    "ModelParameters",
    "AsymptoticSolution",
    "newton_solve",
    "theorem2_residual",
    "theorem2_jacobian",
    "theorem2_unknown_count",
    "solve_theorem2",
    "psi_residual",
    "psi_jacobian",
    "solve_first_spike",
    "solve_forward",
    "PSI_EDGE",
    "PSI_PROFILE",
]

PSI_PROFILE = RatioProfile.equal(3)
PSI_EDGE = PSI_PROFILE.edge
LAMBDA_MARGIN = 1e-8
ALIGN_LOW, ALIGN_HIGH = -0.05, 1.05
CLAMP_TOL = 1e-9
ACCEPT_TOL = 1e-9
RHO_FLOOR = 1e-6
_STALL_LIMIT = 10
# smallest step fraction tried is 2**-12; shorter steps almost never rescue a start
_MAX_HALVINGS = 12


@dataclass(frozen=True)
class NewtonConfig:
    """Settings for the multi-start Newton drivers.

    ``jacobian="fd"`` swaps the analytic Jacobian for central finite
    differences.
    """

    tol: float = 1e-12
    max_iter: int = 200
    num_starts: int = 64
    seed: int = 0
    dedupe_tol: float = 1e-6
    jacobian: str = "analytic"

    def __post_init__(self):
        for name in ("tol", "max_iter", "num_starts", "dedupe_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.jacobian not in ("analytic", "fd"):
            raise ValueError("jacobian must be 'analytic' or 'fd'")


@dataclass
class NewtonResult:
    x: np.ndarray
    success: bool
    iterations: int
    residual_norm: float


def _fd_jacobian(fun, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((fun(x + e) - fun(x - e)) / (2 * step))
    return np.column_stack(cols)


def newton_solve(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    jacobian_fn: Callable[[np.ndarray], np.ndarray] | None,
    start,
    cfg: NewtonConfig = NewtonConfig(),
    lower=None,
    upper=None,
) -> NewtonResult:
    """Damped Newton iteration with box constraints.

    Each trial point is projected onto ``[lower, upper]``; the step is
    halved (at most 12 times) until the sum of squared residuals
    decreases.  Runs that stop making progress are abandoned early.
    ``success`` is set iff the final sup-norm is at most ``cfg.tol``.
    ``jacobian_fn=None`` uses central finite differences.
    """
    x = np.array(start, dtype=float)
    n = x.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    if jacobian_fn is None:
        jacobian_fn = lambda y: _fd_jacobian(residual_fn, y)  # noqa: E731
    x = np.clip(x, lower, upper)

    def evaluate(y):
        try:
            r = np.asarray(residual_fn(y), dtype=float)
        except DomainError:
            return None, np.inf, np.inf
        if not np.all(np.isfinite(r)):
            return None, np.inf, np.inf
        sup = float(np.max(np.abs(r))) if r.size else 0.0
        return r, float(r @ r), sup

    # line search on the sum of squares, for which the Newton step is a
    # descent direction; convergence is judged on the sup-norm
    r, sq, norm = evaluate(x)
    it = 0
    stalled = 0
    while norm > cfg.tol and it < cfg.max_iter:
        it += 1
        try:
            jac = jacobian_fn(x)
        except DomainError:
            break
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            break
        t = 1.0
        accepted = False
        for _ in range(_MAX_HALVINGS + 1):
            trial = np.clip(x + t * step, lower, upper)
            r_new, sq_new, n_new = evaluate(trial)
            if sq_new < sq or n_new <= cfg.tol:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        # projected steps that barely move the merit signal a stall
        stalled = stalled + 1 if sq_new > (1.0 - 1e-4) * sq else 0
        x, r, sq, norm = trial, r_new, sq_new, n_new
        if stalled >= _STALL_LIMIT:
            break
    return NewtonResult(x=x, success=bool(norm <= cfg.tol), iterations=it, residual_norm=norm)


# ---------------------------------------------------------------------------
# general (r, d) system


@dataclass(frozen=True)
class ModelParameters:
    """Ground-truth parameters of the rank-``r`` spiked model.

    ``alphas[i, j, k]`` is the limiting alignment between signals ``i``
    and ``j`` in mode ``k``; the diagonal is forced to 1.
    """

    betas: np.ndarray
    alphas: np.ndarray
    profile: RatioProfile

    def __post_init__(self):
        betas = np.atleast_1d(np.asarray(self.betas, dtype=float))
        r, d = betas.size, self.profile.d
        alphas = np.asarray(self.alphas, dtype=float)
        if alphas.ndim == 0:
            alphas = np.full((r, r, d), float(alphas))
        if alphas.shape != (r, r, d):
            raise ValueError(f"alphas must have shape {(r, r, d)}, got {alphas.shape}")
        alphas = alphas.copy()
        for i in range(r):
            alphas[i, i, :] = 1.0
        if np.any(betas < 0):
            raise ValueError("betas must be nonnegative")
        if np.any(alphas < 0) or np.any(alphas > 1):
            raise ValueError("alphas must lie in [0, 1]")
        if not np.allclose(alphas, alphas.transpose(1, 0, 2)):
            raise ValueError("alphas must be symmetric in the signal indices")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)

    @property
    def r(self) -> int:
        return self.betas.size

    @property
    def d(self) -> int:
        return self.profile.d


@dataclass
class AsymptoticSolution:
    """Limits of the deflation outputs.

    ``lambdas`` has shape ``(r,)``, ``rhos`` ``(r, r, d)`` and ``etas``
    ``(r*(r-1)/2, d)``.
    """

    lambdas: np.ndarray
    rhos: np.ndarray
    etas: np.ndarray
    residual_norm: float = float("nan")
    branch_id: int = 0

    def __post_init__(self):
        self.lambdas = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        self.rhos = np.asarray(self.rhos, dtype=float)
        self.etas = np.asarray(self.etas, dtype=float).reshape(-1, self.rhos.shape[-1])

    @classmethod
    def from_vector(cls, x, r: int, d: int, **kw) -> "AsymptoticSolution":
        x = np.asarray(x, dtype=float)
        n_rho = r * r * d
        return cls(
            lambdas=x[:r],
            rhos=x[r : r + n_rho].reshape(r, r, d),
            etas=x[r + n_rho :].reshape(-1, d),
            **kw,
        )

    @classmethod
    def from_psi(cls, lam, rho, **kw) -> "AsymptoticSolution":
        """Embed a mode-symmetric two-spike, order-3 solution."""
        lam1, lam2, eta = lam
        return cls(
            lambdas=[lam1, lam2],
            rhos=np.repeat(np.asarray(rho, dtype=float).reshape(2, 2, 1), 3, axis=2),
            etas=np.full((1, 3), eta),
            **kw,
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.lambdas, self.rhos.ravel(), self.etas.ravel()])

    @property
    def psi_lam(self) -> tuple:
        """``(lambda1, lambda2, eta)`` read from mode 0."""
        return (float(self.lambdas[0]), float(self.lambdas[1]), float(self.etas[0, 0]))

    @property
    def psi_rho(self) -> tuple:
        """``(rho11, rho12, rho21, rho22)`` read from mode 0."""
        return tuple(float(v) for v in self.rhos[:2, :2, 0].ravel())


def theorem2_unknown_count(r: int, d: int) -> int:
    return r + r * r * d + d * r * (r - 1) // 2


@dataclass(frozen=True)
class _Term:
    coef: float
    vars: tuple = ()
    kernel: tuple | None = None  # (kind, lambda index, mode)


def _prod(*factors):
    return tuple(f for f in factors if f is not None)


def _build_theorem2(params: ModelParameters):
    """Equations as sums of monomial terms over the unknown vector.

    Block (c) is written for pairs ``k < j``: with that orientation the
    ``r=2, d=3`` equal-ratio specialisation coincides with ``psi``.
    """
    r, d = params.r, params.d
    betas, alphas = params.betas, params.alphas
    pairs = list(itertools.combinations(range(r), 2))
    pair_index = {p: n for n, p in enumerate(pairs)}

    def lam(j):
        return j

    def rho(i, j, k):
        return r + (i * r + j) * d + k

    def eta(i, j, k):
        # None stands for the constant eta_iik = 1
        if i == j:
            return None
        a, b = min(i, j), max(i, j)
        return r + r * r * d + pair_index[(a, b)] * d + k

    eqs = []
    for j in range(r):  # (a)
        terms = [_Term(1.0, (), ("f", j, 0))]
        for i in range(j):
            terms.append(_Term(1.0, _prod(lam(i), *(eta(i, j, k) for k in range(d)))))
        for i in range(r):
            terms.append(_Term(-betas[i], tuple(rho(i, j, k) for k in range(d))))
        eqs.append(terms)
    for j in range(r):  # (b)
        for k in range(r):
            for ell in range(d):
                others = [m for m in range(d) if m != ell]
                terms = [_Term(1.0, (rho(k, j, ell),), ("h", j, ell))]
                for i in range(j):
                    terms.append(
                        _Term(1.0, _prod(lam(i), rho(k, i, ell), *(eta(i, j, m) for m in others)))
                    )
                for i in range(r):
                    if alphas[i, k, ell] != 0.0:
                        terms.append(
                            _Term(-betas[i] * alphas[i, k, ell], tuple(rho(i, j, m) for m in others))
                        )
                eqs.append(terms)
    for k, j in pairs:  # (c)
        for ell in range(d):
            others = [m for m in range(d) if m != ell]
            terms = [
                _Term(1.0, (eta(k, j, ell),), ("h", j, ell)),
                _Term(1.0, tuple(eta(k, j, m) for m in others), ("g", k, ell)),
            ]
            for i in range(j):
                terms.append(
                    _Term(1.0, _prod(lam(i), eta(i, k, ell), *(eta(i, j, m) for m in others)))
                )
            for i in range(r):
                terms.append(
                    _Term(-betas[i], (rho(i, k, ell),) + tuple(rho(i, j, m) for m in others))
                )
            eqs.append(terms)
    return eqs


def _kernel_table(lambdas, profile):
    """Per-lambda values and derivatives of f, h_l and g_l."""
    table = []
    c = np.asarray(profile.c)
    for z in lambdas:
        kt = kernel_terms(z, profile)
        table.append(
            {
                "f": (np.full(profile.d, z + kt.g), np.full(profile.d, 1.0 + kt.dg)),
                "h": (-c / kt.g_modes, c * kt.dg_modes / kt.g_modes**2),
                "g": (kt.g_modes, kt.dg_modes),
            }
        )
    return table


def _eval_system(eqs, x, lambdas_idx, profile, with_jac):
    x = np.asarray(x, dtype=float)
    table = _kernel_table(x[lambdas_idx], profile)
    res = np.zeros(len(eqs))
    jac = np.zeros((len(eqs), x.size)) if with_jac else None
    for e, terms in enumerate(eqs):
        for t in terms:
            vals = x[list(t.vars)] if t.vars else np.empty(0)
            mono = float(np.prod(vals)) if t.vars else 1.0
            kval = 1.0
            if t.kernel is not None:
                kind, li, mode = t.kernel
                kval = table[li][kind][0][mode]
            res[e] += t.coef * kval * mono
            if not with_jac:
                continue
            for pos, v in enumerate(t.vars):
                others = np.delete(vals, pos)
                jac[e, v] += t.coef * kval * float(np.prod(others))
            if t.kernel is not None:
                jac[e, lambdas_idx[li]] += t.coef * table[li][kind][1][mode] * mono
    return res, jac


def _check_lambdas(lambdas, profile):
    edge = profile.edge
    for z in np.atleast_1d(lambdas):
        if not z > edge:
            raise DomainError(f"lambda={z!r} is not right of the support edge {edge:.10f}")


def theorem2_residual(params: ModelParameters, candidate: AsymptoticSolution) -> np.ndarray:
    """Residual of the general rank-``r`` system.

    Components, in order: ``r`` singular-value equations (one per step
    ``j``); ``d*r*r`` signal-alignment equations ordered by step ``j``,
    signal ``k``, mode ``l``; ``d*r*(r-1)/2`` step-alignment equations
    ordered by pair ``(k, j)`` with ``k < j``, then mode ``l``.
    """
    _check_lambdas(candidate.lambdas, params.profile)
    eqs = _build_theorem2(params)
    res, _ = _eval_system(eqs, candidate.to_vector(), np.arange(params.r), params.profile, False)
    return res


def theorem2_jacobian(params: ModelParameters, candidate: AsymptoticSolution) -> np.ndarray:
    """Jacobian of :func:`theorem2_residual` in the unknown vector
    ``(lambdas, rhos.ravel(), etas.ravel())``."""
    _check_lambdas(candidate.lambdas, params.profile)
    eqs = _build_theorem2(params)
    _, jac = _eval_system(eqs, candidate.to_vector(), np.arange(params.r), params.profile, True)
    return jac


# ---------------------------------------------------------------------------
# reduced two-spike system


def _psi_kernel(z):
    """``(f, f', h, h', q, q')`` at ``z`` from the d=3 equal-ratio closed form
    ``g = (-3z + 3 sqrt(z^2 - 8/3)) / 4``."""
    disc = z * z - 8.0 / 3.0
    if not disc > 0:
        raise DomainError(f"lambda={z!r} is not above 2*sqrt(2/3)={PSI_EDGE:.10f}")
    root = math.sqrt(disc)
    g = 0.75 * (root - z)
    dg = 0.75 * (z / root - 1.0)
    return z + g, 1.0 + dg, -1.0 / g, dg / (g * g), z + g / 3.0, 1.0 + dg / 3.0


def psi_residual(lam, beta, rho) -> np.ndarray:
    """The seven-component ``psi`` map.

    Parameters
    ----------
    lam : (lambda1, lambda2, eta)
    beta : (beta1, beta2, alpha)
    rho : (rho11, rho12, rho21, rho22)
    """
    l1, l2, eta = map(float, lam)
    b1, b2, a = map(float, beta)
    r11, r12, r21, r22 = map(float, rho)
    f1, _, h1, _, q1, _ = _psi_kernel(l1)
    f2, _, h2, _, _, _ = _psi_kernel(l2)
    return np.array(
        [
            f1 - b1 * r11**3 - b2 * r21**3,
            h1 * r11 - b1 * r11**2 - b2 * a * r21**2,
            h1 * r21 - b1 * a * r11**2 - b2 * r21**2,
            f2 + l1 * eta**3 - b1 * r12**3 - b2 * r22**3,
            h2 * r12 + l1 * r11 * eta**2 - b1 * r12**2 - b2 * a * r22**2,
            h2 * r22 + l1 * r21 * eta**2 - b1 * a * r12**2 - b2 * r22**2,
            h2 * eta + q1 * eta**2 - b1 * r11 * r12**2 - b2 * r21 * r22**2,
        ]
    )


# column order of psi_jacobian
PSI_VARS = ("lambda1", "lambda2", "eta", "beta1", "beta2", "alpha", "rho11", "rho12", "rho21", "rho22")


def psi_jacobian(lam, beta, rho) -> np.ndarray:
    """7 x 10 Jacobian of ``psi`` in the variables listed in ``PSI_VARS``."""
    l1, l2, eta = map(float, lam)
    b1, b2, a = map(float, beta)
    r11, r12, r21, r22 = map(float, rho)
    _, df1, h1, dh1, q1, dq1 = _psi_kernel(l1)
    _, df2, h2, dh2, _, _ = _psi_kernel(l2)
    L1, L2, E, B1, B2, A, R11, R12, R21, R22 = range(10)
    J = np.zeros((7, 10))

    J[0, [L1, B1, B2, R11, R21]] = [df1, -(r11**3), -(r21**3), -3 * b1 * r11**2, -3 * b2 * r21**2]

    J[1, [L1, B1, B2, A]] = [dh1 * r11, -(r11**2), -a * r21**2, -b2 * r21**2]
    J[1, [R11, R21]] = [h1 - 2 * b1 * r11, -2 * b2 * a * r21]

    J[2, [L1, B1, B2, A]] = [dh1 * r21, -a * r11**2, -(r21**2), -b1 * r11**2]
    J[2, [R11, R21]] = [-2 * b1 * a * r11, h1 - 2 * b2 * r21]

    J[3, [L1, L2, E, B1, B2]] = [eta**3, df2, 3 * l1 * eta**2, -(r12**3), -(r22**3)]
    J[3, [R12, R22]] = [-3 * b1 * r12**2, -3 * b2 * r22**2]

    J[4, [L1, L2, E, B1, B2, A]] = [
        r11 * eta**2, dh2 * r12, 2 * l1 * r11 * eta, -(r12**2), -a * r22**2, -b2 * r22**2,
    ]
    J[4, [R11, R12, R22]] = [l1 * eta**2, h2 - 2 * b1 * r12, -2 * b2 * a * r22]

    J[5, [L1, L2, E, B1, B2, A]] = [
        r21 * eta**2, dh2 * r22, 2 * l1 * r21 * eta, -a * r12**2, -(r22**2), -b1 * r12**2,
    ]
    J[5, [R21, R12, R22]] = [l1 * eta**2, -2 * b1 * a * r12, h2 - 2 * b2 * r22]

    J[6, [L1, L2, E, B1, B2]] = [dq1 * eta**2, dh2 * eta, h2 + 2 * q1 * eta, -r11 * r12**2, -r21 * r22**2]
    J[6, [R11, R12, R21, R22]] = [-b1 * r12**2, -2 * b1 * r11 * r12, -b2 * r22**2, -2 * b2 * r21 * r22]
    return J


# ---------------------------------------------------------------------------
# multi-start drivers


def _lambda_starts(n, beta_max, edge, rng):
    hi = max(beta_max + 2.0, edge + 0.1)
    grid = np.geomspace(edge + 0.05, hi, n)
    return rng.permutation(grid)


def _dedupe(points, tol):
    kept = []
    for p in points:
        if all(np.max(np.abs(p - q)) > tol for q in kept):
            kept.append(p)
    return kept


def _snap_unit(x, idx):
    """Clamp entries ``idx`` into [0, 1] if within ``CLAMP_TOL``; None if outside."""
    x = x.copy()
    v = x[idx]
    if np.any(v < -CLAMP_TOL) or np.any(v > 1 + CLAMP_TOL):
        return None
    x[idx] = np.clip(v, 0.0, 1.0)
    return x


def _first_spike_funcs(beta):
    b1, b2, a = beta

    def fun(y):
        lam1, r11, r21 = y
        return psi_residual((lam1, lam1, 0.0), beta, (r11, 0.0, r21, 0.0))[:3]

    def jac(y):
        lam1, r11, r21 = y
        J = psi_jacobian((lam1, lam1, 0.0), beta, (r11, 0.0, r21, 0.0))
        # lambda2 shares the value of lambda1 here but rows 0-2 never use it
        return J[:3][:, [0, 6, 8]]

    return fun, jac


def _check_beta(beta):
    b1, b2, a = beta
    check_nonnegative("beta1", b1)
    check_nonnegative("beta2", b2)
    check_unit_interval("alpha", a)
    return float(b1), float(b2), float(a)


def solve_first_spike(beta, cfg: NewtonConfig = NewtonConfig()) -> list[tuple[float, float, float]]:
    """All admissible roots ``(lambda1, rho11, rho21)`` of the first three
    ``psi`` equations, sorted by ``lambda1`` descending.

    An empty list means no admissible root was found, i.e. the dominant
    component is undetectable at these parameters.
    """
    beta = _check_beta(beta)
    fun, jac = _first_spike_funcs(beta)
    if cfg.jacobian == "fd":
        jac = None
    rng = np.random.default_rng(cfg.seed)
    lams = _lambda_starts(cfg.num_starts, max(beta[:2]), PSI_EDGE, rng)
    lower = [PSI_EDGE + LAMBDA_MARGIN, ALIGN_LOW, ALIGN_LOW]
    upper = [np.inf, ALIGN_HIGH, ALIGN_HIGH]
    found = []
    for lam0 in lams:
        start = [lam0, *rng.uniform(0.05, 0.95, size=2)]
        res = newton_solve(fun, jac, start, cfg, lower, upper)
        if not res.success:
            continue
        x = _snap_unit(res.x, [1, 2])
        if x is None or not x[0] > PSI_EDGE:
            continue
        if np.max(np.abs(fun(x))) > ACCEPT_TOL:
            continue
        if max(x[1], x[2]) <= RHO_FLOOR:
            continue
        found.append(x)
    roots = _dedupe(found, cfg.dedupe_tol)
    roots.sort(key=lambda p: (-round(p[0], 9), -p[1]))
    return [tuple(float(v) for v in p) for p in roots]


def _second_stage_funcs(beta, first):
    lam1, r11, r21 = first

    def fun(y):
        lam2, eta, r12, r22 = y
        return psi_residual((lam1, lam2, eta), beta, (r11, r12, r21, r22))[3:]

    def jac(y):
        lam2, eta, r12, r22 = y
        J = psi_jacobian((lam1, lam2, eta), beta, (r11, r12, r21, r22))
        return J[3:][:, [1, 2, 7, 9]]

    return fun, jac


def _full_forward_funcs(beta):
    def fun(y):
        l1, l2, eta, r11, r12, r21, r22 = y
        return psi_residual((l1, l2, eta), beta, (r11, r12, r21, r22))

    def jac(y):
        l1, l2, eta, r11, r12, r21, r22 = y
        J = psi_jacobian((l1, l2, eta), beta, (r11, r12, r21, r22))
        return J[:, [0, 1, 2, 6, 7, 8, 9]]

    return fun, jac


def solve_forward(beta, cfg: NewtonConfig = NewtonConfig()) -> list[AsymptoticSolution]:
    """All admissible roots of the seven ``psi`` equations at ``beta``.

    Roots of the decoupled first-spike subsystem are found first; for
    each, the remaining four unknowns are solved by multi-start Newton
    and the full seven-unknown point is polished and re-verified.
    Solutions are sorted by ``(lambda1, lambda2)`` descending and numbered
    by ``branch_id`` in that order.
    """
    beta = _check_beta(beta)
    fun7, jac7 = _full_forward_funcs(beta)
    if cfg.jacobian == "fd":
        jac7 = None
    rng = np.random.default_rng([cfg.seed, 1])
    lower = [PSI_EDGE + LAMBDA_MARGIN, ALIGN_LOW, ALIGN_LOW, ALIGN_LOW]
    upper = [np.inf, ALIGN_HIGH, ALIGN_HIGH, ALIGN_HIGH]
    lower7 = [PSI_EDGE + LAMBDA_MARGIN] * 2 + [ALIGN_LOW] * 5
    upper7 = [np.inf] * 2 + [ALIGN_HIGH] * 5
    found = []
    for first in solve_first_spike(beta, cfg):
        fun, jac = _second_stage_funcs(beta, first)
        if cfg.jacobian == "fd":
            jac = None
        lams = _lambda_starts(cfg.num_starts, max(beta[:2]), PSI_EDGE, rng)
        seen = []
        for lam0 in lams:
            start = [lam0, *rng.uniform(0.05, 0.95, size=3)]
            res = newton_solve(fun, jac, start, cfg, lower, upper)
            if not res.success:
                continue
            # many starts land on the same stage-two root; polish each once
            if any(np.max(np.abs(res.x - y)) <= cfg.dedupe_tol for y in seen):
                continue
            seen.append(res.x)
            lam2, eta, r12, r22 = res.x
            x = np.array([first[0], lam2, eta, first[1], r12, first[2], r22])
            res7 = newton_solve(fun7, jac7, x, cfg, lower7, upper7)
            x = _snap_unit(res7.x, [2, 3, 4, 5, 6])
            if x is None or not min(x[0], x[1]) > PSI_EDGE:
                continue
            if np.max(np.abs(fun7(x))) > ACCEPT_TOL:
                continue
            if max(x[4], x[6]) <= RHO_FLOOR:
                continue
            found.append(x)
    roots = _dedupe(found, cfg.dedupe_tol)
    roots.sort(key=lambda p: (-round(p[0], 9), -round(p[1], 9), -p[3], -p[4]))
    out = []
    for n, x in enumerate(roots):
        l1, l2, eta, r11, r12, r21, r22 = x
        out.append(
            AsymptoticSolution.from_psi(
                (l1, l2, eta),
                (r11, r12, r21, r22),
                residual_norm=float(np.max(np.abs(fun7(x)))),
                branch_id=n,
            )
        )
    return out


def solve_theorem2(params: ModelParameters, cfg: NewtonConfig = NewtonConfig()) -> list[AsymptoticSolution]:
    """Multi-start Newton on the general system; admissible roots only.

    Intended for ``r <= 3`` and ``d <= 4``.  Roots are sorted by their
    ``lambdas`` in descending lexicographic order.
    """
    r, d, profile = params.r, params.d, params.profile
    eqs = _build_theorem2(params)
    n = theorem2_unknown_count(r, d)
    lam_idx = np.arange(r)

    def fun(x):
        _check_lambdas(x[:r], profile)
        return _eval_system(eqs, x, lam_idx, profile, False)[0]

    def analytic_jac(x):
        return _eval_system(eqs, x, lam_idx, profile, True)[1]

    jac = None if cfg.jacobian == "fd" else analytic_jac
    rng = np.random.default_rng(cfg.seed)
    edge = profile.edge
    lower = np.r_[np.full(r, edge + LAMBDA_MARGIN), np.full(n - r, ALIGN_LOW)]
    upper = np.r_[np.full(r, np.inf), np.full(n - r, ALIGN_HIGH)]
    beta_max = float(np.max(params.betas)) if r else 0.0
    found = []
    for _ in range(cfg.num_starts):
        lam0 = rng.uniform(edge + 0.05, max(beta_max + 2.0, edge + 0.1), size=r)
        start = np.r_[lam0, rng.uniform(0.05, 0.95, size=n - r)]
        res = newton_solve(fun, jac, start, cfg, lower, upper)
        if not res.success:
            continue
        x = _snap_unit(res.x, np.arange(r, n))
        if x is None or not np.all(x[:r] > edge):
            continue
        if np.max(np.abs(fun(x))) > ACCEPT_TOL:
            continue
        found.append(x)
    roots = _dedupe(found, cfg.dedupe_tol)
    roots.sort(key=lambda p: tuple(-p[:r]))
    out = []
    for k, x in enumerate(roots):
        out.append(
            AsymptoticSolution.from_vector(
                x, r, d, residual_norm=float(np.max(np.abs(fun(x)))), branch_id=k
            )
        )
    return out
