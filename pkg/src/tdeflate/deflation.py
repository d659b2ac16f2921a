"""Rank-one approximation by alternating power iteration and Hotelling deflation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ._validation import check_tensor, check_vectors
from .tensor import axpy_rank_one, contract_all_but_mode, frobenius_norm, full_contract, mode_unfold

__all__ = [
    "PowerIterationConfig",
    "RankOneCritical",
    "DeflationRecord",
    "AlignmentTable",
    "ConvergenceError",
    "rank_one_approx",
    "tensor_svd_init",
    "kkt_residual",
    "deflate",
    "measure_alignments",
    "HotellingDeflation",
]

INIT_METHODS = ("tensor_svd", "given_tuple", "random_seeded")


@dataclass(frozen=True)
class PowerIterationConfig:
    """Settings for :func:`rank_one_approx`.

    ``tol`` bounds both the change in the singular value between sweeps
    and ``1 - |<u_new, u_old>|`` in every mode.  A run also has to reach
    a KKT residual of at most ``kkt_rtol * ||T||_F`` to count as
    converged.
    """

    tol: float = 1e-10
    max_iter: int = 500
    init: str = "tensor_svd"
    init_tuple: tuple | None = None
    seed: int | None = None
    kkt_rtol: float = 1e-8

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.init not in INIT_METHODS:
            raise ValueError(f"init must be one of {INIT_METHODS}, got {self.init!r}")
        if self.init == "given_tuple" and self.init_tuple is None:
            raise ValueError("init='given_tuple' requires init_tuple")


@dataclass
class RankOneCritical:
    """A critical point ``(lambda, u_0, ..., u_{d-1})`` of the rank-one fit."""

    lam: float
    vectors: list
    kkt_residual: float
    iterations: int
    converged: bool = True


@dataclass
class DeflationRecord:
    steps: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    initial_norm: float = 0.0
    residual: np.ndarray | None = None

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([s.lam for s in self.steps])

    @property
    def converged(self) -> list:
        return [s.converged for s in self.steps]


@dataclass
class AlignmentTable:
    """Alignments of deflation outputs against each other and the truth.

    ``rho[i, j, k] = |<x_{i,k}, u_{j,k}>|`` for signal ``i`` and step
    ``j``; ``eta[i, j, k] = |<u_{i,k}, u_{j,k}>|`` between steps.  The
    ``*_signed`` arrays keep the signs.
    """

    rho_signed: np.ndarray
    eta_signed: np.ndarray

    @property
    def rho(self) -> np.ndarray:
        return np.abs(self.rho_signed)

    @property
    def eta(self) -> np.ndarray:
        return np.abs(self.eta_signed)


class ConvergenceError(RuntimeError):
    """Power iteration stopped at ``max_iter`` without converging.

    The last iterate is attached as ``result`` and, inside
    :func:`deflate`, the failing step index as ``step``.
    """

    def __init__(self, message, result: RankOneCritical, step: int | None = None):
        super().__init__(message)
        self.result = result
        self.step = step


def kkt_residual(t, lam: float, vectors: Sequence) -> float:
    """``max_j || T(u_0, .., ., .., u_{d-1}) - lam * u_j ||_2``."""
    return max(
        float(np.linalg.norm(contract_all_but_mode(t, vectors, j) - lam * vectors[j]))
        for j in range(len(vectors))
    )


def _sign_fix(v: np.ndarray) -> np.ndarray:
    return -v if v[np.argmax(np.abs(v))] < 0 else v


def tensor_svd_init(t) -> list:
    """Leading left singular vector of every mode unfolding.

    Each vector is sign-fixed so that its largest-magnitude entry is
    positive.
    """
    t = check_tensor(t)
    if not np.any(t):
        raise ValueError("cannot initialise from the zero tensor")
    out = []
    for j in range(t.ndim):
        m = mode_unfold(t, j)
        # n_j x n_j Gram matrix is far smaller than the unfolding
        _, vecs = np.linalg.eigh(m @ m.T)
        v = vecs[:, -1]
        out.append(_sign_fix(v / np.linalg.norm(v)))
    return out


def _initial_vectors(t, cfg: PowerIterationConfig) -> list:
    if cfg.init == "tensor_svd":
        return tensor_svd_init(t)
    if cfg.init == "given_tuple":
        vecs = check_vectors(cfg.init_tuple, t.shape)
        return [v / np.linalg.norm(v) for v in vecs]
    rng = np.random.default_rng(cfg.seed)
    return [_unit(rng.standard_normal(n)) for n in t.shape]


def _unit(v):
    return v / np.linalg.norm(v)


def rank_one_approx(
    t, cfg: PowerIterationConfig = PowerIterationConfig(), *, raise_on_failure: bool = True
) -> RankOneCritical:
    """Alternating power iteration for a rank-one critical point of ``t``.

    Each sweep updates the modes in order, normalising after every mode,
    then sets ``lambda = T(u_0, ..., u_{d-1})``.  A negative contraction
    flips ``u_0`` so that ``lambda >= 0``.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` sweeps do not satisfy the stopping rule and
        ``raise_on_failure`` is true.  Otherwise the last iterate is
        returned with ``converged=False``.
    """
    t = check_tensor(t)
    norm_t = frobenius_norm(t)
    if norm_t == 0:
        raise ValueError("rank-one approximation of the zero tensor is undefined")
    u = _initial_vectors(t, cfg)
    lam = full_contract(t, u)
    if lam < 0:
        u[0] = -u[0]
        lam = -lam
    kkt_tol = cfg.kkt_rtol * norm_t
    kkt = np.inf
    converged = False
    it = 0
    # a fixed point of the sweep is already converged; checking here lets
    # an exact initialisation return after zero sweeps
    kkt = kkt_residual(t, lam, u)
    if kkt <= kkt_tol:
        converged = True
    while not converged and it < cfg.max_iter:
        it += 1
        old = [v.copy() for v in u]
        for j in range(t.ndim):
            v = contract_all_but_mode(t, u, j)
            nv = np.linalg.norm(v)
            if nv == 0:
                # orthogonal to the current iterate: restart this mode
                v = np.ones(t.shape[j])
                nv = np.linalg.norm(v)
            u[j] = v / nv
        new_lam = full_contract(t, u)
        if new_lam < 0:
            u[0] = -u[0]
            new_lam = -new_lam
        dlam = abs(new_lam - lam)
        lam = new_lam
        min_cos = min(abs(float(a @ b)) for a, b in zip(u, old))
        if dlam <= cfg.tol and min_cos >= 1.0 - cfg.tol:
            kkt = kkt_residual(t, lam, u)
            converged = kkt <= kkt_tol
    if not converged:
        kkt = kkt_residual(t, lam, u)
    result = RankOneCritical(lam=float(lam), vectors=u, kkt_residual=float(kkt), iterations=it, converged=converged)
    if not converged and raise_on_failure:
        raise ConvergenceError(
            f"power iteration did not converge in {cfg.max_iter} sweeps (KKT residual {kkt:.3e})",
            result,
        )
    return result


def deflate(
    t,
    num_steps: int,
    cfg: PowerIterationConfig = PowerIterationConfig(),
    *,
    raise_on_failure: bool = False,
    keep_residual: bool = False,
) -> DeflationRecord:
    """Hotelling deflation: ``T_{i+1} = T_i - lambda_i u_{i,0} ⊗ ... ⊗ u_{i,d-1}``.

    Parameters
    ----------
    t : array-like
        Input tensor ``T_1``; not modified.
    num_steps : int
        Number of rank-one components to extract.
    cfg : PowerIterationConfig
    raise_on_failure : bool, default=False
        Raise :class:`ConvergenceError` (tagged with the step index) when a
        step fails to converge.  By default the step is flagged with
        ``converged=False``, its last iterate is subtracted, and deflation
        carries on.
    keep_residual : bool, default=False
        Store the final residual tensor on the record.

    Returns
    -------
    DeflationRecord
    """
    if num_steps < 1:
        raise ValueError("num_steps must be at least 1")
    current = check_tensor(t, copy=True)
    record = DeflationRecord(initial_norm=frobenius_norm(current))
    for i in range(num_steps):
        try:
            step = rank_one_approx(current, cfg, raise_on_failure=raise_on_failure)
        except ConvergenceError as exc:
            exc.step = i
            raise
        record.steps.append(step)
        axpy_rank_one(current, -step.lam, step.vectors, out=current)
        record.residual_norms.append(frobenius_norm(current))
    if keep_residual:
        record.residual = current
    return record


def measure_alignments(record: DeflationRecord, signal_vectors: Sequence[Sequence]) -> AlignmentTable:
    """Alignments of the deflation vectors with the ground-truth signals.

    ``signal_vectors[i][k]`` is the unit vector ``x_{i,k}``.
    """
    steps = record.steps
    if not steps:
        raise ValueError("record has no steps")
    d = len(steps[0].vectors)
    dims = [v.shape[0] for v in steps[0].vectors]
    truth = [check_vectors(xs, dims) for xs in signal_vectors]
    r, s = len(truth), len(steps)
    rho = np.empty((r, s, d))
    eta = np.empty((s, s, d))
    for k in range(d):
        X = np.column_stack([truth[i][k] for i in range(r)])
        U = np.column_stack([steps[j].vectors[k] for j in range(s)])
        rho[:, :, k] = X.T @ U
        eta[:, :, k] = U.T @ U
    np.clip(rho, -1.0, 1.0, out=rho)
    np.clip(eta, -1.0, 1.0, out=eta)
    return AlignmentTable(rho_signed=rho, eta_signed=eta)


class HotellingDeflation(TransformerMixin, BaseEstimator):
    """Greedy rank-one decomposition of a tensor by Hotelling deflation.

    Parameters
    ----------
    n_components : int, default=2
        Number of deflation steps.
    tol : float, default=1e-10
    max_iter : int, default=500
    init : {"tensor_svd", "random_seeded"}, default="tensor_svd"
    random_state : int or None, default=None
        Seed for ``init="random_seeded"``.

    Attributes
    ----------
    singular_values_ : ndarray of shape (n_components,)
    factors_ : list of ndarray
        ``factors_[k][:, j]`` is the mode-``k`` vector of component ``j``.
    kkt_residuals_ : ndarray of shape (n_components,)
    n_iter_ : ndarray of shape (n_components,)
    converged_ : ndarray of bool, shape (n_components,)
    residual_norms_ : ndarray of shape (n_components,)
    record_ : DeflationRecord
    """

    def __init__(self, n_components=2, tol=1e-10, max_iter=500, init="tensor_svd", random_state=None):
        self.n_components = n_components
        self.tol = tol
        self.max_iter = max_iter
        self.init = init
        self.random_state = random_state

    def _config(self) -> PowerIterationConfig:
        if self.init == "given_tuple":
            raise ValueError("HotellingDeflation supports init='tensor_svd' or 'random_seeded'")
        return PowerIterationConfig(
            tol=self.tol, max_iter=self.max_iter, init=self.init, seed=self.random_state
        )

    def fit(self, X, y=None):
        X = check_tensor(X)
        if int(self.n_components) < 1:
            raise ValueError("n_components must be at least 1")
        record = deflate(X, int(self.n_components), self._config())
        self.record_ = record
        self.singular_values_ = record.lambdas
        self.factors_ = [
            np.column_stack([s.vectors[k] for s in record.steps]) for k in range(X.ndim)
        ]
        self.kkt_residuals_ = np.array([s.kkt_residual for s in record.steps])
        self.n_iter_ = np.array([s.iterations for s in record.steps])
        self.converged_ = np.array(record.converged)
        self.residual_norms_ = np.array(record.residual_norms)
        self.shape_ = X.shape
        return self

    def _check_fitted(self):
        if not hasattr(self, "factors_"):
            raise NotFittedError("HotellingDeflation instance is not fitted yet")

    def transform(self, X):
        """Contractions ``X(u_{j,0}, ..., u_{j,d-1})`` for every fitted component."""
        self._check_fitted()
        X = check_tensor(X)
        if X.shape != self.shape_:
            raise ValueError(f"expected shape {self.shape_}, got {X.shape}")
        return np.array(
            [full_contract(X, [f[:, j] for f in self.factors_]) for j in range(self.factors_[0].shape[1])]
        )

    def inverse_transform(self, weights=None):
        """Low-rank tensor ``sum_j w_j u_{j,0} ⊗ ... ⊗ u_{j,d-1}``.

        ``weights`` defaults to the fitted singular values.
        """
        self._check_fitted()
        w = self.singular_values_ if weights is None else np.asarray(weights, dtype=float)
        out = np.zeros(self.shape_)
        for j, wj in enumerate(w):
            axpy_rank_one(out, wj, [f[:, j] for f in self.factors_], out=out)
        return out
