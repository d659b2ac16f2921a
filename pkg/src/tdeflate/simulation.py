"""Spiked tensor sampling and seeded Monte Carlo drivers.

Random streams
--------------
Every random draw comes from a Philox generator keyed by
``SeedSequence([seed, trial, tag])`` where ``tag`` names the purpose
(``STREAM_TRUTH`` for the signal vectors, ``STREAM_NOISE`` for the noise
tensor).  Trial ``k`` therefore sees the same numbers no matter how many
worker threads run or in which order trials complete.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_nonnegative, check_unit_interval
from .asymptotics import NewtonConfig, solve_first_spike, solve_forward
from .deflation import PowerIterationConfig, deflate, measure_alignments
from .tensor import outer_rank_one

__all__ = [
    "SpikedModelSpec",
    "GroundTruth",
    "TrialResult",
    "make_stream",
    "make_correlated_vectors",
    "make_ground_truth",
    "sample_spiked_tensor",
    "run_trial",
    "run_trials",
    "sweep_grid",
    "STREAM_TRUTH",
    "STREAM_NOISE",
]

STREAM_TRUTH = 0
STREAM_NOISE = 1


def make_stream(seed: int, trial: int, tag: int) -> np.random.Generator:
    """Independent Philox stream for ``(seed, trial, tag)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial), int(tag)])))


@dataclass(frozen=True)
class SpikedModelSpec:
    """Parameters of ``sum_i beta_i x_{i,1} ⊗ ... ⊗ x_{i,d} + W / sqrt(sum(dims))``.

    ``alpha`` is the common pairwise alignment of the signal vectors in
    every mode.  ``alphas`` optionally overrides it with a full
    ``(r, r, d)`` table.  ``noise_scale=0`` removes the noise term.
    """

    betas: tuple
    dims: tuple = (50, 50, 50)
    alpha: float = 0.0
    seed: int = 0
    alphas: np.ndarray | None = None
    noise_scale: float = 1.0

    def __post_init__(self):
        betas = tuple(check_nonnegative("beta", b) for b in np.atleast_1d(self.betas))
        dims = tuple(int(n) for n in self.dims)
        if len(dims) < 3:
            raise ValueError("need at least 3 modes")
        if any(n < 2 for n in dims):
            raise ValueError("all dims must be at least 2")
        if not betas:
            raise ValueError("need at least one beta")
        check_unit_interval("alpha", self.alpha)
        if self.alphas is not None:
            table = np.asarray(self.alphas, dtype=float)
            if table.shape != (len(betas), len(betas), len(dims)):
                raise ValueError("alphas table has the wrong shape")
            object.__setattr__(self, "alphas", table)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "dims", dims)

    @property
    def r(self) -> int:
        return len(self.betas)

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def noise_divisor(self) -> float:
        return float(np.sqrt(sum(self.dims)))

    def gram(self, mode: int) -> np.ndarray:
        if self.alphas is not None:
            g = self.alphas[:, :, mode].copy()
            np.fill_diagonal(g, 1.0)
            return g
        g = np.full((self.r, self.r), float(self.alpha))
        np.fill_diagonal(g, 1.0)
        return g


@dataclass
class GroundTruth:
    """``signal_vectors[i][k]`` is the unit vector ``x_{i,k}``."""

    signal_vectors: list

    @property
    def gram_check(self) -> np.ndarray:
        """Realised ``<x_{i,k}, x_{j,k}>`` as an ``(r, r, d)`` array."""
        r, d = len(self.signal_vectors), len(self.signal_vectors[0])
        out = np.empty((r, r, d))
        for k in range(d):
            X = np.column_stack([self.signal_vectors[i][k] for i in range(r)])
            out[:, :, k] = X.T @ X
        return out


def _psd_sqrt(gram: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(gram)
    if w.min() < -1e-12:
        raise ValueError("target Gram matrix is not positive semidefinite")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def make_correlated_vectors(n: int, r: int, alpha, rng: np.random.Generator) -> np.ndarray:
    """``r`` unit vectors in ``R^n`` with prescribed inner products.

    ``alpha`` is either a scalar (all pairs) or an ``(r, r)`` Gram matrix.
    A symmetric square root of the Gram matrix is applied to a uniformly
    random orthonormal ``r``-frame, so the inner products are exact up to
    rounding.  Returns an ``(n, r)`` array whose columns are the vectors.
    """
    if r > n:
        raise ValueError(f"cannot place {r} vectors in dimension {n}")
    if np.ndim(alpha) == 0:
        gram = np.full((r, r), float(alpha))
        np.fill_diagonal(gram, 1.0)
    else:
        gram = np.asarray(alpha, dtype=float)
    root = _psd_sqrt(gram)
    q, rr = np.linalg.qr(rng.standard_normal((n, r)))
    q = q * np.sign(np.diag(rr))  # Haar-distributed frame
    x = q @ root
    return x / np.linalg.norm(x, axis=0)


def make_ground_truth(spec: SpikedModelSpec, rng: np.random.Generator) -> GroundTruth:
    per_mode = [make_correlated_vectors(n, spec.r, spec.gram(k), rng) for k, n in enumerate(spec.dims)]
    return GroundTruth([[per_mode[k][:, i] for k in range(spec.d)] for i in range(spec.r)])


def sample_spiked_tensor(spec: SpikedModelSpec, truth: GroundTruth, rng: np.random.Generator) -> np.ndarray:
    """Draw ``sum_i beta_i x_{i,1} ⊗ ... ⊗ x_{i,d} + W / sqrt(n)``, ``n = sum(dims)``."""
    if len(truth.signal_vectors) != spec.r:
        raise ValueError("ground truth rank does not match the spec")
    for xs in truth.signal_vectors:
        if tuple(v.shape[0] for v in xs) != spec.dims:
            raise ValueError("ground-truth vectors do not match dims")
    t = np.zeros(spec.dims)
    for beta, xs in zip(spec.betas, truth.signal_vectors):
        t += outer_rank_one(beta, xs)
    if spec.noise_scale:
        noise = rng.standard_normal(spec.dims)
        t += (spec.noise_scale / spec.noise_divisor) * noise
    return t


@dataclass
class TrialResult:
    """One Monte Carlo trial: deflation measurements and estimator output.

    ``rho`` is ``(r, steps, d)`` and ``eta`` is ``(steps, steps, d)``, both
    absolute; the signed arrays keep raw inner products.  ``tensor_norms[i]``
    is the Frobenius norm of the tensor that step ``i`` approximated.
    """

    trial: int
    lambdas: np.ndarray
    rho: np.ndarray
    eta: np.ndarray
    rho_signed: np.ndarray
    eta_signed: np.ndarray
    kkt: np.ndarray
    converged: np.ndarray
    tensor_norms: np.ndarray | None = None
    estimates: list = field(default_factory=list)
    error: str | None = None
    seconds: float = 0.0

    @property
    def eta_hat(self) -> float:
        """Mode-averaged ``|<u_1, u_2>|``."""
        return float(np.mean(self.eta[0, 1])) if self.eta.shape[0] > 1 else float("nan")

    def rho_hat(self, i: int, j: int) -> float:
        """Mode-averaged ``|<x_i, u_j>|`` (0-based)."""
        return float(np.mean(self.rho[i, j]))

    @property
    def primary_estimate(self):
        return self.estimates[0] if self.estimates else None


def run_trial(
    spec: SpikedModelSpec,
    trial: int,
    *,
    num_steps: int = 2,
    power_cfg: PowerIterationConfig = PowerIterationConfig(),
    newton_cfg: NewtonConfig | None = None,
    estimate: bool = False,
) -> TrialResult:
    """Sample, deflate, measure and optionally estimate for one trial."""
    from .estimation import MeasuredTriple, estimate_snr

    start = time.perf_counter()
    truth = make_ground_truth(spec, make_stream(spec.seed, trial, STREAM_TRUTH))
    t = sample_spiked_tensor(spec, truth, make_stream(spec.seed, trial, STREAM_NOISE))
    record = deflate(t, num_steps, power_cfg)
    table = measure_alignments(record, truth.signal_vectors)
    result = TrialResult(
        trial=trial,
        lambdas=record.lambdas,
        rho=table.rho,
        eta=table.eta,
        rho_signed=table.rho_signed,
        eta_signed=table.eta_signed,
        kkt=np.array([s.kkt_residual for s in record.steps]),
        converged=np.array(record.converged),
        tensor_norms=np.array([record.initial_norm, *record.residual_norms[:-1]]),
    )
    if estimate and num_steps >= 2:
        try:
            triple = MeasuredTriple(result.lambdas[0], result.lambdas[1], result.eta_hat)
            result.estimates = estimate_snr(triple, newton_cfg or NewtonConfig(seed=spec.seed))
        except (ValueError, RuntimeError) as exc:
            result.error = str(exc)
    result.seconds = time.perf_counter() - start
    return result


def run_trials(
    spec: SpikedModelSpec,
    num_trials: int,
    *,
    num_steps: int = 2,
    power_cfg: PowerIterationConfig = PowerIterationConfig(),
    newton_cfg: NewtonConfig | None = None,
    estimate: bool = False,
    threads: int = 1,
) -> list[TrialResult]:
    """Run ``num_trials`` independent trials, ordered by trial index.

    Results do not depend on ``threads``.  A trial whose estimator fails
    is kept with ``error`` set; a non-converged deflation step is kept
    with its ``converged`` flag cleared.
    """
    if num_trials < 1:
        raise ValueError("num_trials must be at least 1")

    def one(k):
        return run_trial(
            spec, k, num_steps=num_steps, power_cfg=power_cfg, newton_cfg=newton_cfg, estimate=estimate
        )

    if threads <= 1:
        return [one(k) for k in range(num_trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(num_trials)))


SWEEP_COLUMNS = (
    "beta1", "beta2", "alpha", "source", "n_branches", "branch_id",
    "lambda1", "lambda2", "eta", "rho11", "rho12", "rho21", "rho22", "residual",
)


def _theory_rows(b1, b2, a, system, cfg):
    base = {"beta1": b1, "beta2": b2, "alpha": a}
    if system == "first_spike":
        roots = solve_first_spike((b1, b2, a), cfg)
        rows = []
        for n, (lam1, r11, r21) in enumerate(roots):
            rows.append({**base, "source": "first_spike", "n_branches": len(roots), "branch_id": n,
                         "lambda1": lam1, "rho11": r11, "rho21": r21})
    else:
        sols = solve_forward((b1, b2, a), cfg)
        rows = []
        for s in sols:
            lam1, lam2, eta = s.psi_lam
            r11, r12, r21, r22 = s.psi_rho
            rows.append({**base, "source": "forward", "n_branches": len(sols), "branch_id": s.branch_id,
                         "lambda1": lam1, "lambda2": lam2, "eta": eta, "rho11": r11, "rho12": r12,
                         "rho21": r21, "rho22": r22, "residual": s.residual_norm})
    if not rows:
        rows.append({**base, "source": system, "n_branches": 0})
    return rows


def _empirical_row(b1, b2, a, dims, trials, seed, power_cfg):
    spec = SpikedModelSpec(betas=(b1, b2), dims=dims, alpha=a, seed=seed)
    results = run_trials(spec, trials, power_cfg=power_cfg)
    return {
        "beta1": b1, "beta2": b2, "alpha": a, "source": "empirical", "n_branches": "",
        "lambda1": float(np.mean([r.lambdas[0] for r in results])),
        "lambda2": float(np.mean([r.lambdas[1] for r in results])),
        "eta": float(np.mean([r.eta_hat for r in results])),
        "rho11": float(np.mean([r.rho_hat(0, 0) for r in results])),
        "rho12": float(np.mean([r.rho_hat(0, 1) for r in results])),
        "rho21": float(np.mean([r.rho_hat(1, 0) for r in results])),
        "rho22": float(np.mean([r.rho_hat(1, 1) for r in results])),
    }


def sweep_grid(
    beta1_values,
    beta2_values,
    alpha_values,
    mode: str = "theory",
    *,
    system: str = "first_spike",
    newton_cfg: NewtonConfig = NewtonConfig(),
    dims=(50, 50, 50),
    trials: int = 10,
    seed: int = 0,
    power_cfg: PowerIterationConfig = PowerIterationConfig(),
    threads: int = 1,
) -> list[dict]:
    """Evaluate every ``(beta1, beta2, alpha)`` grid point.

    ``mode="theory"`` solves ``system`` (``"first_spike"`` or ``"full"``)
    and emits one row per branch, or a single row with ``n_branches=0``
    when no admissible root exists.  ``mode="empirical"`` adds one row of
    Monte Carlo means per point; ``"both"`` does both.  Rows use the keys
    in ``SWEEP_COLUMNS`` (missing keys are blank) and are ordered by grid
    point.
    """
    if mode not in ("theory", "empirical", "both"):
        raise ValueError(f"unknown mode {mode!r}")
    if system not in ("first_spike", "full"):
        raise ValueError(f"unknown system {system!r}")
    points = [(float(b1), float(b2), float(a)) for b1 in beta1_values for b2 in beta2_values for a in alpha_values]

    def one(point):
        b1, b2, a = point
        rows = []
        if mode in ("theory", "both"):
            rows.extend(_theory_rows(b1, b2, a, system, newton_cfg))
        if mode in ("empirical", "both"):
            rows.append(_empirical_row(b1, b2, a, tuple(dims), trials, seed, power_cfg))
        return rows

    if threads <= 1:
        chunks = [one(p) for p in points]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(one, points))
    return [row for chunk in chunks for row in chunk]
