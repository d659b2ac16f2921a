"""Hotelling deflation of spiked random tensors, asymptotic predictions of
its singular values and alignments, and SNR estimation from measurements."""

from ._validation import DomainError
from .asymptotics import (
    AsymptoticSolution,
    ModelParameters,
    NewtonConfig,
    psi_jacobian,
    psi_residual,
    solve_first_spike,
    solve_forward,
    solve_theorem2,
    theorem2_jacobian,
    theorem2_residual,
)
from .deflation import (
    ConvergenceError,
    DeflationRecord,
    HotellingDeflation,
    PowerIterationConfig,
    deflate,
    kkt_residual,
    measure_alignments,
    rank_one_approx,
)
from .estimation import MeasuredTriple, NoRootError, SNREstimator, SnrEstimate, estimate_snr, naive_estimate
from .simulation import SpikedModelSpec, run_trials, sweep_grid
from .stieltjes import RatioProfile, eval_f, eval_g, eval_h, eval_q, support_edge
from .tensor import (
    TensorFileError,
    contract_all_but_mode,
    full_contract,
    mode_unfold,
    outer_rank_one,
    read_tensor,
    write_tensor,
)

__version__ = "0.1.0"
