import numpy as np
import pytest
from sklearn.base import clone

from tdeflate._validation import DomainError
from tdeflate.asymptotics import NewtonConfig, psi_residual, solve_forward
from tdeflate.deflation import deflate
from tdeflate.estimation import (
    MeasuredTriple,
    SNREstimator,
    estimate_snr,
    measure_triple_from_deflation,
    naive_estimate,
)
from tdeflate.simulation import STREAM_NOISE, STREAM_TRUTH, SpikedModelSpec, make_ground_truth, make_stream, sample_spiked_tensor


@pytest.mark.parametrize("beta", [(8, 6, 0.5), (4, 2, 0.3), (12, 10, 0.0), (15, 10, 0.7), (3, 9, 0.2)])
def test_round_trip(beta):
    for sol in solve_forward(beta):
        est = estimate_snr(MeasuredTriple(*sol.psi_lam))
        best = est[0]
        assert best.is_primary and not any(e.is_primary for e in est[1:])
        assert best.beta1_hat >= best.beta2_hat
        assert best.beta1_hat == pytest.approx(max(beta[:2]), abs=1e-6)
        assert best.beta2_hat == pytest.approx(min(beta[:2]), abs=1e-6)
        assert best.alpha_hat == pytest.approx(beta[2], abs=1e-6)
        assert np.max(np.abs(psi_residual(sol.psi_lam, (best.beta1_hat, best.beta2_hat, best.alpha_hat),
                                          best.rho_hat))) <= 1e-9


def test_all_roots_are_roots():
    lam = solve_forward((10, 10, 0.5))[0].psi_lam
    for e in estimate_snr(MeasuredTriple(*lam)):
        assert e.residual_norm <= 1e-9
        assert 0 <= e.alpha_hat <= 1 and min(e.beta1_hat, e.beta2_hat) >= 0


def test_below_edge_is_rejected():
    with pytest.raises(DomainError, match=r"2\*sqrt\(2/3\)"):
        estimate_snr(MeasuredTriple(1.0, 3.0, 0.2))
    with pytest.raises(DomainError):
        estimate_snr(MeasuredTriple(3.0, 1.6329932, 0.2))


def test_measured_triple_validation():
    with pytest.raises(ValueError):
        MeasuredTriple(3.0, 2.0, 1.5)
    assert naive_estimate(MeasuredTriple(3.0, 2.0, 0.5)) == (3.0, 2.0)


def test_triple_from_deflation(rng):
    t = rng.standard_normal((6, 6, 6))
    rec = deflate(t, 2)
    m = measure_triple_from_deflation(rec)
    per_mode = [abs(a @ b) for a, b in zip(rec.steps[0].vectors, rec.steps[1].vectors)]
    assert m.eta_hat == pytest.approx(np.mean(per_mode))
    assert (m.lambda1_hat, m.lambda2_hat) == (rec.steps[0].lam, rec.steps[1].lam)
    with pytest.raises(ValueError):
        measure_triple_from_deflation(deflate(t, 1))


def test_fd_jacobian_option_agrees():
    lam = solve_forward((8, 6, 0.5))[0].psi_lam
    a = estimate_snr(MeasuredTriple(*lam))[0]
    b = estimate_snr(MeasuredTriple(*lam), NewtonConfig(jacobian="fd", tol=1e-10))[0]
    assert a.beta1_hat == pytest.approx(b.beta1_hat, abs=1e-7)
    assert a.alpha_hat == pytest.approx(b.alpha_hat, abs=1e-7)


def _sample(seed, dims=(30, 30, 30)):
    spec = SpikedModelSpec(betas=(8.0, 6.0), dims=dims, alpha=0.5, seed=seed)
    truth = make_ground_truth(spec, make_stream(seed, 0, STREAM_TRUTH))
    return sample_spiked_tensor(spec, truth, make_stream(seed, 0, STREAM_NOISE))


def test_estimator_api():
    est = SNREstimator(num_starts=24)
    assert est.get_params() == {"tol": 1e-10, "max_iter": 500, "num_starts": 24, "random_state": 0}
    assert clone(est).get_params() == est.get_params()
    t = _sample(4)
    est.fit(t)
    assert est.beta_.shape == (2,) and est.rho_.shape == (4,)
    assert est.beta_[0] >= est.beta_[1]
    # loose sanity band at n_i = 30; the statistical check lives in the acceptance suite
    assert np.all(np.abs(est.beta_ - [8.0, 6.0]) < 2.0)
    np.testing.assert_allclose(est.naive_beta_, est.deflation_.singular_values_)
    pred = est.predict(np.stack([t, _sample(5)]))
    assert pred.shape == (2, 3)
    np.testing.assert_allclose(pred[0], [*est.beta_, est.alpha_])
    assert est.predict(t).shape == (1, 3)
    with pytest.raises(ValueError):
        est.fit(np.ones((4, 5, 6)))
