import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdeflate.simulation import (
    STREAM_NOISE,
    STREAM_TRUTH,
    SWEEP_COLUMNS,
    SpikedModelSpec,
    make_correlated_vectors,
    make_ground_truth,
    make_stream,
    run_trials,
    sample_spiked_tensor,
    sweep_grid,
)
from tdeflate.tensor import frobenius_norm


def test_streams_are_keyed():
    a = make_stream(1, 2, STREAM_NOISE).standard_normal(5)
    b = make_stream(1, 2, STREAM_NOISE).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    for other in (make_stream(1, 3, STREAM_NOISE), make_stream(2, 2, STREAM_NOISE), make_stream(1, 2, STREAM_TRUTH)):
        assert not np.array_equal(a, other.standard_normal(5))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 40), r=st.integers(1, 3), alpha=st.floats(0.0, 1.0), seed=st.integers(0, 1000))
def test_correlated_vectors_exact(n, r, alpha, seed):
    r = min(r, n)
    x = make_correlated_vectors(n, r, alpha, np.random.default_rng(seed))
    expected = np.full((r, r), alpha)
    np.fill_diagonal(expected, 1.0)
    np.testing.assert_allclose(x.T @ x, expected, atol=1e-12)


def test_correlated_vectors_errors(rng):
    with pytest.raises(ValueError):
        make_correlated_vectors(2, 3, 0.1, rng)
    with pytest.raises(ValueError):
        make_correlated_vectors(5, 2, np.array([[1.0, 2.0], [2.0, 1.0]]), rng)


def test_ground_truth_gram_table():
    table = np.full((2, 2, 3), 1.0)
    table[0, 1] = table[1, 0] = [0.1, 0.5, 0.9]
    spec = SpikedModelSpec(betas=(3.0, 2.0), dims=(10, 11, 12), alphas=table)
    truth = make_ground_truth(spec, make_stream(0, 0, STREAM_TRUTH))
    np.testing.assert_allclose(truth.gram_check, table, atol=1e-12)


def test_noiseless_sample_is_signal():
    spec = SpikedModelSpec(betas=(3.0,), dims=(4, 5, 6), noise_scale=0.0)
    truth = make_ground_truth(spec, make_stream(0, 0, STREAM_TRUTH))
    t = sample_spiked_tensor(spec, truth, make_stream(0, 0, STREAM_NOISE))
    assert frobenius_norm(t) == pytest.approx(3.0, abs=1e-12)


def test_noise_normalisation():
    # E ||W / sqrt(sum n)||^2 = prod(n) / sum(n) = 1680 / 36
    spec = SpikedModelSpec(betas=(0.0,), dims=(10, 12, 14))
    sq = []
    for k in range(200):
        truth = make_ground_truth(spec, make_stream(5, k, STREAM_TRUTH))
        sq.append(frobenius_norm(sample_spiked_tensor(spec, truth, make_stream(5, k, STREAM_NOISE))) ** 2)
    # standard error of the mean is about 0.11
    assert np.mean(sq) == pytest.approx(1680 / 36, abs=0.5)


def test_spec_validation():
    with pytest.raises(ValueError):
        SpikedModelSpec(betas=(1.0,), dims=(5, 5))
    with pytest.raises(ValueError):
        SpikedModelSpec(betas=(-1.0,))
    with pytest.raises(ValueError):
        SpikedModelSpec(betas=(1.0, 1.0), alpha=1.5)
    with pytest.raises(ValueError):
        SpikedModelSpec(betas=(1.0, 1.0), alphas=np.ones((2, 2, 2)))


def test_trials_independent_of_threads():
    spec = SpikedModelSpec(betas=(8.0, 6.0), dims=(15, 15, 15), alpha=0.5, seed=11)
    one = run_trials(spec, 6, threads=1, estimate=True)
    four = run_trials(spec, 6, threads=4, estimate=True)
    assert [r.trial for r in four] == list(range(6))
    for a, b in zip(one, four):
        np.testing.assert_array_equal(a.lambdas, b.lambdas)
        np.testing.assert_array_equal(a.rho_signed, b.rho_signed)
        assert (a.primary_estimate is None) == (b.primary_estimate is None)
        if a.primary_estimate is not None:
            assert a.primary_estimate.beta1_hat == b.primary_estimate.beta1_hat


def test_trial_result_summaries():
    spec = SpikedModelSpec(betas=(8.0, 6.0), dims=(12, 12, 12), alpha=0.0, seed=1)
    (res,) = run_trials(spec, 1)
    assert res.rho.shape == (2, 2, 3) and res.eta.shape == (2, 2, 3)
    assert res.eta_hat == pytest.approx(np.mean(np.abs(res.eta_signed[0, 1])))
    assert res.rho_hat(1, 0) == pytest.approx(np.mean(np.abs(res.rho_signed[1, 0])))
    with pytest.raises(ValueError):
        run_trials(spec, 0)


def test_sweep_rows():
    rows = sweep_grid([0.1, 4.0], [1.0], [0.1], "theory")
    assert [r["n_branches"] for r in rows] == [0, 1]
    assert all(set(r) <= set(SWEEP_COLUMNS) for r in rows)
    full = sweep_grid([15.0], [10.0], [0.7], "theory", system="full")
    assert len(full) == 2 and {r["branch_id"] for r in full} == {0, 1}
    both = sweep_grid([8.0], [6.0], [0.5], "both", dims=(12, 12, 12), trials=2, threads=2)
    assert [r["source"] for r in both] == ["first_spike", "empirical"]
    with pytest.raises(ValueError):
        sweep_grid([1.0], [1.0], [0.0], "plot")


def test_sweep_independent_of_threads():
    grid = ([0.5, 1.5, 2.5], [1.0], [0.0, 0.5, 1.0])
    assert sweep_grid(*grid, threads=1) == sweep_grid(*grid, threads=3)


def test_tensor_norms_recorded():
    spec = SpikedModelSpec(betas=(8.0, 6.0), dims=(12, 12, 12), alpha=0.3, seed=2)
    (res,) = run_trials(spec, 1, num_steps=3)
    assert res.tensor_norms.shape == (3,)
    # each deflation step removes lambda^2 from the squared norm
    np.testing.assert_allclose(res.tensor_norms[1:] ** 2, res.tensor_norms[:-1] ** 2 - res.lambdas[:-1] ** 2,
                               rtol=1e-6)
