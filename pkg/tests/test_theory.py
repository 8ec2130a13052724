import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from shiftkrr.theory import (
    BoundInputs,
    SpectrumInputs,
    SpectrumTruncationError,
    bias_variance_overhead,
    candidate_bound,
    effective_dim,
    overhead_bound,
    regular_spectrum_check,
    selection_overhead_U,
    shift_norm_trace,
    shift_operator,
    spectral_risk_bound,
    trace_condition_holds,
    verify_selection_inequality,
)

SCALAR = dict(Sigma=[[1.0]], Sigma0=[[1.0]], sigma=1.0, theta_norm=1.0, n=100, n0=50, rho=0.5, m=2, delta=0.2)


def random_spd(rng, d, floor=0.0):
    A = rng.standard_normal((d, d))
    return A @ A.T / d + floor * np.eye(d)


def random_inputs(rng, d=None, **kw):
    d = d or int(rng.integers(1, 7))
    base = dict(
        Sigma=random_spd(rng, d),
        Sigma0=random_spd(rng, d),
        sigma=rng.uniform(0, 2),
        theta_norm=rng.uniform(0, 2),
        n=int(rng.integers(10, 10_000)),
        n0=int(rng.integers(10, 10_000)),
        rho=rng.uniform(0.1, 0.9),
        m=int(rng.integers(2, 30)),
        delta=rng.uniform(0.01, 0.2),
    )
    base.update(kw)
    return BoundInputs(**base)


def shift_operator_oracle(Sigma, Sigma0, lam):
    # independent path: principal matrix square root, then a dense inverse
    root = np.real(scipy.linalg.sqrtm(Sigma + lam * np.eye(len(Sigma))))
    inv_root = np.linalg.inv(root)
    return inv_root @ Sigma0 @ inv_root


def test_shift_operator_identity():
    inputs = BoundInputs(**{**SCALAR, "Sigma": np.eye(2), "Sigma0": np.eye(2)})
    np.testing.assert_allclose(shift_operator(inputs, 1.0), 0.5 * np.eye(2), atol=1e-15)


def test_shift_operator_zero_target():
    inputs = BoundInputs(**{**SCALAR, "Sigma": np.eye(3) * 2, "Sigma0": np.zeros((3, 3))})
    assert np.all(shift_operator(inputs, 0.3) == 0)


@given(seed=st.integers(0, 2**32 - 1))
def test_shift_operator_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    inputs = random_inputs(rng)
    S = shift_operator(inputs, 0.3)
    np.testing.assert_allclose(S, shift_operator_oracle(inputs.Sigma, inputs.Sigma0, 0.3), atol=1e-10)
    assert np.array_equal(S, S.T)
    assert np.linalg.eigvalsh(S).min() >= -1e-10


def test_shift_operator_rejects():
    inputs = BoundInputs(**SCALAR)
    with pytest.raises(ValueError):
        shift_operator(inputs, 0.0)
    with pytest.raises(ValueError):
        BoundInputs(**{**SCALAR, "Sigma0": np.eye(2)})
    with pytest.raises(ValueError):
        BoundInputs(**{**SCALAR, "Sigma": [[1.0, 0.5], [0.4, 1.0]], "Sigma0": np.eye(2)})
    with pytest.raises(ValueError):
        BoundInputs(**{**SCALAR, "Sigma": [[-1.0]]})
    with pytest.raises(ValueError):
        BoundInputs(**{**SCALAR, "delta": 0.5})


def test_scalar_hand_values():
    inputs = BoundInputs(**SCALAR)
    # 1 * 0.5 * 1 + 1 * 0.5 * log(10) / 50
    assert candidate_bound(inputs, 1.0) == pytest.approx(0.5 + 0.5 * math.log(10) / 50, abs=1e-12)
    assert candidate_bound(inputs, 1.0) == pytest.approx(0.523026, abs=5e-7)
    # (1 + log(10)/50) * (0.5 + 1)
    assert overhead_bound(inputs, 1.0) == pytest.approx((1 + math.log(10) / 50) * 1.5, abs=1e-12)
    assert overhead_bound(inputs, 1.0) == pytest.approx(1.569078, abs=5e-7)


def test_bounds_vanish_without_noise_or_signal(rng):
    inputs = random_inputs(rng, sigma=0.0, theta_norm=0.0)
    assert candidate_bound(inputs, 0.7) == 0.0
    assert overhead_bound(inputs, 0.7) == 0.0


@given(seed=st.integers(0, 2**32 - 1), t=st.sampled_from([2.0, 4.0, 8.0]))
def test_candidate_bound_scaling_law(seed, t):
    rng = np.random.default_rng(seed)
    inputs = random_inputs(rng)
    lam = 10.0 ** rng.uniform(-4, 1)
    assert candidate_bound(inputs, t * lam) >= candidate_bound(inputs, lam) / t * (1 - 1e-12)


@given(seed=st.integers(0, 2**32 - 1))
def test_overhead_monotone_in_sigma_and_theta(seed):
    rng = np.random.default_rng(seed)
    inputs = random_inputs(rng)
    lam = 10.0 ** rng.uniform(-4, 1)
    base = overhead_bound(inputs, lam)
    bigger_sigma = BoundInputs(**{**inputs.__dict__, "sigma": inputs.sigma + 0.5})
    bigger_theta = BoundInputs(**{**inputs.__dict__, "theta_norm": inputs.theta_norm + 0.5})
    assert overhead_bound(bigger_sigma, lam) >= base
    assert overhead_bound(bigger_theta, lam) >= base


@given(seed=st.integers(0, 2**32 - 1), B=st.floats(1.0, 50.0))
def test_shift_norm_bounded_by_B(seed, B):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 7))
    Sigma = random_spd(rng, d)
    root = np.real(scipy.linalg.sqrtm(Sigma))
    # contraction C with 0 <= C <= I
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    C = Q @ np.diag(rng.uniform(0, 1, d)) @ Q.T
    Sigma0 = B * root @ C @ root
    Sigma0 = 0.5 * (Sigma0 + Sigma0.T)
    inputs = BoundInputs(Sigma=Sigma, Sigma0=Sigma0, sigma=1.0, theta_norm=1.0, n=100, n0=100)
    norm, _ = shift_norm_trace(inputs, 10.0 ** rng.uniform(-6, 1))
    assert norm <= B * (1 + 1e-9)


def test_norm_and_trace_decrease_in_lambda(rng):
    for _ in range(50):
        inputs = random_inputs(rng)
        vals = [shift_norm_trace(inputs, lam) for lam in np.geomspace(1e-4, 10, 12)]
        norms, traces = zip(*vals)
        assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))
        assert all(b <= a * (1 + 1e-12) for a, b in zip(traces, traces[1:]))


def test_trace_condition():
    inputs = BoundInputs(**{**SCALAR, "n": 100, "n0": 100, "Sigma": [[2.0]], "Sigma0": [[1.0]]})
    assert trace_condition_holds(inputs)
    inputs = BoundInputs(**{**SCALAR, "n": 100, "n0": 10})
    assert not trace_condition_holds(inputs)


def linear_scan_dim(mu, r):
    for j, value in enumerate(mu, start=1):
        if value <= r * r:
            return j
    return None


def test_effective_dim_examples():
    assert effective_dim(SpectrumInputs([1.0, 0.25, 0.01]), 0.6) == 2
    assert effective_dim(SpectrumInputs([1.0, 0.25, 0.01]), 1.5) == 1
    mu = 1.0 / np.arange(1, 101) ** 2
    assert effective_dim(SpectrumInputs(mu), 0.1) == linear_scan_dim(mu, 0.1) == 10


def test_effective_dim_errors():
    with pytest.raises(SpectrumTruncationError):
        effective_dim(SpectrumInputs([1.0, 0.5]), 0.1)
    with pytest.raises(ValueError):
        effective_dim(SpectrumInputs([1.0, 0.5]), 0.0)
    with pytest.raises(ValueError):
        SpectrumInputs([0.5, 1.0])
    with pytest.raises(ValueError):
        SpectrumInputs([1.0, -0.1])


@given(seed=st.integers(0, 2**32 - 1))
def test_effective_dim_equals_linear_scan(seed):
    rng = np.random.default_rng(seed)
    mu = np.sort(rng.exponential(size=int(rng.integers(1, 50))))[::-1]
    mu = np.append(mu, 0.0)
    r = float(rng.uniform(0.01, 2.0))
    assert effective_dim(SpectrumInputs(mu), r) == linear_scan_dim(mu, r)


def test_regular_spectrum_single_nonzero():
    report = regular_spectrum_check(SpectrumInputs([1.0, 0.0], c0=0.0), np.linspace(0.1, 1.0, 10))
    assert report.all_passed and np.all(report.tails == 0)


def test_regular_spectrum_geometric():
    mu = 2.0 ** -np.arange(1, 61)
    r_grid = np.sqrt(np.geomspace(2.0**-50, 0.5, 10))
    report = regular_spectrum_check(SpectrumInputs(mu, c0=1.0), r_grid)
    assert report.all_passed
    for r, d, tail in zip(r_grid, report.dims, report.tails):
        assert tail == pytest.approx(sum(mu[d:]), rel=1e-12)


def test_regular_spectrum_polynomial_ratio_bounded():
    mu = 1.0 / np.arange(1, 100_001) ** 2
    r_grid = np.sqrt(np.geomspace(1e-8, 0.5, 10))
    report = regular_spectrum_check(SpectrumInputs(mu, c0=2.0), r_grid)
    # tail of j^-2 beyond D is about 1/D while D r^2 is about 1/D
    assert report.worst_ratio <= 2.0 and report.all_passed


def test_spectral_risk_bound_basic():
    mu = 1.0 / np.arange(1, 10_001) ** 2
    value, r = spectral_risk_bound(SpectrumInputs(mu), theta_norm=1.0, sigma=1.0, B=2.0, n=1000, delta=0.1, lambda0=1e-4)
    assert math.sqrt(2e-4) <= r <= math.sqrt(1000 * 2e-4)
    D = effective_dim(SpectrumInputs(mu), r)
    assert value == pytest.approx(r * r + 2.0 * D * math.log(math.log(1000) / 0.1) / 1000)


def pair_loop_U(preds, pseudo, truth):
    err = np.asarray(pseudo) - np.asarray(truth)
    best = 0.0
    for a in preds.values():
        for b in preds.values():
            diff = np.asarray(a) - np.asarray(b)
            norm = math.sqrt(sum(v * v for v in diff))
            value = 0.0 if norm == 0 else sum(d * e for d, e in zip(diff, err)) / norm
            best = max(best, value)
    return best


def test_U_zero_for_exact_labels(rng):
    truth = rng.standard_normal(10)
    preds = {k: rng.standard_normal(10) for k in range(4)}
    assert selection_overhead_U(preds, truth, truth) == 0.0


def test_U_parallel_case(rng):
    truth = rng.standard_normal(6)
    direction = rng.standard_normal(6)
    pseudo = truth + 0.7 * direction
    preds = {1.0: truth + direction, 2.0: truth - 2 * direction}
    assert selection_overhead_U(preds, pseudo, truth) == pytest.approx(np.linalg.norm(pseudo - truth), rel=1e-12)


def test_U_length_mismatch():
    with pytest.raises(ValueError):
        selection_overhead_U({1.0: np.zeros(3)}, np.zeros(4), np.zeros(4))


@given(seed=st.integers(0, 2**32 - 1))
def test_U_matches_pair_loop_and_cauchy_schwarz(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(1, 9)), int(rng.integers(1, 21))
    preds = {float(k): rng.standard_normal(n) for k in range(m)}
    if m > 1 and rng.random() < 0.3:
        preds[0.0] = preds[1.0].copy()
    truth, pseudo = rng.standard_normal(n), rng.standard_normal(n)
    U = selection_overhead_U(preds, pseudo, truth)
    assert U == pytest.approx(pair_loop_U(preds, pseudo, truth), rel=1e-10, abs=1e-12)
    assert 0.0 <= U <= np.linalg.norm(pseudo - truth) * (1 + 1e-12)


def test_selection_inequality_exact_labels(rng):
    truth = rng.standard_normal(15)
    preds = {float(k): truth + rng.standard_normal(15) for k in range(5)}
    res = verify_selection_inequality(preds, truth, truth, gamma_grid=[1e-6, 1e-3, 1.0])
    losses = {k: np.sum((v - truth) ** 2) for k, v in preds.items()}
    assert res.U == 0.0
    assert res.chosen == min(losses, key=losses.get)
    assert res.rhs == pytest.approx((1 + 1e-6) * min(losses.values()), rel=1e-12)
    assert res.holds


def test_selection_inequality_single_candidate(rng):
    truth, pseudo = rng.standard_normal(8), rng.standard_normal(8)
    y = rng.standard_normal(8)
    res = verify_selection_inequality({0.5: y}, pseudo, truth)
    assert res.lhs == pytest.approx(np.sum((y - truth) ** 2))
    assert res.rhs >= res.lhs


@given(seed=st.integers(0, 2**32 - 1))
def test_selection_inequality_never_violated(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(1, 9)), int(rng.integers(1, 51))
    truth = rng.standard_normal(n)
    preds = {float(k): truth + rng.uniform(0.05, 2) * rng.standard_normal(n) for k in range(m)}
    pseudo = truth + rng.uniform(0, 2) * rng.standard_normal(n)
    assert verify_selection_inequality(preds, pseudo, truth).slack >= -1e-9


def test_bias_variance_overhead_hand_value():
    value = bias_variance_overhead([1.0, 1.0], 1.0, 1.0, m=2, n=100, delta=0.2, gamma_grid=[1.0])
    assert value == pytest.approx(2.0 + 2.0 * (1.0 + math.log(10) / 100), rel=1e-12)
    assert value == pytest.approx(4.04605, abs=1e-5)


def test_bias_variance_overhead_limits():
    gammas = np.geomspace(1e-6, 1e3, 50)
    assert bias_variance_overhead({0: 0.3, 1: 0.7}, 0.0, 0.0, 2, 100, 0.2, gammas) == pytest.approx(0.3, rel=1e-5)
    # min L = 0: decreasing in gamma, so the largest gamma wins
    value = bias_variance_overhead([0.0, 1.0], 0.2, 1.0, 3, 50, 0.1, gammas)
    assert value == pytest.approx((1 + 1 / gammas[-1]) * (0.2 + math.log(30) / 50), rel=1e-12)
    with pytest.raises(ValueError):
        bias_variance_overhead([0.1], -1.0, 1.0, 2, 10, 0.1)
