import numpy as np
import pytest
from scipy.special import digamma, logsumexp

from bdi.kernels import KernelSpec, gram
from bdi.mixture import (
    ComponentPosterior,
    RESP_ACTIVE,
    effective_component_count,
    expected_stick_weights,
    init_responsibilities,
    precision_diag,
    select_mode,
    stick_scores,
    update_q_f,
    update_q_v,
    update_q_z,
)


def _dense_qf(K, b_col, a_col):
    """Reference posterior: C = (K^-1 + diag(b))^-1, mean = C diag(b) a."""
    C = np.linalg.inv(np.linalg.inv(K) + np.diag(b_col))
    return C @ (b_col * a_col), np.diag(C)


def _dense_data_fit(K, b, a):
    """Reference collapsed term summed over dims, zeros in b included."""
    total = 0.0
    for d in range(a.shape[1]):
        w = np.sqrt(b[:, d])
        A = np.eye(K.shape[0]) + (w[:, None] * K) * w[None, :]
        u = w * a[:, d]
        sign, logdet = np.linalg.slogdet(A)
        total += -0.5 * u @ np.linalg.solve(A, u) - 0.5 * logdet
    return total


def test_single_point_posterior():
    # one point, unit effective noise: C = 1/(1/K + 1) ~ 0.5, mean ~ a/2
    g = gram(np.array([[0.0]]), KernelSpec(1.0, jitter=1e-12))
    comp = update_q_f(g, np.ones(1), np.ones((1, 1)), np.array([[2.0]]))
    assert comp.mean[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert comp.cov_diag[0, 0] == pytest.approx(0.5, abs=1e-6)
    # collapsed term: -1/2 * 4 / (2) - 1/2 log(2)
    assert comp.data_fit == pytest.approx(-1.0 - 0.5 * np.log(2.0), abs=1e-6)


def test_update_q_f_matches_dense_oracle():
    rng = np.random.default_rng(0)
    n, d = 18, 2
    X = rng.uniform(-2, 2, size=(n, 2))
    a = rng.normal(size=(n, d))
    resp_col = rng.uniform(0.0, 1.0, size=n)
    resp_col[rng.random(n) < 0.3] = 0.0  # some inactive rows
    H = rng.uniform(0.05, 0.5, size=(n, d))
    g = gram(X, KernelSpec(1.0))
    comp = update_q_f(g, resp_col, H, a)
    K = g.values
    b = resp_col[:, None] / H
    for dd in range(d):
        mean_o, cov_o = _dense_qf(K, b[:, dd], a[:, dd])
        assert np.abs(comp.mean[:, dd] - mean_o).max() < 1e-10
        assert np.abs(comp.cov_diag[:, dd] - cov_o).max() < 1e-10
    assert comp.data_fit == pytest.approx(_dense_data_fit(K, b, a), abs=1e-9)


def test_update_q_f_empty_component_is_prior():
    g = gram(np.array([[0.0], [1.0]]), KernelSpec(1.0))
    comp = update_q_f(g, np.zeros(2), np.ones((2, 1)), np.ones((2, 1)))
    assert np.all(comp.mean == 0.0)
    assert np.allclose(comp.cov_diag[:, 0], np.diag(g.values))
    assert comp.data_fit == 0.0


def test_precision_diag():
    b = precision_diag(np.array([0.5, 0.0, 1.0]), np.full((3, 2), 0.25))
    assert np.allclose(b, np.array([[2.0, 2.0], [0.0, 0.0], [4.0, 4.0]]))
    # responsibilities at the activity threshold are zeroed exactly
    b = precision_diag(np.array([RESP_ACTIVE, 2 * RESP_ACTIVE]), np.ones((2, 1)))
    assert b[0, 0] == 0.0 and b[1, 0] > 0.0


def test_update_q_v_all_mass_on_first():
    resp = np.zeros((4, 2))
    resp[:, 0] = 1.0
    alpha, beta = update_q_v(resp, 100.0)
    assert np.allclose(alpha, [5.0, 1.0])
    assert np.allclose(beta, [100.0, 100.0])


def test_update_q_v_uniform_two_points():
    resp = np.full((2, 2), 0.5)
    alpha, beta = update_q_v(resp, 100.0)
    assert np.allclose(alpha, [2.0, 2.0])
    assert np.allclose(beta, [101.0, 100.0])


def test_stick_scores_match_digamma_formula():
    alpha = np.array([5.0, 2.0, 1.0])
    beta = np.array([103.0, 101.0, 100.0])
    scores = stick_scores(alpha, beta)
    e_log_v = digamma(alpha) - digamma(alpha + beta)
    e_log_1mv = digamma(beta) - digamma(alpha + beta)
    expected = e_log_v + np.concatenate([[0.0], np.cumsum(e_log_1mv[:-1])])
    assert np.allclose(scores, expected, atol=1e-12)


def test_expected_stick_weights_sum_below_one():
    alpha = np.array([5.0, 2.0, 1.0])
    beta = np.array([103.0, 101.0, 100.0])
    w = expected_stick_weights(alpha, beta)
    assert np.all(w > 0)
    assert w.sum() < 1.0
    # first weight is E[v_1] = a/(a+b)
    assert w[0] == pytest.approx(5.0 / 108.0, rel=1e-12)


def _dense_log_resp(a, comps, H, alpha, beta):
    """Reference responsibility computation, straight from the formula."""
    n, d = a.shape
    m = len(comps)
    scores = (digamma(alpha) - digamma(alpha + beta)
              + np.concatenate([[0.0], np.cumsum(
                  (digamma(beta) - digamma(alpha + beta))[:-1])]))
    log_rho = np.zeros((n, m))
    for j, comp in enumerate(comps):
        fit = (-0.5 * ((a - comp.mean) ** 2 + comp.cov_diag) / H
               - 0.5 * np.log(2 * np.pi * H)).sum(axis=1)
        log_rho[:, j] = fit + scores[j]
    return log_rho


def test_update_q_z_matches_dense_formula():
    rng = np.random.default_rng(1)
    n, d, m = 12, 2, 3
    X = rng.uniform(-2, 2, size=(n, 2))
    a = rng.normal(size=(n, d))
    H = rng.uniform(0.1, 0.4, size=(n, d))
    g = gram(X, KernelSpec(1.0))
    resp0 = rng.dirichlet(np.ones(m), size=n)
    comps = [update_q_f(g, resp0[:, j], H, a) for j in range(m)]
    alpha, beta = update_q_v(resp0, 100.0)

    resp = update_q_z(a, comps, H, alpha, beta)
    log_rho = _dense_log_resp(a, comps, H, alpha, beta)
    expected = np.exp(log_rho - logsumexp(log_rho, axis=1, keepdims=True))
    assert np.abs(resp - expected).max() < 1e-12
    assert np.abs(resp.sum(axis=1) - 1.0).max() < 1e-10


def test_update_q_z_single_component_is_ones():
    rng = np.random.default_rng(2)
    n = 8
    X = rng.normal(size=(n, 1))
    a = rng.normal(size=(n, 1))
    H = np.full((n, 1), 0.2)
    g = gram(X, KernelSpec(1.0))
    comps = [update_q_f(g, np.ones(n), H, a)]
    alpha, beta = update_q_v(np.ones((n, 1)), 100.0)
    resp = update_q_z(a, comps, H, alpha, beta)
    assert np.allclose(resp, 1.0)


def test_update_q_z_extreme_scales_stay_finite():
    # very small effective noise produces huge log densities; rows must
    # still normalize exactly
    rng = np.random.default_rng(3)
    n = 10
    X = rng.normal(size=(n, 1))
    a = rng.normal(size=(n, 2))
    g = gram(X, KernelSpec(1.0))
    H = np.full((n, 2), 1e-14)
    resp0 = rng.dirichlet(np.ones(3), size=n)
    comps = [update_q_f(g, resp0[:, j], H, a) for j in range(3)]
    alpha, beta = update_q_v(resp0, 100.0)
    resp = update_q_z(a, comps, H, alpha, beta)
    assert np.all(np.isfinite(resp))
    assert np.abs(resp.sum(axis=1) - 1.0).max() < 1e-10


def test_select_mode_prefers_smallest_total_variance():
    assert select_mode(np.array([0.6, 0.3, 0.9])) == 1
    # ties break toward the lowest index
    assert select_mode(np.array([0.4, 0.4])) == 0


def test_select_mode_rejects_non_finite():
    with pytest.raises(ValueError):
        select_mode(np.array([0.2, np.nan]))
    with pytest.raises(ValueError):
        select_mode(np.array([]))


def test_effective_component_count():
    resp = np.zeros((10, 4))
    resp[:6, 0] = 1.0
    resp[6:, 2] = 1.0
    assert effective_component_count(resp) == 2
    # sub-threshold mass never counts
    resp[:, 3] = 1e-13
    assert effective_component_count(resp) == 2


def test_init_responsibilities_rows_normalized():
    rng = np.random.default_rng(4)
    resp = init_responsibilities(50, 5, rng)
    assert resp.shape == (50, 5)
    assert np.abs(resp.sum(axis=1) - 1.0).max() < 1e-10
    assert np.all(resp >= 0)


def test_component_posterior_slots():
    assert not hasattr(ComponentPosterior(
        np.zeros((1, 1)), np.zeros((1, 1)), 0.0, [], [], [], []), "__dict__")
