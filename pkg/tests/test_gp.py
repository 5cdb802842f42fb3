import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gpmhe.gp import (DenseGp, GpTriplet, RbfHyperparams, TrainingSet, fit_dense,
                      fit_triplet, inducing_quantiles, log_marginal_likelihood, sparsify)

# values produced by an explicit-inverse oracle (z = 0, 1, 2; c = 0, 1, 0;
# L = 1, signal 1, noise 0.01) evaluated at z* = 0.5, 1, 3
FROZEN_MEAN = [0.6616675750075639, 0.97279680894045, -0.5216094854799422]
FROZEN_VAR = [0.025020486661310515, 0.009727968089404904, 0.5307832963306736]
FROZEN_LML = -3.617491942210392


def oracle(z, c, zs, hp):
    """Posterior via explicit matrix inverse (independent of the Cholesky path)."""
    def k(a, b):
        return hp.signal_var * np.exp(-0.5 * np.subtract.outer(a, b) ** 2 / hp.length_scale ** 2)
    kinv = np.linalg.inv(k(z, z) + hp.noise_var * np.eye(len(z)))
    ks = k(z, zs)
    return ks.T @ kinv @ c, hp.signal_var - np.einsum("ij,ik,kj->j", ks, kinv, ks)


def test_frozen_posterior():
    hp = RbfHyperparams(1.0, 1.0, 0.01)
    gp = DenseGp.from_hyperparams(TrainingSet(np.array([0., 1, 2]), np.array([0., 1, 0])), hp)
    mean, var = gp.predict(np.array([0.5, 1.0, 3.0]))
    np.testing.assert_allclose(mean, FROZEN_MEAN, rtol=0, atol=1e-12)
    np.testing.assert_allclose(var, FROZEN_VAR, rtol=0, atol=1e-12)
    assert gp.log_marginal_likelihood() == pytest.approx(FROZEN_LML, abs=1e-12)


small_sets = st.integers(2, 10).flatmap(lambda n: st.tuples(
    arrays(float, n, elements=st.floats(-3, 3), unique=True).filter(
        lambda z: np.min(np.diff(np.sort(z))) > 0.05),
    arrays(float, n, elements=st.floats(-2, 2)),
    st.floats(0.3, 3.0), st.floats(0.1, 4.0), st.floats(0.01, 0.5)))


@given(small_sets)
def test_dense_matches_direct_oracle(case):
    z, c, ell, sf2, sn2 = case
    hp = RbfHyperparams(ell, sf2, sn2)
    gp = DenseGp.from_hyperparams(TrainingSet(z, c), hp)
    zs = np.linspace(-4, 4, 7)
    mean, var = gp.predict(zs, clamp=False)
    m_ref, v_ref = oracle(z, c, zs, hp)
    np.testing.assert_allclose(mean, m_ref, rtol=0, atol=1e-10)
    np.testing.assert_allclose(var, v_ref, rtol=0, atol=1e-10)


@given(small_sets)
def test_sparse_with_all_points_matches_dense(case):
    z, c, ell, sf2, sn2 = case
    hp = RbfHyperparams(ell, sf2, sn2)
    gp = DenseGp.from_hyperparams(TrainingSet(z, c), hp)
    sp = sparsify(gp, inducing=z)
    zs = np.linspace(-4, 4, 9)
    np.testing.assert_allclose(sp.predict(zs)[0], gp.predict(zs)[0], atol=1e-6)


@given(small_sets)
def test_variance_bounded_by_prior(case):
    z, c, ell, sf2, sn2 = case
    gp = DenseGp.from_hyperparams(TrainingSet(z, c), RbfHyperparams(ell, sf2, sn2))
    _, var = gp.predict(np.linspace(-5, 5, 21))
    assert np.all(var >= 0) and np.all(var <= sf2 + 1e-12)


def test_lml_gradient_matches_central_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(5, 30))
        z = rng.uniform(-3, 3, n)
        c = np.sin(z) + 0.1 * rng.standard_normal(n)
        theta = rng.uniform([-1, -1, -3], [1, 1, -0.5])
        _, grad = log_marginal_likelihood(theta, z, c)
        h = 1e-5
        fd = np.array([(log_marginal_likelihood(theta + h * e, z, c)[0]
                        - log_marginal_likelihood(theta - h * e, z, c)[0]) / (2 * h)
                       for e in np.eye(3)])
        worst = max(worst, np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8)))
    assert worst <= 1e-4


def test_fit_recovers_reasonable_model():
    rng = np.random.default_rng(2)
    z = np.sort(rng.uniform(-3, 3, 150))
    c = np.sin(z) + 0.05 * rng.standard_normal(z.size)
    gp = fit_dense(TrainingSet(z, c))
    hp = gp.hyperparams
    assert 0.3 < hp.length_scale < 5.0
    assert hp.noise_var == pytest.approx(0.0025, rel=0.6)
    mean, _ = gp.predict(np.array([-1.0, 0.5]))
    np.testing.assert_allclose(mean, np.sin([-1.0, 0.5]), atol=0.05)
    assert gp.log_marginal_likelihood() > log_marginal_likelihood(
        RbfHyperparams(0.01, 1.0, 1.0).log_params, z, c)[0]


def test_fit_zero_targets_is_flat():
    gp = fit_dense(TrainingSet(np.linspace(0, 1, 5), np.zeros(5)))
    np.testing.assert_allclose(gp.predict(np.array([0.3]))[0], 0.0)


def test_inducing_quantiles_are_sorted_and_unique():
    u = inducing_quantiles(np.array([1.0, 1.0, 1.0, 2.0]), 4)
    assert np.all(np.diff(u) > 0)
    assert u[0] == 1.0 and u[-1] >= 2.0 - 1e-9


def test_invalid_inputs():
    with pytest.raises(ValueError):
        RbfHyperparams(0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        TrainingSet(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        fit_dense(TrainingSet(np.zeros(1), np.zeros(1)))


def _triplet():
    rng = np.random.default_rng(5)
    sets = []
    for shift in (0.0, 1.0, -1.0):
        z = rng.uniform(-2, 2, 80)
        sets.append(TrainingSet(z, 0.3 * z + shift + 0.05 * rng.standard_normal(80)))
    return fit_triplet(sets, m=10)


def test_triplet_save_load_round_trip(tmp_path):
    gpt = _triplet()
    path = gpt.save(tmp_path / "gp.json")
    back = GpTriplet.load(path)
    a = np.array([[0.1, -0.5, 1.2], [1.0, 0.0, -1.0]])
    np.testing.assert_array_equal(gpt.predict(a)[0], back.predict(a)[0])
    assert gpt.channel_variance.shape == (3,)
    assert json.loads(path.read_text())["format"] == "gpmhe-sparse-gp"


def test_triplet_load_rejects_other_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        GpTriplet.load(p)
