import numpy as np
import pytest

from gpmhe.mhe import (EstimatorConfig, HorizonBuffer, LinearShooting,
                       MovingHorizonEstimator, WeightConfig, default_weights, solve)
from gpmhe.models import ModelKind, NominalParams, f_rk4, hover_state, output_h


def kalman_filter(ys, a, q, r, p0, x0=0.0):
    xp, pp, out = x0, p0, []
    for y in ys:
        k = pp / (pp + r)
        xf = xp + k * (y - xp)
        out.append(xf)
        xp, pp = a * xf, a * a * (1 - k) * pp + q
    return np.array(out)


@pytest.fixture(scope="module")
def linear_data():
    rng = np.random.default_rng(1)
    q, r = 0.04, 0.25
    x, ys = 0.0, []
    for _ in range(500):
        ys.append(x + np.sqrt(r) * rng.standard_normal())
        x += np.sqrt(q) * rng.standard_normal()
    return np.array(ys), q, r


def run_linear(ys, q, r, arrival, nodes=10):
    cfg = EstimatorConfig("d", nodes=nodes, weights=WeightConfig([r], [q], [1.0]),
                          damping=0.0, max_iter=20, arrival=arrival)
    est = MovingHorizonEstimator(cfg, model=LinearShooting([[1.0]], [[1.0]]), x0=[0.0])
    return np.array([est.step([y], [], 0.01 * k)[0][0] for k, y in enumerate(ys)])


def test_kalman_prior_arrival_reproduces_filter(linear_data):
    ys, q, r = linear_data
    mhe = run_linear(ys, q, r, "ekf")
    kf = kalman_filter(ys, 1.0, q, r, 1.0)
    assert np.max(np.abs(mhe[1:] - kf[1:])) < 1e-6


def test_constant_arrival_is_close_but_not_exact(linear_data):
    ys, q, r = linear_data
    err = np.abs(run_linear(ys, q, r, "constant") - kalman_filter(ys, 1.0, q, r, 1.0))
    assert err.max() < 0.5


def test_noiseless_hover_is_recovered():
    params = NominalParams()
    x = hover_state("d", (0.5, -0.2, 2.0))
    x[7:10] = [0.3, 0.0, 0.0]
    cfg = EstimatorConfig("d", nodes=10, max_iter=10,
                          weights=default_weights("d", 0.01, 0.01, 0.01))
    est = MovingHorizonEstimator(cfg, x0=x)
    for k in range(30):
        xh, _, diag = est.step(output_h("d", x, [9.81]), [9.81], 0.01 * k)
        assert not diag["degraded"]
        np.testing.assert_allclose(xh, x, atol=1e-6)
        x = f_rk4("d", x, [9.81], params, 0.01)


def test_payload_estimate_respects_bounds():
    params = NominalParams()
    x = hover_state("d", (0, 0, 2))
    cfg = EstimatorConfig("d", nodes=8, estimate_payload=True, payload_bounds=(0.0, 0.2),
                          weights=default_weights("d", 0.01, 0.01, 0.01), arrival="ekf")
    est = MovingHorizonEstimator(cfg, x0=x)
    # thrust for a 0.5 kg payload, beyond the bound
    for k in range(60):
        _, mp, _ = est.step(output_h("d", x, [1.5 * 9.81]), [1.5 * 9.81], 0.01 * k)
        assert 0.0 <= mp <= 0.2
    assert mp == pytest.approx(0.2, abs=1e-3)


def test_payload_estimate_converges_to_truth():
    params = NominalParams()
    x = hover_state("d", (0, 0, 2))
    w = default_weights("d", 0.01, 0.01, 0.01, process={"v": 0.005})
    cfg = EstimatorConfig("d", nodes=20, estimate_payload=True, weights=w, arrival="ekf")
    est = MovingHorizonEstimator(cfg, x0=x)
    for k in range(300):
        _, mp, _ = est.step(output_h("d", x, [1.3 * 9.81]), [1.3 * 9.81], 0.01 * k)
    assert mp == pytest.approx(0.3, abs=0.01)


def test_buffer_rejects_bad_timestamps():
    buf = HorizonBuffer(3, 0.01, np.zeros(1), np.ones(1))
    buf.push_frame([0.0], [], 0.0)
    with pytest.raises(ValueError):
        buf.push_frame([0.0], [], 0.0)
    with pytest.raises(ValueError):
        buf.push_frame([0.0], [], 0.05)


def test_buffer_keeps_capacity_plus_one_frames():
    buf = HorizonBuffer(3, 0.01, np.zeros(1), np.ones(1))
    for k in range(10):
        buf.push_frame([float(k)], [], 0.01 * k)
    assert len(buf) == 4
    assert buf.arrival_updates == 6


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig("k", estimate_payload=True)
    with pytest.raises(ValueError):
        EstimatorConfig("d", nodes=1)
    with pytest.raises(ValueError):
        EstimatorConfig("d", arrival="smoothed")
    with pytest.raises(ValueError):
        WeightConfig([0.0], [1.0], [1.0])


def test_gp_estimator_requires_triplet_and_accelerometer():
    with pytest.raises(ValueError):
        MovingHorizonEstimator(EstimatorConfig("gp"))
    est = MovingHorizonEstimator(EstimatorConfig("d"))
    with pytest.raises(ValueError):
        est.step(np.zeros(9), [9.81], 0.0)


def test_solve_needs_two_frames():
    buf = HorizonBuffer(3, 0.01, np.zeros(1), np.ones(1))
    buf.push_frame([0.0], [], 0.0)
    cfg = EstimatorConfig("d", weights=WeightConfig([1.0], [1.0], [1.0]))
    with pytest.raises(ValueError):
        solve(buf, cfg, model=LinearShooting([[1.0]], [[1.0]]))


def test_default_weights_shapes():
    for kind, ny, nx in (("k", 9, 16), ("d", 7, 13), ("gp", 10, 16)):
        w = default_weights(kind, 1.0, 1.72, 0.1)
        assert w.R.shape == (ny,) and w.Q.shape == (nx,) and w.Q_arrival.shape == (nx,)
    w = default_weights("gp", 1.0, 1.0, 0.1, gp_var=np.array([1e-6, 0.5, 0.02]))
    np.testing.assert_allclose(w.R[-3:], [0.01, 0.5, 0.02])
    assert ModelKind.parse("gp") is ModelKind.GP
