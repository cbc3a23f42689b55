import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from goldisim.compositor import generate_dataset, phantom_normal
from goldisim.detector import DetectorParams, window_samples
from goldisim.errors import DiagnosticError, ParameterError
from goldisim.training import (SGD, Adam, NvrmSGD, OptimizerConfig, exact_second_order_risk, fit_logistic,
                               forgetting_score, gradient, logistic_grad, logistic_hessian, logistic_loss, loss,
                               nvrm_risk_check, perturbed_risk_check, read_training_log, train,
                               write_training_log)


@pytest.fixture(scope="module")
def data():
    normals = [phantom_normal(128, 128, s) for s in range(8)]
    tr = generate_dataset(normals[:6], None, seed=1)
    va = generate_dataset(normals[6:], None, seed=2)
    return tr, va


def _rand_problem(seed, n=40, d=4):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.normal(size=(n, d)), np.ones(n)])
    y = (rng.random(n) < 0.4).astype(float)
    return X, y, rng.normal(size=d + 1)


def test_zero_params_loss_is_ln2(data):
    assert loss(DetectorParams.zeros(), data[0]) == pytest.approx(math.log(2), abs=1e-15)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    X, y, th = _rand_problem(seed)
    g = logistic_grad(th, X, y)
    h = 1e-6
    fd = np.array([(logistic_loss(th + h * e, X, y) - logistic_loss(th - h * e, X, y)) / (2 * h)
                   for e in np.eye(len(th))])
    assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(g), 1e-3)


def test_hessian_matches_gradient_differences():
    X, y, th = _rand_problem(3)
    H = logistic_hessian(th, X)
    h = 1e-6
    fd = np.column_stack([(logistic_grad(th + h * e, X, y) - logistic_grad(th - h * e, X, y)) / (2 * h)
                          for e in np.eye(len(th))])
    assert np.allclose(H, fd, atol=1e-8)
    assert np.allclose(H, H.T)


def test_nvrm_b0_equals_sgd():
    X, y, th = _rand_problem(5)
    a = SGD(0.5)
    b = NvrmSGD(0.5, 0.0, np.random.default_rng(0))
    ta, tb = th.copy(), th.copy()
    for _ in range(50):
        ta = a.step(ta, lambda t: logistic_grad(t, X, y))
        tb = b.step(tb, lambda t: logistic_grad(t, X, y))
        assert np.max(np.abs(ta - tb)) <= 1e-15


def test_nvrm_step_uses_perturbed_gradient():
    X, y, th = _rand_problem(6)
    eps = np.full_like(th, 0.01)
    got = NvrmSGD(0.1, 0.01, np.random.default_rng(0)).step(th, lambda t: logistic_grad(t, X, y), eps=eps)
    assert np.array_equal(got, th - 0.1 * logistic_grad(th + eps, X, y))


def test_adam_first_step_is_lr_sign():
    X, y, th = _rand_problem(7)
    g = logistic_grad(th, X, y)
    new = Adam(0.01).step(th, lambda t: logistic_grad(t, X, y))
    assert np.allclose(th - new, 0.01 * np.sign(g), atol=1e-8)


def test_config_validation():
    with pytest.raises(ParameterError):
        OptimizerConfig(kind="rmsprop")
    with pytest.raises(ParameterError):
        OptimizerConfig(learning_rate=0)
    with pytest.raises(ParameterError):
        OptimizerConfig(variability_scale_b=-1)
    with pytest.raises(ParameterError):
        OptimizerConfig(epochs=-1)


def test_train_zero_epochs(data):
    p0 = DetectorParams.zeros()
    rep = train(p0, data[0], data[1], OptimizerConfig(epochs=0))
    assert rep.params is p0 and rep.train_loss == [] and rep.selected_epoch == 0


@pytest.mark.parametrize("kind,lr", [("sgd", 1.0), ("nvrm_sgd", 1.0), ("adam", 0.1)])
def test_train_reduces_loss_and_is_deterministic(data, kind, lr):
    tr, va = data
    cfg = OptimizerConfig(kind, lr, 64, 5, 0.01, seed=3)
    a = train(DetectorParams.zeros(), tr, va, cfg)
    b = train(DetectorParams.zeros(), tr, va, cfg)
    assert a.params.digest() == b.params.digest()
    assert a.train_loss[-1] < math.log(2)
    assert a.val_scores[a.selected_epoch - 1] == max(a.val_scores)
    # earliest epoch wins ties
    assert a.selected_epoch == a.val_scores.index(max(a.val_scores)) + 1


def test_custom_val_fn_selects_epoch(data):
    tr, _ = data
    scores = iter([0.1, 0.5, 0.5, 0.2])
    rep = train(DetectorParams.zeros(), tr, None, OptimizerConfig("sgd", 1.0, 64, 4),
                val_fn=lambda p, v: next(scores), keep_trajectory=True)
    assert rep.selected_epoch == 2 and rep.trajectory


def test_training_log_roundtrip(tmp_path, data):
    rep = train(DetectorParams.zeros(), data[0], data[1], OptimizerConfig("sgd", 1.0, 64, 3))
    write_training_log(tmp_path / "log.csv", rep)
    rows = read_training_log(tmp_path / "log.csv")
    assert [r["epoch"] for r in rows] == [1, 2, 3]
    assert [r["val_fauc"] for r in rows] == rep.val_scores


def test_forgetting_zero_for_same_params(data):
    p = DetectorParams(np.linspace(-1, 1, 7), 0.3)
    assert forgetting_score(p, p, data[0]) == 0.0
    assert forgetting_score(DetectorParams.zeros(), p, data[0], loss_fn=lambda q, d: float(q.bias)) == -0.3


def test_fit_logistic_is_stationary(data):
    p = fit_logistic(data[0])
    assert np.linalg.norm(gradient(p, data[0])) < 1e-8


def test_risk_check_quadratic_oracle():
    # L(theta) = 0.5 theta^T A theta: E[L(theta + eps)] = L + b^2 tr(A) / 2 exactly
    A = np.diag([1.0, 2.0, 3.0])
    th = np.zeros(3)
    lb = lambda T: 0.5 * np.einsum("ij,jk,ik->i", T, A, T)
    mc, taylor = perturbed_risk_check(lb, np.zeros(3), np.trace(A), th, 0.1, 200_000, seed=1)
    assert mc == pytest.approx(0.5 * 0.01 * 6, rel=0.02)
    assert taylor == pytest.approx(0.01 * 6)
    with pytest.raises(DiagnosticError):
        perturbed_risk_check(lb, np.ones(3), 6.0, th, 0.1, 10)


def test_nvrm_risk_at_optimum(data):
    p = fit_logistic(data[0])
    mc, taylor = nvrm_risk_check(p, data[0], 0.01, 20_000, seed=2)
    assert abs(mc - taylor) <= 0.05 * taylor
    ex = exact_second_order_risk(p, data[0], 0.01)
    assert abs(mc - ex) <= abs(mc - taylor) + 1e-4
    with pytest.raises(DiagnosticError):
        nvrm_risk_check(DetectorParams.zeros(), data[0], 0.01, 10)


def test_window_loss_uses_cached_sample(data):
    s = window_samples(data[0])
    assert loss(DetectorParams.zeros(), s) == loss(DetectorParams.zeros(), data[0])
