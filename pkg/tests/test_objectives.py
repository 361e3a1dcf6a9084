import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenforecast import discriminator as Dm
from scenforecast import objectives as O
from scenforecast import tensor as T
from oracles import numeric_grad, rel_err

RNG = np.random.default_rng(21)


def test_weights_defaults_and_validation():
    w = O.LossWeights()
    assert (w.lambda_va, w.lambda_au, w.lambda_ad, w.epsilon, w.n_f, w.n_n) == (0.5, 0.5, 1.0, 0.05, 8, 2)
    with pytest.raises(ValueError, match="lambda_gp"):
        O.LossWeights(lambda_gp=-1.0)


def test_variety_single_candidate():
    Y, X = RNG.random((4, 2)), RNG.random((4, 2))
    assert abs(O.variety_loss(Y, [X]).item() - np.sum((Y - X) ** 2)) < 1e-14


def test_variety_exact_candidate_is_zero():
    Y = RNG.random((4, 2))
    assert O.variety_loss(Y, [RNG.random((4, 2)), Y.copy()]).item() == 0.0


def test_variety_min_of_three():
    Y = RNG.random((3, 4, 2))
    cands = [RNG.random((3, 4, 2)) for _ in range(3)]
    per = np.array([[np.sum((Y[b] - c[b]) ** 2) for c in cands] for b in range(3)])
    assert abs(O.variety_loss(Y, cands).item() - per.min(1).mean()) < 1e-12


def test_variety_gradient_only_through_argmin():
    Y = np.zeros((4, 1))
    cs = [T.Tensor(np.full((4, 1), v), requires_grad=True) for v in (0.5, 0.1, 0.9)]
    grads = T.grad(O.variety_loss(Y, cs), cs)
    assert np.all(grads[0].data == 0) and np.all(grads[2].data == 0) and np.all(grads[1].data != 0)


def test_variety_empty():
    with pytest.raises(ValueError):
        O.variety_loss(np.zeros(2), [])


def test_auxiliary_decay():
    Y, X = np.zeros((2, 3)), np.ones((2, 3))
    assert O.auxiliary_loss(Y, [X], 0, 0.05).item() == 6.0
    assert abs(O.decay_factor(100, 0.05) - math.exp(-5)) < 1e-15
    assert abs(O.auxiliary_loss(Y, [X], 100, 0.05).item() - 6 * math.exp(-5)) < 1e-12
    assert O.auxiliary_loss(Y, [X], 1e6, 0.05).item() < 1e-300
    with pytest.raises(ValueError):
        O.decay_factor(-1, 0.05)


def test_adversarial():
    assert O.adversarial_loss_F(np.zeros(4)).item() == 0.0
    assert O.adversarial_loss_F(np.ones(4)).item() == -1.0
    s = RNG.normal(size=7)
    assert abs(O.adversarial_loss_F(s).item() + s.mean()) < 1e-15
    with pytest.raises(ValueError):
        O.adversarial_loss_F(np.zeros(0))


def test_remedy():
    Y = np.zeros((1,))
    assert O.remedy_term(Y, [Y, Y]).item() == 0.0
    assert O.remedy_term(Y, [np.array([1.0]), np.array([3.0])]).item() == 5.0
    assert O.remedy_term(Y, [np.array([2.0])]).item() == 4.0
    with pytest.raises(ValueError):
        O.remedy_term(Y, [])


def _parts(v=1.0):
    c = lambda x: T.Tensor(np.array(x), requires_grad=True)  # noqa: E731
    return O.ForecasterLossParts(c(v), c(v), c(v), c(v))


def test_forecaster_loss_weighted_sum():
    w = O.LossWeights()
    assert O.forecaster_loss(_parts(0.0), w).item() == 0.0
    assert O.forecaster_loss(_parts(1.0), w).item() == 3.0


def test_forecaster_loss_zero_adversarial_weight_cuts_gradient():
    p = _parts(0.7)
    grads = T.grad(O.forecaster_loss(p, O.LossWeights(lambda_ad=0.0)),
                   [p.variety, p.auxiliary, p.adversarial, p.remedy])
    assert [g.item() for g in grads] == [0.5, 0.5, 0.0, 1.0]


def test_hinge_boundaries():
    lp, lm = O.hinge_loss_D(np.array([-1.0]), np.array([2.0]))
    assert lp.item() == 0.0 and lm.item() == 0.0
    lp, lm = O.hinge_loss_D(np.array([0.0]), np.array([0.0]))
    assert lp.item() == 1.0 and lm.item() == 1.0
    lp, lm = O.hinge_loss_D(np.array([-3.0, 1.0]), np.array([0.5, 1.5]))
    assert lp.item() == 1.0 and lm.item() == 0.25
    with pytest.raises(ValueError):
        O.hinge_loss_D(np.zeros(0), np.zeros(1))


def test_penalty_constant_D():
    assert O.gradient_penalty(RNG.random((3, 4)), lambda x: T.Tensor(np.zeros(3))).item() == 0.0


def test_penalty_linear_D():
    w = RNG.normal(size=4)
    gp = O.gradient_penalty(RNG.random((5, 4)), lambda x: T.sum(x * w, axis=1))
    assert abs(gp.item() - np.linalg.norm(w)) < 1e-12
    sq = O.gradient_penalty(RNG.random((5, 4)), lambda x: T.sum(x * w, axis=1), squared=True)
    assert abs(sq.item() - np.dot(w, w)) < 1e-12


def test_penalty_conv_D_matches_finite_differences():
    m = Dm.Discriminator(Dm.DiscriminatorConfig(n_sites=2, length=16, channels=(4, 4), minibatch_std=False),
                         np.random.default_rng(3))
    real = RNG.random((3, 16, 2))
    gp = O.gradient_penalty(real, m).item()
    norms = []
    for b in range(3):
        x = real[b:b + 1].copy()

        def f():
            with T.no_grad():
                return m.forward(x).item()

        norms.append(np.linalg.norm(numeric_grad(f, x)))
    assert rel_err(gp, np.mean(norms)) < 1e-3


def test_penalty_is_differentiable_in_params():
    m = Dm.Discriminator(Dm.DiscriminatorConfig(n_sites=1, length=16, channels=(3, 3)), np.random.default_rng(4))
    real = RNG.random((2, 16, 1))
    K = m.params["conv1.K"]
    (g,) = T.grad(O.gradient_penalty(real, m), [K])

    def f():
        return O.gradient_penalty(real, m).item()

    assert rel_err(g.data, numeric_grad(f, K.data)) < 1e-4


def test_unsupported_penalty_input():
    with pytest.raises(ValueError, match="unavailable"):
        O.gradient_penalty(np.array(1.0), lambda x: x * 2.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 10 ** 6))
def test_variety_le_mean_and_nonnegative(n_f, B, seed):
    g = np.random.default_rng(seed)
    Y = g.random((B, 3, 2))
    cands = [g.random((B, 3, 2)) for _ in range(n_f)]
    va = O.variety_loss(Y, cands).item()
    au = O.auxiliary_loss(Y, cands, 0, 0.05).item()
    assert 0 <= va <= au + 1e-12
    assert O.remedy_term(Y, cands).item() >= 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_hinge_zero_iff_margins_cleared(fake, real):
    lp, lm = O.hinge_loss_D(np.array(fake), np.array(real))
    assert (lp.item() == 0.0) == all(f <= -1 for f in fake)
    assert (lm.item() == 0.0) == all(r >= 1 for r in real)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 5), st.floats(0, 5), st.floats(-5, 5))
def test_forecaster_loss_linear_in_components(a, b, t):
    w = O.LossWeights()
    base = O.forecaster_loss(_parts(1.0), w).item()
    p = _parts(1.0)
    p.adversarial = T.Tensor(np.array(1.0 + t))
    assert abs(O.forecaster_loss(p, w).item() - (base + t * w.lambda_ad)) < 1e-9
