import math

import numpy as np
import pytest
from scipy.linalg import expm, solve_discrete_are, solve_discrete_lyapunov

from cpbrl import classical as cl
from cpbrl.dynamics import (CART_MASS, DT, GRAVITY, POLE_HALF_LENGTH, POLE_MASS, Batch, State, Transition,
                            TrueDynamics, run_episode)
from cpbrl.surrogate import penalty

PHI = (1 + math.sqrt(5)) / 2


class MarginalPlant:
    """Second-order plant with one step of input delay.

    State is ``(y_t, y_{t-1}, u_{t-1}, 0)`` and ``y_{t+1} = p y_t - q y_{t-1} + b u_{t-1}``.
    Under ``u = -k y`` the closed-loop poles have squared modulus ``q + b k``,
    so the loop is marginally stable at ``k = (1 - q) / b`` and oscillates with
    period ``2 pi / omega`` where ``p = 2 cos(omega)``.
    """

    def __init__(self, period=20.0, q=0.5, b=-0.05):
        self.p = 2 * math.cos(2 * math.pi / period)
        self.q, self.b = q, b

    @property
    def k_c(self):
        return (1 - self.q) / self.b

    def step(self, x, failed, a):
        y = self.p * x[:, 0] - self.q * x[:, 1] + self.b * x[:, 2]
        nxt = np.column_stack([y, x[:, 0], a, np.zeros(len(x))])
        return nxt, failed, np.zeros(len(x))


def linear_batch(U0, V0, n=400, seed=0):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(n, 4))
    A = rng.uniform(-10, 10, n)
    S2 = S @ U0.T + np.outer(A, V0)
    return Batch([Transition(State.from_array(s), float(a), State.from_array(s2), 0.0)
                  for s, a, s2 in zip(S, A, S2)])


def linearized_cartpole():
    mt = CART_MASS + POLE_MASS
    L = POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS / mt)
    ml = POLE_MASS * POLE_HALF_LENGTH
    A = np.zeros((4, 4))
    A[0, 1] = A[2, 3] = 1.0
    A[1, 0] = GRAVITY / L
    A[3, 0] = -ml * GRAVITY / (mt * L)
    B = np.array([0.0, -1.0 / (mt * L), 0.0, 1.0 / mt + ml / (mt * mt * L)])
    M = np.zeros((5, 5))
    M[:4, :4], M[:4, 4] = A, B
    E = expm(M * DT)
    return E[:4, :4], E[:4, 4]


# DARE ---------------------------------------------------------------------
def test_scalar_dare():
    P, K = cl.solve_dare(1.0, 1.0, 1.0, 1.0)
    assert abs(P[0, 0] - PHI) <= 1e-10
    assert abs(K[0, 0] - PHI / (PHI + 1)) <= 1e-10


def test_dare_matches_scipy():
    rng = np.random.default_rng(4)
    U = rng.normal(scale=0.6, size=(4, 4))
    V = rng.normal(size=(4, 1))
    Q, R = np.diag([10.0, 1, 1, 1]), np.array([[0.1]])
    P, K = cl.solve_dare(U, V, Q, R)
    ref = solve_discrete_are(U, V, Q, R)
    assert np.max(np.abs(P - ref)) <= 1e-8 * max(1.0, np.max(np.abs(ref)))
    assert cl.dare_residual(P, U, V, Q, R) <= 1e-9


def test_dare_without_control_is_lyapunov():
    U = np.array([[0.5, 0.2], [-0.1, 0.7]])
    Q = np.eye(2)
    P, K = cl.solve_dare(U, np.zeros((2, 1)), Q, 1.0)
    assert np.allclose(P, solve_discrete_lyapunov(U.T, Q), atol=1e-9)
    assert np.all(K == 0.0)


def test_identity_dare_matches_fixed_point():
    I = np.eye(4)
    P, _ = cl.solve_dare(I, I, I, I)
    X = I.copy()
    for _ in range(200):
        X = I + X - X @ np.linalg.inv(I + X) @ X
    assert np.max(np.abs(P - X)) <= 1e-9


def test_dare_nonconvergence_reported():
    with pytest.raises(cl.NonConvergenceError):
        cl.solve_dare(np.diag([1.5, 1.2]), np.zeros((2, 1)), np.eye(2), 1.0, max_iter=50)


# identification and LQR ---------------------------------------------------
def test_fit_linear_model_recovers_system():
    rng = np.random.default_rng(8)
    U0, V0 = rng.normal(size=(4, 4)), rng.normal(size=4)
    lm = cl.fit_linear_model(linear_batch(U0, V0))
    assert np.max(np.abs(lm.U - U0)) <= 1e-8
    assert np.max(np.abs(lm.V[:, 0] - V0)) <= 1e-8
    assert lm.residual < 1e-8


def test_repeated_transition_is_rank_deficient():
    t = Transition(State(0.1, 0, 0.2, 0), 1.0, State(0.11, 0.1, 0.2, 0.01), -0.1)
    with pytest.raises(cl.RankDeficiencyError):
        cl.fit_linear_model(Batch([t] * 50))


def test_linear_model_roundtrip(tmp_path):
    lm = cl.LinearModel(np.eye(4) * 0.5, np.ones(4), 0.25)
    lm.save(tmp_path / "lm.json")
    again = cl.LinearModel.load(tmp_path / "lm.json")
    assert np.array_equal(again.U, lm.U) and np.array_equal(again.V, lm.V) and again.residual == 0.25


def test_lqr_on_analytic_linearization():
    U, V = linearized_cartpole()
    pol = cl.lqr_policy(cl.LinearModel(U, V), cl.LqrWeights(np.eye(4), np.eye(1)))
    traj = run_episode(pol, State(0.1, 0, 0, 0), 100)
    assert not traj[-1].s_next.failed
    assert abs(traj[-1].s_next.theta) < 0.02


def test_lqr_zero_q_gives_zero_gain():
    pol = cl.lqr_policy(cl.LinearModel(np.diag([0.9, 0.5, 0.3, 0.1]), np.ones(4)),
                        cl.LqrWeights(np.zeros((4, 4)), np.eye(1)))
    assert np.all(pol.gains == 0.0)


def test_lqr_from_batch(batch, states):
    lm = cl.fit_linear_model(batch)
    w = cl.LqrWeights()
    P, K = cl.solve_dare(lm.U, lm.V, w.Q, w.R)
    assert cl.dare_residual(P, lm.U, lm.V, w.Q, w.R) <= 1e-9
    assert cl.spectral_radius(lm.U - lm.V @ K) < 1.0
    g = cl.lqr_policy(lm).gains
    # same sign pattern and ordering as the reference gains (38.8, 10.1, 2.8, 3.9)
    assert np.all(g > 0) and np.argmax(g) == 0
    assert np.isfinite(lm.residual) and lm.residual < 2.0
    assert penalty(cl.lqr_policy(lm), "system", states) <= 5.0


def test_weights_validated():
    with pytest.raises(ValueError):
        cl.LqrWeights(np.diag([1.0, -1, 1, 1]))
    with pytest.raises(ValueError):
        cl.LqrWeights(R=[[0.0]])


# Ziegler-Nichols --------------------------------------------------------------
def test_find_critical_on_marginal_plant():
    plant = MarginalPlant(period=20.0)
    cfg = cl.CriticalSearch(bounds=(-30.0, 0.0), start=(0.01, 0.0, 0.0, 0.0), max_steps=400)
    cp = cl.find_critical(0, plant, cfg)
    assert cp.k_c == pytest.approx(plant.k_c, rel=0.05)
    assert cp.p_c == pytest.approx(20.0, rel=0.05)


def test_find_critical_outside_bounds():
    cfg = cl.CriticalSearch(bounds=(-5.0, 0.0), start=(0.01, 0.0, 0.0, 0.0), max_steps=400)
    with pytest.raises(cl.SearchError):
        cl.find_critical(0, MarginalPlant(), cfg)


def test_classify_oscillation_labels():
    t = np.arange(400)
    wave = np.sin(2 * np.pi * t / 20 + 0.3)
    assert cl.classify_oscillation(wave)[0] == "sustained"
    assert cl.classify_oscillation(wave)[1] == pytest.approx(20.0, abs=0.5)
    assert cl.classify_oscillation(wave * 0.9 ** (t / 20))[0] == "decaying"
    assert cl.classify_oscillation(wave * 1.2 ** (t / 20))[0] == "growing"
    assert cl.classify_oscillation(np.exp(-t / 50.0))[0] == "none"
    assert cl.classify_oscillation(wave[:30], failed_at=30)[0] == "unstable"


def test_theta_critical_point_on_simulator():
    cp = cl.find_critical("theta", TrueDynamics(), cl.PidTuning().search)
    ref_k, ref_p = cl.REFERENCE_CRITICAL["theta"]
    assert abs(cp.k_c - ref_k) <= 0.3 * abs(ref_k)
    assert abs(cp.p_c - ref_p) <= 0.3 * ref_p


def test_zn_gains():
    kp, ki, kd = cl.zn_gains(cl.CriticalPoint(-14.3, 113))
    assert kp == pytest.approx(-8.58, abs=1e-12)
    assert ki == pytest.approx(-0.15186, abs=1e-5)
    # 0.075 * 14.3 * 113 = 121.1925; the rounded reference figure is -121.17
    assert kd == pytest.approx(-121.17, abs=0.05)
    assert cl.zn_gains(cl.CriticalPoint(0.0, 50)) == (0.0, 0.0, 0.0)
    kp2, ki2, kd2 = cl.zn_gains(cl.CriticalPoint(-14.3, 226))
    assert kp2 == kp and ki2 == pytest.approx(ki / 2) and kd2 == pytest.approx(2 * kd)


def test_reference_pid_scores_on_simulator(states):
    pen = penalty(cl.reference_pid(), "system", states)
    assert pen < penalty(cl.LinearPolicy(np.zeros(4)), "system", states)
