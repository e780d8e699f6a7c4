"""Classical controllers: least-squares system identification, LQR and
Ziegler-Nichols tuning of the dual PID loop.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import MAX_FORCE, STATE_NAMES, Batch, DomainError
from .policies import LinearPolicy, PidChannel, PidPolicy

log = logging.getLogger(__name__)

RIDGE = 1e-8
DEFAULT_Q = np.diag([10.0, 1.0, 1.0, 1.0])
DEFAULT_R = np.array([[0.1]])

# Critical gains/periods (in steps), integral windows and mixing of the
# reference Ziegler-Nichols controller.
REFERENCE_CRITICAL = {"theta": (-14.3, 113.0), "rho": (-42.7, 331.0)}
REFERENCE_WINDOWS = {"theta": 40, "rho": 28}
REFERENCE_MIX = {"theta": 0.95, "rho": 0.05}


class RankDeficiencyError(DomainError):
    pass


class NonConvergenceError(DomainError):
    pass


class SearchError(DomainError):
    pass


@dataclass
class LinearModel:
    U: np.ndarray
    V: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        self.V = np.asarray(self.V, dtype=float).reshape(len(self.U), -1)
        if not (np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.V))):
            raise ValueError("linear model has non-finite entries")

    def to_dict(self) -> dict:
        return {"U": self.U.tolist(), "V": self.V.tolist(), "residual": self.residual}

    @classmethod
    def from_dict(cls, d) -> "LinearModel":
        return cls(np.array(d["U"]), np.array(d["V"]), float(d["residual"]))

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "LinearModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class LqrWeights:
    Q: np.ndarray = field(default_factory=lambda: DEFAULT_Q.copy())
    R: np.ndarray = field(default_factory=lambda: DEFAULT_R.copy())

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for name, M in (("Q", self.Q), ("R", self.R)):
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T):
                raise ValueError(f"{name} must be square and symmetric")
        if np.linalg.eigvalsh(self.Q).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(self.R).min() <= 0:
            raise ValueError("R must be positive definite")


def fit_linear_model(batch: Batch, ridge: float = RIDGE) -> LinearModel:
    """Least-squares fit of ``s' = U s + V a`` on non-failed transitions."""
    S, A, S2, _, F = batch.arrays()
    keep = ~F
    if keep.sum() < 5:
        raise DomainError(f"need at least 5 non-failed transitions, got {int(keep.sum())}")
    X = np.column_stack([S[keep], A[keep]])
    Y = S2[keep]
    _, sv, Vt = np.linalg.svd(X, full_matrices=False)
    weak = sv <= sv[0] * 1e-10
    if weak.any():
        names = STATE_NAMES + ("action",)
        dirs = []
        for v in Vt[weak]:
            terms = [f"{c:+.3g}*{n}" for c, n in zip(v, names) if abs(c) > 1e-6]
            dirs.append(" ".join(terms))
        raise RankDeficiencyError("regressor matrix is rank deficient along: " + "; ".join(dirs))
    W = np.linalg.solve(X.T @ X + ridge * np.eye(X.shape[1]), X.T @ Y)
    resid = float(np.linalg.norm(Y - X @ W))
    return LinearModel(W[:4].T, W[4:].T, resid)


def _riccati_rhs(P, U, V, Q, R):
    PU = P @ U
    G = R + V.T @ P @ V
    return Q + U.T @ PU - PU.T @ V @ np.linalg.solve(G, V.T @ PU)


def dare_residual(P, U, V, Q, R) -> float:
    return float(np.max(np.abs(_riccati_rhs(P, U, V, Q, R) - P)))


def solve_dare(U, V, Q, R, tol: float = 1e-9, max_iter: int = 10_000, damping: float = 1.0):
    """Fixed-point iteration of the discrete Riccati equation from ``P = Q``.

    Returns ``(P, K)`` with ``K = (R + V'PV)^-1 V'PU`` so that ``a = -K s``.
    Raises :class:`NonConvergenceError` if the sup-norm residual does not fall
    below ``tol`` or the closed loop ``U - VK`` is not Schur stable.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = np.asarray(V, dtype=float).reshape(len(U), -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    P = Q.copy()
    res = np.inf
    best = None
    for _ in range(max_iter):
        rhs = _riccati_rhs(P, U, V, Q, R)
        res = float(np.max(np.abs(rhs - P)))
        if not np.isfinite(res):
            break
        # Past tol, keep polishing until rounding stops the residual falling.
        if best is not None and res >= best[0]:
            res, P = best
            break
        if res <= tol:
            best = (res, P)
        P = (1.0 - damping) * P + damping * rhs
        P = 0.5 * (P + P.T)
    else:
        res = dare_residual(P, U, V, Q, R)
    if not res <= tol:
        raise NonConvergenceError(f"Riccati iteration did not converge (last residual {res:.3g})")
    K = np.linalg.solve(R + V.T @ P @ V, V.T @ P @ U)
    radius = spectral_radius(U - V @ K)
    if radius >= 1.0:
        raise NonConvergenceError(f"closed loop is not stable (spectral radius {radius:.6g})")
    return P, K


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def lqr_policy(model: LinearModel, weights: LqrWeights | None = None) -> LinearPolicy:
    weights = weights or LqrWeights()
    _, K = solve_dare(model.U, model.V, weights.Q, weights.R)
    return LinearPolicy(-K.reshape(-1))


# Ziegler-Nichols -----------------------------------------------------------
@dataclass(frozen=True)
class CriticalPoint:
    k_c: float
    p_c: float

    def __post_init__(self):
        if not self.p_c >= 2:
            raise ValueError("critical period must be at least 2 steps")


@dataclass
class CriticalSearch:
    """Gain scan for the closed-loop Ziegler-Nichols experiment.

    Gains between ``bounds`` are scanned in order of increasing magnitude; the
    boundary to sustained oscillation is then refined by bisection.
    ``tolerance`` bounds the per-cycle amplitude decay and ``growth_tolerance``
    the per-cycle growth (``None`` means the same as ``tolerance``).
    """

    bounds: tuple = (-60.0, 0.0)
    n_grid: int = 60
    bisect_steps: int = 30
    cycles: int = 5
    tolerance: float = 0.05
    growth_tolerance: float | None = None
    max_steps: int = 2000
    start: tuple | None = None


CHANNELS = {"theta": 0, "rho": 2}
DEFAULT_STARTS = {"theta": (0.05, 0.0, 0.0, 0.0), "rho": (0.0, 0.0, 0.5, 0.0)}


def classify_oscillation(y, cycles: int = 5, tolerance: float = 0.05, failed_at=None, growth_tolerance=None):
    """Classify a closed-loop trace as none/unstable/decaying/sustained/growing.

    Half-cycle amplitudes are the peak ``|y|`` between successive zero
    crossings; the per-cycle ratio is the geometric mean over ``cycles`` full
    cycles. A trace that fails before completing them is ``unstable``.
    Returns ``(label, period, ratio)``.
    """
    y = np.asarray(y, dtype=float)
    if failed_at is not None:
        y = y[:failed_at]
    sign = np.sign(y)
    nz = np.flatnonzero(sign != 0)
    flips = nz[1:][sign[nz[1:]] != sign[nz[:-1]]]
    need = 2 * cycles + 2
    if len(flips) < need:
        return ("unstable" if failed_at is not None else "none"), np.nan, np.nan
    c = flips[:need]
    amps = np.array([np.max(np.abs(y[a:b])) for a, b in zip(c[:-1], c[1:])])
    ratio = float((amps[-1] / amps[0]) ** (1.0 / cycles))
    period = float(2.0 * (c[-1] - c[0]) / (len(c) - 1))
    if ratio < 1.0 - tolerance:
        return "decaying", period, ratio
    if ratio > 1.0 + (tolerance if growth_tolerance is None else growth_tolerance):
        return "growing", period, ratio
    return "sustained", period, ratio


def closed_loop_traces(plant, channel: int, gains, start, steps: int, base=None, mix: float = 1.0):
    """Simulate proportional-only loops for several gains at once.

    The action is ``mix * k * (0 - y)`` plus the action of an optional ``base``
    controller. Returns the channel traces ``(n_gains, steps)`` and the first
    failure step per gain (``steps`` if none).
    """
    gains = np.asarray(gains, dtype=float)
    n = len(gains)
    x = np.tile(np.asarray(start, dtype=float), (n, 1))
    failed = np.zeros(n, bool)
    first_fail = np.full(n, steps)
    if base is not None and hasattr(base, "reset"):
        base.reset(n)
    ys = np.empty((n, steps))
    for t in range(steps):
        ys[:, t] = x[:, channel]
        a = mix * gains * (-x[:, channel])
        if base is not None:
            a = a + base.act(x)
        x, failed, _ = plant.step(x, failed, np.clip(a, -MAX_FORCE, MAX_FORCE))
        first_fail = np.where(failed & (first_fail == steps), t + 1, first_fail)
    return ys, first_fail


def find_critical(channel, plant, config: CriticalSearch | None = None, base=None, mix: float = 1.0) -> CriticalPoint:
    """Smallest-magnitude proportional gain giving sustained oscillation."""
    cfg = config or CriticalSearch()
    name = channel if isinstance(channel, str) else None
    idx = CHANNELS[channel] if isinstance(channel, str) else int(channel)
    start = cfg.start if cfg.start is not None else DEFAULT_STARTS.get(name, DEFAULT_STARTS["theta"])
    lo, hi = cfg.bounds
    near, far = (lo, hi) if abs(lo) <= abs(hi) else (hi, lo)
    grid = np.linspace(near, far, cfg.n_grid)

    def labels(gains):
        ys, ff = closed_loop_traces(plant, idx, gains, start, cfg.max_steps, base, mix)
        return [classify_oscillation(y, cfg.cycles, cfg.tolerance, f if f < cfg.max_steps else None,
                                     cfg.growth_tolerance)
                for y, f in zip(ys, ff)]

    oscillating = lambda lab: lab[0] in ("sustained", "growing")
    grid_labels = labels(grid)
    hits = [i for i, lab in enumerate(grid_labels) if oscillating(lab)]
    if not hits:
        raise SearchError(f"no sustained oscillation for gains in [{lo}, {hi}]")
    j = hits[0]
    if j == 0:
        k_in, lab = grid[0], grid_labels[0]
    else:
        k_out, k_in, lab = grid[j - 1], grid[j], grid_labels[j]
        for _ in range(cfg.bisect_steps):
            mid = 0.5 * (k_out + k_in)
            m_lab = labels(np.array([mid]))[0]
            if oscillating(m_lab):
                k_in, lab = mid, m_lab
            else:
                k_out = mid
    if lab[0] != "sustained":
        raise SearchError(f"oscillation at gain {k_in:.4g} is not sustained (per-cycle ratio {lab[2]:.3g})")
    log.info("critical point on %s: k=%.4g period=%.1f ratio=%.3f", channel, k_in, lab[1], lab[2])
    return CriticalPoint(float(k_in), float(lab[1]))


def zn_gains(cp: CriticalPoint):
    """Classic closed-loop Ziegler-Nichols PID gains ``(kP, kI, kD)``."""
    k, p = cp.k_c, cp.p_c
    return 0.6 * k, 1.2 * k / p, 0.6 * k * p / 8.0


def zn_channel(cp: CriticalPoint, window: int) -> PidChannel:
    kp, ki, kd = zn_gains(cp)
    return PidChannel(kp, ki, kd, window)


def reference_pid() -> PidPolicy:
    """The dual PID built from the reference critical values."""
    chans = {c: zn_channel(CriticalPoint(*REFERENCE_CRITICAL[c]), REFERENCE_WINDOWS[c]) for c in CHANNELS}
    return PidPolicy(chans["theta"], chans["rho"], REFERENCE_MIX["theta"], REFERENCE_MIX["rho"])


def _tuning_search(**kw):
    # A sampled proportional loop on the frictionless pole always gains a
    # little amplitude per cycle (zero-order-hold delay), so growth is not
    # bounded when tuning on the cart-pole.
    return CriticalSearch(growth_tolerance=np.inf, **kw)


@dataclass
class PidTuning:
    search: CriticalSearch = field(default_factory=_tuning_search)
    rho_search: CriticalSearch = field(default_factory=lambda: _tuning_search(bounds=(-150.0, 0.0)))
    windows: dict = field(default_factory=lambda: dict(REFERENCE_WINDOWS))
    mix: dict = field(default_factory=lambda: dict(REFERENCE_MIX))
    fallback: bool = True


def tune_pid(plant, tuning: PidTuning | None = None):
    """Closed-loop Ziegler-Nichols tuning of the dual PID on ``plant``.

    The angle loop is tuned first with proportional action only. The position
    loop is then tuned with the finished angle PID in place, scanning its
    proportional gain through the position mixing weight. If that second
    experiment never oscillates (the angle PID alone may not hold the pole)
    and ``fallback`` is set, the reference position critical point is used.
    Returns ``(policy, info)`` where ``info`` maps each channel to its
    :class:`CriticalPoint` and ``"rho_source"`` to ``"search"`` or ``"reference"``.
    """
    tuning = tuning or PidTuning()
    cp_theta = find_critical("theta", plant, tuning.search)
    theta = zn_channel(cp_theta, tuning.windows["theta"])
    base = PidPolicy(theta, PidChannel(0.0, 0.0, 0.0), tuning.mix["theta"], 0.0)
    try:
        cp_rho = find_critical("rho", plant, tuning.rho_search, base=base, mix=tuning.mix["rho"])
        source = "search"
    except SearchError as exc:
        if not tuning.fallback:
            raise
        log.warning("position loop search failed (%s); using reference critical point", exc)
        cp_rho = CriticalPoint(*REFERENCE_CRITICAL["rho"])
        source = "reference"
    rho = zn_channel(cp_rho, tuning.windows["rho"])
    policy = PidPolicy(theta, rho, tuning.mix["theta"], tuning.mix["rho"])
    return policy, {"theta": cp_theta, "rho": cp_rho, "rho_source": source}
