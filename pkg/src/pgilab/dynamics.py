"""Continuous-time oligopoly model of openness choice.

Each firm carries seven stocks (algorithmic, data and compute capital, user
base, reputation, positive and negative externality stocks) driven by a
constant excludability policy ``e`` and constant investment flows.  The
system is integrated with fixed-step RK4.  Every routine works on a leading
batch axis, so a whole policy grid integrates in one pass: states have shape
``(..., n_firms, 7)`` and policies ``(..., n_firms)``.

Optimal excludability is found by exhaustive search over constant policies on
a 0.01 grid rather than by solving the costate system.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .pgi import DimensionScores, EQUAL_WEIGHTS, WeightVector, externality_ratio

STOCKS = ("t_a", "t_d", "t_c", "q", "rep", "x_pos", "x_neg")
TA, TD, TC, Q, REP, XP, XN = range(7)
DIVERGENCE_LIMIT = 1e12


class DynamicsError(RuntimeError):
    pass


class NumericOverflowError(DynamicsError):
    pass


class DivergenceError(DynamicsError):
    def __init__(self, t: float, msg: str, trajectory: "MarketTrajectory | None" = None):
        super().__init__(f"t={t:.4f}: {msg}")
        self.t = t
        self.trajectory = trajectory


@dataclass(frozen=True)
class FirmParams:
    # CES technology aggregate
    omega_a: float = 1 / 3
    omega_d: float = 1 / 3
    omega_c: float = 1 / 3
    rho_t: float = 0.5
    # algorithmic capital
    phi_a: float = 0.2
    beta_a: float = 0.5
    lambda_a: float = 0.05
    delta_a: float = 0.1
    # data capital
    phi_d: float = 0.05
    gamma_d: float = 1.0
    delta_d: float = 0.1
    # compute capital
    g_c: float = 0.02
    phi_c: float = 1.0
    delta_c: float = 0.05
    # users and reputation
    lambda_q: float = 0.5
    phi_r: float = 0.01
    psi_r: float = 0.5
    delta_r: float = 0.1
    # externalities
    kappa_pos: float = 0.05
    eta: float = 2.0
    delta_pos: float = 0.1
    kappa_neg: float = 2.0
    zeta: float = 1.0
    xi: float = 0.1
    delta_neg: float = 0.1
    safety: float = 0.2
    # economics
    r: float = 0.05
    p1: float = 6.0
    market_size: float = 10.0
    mu: float = 3.0
    c_a: float = 1.0
    c_c: float = 1.0

    def __post_init__(self):
        for name in ("delta_a", "delta_d", "delta_c", "delta_r", "delta_pos", "delta_neg"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.beta_a < 1:
            raise ValueError("beta_a must lie in (0, 1)")
        if abs(self.omega_a + self.omega_d + self.omega_c - 1) > 1e-9:
            raise ValueError("CES weights must sum to 1")
        if self.rho_t == 0:
            raise ValueError("rho_t must be non-zero")
        if self.r <= 0 or self.market_size <= 0 or self.mu <= 0:
            raise ValueError("r, market_size and mu must be > 0")
        if self.p1 < 0 or self.c_a < 0 or self.c_c < 0:
            raise ValueError("p1, c_a, c_c must be >= 0")
        if not 0 <= self.safety <= 1:
            raise ValueError("safety must lie in [0, 1]")


PARAM_NAMES = tuple(f.name for f in fields(FirmParams))
MARKET_PARAMS = ("market_size", "mu")


@dataclass(frozen=True)
class FirmState:
    t_a: float
    t_d: float
    t_c: float
    q: float
    rep: float = 0.0
    x_pos: float = 0.0
    x_neg: float = 0.0
    e: float = 0.5
    i_a: float = 1.0
    i_c: float = 1.0

    def __post_init__(self):
        for name in STOCKS + ("i_a", "i_c"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} = {v} must be finite and >= 0")
        if not 0 <= self.e <= 1:
            raise ValueError(f"e = {self.e} outside [0, 1]")

    def stocks(self) -> np.ndarray:
        return np.array([getattr(self, s) for s in STOCKS], dtype=float)


def steady_state_guess(
    params: FirmParams, q: float, e: float = 0.5, i_a: float = 1.0, i_c: float = 1.0
) -> FirmState:
    """Capital stocks at their own-rate steady states for a given user base.

    Spillovers are ignored and reputation and externality stocks start at 0.
    """
    p = params
    if p.delta_c <= p.g_c:
        raise ValueError("compute capital has no steady state when g_c >= delta_c")
    t_a = (p.phi_a / p.delta_a) ** (1.0 / p.beta_a) * i_a
    t_d = p.phi_d * q**p.gamma_d / p.delta_d
    t_c = p.phi_c * i_c / (p.delta_c - p.g_c)
    return FirmState(t_a, t_d, t_c, q, e=e, i_a=i_a, i_c=i_c)


class Market:
    """Per-firm parameters stacked into arrays along the firm axis."""

    def __init__(self, params: Sequence[FirmParams]):
        if len(params) == 0:
            raise ValueError("need at least one firm")
        self.params = tuple(params)
        for name in MARKET_PARAMS:
            vals = {getattr(p, name) for p in params}
            if len(vals) > 1:
                raise ValueError(f"{name} must be common to all firms, got {sorted(vals)}")
        for name in PARAM_NAMES:
            setattr(self, name, np.array([getattr(p, name) for p in params], dtype=float))
        self.M = float(params[0].market_size)
        self.mu_m = float(params[0].mu)

    @property
    def n(self) -> int:
        return len(self.params)


def _as_market(params) -> Market:
    if isinstance(params, Market):
        return params
    if isinstance(params, FirmParams):
        return Market([params])
    return Market(list(params))


def tech_aggregate(t_a, t_d, t_c, params) -> np.ndarray | float:
    """CES aggregate of the three capital stocks."""
    p = params
    t_a, t_d, t_c = (np.asarray(x, dtype=float) for x in (t_a, t_d, t_c))
    rho = np.asarray(p.rho_t, dtype=float)
    if np.any((t_a < 0) | (t_d < 0) | (t_c < 0)):
        raise ValueError("capital stocks must be non-negative")
    if np.any(rho < 0) and np.any((t_a == 0) | (t_d == 0) | (t_c == 0)):
        raise ValueError("zero capital stock with negative rho_t")
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = p.omega_a * t_a**rho + p.omega_d * t_d**rho + p.omega_c * t_c**rho
        out = np.where(inner > 0, inner ** (1.0 / rho), 0.0)
    return out if out.ndim else float(out)


def spillover_pool(t_a, e, i: int | None = None) -> np.ndarray:
    """Knowledge available to each firm from rivals' open algorithmic capital.

    ``t_a`` and ``e`` have the firm on the last axis.  With ``i`` given the
    pool of that firm alone is returned.
    """
    t_a = np.asarray(t_a, dtype=float)
    e = np.asarray(e, dtype=float)
    open_stock = (1.0 - e) * t_a
    pool = open_stock.sum(axis=-1, keepdims=True) - open_stock
    return pool if i is None else pool[..., i]


def utilities(y: np.ndarray, e: np.ndarray, mkt: Market) -> np.ndarray:
    T = tech_aggregate(y[..., TA], y[..., TD], y[..., TC], mkt)
    return T - mkt.p1 * e


def user_demand(y: np.ndarray, e: np.ndarray, params, i: int | None = None) -> np.ndarray:
    """Desired user base ``M * logit share`` for every firm (or firm ``i``)."""
    mkt = _as_market(params)
    u = utilities(np.asarray(y, float), np.asarray(e, float), mkt)
    qd = mkt.M * _softmax(u / mkt.mu_m)
    return qd if i is None else qd[..., i]


def consumer_surplus(y: np.ndarray, e: np.ndarray, params) -> np.ndarray:
    """Logit inclusive value ``mu * M * log sum exp(u / mu)``."""
    mkt = _as_market(params)
    u = utilities(y, e, mkt)
    return mkt.mu_m * mkt.M * logsumexp(u / mkt.mu_m, axis=-1)


def _ces(t_a, t_d, t_c, mkt) -> np.ndarray:
    rho = mkt.rho_t
    inner = mkt.omega_a * t_a**rho + mkt.omega_d * t_d**rho + mkt.omega_c * t_c**rho
    return inner ** (1.0 / rho)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


_RATE_TERMS = ("dT_A", "dT_D", "dT_C", "dQ", "dR", "dX+", "dX-")


def _rates(y, e, i_a, i_c, mkt: Market, h=None) -> np.ndarray:
    t_a, t_d, t_c, q, rep, xp, xn = (y[..., k] for k in range(7))
    openness = 1.0 - e
    T = _ces(t_a, t_d, t_c, mkt)
    open_stock = openness * t_a
    S = open_stock.sum(axis=-1, keepdims=True) - open_stock
    total_q = q.sum(axis=-1, keepdims=True)
    share = np.divide(q, total_q, out=np.zeros_like(q), where=total_q > 0)

    d = np.empty_like(y)
    d[..., TA] = (
        mkt.phi_a * i_a**mkt.beta_a * t_a ** (1.0 - mkt.beta_a)
        + mkt.lambda_a * openness * S
        - mkt.delta_a * t_a
    )
    d[..., TD] = mkt.phi_d * q**mkt.gamma_d - mkt.delta_d * t_d
    d[..., TC] = (mkt.g_c - mkt.delta_c) * t_c + mkt.phi_c * i_c
    qd = mkt.M * _softmax((T - mkt.p1 * e) / mkt.mu_m)
    d[..., Q] = mkt.lambda_q * (qd - q)
    d[..., REP] = mkt.phi_r * q + mkt.psi_r * openness - mkt.delta_r * rep
    d[..., XP] = mkt.kappa_pos * openness**mkt.eta * T * q - mkt.delta_pos * xp
    dxn = mkt.kappa_neg * share**mkt.zeta * q - mkt.xi * mkt.safety - mkt.delta_neg * xn
    if h is not None:
        d[..., XN] = np.maximum(dxn, -xn / h)
    else:
        d[..., XN] = np.where(xn <= 0, np.maximum(dxn, 0.0), dxn)
    return d


def derivatives(
    y: np.ndarray,
    e: np.ndarray,
    i_a: np.ndarray,
    i_c: np.ndarray,
    params,
    h: float | None = None,
) -> np.ndarray:
    """Time derivatives of all stocks, shape like ``y``.

    ``h`` (the step about to be taken) floors the negative-externality rate at
    ``-x_neg / h`` so the stock cannot be driven below zero within one step.
    """
    mkt = _as_market(params)
    y = np.asarray(y, dtype=float)
    e = np.asarray(e, dtype=float)
    i_a = np.asarray(i_a, dtype=float)
    i_c = np.asarray(i_c, dtype=float)
    with np.errstate(all="ignore"):
        d = _rates(y, e, i_a, i_c, mkt, h)
    if not np.all(np.isfinite(d)):
        bad = ~np.isfinite(d).reshape(-1, 7).all(axis=0)
        raise NumericOverflowError(f"non-finite value in term {_RATE_TERMS[int(np.argmax(bad))]}")
    return d


def pgi_from_state(
    state,
    market_total_q: float | None = None,
    weights: WeightVector = EQUAL_WEIGHTS,
) -> DimensionScores:
    """Theoretical-variant dimensions of one firm.

    Compute capital stands in for the congestion threshold.  ``market_total_q``
    is accepted for callers that track it but is not needed by the formula.
    """
    if isinstance(state, FirmState):
        t_c, q, xp, xn, e = state.t_c, state.q, state.x_pos, state.x_neg, state.e
    else:
        t_c, q, xp, xn, e = state
    if market_total_q is not None and q > market_total_q * (1 + 1e-9):
        raise ValueError("firm user base exceeds market total")
    c_q = t_c / (t_c + q) if t_c + q > 0 else 1.0
    c_x = externality_ratio(xp, xn) if xp + xn > 0 else 0.0
    return DimensionScores(c_q, 1.0 - e, c_x, "theoretical")


def pgi_arrays(y: np.ndarray, e: np.ndarray, weights: WeightVector = EQUAL_WEIGHTS):
    """Vectorized twin of :func:`pgi_from_state`; returns (c_q, c_e, c_x, pgi)."""
    t_c, q, xp, xn = y[..., TC], y[..., Q], y[..., XP], y[..., XN]
    den_q = t_c + q
    c_q = np.divide(t_c, den_q, out=np.ones_like(t_c), where=den_q > 0)
    den_x = xp + xn
    c_x = np.divide(xp - xn, den_x, out=np.zeros_like(xp), where=den_x > 0)
    c_e = 1.0 - np.broadcast_to(e, c_q.shape)
    pgi = weights.alpha * c_q + weights.beta * c_e + weights.gamma * c_x
    return c_q, c_e, c_x, pgi


@dataclass
class MarketTrajectory:
    times: np.ndarray
    states: np.ndarray  # (n_times, ..., n_firms, 7)
    e: np.ndarray  # (..., n_firms)
    dims: np.ndarray  # (n_times, ..., n_firms, 3)
    pgi: np.ndarray  # (n_times, ..., n_firms)
    welfare: np.ndarray  # (n_times, ...) instantaneous welfare flow
    clamp_events: int = 0
    firm_ids: tuple = ()

    def state_at(self, k: int, firm: int) -> FirmState:
        s = self.states[k, ..., firm, :]
        return FirmState(*map(float, s), e=float(self.e[..., firm]))


@dataclass(frozen=True)
class WelfareWeights:
    cs: float = 0.1
    ps: float = 1.0
    x: float = 0.6


def _rk4_step(y, e, i_a, i_c, mkt, h):
    # intermediate stages are kept non-negative so fractional powers stay real
    with np.errstate(all="ignore"):
        k1 = _rates(y, e, i_a, i_c, mkt, h)
        k2 = _rates(np.maximum(y + 0.5 * h * k1, 0.0), e, i_a, i_c, mkt, h)
        k3 = _rates(np.maximum(y + 0.5 * h * k2, 0.0), e, i_a, i_c, mkt, h)
        k4 = _rates(np.maximum(y + h * k3, 0.0), e, i_a, i_c, mkt, h)
        y_next = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(y_next)):
        derivatives(y, e, i_a, i_c, mkt, h)  # names the offending term
        raise NumericOverflowError("non-finite state after RK4 step")
    return y_next


def _prepare(initial: Sequence[FirmState], e=None):
    y0 = np.array([s.stocks() for s in initial])
    e_arr = np.array([s.e for s in initial]) if e is None else np.asarray(e, dtype=float)
    i_a = np.array([s.i_a for s in initial])
    i_c = np.array([s.i_c for s in initial])
    return y0, e_arr, i_a, i_c


def _n_steps(t_end: float, h: float) -> int:
    if h <= 0:
        raise ValueError("step h must be > 0")
    if t_end < h:
        raise ValueError("horizon must be >= h")
    n = int(round(t_end / h))
    if abs(n * h - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"horizon {t_end} is not a multiple of h={h}")
    return n


def _flows(y, e, i_a, i_c, mkt: Market, focal: int):
    """Instantaneous profit, consumer surplus and net externality flows."""
    profit = mkt.p1[focal] * e[..., focal] * y[..., focal, Q] - mkt.c_a[focal] * i_a[focal] - mkt.c_c[focal] * i_c[focal]
    cs = consumer_surplus(y, e, mkt)
    net_x = (y[..., XP] - y[..., XN]).sum(axis=-1)
    return profit, cs, net_x


def integrate(
    initial: Sequence[FirmState],
    params,
    t_end: float = 50.0,
    h: float = 0.01,
    e: np.ndarray | None = None,
    record_every: int = 1,
    focal: int = 0,
    welfare_weights: WelfareWeights = WelfareWeights(),
    pgi_weights: WeightVector = EQUAL_WEIGHTS,
    firm_ids: Sequence[str] = (),
) -> MarketTrajectory:
    """Fixed-step RK4 over the coupled firm system.

    ``e`` may carry leading batch axes (e.g. one row per candidate policy).
    Stocks pushed below zero are clamped and counted.
    """
    mkt = _as_market(params)
    y0, e_arr, i_a, i_c = _prepare(initial, e)
    if y0.shape[0] != mkt.n:
        raise ValueError("one FirmParams per initial state required")
    n = _n_steps(t_end, h)
    y = np.broadcast_to(y0, e_arr.shape + (7,)).copy()
    rec_idx = list(range(0, n + 1, record_every))
    if rec_idx[-1] != n:
        rec_idx.append(n)
    rec_set = set(rec_idx)
    states, times = [], []
    clamps = 0

    def record(k, y):
        states.append(y.copy())
        times.append(k * h)

    record(0, y)
    for k in range(1, n + 1):
        y = _rk4_step(y, e_arr, i_a, i_c, mkt, h)
        neg = y < 0
        if neg.any():
            clamps += int(neg.sum())
            y[neg] = 0.0
        if not np.all(np.isfinite(y)) or y.max() > DIVERGENCE_LIMIT:
            record(k, np.where(np.isfinite(y), y, np.inf))
            partial = _assemble(times, states, e_arr, mkt, i_a, i_c, focal, welfare_weights, pgi_weights, clamps, firm_ids)
            raise DivergenceError(k * h, "stock exceeded divergence limit", partial)
        if k in rec_set:
            record(k, y)
    return _assemble(times, states, e_arr, mkt, i_a, i_c, focal, welfare_weights, pgi_weights, clamps, firm_ids)


def _assemble(times, states, e_arr, mkt, i_a, i_c, focal, ww, pw, clamps, firm_ids):
    S = np.array(states)
    c_q, c_e, c_x, pgi = pgi_arrays(S, e_arr, pw)
    with np.errstate(all="ignore"):
        profit, cs, net_x = _flows(S, e_arr, i_a, i_c, mkt, focal)
        welfare = ww.ps * profit + ww.cs * cs + ww.x * net_x
    return MarketTrajectory(
        times=np.array(times),
        states=S,
        e=e_arr,
        dims=np.stack([c_q, c_e, c_x], axis=-1),
        pgi=pgi,
        welfare=welfare,
        clamp_events=clamps,
        firm_ids=tuple(firm_ids),
    )


@dataclass
class PolicyEvaluation:
    """Discounted objectives for a batch of focal-firm policies."""

    e_grid: np.ndarray
    profit: np.ndarray
    cs: np.ndarray
    x_pos: np.ndarray  # focal firm's discounted positive stock
    x_neg: np.ndarray
    net_x: np.ndarray  # market-wide discounted net externality
    terminal: np.ndarray  # (n_e, n_firms, 7)
    terminal_pgi: np.ndarray  # (n_e,) focal firm
    clamp_events: int

    def welfare(self, ww: WelfareWeights) -> np.ndarray:
        return ww.ps * self.profit + ww.cs * self.cs + ww.x * self.net_x

    def external(self, ww: WelfareWeights) -> np.ndarray:
        """The part of welfare the firm does not internalize."""
        return ww.cs * self.cs + ww.x * self.net_x


def evaluate_policies(
    params,
    initial: Sequence[FirmState],
    e_grid: np.ndarray,
    focal: int = 0,
    t_end: float = 50.0,
    h: float = 0.01,
    pgi_weights: WeightVector = EQUAL_WEIGHTS,
) -> PolicyEvaluation:
    """Integrate once per candidate focal policy (batched) and discount the flows.

    Integrals use the trapezoid rule on the integration grid.
    """
    mkt = _as_market(params)
    y0, e_base, i_a, i_c = _prepare(initial)
    e_grid = np.asarray(e_grid, dtype=float)
    E = np.broadcast_to(e_base, (e_grid.size, mkt.n)).copy()
    E[:, focal] = e_grid
    n = _n_steps(t_end, h)
    r = mkt.r[focal]
    y = np.broadcast_to(y0, E.shape + (7,)).copy()

    def flows(y):
        profit, cs, net_x = _flows(y, E, i_a, i_c, mkt, focal)
        return np.stack([profit, cs, y[:, focal, XP], y[:, focal, XN], net_x])

    acc = 0.5 * flows(y)
    clamps = 0
    for k in range(1, n + 1):
        y = _rk4_step(y, E, i_a, i_c, mkt, h)
        neg = y < 0
        if neg.any():
            clamps += int(neg.sum())
            y[neg] = 0.0
        if not np.all(np.isfinite(y)) or y.max() > DIVERGENCE_LIMIT:
            raise DivergenceError(k * h, "stock exceeded divergence limit")
        w = math.exp(-r * k * h) * (0.5 if k == n else 1.0)
        acc += w * flows(y)
    acc *= h
    *_, pgi = pgi_arrays(y, E, pgi_weights)
    return PolicyEvaluation(e_grid, acc[0], acc[1], acc[2], acc[3], acc[4], y, pgi[:, focal], clamps)


def excludability_grid(step: float = 0.01) -> np.ndarray:
    n = round(1.0 / step)
    if abs(n * step - 1.0) > 1e-12:
        raise ValueError(f"grid step {step} does not divide 1")
    return np.round(np.arange(n + 1) * step, 12)


def grid_argmax(values: np.ndarray) -> int:
    """First index of the maximum, i.e. ties resolve to the smallest e."""
    return int(np.argmax(values))


def firm_value(
    params,
    e: float,
    initial: Sequence[FirmState],
    t_end: float = 50.0,
    h: float = 0.01,
    focal: int = 0,
) -> float:
    """Discounted profit of the focal firm under constant excludability ``e``."""
    if not 0 <= e <= 1:
        raise ValueError("e must lie in [0, 1]")
    ev = evaluate_policies(params, initial, np.array([e]), focal, t_end, h)
    return float(ev.profit[0])


@dataclass(frozen=True)
class OptimumResult:
    e_star: float
    value: float
    evaluation: PolicyEvaluation = field(repr=False, compare=False)


def optimize_excludability_private(
    params,
    initial: Sequence[FirmState],
    step: float = 0.01,
    focal: int = 0,
    t_end: float = 50.0,
    h: float = 0.01,
    evaluation: PolicyEvaluation | None = None,
) -> OptimumResult:
    ev = evaluation or evaluate_policies(params, initial, excludability_grid(step), focal, t_end, h)
    k = grid_argmax(ev.profit)
    return OptimumResult(float(ev.e_grid[k]), float(ev.profit[k]), ev)


def optimize_excludability_social(
    params,
    initial: Sequence[FirmState],
    weights: WelfareWeights = WelfareWeights(),
    step: float = 0.01,
    focal: int = 0,
    t_end: float = 50.0,
    h: float = 0.01,
    evaluation: PolicyEvaluation | None = None,
) -> OptimumResult:
    """Planner's constant-policy optimum for the focal firm's excludability.

    Welfare counts the focal firm's discounted profit, discounted logit
    consumer surplus and the discounted market-wide net externality stock.
    """
    ev = evaluation or evaluate_policies(params, initial, excludability_grid(step), focal, t_end, h)
    W = ev.welfare(weights)
    k = grid_argmax(W)
    return OptimumResult(float(ev.e_grid[k]), float(W[k]), ev)


@dataclass(frozen=True)
class FailurePoint:
    overrides: dict
    e_private: float
    e_social: float
    pgi_private: float
    pgi_social: float
    clamp_events: int

    @property
    def pgi_gap(self) -> float:
        return self.pgi_social - self.pgi_private

    @property
    def ok(self) -> bool:
        return self.e_private >= self.e_social and self.pgi_gap >= -1e-12


@dataclass
class MarketFailureReport:
    points: list[FailurePoint]

    @property
    def violations(self) -> list[FailurePoint]:
        return [p for p in self.points if not p.ok]

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def satisfaction_rate(self) -> float:
        return 1.0 - len(self.violations) / len(self.points)


def apply_overrides(params: Sequence[FirmParams], overrides: dict, firms: Sequence[int] | None = None) -> list[FirmParams]:
    firms = range(len(params)) if firms is None else firms
    return [replace(p, **overrides) if i in firms else p for i, p in enumerate(params)]


def verify_market_failure(
    params: Sequence[FirmParams],
    initial: Sequence[FirmState],
    grid: Sequence[dict],
    weights: WelfareWeights = WelfareWeights(),
    step: float = 0.01,
    focal: int = 0,
    t_end: float = 50.0,
    h: float = 0.01,
) -> MarketFailureReport:
    """Check e* >= e** and a non-negative terminal PGI gap at every grid point.

    Each grid entry maps parameter names to values applied to every firm.
    """
    if not grid:
        raise ValueError("parameter grid is empty")
    e_grid = excludability_grid(step)
    points = []
    for ov in grid:
        p = apply_overrides(params, ov)
        ev = evaluate_policies(p, initial, e_grid, focal, t_end, h)
        priv = optimize_excludability_private(p, initial, evaluation=ev)
        soc = optimize_excludability_social(p, initial, weights, evaluation=ev)
        k_p = int(np.flatnonzero(e_grid == priv.e_star)[0])
        k_s = int(np.flatnonzero(e_grid == soc.e_star)[0])
        points.append(
            FailurePoint(dict(ov), priv.e_star, soc.e_star, float(ev.terminal_pgi[k_p]),
                         float(ev.terminal_pgi[k_s]), ev.clamp_events)
        )
    return MarketFailureReport(points)


@dataclass(frozen=True)
class SubsidyResult:
    s_star: float
    e_private: float
    e_social: float
    e_subsidized: float
    boundary: bool
    s_at_social: float = float("nan")

    @property
    def moves_toward_social(self) -> bool:
        return abs(self.e_subsidized - self.e_social) <= abs(self.e_private - self.e_social) + 1e-12


def _central_slope(values: np.ndarray, grid: np.ndarray, k: int) -> float:
    lo, hi = max(k - 1, 0), min(k + 1, len(grid) - 1)
    return float((values[hi] - values[lo]) / (grid[hi] - grid[lo]))


def pigouvian_subsidy(
    params,
    initial: Sequence[FirmState],
    weights: WelfareWeights = WelfareWeights(),
    step: float = 0.01,
    focal: int = 0,
    t_end: float = 50.0,
    h: float = 0.01,
) -> SubsidyResult:
    """Openness subsidy equal to the marginal external benefit the firm ignores.

    The unpriced part of welfare (consumer surplus plus net externalities) is
    differentiated by central differences at the private optimum; the firm
    then receives ``s * (1 - e)`` in present value and re-optimizes.  The same
    slope taken at the social optimum is reported as ``s_at_social``.
    """
    e_grid = excludability_grid(step)
    ev = evaluate_policies(params, initial, e_grid, focal, t_end, h)
    priv = optimize_excludability_private(params, initial, evaluation=ev)
    soc = optimize_excludability_social(params, initial, weights, evaluation=ev)
    G = ev.external(weights)
    k_priv = int(np.argmin(np.abs(e_grid - priv.e_star)))
    k_soc = int(np.argmin(np.abs(e_grid - soc.e_star)))
    s_star = max(-_central_slope(G, e_grid, k_priv) / weights.ps, 0.0)
    s_soc = max(-_central_slope(G, e_grid, k_soc) / weights.ps, 0.0)
    boundary = not (0 < priv.e_star < 1)
    subsidized = ev.profit + s_star * (1.0 - e_grid)
    e_sub = float(e_grid[grid_argmax(subsidized)])
    return SubsidyResult(s_star, priv.e_star, soc.e_star, e_sub, boundary, s_soc)


@dataclass(frozen=True)
class SweepResult:
    values: tuple
    e_star: tuple
    monotone: bool


def comparative_static_lambda_a(
    params: Sequence[FirmParams],
    initial: Sequence[FirmState],
    lambda_values: Sequence[float],
    step: float = 0.01,
    focal: int = 0,
    t_end: float = 50.0,
    h: float = 0.01,
) -> SweepResult:
    """Private optimum across ascending spillover strengths; expected non-increasing."""
    if len(lambda_values) < 2:
        raise ValueError("need at least two lambda_a values")
    if any(b < a for a, b in zip(lambda_values, lambda_values[1:])):
        raise ValueError("lambda_a values must be ascending")
    es = []
    for lam in lambda_values:
        p = apply_overrides(params, {"lambda_a": lam})
        es.append(optimize_excludability_private(p, initial, step, focal, t_end, h).e_star)
    mono = all(b <= a + 1e-12 for a, b in zip(es, es[1:]))
    return SweepResult(tuple(lambda_values), tuple(es), mono)


@dataclass(frozen=True)
class DuopolyResult:
    converged: bool
    e: tuple[float, float]
    iterations: int
    path: tuple
    cycle: tuple = ()

    @property
    def separating(self) -> bool:
        return self.converged and abs(self.e[0] - self.e[1]) > 0.05

    @property
    def symmetric(self) -> bool:
        return self.converged and abs(self.e[0] - self.e[1]) < 1e-12


def best_response(
    params, initial: Sequence[FirmState], firm: int, step: float = 0.01, t_end: float = 50.0, h: float = 0.01
) -> float:
    return optimize_excludability_private(params, initial, step, firm, t_end, h).e_star


def duopoly_equilibrium(
    params: Sequence[FirmParams],
    initial: Sequence[FirmState],
    step: float = 0.01,
    max_iter: int = 200,
    t_end: float = 50.0,
    h: float = 0.01,
) -> DuopolyResult:
    """Alternating best responses on the excludability grid."""
    if len(params) != 2 or len(initial) != 2:
        raise ValueError("duopoly requires exactly two firms")
    state = list(initial)
    e = [initial[0].e, initial[1].e]
    seen = {tuple(e): 0}
    path = [tuple(e)]
    for it in range(1, max_iter + 1):
        for firm in (0, 1):
            state = [replace(s, e=e[j]) for j, s in enumerate(state)]
            e[firm] = best_response(params, state, firm, step, t_end, h)
        key = tuple(e)
        path.append(key)
        if key == path[-2]:
            return DuopolyResult(True, key, it, tuple(path))
        if key in seen:
            return DuopolyResult(False, key, it, tuple(path), tuple(path[seen[key]:]))
        seen[key] = it
    return DuopolyResult(False, tuple(e), max_iter, tuple(path))


@dataclass(frozen=True)
class TippingResult:
    share_ratio: float
    shares: tuple[float, float]
    tipped: bool


def tipping_experiment(
    params: Sequence[FirmParams],
    initial: FirmState,
    eps: float,
    t_end: float = 50.0,
    h: float = 0.01,
    threshold: float = 3.0,
) -> TippingResult:
    """Two symmetric firms started at ``q +/- eps``; returns the terminal share ratio."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if len(params) != 2:
        raise ValueError("tipping experiment needs two firms")
    a = replace(initial, q=initial.q + eps)
    b = replace(initial, q=max(initial.q - eps, 0.0))
    traj = integrate([a, b], params, t_end, h, record_every=_n_steps(t_end, h))
    q = traj.states[-1, :, Q]
    shares = q / q.sum()
    big, small = max(shares), min(shares)
    ratio = float(big / small) if small > 0 else math.inf
    return TippingResult(ratio, (float(shares[0]), float(shares[1])), ratio > threshold)


@dataclass(frozen=True)
class GradientDecomposition:
    cs_term: float
    x_pos_term: float
    x_neg_term: float
    dpgi_de: float
    defined: bool

    @property
    def total(self) -> float:
        return self.cs_term + self.x_pos_term + self.x_neg_term


def welfare_pgi_gradient(
    params,
    initial: Sequence[FirmState],
    e: float | None = None,
    omega_cs: float = 1.0,
    omega_xp: float = 1.0,
    omega_xn: float = 1.0,
    de: float = 0.01,
    focal: int = 0,
    t_end: float = 50.0,
    h: float = 0.01,
) -> GradientDecomposition:
    """Marginal welfare of publicness split into surplus, spillover and harm terms.

    Derivatives with respect to the focal firm's terminal PGI are taken
    through ``e`` by central differences; the harm term enters negatively.
    """
    e0 = initial[focal].e if e is None else e
    lo, hi = max(e0 - de, 0.0), min(e0 + de, 1.0)
    ev = evaluate_policies(params, initial, np.array([lo, e0, hi]), focal, t_end, h)
    pgi = ev.terminal_pgi
    d_lo, d_hi = pgi[1] - pgi[0], pgi[2] - pgi[1]
    monotone = (d_lo > 0 and d_hi > 0) or (d_lo < 0 and d_hi < 0)
    dpgi = pgi[2] - pgi[0]
    if not monotone or dpgi == 0:
        return GradientDecomposition(math.nan, math.nan, math.nan, float(dpgi / (hi - lo)), False)
    return GradientDecomposition(
        omega_cs * (ev.cs[2] - ev.cs[0]) / dpgi,
        omega_xp * (ev.x_pos[2] - ev.x_pos[0]) / dpgi,
        -omega_xn * (ev.x_neg[2] - ev.x_neg[0]) / dpgi,
        float(dpgi / (hi - lo)),
        True,
    )


def eq2_residual(
    y: np.ndarray,
    e: np.ndarray,
    i_a: np.ndarray,
    i_c: np.ndarray,
    params,
    shadow: dict,
    focal: int = 0,
    de: float = 1e-6,
) -> float:
    """Arbitrage-condition residual for user-supplied shadow prices.

    Marginal rent ``dpi/dE`` minus ``sum_k lambda_k |d kdot / dE|`` for
    ``k`` in user base, algorithmic capital and reputation.  Zero at an
    interior optimum of the Hamiltonian.
    """
    mkt = _as_market(params)
    e_hi = np.array(e, dtype=float)
    e_lo = np.array(e, dtype=float)
    e_hi[focal] += de
    e_lo[focal] -= de
    q = y[focal, Q]
    dpi = mkt.p1[focal] * q
    d_hi = derivatives(y, e_hi, i_a, i_c, mkt)
    d_lo = derivatives(y, e_lo, i_a, i_c, mkt)
    grad = (d_hi - d_lo)[focal] / (2 * de)
    cost = (
        shadow.get("q", 0.0) * abs(grad[Q])
        + shadow.get("t", 0.0) * abs(grad[TA])
        + shadow.get("r", 0.0) * abs(grad[REP])
    )
    return float(dpi - cost)
