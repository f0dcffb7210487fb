"""Agent-based market with heterogeneous firms, users and a policy layer.

Six firm agents compete for a population of users who pick a provider each
step by multinomial logit.  A fixed policy scenario (S0-S4) adjusts firm
incentives.  A step runs in this order: policy incentives, user choices
(then the share cap, if one is in force), firm updates, metrics.

Money is measured in millions per step.  Revenue, subsidy, tax and safety
cost are all quoted per unit of market share against a fixed per-step market
value, so the economics do not depend on how many user agents are simulated.

Random numbers: the choice uniforms of step ``t`` come from a generator
seeded with ``mix_seed(seed, t, stream)`` and are indexed by user id, so each
user's draw is a pure function of (seed, step, user id).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .stats import mix_seed

SEGMENTS = (
    "TechExperts",
    "PriceSensitive",
    "SafetyPriority",
    "BrandLoyal",
    "EarlyAdopters",
    "BalancedUsers",
)
# Beta shapes for (tech_savvy, price_sens, safety_pref, brand_loyalty)
SEGMENT_SHAPES = {
    "TechExperts": ((6, 2), (2, 5), (4, 3), (3, 4)),
    "PriceSensitive": ((2, 5), (6, 2), (2, 4), (4, 3)),
    "SafetyPriority": ((3, 3), (3, 4), (6, 2), (5, 2)),
    "BrandLoyal": ((3, 3), (3, 3), (3, 3), (6, 2)),
    "EarlyAdopters": ((4, 2), (3, 3), (2, 4), (2, 5)),
    "BalancedUsers": ((3, 3), (3, 3), (3, 3), (3, 3)),
}
SCENARIOS = ("S0", "S1", "S2", "S3", "S4")
STRATEGIES = ("club_good", "safety_club", "hybrid", "strong_public")
TECH_MAX = 110.0
METRIC_FIELDS = ("step", "scenario", "seed", "welfare", "avg_pgi", "hhi", "innovation", "data_quality", "safety")

# stream ids for mix_seed
_INIT, _CHOICE, _CAP = 0, 1, 2


class AbmError(ValueError):
    pass


@dataclass(frozen=True)
class FirmAgent:
    firm_id: str
    capital: float
    tech_level: float
    market_share: float
    strategy_tag: str
    excludability: float
    safety_investment: float
    rd_rate: float
    price: float = 0.0
    pgi: float = 0.0
    dormant: bool = False

    def __post_init__(self):
        if self.capital < 0:
            raise AbmError(f"{self.firm_id}: capital must be >= 0")
        if not 0 <= self.tech_level <= TECH_MAX:
            raise AbmError(f"{self.firm_id}: tech_level outside [0, {TECH_MAX}]")
        for name in ("market_share", "excludability", "safety_investment", "rd_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise AbmError(f"{self.firm_id}: {name} = {v} outside [0, 1]")


@dataclass(frozen=True)
class UserAgent:
    user_id: int
    segment: str
    tech_savvy: float
    price_sens: float
    safety_pref: float
    brand_loyalty: float
    provider: str | None
    switching_cost: float


@dataclass(frozen=True)
class AbmParams:
    mu: float = 1.0
    # incumbency: bonus for staying and cost of leaving, both scaled by loyalty
    loyalty_bonus: float = 6.0
    switch_cost: float = 6.0
    network_weight: float = 4.0
    # economics, millions per step
    market_value: float = 1000.0
    price_base: float = 1.0
    data_value: float = 2.0
    safety_cost: float = 0.5
    rd_period: float = 0.25  # fraction of the annual R&D rate spent per step
    tech_gain: float = 2.0
    rd_ref: float = 500.0
    e_step: float = 0.05
    zeta: float = 2.0
    safety_response: float = 0.5
    capacity_ref: float = 30000.0
    x_neg_scale: float = 3.0
    # welfare composite
    w_cs: float = 0.4
    w_ps: float = 0.2
    w_in: float = 0.2
    w_neg: float = 0.2
    innovation_ref: float = 0.01
    welfare_scale: float = 21661.0  # puts the S0 terminal mean near 40,000

    def __post_init__(self):
        if self.mu <= 0:
            raise AbmError("mu must be > 0")
        if self.e_step <= 0:
            raise AbmError("e_step must be > 0")


@dataclass(frozen=True)
class PolicyScenario:
    scenario_id: str
    subsidy_rate: float = 0.0
    pollution_tax_rate: float = 0.0
    share_cap: float | None = None
    portfolio: bool = False

    def __post_init__(self):
        if self.scenario_id not in SCENARIOS:
            raise AbmError(f"unknown scenario {self.scenario_id!r}")
        if self.subsidy_rate < 0 or self.pollution_tax_rate < 0:
            raise AbmError("policy rates must be >= 0")
        if self.share_cap is not None and not 0 < self.share_cap <= 1:
            raise AbmError("share_cap must lie in (0, 1]")


DEFAULT_SUBSIDY = 0.2
DEFAULT_TAX = 2.0
DEFAULT_CAP = 0.35


def make_scenario(
    scenario_id: str,
    subsidy_rate: float = DEFAULT_SUBSIDY,
    pollution_tax_rate: float = DEFAULT_TAX,
    share_cap: float = DEFAULT_CAP,
) -> PolicyScenario:
    """The five standard scenarios; rates apply only where the scenario uses them."""
    if scenario_id == "S0":
        return PolicyScenario("S0")
    if scenario_id == "S1":
        return PolicyScenario("S1", subsidy_rate=subsidy_rate)
    if scenario_id == "S2":
        return PolicyScenario("S2", pollution_tax_rate=pollution_tax_rate)
    if scenario_id == "S3":
        return PolicyScenario("S3", share_cap=share_cap)
    if scenario_id == "S4":
        return PolicyScenario("S4", subsidy_rate, pollution_tax_rate, share_cap, portfolio=True)
    raise AbmError(f"unknown scenario {scenario_id!r}")


@dataclass
class MarketState:
    """Firm and user attributes held column-wise; agents are views built on demand."""

    firm_ids: tuple[str, ...]
    strategy: tuple[str, ...]
    capital: np.ndarray
    tech: np.ndarray
    share: np.ndarray
    excl: np.ndarray
    safety: np.ndarray
    rd_rate: np.ndarray
    dormant: np.ndarray
    segment: np.ndarray  # index into SEGMENTS
    prefs: np.ndarray  # (n_users, 4): tech, price, safety, loyalty
    provider: np.ndarray  # firm index per user
    seed: int
    step: int = 0
    last_growth: np.ndarray = field(default=None)
    last_profit: np.ndarray = field(default=None)
    last_utility: np.ndarray = field(default=None)

    @property
    def n_users(self) -> int:
        return len(self.provider)

    @property
    def n_firms(self) -> int:
        return len(self.firm_ids)

    def copy(self) -> "MarketState":
        out = replace(self)
        for name in ("capital", "tech", "share", "excl", "safety", "rd_rate", "dormant", "segment", "prefs", "provider"):
            setattr(out, name, getattr(self, name).copy())
        return out

    def firm(self, i: int, params: AbmParams = AbmParams()) -> FirmAgent:
        pg = firm_pgi(self, params)
        return FirmAgent(
            self.firm_ids[i], float(self.capital[i]), float(self.tech[i]), float(self.share[i]),
            self.strategy[i], float(self.excl[i]), float(self.safety[i]), float(self.rd_rate[i]),
            float(params.price_base * self.excl[i]), float(pg[i]), bool(self.dormant[i]),
        )

    def firms(self, params: AbmParams = AbmParams()) -> list[FirmAgent]:
        return [self.firm(i, params) for i in range(self.n_firms)]

    def user(self, k: int, params: AbmParams = AbmParams()) -> UserAgent:
        ts, ps, sp, bl = (float(v) for v in self.prefs[k])
        return UserAgent(k, SEGMENTS[self.segment[k]], ts, ps, sp, bl, self.firm_ids[self.provider[k]],
                         params.switch_cost * bl)

    def state_bytes(self) -> bytes:
        parts = [self.capital, self.tech, self.share, self.excl, self.safety, self.prefs, self.provider]
        return b"".join(np.ascontiguousarray(p).tobytes() for p in parts)


def load_firm_table(path: str | Path | None = None) -> list[FirmAgent]:
    if path is None:
        text = resources.files("pgilab").joinpath("data/abm_firms.csv").read_text(encoding="utf-8")
        source = "abm_firms.csv"
    else:
        text = Path(path).read_text(encoding="utf-8")
        source = str(path)
    rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
    firms = []
    for n, r in enumerate(rows, start=2):
        try:
            firms.append(FirmAgent(
                r["firm_id"], float(r["capital"]), float(r["tech_level"]), float(r["market_share"]),
                r["strategy_tag"], float(r["excludability"]), float(r["safety_investment"]), float(r["rd_rate"]),
            ))
        except (KeyError, ValueError) as exc:
            raise AbmError(f"{source}:{n}: {exc}") from exc
    if not firms:
        raise AbmError(f"{source}: no firms")
    total = sum(f.market_share for f in firms)
    if abs(total - 1) > 1e-6:
        raise AbmError(f"{source}: market shares sum to {total}")
    return firms


def hhi(shares) -> float:
    s = np.asarray(shares, dtype=float)
    return float(np.sum(s * s))


def _segments(n_users: int) -> np.ndarray:
    # equal blocks of n // 6, remainder dealt round-robin
    base, rem = divmod(n_users, len(SEGMENTS))
    counts = [base + (1 if k < rem else 0) for k in range(len(SEGMENTS))]
    return np.repeat(np.arange(len(SEGMENTS)), counts)


def init_market(
    n_users: int = 2000,
    seed: int = 0xC0FFEE,
    firms: Sequence[FirmAgent] | None = None,
    params: AbmParams = AbmParams(),
) -> MarketState:
    """Firms from the bundled table, users drawn segment by segment.

    Initial providers are a logit draw over log table shares, i.e. each user
    independently picks firm ``j`` with probability equal to its table share.
    """
    if n_users < len(SEGMENTS):
        raise AbmError(f"n_users must be >= {len(SEGMENTS)}")
    firms = list(firms) if firms is not None else load_firm_table()
    rng = np.random.default_rng(mix_seed(seed, _INIT))
    seg = _segments(n_users)
    prefs = np.empty((n_users, 4))
    for k, name in enumerate(SEGMENTS):
        idx = np.flatnonzero(seg == k)
        for c, (a, b) in enumerate(SEGMENT_SHAPES[name]):
            prefs[idx, c] = rng.beta(a, b, size=idx.size)
    shares0 = np.array([f.market_share for f in firms])
    u = rng.random(n_users)
    provider = logit_draw(np.log(np.maximum(shares0, 1e-300))[None, :].repeat(n_users, 0), u, 1.0)
    nf = len(firms)
    state = MarketState(
        firm_ids=tuple(f.firm_id for f in firms),
        strategy=tuple(f.strategy_tag for f in firms),
        capital=np.array([f.capital for f in firms], float),
        tech=np.array([f.tech_level for f in firms], float),
        share=np.bincount(provider, minlength=nf) / n_users,
        excl=np.array([f.excludability for f in firms], float),
        safety=np.array([f.safety_investment for f in firms], float),
        rd_rate=np.array([f.rd_rate for f in firms], float),
        dormant=np.zeros(nf, bool),
        segment=seg,
        prefs=prefs,
        provider=provider,
        seed=seed,
    )
    state.last_growth = np.zeros(nf)
    state.last_profit = (
        revenue_amount(state.excl, state.share, params)
        - state.rd_rate * state.capital * params.rd_period
        - safety_cost_amount(state.safety, state.share, params)
    )
    state.last_utility = realized_utility(state, params)
    return state


def user_utility(user: UserAgent, firm: FirmAgent, network_share: float, params: AbmParams = AbmParams()) -> float:
    """Deterministic part of a user's utility for one firm."""
    u = (
        user.tech_savvy * firm.tech_level / TECH_MAX
        + user.price_sens * (1.0 - firm.excludability)
        + user.safety_pref * firm.safety_investment
        + params.network_weight * user.brand_loyalty * network_share
    )
    if user.provider is not None:
        if firm.firm_id == user.provider:
            u += params.loyalty_bonus * user.brand_loyalty
        else:
            u -= user.switching_cost
    return u


def _attribute_utility(state: MarketState, params: AbmParams, excl: np.ndarray | None = None) -> np.ndarray:
    excl = state.excl if excl is None else excl
    ts, ps, sp, bl = state.prefs.T
    return (
        np.outer(ts, state.tech / TECH_MAX)
        + np.outer(ps, 1.0 - excl)
        + np.outer(sp, state.safety)
        + params.network_weight * np.outer(bl, state.share)
    )


def utility_matrix(state: MarketState, params: AbmParams = AbmParams(), incumbency: bool = True) -> np.ndarray:
    """(n_users, n_firms) utilities; dormant firms get -inf."""
    U = _attribute_utility(state, params)
    if incumbency:
        bl = state.prefs[:, 3]
        own = np.zeros_like(U, dtype=bool)
        own[np.arange(state.n_users), state.provider] = True
        U = U + np.where(own, params.loyalty_bonus * bl[:, None], -params.switch_cost * bl[:, None])
    U[:, state.dormant] = -np.inf
    return U


def logit_probs(U: np.ndarray, mu: float) -> np.ndarray:
    z = U / mu
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def logit_draw(U: np.ndarray, u: np.ndarray, mu: float) -> np.ndarray:
    """Inverse-CDF sample of softmax(U / mu) per row using uniforms ``u``."""
    p = logit_probs(np.atleast_2d(U), mu)
    cdf = np.cumsum(p, axis=-1)
    cdf[:, -1] = 1.0
    k = (cdf <= np.asarray(u)[:, None]).sum(axis=-1)
    # never land on a zero-probability column
    return np.minimum(k, p.shape[-1] - 1)


def choose_provider(
    user: UserAgent,
    firms: Sequence[FirmAgent],
    rng: np.random.Generator,
    mu: float = 1.0,
    params: AbmParams = AbmParams(),
) -> str:
    """Sample one user's provider among active firms; returns the firm id."""
    active = [f for f in firms if not f.dormant]
    if not active:
        raise AbmError("no active firm")
    if mu <= 0:
        raise AbmError("mu must be > 0")
    U = np.array([user_utility(user, f, f.market_share, params) for f in active])
    k = int(logit_draw(U[None, :], np.array([rng.random()]), mu)[0])
    return active[k].firm_id


@dataclass(frozen=True)
class Incentives:
    """Per-step policy schedule handed to firms."""

    subsidy_rate: float = 0.0
    tax_rate: float = 0.0
    share_cap: float | None = None


def apply_policy(scenario: PolicyScenario, state: MarketState | None = None) -> Incentives:
    """Translate a scenario into the incentives firms face this step. S0 is identity."""
    return Incentives(scenario.subsidy_rate, scenario.pollution_tax_rate, scenario.share_cap)


def subsidy_amount(excl, share, rate: float, params: AbmParams) -> np.ndarray:
    """Per-step subsidy, proportional to openness times users served."""
    return rate * (1.0 - np.asarray(excl)) * np.asarray(share) * params.market_value


def tax_amount(share, safety, rate: float, params: AbmParams) -> np.ndarray:
    """Pollution tax on share^zeta times users served, abated by safety investment."""
    s = np.asarray(share)
    return rate * s**params.zeta * s * params.market_value * (1.0 - np.asarray(safety))


def revenue_amount(excl, share, params: AbmParams) -> np.ndarray:
    return (params.price_base * np.asarray(excl) + params.data_value) * np.asarray(share) * params.market_value


def safety_cost_amount(safety, share, params: AbmParams) -> np.ndarray:
    return params.safety_cost * np.asarray(safety) * np.asarray(share) * params.market_value


def enforce_share_cap(state: MarketState, cap: float, params: AbmParams, u: np.ndarray) -> int:
    """Move users off firms above ``cap`` to the others by logit weights.

    The least attached users leave first (smallest utility margin over their
    best alternative, ties by user id).  Returns the number of users moved.
    """
    n = state.n_users
    limit = int(math.floor(cap * n + 1e-9))
    U = utility_matrix(state, params)
    moved = 0
    capped = np.zeros(state.n_firms, bool)
    for _ in range(state.n_firms):
        counts = np.bincount(state.provider, minlength=state.n_firms)
        over = np.flatnonzero(counts > limit)
        if over.size == 0:
            break
        capped[over] = True
        for j in over:
            members = np.flatnonzero(state.provider == j)
            alt = U[members].copy()
            alt[:, capped | state.dormant] = -np.inf
            margin = U[members, j] - alt.max(axis=1)
            order = np.lexsort((members, margin))
            leave = members[order[: counts[j] - limit]]
            W = U[leave].copy()
            W[:, capped | state.dormant] = -np.inf
            if not np.isfinite(W).any(axis=1).all():
                raise AbmError("share cap infeasible: no uncapped firm left")
            state.provider[leave] = logit_draw(W, u[leave], params.mu)
            moved += leave.size
    state.share = np.bincount(state.provider, minlength=state.n_firms) / n
    return moved


def choose_all(state: MarketState, params: AbmParams) -> None:
    """Every user re-chooses; draws indexed by user id, applied in id order."""
    U = utility_matrix(state, params)
    u = np.random.default_rng(mix_seed(state.seed, state.step, _CHOICE)).random(state.n_users)
    state.provider = logit_draw(U, u, params.mu)
    state.share = np.bincount(state.provider, minlength=state.n_firms) / state.n_users


def long_run_share(state: MarketState, i: int, e_values, params: AbmParams) -> np.ndarray:
    """Share firm ``i`` would attract from incumbency-free choices at each candidate E."""
    U = _attribute_utility(state, params)
    U[:, state.dormant] = -np.inf
    ps = state.prefs[:, 1]
    out = []
    for e in e_values:
        V = U.copy()
        V[:, i] = U[:, i] + ps * (state.excl[i] - e)
        out.append(float(logit_probs(V, params.mu)[:, i].mean()))
    return np.array(out)


def myopic_objective(state: MarketState, i: int, e_values, inc: Incentives, params: AbmParams) -> np.ndarray:
    e_values = np.asarray(e_values, float)
    s = long_run_share(state, i, e_values, params)
    saf = state.safety[i]
    return (
        revenue_amount(e_values, s, params)
        + subsidy_amount(e_values, s, inc.subsidy_rate, params)
        - tax_amount(s, saf, inc.tax_rate, params)
        - safety_cost_amount(saf, s, params)
    )


def choose_excludability(state: MarketState, i: int, inc: Incentives, params: AbmParams) -> float:
    """Best of {E - step, E, E + step} clamped to [0, 1]; ties go to the smaller E."""
    e = state.excl[i]
    cands = np.unique(np.clip(np.round([e - params.e_step, e, e + params.e_step], 10), 0.0, 1.0))
    vals = myopic_objective(state, i, cands, inc, params)
    return float(cands[int(np.argmax(vals))])


def firm_step(state: MarketState, i: int, inc: Incentives, params: AbmParams = AbmParams()) -> FirmAgent:
    """One firm's update given the post-choice market; ``state`` is not modified."""
    if state.dormant[i]:
        return state.firm(i, params)
    share = state.share[i]
    rd = state.rd_rate[i] * state.capital[i] * params.rd_period
    revenue = revenue_amount(state.excl[i], share, params)
    scost = safety_cost_amount(state.safety[i], share, params)
    sub = subsidy_amount(state.excl[i], share, inc.subsidy_rate, params)
    tax = tax_amount(share, state.safety[i], inc.tax_rate, params)
    profit = revenue - rd - scost
    capital = state.capital[i] + profit + sub - tax
    tech = state.tech[i]
    tech = min(TECH_MAX, tech + params.tech_gain * math.sqrt(max(rd, 0.0) / params.rd_ref) * (1 - tech / TECH_MAX))
    e_new = choose_excludability(state, i, inc, params)
    safety = state.safety[i]
    if inc.tax_rate > 0:
        safety = min(1.0, safety + params.safety_response * inc.tax_rate * (1 - safety) * params.e_step)
    dormant = capital <= 0
    return FirmAgent(
        state.firm_ids[i], max(capital, 0.0), tech, float(share), state.strategy[i], e_new, safety,
        float(state.rd_rate[i]), params.price_base * e_new, 0.0, bool(dormant),
    )


def step_firms(state: MarketState, inc: Incentives, params: AbmParams) -> None:
    updates = [firm_step(state, i, inc, params) for i in range(state.n_firms)]
    old_tech = state.tech.copy()
    rd = state.rd_rate * state.capital * params.rd_period
    revenue = revenue_amount(state.excl, state.share, params)
    profit = revenue - rd - safety_cost_amount(state.safety, state.share, params)
    for i, f in enumerate(updates):
        state.capital[i] = f.capital
        state.tech[i] = f.tech_level
        state.excl[i] = f.excludability
        state.safety[i] = f.safety_investment
        state.dormant[i] = f.dormant
    state.last_growth = np.where(old_tech > 0, (state.tech - old_tech) / np.maximum(old_tech, 1e-12), 0.0)
    state.last_profit = profit


def realized_utility(state: MarketState, params: AbmParams) -> np.ndarray:
    """Each user's deterministic utility at the provider they hold."""
    U = utility_matrix(state, params)
    return U[np.arange(state.n_users), state.provider]


def firm_pgi(state: MarketState, params: AbmParams = AbmParams()) -> np.ndarray:
    """Empirical PGI proxy per firm: capacity headroom, openness, externality balance."""
    load = state.share * params.capacity_ref
    den = state.capital + load
    c_q = np.divide(state.capital, den, out=np.ones_like(den), where=den > 0)
    c_e = 1.0 - state.excl
    xp = (1.0 - state.excl) * state.tech / TECH_MAX
    xn = params.x_neg_scale * state.share**params.zeta * (1.0 - state.safety)
    dx = xp + xn
    c_x = np.divide(xp - xn, dx, out=np.zeros_like(dx), where=dx > 0)
    return (c_q + c_e + c_x) / 3.0


def pollution(state: MarketState, params: AbmParams) -> float:
    return float(np.sum(state.share**params.zeta * (1.0 - state.safety)))


@dataclass(frozen=True)
class MarketMetrics:
    step: int
    social_welfare: float
    avg_pgi: float
    hhi: float
    innovation_index: float
    data_quality: float
    safety_index: float
    segment_satisfaction: dict
    strategy_pgi: dict
    strategy_safety: dict
    strategy_share: dict
    excludability_mean: float = 0.0
    max_share: float = 0.0

    def row(self, scenario: str, seed: int) -> dict:
        return {
            "step": self.step, "scenario": scenario, "seed": seed, "welfare": self.social_welfare,
            "avg_pgi": self.avg_pgi, "hhi": self.hhi, "innovation": self.innovation_index,
            "data_quality": self.data_quality, "safety": self.safety_index,
        }


def welfare_index(mean_utility: float, total_profit: float, innovation: float, poll: float, params: AbmParams) -> float:
    return params.welfare_scale * (
        params.w_cs * mean_utility
        + params.w_ps * total_profit / params.market_value
        + params.w_in * innovation / params.innovation_ref
        - params.w_neg * poll
    )


def compute_metrics(state: MarketState, params: AbmParams = AbmParams()) -> MarketMetrics:
    active = ~state.dormant
    util = realized_utility(state, params)
    state.last_utility = util
    pg = firm_pgi(state, params)
    innovation = float(np.mean(state.last_growth[active])) if active.any() else 0.0
    poll = pollution(state, params)
    welfare = welfare_index(float(util.mean()), float(state.last_profit.sum()), innovation, poll, params)
    seg_sat = {name: float(util[state.segment == k].mean()) for k, name in enumerate(SEGMENTS)
               if np.any(state.segment == k)}
    tags = np.array(state.strategy)
    by = lambda arr: {t: float(arr[tags == t].mean()) for t in dict.fromkeys(state.strategy)}  # noqa: E731
    return MarketMetrics(
        step=state.step,
        social_welfare=welfare,
        avg_pgi=float(pg[active].mean()) if active.any() else 0.0,
        hhi=hhi(state.share),
        innovation_index=innovation,
        data_quality=float(np.sum(state.share * state.safety)),
        safety_index=float(state.safety[active].mean()) if active.any() else 0.0,
        segment_satisfaction=seg_sat,
        strategy_pgi=by(pg),
        strategy_safety=by(state.safety),
        strategy_share=by(state.share),
        excludability_mean=float(state.excl[active].mean()) if active.any() else 0.0,
        max_share=float(state.share.max()),
    )


def market_step(state: MarketState, scenario: PolicyScenario, params: AbmParams) -> MarketMetrics:
    """Advance ``state`` in place by one step and return its metrics."""
    state.step += 1
    inc = apply_policy(scenario, state)
    choose_all(state, params)
    if inc.share_cap is not None:
        u = np.random.default_rng(mix_seed(state.seed, state.step, _CAP)).random(state.n_users)
        enforce_share_cap(state, inc.share_cap, params, u)
    step_firms(state, inc, params)
    return compute_metrics(state, params)


@dataclass
class ScenarioRun:
    scenario: PolicyScenario
    seed: int
    n_users: int
    metrics: list  # MarketMetrics, index 0 is the initial state
    final_state: MarketState

    @property
    def terminal(self) -> MarketMetrics:
        return self.metrics[-1]

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.metrics])

    def rows(self) -> list[dict]:
        return [m.row(self.scenario.scenario_id, self.seed) for m in self.metrics]


def run_scenario(
    scenario: PolicyScenario | str,
    steps: int = 20,
    n_users: int = 2000,
    seed: int = 0xC0FFEE,
    params: AbmParams = AbmParams(),
    firms: Sequence[FirmAgent] | None = None,
) -> ScenarioRun:
    if isinstance(scenario, str):
        scenario = make_scenario(scenario)
    if steps < 1:
        raise AbmError("steps must be >= 1")
    state = init_market(n_users, seed, firms, params)
    metrics = [compute_metrics(state, params)]
    for _ in range(steps):
        metrics.append(market_step(state, scenario, params))
    return ScenarioRun(scenario, seed, n_users, metrics, state)


def terminal_values(run: ScenarioRun) -> dict:
    m = run.terminal
    return {
        "welfare": m.social_welfare, "avg_pgi": m.avg_pgi, "hhi": m.hhi,
        "innovation": float(np.mean(run.series("innovation_index")[1:])),
        "data_quality": m.data_quality, "safety": m.safety_index,
        "excludability": m.excludability_mean,
    }


def terminal_runner(
    steps: int = 20,
    n_users: int = 2000,
    params: AbmParams = AbmParams(),
    scenarios: dict | None = None,
):
    """Runner for :func:`pgilab.stats.mc_compare`; returns (terminal values, run)."""
    scenarios = scenarios or {}

    def runner(sid: str, seed: int):
        sc = scenarios.get(sid) or make_scenario(sid)
        run = run_scenario(sc, steps, n_users, seed, params)
        return terminal_values(run), run

    return runner


@dataclass(frozen=True)
class SegmentReport:
    segment_delta: dict  # scenario -> {segment: mean satisfaction delta}
    strategy_delta: dict  # scenario -> {tag: {"pgi":..., "safety":..., "share":...}}
    strategy_max_share: dict  # scenario -> {tag: mean terminal share}


def segment_report(runs: dict, baseline: str = "S0") -> SegmentReport:
    """Terminal-step deltas vs the baseline, averaged over replications.

    ``runs`` maps scenario id to a list of :class:`ScenarioRun`.
    """
    if baseline not in runs or not runs[baseline]:
        raise AbmError(f"no runs for baseline {baseline}")

    def mean_dict(rs, attr):
        keys = getattr(rs[0].terminal, attr).keys()
        return {k: float(np.mean([getattr(r.terminal, attr)[k] for r in rs])) for k in keys}

    base_seg = mean_dict(runs[baseline], "segment_satisfaction")
    base = {a: mean_dict(runs[baseline], a) for a in ("strategy_pgi", "strategy_safety", "strategy_share")}
    seg_delta, strat_delta, strat_share = {}, {}, {}
    for sid, rs in runs.items():
        if not rs:
            raise AbmError(f"no runs for scenario {sid}")
        seg = mean_dict(rs, "segment_satisfaction")
        seg_delta[sid] = {k: seg[k] - base_seg[k] for k in seg}
        cur = {a: mean_dict(rs, a) for a in base}
        strat_delta[sid] = {
            t: {
                "pgi": cur["strategy_pgi"][t] - base["strategy_pgi"][t],
                "safety": cur["strategy_safety"][t] - base["strategy_safety"][t],
                "share": cur["strategy_share"][t] - base["strategy_share"][t],
            }
            for t in cur["strategy_pgi"]
        }
        strat_share[sid] = cur["strategy_share"]
    return SegmentReport(seg_delta, strat_delta, strat_share)
