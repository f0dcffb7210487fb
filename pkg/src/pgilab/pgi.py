"""Public Goods Index composition, aggregation, ranking and robustness checks."""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import kendalltau

from .scorecard import Scorecard


class PgiError(ValueError):
    pass


class UndefinedRatioError(PgiError):
    pass


@dataclass(frozen=True)
class DimensionScores:
    c_q: float
    c_e: float
    c_x: float
    variant_tag: str = "empirical"

    def __post_init__(self):
        if self.variant_tag not in ("empirical", "theoretical"):
            raise PgiError(f"variant_tag must be empirical|theoretical, got {self.variant_tag!r}")
        for name in ("c_q", "c_e"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise PgiError(f"{name} = {v} outside [0, 1]")
        lo = 0.0 if self.variant_tag == "empirical" else -1.0
        if not lo <= self.c_x <= 1.0:
            raise PgiError(f"c_x = {self.c_x} outside [{lo}, 1] for {self.variant_tag} variant")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.c_q, self.c_e, self.c_x)


@dataclass(frozen=True)
class WeightVector:
    alpha: float = 1 / 3
    beta: float = 1 / 3
    gamma: float = 1 / 3

    def __post_init__(self):
        w = (self.alpha, self.beta, self.gamma)
        if min(w) < 0:
            raise PgiError(f"weights must be non-negative, got {w}")
        if abs(sum(w) - 1.0) > 1e-9:
            raise PgiError(f"weights must sum to 1, got {sum(w)!r}")

    @classmethod
    def normalized(cls, alpha: float, beta: float, gamma: float) -> "WeightVector":
        total = alpha + beta + gamma
        if total <= 0:
            raise PgiError("weights sum to zero")
        return cls(alpha / total, beta / total, gamma / total)

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])


EQUAL_WEIGHTS = WeightVector()


@dataclass(frozen=True)
class PgiResult:
    model_id: str
    dims: DimensionScores
    composite: float
    rank: int


def nonrivalry_ratio(q_star: float, load: float) -> float:
    """Share of uncongested capacity, ``q* / (q* + Q)``."""
    if q_star < 0 or load < 0:
        raise PgiError("capacity and load must be non-negative")
    if q_star + load == 0:
        raise UndefinedRatioError("non-rivalry ratio undefined for zero capacity and zero load")
    return q_star / (q_star + load)


def compose_dimension_mean(subscores: Sequence[float]) -> float:
    if len(subscores) == 0:
        raise PgiError("cannot compose a dimension from no sub-scores")
    return math.fsum(subscores) / len(subscores)


def externality_ratio(x_pos: float, x_neg: float) -> float:
    """Net externality balance in [-1, 1]."""
    if x_pos < 0 or x_neg < 0:
        raise PgiError("externality stocks must be non-negative")
    if x_pos + x_neg == 0:
        raise UndefinedRatioError("externality ratio undefined when both stocks are zero")
    return (x_pos - x_neg) / (x_pos + x_neg)


@dataclass(frozen=True)
class ExternalityScore:
    value: float
    computed: float
    overridden: bool

    @property
    def delta(self) -> float:
        """Published minus computed."""
        return self.value - self.computed


def compose_externality_empirical(
    pos: Sequence[float],
    neg_inverted: Sequence[float],
    w_pos: float = 0.5,
    override: float | None = None,
) -> ExternalityScore:
    """Two-block weighted mean of positive and inverted negative sub-scores.

    If ``override`` is given it is returned as the value; the computed mean is
    kept alongside so the discrepancy with published figures stays visible.
    """
    if not pos or not neg_inverted:
        raise PgiError("externality blocks must be non-empty")
    if not 0.0 <= w_pos <= 1.0:
        raise PgiError(f"w_pos = {w_pos} outside [0, 1]")
    computed = w_pos * compose_dimension_mean(pos) + (1 - w_pos) * compose_dimension_mean(neg_inverted)
    if override is None:
        return ExternalityScore(computed, computed, False)
    return ExternalityScore(override, computed, True)


def dimensions_from_scorecard(
    card: Scorecard, w_pos: float = 0.5, use_overrides: bool = True
) -> DimensionScores:
    if use_overrides and card.dimension_overrides is not None:
        return DimensionScores(*card.dimension_overrides)
    c_q = compose_dimension_mean(card.nonrivalry_scores)
    c_e = compose_dimension_mean(card.access_scores)
    c_x = compose_externality_empirical(
        card.positive_scores,
        card.negative_inv_scores,
        w_pos,
        card.cx_override if use_overrides else None,
    ).value
    return DimensionScores(c_q, c_e, c_x)


def pgi_linear(dims: DimensionScores, w: WeightVector = EQUAL_WEIGHTS) -> float:
    return w.alpha * dims.c_q + w.beta * dims.c_e + w.gamma * dims.c_x


def pgi_ces(dims: DimensionScores, w: WeightVector = EQUAL_WEIGHTS, rho_p: float = 1.0) -> float:
    """Weighted power mean of the three dimensions with exponent ``rho_p``."""
    if rho_p == 0:
        raise PgiError("rho_p = 0 (geometric limit) is not supported")
    comps = dims.as_tuple()
    if any(c < 0 for c in comps) and not float(rho_p).is_integer():
        raise PgiError(f"negative component with fractional rho_p={rho_p}")
    if rho_p == 1:
        return pgi_linear(dims, w)
    terms = []
    for wt, c in zip((w.alpha, w.beta, w.gamma), comps):
        if wt == 0:
            continue
        if c == 0 and rho_p < 0:
            raise PgiError("zero component with negative rho_p")
        try:
            terms.append(wt * c**rho_p)
        except OverflowError:
            # a vanishing component dominates a negative-exponent mean
            return 0.0
    total = math.fsum(terms)
    if total == 0:
        return 0.0
    return total ** (1.0 / rho_p)


def aggregate(dims: DimensionScores, w: WeightVector, aggregator: str = "linear", rho_p: float = 1.0) -> float:
    if aggregator == "linear":
        return pgi_linear(dims, w)
    if aggregator == "ces":
        return pgi_ces(dims, w, rho_p)
    raise PgiError(f"unknown aggregator {aggregator!r}")


def rank_order(composites: Sequence[tuple[str, float]]) -> list[tuple[str, float]]:
    """Descending composite; ties broken by ascending model id."""
    return sorted(composites, key=lambda kv: (-kv[1], kv[0]))


def rank_models(
    results: Sequence[tuple[str, float]],
    dims: dict[str, DimensionScores] | None = None,
) -> list[PgiResult]:
    if not results:
        raise PgiError("nothing to rank")
    out = []
    for rank, (mid, comp) in enumerate(rank_order(results), start=1):
        d = dims[mid] if dims is not None else None
        out.append(PgiResult(mid, d, comp, rank))
    return out


def compute_pgi(
    cards: Sequence[Scorecard],
    w: WeightVector = EQUAL_WEIGHTS,
    aggregator: str = "linear",
    rho_p: float = 1.0,
    w_pos: float = 0.5,
    use_overrides: bool = True,
) -> list[PgiResult]:
    dims = {c.model_id: dimensions_from_scorecard(c, w_pos, use_overrides) for c in cards}
    composites = [(mid, aggregate(d, w, aggregator, rho_p)) for mid, d in dims.items()]
    return rank_models(composites, dims)


# -- robustness ---------------------------------------------------------------


@dataclass
class SensitivityReport:
    n_draws: int
    seed: int
    box: tuple[float, float]
    rank_counts: dict[str, Counter]
    open_top_two: int
    closed_bottom: int
    open_top_two_and_closed_bottom: int
    pairwise_wins: dict[tuple[str, str], int] = field(default_factory=dict)

    def rank_frequency(self, model_id: str, rank: int) -> float:
        return self.rank_counts[model_id][rank] / self.n_draws

    @property
    def open_top_two_rate(self) -> float:
        return self.open_top_two / self.n_draws

    @property
    def closed_bottom_rate(self) -> float:
        return self.closed_bottom / self.n_draws

    def outrank_rate(self, a: str, b: str) -> float:
        return self.pairwise_wins[(a, b)] / self.n_draws

    def rows(self) -> list[tuple[str, int, float]]:
        out = []
        for mid in sorted(self.rank_counts):
            for r in range(1, len(self.rank_counts) + 1):
                out.append((mid, r, self.rank_counts[mid][r] / self.n_draws))
        return out


def weight_sensitivity(
    cards: Sequence[Scorecard],
    n_draws: int,
    box_lo: float = 0.2,
    box_hi: float = 0.5,
    seed: int = 0,
    w_pos: float = 0.5,
) -> SensitivityReport:
    """Rank stability under box-uniform weight draws renormalized to sum one."""
    if n_draws < 1:
        raise PgiError("n_draws must be >= 1")
    if not box_lo < box_hi:
        raise PgiError("box_lo must be < box_hi")
    ids = [c.model_id for c in cards]
    n = len(ids)
    dims = np.array([dimensions_from_scorecard(c, w_pos).as_tuple() for c in cards])
    rng = np.random.default_rng(seed)
    w = rng.uniform(box_lo, box_hi, size=(n_draws, 3))
    w /= w.sum(axis=1, keepdims=True)
    comp = w @ dims.T  # (draws, models)

    # stable tie-break: sort by (-composite, id) within each draw
    id_order = np.argsort(np.array(ids, dtype=object), kind="stable")
    ranked = comp[:, id_order]
    order_in_sorted = np.argsort(-ranked, axis=1, kind="stable")
    order = id_order[order_in_sorted]  # (draws, n) model indices by rank
    ranks = np.empty_like(order)
    rows = np.arange(n_draws)[:, None]
    ranks[rows, order] = np.arange(1, n + 1)[None, :]

    rank_counts = {mid: Counter({r: 0 for r in range(1, n + 1)}) for mid in ids}
    for j, mid in enumerate(ids):
        vals, cnts = np.unique(ranks[:, j], return_counts=True)
        for v, c in zip(vals, cnts):
            rank_counts[mid][int(v)] = int(c)

    is_open = np.array([c.is_open for c in cards])
    n_open = int(is_open.sum())
    top = order[:, :n_open]
    open_top = np.all(is_open[top], axis=1) if n_open else np.ones(n_draws, bool)
    bottom = order[:, n_open:]
    closed_bottom = np.all(~is_open[bottom], axis=1) if n - n_open else np.ones(n_draws, bool)

    wins = {}
    for a in range(n):
        for b in range(n):
            if a != b:
                wins[(ids[a], ids[b])] = int(np.sum(ranks[:, a] < ranks[:, b]))

    return SensitivityReport(
        n_draws=n_draws,
        seed=seed,
        box=(box_lo, box_hi),
        rank_counts=rank_counts,
        open_top_two=int(open_top.sum()),
        closed_bottom=int(closed_bottom.sum()),
        open_top_two_and_closed_bottom=int(np.sum(open_top & closed_bottom)),
        pairwise_wins=wins,
    )


@dataclass(frozen=True)
class CesComparison:
    rho_p: float
    results: list[PgiResult]
    kendall_tau: float


def ces_robustness(
    cards: Sequence[Scorecard],
    rhos: Iterable[float] = (0.5, 2.0),
    w: WeightVector = EQUAL_WEIGHTS,
) -> list[CesComparison]:
    """Re-rank under CES aggregation and report Kendall's tau against the linear ranking."""
    linear = {r.model_id: r.rank for r in compute_pgi(cards, w)}
    ids = sorted(linear)
    out = []
    for rho in rhos:
        res = compute_pgi(cards, w, "ces", rho)
        ranks = {r.model_id: r.rank for r in res}
        tau = kendalltau([linear[i] for i in ids], [ranks[i] for i in ids]).statistic
        out.append(CesComparison(rho, res, float(tau)))
    return out


# -- longitudinal case --------------------------------------------------------


@dataclass(frozen=True)
class CaseSeries:
    results: list[PgiResult]
    years: list[int]
    published: list[float]

    @property
    def relative_decline(self) -> float:
        """Fractional drop of the published composite from first to last release."""
        first, last = self.published[0], self.published[-1]
        return (first - last) / first

    @property
    def computed_decline(self) -> float:
        first, last = self.results[0].composite, self.results[-1].composite
        return (first - last) / first


def openai_case(path: str | Path | None = None) -> CaseSeries:
    """GPT-2 / GPT-3 / GPT-4 dimension triples with equal-weight composites.

    ``rank`` orders the releases chronologically (1 = earliest).
    """
    if path is None:
        src = resources.files("pgilab").joinpath("data/openai_case.csv")
        text = src.read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    results, years, published = [], [], []
    for i, rec in enumerate(csv.DictReader(text.splitlines()), start=1):
        dims = DimensionScores(float(rec["c_q"]), float(rec["c_e"]), float(rec["c_x"]))
        results.append(PgiResult(rec["model_id"], dims, pgi_linear(dims), i))
        years.append(int(rec["year"]))
        published.append(float(rec["published_pgi"]))
    return CaseSeries(results, years, published)


def pgi_gap(pgi_social: float, pgi_private: float) -> float:
    if not (math.isfinite(pgi_social) and math.isfinite(pgi_private)):
        raise PgiError("PGI values must be finite")
    return pgi_social - pgi_private


# GPT-4 social-optimum band, taken as given
GPT4_SOCIAL_BAND = (0.65, 0.75)
GPT4_PRIVATE_PGI = 0.37


def bundled_scorecards(with_dimensions: bool = True) -> list[Scorecard]:
    from .scorecard import attach_overrides, load_dimension_overrides, load_scorecards

    base = resources.files("pgilab").joinpath("data")
    with resources.as_file(base.joinpath("scorecards_2025.csv")) as p:
        cards = load_scorecards(p)
    if with_dimensions:
        with resources.as_file(base.joinpath("dimensions_2025.csv")) as p:
            cards = attach_overrides(cards, load_dimension_overrides(p))
    return cards
