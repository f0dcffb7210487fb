"""Monte Carlo harness and summary statistics.

Conventions: normal-approximation 95% intervals, pooled-sd Cohen's d,
moment-based skewness and Pearson kurtosis (normal = 3), and the
Jarque-Bera test against chi-square with 2 degrees of freedom.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import chi2

CONVENTIONS = "ci95=normal-approx; d=pooled-sd; kurtosis=pearson; normality=jarque-bera chi2(2)"
MASK64 = (1 << 64) - 1
Z95 = 1.96


class StatsError(ValueError):
    pass


class DegenerateSampleError(StatsError):
    pass


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed with the splitmix64 finalizer.

    Each part is absorbed as ``h = splitmix64(h ^ part)`` starting from a fixed
    constant, so the result depends on both the values and their order.
    """
    h = 0x6A09E667F3BCC909
    for p in parts:
        h = _splitmix64(h ^ (int(p) & MASK64))
    return h


def _arr(sample, min_n: int, what: str) -> np.ndarray:
    x = np.asarray(sample, dtype=float).ravel()
    if x.size < min_n:
        raise StatsError(f"{what} needs n >= {min_n}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise StatsError(f"{what}: sample contains non-finite values")
    return x


def ci95(sample) -> tuple[float, float]:
    x = _arr(sample, 2, "ci95")
    m = float(np.mean(x))
    half = Z95 * float(np.std(x, ddof=1)) / math.sqrt(x.size)
    return m - half, m + half


def cv(sample) -> float:
    x = _arr(sample, 2, "cv")
    m = float(np.mean(x))
    if m == 0:
        raise StatsError("cv undefined for zero mean")
    return float(np.std(x, ddof=1)) / abs(m)


def cohens_d(a, b) -> float:
    a = _arr(a, 2, "cohens_d")
    b = _arr(b, 2, "cohens_d")
    na, nb = a.size, b.size
    pooled = math.sqrt(((na - 1) * np.var(a, ddof=1) + (nb - 1) * np.var(b, ddof=1)) / (na + nb - 2))
    if pooled == 0:
        raise DegenerateSampleError("pooled standard deviation is zero")
    # written as a difference of two terms so that d(a, b) == -d(b, a) exactly
    return float(np.mean(a) / pooled - np.mean(b) / pooled)


def shape_stats(sample) -> tuple[float, float, float, float]:
    """(skewness, kurtosis, Jarque-Bera statistic, p-value)."""
    x = _arr(sample, 8, "shape_stats")
    d = x - x.mean()
    m2 = float(np.mean(d**2))
    if m2 == 0:
        raise DegenerateSampleError("zero variance")
    skew = float(np.mean(d**3)) / m2**1.5
    kurt = float(np.mean(d**4)) / m2**2
    jb = x.size * (skew**2 / 6 + (kurt - 3) ** 2 / 24)
    return skew, kurt, jb, float(chi2.sf(jb, 2))


def interpret_d(d: float) -> str:
    a = abs(d)
    if a < 0.2:
        return "negligible"
    if a < 0.5:
        return "small"
    if a < 0.8:
        return "medium"
    return "large"


@dataclass(frozen=True)
class RunStats:
    metric_name: str
    n: int
    mean: float
    std: float
    ci95_lo: float
    ci95_hi: float
    cv: float
    skewness: float
    kurtosis: float
    jarque_bera_stat: float
    jb_p_value: float


def summarize(metric_name: str, sample) -> RunStats:
    x = _arr(sample, 2, metric_name)
    lo, hi = ci95(x)
    m = float(np.mean(x))
    c = cv(x) if m != 0 else math.nan
    try:
        sk, ku, jb, p = shape_stats(x)
    except StatsError:
        sk = ku = jb = p = math.nan
    return RunStats(metric_name, int(x.size), m, float(np.std(x, ddof=1)), lo, hi, c, sk, ku, jb, p)


@dataclass(frozen=True)
class EffectSize:
    metric_name: str
    scenario_a: str
    scenario_b: str
    cohens_d: float

    @property
    def interpretation(self) -> str:
        return interpret_d(self.cohens_d)


class ReplicationError(RuntimeError):
    def __init__(self, scenario: str, rep: int, seed: int, cause: Exception):
        super().__init__(f"replication failed: scenario={scenario} rep={rep} seed={seed}: {cause}")
        self.scenario, self.rep, self.seed = scenario, rep, seed


@dataclass
class McResult:
    scenarios: tuple[str, ...]
    reps: int
    base_seed: int
    samples: dict  # (scenario, metric) -> np.ndarray ordered by rep
    stats: dict  # (scenario, metric) -> RunStats
    effects: list  # EffectSize
    seeds: dict  # (scenario, rep) -> seed
    series: dict  # (scenario, rep) -> runner payload

    def metric(self, scenario: str, name: str) -> np.ndarray:
        return self.samples[(scenario, name)]

    def effect(self, name: str, a: str, b: str) -> float:
        for e in self.effects:
            if (e.metric_name, e.scenario_a, e.scenario_b) == (name, a, b):
                return e.cohens_d
        raise KeyError((name, a, b))


def replication_seed(base_seed: int, scenario_ordinal: int, rep: int) -> int:
    return mix_seed(base_seed, scenario_ordinal, rep)


def mc_compare(
    scenarios: Sequence[str],
    reps: int = 100,
    base_seed: int = 0xC0FFEE,
    runner: Callable[[str, int], tuple[dict, object]] | None = None,
    paired: bool = True,
    threads: int = 1,
    baseline: str | None = None,
) -> McResult:
    """Run ``reps`` replications of every scenario and aggregate terminal metrics.

    ``runner(scenario, seed)`` returns ``(metrics, payload)`` where ``metrics``
    maps names to terminal values.  With ``paired`` every scenario shares the
    seed of a given replication (common random numbers, scenario ordinal 0);
    otherwise the scenario's ordinal enters the seed.  Effect sizes compare
    each scenario with ``baseline`` (default: the first scenario).
    """
    if reps < 2:
        raise StatsError("reps must be >= 2")
    if not scenarios:
        raise StatsError("no scenarios")
    if runner is None:
        from .abm import terminal_runner

        runner = terminal_runner()
    jobs = []
    for k, s in enumerate(scenarios):
        for r in range(reps):
            jobs.append((s, r, replication_seed(base_seed, 0 if paired else k, r)))

    def run(job):
        s, r, seed = job
        try:
            return job, runner(s, seed)
        except Exception as exc:  # noqa: BLE001 - re-raised with the triple
            raise ReplicationError(s, r, seed, exc) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            done = list(ex.map(run, jobs))
    else:
        done = [run(j) for j in jobs]
    # fold in sorted key order so completion order never matters
    results = {(s, r): out for (s, r, _), out in done}
    seeds = {(s, r): seed for s, r, seed in jobs}
    metric_names = sorted(next(iter(results.values()))[0])
    samples, stats = {}, {}
    for s in scenarios:
        for m in metric_names:
            x = np.array([results[(s, r)][0][m] for r in range(reps)], dtype=float)
            samples[(s, m)] = x
            stats[(s, m)] = summarize(m, x)
    base = baseline or scenarios[0]
    effects = []
    for m in metric_names:
        for s in scenarios:
            if s == base:
                continue
            try:
                d = cohens_d(samples[(s, m)], samples[(base, m)])
            except DegenerateSampleError:
                d = math.nan
            effects.append(EffectSize(m, s, base, d))
    series = {k: v[1] for k, v in sorted(results.items())}
    return McResult(tuple(scenarios), reps, base_seed, samples, stats, effects, seeds, series)
