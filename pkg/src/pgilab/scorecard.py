"""Indicator ingestion and scoring for the Public Goods Index.

Raw indicators are mapped onto [0, 1] either by min-max normalization within
a cohort or by a discrete rubric.  Negative-externality scores are stored
inverted (``1 - s``) so that every field of a :class:`Scorecard` reads
"higher = more public".
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

SCORECARD_COLUMNS = (
    "model_id",
    "access_mode",
    "load_score",
    "capacity_score",
    "legal_score",
    "economic_score",
    "citation_score",
    "download_score",
    "misuse_inv",
    "bias_inv",
    "env_inv",
    "cx_override",
)
SCORE_FIELDS = SCORECARD_COLUMNS[2:11]
ACCESS_MODES = {"open": "open-weight", "closed": "closed-api"}


class ScorecardError(ValueError):
    """Base class for ingestion and scoring failures."""


class DegenerateRangeError(ScorecardError):
    pass


class UnknownCategoryError(ScorecardError):
    pass


class ValidationError(ScorecardError):
    pass


class DuplicateModelError(ScorecardError):
    pass


@dataclass(frozen=True)
class RawIndicator:
    indicator_id: str
    value: float | str
    direction: str = "benefit"
    cohort_id: str = "default"
    source_note: str = ""

    def __post_init__(self):
        if self.direction not in ("benefit", "cost"):
            raise ValidationError(f"direction must be benefit|cost, got {self.direction!r}")
        if not isinstance(self.value, str):
            v = float(self.value)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(
                    f"{self.indicator_id}: numeric value must be finite and >= 0, got {self.value!r}"
                )

    @property
    def is_categorical(self) -> bool:
        return isinstance(self.value, str)


@dataclass(frozen=True)
class ScoringRubric:
    license_map: dict = field(
        default_factory=lambda: {"Proprietary": 0.0, "Restricted": 0.5, "Open": 1.0}
    )
    pricing_map: dict = field(
        default_factory=lambda: {"Paid": 0.2, "Freemium": 0.6, "Free": 1.0}
    )
    # pre-inversion: higher = worse
    misuse_map: dict = field(
        default_factory=lambda: {"HighRisk": 0.8, "Med": 0.6, "Low": 0.4}
    )
    bias_range: tuple = (0.3, 0.9)
    cohort_bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("license_map", "pricing_map", "misuse_map"):
            for label, v in getattr(self, name).items():
                if not 0.0 <= v <= 1.0:
                    raise ValidationError(f"{name}[{label}] = {v} outside [0, 1]")
        lo, hi = self.bias_range
        if not 0.0 <= lo < hi <= 1.0:
            raise ValidationError(f"bias_range {self.bias_range} invalid")

    def categorical_map(self, indicator_id: str) -> dict:
        maps = {
            "license": self.license_map,
            "pricing": self.pricing_map,
            "misuse": self.misuse_map,
        }
        if indicator_id == "bias":
            # qualitative literature score on a 0.1 grid over bias_range
            lo, hi = self.bias_range
            n = int(round((hi - lo) * 10))
            return {f"{lo + k / 10:.1f}": round(lo + k / 10, 10) for k in range(n + 1)}
        try:
            return maps[indicator_id]
        except KeyError:
            raise UnknownCategoryError(f"no rubric for indicator {indicator_id!r}") from None

    def bounds(self, cohort_id: str) -> tuple[float, float]:
        try:
            return self.cohort_bounds[cohort_id]
        except KeyError:
            raise ScorecardError(f"no normalization bounds for cohort {cohort_id!r}") from None


def normalize_minmax(
    x: float,
    lo: float,
    hi: float,
    invert: bool = False,
    default: float | None = None,
) -> float:
    """Min-max normalize ``x`` into [0, 1], clamping values outside ``[lo, hi]``.

    A degenerate range (``lo == hi``) raises unless ``default`` is given.
    """
    if not math.isfinite(x):
        raise ValidationError(f"x must be finite, got {x!r}")
    if hi == lo:
        if default is None:
            raise DegenerateRangeError(f"degenerate normalization range [{lo}, {hi}]")
        s = default
    elif hi < lo:
        raise DegenerateRangeError(f"inverted normalization range [{lo}, {hi}]")
    elif x <= lo:
        s = 0.0
    elif x >= hi:
        s = 1.0
    else:
        s = (x - lo) / (hi - lo)
    return 1.0 - s if invert else s


def score_categorical(indicator_id: str, label: str, rubric: ScoringRubric | None = None) -> float:
    """Rubric value for a categorical label.  Misuse and bias are returned pre-inversion."""
    rubric = rubric or ScoringRubric()
    mapping = rubric.categorical_map(indicator_id)
    try:
        return mapping[label]
    except KeyError:
        raise UnknownCategoryError(
            f"unknown category {label!r} for indicator {indicator_id!r}"
        ) from None


def score_indicator(ind: RawIndicator, rubric: ScoringRubric) -> float:
    """Score one raw indicator; ``cost`` direction inverts the result."""
    if ind.is_categorical:
        s = score_categorical(ind.indicator_id, ind.value, rubric)
    else:
        lo, hi = rubric.bounds(ind.cohort_id)
        s = normalize_minmax(float(ind.value), lo, hi)
    return 1.0 - s if ind.direction == "cost" else s


@dataclass(frozen=True)
class Scorecard:
    model_id: str
    access_mode: str
    load_score: float
    capacity_score: float
    legal_score: float
    economic_score: float
    citation_score: float
    download_score: float
    misuse_inv: float
    bias_inv: float
    env_inv: float
    cx_override: float | None = None
    dimension_overrides: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not self.model_id:
            raise ValidationError("model_id must be non-empty")
        if self.access_mode not in ACCESS_MODES.values():
            raise ValidationError(f"access_mode {self.access_mode!r} not in {sorted(ACCESS_MODES.values())}")
        for name in SCORE_FIELDS:
            _check_unit(name, getattr(self, name))
        if self.cx_override is not None:
            _check_unit("cx_override", self.cx_override)
        if self.dimension_overrides is not None:
            if len(self.dimension_overrides) != 3:
                raise ValidationError("dimension_overrides must be a (c_q, c_e, c_x) triple")
            for name, v in zip(("c_q", "c_e", "c_x"), self.dimension_overrides):
                _check_unit(name, v)

    @property
    def is_open(self) -> bool:
        return self.access_mode == "open-weight"

    @property
    def nonrivalry_scores(self) -> tuple[float, float]:
        return (self.load_score, self.capacity_score)

    @property
    def access_scores(self) -> tuple[float, float]:
        return (self.legal_score, self.economic_score)

    @property
    def positive_scores(self) -> tuple[float, float]:
        return (self.citation_score, self.download_score)

    @property
    def negative_inv_scores(self) -> tuple[float, float, float]:
        return (self.misuse_inv, self.bias_inv, self.env_inv)


def _check_unit(name: str, v) -> None:
    if not isinstance(v, (int, float)) or not math.isfinite(v) or not 0.0 <= v <= 1.0:
        raise ValidationError(f"{name} = {v!r} outside [0, 1]")


def scorecard_from_raw(
    model_id: str,
    access_mode: str,
    indicators: Iterable[RawIndicator],
    rubric: ScoringRubric,
    cx_override: float | None = None,
) -> Scorecard:
    """Build a scorecard from raw indicators keyed by scorecard field name.

    ``misuse`` and ``bias`` categorical indicators (and ``env`` numeric ones)
    are inverted here, so callers pass them with their natural orientation.
    """
    aliases = {"misuse": "misuse_inv", "bias": "bias_inv", "env": "env_inv",
               "license": "legal_score", "pricing": "economic_score"}
    values = {}
    for ind in indicators:
        key = aliases.get(ind.indicator_id, ind.indicator_id)
        s = score_indicator(ind, rubric)
        if key in ("misuse_inv", "bias_inv") and ind.is_categorical:
            s = 1.0 - s
        values[key] = s
    missing = [f for f in SCORE_FIELDS if f not in values]
    if missing:
        raise ValidationError(f"{model_id}: missing indicators {missing}")
    return Scorecard(model_id, access_mode, **{f: values[f] for f in SCORE_FIELDS},
                     cx_override=cx_override)


def _iter_data_lines(fh) -> Iterable[tuple[int, str]]:
    for lineno, line in enumerate(fh, start=1):
        if line.startswith("#"):
            continue
        yield lineno, line


def load_scorecards(path: str | Path) -> list[Scorecard]:
    """Read a scorecard CSV.  Leading ``#`` comment lines are skipped."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        numbered = list(_iter_data_lines(fh))
    if not numbered:
        raise ValidationError(f"{path}: missing header")
    linenos = [n for n, _ in numbered]
    rows = list(csv.reader(line for _, line in numbered))
    header = [h.strip() for h in rows[0]]
    if tuple(header) != SCORECARD_COLUMNS:
        raise ValidationError(
            f"{path}:{linenos[0]}: header must be {','.join(SCORECARD_COLUMNS)}"
        )
    out: list[Scorecard] = []
    seen: set[str] = set()
    for lineno, row in zip(linenos[1:], rows[1:]):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(SCORECARD_COLUMNS):
            raise ValidationError(
                f"{path}:{lineno}: expected {len(SCORECARD_COLUMNS)} fields, got {len(row)}"
            )
        rec = dict(zip(SCORECARD_COLUMNS, (c.strip() for c in row)))
        try:
            mode = ACCESS_MODES[rec["access_mode"]]
        except KeyError:
            raise ValidationError(
                f"{path}:{lineno}: access_mode must be open|closed, got {rec['access_mode']!r}"
            ) from None
        try:
            scores = {f: float(rec[f]) for f in SCORE_FIELDS}
            cx = float(rec["cx_override"]) if rec["cx_override"] else None
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        if rec["model_id"] in seen:
            raise DuplicateModelError(f"{path}:{lineno}: duplicate model_id {rec['model_id']!r}")
        try:
            card = Scorecard(rec["model_id"], mode, **scores, cx_override=cx)
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        seen.add(card.model_id)
        out.append(card)
    return out


def write_scorecards(cards: Sequence[Scorecard], path: str | Path) -> None:
    inv = {v: k for k, v in ACCESS_MODES.items()}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORECARD_COLUMNS)
        for c in cards:
            w.writerow(
                [c.model_id, inv[c.access_mode]]
                + [repr(float(getattr(c, f))) for f in SCORE_FIELDS]
                + ["" if c.cx_override is None else repr(float(c.cx_override))]
            )


def load_dimension_overrides(path: str | Path) -> dict[str, tuple[float, float, float]]:
    """Read ``model_id,c_q,c_e,c_x`` rows of published dimension scores."""
    path = Path(path)
    out = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for _, line in _iter_data_lines(fh))
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != ["model_id", "c_q", "c_e", "c_x"]:
            raise ValidationError(f"{path}: header must be model_id,c_q,c_e,c_x")
        for i, rec in enumerate(reader, start=2):
            try:
                triple = tuple(float(rec[k]) for k in ("c_q", "c_e", "c_x"))
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{i}: {exc}") from None
            for name, v in zip(("c_q", "c_e", "c_x"), triple):
                _check_unit(name, v)
            if rec["model_id"] in out:
                raise DuplicateModelError(f"{path}:{i}: duplicate model_id {rec['model_id']!r}")
            out[rec["model_id"]] = triple
    return out


def attach_overrides(cards: Sequence[Scorecard], overrides: dict) -> list[Scorecard]:
    return [
        replace(c, dimension_overrides=overrides[c.model_id]) if c.model_id in overrides else c
        for c in cards
    ]
