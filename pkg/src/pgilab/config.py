"""Readers for the key-value calibration and scenario files.

Files are INI-style: ``name = value`` lines, ``#`` or ``;`` comments and
optional ``[section]`` headers.  Keys before the first header land in a
``[main]`` section so flat scenario files need no header.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .dynamics import (
    PARAM_NAMES,
    STOCKS,
    FirmParams,
    FirmState,
    WelfareWeights,
    steady_state_guess,
)

MAIN = "main"
STATE_KEYS = set(STOCKS) | {"e", "i_a", "i_c"}


class ConfigError(ValueError):
    pass


def read_kv(source: str | Path, text: str | None = None) -> configparser.ConfigParser:
    """Parse a key-value file; ``text`` bypasses the filesystem."""
    if text is None:
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{source}: {exc.strerror or exc}") from exc
    cp = configparser.ConfigParser(
        inline_comment_prefixes=("#", ";"), interpolation=None, default_section="__defaults__"
    )
    cp.optionxform = str
    try:
        cp.read_string(f"[{MAIN}]\n" + text, source=str(source))
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return cp


def _float(section: configparser.SectionProxy, key: str, source) -> float:
    raw = section[key]
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{source}: [{section.name}] {key} = {raw!r} is not a number") from None


def _float_list(section, key, source) -> list[float]:
    out = []
    for tok in section[key].split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(float(tok))
        except ValueError:
            raise ConfigError(f"{source}: [{section.name}] {key}: {tok!r} is not a number") from None
    if not out:
        raise ConfigError(f"{source}: [{section.name}] {key} is empty")
    return out


def _param_overrides(section, source) -> dict:
    ov = {}
    for key in section:
        if key in STATE_KEYS:
            continue
        if key not in PARAM_NAMES:
            raise ConfigError(f"{source}: [{section.name}] unknown parameter {key!r}")
        ov[key] = _float(section, key, source)
    return ov


@dataclass
class DynConfig:
    """A parsed dynamics calibration; :meth:`build` yields params and initial states."""

    source: str
    firm_ids: tuple[str, ...]
    market: dict
    firms: dict  # firm id -> (param overrides, state values)
    focal: int = 0
    t_end: float = 50.0
    h: float = 0.01
    step: float = 0.01
    weights: WelfareWeights = field(default_factory=WelfareWeights)
    grid: list = field(default_factory=list)
    sweep: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def build(self, overrides: dict | None = None) -> tuple[list[FirmParams], list[FirmState]]:
        """Parameters and initial states, with ``overrides`` applied to every firm.

        Stocks missing from the file are placed at the firm's steady state
        after overrides, so changing e.g. ``gamma_d`` moves the starting data
        stock with it.
        """
        overrides = overrides or {}
        n = len(self.firm_ids)
        params = []
        for fid in self.firm_ids:
            ov, _ = self.firms[fid]
            try:
                params.append(replace(FirmParams(), **{**self.market, **ov, **overrides}))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{self.source}: firm {fid}: {exc}") from exc
        initial = []
        for fid, p in zip(self.firm_ids, params):
            _, st = self.firms[fid]
            q = st.get("q", p.market_size / n)
            try:
                if all(k in st for k in ("t_a", "t_d", "t_c")):
                    initial.append(FirmState(**{"q": q, **st}))
                    continue
                guess = steady_state_guess(p, q, st.get("e", 0.5), st.get("i_a", 1.0), st.get("i_c", 1.0))
                initial.append(replace(guess, **st))
            except ValueError as exc:
                raise ConfigError(f"{self.source}: firm {fid}: {exc}") from exc
        return params, initial


def load_dyn_config(path: str | Path | None = None, text: str | None = None) -> DynConfig:
    source = str(path) if path is not None else "<text>"
    cp = read_kv(source, text)
    firm_secs = [s for s in cp.sections() if s.startswith("firm:")]
    if not firm_secs:
        raise ConfigError(f"{source}: no [firm:NAME] sections")
    market = {}
    for name in (MAIN, "market"):
        if cp.has_section(name):
            market.update(_param_overrides(cp[name], source))
    firms = {}
    for sec in firm_secs:
        fid = sec.split(":", 1)[1].strip()
        if not fid or fid in firms:
            raise ConfigError(f"{source}: bad or duplicate firm section [{sec}]")
        st = {k: _float(cp[sec], k, source) for k in cp[sec] if k in STATE_KEYS}
        firms[fid] = (_param_overrides(cp[sec], source), st)
    cfg = DynConfig(source, tuple(firms), market, firms)
    if cp.has_section("run"):
        run = cp["run"]
        for key in ("t_end", "h", "step"):
            if key in run:
                setattr(cfg, key, _float(run, key, source))
        if "focal" in run:
            focal = run["focal"].strip()
            cfg.focal = cfg.firm_ids.index(focal) if focal in cfg.firm_ids else int(_float(run, "focal", source))
        if not 0 <= cfg.focal < len(cfg.firm_ids):
            raise ConfigError(f"{source}: focal index {cfg.focal} out of range")
        unknown = set(run) - {"t_end", "h", "step", "focal"}
        if unknown:
            raise ConfigError(f"{source}: [run] unknown keys {sorted(unknown)}")
    if cp.has_section("welfare"):
        w = cp["welfare"]
        unknown = set(w) - {"cs", "ps", "x"}
        if unknown:
            raise ConfigError(f"{source}: [welfare] unknown keys {sorted(unknown)}")
        cfg.weights = WelfareWeights(**{k: _float(w, k, source) for k in w})
    if cp.has_section("grid"):
        axes = {k: _float_list(cp["grid"], k, source) for k in cp["grid"]}
        for k in axes:
            if k not in PARAM_NAMES:
                raise ConfigError(f"{source}: [grid] unknown parameter {k!r}")
        cfg.grid = _product(axes)
    if cp.has_section("sweep"):
        sw = cp["sweep"]
        if "lambda_a" in sw:
            cfg.sweep = _float_list(sw, "lambda_a", source)
    for sec in cp.sections():
        if sec not in (MAIN, "market", "run", "welfare", "grid", "sweep") and not sec.startswith("firm:"):
            cfg.extra[sec] = {k: _float(cp[sec], k, source) for k in cp[sec]}
    return cfg


def _product(axes: dict) -> list[dict]:
    points = [{}]
    for key, values in axes.items():
        points = [{**pt, key: v} for pt in points for v in values]
    return points


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("pgilab").joinpath("data", name)))


def baseline_config() -> DynConfig:
    return load_dyn_config(bundled_path("baseline.ini"))


def tipping_config() -> DynConfig:
    return load_dyn_config(bundled_path("tipping.ini"))


def load_scenario_file(path: str | Path | None = None, text: str | None = None) -> dict:
    """Flat ``key = value`` scenario settings as strings keyed by name."""
    source = str(path) if path is not None else "<text>"
    cp = read_kv(source, text)
    out = {}
    for sec in cp.sections():
        for k in cp[sec]:
            key = k if sec == MAIN else f"{sec}.{k}"
            out[key] = cp[sec][k].strip()
    return out
