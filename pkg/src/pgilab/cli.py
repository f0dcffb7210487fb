"""Command-line entry point: ``pgilab <group> <action> [flags]``.

Exit codes: 0 success, 1 a verified property does not hold, 2 input error,
3 numeric failure.  Every file written starts with a ``#`` header carrying
the version, the flag set and the seed, so any output can be re-created.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import __version__
from . import abm as abm_mod
from . import dynamics as dyn
from . import pgi as pgi_mod
from . import stats as stats_mod
from .config import ConfigError, baseline_config, load_dyn_config, load_scenario_file, tipping_config
from .scorecard import ScorecardError, attach_overrides, load_dimension_overrides, load_scorecards

DEFAULT_SEED = 0xC0FFEE
EXIT_OK, EXIT_PROPERTY, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
CLAIMED_TOP_TWO = "open-weight models rank in the top two in over 95% of perturbations"
TRAJECTORY_FIELDS = ("t", "firm_id") + dyn.STOCKS + ("e", "c_q", "c_e", "c_x", "pgi")
AGGREGATE_FIELDS = ("scenario", "metric", "n", "mean", "std", "ci95_lo", "ci95_hi", "cv", "skew", "kurtosis", "jb_p")
EFFECT_FIELDS = ("metric", "scenario_a", "scenario_b", "cohens_d")
# flags that do not influence results and are left out of headers
_NOT_IN_HEADER = {"out", "func", "quiet", "format", "threads"}


class InputError(ValueError):
    pass


# -- output helpers -----------------------------------------------------------


def header_line(args: argparse.Namespace) -> str:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_IN_HEADER}
    seed = flags.get("seed", DEFAULT_SEED)
    flag_txt = " ".join(f"{k}={_fmt_flag(v)}" for k, v in flags.items())
    return f"# pgilab {__version__} | seed={seed} | {flag_txt}"


def _fmt_flag(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(map(str, v))
    return str(v)


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(fieldnames, rows, comments=()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(c.rstrip("\n") + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fieldnames)
    for r in rows:
        values = [r[k] for k in fieldnames] if isinstance(r, dict) else r
        w.writerow([_cell(v) for v in values])
    return buf.getvalue()


def write_csv(args, name: str, fieldnames, rows, extra_comments=()) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(csv_text(fieldnames, rows, (header_line(args), *extra_comments)), encoding="utf-8")
    return path


def table(headers, rows) -> str:
    cells = [[str(h) for h in headers]] + [[_show(x) for x in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(r, widths))) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _show(x) -> str:
    if isinstance(x, float):
        return f"{x:.3f}" if math.isfinite(x) else str(x)
    return str(x)


def say(args, text: str = "") -> None:
    if not args.quiet:
        print(text)


# -- argument parsing helpers -------------------------------------------------


def seed_arg(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer seed: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def weights_arg(text: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("weights take three comma-separated values alpha,beta,gamma")
    try:
        w = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric weight in {text!r}") from None
    if min(w) < 0 or sum(w) <= 0:
        raise argparse.ArgumentTypeError("weights must be non-negative with a positive sum")
    return w


# -- pgi ----------------------------------------------------------------------


def _load_cards(args):
    if args.scorecards is None:
        cards = pgi_mod.bundled_scorecards(with_dimensions=args.dimensions is None)
    else:
        cards = load_scorecards(args.scorecards)
    if args.dimensions is not None:
        cards = attach_overrides(cards, load_dimension_overrides(args.dimensions))
    return cards


def cmd_pgi_compute(args) -> int:
    cards = _load_cards(args)
    w = pgi_mod.WeightVector.normalized(*args.weights)
    results = pgi_mod.compute_pgi(cards, w, args.agg, args.rho)
    rows = [(r.model_id, r.dims.c_q, r.dims.c_e, r.dims.c_x, r.composite, r.rank) for r in results]
    names = ("model_id", "c_q", "c_e", "c_x", "composite", "rank")
    path = write_csv(args, "pgi_ranking.csv", names, rows)
    if args.format == "csv":
        sys.stdout.write(csv_text(names, rows, (header_line(args),)))
    else:
        say(args, table(names, rows))
        say(args, f"\naggregator={args.agg} rho={args.rho} weights={w.alpha:.4f},{w.beta:.4f},{w.gamma:.4f}")
        say(args, f"wrote {path}")
    return EXIT_OK


def cmd_pgi_sensitivity(args) -> int:
    cards = _load_cards(args)
    rep = pgi_mod.weight_sensitivity(cards, args.draws, args.box_lo, args.box_hi, args.seed)
    rows = rep.rows()
    open_ids = sorted(c.model_id for c in cards if c.is_open)
    footer = [
        f"# measured: open-weight models hold both top-two ranks in {rep.open_top_two_rate:.4f} of {rep.n_draws} draws",
        f"# claimed: {CLAIMED_TOP_TWO} (reported for comparison, not asserted)",
    ]
    for a in open_ids:
        for b in sorted(rep.rank_counts):
            if (a, b) in rep.pairwise_wins and b not in open_ids:
                footer.append(f"# {a} outranks {b} in {rep.outrank_rate(a, b):.4f} of draws")
    path = write_csv(args, "pgi_sensitivity.csv", ("model_id", "rank", "frequency"), rows)
    with path.open("a", encoding="utf-8") as fh:
        fh.write("\n".join(footer) + "\n")
    if args.format == "csv":
        sys.stdout.write(path.read_text(encoding="utf-8"))
        return EXIT_OK
    n = len(rep.rank_counts)
    trows = [(mid, *[rep.rank_frequency(mid, r) for r in range(1, n + 1)]) for mid in sorted(rep.rank_counts)]
    say(args, table(("model_id", *[f"rank{r}" for r in range(1, n + 1)]), trows))
    say(args, "")
    for line in footer:
        say(args, line[2:])
    say(args, f"wrote {path}")
    return EXIT_OK


# -- case ---------------------------------------------------------------------


def cmd_case_openai(args) -> int:
    case = pgi_mod.openai_case(args.case)
    names = ("model_id", "year", "c_q", "c_e", "c_x", "composite", "published")
    rows = [(r.model_id, y, r.dims.c_q, r.dims.c_e, r.dims.c_x, r.composite, p)
            for r, y, p in zip(case.results, case.years, case.published)]
    decline = f"# relative decline first to last: published {case.relative_decline:.4f}, computed {case.computed_decline:.4f}"
    path = write_csv(args, "case_openai.csv", names, rows)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(decline + "\n")
    if args.format == "csv":
        sys.stdout.write(csv_text(names, rows, (header_line(args),)))
        return EXIT_OK
    say(args, table(names, rows))
    say(args, "")
    say(args, "composite PGI: " + " -> ".join(f"{p:.2f}" for p in case.published))
    say(args, f"decline: {round(100 * case.relative_decline)}% (computed {100 * case.computed_decline:.1f}%)")
    say(args, f"wrote {path}")
    return EXIT_OK


# -- dyn ----------------------------------------------------------------------


def _dyn_config(args):
    return baseline_config() if args.config is None else load_dyn_config(args.config)


def _trajectory_rows(traj: dyn.MarketTrajectory, firm_ids):
    rows = []
    for k, t in enumerate(traj.times):
        for i, fid in enumerate(firm_ids):
            s = traj.states[k, i]
            rows.append((float(t), fid, *map(float, s), float(traj.e[i]),
                         *map(float, traj.dims[k, i]), float(traj.pgi[k, i])))
    return rows


def cmd_dyn_simulate(args) -> int:
    cfg = _dyn_config(args)
    params, initial = cfg.build()
    t_end = args.t_end if args.t_end is not None else cfg.t_end
    h = args.h if args.h is not None else cfg.h
    try:
        traj = dyn.integrate(initial, params, t_end, h, record_every=args.record_every, focal=cfg.focal,
                             welfare_weights=cfg.weights, firm_ids=cfg.firm_ids)
    except dyn.DivergenceError as exc:
        if exc.trajectory is not None:
            p = write_csv(args, "trajectory_failed.csv", TRAJECTORY_FIELDS,
                          _trajectory_rows(exc.trajectory, cfg.firm_ids), (f"# numeric failure: {exc}",))
            print(f"trajectory up to failure written to {p}", file=sys.stderr)
        raise
    path = write_csv(args, "trajectory.csv", TRAJECTORY_FIELDS, _trajectory_rows(traj, cfg.firm_ids))
    rows = [(fid, *[float(traj.states[-1, i, j]) for j in range(7)], float(traj.pgi[-1, i]))
            for i, fid in enumerate(cfg.firm_ids)]
    say(args, f"t_end={t_end} h={h} steps={round(t_end / h)} clamp_events={traj.clamp_events}")
    say(args, table(("firm_id", *dyn.STOCKS, "pgi"), rows))
    say(args, f"wrote {path}")
    return EXIT_OK


def cmd_dyn_optimize(args) -> int:
    cfg = _dyn_config(args)
    params, initial = cfg.build()
    step = args.step if args.step is not None else cfg.step
    grid = dyn.excludability_grid(step)
    ev = dyn.evaluate_policies(params, initial, grid, cfg.focal, cfg.t_end, cfg.h)
    priv = dyn.optimize_excludability_private(params, initial, evaluation=ev)
    rows = [("private", priv.e_star, priv.value, float(ev.terminal_pgi[dyn.grid_argmax(ev.profit)]))]
    if args.social:
        soc = dyn.optimize_excludability_social(params, initial, cfg.weights, evaluation=ev)
        rows.append(("social", soc.e_star, soc.value, float(ev.terminal_pgi[dyn.grid_argmax(ev.welfare(cfg.weights))])))
    names = ("objective", "e", "value", "terminal_pgi")
    path = write_csv(args, "dyn_optimum.csv", names, rows)
    if args.format == "csv":
        sys.stdout.write(csv_text(names, rows, (header_line(args),)))
        return EXIT_OK
    say(args, f"e* = {priv.e_star:.2f}  discounted profit = {priv.value:.4f}")
    if args.social:
        say(args, f"e** = {rows[1][1]:.2f}  welfare = {rows[1][2]:.4f}")
        say(args, f"PGI gap (terminal) = {rows[1][3] - rows[0][3]:.4f}")
    say(args, f"wrote {path}")
    return EXIT_OK


def _verify_a1(args, cfg):
    params, initial = cfg.build()
    if not cfg.grid:
        raise InputError(f"{cfg.source}: no [grid] section for the market-failure check")
    rep = dyn.verify_market_failure(params, initial, cfg.grid, cfg.weights, cfg.step, cfg.focal, cfg.t_end, cfg.h)
    keys = sorted(cfg.grid[0])
    names = (*keys, "e_private", "e_social", "pgi_private", "pgi_social", "pgi_gap", "ok")
    rows = [(*[p.overrides[k] for k in keys], p.e_private, p.e_social, p.pgi_private, p.pgi_social, p.pgi_gap, p.ok)
            for p in rep.points]
    return rep.ok, names, rows, f"e* >= e** at {len(rep.points) - len(rep.violations)}/{len(rep.points)} grid points"


def _verify_a4(args, cfg):
    params, initial = cfg.build()
    r = dyn.pigouvian_subsidy(params, initial, cfg.weights, cfg.step, cfg.focal, cfg.t_end, cfg.h)
    ok = abs(r.e_subsidized - r.e_social) <= cfg.step + 1e-9
    names = ("s_star", "s_at_social", "e_private", "e_social", "e_subsidized", "boundary", "ok")
    rows = [(r.s_star, r.s_at_social, r.e_private, r.e_social, r.e_subsidized, r.boundary, ok)]
    return ok, names, rows, f"subsidy {r.s_star:.4f}: e* {r.e_private:.2f} -> {r.e_subsidized:.2f}, e** {r.e_social:.2f}"


def _verify_b6(args, cfg):
    params, initial = cfg.build()
    if not cfg.sweep:
        raise InputError(f"{cfg.source}: no [sweep] lambda_a values")
    r = dyn.comparative_static_lambda_a(params, initial, cfg.sweep, cfg.step, cfg.focal, cfg.t_end, cfg.h)
    rows = [(lam, e) for lam, e in zip(r.values, r.e_star)]
    return r.monotone, ("lambda_a", "e_private"), rows, "e* non-increasing in lambda_a: " + str(r.monotone)


def _verify_a3(args, cfg):
    tip = cfg.extra.get("tipping")
    if tip is None:
        raise InputError(f"{cfg.source}: no [tipping] section")
    try:
        eps_frac, threshold = tip["eps_frac"], tip.get("threshold", 3.0)
        gammas = (("strong", tip["gamma_strong"]), ("weak", tip["gamma_weak"]))
    except KeyError as exc:
        raise InputError(f"{cfg.source}: [tipping] missing {exc}") from None
    rows, ok = [], True
    for label, g in gammas:
        params, initial = cfg.build({"gamma_d": g})
        s0 = initial[0]
        r = dyn.tipping_experiment(params, s0, eps_frac * s0.q, cfg.t_end, cfg.h, threshold)
        want = r.share_ratio > threshold if label == "strong" else r.share_ratio < 1.5
        ok &= want
        rows.append((label, g, eps_frac * s0.q, r.share_ratio, r.shares[0], r.shares[1], want))
    names = ("regime", "gamma_d", "eps", "share_ratio", "share_a", "share_b", "ok")
    return ok, names, rows, f"share ratio {rows[0][3]:.3f} (strong), {rows[1][3]:.4f} (weak)"


VERIFIERS = {"A1": _verify_a1, "A3": _verify_a3, "A4": _verify_a4, "B6": _verify_b6}


def cmd_dyn_verify(args) -> int:
    if args.prop == "A3":
        cfg = tipping_config() if args.config is None else load_dyn_config(args.config)
    else:
        cfg = _dyn_config(args)
    t0 = time.perf_counter()
    ok, names, rows, summary = VERIFIERS[args.prop](args, cfg)
    path = write_csv(args, f"verify_{args.prop}.csv", names, rows)
    if args.format == "csv":
        sys.stdout.write(csv_text(names, rows, (header_line(args),)))
    else:
        say(args, table(names, rows))
        say(args, f"\n{args.prop}: {'holds' if ok else 'VIOLATED'} | {summary} | {time.perf_counter() - t0:.1f}s")
        say(args, f"wrote {path}")
    return EXIT_OK if ok else EXIT_PROPERTY


# -- abm ----------------------------------------------------------------------

_PARAM_FIELDS = {f.name for f in fields(abm_mod.AbmParams)}
_SCENARIO_KEYS = {"scenario", "subsidy_rate", "pollution_tax", "share_cap", "steps", "users", "seed", "reps"}


def _abm_settings(args) -> tuple[dict, abm_mod.AbmParams]:
    """Merge the scenario file (if any) with command-line flags; flags win."""
    raw = load_scenario_file(args.config) if args.config else {}
    unknown = set(raw) - _SCENARIO_KEYS - _PARAM_FIELDS
    if unknown:
        raise InputError(f"{args.config}: unknown keys {sorted(unknown)}")
    try:
        pv = {k: float(v) for k, v in raw.items() if k in _PARAM_FIELDS}
        s = {
            "subsidy_rate": float(raw.get("subsidy_rate", abm_mod.DEFAULT_SUBSIDY)),
            "pollution_tax": float(raw.get("pollution_tax", abm_mod.DEFAULT_TAX)),
            "share_cap": float(raw.get("share_cap", abm_mod.DEFAULT_CAP)),
            "steps": int(raw.get("steps", 20)),
            "users": int(raw.get("users", 2000)),
            "seed": int(raw.get("seed", str(DEFAULT_SEED)), 0),
            "reps": int(raw.get("reps", 100)),
            "scenario": raw.get("scenario", "S0"),
        }
    except ValueError as exc:
        raise InputError(f"{args.config}: {exc}") from None
    for key in ("subsidy_rate", "pollution_tax", "share_cap", "steps", "users", "seed", "reps", "scenario"):
        v = getattr(args, key, None)
        if v is not None:
            s[key] = v
    for key, v in s.items():
        if hasattr(args, key):
            setattr(args, key, v)
    if s["steps"] < 1 or s["users"] < 1 or s["reps"] < 2:
        raise InputError("steps and users must be >= 1, reps >= 2")
    return s, abm_mod.AbmParams(**pv)


def _scenario(sid: str, s: dict) -> abm_mod.PolicyScenario:
    return abm_mod.make_scenario(sid, s["subsidy_rate"], s["pollution_tax"], s["share_cap"])


def cmd_abm_run(args) -> int:
    s, params = _abm_settings(args)
    run = abm_mod.run_scenario(_scenario(s["scenario"], s), s["steps"], s["users"], s["seed"], params)
    rows = run.rows()
    path = write_csv(args, "abm_metrics.csv", abm_mod.METRIC_FIELDS, rows)
    term = run.terminal
    seg_rows = [(s["scenario"], s["seed"], k, v) for k, v in term.segment_satisfaction.items()]
    write_csv(args, "abm_segments.csv", ("scenario", "seed", "segment", "satisfaction"), seg_rows)
    strat_rows = [(s["scenario"], s["seed"], t, term.strategy_pgi[t], term.strategy_safety[t], term.strategy_share[t])
                  for t in term.strategy_pgi]
    write_csv(args, "abm_strategies.csv", ("scenario", "seed", "strategy", "pgi", "safety", "share"), strat_rows)
    if args.format == "csv":
        sys.stdout.write(path.read_text(encoding="utf-8"))
        return EXIT_OK
    trows = [(r["step"], r["welfare"], r["avg_pgi"], r["hhi"], r["innovation"], r["data_quality"], r["safety"])
             for r in rows]
    say(args, table(("step", "welfare", "avg_pgi", "hhi", "innovation", "data_quality", "safety"), trows))
    say(args, f"\nscenario={s['scenario']} seed={s['seed']} users={s['users']} "
              f"max share over run={max(m.max_share for m in run.metrics):.4f}")
    say(args, f"wrote {path}")
    return EXIT_OK


def cmd_abm_compare(args) -> int:
    s, params = _abm_settings(args)
    scenarios = tuple(args.scenarios)
    bad = [x for x in scenarios if x not in abm_mod.SCENARIOS]
    if bad or len(set(scenarios)) != len(scenarios):
        raise InputError(f"bad scenario list {','.join(scenarios)}")
    specs = {sid: _scenario(sid, s) for sid in scenarios}
    runner = abm_mod.terminal_runner(s["steps"], s["users"], params, specs)
    t0 = time.perf_counter()
    res = stats_mod.mc_compare(scenarios, s["reps"], s["seed"], runner, paired=not args.unpaired,
                               threads=args.threads, baseline=scenarios[0])
    elapsed = time.perf_counter() - t0
    conv = f"# conventions: {stats_mod.CONVENTIONS}"
    metric_rows = [row for sid in scenarios for r in range(s["reps"]) for row in res.series[(sid, r)].rows()]
    write_csv(args, "abm_metrics.csv", abm_mod.METRIC_FIELDS, metric_rows)
    agg = []
    for (sid, m), st in res.stats.items():
        agg.append((sid, m, st.n, st.mean, st.std, st.ci95_lo, st.ci95_hi, st.cv, st.skewness, st.kurtosis, st.jb_p_value))
    write_csv(args, "abm_aggregate.csv", AGGREGATE_FIELDS, agg, (conv,))
    eff = [(e.metric_name, e.scenario_a, e.scenario_b, e.cohens_d) for e in res.effects]
    write_csv(args, "abm_effects.csv", EFFECT_FIELDS, eff, (conv,))
    runs = {sid: [res.series[(sid, r)] for r in range(s["reps"])] for sid in scenarios}
    seg = abm_mod.segment_report(runs, baseline=scenarios[0])
    seg_rows = [(sid, k, v) for sid in scenarios for k, v in seg.segment_delta[sid].items()]
    write_csv(args, "abm_segments.csv", ("scenario", "segment", "satisfaction_delta"), seg_rows)
    strat_rows = [(sid, t, d["pgi"], d["safety"], d["share"], seg.strategy_max_share[sid][t])
                  for sid in scenarios for t, d in seg.strategy_delta[sid].items()]
    write_csv(args, "abm_strategies.csv",
              ("scenario", "strategy", "pgi_delta", "safety_delta", "share_delta", "mean_share"), strat_rows)
    if args.format == "csv":
        sys.stdout.write(csv_text(AGGREGATE_FIELDS, agg, (header_line(args), conv)))
        return EXIT_OK
    trows = []
    for sid in scenarios:
        row = [sid]
        for m in ("welfare", "avg_pgi", "hhi", "innovation"):
            st = res.stats[(sid, m)]
            row += [st.mean, st.cv]
        trows.append(row)
    say(args, table(("scenario", "welfare", "cv", "avg_pgi", "cv", "hhi", "cv", "innovation", "cv"), trows))
    say(args, f"\nCohen's d vs {scenarios[0]}:")
    say(args, table(("metric", "scenario", "d", "size"),
                    [(e.metric_name, e.scenario_a, e.cohens_d, e.interpretation) for e in res.effects
                     if e.metric_name in ("welfare", "avg_pgi", "hhi", "innovation")]))
    say(args, f"\n{s['reps']} reps x {len(scenarios)} scenarios in {elapsed:.1f}s; files in {args.out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--format", choices=("table", "csv"), default="table", help="standard output format")
    common.add_argument("--threads", type=positive_int, default=1, help="parallelism cap; never changes results")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress the text report")

    p = argparse.ArgumentParser(prog="pgilab", description="Public Goods Index experiments.")
    p.add_argument("--version", action="version", version=f"pgilab {__version__}")
    groups = p.add_subparsers(dest="group", required=True)

    g = groups.add_parser("pgi", help="PGI ranking and weight sensitivity").add_subparsers(dest="action", required=True)
    cards = argparse.ArgumentParser(add_help=False)
    cards.add_argument("--scorecards", help="scorecard CSV (default: bundled 2025 fixture)")
    cards.add_argument("--dimensions", help="CSV of model_id,c_q,c_e,c_x dimension overrides")
    c = g.add_parser("compute", parents=[common, cards], help="rank models by composite PGI")
    c.add_argument("--weights", type=weights_arg, default=(1.0, 1.0, 1.0), help="alpha,beta,gamma (renormalized)")
    c.add_argument("--agg", choices=("linear", "ces"), default="linear")
    c.add_argument("--rho", type=float, default=1.0, help="CES exponent")
    c.set_defaults(func=cmd_pgi_compute)
    c = g.add_parser("sensitivity", parents=[common, cards], help="rank stability under random weights")
    c.add_argument("--draws", type=positive_int, default=10000)
    c.add_argument("--seed", type=seed_arg, default=DEFAULT_SEED)
    c.add_argument("--box-lo", type=float, default=0.2)
    c.add_argument("--box-hi", type=float, default=0.5)
    c.set_defaults(func=cmd_pgi_sensitivity)

    g = groups.add_parser("case", help="longitudinal case studies").add_subparsers(dest="action", required=True)
    c = g.add_parser("openai", parents=[common], help="PGI across three successive releases")
    c.add_argument("--case", help="case CSV (default: bundled)")
    c.set_defaults(func=cmd_case_openai)

    g = groups.add_parser("dyn", help="continuous-time openness dynamics").add_subparsers(dest="action", required=True)
    dcfg = argparse.ArgumentParser(add_help=False)
    dcfg.add_argument("--config", help="calibration file (default: bundled baseline)")
    c = g.add_parser("simulate", parents=[common, dcfg], help="integrate the firm system")
    c.add_argument("--t-end", type=float)
    c.add_argument("--h", type=float)
    c.add_argument("--record-every", type=positive_int, default=100, help="write every k-th step")
    c.set_defaults(func=cmd_dyn_simulate)
    c = g.add_parser("optimize", parents=[common, dcfg], help="private (and social) optimal excludability")
    c.add_argument("--social", action="store_true", help="also solve the planner's problem")
    c.add_argument("--step", type=float, help="excludability grid step")
    c.set_defaults(func=cmd_dyn_optimize)
    c = g.add_parser("verify", parents=[common, dcfg], help="check a theoretical property numerically")
    c.add_argument("--prop", choices=sorted(VERIFIERS), required=True)
    c.set_defaults(func=cmd_dyn_verify)

    g = groups.add_parser("abm", help="agent-based policy simulation").add_subparsers(dest="action", required=True)
    acfg = argparse.ArgumentParser(add_help=False)
    acfg.add_argument("--config", help="scenario file of key = value lines")
    acfg.add_argument("--steps", type=positive_int)
    acfg.add_argument("--users", type=positive_int)
    acfg.add_argument("--seed", type=seed_arg)
    acfg.add_argument("--subsidy-rate", type=float)
    acfg.add_argument("--pollution-tax", type=float)
    acfg.add_argument("--share-cap", type=float)
    c = g.add_parser("run", parents=[common, acfg], help="one simulation of one scenario")
    c.add_argument("--scenario", choices=abm_mod.SCENARIOS)
    c.set_defaults(func=cmd_abm_run)
    c = g.add_parser("compare", parents=[common, acfg], help="Monte Carlo comparison of scenarios")
    c.add_argument("--reps", type=positive_int)
    c.add_argument("--scenarios", type=lambda t: [x.strip() for x in t.split(",")], default=list(abm_mod.SCENARIOS))
    c.add_argument("--unpaired", action="store_true", help="independent seeds per scenario instead of common ones")
    c.set_defaults(func=cmd_abm_compare)
    return p


INPUT_ERRORS = (InputError, ConfigError, ScorecardError, pgi_mod.PgiError, abm_mod.AbmError,
                stats_mod.StatsError, OSError, ValueError, KeyError)
NUMERIC_ERRORS = (dyn.DynamicsError, FloatingPointError, OverflowError, stats_mod.ReplicationError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NUMERIC_ERRORS as exc:
        print(f"pgilab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        print(f"pgilab: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
