"""Command-line operator surface.

One master seed drives everything; identical (command, config, seed)
produce byte-identical artifacts regardless of worker counts.  Config is
a JSON file of documented keys, overridable by flags (flags win).  Every
emitted file embeds the resolved config hash and the seed.

Exit codes: 0 success, 1 config error, 2 invariant-suite failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import warnings

import numpy as np

from . import rng
from .bounds import (
    constants,
    iterate_scale_recursion,
    reach_tail_bound,
    recursion_inputs,
    retention_threshold,
)
from .coupling import (
    DominatingMarkLaw,
    RateField,
    coupled_site,
    dominating_site,
    mark_cdf_given_event,
    max_mark_cdf,
    monotone_h_check,
    safe_time_horizon,
    sample_schedule,
    t_monotonicity_check,
)
from .coverage import borel_cantelli_sums, coverage_scan
from .geometry import Window, sphere_covering_check
from .model import (
    ModelParams,
    clusters,
    diameter,
    estimate,
    percolation_proxy,
    sample,
    write_sample_csv,
)
from .particle import (
    KERNELS,
    FrozenBoundary,
    ParticleSystemSpec,
    PeriodicBoundary,
    simulate,
)
from .radii import RadiusLaw, SiteLawField, parse_law


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

_COMMON_KEYS = {
    "d", "half_width", "p", "law", "seed", "replicas", "out", "margin",
    "workers",
}
_COMMAND_KEYS = {
    "sample": set(),
    "clusters": set(),
    "scan": {"p_values"},
    "bounds": {"rate", "scales"},
    "coverage": {"half_widths"},
    "couple-test": {"rate", "rates", "t"},
    "harris": {"kernel", "T", "boundary", "fill", "rates", "range_laws", "init",
               "interval"},
    "selftest": set(),
}


def load_config(args) -> dict:
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    for key in ("d", "half_width", "p", "law", "seed", "replicas", "out",
                "margin", "workers"):
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            cfg[key] = val
    allowed = _COMMON_KEYS | _COMMAND_KEYS[args.command]
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    return cfg


def config_hash(cfg: dict) -> str:
    # destination path and worker count do not change what is computed
    semantic = {k: v for k, v in cfg.items() if k not in ("out", "workers")}
    blob = json.dumps(semantic, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _require(cfg, key, kind, default=None):
    if key not in cfg:
        if default is not None:
            return default
        raise ConfigError(f"missing config key {key!r}")
    val = cfg[key]
    try:
        if kind is int and isinstance(val, bool):
            raise ValueError("bool is not an int")
        return kind(val)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def _parse_law_value(value) -> RadiusLaw | SiteLawField:
    try:
        if isinstance(value, list):
            laws = tuple(parse_law(v) for v in value)
            return SiteLawField(laws) if len(laws) > 1 else laws[0]
        return parse_law(str(value))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def model_params(cfg: dict) -> ModelParams:
    d = _require(cfg, "d", int)
    hw = _require(cfg, "half_width", int)
    p = cfg.get("p")
    if p is None:
        raise ConfigError("missing config key 'p'")
    retention = tuple(float(v) for v in p) if isinstance(p, list) else float(p)
    law = _parse_law_value(_require(cfg, "law", lambda v: v))
    margin = cfg.get("margin")
    try:
        return ModelParams(
            d,
            retention,
            law,
            Window.cube(d, hw),
            margin=None if margin is None else int(margin),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Artifact writers
# ---------------------------------------------------------------------------


def _meta_lines(cfg: dict) -> list:
    return [
        f"# config_hash={config_hash(cfg)}",
        f"# seed={cfg.get('seed', 0)}",
        f"# config={json.dumps(cfg, sort_keys=True, default=str)}",
    ]


def write_csv(path, cfg, header, rows):
    with open(path, "w", newline="") as fh:
        for line in _meta_lines(cfg):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_json(path, cfg, payload):
    doc = {
        "config_hash": config_hash(cfg),
        "seed": cfg.get("seed", 0),
        "config": cfg,
        **payload,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_sample(cfg) -> int:
    params = model_params(cfg)
    seed = _require(cfg, "seed", int, 0)
    out = cfg.get("out", "sample.csv")
    s = sample(params, seed)
    write_sample_csv(s, out, extra_meta={"config_hash": config_hash(cfg)})
    print(f"wrote {out}: {s.n_occupied} occupied sites on {s.window.shape}")
    return 0


def cmd_clusters(cfg) -> int:
    params = model_params(cfg)
    seed = _require(cfg, "seed", int, 0)
    out = cfg.get("out", "clusters.json")
    s = sample(params, seed)
    rep = clusters(s)
    sizes = rep.sizes()
    origin = (0,) * params.dim
    reach = diameter(s, origin)
    top = sorted(sizes.tolist(), reverse=True)[:10]
    write_json(
        out,
        cfg,
        {
            "n_components": rep.n_components,
            "largest_components": top,
            "origin_component_size": int(sizes[rep.component_of(origin)]),
            "origin_reach": reach.value,
            "origin_reach_censored": reach.censored,
            "n_occupied": s.n_occupied,
        },
    )
    print(f"wrote {out}: {rep.n_components} components")
    return 0


def cmd_scan(cfg) -> int:
    p_values = cfg.get("p_values")
    if not isinstance(p_values, list) or not p_values:
        raise ConfigError("scan needs 'p_values': a non-empty list")
    seed = _require(cfg, "seed", int, 0)
    replicas = _require(cfg, "replicas", int, 200)
    workers = _require(cfg, "workers", int, 1)
    out = cfg.get("out", "scan.csv")
    rows = []
    for p in p_values:
        params = model_params({**cfg, "p": p})
        res = estimate(percolation_proxy, params, replicas, seed, workers=workers)
        rows.append([p, res.estimate, res.wilson_low, res.wilson_high, replicas])
        print(f"p={p}: spanning frequency {res.estimate:.4f}")
    write_csv(out, cfg, ["p", "frequency", "wilson_low", "wilson_high", "replicas"], rows)
    print(f"wrote {out}")
    return 0


def cmd_bounds(cfg) -> int:
    d = _require(cfg, "d", int)
    law = _parse_law_value(_require(cfg, "law", lambda v: v))
    if isinstance(law, SiteLawField):
        raise ConfigError("bounds needs a single law")
    rate = _require(cfg, "rate", float, 1.0)
    scales = _require(cfg, "scales", int, 6)
    consts = constants(d)
    p0 = retention_threshold(d, law)
    p = float(cfg.get("p", p0 / 2))
    if p > p0:
        raise ConfigError(f"bounds needs p <= p0 = {p0}")
    t0 = safe_time_horizon(RateField((rate,)), p0)
    f0, gs = recursion_inputs(p, consts, law, scales)
    rows_rec = iterate_scale_recursion(f0, gs)
    rows = []
    for row in rows_rec:
        r = 10 ** row.n * d
        bnd = reach_tail_bound(p, r, consts, law)
        rows.append([row.n, r, row.induction, row.direct, bnd.far_part, bnd.total])
    out = cfg.get("out", "bounds.csv")
    meta_cfg = {**cfg, "p": p}
    header = ["n", "r", "f_induction", "f_direct", "far_bound", "reach_tail_bound"]
    with open(out, "w", newline="") as fh:
        for line in _meta_lines(meta_cfg):
            fh.write(line + "\n")
        fh.write(f"# p0={p0!r}\n")
        fh.write(f"# t0={t0!r}\n")
        fh.write(f"# C={consts.ball_constant} C1={consts.sphere_pair} "
                 f"C2={consts.escape_coef} C3={consts.near_coef}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    print(f"p0={p0!r} t0={t0!r}")
    print(f"wrote {out}")
    return 0


def cmd_coverage(cfg) -> int:
    d = _require(cfg, "d", int)
    law = _parse_law_value(_require(cfg, "law", lambda v: v))
    if isinstance(law, SiteLawField):
        raise ConfigError("coverage needs a single law")
    p = float(_require(cfg, "p", float))
    hws = cfg.get("half_widths") or [_require(cfg, "half_width", int)]
    if not isinstance(hws, list):
        raise ConfigError("'half_widths' must be a list")
    seed = _require(cfg, "seed", int, 0)
    replicas = _require(cfg, "replicas", int, 20)
    margin = cfg.get("margin")
    out = cfg.get("out", "coverage.csv")
    scan_rows = coverage_scan(
        d, p, law, [int(h) for h in hws], replicas, seed,
        margin=None if margin is None else int(margin),
    )
    rows = [
        ["coverage", r.half_width, r.mean_fraction, r.ci_low, r.ci_high,
         r.margin, r.margin_residual]
        for r in scan_rows
    ]
    k_max = 4 * max(int(h) for h in hws)
    sums = borel_cantelli_sums(p, law, d, 0, k_max)
    for k in [10, 100, 1000, k_max]:
        if k <= k_max:
            rows.append(["bc_sum", k, float(sums[k]), "", "", "", ""])
    write_csv(
        out, cfg,
        ["kind", "L_or_K", "value", "ci_low", "ci_high", "margin", "residual"],
        rows,
    )
    for r in scan_rows:
        print(f"L={r.half_width}: covered fraction {r.mean_fraction:.5f} "
              f"[{r.ci_low:.5f}, {r.ci_high:.5f}]")
    print(f"wrote {out}")
    return 0


def _couple_checks(cfg) -> list:
    seed = _require(cfg, "seed", int, 0)
    replicas = _require(cfg, "replicas", int, 20_000)
    law = _parse_law_value(cfg.get("law", "geometric:0.5"))
    if isinstance(law, SiteLawField):
        raise ConfigError("couple-test needs a single mark law")
    rate = _require(cfg, "rate", float, 1.0)
    t = _require(cfg, "t", float, 0.5)
    checks = []

    # closed form for the maximal-mark cdf vs schedules
    gen = rng.substream(seed, 1)
    for r in (0, 1, 2):
        hits = sum(
            sample_schedule(rate, law, t, gen).max_mark(t) <= r
            for _ in range(replicas)
        )
        target = max_mark_cdf(rate, law, t, r).unconditional
        sigma = math.sqrt(max(target * (1 - target), 1e-12) / replicas)
        z = (hits / replicas - target) / sigma
        checks.append({"name": f"max_mark_cdf_r{r}", "z": z, "passed": abs(z) <= 3})

    # joint law of the coupled pair vs schedules
    gen1 = rng.substream(seed, 2)
    gen2 = rng.substream(seed, 3)
    u1 = rng.uniforms_halfopen(gen1, replicas)
    u2 = rng.uniforms_halfopen(gen1, replicas)
    hit_c = 0
    for i in range(replicas):
        x, radius = coupled_site(rate, law, t, float(u1[i]), float(u2[i]))
        hit_c += x == 1 and radius <= 1
    hit_s = 0
    for _ in range(replicas):
        sched = sample_schedule(rate, law, t, gen2)
        hit_s += sched.n_events >= 1 and sched.max_mark(t) <= 1
    pool = (hit_c + hit_s) / (2 * replicas)
    sigma = math.sqrt(max(pool * (1 - pool), 1e-12) * 2 / replicas)
    z = (hit_c - hit_s) / replicas / sigma
    checks.append({"name": "coupled_joint_law", "z": z, "passed": abs(z) <= 3})

    # pathwise monotonicity in the horizon
    gen = rng.substream(seed, 4)
    us = rng.uniforms_halfopen(gen, 2 * replicas).reshape(2, replicas)
    bad = sum(
        not t_monotonicity_check(rate, law, t / 2, t, float(a), float(b))
        for a, b in zip(us[0], us[1])
    )
    checks.append({"name": "horizon_monotone", "violations": bad, "passed": bad == 0})

    # dominating pair beats every class pathwise
    rates = RateField(tuple(cfg.get("rates", [rate, 2 * rate])))
    laws = tuple([law] * rates.n_classes)
    gen = rng.substream(seed, 5)
    us = rng.uniforms_halfopen(gen, 2 * replicas).reshape(2, replicas)
    bad = 0
    for a, b in zip(us[0], us[1]):
        xs, rs = dominating_site(rates, laws, min(t, 1.0), float(a), float(b))
        for m, l in zip(rates.rates, laws):
            x, radius = coupled_site(m, l, min(t, 1.0), float(a), float(b))
            if x > xs or radius > rs:
                bad += 1
    checks.append({"name": "dominating_pathwise", "violations": bad, "passed": bad == 0})

    # pmf ratio bound for the dominating mark law
    dom = DominatingMarkLaw(rates, laws)
    kappa = rates.sup_rate / -math.expm1(-rates.inf_rate)
    worst = max(
        dom.pmf(r) - kappa * max(l.pmf(r) for l in laws) for r in range(101)
    )
    checks.append({"name": "dominating_pmf_ratio", "excess": worst,
                   "passed": worst <= 1e-12})

    # h-ratio monotonicity on a dense grid
    ok = all(
        monotone_h_check(a, np.linspace(0.0, 50.0, 500)) for a in (0.25, 0.5, 0.9)
    )
    checks.append({"name": "h_monotone", "passed": ok})

    # the inf cdf reaches 1 at a finite range
    r_star = dom.quantile(1 - 1e-9)
    checks.append({
        "name": "inf_cdf_reaches_one",
        "r": r_star,
        "passed": dom.cdf(r_star) >= 1 - 1e-9,
    })
    return checks


def cmd_couple_test(cfg) -> int:
    out = cfg.get("out", "couple_test.json")
    checks = _couple_checks(cfg)
    write_json(out, cfg, {"checks": checks})
    n_bad = sum(not c["passed"] for c in checks)
    for c in checks:
        print(f"{c['name']}: {'PASS' if c['passed'] else 'FAIL'}")
    print(f"wrote {out}")
    return 0 if n_bad == 0 else 2


def cmd_harris(cfg) -> int:
    d = _require(cfg, "d", int)
    hw = _require(cfg, "half_width", int)
    seed = _require(cfg, "seed", int, 0)
    horizon = _require(cfg, "T", float)
    kernel_name = str(cfg.get("kernel", "voter"))
    if kernel_name not in KERNELS:
        raise ConfigError(f"unknown kernel {kernel_name!r}; have {sorted(KERNELS)}")
    rates = RateField(tuple(float(m) for m in cfg.get("rates", [1.0])))
    law_specs = cfg.get("range_laws", ["geometric:0.5"] * rates.n_classes)
    laws = tuple(parse_law(str(v)) for v in law_specs)
    if len(laws) != rates.n_classes:
        raise ConfigError("need one range law per rate class")
    spec = ParticleSystemSpec((0, 1), rates, laws, KERNELS[kernel_name]())
    window = Window.cube(d, hw)
    boundary_name = str(cfg.get("boundary", "frozen"))
    if boundary_name == "frozen":
        boundary = FrozenBoundary(int(cfg.get("fill", 0)))
    elif boundary_name == "periodic":
        boundary = PeriodicBoundary()
    else:
        raise ConfigError("boundary must be 'frozen' or 'periodic'")
    init = str(cfg.get("init", "const:0"))
    if init.startswith("const:"):
        fill = int(init.split(":", 1)[1])
        eta = {site: fill for site in window.sites()}
    elif init == "alternating":
        eta = {site: sum(site) % 2 for site in window.sites()}
    else:
        raise ConfigError("init must be 'const:<spin>' or 'alternating'")
    interval = cfg.get("interval")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj = simulate(
            spec, window, eta, horizon, seed, boundary=boundary,
            interval=None if interval is None else float(interval),
        )
    out = cfg.get("out", "harris.csv")
    rows = [
        [f"{t_!r}", *site, spin] for t_, site, spin in traj.events
    ]
    write_csv(out, cfg, ["time", *[f"x{i}" for i in range(d)], "spin"], rows)
    summary = {
        "n_events": len(traj.events),
        "boundary_event_count": traj.boundary_event_count,
        "interval_length": traj.interval_length,
        "n_intervals": traj.n_intervals,
        "boundary": traj.boundary,
        "final_histogram": {
            str(s): list(traj.final.values()).count(s) for s in spec.alphabet
        },
    }
    write_json(out.rsplit(".", 1)[0] + ".json", cfg, summary)
    print(f"wrote {out}: {len(traj.events)} events over {traj.n_intervals} intervals")
    return 0


def _selftest_checks() -> list:
    from .radii import Geometric, PointMass

    checks = []

    def add(name, passed):
        checks.append({"name": name, "passed": bool(passed)})

    ok = all(
        sphere_covering_check(d, n, r).ok
        for d in (1, 2, 3) for n in (1, 2) for r in (1, 2, 3, 4)
    )
    add("sphere_covering_grid", ok)

    from .geometry import ball_cardinality, ball_offsets
    add(
        "ball_counts_match_enumeration",
        all(
            ball_cardinality(d, r) == len(ball_offsets(d, r))
            for d in (1, 2, 3) for r in (0, 1, 2, 5)
        ),
    )

    rows = iterate_scale_recursion(0.5, [0.0] * 5)
    add(
        "recursion_closed_form",
        all(
            row.direct == 0.5 ** (2 ** row.n) and row.induction == 2.0 ** -(row.n + 1)
            for row in rows
        ),
    )

    add("threshold_exact", retention_threshold(1, PointMass(1)) == 1 / 4800)

    law = Geometric(0.5)
    gen = rng.substream(123, 0)
    us = rng.uniforms_halfopen(gen, 2000)
    add(
        "quantile_galois",
        all(
            law.cdf(law.quantile(float(u))) >= u
            and (law.quantile(float(u)) == 0 or law.cdf(law.quantile(float(u)) - 1) < u)
            for u in us
        ),
    )

    bad = sum(
        not t_monotonicity_check(1.0, law, 0.4, 0.9, float(a), float(b))
        for a, b in zip(us[:1000], us[1000:])
    )
    add("horizon_monotone", bad == 0)

    # island-spliced vs globally ordered trajectories, a few seeds
    from .particle import VoterKernel

    spec = ParticleSystemSpec((0, 1), RateField((1.0,)), (law,), VoterKernel())
    win = Window.cube(1, 6)
    eta = {s: s[0] % 2 for s in win.sites()}
    same = True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s_ in range(5):
            a = simulate(spec, win, eta, 0.4, seed=s_, interval=0.2)
            b = simulate(spec, win, eta, 0.4, seed=s_, interval=0.2, use_islands=False)
            same = same and a.events == b.events and a.final == b.final
    add("island_vs_global", same)

    # containment: no escape and no far reach forces reach <= 8r
    params = ModelParams(1, 0.2, law, Window.cube(1, 35), margin=15)
    violations = 0
    from .model import far_reach_event, local_escape

    for s_ in range(300):
        smp = sample(params, (777, s_))
        for r in (1, 2, 3):
            if far_reach_event(smp, r).observed or local_escape(smp, (0,), r):
                continue
            reach = diameter(smp, (0,))
            if not reach.censored and reach.value > 8 * r:
                violations += 1
    add("reach_containment", violations == 0)
    return checks


def cmd_selftest(cfg) -> int:
    checks = _selftest_checks()
    for c in checks:
        print(f"{c['name']}: {'PASS' if c['passed'] else 'FAIL'}")
    out = cfg.get("out")
    if out:
        write_json(out, cfg, {"checks": checks})
    return 0 if all(c["passed"] for c in checks) else 2


_COMMANDS = {
    "sample": cmd_sample,
    "clusters": cmd_clusters,
    "scan": cmd_scan,
    "bounds": cmd_bounds,
    "coverage": cmd_coverage,
    "couple-test": cmd_couple_test,
    "harris": cmd_harris,
    "selftest": cmd_selftest,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="boolperc", description=__doc__)
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed (flags win)")
    parser.add_argument("--replicas", type=int, help="replica count")
    parser.add_argument("--out", help="output artifact path")
    parser.add_argument("--d", type=int, help="lattice dimension")
    parser.add_argument("--half-width", type=int, dest="half_width")
    parser.add_argument("--p", type=float, help="retention probability")
    parser.add_argument("--law", help="radius law spec, e.g. geometric:0.5")
    parser.add_argument("--margin", type=int, help="sampling margin override")
    parser.add_argument("--workers", type=int, help="parallel replica workers")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
