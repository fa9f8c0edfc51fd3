"""
hypmax experiment harness - CLI, configs, experiment runners and reports.

Usage:
    python harness.py example-i --seed 7 --out results/
    python harness.py suite --config suite_manifest.json --parallel
    python harness.py check-weight --theta 0.5 --format json

Each experiment returns a report dict
    {"experiment", "label", "seed", "status", "verdicts", "rows"}
written as <label>.csv and/or <label>.json. Exit codes: 0 ok, 1 verdict
mismatch, 2 config / IO error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from dotenv import load_dotenv

from funcops import EngineError, RadialProfile, RadiusGrid, ScalarField, maximal_profile
from hypgeo import (
    GROWTH_BRACKETS,
    INTERSECTION_CONSTANTS,
    Dimension,
    DomainError,
    axis_point,
    ball_volume,
    growth_bracket,
    intersection_bound_ratio,
    origin,
)
from integrate import McConfig, NumericalError, quad_radial_ball
from log_config import run_context, setup_logging
from norms import divergence_verdict, lemma21_sweep, pointwise_exponent, riesz_divergence_scan
from weights import (
    ExponentTriple,
    PreconditionError,
    WeightSpec,
    apq_global_scan,
    apq_loc_sup,
    cond_cj2_check,
    cond_cj_check,
    params_weak_only,
    strong_delta_bound,
    testing_condition_sweep,
)

log = logging.getLogger(__name__)

HERE = Path(__file__).resolve().parent
SCHEMA_VERSION = 1
DEFAULT_MANIFEST = HERE / "suite_manifest.json"
DEFAULT_EXPECTATIONS = HERE / "expected_verdicts.json"

EXPERIMENTS = (
    "volume_asymptotics",
    "intersection_bound",
    "weight_conditions",
    "example_i",
    "example_ii",
    "lemma_diag",
    "testing_condition",
)

COMMANDS = {
    "volume": "volume_asymptotics",
    "intersect": "intersection_bound",
    "check-weight": "weight_conditions",
    "example-i": "example_i",
    "example-ii": "example_ii",
    "lemma": "lemma_diag",
    "testcond": "testing_condition",
}

CONFIG_KEYS = {
    "experiment", "label", "n", "alpha", "p", "theta", "weight", "seed", "samples",
    "workers", "rmax", "R_list", "options",
}

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

CJ_THETAS = (-1.0 / 3.0, 0.0, 0.5, 1.0)
CJ2_THETAS = (-1.0, -0.5, 0.0, 0.5)
NEIGHBOUR_OFFSET = 0.05
APQ_GLOBAL_RADII = (5.0, 10.0, 20.0, 30.0)
APQ_GLOBAL_FACTOR = 10.0
POWER_LAW_TOL = 0.2
LEMMA_GROWTH = 10.0
CLOSED_FORM_TOL = 1e-9


class ConfigError(ValueError):
    """Bad experiment configuration."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def parse_exponent(value) -> float:
    """Accept 4/3 as a number or as the string "4/3"."""
    try:
        return float(Fraction(str(value)))
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError(f"cannot parse exponent {value!r}") from e


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    label: str | None = None
    n: int = 2
    alpha: float = 1.0
    p: float = 4.0 / 3.0
    theta: float | None = None
    weight: str = "power_volume"
    seed: int = 0
    samples: int = 100_000
    workers: int = 1
    rmax: float | None = None
    R_list: tuple[float, ...] = (10.0, 20.0, 30.0, 40.0)
    options: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.weight not in ("power_volume", "constant"):
            raise ConfigError(f"weight must be 'power_volume' or 'constant', got {self.weight!r}")
        if not isinstance(self.options, dict):
            raise ConfigError("options must be an object")
        R_list = tuple(float(R) for R in self.R_list)
        if not R_list or any(b <= a for a, b in zip(R_list, R_list[1:])) or R_list[0] <= 0:
            raise ConfigError(f"R_list must be positive and increasing, got {self.R_list!r}")
        object.__setattr__(self, "R_list", R_list)
        try:
            self.triple
            self.mc
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from e
        if self.rmax is not None and not self.rmax >= 2:
            raise ConfigError(f"rmax must be >= 2, got {self.rmax!r}")

    @property
    def name(self) -> str:
        return self.label or self.experiment

    @property
    def dim(self) -> Dimension:
        return Dimension(self.n)

    @property
    def triple(self) -> ExponentTriple:
        return ExponentTriple.from_p(self.n, self.alpha, self.p)

    @property
    def mc(self) -> McConfig:
        return McConfig(self.seed, self.samples, self.workers)

    def option(self, key: str, default):
        return self.options.get(key, default)

    def weight_spec(self, default_theta: float) -> tuple[WeightSpec, float]:
        theta = default_theta if self.theta is None else float(self.theta)
        if self.weight == "constant" or theta == 0.0:
            return WeightSpec.constant(1.0), theta
        return WeightSpec.power_volume(theta, self.triple.q), theta

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in CONFIG_KEYS}
        out["R_list"] = list(self.R_list)
        return out


def parse_entry(entry: dict) -> ExperimentConfig:
    if not isinstance(entry, dict):
        raise ConfigError(f"experiment entry must be an object, got {type(entry).__name__}")
    unknown = set(entry) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "experiment" not in entry:
        raise ConfigError("experiment entry needs an 'experiment' key")
    kwargs = dict(entry)
    try:
        for key in ("alpha", "p", "theta", "rmax"):
            if kwargs.get(key) is not None:
                kwargs[key] = parse_exponent(kwargs[key])
        for key in ("n", "seed", "samples", "workers"):
            if key in kwargs:
                if isinstance(kwargs[key], bool) or int(kwargs[key]) != kwargs[key]:
                    raise ConfigError(f"{key} must be an integer, got {kwargs[key]!r}")
                kwargs[key] = int(kwargs[key])
        if "R_list" in kwargs:
            kwargs["R_list"] = tuple(kwargs["R_list"])
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(path) -> list[ExperimentConfig]:
    """Read a {"schema_version": 1, "experiments": [...]} file."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {data.get('schema_version')!r}")
    entries = data.get("experiments")
    if not isinstance(entries, list):
        raise ConfigError(f"{path}: 'experiments' must be a list")
    return [parse_entry(e) for e in entries]


def load_expectations(path=DEFAULT_EXPECTATIONS) -> dict:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("schema_version") != SCHEMA_VERSION or not isinstance(data.get("expectations"), dict):
        raise ConfigError(f"{path}: malformed expectations table")
    return data["expectations"]


def _overrides(args) -> dict:
    out = {}
    for key in ("n", "alpha", "p", "theta", "rmax", "seed", "samples", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = parse_exponent(value) if key in ("alpha", "p", "theta", "rmax") else value
    return out


def build_config(args) -> list[ExperimentConfig]:
    """Configs for a CLI invocation; flags override file values and drop the label."""
    if args.command == "suite":
        configs = load_config(args.config or DEFAULT_MANIFEST)
    elif args.config:
        wanted = COMMANDS[args.command]
        configs = [c for c in load_config(args.config) if c.experiment == wanted]
        if not configs:
            raise ConfigError(f"{args.config}: no {wanted} experiment")
    else:
        configs = [ExperimentConfig(COMMANDS[args.command])]
    overrides = _overrides(args)
    if not overrides:
        return configs
    try:
        return [replace(c, label=None, **overrides) for c in configs]
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _clean(value):
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _report(cfg: ExperimentConfig, verdicts: dict, rows: list[dict], pointers=None) -> dict:
    base = {"n": cfg.n, "alpha": cfg.alpha, "p": cfg.p}
    report = {
        "experiment": cfg.experiment,
        "label": cfg.name,
        "seed": cfg.seed,
        "status": "pending",
        "verdicts": verdicts,
        "rows": [{**base, **row, "seed": cfg.seed} for row in rows],
    }
    if pointers:
        report["inconclusive"] = pointers
    return _clean(report)


def _condition_row(kind: str, theta: float, delta: float, rep) -> dict:
    return {
        "kind": kind, "theta": theta, "delta": delta, "sup_ratio": rep.sup_ratio,
        "coarse_ratio": rep.coarse_ratio, "witness": " ".join(f"{v:g}" for v in rep.argmax_witness),
        "samples": rep.samples, "verdict": rep.verdict,
    }


def write_report(report: dict, out_dir, formats=("csv", "json")) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = report["label"] or report["experiment"]
        if "json" in formats:
            path = out_dir / f"{stem}.json"
            path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
            written.append(path)
        if "csv" in formats:
            path = out_dir / f"{stem}.csv"
            fieldnames = []
            for row in report["rows"]:
                fieldnames.extend(k for k in row if k not in fieldnames)
            with path.open("w", encoding="utf-8", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=fieldnames, restval="", lineterminator="\n")
                writer.writeheader()
                writer.writerows(report["rows"])
            written.append(path)
    except OSError as e:
        log.error("cannot write report to %s: %s", getattr(e, "filename", None) or out_dir, e)
        raise
    return written


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _closed_form_volume(n: int, r: float) -> float | None:
    if n == 2:
        return 4.0 * math.pi * math.sinh(0.5 * r) ** 2
    if n == 3:
        return math.pi * (math.sinh(2.0 * r) - 2.0 * r)
    return None


def run_volume_asymptotics(cfg: ExperimentConfig) -> dict:
    dims = cfg.option("dims", [2, 3])
    r_top = cfg.rmax or 25.0
    radii = np.linspace(0.01, r_top, int(cfg.option("points", 100)))
    rows, bracket_ok, closed_ok = [], True, True
    for n in dims:
        dim = Dimension(int(n))
        ratios = growth_bracket(dim, radii)
        lo, hi = GROWTH_BRACKETS.get(dim.n, (min(ratios), max(ratios)))
        inside = all(lo <= c <= hi for c in ratios) and max(ratios) <= 100.0 * min(ratios)
        bracket_ok &= inside
        for r, ratio in zip(radii, ratios):
            vol = ball_volume(dim, float(r))
            exact = _closed_form_volume(dim.n, float(r))
            rel = abs(vol - exact) / exact if exact else None
            if rel is not None and rel > CLOSED_FORM_TOL:
                closed_ok = False
            rows.append({"n": dim.n, "r": float(r), "volume": vol, "ratio": ratio,
                         "closed_form": exact, "rel_err": rel})
        log.info("growth bracket n=%d: [%.4g, %.4g]", dim.n, min(ratios), max(ratios))
    return _report(cfg, {"bracket_ok": bracket_ok, "closed_form_ok": closed_ok}, rows)


def run_intersection_bound(cfg: ExperimentConfig) -> dict:
    dim = cfg.dim
    constant = INTERSECTION_CONSTANTS.get(dim.n, INTERSECTION_CONSTANTS[2])
    rng = np.random.default_rng(cfg.seed)
    count = int(cfg.option("pairs", 100))
    max_radius = float(cfg.option("max_radius", 8.0))
    rows, bounded, agree = [], True, 0
    for i in range(count):
        r, s = rng.uniform(0.1, max_radius, size=2)
        d = float(rng.uniform(0.0, r + s))
        child_seed = int(rng.integers(0, 2**63))
        small, big = (min(r, s), max(r, s))
        # small ball at the origin, the other centered at distance d on the axis
        est = intersection_bound_ratio(dim, origin(dim), float(small), axis_point(dim, d), float(big),
                                       McConfig(child_seed, cfg.samples, cfg.workers))
        scale = math.exp((dim.n - 1) * (r + s - d) / 2.0)
        exact = quad_radial_ball(dim, d, float(big), RadialProfile.indicator(float(small)))
        ok = est.value <= constant + 3.0 * est.stderr
        bounded &= ok
        agree += int(est.agrees_with(exact / scale))
        rows.append({"pair": i, "r": float(r), "s": float(s), "d": d, "mc_seed": child_seed,
                     "ratio": est.value, "stderr": est.stderr, "quad_ratio": exact / scale,
                     "constant": constant, "within": ok})
    log.info("intersection bound: %d/%d MC estimates within 3 sigma of quadrature", agree, count)
    return _report(cfg, {"bounded": bounded}, rows)


def _neighbour_deltas(theta: float) -> list[float]:
    return [theta - NEIGHBOUR_OFFSET, theta + NEIGHBOUR_OFFSET]


def run_weight_conditions(cfg: ExperimentConfig) -> dict:
    dim, triple = cfg.dim, cfg.triple
    J = int(cfg.option("J", 12))
    R = int(cfg.option("R", 12))
    stabilize = bool(cfg.option("stabilize", True))
    cj_thetas = [float(t) for t in cfg.option("cj_thetas", CJ_THETAS)] if cfg.theta is None \
        else [float(cfg.theta)]
    cj2_thetas = [float(t) for t in cfg.option("cj2_thetas", CJ2_THETAS)] if cfg.theta is None \
        else [float(cfg.theta)]
    rows, pointers = [], []
    verdicts = {"cj_bounded": True, "cj2_bounded": True, "apq_loc_bounded": True}
    for kind, thetas, check in (("cj", cj_thetas, cond_cj_check), ("cj2", cj2_thetas, cond_cj2_check)):
        for theta in thetas:
            w = WeightSpec.power_volume(theta, triple.q)
            rep = check(dim, w, triple, theta, J, R, stabilize=stabilize)
            rows.append(_condition_row(kind, theta, theta, rep))
            verdicts[f"{kind}_bounded"] &= rep.verdict == "bounded"
            if rep.verdict == "inconclusive":
                pointers.append(f"{kind} theta={theta:g}")
            for delta in _neighbour_deltas(theta):
                try:
                    near = check(dim, w, triple, delta, J, R, stabilize=False)
                except PreconditionError as e:
                    log.info("neighbour %s theta=%g delta=%g skipped: %s", kind, theta, delta, e)
                    continue
                rows.append(_condition_row(f"{kind}_neighbour", theta, delta, near))
    for theta in sorted(set(cj_thetas) | set(cj2_thetas)):
        rep = apq_loc_sup(dim, WeightSpec.power_volume(theta, triple.q), triple)
        rows.append(_condition_row("apq_loc", theta, math.nan, rep))
        verdicts["apq_loc_bounded"] &= rep.verdict == "bounded"
        if rep.verdict == "inconclusive":
            pointers.append(f"apq_loc theta={theta:g}")
    return _report(cfg, verdicts, rows, pointers)


def _unit_ball_indicator() -> ScalarField:
    return ScalarField.radial(RadialProfile.indicator(1.0))


def _scan_grid(cfg: ExperimentConfig, f: ScalarField) -> RadiusGrid:
    grid = RadiusGrid.for_domain(f.support_radius, cfg.R_list[-1])
    return replace(grid, r_max=max(cfg.rmax, grid.r_max)) if cfg.rmax else grid


def _scan_rows(rows) -> list[dict]:
    return [{"kind": "scan", "R": row.R, "strong": row.strong, "weak": row.weak,
             "input": row.input} for row in rows]


def run_example_i(cfg: ExperimentConfig) -> dict:
    """Weak type holds, strong type fails, for w_theta with theta = -q/p'."""
    dim, triple = cfg.dim, cfg.triple
    endpoint = triple.theta_weak_endpoint
    w, theta = cfg.weight_spec(endpoint)
    if cfg.theta is not None and abs(theta - endpoint) > 1e-12:
        log.warning("example_i with theta=%g; the weak-only weight has theta=%g", theta, endpoint)
    J = int(cfg.option("J", 12))
    R = int(cfg.option("R", 12))
    stabilize = bool(cfg.option("stabilize", True))
    rows, pointers = [], []
    cj2 = cond_cj2_check(dim, w, triple, theta, J, R, stabilize=stabilize) if theta < 1 else None
    if cj2 is not None:
        rows.append(_condition_row("cj2", theta, theta, cj2))
        if cj2.verdict == "inconclusive":
            pointers.append("cj2")
    loc = apq_loc_sup(dim, w, triple)
    rows.append(_condition_row("apq_loc", theta, math.nan, loc))
    f = _unit_ball_indicator()
    scan = riesz_divergence_scan(dim, f, w, triple, cfg.R_list, _scan_grid(cfg, f))
    stats = divergence_verdict(scan)
    rows.extend(_scan_rows(scan))
    # M_alpha f against w_theta along a ray, recorded without asserting a sign
    t_hi = min(30.0, cfg.R_list[-1])
    if t_hi > 5.0:
        t_grid = np.linspace(5.0, t_hi, 6)
        mf = maximal_profile(dim, triple.alpha, f, t_grid, RadiusGrid.for_domain(f.support_radius, t_hi))
        slope = pointwise_exponent(dim, mf, w, (5.0, t_hi), 6)
        rows.append({"kind": "pointwise", "theta": theta, "exponent": slope})
    weak_conditions = (cj2 is None or cj2.verdict == "bounded") and loc.verdict == "bounded"
    exponent_ok = abs(stats["exponent"] - 1.0 / triple.q) <= POWER_LAW_TOL / triple.q \
        if math.isfinite(stats["exponent"]) else False
    verdicts = {
        "weak_ok": bool(weak_conditions and stats["weak_stable"]),
        "strong_diverges": bool(stats["strong_diverges"]),
        "power_law_ok": bool(exponent_ok),
        "strong_stable": bool(stats["strong_stable"]),
    }
    rows.append({"kind": "summary", "theta": theta, "exponent": stats["exponent"],
                 "strong_growth": stats["strong_growth"]})
    return _report(cfg, verdicts, rows, pointers)


def run_example_ii(cfg: ExperimentConfig) -> dict:
    """Strong type holds for w_theta, theta in (1/2, min{...}), although w_theta is not A_{p,q}."""
    dim, triple = cfg.dim, cfg.triple
    w, theta = cfg.weight_spec(1.0)
    upper = strong_delta_bound(triple)
    if w.kind != "constant" and not 0.5 < theta < upper:
        raise PreconditionError(f"example_ii needs theta in (1/2, {upper:g}), got {theta!r}")
    J = int(cfg.option("J", 12))
    R = int(cfg.option("R", 12))
    stabilize = bool(cfg.option("stabilize", True))
    rows, pointers = [], []
    cj = cond_cj_check(dim, w, triple, theta, J, R, stabilize=stabilize)
    rows.append(_condition_row("cj", theta, theta, cj))
    if cj.verdict == "inconclusive":
        pointers.append("cj")
    radii = [float(r) for r in cfg.option("apq_radii", APQ_GLOBAL_RADII)]
    growth = {}
    for placement in ("centered", "through_origin"):
        products = apq_global_scan(dim, w, triple, radii, placement)
        values = [v for _, v in products]
        growth[placement] = (all(b > a for a, b in zip(values, values[1:])), values[-1] / values[0])
        rows.extend({"kind": "apq_global", "placement": placement, "theta": theta, "R": R_,
                     "product": v} for R_, v in products)
    f = _unit_ball_indicator()
    scan = riesz_divergence_scan(dim, f, w, triple, cfg.R_list, _scan_grid(cfg, f))
    stats = divergence_verdict(scan)
    rows.extend(_scan_rows(scan))
    not_apq = growth["centered"][0] and growth["through_origin"][0] \
        and growth["through_origin"][1] > APQ_GLOBAL_FACTOR
    verdicts = {
        "strong_ok": bool(cj.verdict == "bounded" and stats["strong_stable"]),
        "not_Apq": bool(not_apq),
    }
    rows.append({"kind": "summary", "theta": theta, "exponent": stats["exponent"],
                 "through_origin_growth": growth["through_origin"][1],
                 "centered_growth": growth["centered"][1]})
    return _report(cfg, verdicts, rows, pointers)


def run_lemma_diag(cfg: ExperimentConfig) -> dict:
    dim, triple = cfg.dim, cfg.triple
    w, theta = cfg.weight_spec(triple.theta_weak_endpoint)
    bg = params_weak_only(triple, theta)
    r_values = [int(r) for r in cfg.option("r_values", range(2, 9))]
    fractions = tuple(float(x) for x in cfg.option("lambda_fractions", (0.9, 0.5, 0.1, 0.01)))
    sweep = lemma21_sweep(dim, _unit_ball_indicator(), w, triple, bg, r_values, fractions,
                          float(cfg.option("epsilon", 0.5)), cfg.option("eta", None))
    rows = [{"kind": "lemma", "theta": theta, "beta": bg.beta, "gamma": bg.gamma, "r": r,
             "lambda": lam, "lhs": lhs, "rhs_sum": rhs, "ratio": ratio, "failure": failure}
            for r, lam, lhs, rhs, ratio, failure in sweep.rows]
    first = sweep.per_r[r_values[0]] if r_values else 0.0
    bounded = sweep.failures == 0 and math.isfinite(sweep.min_constant) and (
        first == 0.0 or all(v <= LEMMA_GROWTH * first for v in sweep.per_r.values()))
    rows.append({"kind": "summary", "min_constant": sweep.min_constant, "failures": sweep.failures})
    return _report(cfg, {"bounded": bool(bounded)}, rows)


def run_testing_condition(cfg: ExperimentConfig) -> dict:
    dim, triple = cfg.dim, cfg.triple
    w, theta = cfg.weight_spec(triple.theta_weak_endpoint)
    bg = params_weak_only(triple, theta)
    r_values = [float(r) for r in cfg.option("r_values", range(1, 11))]
    count = int(cfg.option("family", 50))
    max_radius = float(cfg.option("max_radius", 4.0))
    rep = testing_condition_sweep(dim, w, triple, bg, r_values=r_values, seed=cfg.seed, count=count,
                                  max_radius=max_radius, mc=cfg.mc)
    rows = [{"kind": "testing", "theta": theta, "beta": bg.beta, "gamma": bg.gamma,
             "family": count, "max_radius": max_radius,
             "sup_ratio": rep.sup_ratio, "coarse_ratio": rep.coarse_ratio,
             "witness_member": rep.argmax_witness[0], "witness_r": rep.argmax_witness[1],
             "samples": rep.samples, "verdict": rep.verdict}]
    pointers = ["testing sweep"] if rep.verdict == "inconclusive" else None
    return _report(cfg, {"bounded": rep.verdict == "bounded"}, rows, pointers)


RUNNERS = {
    "volume_asymptotics": run_volume_asymptotics,
    "intersection_bound": run_intersection_bound,
    "weight_conditions": run_weight_conditions,
    "example_i": run_example_i,
    "example_ii": run_example_ii,
    "lemma_diag": run_lemma_diag,
    "testing_condition": run_testing_condition,
}


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def evaluate(report: dict, expectations: dict) -> dict:
    """Set report["status"] from the expected verdicts for its label (or experiment)."""
    expected = expectations.get(report["label"]) or expectations.get(report["experiment"]) or {}
    mismatched = {k: v for k, v in expected.items() if report["verdicts"].get(k) != v}
    if mismatched:
        report["status"] = "mismatch"
        report["expected"] = expected
        log.warning("%s: verdicts %s differ from expected %s", report["label"],
                    {k: report["verdicts"].get(k) for k in mismatched}, mismatched)
    elif report.get("inconclusive"):
        report["status"] = "inconclusive"
    else:
        report["status"] = "ok"
    return report


def _failed(cfg: ExperimentConfig, e: Exception) -> dict:
    return {"experiment": cfg.experiment, "label": cfg.name, "seed": cfg.seed,
            "status": "failed", "error": f"{type(e).__name__}: {e}", "verdicts": {}, "rows": []}


def run_config(entry: dict, expectations: dict | None = None) -> dict:
    """Run one experiment from its dict form. Never raises; failures become status 'failed'."""
    cfg = parse_entry(entry)
    with run_context(experiment=cfg.experiment, label=cfg.name, seed=cfg.seed):
        try:
            report = RUNNERS[cfg.experiment](cfg)
        except (NumericalError, PreconditionError, EngineError, DomainError) as e:
            log.error("%s failed: %s", cfg.name, e)
            return _failed(cfg, e)
        except Exception as e:
            log.error("%s crashed: %s", cfg.name, e, exc_info=True)
            return _failed(cfg, e)
    return evaluate(report, expectations if expectations is not None else {})


def _run_in_worker(entry: dict, expectations: dict) -> dict:
    setup_logging()
    return run_config(entry, expectations)


def _dispatch(entries: list[dict], expectations: dict, parallel: bool, remote: bool,
              workers: int) -> list[dict]:
    if remote:
        import modal_app

        with modal_app.app.run():
            reports = list(modal_app.run_experiment.map(entries))
        return [evaluate(r, expectations) if r.get("status") != "failed" else r for r in reports]
    if parallel and len(entries) > 1:
        with ProcessPoolExecutor(max_workers=max(1, workers)) as pool:
            return list(pool.map(_run_in_worker, entries, [expectations] * len(entries)))
    return [run_config(e, expectations) for e in entries]


def collect(reports: list[dict], out_dir, formats=("csv", "json")) -> int:
    """Write each report and fold the statuses into an exit code."""
    for report in reports:
        write_report(report, out_dir, formats)
        log.info("%s: %s %s", report["label"], report["status"], report.get("verdicts"))
    statuses = [r["status"] for r in reports]
    if "failed" in statuses:
        return EXIT_NUMERICAL
    if any(s != "ok" for s in statuses):
        return EXIT_MISMATCH
    return EXIT_OK


def run_suite(configs: list[ExperimentConfig], out_dir, formats=("csv", "json"),
              expectations: dict | None = None, parallel: bool = False,
              remote: bool = False) -> tuple[int, list[dict]]:
    """Run every config and write its report; returns (exit code, reports)."""
    if not configs:
        return EXIT_OK, []
    expectations = expectations if expectations is not None else {}
    entries = [c.to_dict() for c in configs]
    workers = min(len(entries), os.cpu_count() or 1)
    reports = _dispatch(entries, expectations, parallel, remote, workers)
    return collect(reports, out_dir, formats), reports


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (schema_version 1)")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    common.add_argument("--out", help="output directory (default $HYPMAX_OUT or results/)")
    common.add_argument("--n", type=int, help="dimension of H^n")
    common.add_argument("--alpha", help="fractional order, 0 < alpha < n")
    common.add_argument("--p", help="exponent p, e.g. 4/3")
    common.add_argument("--theta", help="weight exponent theta of w_theta")
    common.add_argument("--rmax", help="largest averaging radius / volume radius")
    common.add_argument("--samples", type=int, help="Monte Carlo samples")
    common.add_argument("--workers", type=int, help="Monte Carlo workers (capped by HYPMAX_THREADS)")
    common.add_argument("--format", choices=("csv", "json"), help="write only this format")
    common.add_argument("--parallel", action="store_true", help="run experiments in a process pool")
    common.add_argument("--remote", action="store_true", help="run experiments on Modal")

    parser = argparse.ArgumentParser(prog="hypmax", description="Fractional maximal operators on H^n")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in list(COMMANDS) + ["suite"]:
        sub.add_parser(command, parents=[common])
    return parser


def main(argv=None) -> int:
    load_dotenv()
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        configs = build_config(args)
        expectations = load_expectations()
    except (ConfigError, json.JSONDecodeError, OSError) as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    out_dir = Path(args.out or os.environ.get("HYPMAX_OUT", "results"))
    formats = (args.format,) if args.format else ("csv", "json")
    try:
        code, _ = run_suite(configs, out_dir, formats, expectations, args.parallel, args.remote)
    except ImportError as e:
        log.error("remote execution unavailable: %s", e)
        return EXIT_CONFIG
    except OSError:
        return EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())
