"""Command-line interface.

Usage::

    policybounds <command> --config run.json [--dataset data.csv] [--format json|csv|human]
                 [--seed N] [--out report.json]

Exit codes: 0 success, 2 empty identified set (model rejected), 3 input
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .calibrate import SignalModel, dp_from_rho, od_dp_convert, rho_from_dp, rho_from_panel_votes
from .effects import pc_effect_fractional, pc_effect_from_theta, reallocation_effect, tsls_benchmark
from .identify import identified_set, intersection_bounds_universal
from .inference import ci_projection, ci_universal_intersection
from .io import parse_dataset
from .model import (
    BENCHMARK_GROUP,
    MTR,
    QUOTA_GROUP,
    AverageDisagreement,
    DataDistribution,
    KnownY0,
    KnownY1,
    ModelError,
    OutcomeDisparity,
    PairwiseDisagreement,
    PCBound,
    PolicyMonotonicity,
    PolicySpec,
    RestrictionSet,
    TECap,
    assign_leniency_groups,
    discretize_outcome,
    group_release_rate,
    pool_judges,
    quantile_grid,
)
from .oracle import solve_type_lp, type_space_for
from .report import Report, emit_report

EXIT_OK = 0
EXIT_EMPTY = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4

COMMANDS = ("bounds", "pc-effect", "universal-release", "quota", "calibrate-dp", "infer", "oracle-check")

_judges = {"type": "array", "items": {"type": "string"}}
_prob = {"type": "number", "minimum": 0, "maximum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema_version"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": 1},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "format": {"enum": ["aggregate", "long"]},
                "known_y0": {"type": "boolean"},
            },
        },
        "policy": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["universal", "quota", "per_judge", "status_quo", "reallocation", "average"]},
                "q": _prob,
                "rates": {"type": "array", "items": _prob},
                "groups": {"type": "array", "items": {"type": "string"}},
                "benchmark": {"type": "string"},
                "target": {"oneOf": [{"type": "string"}, _judges]},
                "alpha": _prob,
            },
        },
        "restrictions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["type"],
                "properties": {
                    "type": {
                        "enum": [
                            "policy_monotonicity",
                            "known_y0",
                            "known_y1",
                            "mtr",
                            "pairwise_disagreement",
                            "average_disagreement",
                            "pc_bound",
                            "te_cap",
                            "outcome_disparity",
                        ]
                    },
                    "value": {"type": "number"},
                    "z": {"type": "string"},
                    "z_prime": {"type": "string"},
                    "a": {"enum": [0, 1]},
                    "a_prime": {"enum": [0, 1]},
                    "delta": _prob,
                    "dp_bar": _prob,
                    "group": {"type": "string"},
                    "benchmark": {"type": "string"},
                    "weighted": {"type": "boolean"},
                    "judges": _judges,
                    "c": {"type": "number"},
                    "od_bar": {"type": "number", "minimum": 0},
                },
            },
        },
        "pooling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"min_cases": {"type": "number", "minimum": 0}, "within_group": {"type": "boolean"}},
        },
        "leniency_groups": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"top_share": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
        },
        "discretize": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"points": {"type": "integer", "minimum": 2}},
        },
        "inference": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "level_agg": {"type": ["number", "null"], "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "draws": {"type": "integer", "minimum": 100},
                "seed": {"type": "integer"},
                "target": {"enum": ["theta", "pc_effect"]},
            },
        },
        "calibration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rho": {"type": "number", "minimum": -1, "maximum": 1},
                "pairs_csv": {"type": "string"},
                "q": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "benchmark_rates": {"type": "array", "items": _prob},
                "benchmark_cases": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "divide_by_q": {"type": "boolean"},
                "delta_te": {"type": "number", "minimum": 0},
                "target_dp": _prob,
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tolerance": {"type": "number", "exclusiveMinimum": 0}},
        },
    },
}


class InputError(Exception):
    pass


class EmptySet(Exception):
    pass


def load_config(path) -> dict:
    """Read and validate a JSON config; relative file paths resolve against the config's folder."""
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path}: invalid JSON ({exc})") from None
    validate_config(cfg)
    base = Path(path).parent
    for section, key in (("dataset", "path"), ("calibration", "pairs_csv")):
        val = cfg.get(section, {}).get(key)
        if val is not None and not Path(val).is_absolute():
            cfg[section][key] = str(base / val)
    return cfg


def validate_config(cfg: dict):
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"config error at {where}: {exc.message}") from None


def restriction_from_config(item: dict):
    t = item["type"]
    opt = {k: v for k, v in item.items() if k != "type"}
    try:
        if t == "policy_monotonicity":
            return PolicyMonotonicity()
        if t == "known_y0":
            return KnownY0(opt.get("value", 0.0))
        if t == "known_y1":
            return KnownY1(opt.get("value", 0.0))
        if t == "mtr":
            return MTR()
        if t == "pairwise_disagreement":
            return PairwiseDisagreement(opt["z"], opt["z_prime"], opt.get("a", 1), opt.get("a_prime", 1), opt.get("delta", 1.0))
        if t == "average_disagreement":
            return AverageDisagreement(
                opt["dp_bar"], opt.get("group", QUOTA_GROUP), opt.get("benchmark", BENCHMARK_GROUP), opt.get("weighted", True)
            )
        if t == "pc_bound":
            j = opt.get("judges")
            return PCBound(tuple(j) if j else None, opt.get("group", QUOTA_GROUP))
        if t == "te_cap":
            j = opt.get("judges")
            return TECap(opt["c"], tuple(j) if j else None)
        if t == "outcome_disparity":
            return OutcomeDisparity(opt["od_bar"], opt.get("group", QUOTA_GROUP), opt.get("benchmark", BENCHMARK_GROUP))
    except KeyError as exc:
        raise InputError(f"restriction {t!r} is missing field {exc}") from None
    raise InputError(f"unknown restriction {t!r}")


def policy_from_config(p: dict | None) -> PolicySpec:
    if p is None:
        raise InputError("config needs a 'policy' section for this command")
    kind = p["kind"]
    if kind == "universal":
        return PolicySpec.universal()
    if kind == "status_quo":
        return PolicySpec.status_quo()
    if kind == "quota":
        return PolicySpec.quota(p.get("q"), p.get("groups"), p.get("benchmark", BENCHMARK_GROUP))
    if kind == "per_judge":
        if "rates" not in p:
            raise InputError("per_judge policy needs 'rates'")
        return PolicySpec.per_judge(p["rates"])
    if kind == "average":
        if "alpha" not in p:
            raise InputError("average policy needs 'alpha'")
        return PolicySpec.average(p["alpha"])
    if kind == "reallocation":
        if "target" not in p:
            raise InputError("reallocation policy needs 'target'")
        return PolicySpec.reallocation(p["target"])
    raise InputError(f"unknown policy kind {kind!r}")


class Run:
    """State shared by the subcommands: config, data and the report under construction."""

    def __init__(self, command: str, cfg: dict, dataset_path=None, seed=None):
        self.command = command
        self.cfg = cfg
        self.seed = seed if seed is not None else cfg.get("inference", {}).get("seed")
        ds = dict(cfg.get("dataset", {}))
        if dataset_path is not None:
            ds["path"] = str(dataset_path)
        self.ds = ds
        self.report = Report(command)
        self.report.versions = {"policybounds": __version__, "numpy": np.__version__, "scipy": scipy.__version__}
        self._data = None
        self.t0 = time.perf_counter()

    def digest(self) -> str:
        # file contents, not their locations, enter the digest
        cfg = json.loads(json.dumps(self.cfg))
        files = []
        for section, key in (("dataset", "path"), ("calibration", "pairs_csv")):
            if key in cfg.get(section, {}):
                cfg[section].pop(key)
        if self.ds.get("path"):
            files.append(self.ds["path"])
        if self.cfg.get("calibration", {}).get("pairs_csv"):
            files.append(self.cfg["calibration"]["pairs_csv"])
        h = hashlib.sha256()
        h.update(json.dumps(cfg, sort_keys=True).encode())
        for f in files:
            h.update(Path(f).read_bytes())
        if self.seed is not None:
            h.update(str(self.seed).encode())
        return h.hexdigest()

    @property
    def data(self) -> DataDistribution:
        if self._data is None:
            if not self.ds.get("path"):
                raise InputError("no dataset given (use --dataset or config 'dataset.path')")
            data = parse_dataset(self.ds["path"], self.ds.get("format"), self.ds.get("known_y0", False))
            if "leniency_groups" in self.cfg:
                data = assign_leniency_groups(data, self.cfg["leniency_groups"].get("top_share", 0.1))
            pool = self.cfg.get("pooling")
            if pool:
                data = pool_judges(data, pool.get("min_cases", 0), pool.get("within_group", True))
            self._data = data
        return self._data

    @property
    def restrictions(self) -> RestrictionSet:
        return RestrictionSet(restriction_from_config(r) for r in self.cfg.get("restrictions", []))

    @property
    def policy(self) -> PolicySpec:
        return policy_from_config(self.cfg.get("policy"))

    def require_seed(self):
        if self.seed is None:
            raise InputError("inference requires a seed (config inference.seed or --seed)")
        return int(self.seed)

    def theta_bounds(self, policy=None, restrictions=None):
        """Identified set, combining rounded-down and rounded-up grids when discretising."""
        policy = policy or self.policy
        restrictions = self.restrictions if restrictions is None else restrictions
        data = self.data
        disc = self.cfg.get("discretize")
        if not disc:
            return identified_set(data, policy, restrictions)
        grid = quantile_grid(data, disc.get("points", 20))
        down = identified_set(discretize_outcome(data, grid, "down"), policy, restrictions)
        up = identified_set(discretize_outcome(data, grid, "up"), policy, restrictions)
        self.report.info["discretized_grid_points"] = len(grid)
        if down.empty or up.empty:
            return down if down.empty else up
        down.upper = up.upper
        down.method = "marginal_lp_discretized"
        return down


def _status_exit(report: Report) -> int:
    statuses = [r.status for r in report.results]
    if any(s.startswith("numerical_failure") or "numerical_failure" in s for s in statuses):
        return EXIT_NUMERICAL
    if any(s == "empty" for s in statuses):
        return EXIT_EMPTY
    return EXIT_OK


def _theta_row(rep, name, b):
    kind = "point" if b.ok and abs(b.upper - b.lower) <= 1e-9 else "set"
    return rep.add(name, b.lower, b.upper, b.status, b.method, None, kind)


def cmd_bounds(run: Run):
    b = run.theta_bounds()
    _theta_row(run.report, "theta", b)
    if b.ok:
        ey = run.data.mean_y
        run.report.add("policy_effect", b.lower - ey, b.upper - ey, b.status, b.method)
    run.report.info["mean_y"] = run.data.mean_y
    run.report.info["mean_d"] = run.data.mean_d
    run.report.info["n_judges"] = run.data.K


def cmd_pc_effect(run: Run):
    data, policy, rs = run.data, run.policy, run.restrictions
    b = run.theta_bounds()
    _theta_row(run.report, "theta", b)
    r = pc_effect_from_theta(b, data, policy)
    run.report.add("pc_effect", r.lower, r.upper, r.status, "ratio")
    f = pc_effect_fractional(data, policy, rs)
    run.report.add("pc_effect", f.lower, f.upper, f.status, "fractional")
    run.report.info["complier_mass"] = r.complier_mass


def cmd_universal(run: Run):
    data = run.data
    fast = intersection_bounds_universal(data)
    _theta_row(run.report, "theta", fast)
    lpb = identified_set(data, PolicySpec.universal(), [KnownY0(0.0)])
    _theta_row(run.report, "theta", lpb)
    if "inference" in run.cfg:
        inf = run.cfg["inference"]
        ci = ci_universal_intersection(data, inf.get("level", 0.95), inf.get("draws", 20000), run.require_seed())
        run.report.add("theta", ci.lower, ci.upper, ci.status, ci.method, ci.level, "ci")


def cmd_quota(run: Run):
    data = run.data
    pcfg = run.cfg.get("policy") or {"kind": "quota"}
    if pcfg.get("kind") != "quota":
        raise InputError("the quota command needs a quota policy")
    policy = policy_from_config(pcfg)
    rs = run.restrictions
    b = run.theta_bounds(policy, rs)
    _theta_row(run.report, "theta", b)
    ey = data.mean_y
    if b.ok:
        run.report.add("policy_effect", b.lower - ey, b.upper - ey, b.status, b.method)
    pc = pc_effect_from_theta(b, data, policy)
    run.report.add("pc_effect", pc.lower, pc.upper, pc.status, "ratio")
    res = policy.resolve(data)
    run.report.info["quota"] = float(pcfg["q"]) if pcfg.get("q") is not None else group_release_rate(data, policy.benchmark)
    run.report.info["complier_mass"] = res.counterfactual_rate(data) - data.mean_d
    try:
        t = tsls_benchmark(data, policy)
        run.report.add("tsls_benchmark", t, t, "ok", "tsls", None, "point")
    except ModelError as exc:
        run.report.info["tsls_benchmark"] = str(exc)
    bench = policy.benchmark
    if data.members(bench):
        r = reallocation_effect(data, bench)
        run.report.add("reallocation_effect", r, r, "ok", "reallocation", None, "point")


def cmd_calibrate(run: Run):
    c = run.cfg.get("calibration")
    if c is None:
        raise InputError("config needs a 'calibration' section")
    if "pairs_csv" in c:
        rho = rho_from_panel_votes(c["pairs_csv"])
    elif "rho" in c:
        rho = c["rho"]
    else:
        rho = None
    if "benchmark_rates" in c:
        rates = c["benchmark_rates"]
        cases = c.get("benchmark_cases")
        q = c.get("q")
    else:
        data = run.data
        idx = data.members(BENCHMARK_GROUP)
        if not idx:
            raise InputError("no benchmark judges in the dataset and no benchmark_rates given")
        rates = data.release_rates[idx].tolist()
        cases = data.n_cases[idx].tolist()
        q = c.get("q", group_release_rate(data, BENCHMARK_GROUP))
    if q is None:
        raise InputError("calibration needs 'q'")
    model = SignalModel(0.0 if rho is None else rho, q, tuple(rates), (1.0,), tuple(cases) if cases else None, c.get("divide_by_q", False))
    if rho is None:
        if "target_dp" not in c:
            raise InputError("calibration needs 'rho', 'pairs_csv' or 'target_dp'")
        rho = rho_from_dp(model, c["target_dp"])
        model = model.with_rho(rho)
    dp = dp_from_rho(model)
    run.report.add("rho", rho, rho, "ok", "signal_model", None, "point")
    run.report.add("dp_bar", dp, dp, "ok", "signal_model", None, "point")
    if "delta_te" in c:
        od = od_dp_convert(c["delta_te"], dp, q)
        run.report.add("od_bar", od, od, "ok", "signal_model", None, "point")
    run.report.info["q"] = q


def cmd_infer(run: Run):
    inf = run.cfg.get("inference")
    if inf is None:
        raise InputError("config needs an 'inference' section")
    seed = run.require_seed()
    data, policy, rs = run.data, run.policy, run.restrictions
    target = inf.get("target", "theta")
    b = identified_set(data, policy, rs)
    _theta_row(run.report, "theta", b)
    ci = ci_projection(
        data,
        policy,
        rs,
        level=inf.get("level", 0.99),
        level_agg=inf.get("level_agg", 0.96),
        draws=inf.get("draws", 20000),
        seed=seed,
        target=target,
    )
    run.report.add(target, ci.lower, ci.upper, ci.status, ci.method, ci.level, "ci")
    run.report.info["cv_cells"] = ci.details["cv"]
    run.report.info["cv_aggregates"] = ci.details["cv_agg"]
    run.report.info["draws"] = inf.get("draws", 20000)
    run.report.info["seed"] = seed


def cmd_oracle_check(run: Run):
    data, policy, rs = run.data, run.policy, run.restrictions
    tol = run.cfg.get("oracle", {}).get("tolerance", 1e-6)
    a = identified_set(data, policy, rs)
    o = solve_type_lp(data, policy, rs, type_space_for(data, policy))
    _theta_row(run.report, "theta", a)
    _theta_row(run.report, "theta", o)
    if a.empty and o.empty:
        ok = True
    elif a.ok and o.ok:
        ok = abs(a.lower - o.lower) <= tol and abs(a.upper - o.upper) <= tol
    else:
        ok = False
    run.report.info["oracle_check"] = f"match within {tol:g}" if ok else f"MISMATCH beyond {tol:g}"
    if not ok:
        raise RuntimeError(run.report.info["oracle_check"])


HANDLERS = {
    "bounds": cmd_bounds,
    "pc-effect": cmd_pc_effect,
    "universal-release": cmd_universal,
    "quota": cmd_quota,
    "calibrate-dp": cmd_calibrate,
    "infer": cmd_infer,
    "oracle-check": cmd_oracle_check,
}


def run(command: str, cfg: dict, dataset=None, seed=None) -> Report:
    """Execute one subcommand and return its report."""
    validate_config(cfg)
    r = Run(command, cfg, dataset, seed)
    HANDLERS[command](r)
    r.report.inputs_digest = r.digest()
    r.report.timings["total_seconds"] = time.perf_counter() - r.t0
    return r.report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="policybounds", description="Bounds on counterfactual assignment policies in judge designs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--dataset", help="dataset CSV (overrides config dataset.path)")
    p.add_argument("--format", default="human", choices=("json", "csv", "human"), help="report format")
    p.add_argument("--seed", type=int, help="seed for simulated critical values")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings in JSON output")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        report = run(args.command, cfg, args.dataset, args.seed)
    except (InputError, ModelError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    out = emit_report(report, args.format, include_timings=args.timings)
    if args.out:
        Path(args.out).write_bytes(out)
    else:
        sys.stdout.write(out.decode())
    return _status_exit(report)


if __name__ == "__main__":
    sys.exit(main())
