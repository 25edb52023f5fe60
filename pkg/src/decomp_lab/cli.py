"""decomp-lab command line: gen, solve, verify, counterexample, chain, report.

Exit codes: 0 success, 2 config error, 3 non-convergence, 4 visibility
violation, 5 verification failure, 6 counterexample precondition failure.

Every artifact is rendered in memory first and then written atomically
(temp file + rename), so a failing command leaves no partial files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, svg
from .compose import (
    CompositionSpec,
    DecompositionMap,
    Scenario,
    check_bijective,
    invert_composition,
    make_scenario,
    scenario_from_parts,
)
from .errors import (
    DecompLabError,
    FragmentVisibilityViolation,
    InvalidParams,
    NonConvergence,
    PreconditionFailed,
    RankDeficient,
    SymmetryAbsent,
)
from .finitedist import SymbolSpace, uniform
from .identify import (
    phase_flip_counterexample,
    rank_deficient_alternatives,
    recovery_report,
    resolving_matrix,
    theorem2_sweep,
    trivial_solution_counterexample,
    verify_lemma_bijective_rank,
    verify_theorem1,
    verify_theorem2,
)
from .tasks import CHAIN_PRESETS, TaskConfig, build_chain, chain_learn, run_task, solve_task

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_VISIBILITY = 4
EXIT_VERIFY = 5
EXIT_PRECONDITION = 6

SCHEMA = 1
REPORT_TYPES = ("scenario", "task", "verify", "counterexample", "chain")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# serialization and atomic output


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Outputs:
    """Collects artifacts and writes them together at the end of a command."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str):
        self.files[name] = text

    def add_json(self, name: str, obj: dict):
        self.add(name, dumps({"schema": SCHEMA, **obj}))

    def flush(self) -> list[Path]:
        paths = []
        for name in sorted(self.files):
            p = self.out_dir / name
            write_atomic(p, self.files[name])
            paths.append(p)
        return paths


def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, f"{what}: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{what}: malformed JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(obj, dict):
        raise CliError(EXIT_CONFIG, f"{what}: top level must be a JSON object")
    return obj


def _check_schema(obj: dict, what: str):
    if obj.get("schema") != SCHEMA:
        raise CliError(EXIT_CONFIG, f"{what}.schema: expected {SCHEMA}, got {obj.get('schema')!r}")


def _load_scenario(path: str) -> Scenario:
    obj = _load_json(path, "scenario")
    _check_schema(obj, "scenario")
    try:
        return Scenario.from_json(obj)
    except DecompLabError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"scenario: invalid file ({exc!r})") from None


def _out_dir(args) -> Path:
    return Path(args.out_dir or os.environ.get("DECOMP_LAB_OUT") or "decomp_lab_out")


def _manifest(args, command: str, resolved: dict, extra: dict | None = None) -> dict:
    m = {
        "command": command,
        "config_path": getattr(args, "config", None),
        "resolved_config": resolved,
        "tool_version": __version__,
        "master_seed": _seed(args),
        "output_directory": str(_out_dir(args)),
    }
    if getattr(args, "timestamps", False):
        from datetime import datetime, timezone
        m["wall_clock"] = datetime.now(timezone.utc).isoformat()
    if extra:
        m.update(extra)
    return m


def _seed(args) -> int:
    return 0 if args.seed is None else int(args.seed)


# --------------------------------------------------------------------------
# gen

GEN_FIELDS = {"schema", "kind", "params", "seed", "name", "metric_kind"}


def _rank_line(scenario: Scenario, hidden: str) -> tuple[str, dict]:
    if scenario.p_x is None or scenario.p_y is None:
        return "unknown", {}
    known = scenario.p_x if hidden == "y" else scenario.p_y
    spec = scenario.spec if hidden == "y" else scenario.spec.transposed()
    rep = recovery_report(scenario.p_z, resolving_matrix(known, spec))
    tag = "full column rank" if rep.full_column_rank else "rank-deficient"
    return f"{rep.rank} ({tag})", {"rank": rep.rank, "n_columns": rep.n_columns}


def cmd_gen(args) -> int:
    cfg = _load_json(args.config, "config")
    extra = set(cfg) - GEN_FIELDS
    if extra:
        raise CliError(EXIT_CONFIG, f"config.{sorted(extra)[0]}: unknown field")
    if "kind" not in cfg:
        raise CliError(EXIT_CONFIG, "config.kind: missing")
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise CliError(EXIT_CONFIG, "config.params: must be an object")
    seed = int(cfg.get("seed", _seed(args)))
    metric = cfg.get("metric_kind") or args.metric or "discrete"
    name = cfg.get("name") or f"{cfg['kind']}_s{seed}"
    try:
        sc = make_scenario(cfg["kind"], params, seed, name=name, metric_kind=metric)
    except InvalidParams as exc:
        raise CliError(EXIT_CONFIG, f"config.params.{exc}") from None
    bij = check_bijective(sc.spec)
    rank_y, info_y = _rank_line(sc, "y")
    rank_x, info_x = _rank_line(sc, "x")
    summary = {
        "name": name,
        "kind": sc.kind,
        "sizes": {"x": len(sc.x_space), "y": len(sc.y_space), "z": len(sc.z_space)},
        "bijective": bool(bij),
        "rank_hidden_y": info_y,
        "rank_hidden_x": info_x,
    }
    out = Outputs(_out_dir(args))
    out.add(f"{name}.scenario.json", dumps(sc.to_json()))
    resolved = {"kind": sc.kind, "params": params, "seed": seed, "metric_kind": metric, "name": name}
    out.add_json(f"{name}.gen.manifest.json", _manifest(args, "gen", resolved, {"summary": summary}))
    out.flush()
    print(f"scenario: {name} -> {out.out_dir / (name + '.scenario.json')}")
    print(f"|x| = {len(sc.x_space)}, |y| = {len(sc.y_space)}, |z| = {len(sc.z_space)}")
    print(f"bijective: {'true' if bij else 'false'}")
    print(f"rank: {rank_y}")
    print(f"rank (x hidden): {rank_x}")
    return EXIT_OK


# --------------------------------------------------------------------------
# solve


def _task_config(args) -> TaskConfig:
    base = {}
    if args.config:
        base = _load_json(args.config, "task config")
    base.pop("schema", None)
    for flag, key in (("task", "task_id"), ("solver", "solver"), ("hidden", "hidden"),
                      ("step_size", "step_size"), ("max_iter", "max_iter")):
        v = getattr(args, flag, None)
        if v is not None:
            base[key] = v
    for flag, key in (("alpha", "alpha"), ("tol", "tol"), ("metric", "metric_kind"), ("seed", "seed")):
        v = getattr(args, flag, None)
        if v is not None and key not in base:
            base[key] = v
    if "task_id" not in base:
        raise CliError(EXIT_CONFIG, "task_id: missing (use --task or a config file)")
    try:
        return TaskConfig.from_json(base)
    except TypeError as exc:
        raise CliError(EXIT_CONFIG, f"task config: {exc}") from None


def _trace_rows(traces: dict) -> list[list]:
    rows = []
    for phase in sorted(traces):
        t = traces[phase]
        for i, (v, b, s) in enumerate(zip(t["values"], t["best"], t["steps"])):
            rows.append([phase, i, v, b, s])
    return rows


def cmd_solve(args) -> int:
    scenario = _load_scenario(args.scenario)
    cfg = _task_config(args)
    code = EXIT_OK
    try:
        if args.as_view:
            sol, report = solve_task(scenario, cfg)
        else:
            sol, report = run_task(scenario, cfg)
    except NonConvergence as exc:
        sol, report, code = exc.solution, exc.report, EXIT_NONCONVERGENCE
        print(f"warning: {exc}", file=sys.stderr)
    stem = f"{scenario.name}.task{cfg.task_id}"
    doc = {"report_type": "task", **report, "solution": sol.to_json() if sol is not None else None}
    out = Outputs(_out_dir(args))
    out.add_json(f"{stem}.report.json", doc)
    out.add(f"{stem}.trace.csv", _csv(["phase", "iteration", "value", "best", "step"], _trace_rows(report["traces"])))
    if args.svg:
        for name, text in render_report({"schema": SCHEMA, **doc}).items():
            out.add(f"{stem}.{name}", text)
    out.add_json(f"{stem}.solve.manifest.json",
                 _manifest(args, "solve", cfg.to_json(), {"scenario_path": args.scenario}))
    out.flush()
    _print_task_summary(doc)
    return code


def _print_task_summary(doc: dict):
    print(f"task {doc['task_id']} on {doc['scenario']}: converged={doc['converged']}, iterations={doc['iterations']}")
    if "loss_terms" in doc:
        lt = doc["loss_terms"]
        print("loss: " + ", ".join(f"{k} = {lt[k]:.3e}" for k in ("l_c", "l_d", "c_cyc", "d_cyc", "total")))
    for k, v in sorted(doc.get("tv_to_truth", {}).items()):
        print(f"tv_to_truth[{k}] = {v}")
    for c in doc.get("caveats", []):
        print(f"caveat: {c}")


# --------------------------------------------------------------------------
# verify


def _theorem2_demo():
    """Affine c(x, y) = x + 3y on {0,1,2} x {0..3}; d sends composite 0 to (1, 0)."""
    xs, ys = SymbolSpace.integers(3), SymbolSpace.integers(4)
    spec = CompositionSpec.affine(1, 3, xs, ys)
    p_x, p_y = uniform(xs), uniform(ys)
    sc = scenario_from_parts("affine_demo", "custom", 0, "l1", spec, p_x, p_y, {"rule": "affine", "a": 1, "b": 3})
    pairs = invert_composition(spec).pairs.copy()
    pairs[0] = (1, 0)
    d = DecompositionMap.deterministic(spec.z_space, xs, ys, pairs)
    return sc, d


def _perturbed_inverse(spec: CompositionSpec, sites: int) -> DecompositionMap:
    pairs = invert_composition(spec).pairs.copy()
    nx = len(spec.x_space)
    for z in range(min(sites, len(spec.z_space))):
        pairs[z, 0] = (pairs[z, 0] + 1) % nx if nx > 1 else pairs[z, 0]
        if nx == 1:
            pairs[z, 1] = (pairs[z, 1] + 1) % len(spec.y_space)
    return DecompositionMap.deterministic(spec.z_space, spec.x_space, spec.y_space, pairs)


def cmd_verify(args) -> int:
    which = args.which
    code = EXIT_OK
    doc: dict = {"report_type": "verify", "which": which}
    if which == "lemma":
        rep = verify_lemma_bijective_rank(trials=args.trials, seed=_seed(args), jobs=args.jobs or 1)
        doc["result"] = rep.to_json()
        doc["message"] = f"{rep.n_full}/{len(rep.trials)} full rank"
        if not rep.passed:
            doc["counter_witness"] = rep.failures()
            code = EXIT_VERIFY
    elif which == "theorem1":
        if args.scenario:
            cases = [(_load_scenario(args.scenario), args.hidden)]
        else:
            cases = [
                (make_scenario("micro_mb", {"glyph_probs": "random", "bg_probs": [0.3, 0.7]}, _seed(args)), "x"),
                (make_scenario("modadd", {"K": 3, "p_x": [0.5, 0.3, 0.2], "p_y": "random"}, _seed(args)), "y"),
                (make_scenario("modadd", {"K": 3}, _seed(args)), "y"),
            ]
        results = []
        for sc, hidden in cases:
            r = verify_theorem1(sc, hidden, tol=args.tol if args.tol is not None else 1e-9)
            results.append({"scenario": sc.name, "hidden": hidden, **r.to_json()})
            if not r.passed:
                code = EXIT_VERIFY
        doc["results"] = results
        doc["message"] = "; ".join(f"{r['scenario']}: {r['message']}" for r in results)
        if code:
            doc["counter_witness"] = [r for r in results if not r["passed"]]
    else:
        tol = args.tol if args.tol is not None else 1e-12
        if args.scenario:
            sc = _load_scenario(args.scenario)
            if sc.p_x is None or sc.p_y is None:
                raise CliError(EXIT_CONFIG, "scenario: theorem2 needs both component laws")
            d = _perturbed_inverse(sc.spec, args.perturb)
        else:
            sc, d = _theorem2_demo()
        r = verify_theorem2(sc.spec, d, sc.p_x, sc.p_y, sc.p_z, tol)
        doc["scenario"] = sc.name
        doc["result"] = r.to_json()
        doc["message"] = r.message()
        if not r.consistent:
            code = EXIT_VERIFY
            doc["counter_witness"] = {"decomposition": d.to_json(), "terms": r.terms}
        if args.sweep:
            sweep = theorem2_sweep(sc.spec, sc.p_x, sc.p_y, sc.p_z, tol, seed=_seed(args))
            doc["sweep"] = sweep
            doc["message"] += f"; sweep ({sweep['mode']}): {sweep['checked']} maps, {sweep['n_violations']} violations"
            if sweep["n_violations"]:
                code = EXIT_VERIFY
                doc.setdefault("counter_witness", {})["sweep_violations"] = sweep["violations"]
    doc["passed"] = code == EXIT_OK
    out = Outputs(_out_dir(args))
    out.add_json(f"verify_{which}.report.json", doc)
    out.add_json(f"verify_{which}.manifest.json",
                 _manifest(args, "verify", {"which": which, "trials": args.trials, "scenario": args.scenario,
                                            "hidden": args.hidden, "perturb": args.perturb, "sweep": args.sweep}))
    out.flush()
    print(doc["message"])
    return code


# --------------------------------------------------------------------------
# counterexample

COUNTEREXAMPLE_DEFAULTS = {
    "phase_flip": ("micro_mb", {"bg_probs": [0.5, 0.5], "glyph_probs": "random"}),
    "trivial": ("micro_mb", {"bg_probs": [0.5, 0.5], "glyph_probs": "random"}),
    "rank_deficient": ("modadd", {"K": 3}),
}


def _counterexample_scenario(args) -> Scenario:
    if args.scenario:
        return _load_scenario(args.scenario)
    kind, params = COUNTEREXAMPLE_DEFAULTS[args.kind]
    if args.params:
        try:
            override = json.loads(args.params)
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"params: malformed JSON ({exc.msg})") from None
        if not isinstance(override, dict):
            raise CliError(EXIT_CONFIG, "params: must be a JSON object")
        params = {**params, **override}
    try:
        return make_scenario(kind, params, _seed(args), metric_kind=args.metric or "discrete")
    except InvalidParams as exc:
        raise CliError(EXIT_CONFIG, f"params.{exc}") from None


def cmd_counterexample(args) -> int:
    sc = _counterexample_scenario(args)
    alpha = 1.0 if args.alpha is None else args.alpha
    doc: dict = {"report_type": "counterexample", "kind": args.kind, "scenario": sc.name}
    try:
        if args.kind == "phase_flip":
            sol_a, sol_b, rep = phase_flip_counterexample(sc, alpha=alpha)
            doc.update(report=rep.to_json(), solutions={"a": sol_a.to_json(), "b": sol_b.to_json()})
            lines = [f"solution a: total_loss = {rep.loss_a['total']:.3e}",
                     f"solution b: total_loss = {rep.loss_b['total']:.3e}",
                     f"disagreement on supported composites: {rep.disagreement}"]
        elif args.kind == "trivial":
            sol, rep = trivial_solution_counterexample(sc, alpha=alpha)
            doc.update(report=rep.to_json(), solutions={"trivial": sol.to_json()})
            lines = [f"l_c = {rep.l_c:.3g}, TV to true foreground = {rep.tv_foreground:.4g}, "
                     f"TV to true background = {rep.tv_background:.4g}"]
        else:
            rep = rank_deficient_alternatives(sc, args.hidden)
            if rep.full_column_rank:
                raise PreconditionFailed(f"resolving matrix has full column rank {rep.rank}; nothing to exhibit")
            doc["report"] = rep.to_json()
            doc["report"]["explanation"] = (
                "The resolving matrix has a nontrivial null space, so every listed law reproduces the "
                "composed law exactly and the hidden component cannot be identified from it.")
            lines = [f"rank: {rep.rank} < {rep.n_columns}", f"{len(rep.alternatives)} alternative p_{args.hidden}:"]
            lines += ["  " + ", ".join(f"{v:.4f}" for v in a.probs) for a in rep.alternatives]
    except (PreconditionFailed, SymmetryAbsent) as exc:
        raise CliError(EXIT_PRECONDITION, f"{args.kind}: precondition failed: {exc}") from None
    out = Outputs(_out_dir(args))
    out.add_json(f"counterexample_{args.kind}.report.json", doc)
    out.add_json(f"counterexample_{args.kind}.manifest.json",
                 _manifest(args, "counterexample", {"kind": args.kind, "scenario": args.scenario,
                                                    "params": args.params, "alpha": alpha}))
    out.flush()
    for line in lines:
        print(line)
    return EXIT_OK


# --------------------------------------------------------------------------
# chain


def cmd_chain(args) -> int:
    if args.preset:
        if args.preset not in CHAIN_PRESETS:
            raise CliError(EXIT_CONFIG, f"preset: unknown chain preset {args.preset!r}")
        cfg, name = CHAIN_PRESETS[args.preset], args.preset
    elif args.config:
        cfg, name = _load_json(args.config, "chain config"), Path(args.config).stem
    else:
        raise CliError(EXIT_CONFIG, "chain: give a config file or --preset")
    solver = args.solver or cfg.get("solver", "closed_form")
    seed = int(cfg.get("seed", _seed(args)))
    stages = build_chain(cfg, seed=seed, metric_kind=args.metric or "discrete")
    tcfg = TaskConfig(3, solver=solver, seed=seed, learn_decomposition=False,
                      **({"tol": args.tol} if args.tol is not None else {}))
    code = EXIT_OK
    try:
        report = chain_learn(stages, tcfg).to_json()
    except NonConvergence as exc:
        report = {"stages": [], "summary": [], "error": str(exc), "failed_report": exc.report}
        code = EXIT_NONCONVERGENCE
    stem = f"chain_{name}"
    out = Outputs(_out_dir(args))
    out.add_json(f"{stem}.report.json", {"report_type": "chain", "name": name, "solver": solver, **report})
    for k, st in enumerate(report["stages"]):
        out.add_json(f"{stem}.stage{k}.json", {"report_type": "chain_stage", **st})
    out.add(f"{stem}.summary.csv", _csv(["stage", "learn", "tv_to_truth", "iterations"],
                                        [[r["stage"], r["learn"] or "", "" if r["tv_to_truth"] is None
                                          else r["tv_to_truth"], r["iterations"]] for r in report["summary"]]))
    out.add_json(f"{stem}.manifest.json", _manifest(args, "chain", {"stages": cfg["stages"], "solver": solver,
                                                                     "seed": seed}))
    out.flush()
    print(f"{'stage':<14} {'learn':<6} {'tv_to_truth':>12} {'iterations':>10}")
    for r in report["summary"]:
        tv = "-" if r["tv_to_truth"] is None else f"{r['tv_to_truth']:.3e}"
        print(f"{r['stage']:<14} {r['learn'] or '-':<6} {tv:>12} {r['iterations']:>10}")
    if code:
        print(f"error: {report['error']}", file=sys.stderr)
    return code


# --------------------------------------------------------------------------
# report


def render_report(doc: dict) -> dict[str, str]:
    """SVG bundle for a report; the trace plot is left out when there is no trace."""
    kind = doc.get("report_type")
    files = {}
    if kind == "task":
        series = {k: t["values"] for k, t in sorted(doc.get("traces", {}).items()) if t["values"]}
        if series:
            files["trace.svg"] = svg.line_plot(f"task {doc['task_id']} loss trace", series)
        if doc["task_id"] == 3:
            groups = {"recovered": doc["recovered"]}
            if doc.get("truth") is not None:
                groups = {"true": doc["truth"], **groups}
            files["bars.svg"] = svg.bar_chart(f"hidden p_{doc['hidden']}: true vs recovered", groups,
                                              [str(i) for i in range(len(doc["recovered"]))])
            files["resolving_matrix.svg"] = svg.heatmap("resolving matrix", doc["resolving_matrix"])
        elif (doc.get("solution") or {}).get("decomposition"):
            files["decomposition.svg"] = svg.heatmap("decomposition map", doc["solution"]["decomposition"]["kernel"])
    elif kind == "chain":
        series = {s["name"]: s["trace"] for s in doc.get("stages", []) if s.get("trace")}
        if series:
            files["trace.svg"] = svg.line_plot("chain recovery traces", series)
        learned = [s for s in doc.get("stages", []) if s.get("learn")]
        if learned:
            last = learned[-1]
            groups = {"recovered": last["recovered"]}
            if last.get("truth") is not None:
                groups = {"true": last["truth"], **groups}
            files["bars.svg"] = svg.bar_chart(f"stage {last['name']}: true vs recovered", groups)
    return files


def _numeric_rows(obj, prefix="") -> list[list]:
    rows = []
    if isinstance(obj, dict):
        for k in sorted(obj):
            rows += _numeric_rows(obj[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            rows += _numeric_rows(v, f"{prefix}[{i}]")
    elif isinstance(obj, bool):
        rows.append([prefix, int(obj)])
    elif isinstance(obj, (int, float)):
        rows.append([prefix, float(obj)])
    return rows


def cmd_report(args) -> int:
    out = Outputs(_out_dir(args))
    for path in args.reports:
        doc = _load_json(path, "report")
        _check_schema(doc, "report")
        if doc.get("report_type") not in REPORT_TYPES and doc.get("report_type") != "chain_stage":
            raise CliError(EXIT_CONFIG, f"report.report_type: unknown type {doc.get('report_type')!r}")
        if doc["report_type"] == "task" and not {"task_id", "traces"} <= set(doc):
            raise CliError(EXIT_CONFIG, "report: task report lacks task_id/traces")
        stem = Path(path).name.removesuffix(".json").removesuffix(".report")
        for name, text in render_report(doc).items():
            out.add(f"{stem}.{name}", text)
        out.add(f"{stem}.tables.csv", _csv(["path", "value"], _numeric_rows(doc)))
    written = out.flush()
    for p in written:
        print(p)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _global_flags(p: argparse.ArgumentParser, sub: bool):
    d = argparse.SUPPRESS if sub else None
    p.add_argument("--seed", type=int, default=d, help="master seed (default 0)")
    p.add_argument("--out-dir", default=d, help="output directory (default $DECOMP_LAB_OUT or ./decomp_lab_out)")
    p.add_argument("--jobs", type=int, default=d, help="worker processes for independent trials")
    p.add_argument("--metric", choices=("discrete", "l1"), default=d, help="ground metric override")
    p.add_argument("--alpha", type=float, default=d, help="cycle-loss weight")
    p.add_argument("--tol", type=float, default=d, help="tolerance override")
    p.add_argument("--timestamps", action="store_true", default=argparse.SUPPRESS if sub else False,
                   help="record wall-clock time in manifests (breaks byte-identical reruns)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decomp-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, sub=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a scenario file from a JSON config")
    p.add_argument("config")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="run one task on a scenario")
    p.add_argument("scenario")
    p.add_argument("--config", help="task config JSON")
    p.add_argument("--task", type=int)
    p.add_argument("--solver", choices=("closed_form", "mirror_descent"))
    p.add_argument("--hidden", choices=("x", "y"))
    p.add_argument("--step-size", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--as-view", action="store_true",
                   help="treat the scenario file as the task view (no fragments are removed)")
    p.add_argument("--svg", action="store_true", help="also render SVG plots")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="run a theorem or lemma verifier")
    p.add_argument("which", choices=("theorem1", "theorem2", "lemma"))
    p.add_argument("--scenario")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--hidden", choices=("x", "y"), default="y")
    p.add_argument("--perturb", type=int, default=1, help="theorem2: composites whose decomposition is altered")
    p.add_argument("--sweep", action="store_true", help="theorem2: also sweep all deterministic maps")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("counterexample", help="construct a certified counterexample")
    p.add_argument("kind", choices=("phase_flip", "trivial", "rank_deficient"))
    p.add_argument("--scenario")
    p.add_argument("--params", help="JSON object overriding the default scenario params")
    p.add_argument("--hidden", choices=("x", "y"), default="y")
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("chain", help="learn components stage by stage")
    p.add_argument("config", nargs="?")
    p.add_argument("--preset", choices=sorted(CHAIN_PRESETS))
    p.add_argument("--solver", choices=("closed_form", "mirror_descent"))
    p.set_defaults(func=cmd_chain)

    p = sub.add_parser("report", help="render SVG/CSV bundles from report files")
    p.add_argument("reports", nargs="+")
    p.set_defaults(func=cmd_report)

    for sp in sub.choices.values():
        _global_flags(sp, sub=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FragmentVisibilityViolation as exc:
        print(f"error: visibility violation: {exc}", file=sys.stderr)
        return EXIT_VISIBILITY
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except RankDeficient as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DecompLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
