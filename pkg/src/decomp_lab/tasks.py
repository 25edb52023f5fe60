"""Solvers for the four learning tasks and the chain-learning driver.

Every unknown is a point on a probability simplex (component laws) or a
product of simplices (stochastic composition/decomposition kernels), and all
of them are fitted by entropic mirror descent on the exact combined loss
``l_c + l_d + alpha * (c_cyc + d_cyc)``.  Subgradients of the transport terms
come from optimal dual potentials.

A solver only ever sees a *task view*: the scenario with every fragment the
task must learn removed.  Ground truth, when supplied, is used afterwards for
reporting only.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .compose import (
    CompositionSpec,
    DecompositionMap,
    Scenario,
    Solution,
    StochasticComposition,
    check_bijective,
    composed_law,
    invert_composition,
    make_scenario,
    pair_cost,
)
from .errors import (
    DecompLabError,
    FragmentVisibilityViolation,
    InvalidParams,
    MissingFragment,
    NonConvergence,
    NonFinite,
    PreconditionFailed,
    StageSchemaMismatch,
)
from .finitedist import (
    FiniteDistribution,
    SymbolSpace,
    ground_metric,
    product_space,
    tv_distance,
    tv_distance_aligned,
)
from .identify import (
    phase_flip_counterexample,
    recovery_report,
    resolving_matrix,
    trivial_solution_counterexample,
)
from .transport import loss_terms, w1_dual

__all__ = [
    "ChainReport",
    "ChainStage",
    "Solution",
    "TaskConfig",
    "Trace",
    "build_chain",
    "chain_learn",
    "optimize_simplex",
    "run_task",
    "solve_task",
    "task_view",
    "total_loss",
]

WINDOW = 50
MAX_HALVINGS = 5
NON_IDENTIFIABILITY_CAVEAT = (
    "Knowing the composition alone does not identify the components: a foreground generator that replays "
    "whole composites over any fixed background reaches zero composition loss. The learned components "
    "below are one point of a non-unique optimal set; no identifiability is claimed.")
SYMMETRY_CAVEAT = (
    "Composition and decomposition are learned jointly and the objective is nonconvex. Any involution of a "
    "component that leaves its law invariant can be absorbed by both maps at zero loss (phase flip), so "
    "the learned maps are determined only up to such symmetries.")


@dataclass(frozen=True)
class TaskConfig:
    task_id: int
    alpha: float = 1.0
    metric_kind: str | None = None
    solver: str = "closed_form"
    step_size: float = 0.1
    max_iter: int = 2000
    tol: float = 1e-6
    seed: int = 0
    hidden: str = "y"
    learn_decomposition: bool = True

    def __post_init__(self):
        if self.task_id not in (1, 2, 3, 4):
            raise InvalidParams(f"task_id: must be 1..4, got {self.task_id!r}")
        if not self.alpha >= 0:
            raise InvalidParams("alpha: must be >= 0")
        if not self.step_size > 0:
            raise InvalidParams("step_size: must be > 0")
        if self.solver not in ("closed_form", "mirror_descent"):
            raise InvalidParams(f"solver: unknown solver {self.solver!r}")
        if self.hidden not in ("x", "y"):
            raise InvalidParams("hidden: must be 'x' or 'y'")
        if self.metric_kind not in (None, "discrete", "l1"):
            raise InvalidParams(f"metric_kind: unknown metric {self.metric_kind!r}")
        if int(self.max_iter) < 1:
            raise InvalidParams("max_iter: must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TaskConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known - {"schema"}
        if extra:
            raise InvalidParams(f"{sorted(extra)[0]}: unknown task config field")
        if "task_id" not in obj:
            raise InvalidParams("task_id: missing")
        return cls(**{k: v for k, v in obj.items() if k in known})


def total_loss(scenario: Scenario, sol: Solution, cfg: TaskConfig) -> float:
    return loss_terms(scenario, sol, cfg.alpha, cfg.metric_kind)["total"]


# --------------------------------------------------------------------------
# mirror descent


@dataclass
class Trace:
    values: list[float] = field(default_factory=list)
    best: list[float] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)
    converged: bool = False
    reason: str = ""

    def __len__(self) -> int:
        return len(self.values)

    def to_json(self) -> dict:
        return {"values": self.values, "best": self.best, "steps": self.steps,
                "converged": self.converged, "reason": self.reason}


def _normalize_log(logp: np.ndarray) -> np.ndarray:
    if logp.ndim == 1:
        return logp - logsumexp(logp)
    return logp - logsumexp(logp, axis=1, keepdims=True)


class _Progress:
    """Best-iterate bookkeeping with windowed step halving."""

    def __init__(self, step: float, tol: float, max_iter: int, lower_bound: float | None = 0.0):
        self.eta = step
        self.lower_bound = lower_bound
        self.tol = tol
        self.max_iter = max_iter
        self.trace = Trace()
        self.best = np.inf
        self.window_ref = np.inf
        self.halvings = 0

    def record(self, it: int, value: float) -> bool:
        """Log one value; returns True when this is a new best iterate."""
        if not np.isfinite(value):
            raise NonFinite(f"objective returned {value!r} at iteration {it}")
        improved = value < self.best
        if improved:
            self.best = value
        self.trace.values.append(float(value))
        self.trace.best.append(float(self.best))
        self.trace.steps.append(float(self.eta))
        return improved

    def checkpoint(self, it: int) -> str | None:
        """Returns 'stop', 'reset' (after a halving) or None."""
        if self.lower_bound is not None and self.best <= self.lower_bound:
            self.trace.converged, self.trace.reason = True, "objective at its lower bound"
            return "stop"
        if (it + 1) % WINDOW:
            return None
        gain = self.window_ref - self.best
        self.window_ref = self.best
        if gain >= self.tol:
            self.halvings = 0
            return None
        self.halvings += 1
        self.eta *= 0.5
        if self.halvings > MAX_HALVINGS:
            self.trace.converged = True
            self.trace.reason = f"improvement below {self.tol:g} over {WINDOW} iterations at every step size"
            return "stop"
        return "reset"

    def finish(self):
        if not self.trace.converged:
            self.trace.reason = "max_iter reached"


def optimize_simplex(objective, init, cfg: TaskConfig | None = None, *, step_size: float | None = None,
                     max_iter: int | None = None, tol: float | None = None,
                     row_scale: np.ndarray | None = None,
                     lower_bound: float | None = None) -> tuple[np.ndarray, Trace]:
    """Exponentiated-gradient descent over a simplex or a stack of simplices.

    ``objective(p)`` returns ``(value, subgradient)``.  A 2-d ``init`` is
    treated as one simplex per row, and ``row_scale`` multiplies each row's
    step.  Whenever a window of 50 iterations improves the best value by less
    than ``tol`` the step is halved and the iterate reset to the best one; the
    run converges once that has happened more than ten times, or as soon as
    the objective reaches ``lower_bound`` when one is known.  Returns the best
    iterate and its trace.
    """
    step = step_size if step_size is not None else (cfg.step_size if cfg else 0.1)
    iters = max_iter if max_iter is not None else (cfg.max_iter if cfg else 2000)
    tol = tol if tol is not None else (cfg.tol if cfg else 1e-6)
    p = np.array(init, dtype=np.float64)
    if np.any(p <= 0):
        raise ValueError("mirror descent needs a strictly positive starting point")
    logp = _normalize_log(np.log(p))
    scale = 1.0 if row_scale is None else np.asarray(row_scale, dtype=np.float64)[:, None]
    prog = _Progress(step, tol, iters, lower_bound)
    best_logp = logp.copy()
    for it in range(iters):
        p = np.exp(logp)
        value, grad = objective(p)
        grad = np.asarray(grad, dtype=np.float64)
        if not np.all(np.isfinite(grad)):
            raise NonFinite(f"subgradient is not finite at iteration {it}")
        if prog.record(it, value):
            best_logp = logp.copy()
        action = prog.checkpoint(it)
        if action == "stop":
            break
        if action == "reset":
            logp = best_logp.copy()
            continue
        logp = _normalize_log(logp - prog.eta * scale * grad)
    prog.finish()
    return np.exp(best_logp), prog.trace


# --------------------------------------------------------------------------
# task views


def _require(view: Scenario, names):
    missing = [n for n in names if getattr(view, n) is None]
    if missing:
        raise MissingFragment(f"task needs {', '.join(missing)} but the scenario lacks it")


def _forbid(view: Scenario, names, task_id):
    present = [n for n in names if getattr(view, n) is not None]
    if present:
        raise FragmentVisibilityViolation(f"task {task_id} must learn {', '.join(present)} but it was given")


def task_view(scenario: Scenario, cfg: TaskConfig) -> Scenario:
    """The scenario with every fragment the task must learn removed."""
    if cfg.task_id == 1:
        return scenario
    if cfg.task_id == 2:
        return scenario.replace(spec=None)
    if cfg.task_id == 3:
        return scenario.replace(**{"p_" + cfg.hidden: None})
    return scenario.replace(p_x=None, p_y=None)


def _check_visibility(view: Scenario, cfg: TaskConfig) -> str | None:
    t = cfg.task_id
    if t == 1:
        _require(view, ("spec", "p_x", "p_y"))
    elif t == 2:
        _require(view, ("p_x", "p_y"))
        _forbid(view, ("spec",), t)
    elif t == 3:
        _require(view, ("spec",))
        if view.p_x is not None and view.p_y is not None:
            raise FragmentVisibilityViolation("task 3 must learn one component law but both were given")
        if view.p_x is None and view.p_y is None:
            raise MissingFragment("task 3 needs one known component law")
        return "x" if view.p_x is None else "y"
    else:
        _require(view, ("spec",))
        _forbid(view, ("p_x", "p_y"), t)
    return None


# --------------------------------------------------------------------------
# helpers shared by the task solvers


def _metric(view: Scenario, cfg: TaskConfig) -> str:
    return cfg.metric_kind or view.metric_kind


def _inverse_scale(weights: np.ndarray) -> np.ndarray:
    out = np.zeros_like(weights)
    pos = weights > 0
    out[pos] = 1.0 / weights[pos]
    return out


def _kernel_tv(learned: np.ndarray, truth: np.ndarray, weights: np.ndarray) -> float:
    """Weighted mean total variation between matching kernel rows."""
    return float(np.sum(weights * 0.5 * np.abs(learned - truth).sum(axis=1)))


def _rng_kernel(rng: np.random.Generator, shape) -> np.ndarray:
    logits = 0.1 * rng.standard_normal(shape)
    k = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
    return k


def _learn_decomposition(view: Scenario, spec, p_x: FiniteDistribution, p_y: FiniteDistribution,
                         cfg: TaskConfig) -> tuple[DecompositionMap, Trace]:
    """Mirror descent on the stochastic decomposition rows, everything else fixed."""
    metric = _metric(view, cfg)
    K = spec.kernel
    p_z = view.p_z.probs
    pxy = np.outer(p_x.probs, p_y.probs).ravel()
    joint = product_space(p_x.space, p_y.space)
    cost_joint = ground_metric(joint, metric)
    cost_z = ground_metric(view.z_space, metric).costs
    pc = pair_cost(ground_metric(p_x.space, metric), ground_metric(p_y.space, metric))
    # c_cyc and d_cyc are linear in D with these coefficients
    lin = (pc @ (pxy[:, None] * K)).T + p_z[:, None] * (K @ cost_z).T
    lin = cfg.alpha * lin
    l_c, _, _ = w1_dual(p_z, pxy @ K, ground_metric(view.z_space, metric))

    def objective(D):
        val, _, v = w1_dual(pxy, p_z @ D, cost_joint)
        return l_c + val + float(np.sum(lin * D)), p_z[:, None] * v[None, :] + lin

    weights = np.maximum(p_z, pxy @ K)
    init = np.full((len(view.z_space), len(joint)), 1.0 / len(joint))
    D, trace = optimize_simplex(objective, init, cfg, row_scale=_inverse_scale(weights), lower_bound=0.0)
    return DecompositionMap.stochastic(view.z_space, p_x.space, p_y.space, D), trace


def _truth_decomposition(truth: Scenario | None):
    if truth is None or truth.spec is None or not check_bijective(truth.spec):
        return None
    return invert_composition(truth.spec)


def _decomposition_comparison(d: DecompositionMap, truth: Scenario | None) -> dict:
    inverse = _truth_decomposition(truth)
    if inverse is None or inverse.kernel.shape != d.kernel.shape:
        return {}
    support = truth.p_z.support
    rounded = d.argmax_pairs()
    agree = [bool(np.array_equal(rounded[z], inverse.pairs[z])) for z in support]
    return {
        "decomposition": _kernel_tv(d.kernel, inverse.kernel, truth.p_z.probs),
        "decomposition_agreement_on_support": sum(agree) / len(agree),
        "decomposition_equals_inverse_on_support": all(agree),
    }


def _phase_flip_agreement(d: DecompositionMap, truth: Scenario) -> dict:
    """How often the learned map matches the phase-flipped inverse instead of the true one."""
    try:
        _, flipped, _ = phase_flip_counterexample(truth)
    except DecompLabError:
        return {}
    support = truth.p_z.support
    rounded = d.argmax_pairs()
    hits = [bool(np.array_equal(rounded[z], flipped.decomposition.pairs[z])) for z in support]
    return {"phase_flipped_agreement_on_support": sum(hits) / len(hits)}


def _loss_report(scenario: Scenario, sol: Solution, cfg: TaskConfig) -> dict:
    return loss_terms(scenario, sol, cfg.alpha, cfg.metric_kind)


# --------------------------------------------------------------------------
# the four tasks


def _task1(view, cfg, truth):
    d, trace = _learn_decomposition(view, view.spec, view.p_x, view.p_y, cfg)
    sol = Solution(decomposition=d, provenance={"p_x": "given", "p_y": "given", "composition": "given",
                                                "decomposition": "optimized"})
    report = {"loss_terms": _loss_report(view, sol, cfg), "tv_to_truth": _decomposition_comparison(d, truth),
              "traces": {"decomposition": trace}, "caveats": []}
    return sol, report, [trace]


def _task2(view, cfg, truth):
    metric = _metric(view, cfg)
    rng = np.random.default_rng(cfg.seed)
    p_x, p_y, p_z = view.p_x, view.p_y, view.p_z.probs
    pxy = np.outer(p_x.probs, p_y.probs).ravel()
    joint = product_space(p_x.space, p_y.space)
    cost_joint = ground_metric(joint, metric)
    cost_zm = ground_metric(view.z_space, metric)
    cz = cost_zm.costs
    pc = pair_cost(ground_metric(p_x.space, metric), ground_metric(p_y.space, metric))
    nxy, nz = len(joint), len(view.z_space)

    def value_and_grads(K, D):
        l_c, _, v_c = w1_dual(p_z, pxy @ K, cost_zm)
        l_d, _, v_d = w1_dual(pxy, p_z @ D, cost_joint)
        M = K @ D
        N = D @ K
        c_cyc = float(np.sum(pxy[:, None] * M * pc.T))
        d_cyc = float(np.sum(p_z[:, None] * N * cz.T))
        gK = pxy[:, None] * v_c[None, :] + cfg.alpha * (
            pxy[:, None] * (D @ pc).T + D.T @ (p_z[:, None] * cz.T))
        gD = p_z[:, None] * v_d[None, :] + cfg.alpha * (
            (pxy[:, None] * K).T @ pc.T + p_z[:, None] * (K @ cz).T)
        return l_c + l_d + cfg.alpha * (c_cyc + d_cyc), gK, gD

    logK = np.log(_rng_kernel(rng, (nxy, nz)))
    logD = np.log(_rng_kernel(rng, (nz, nxy)))
    sK = _inverse_scale(pxy)[:, None]
    sD = _inverse_scale(p_z)[:, None]
    prog = _Progress(cfg.step_size, cfg.tol, cfg.max_iter)
    best = (logK.copy(), logD.copy())
    for it in range(cfg.max_iter):
        K, D = np.exp(logK), np.exp(logD)
        val, gK, _ = value_and_grads(K, D)
        if prog.record(it, val):
            best = (logK.copy(), logD.copy())
        action = prog.checkpoint(it)
        if action == "stop":
            break
        if action == "reset":
            logK, logD = best[0].copy(), best[1].copy()
            continue
        logK = _normalize_log(logK - prog.eta * sK * gK)
        _, _, gD = value_and_grads(np.exp(logK), D)
        logD = _normalize_log(logD - prog.eta * sD * gD)
    prog.finish()
    comp = StochasticComposition(p_x.space, p_y.space, view.z_space, np.exp(best[0]))
    d = DecompositionMap.stochastic(view.z_space, p_x.space, p_y.space, np.exp(best[1]))
    sol = Solution(composition=comp, decomposition=d,
                   provenance={"p_x": "given", "p_y": "given", "composition": "optimized",
                               "decomposition": "optimized"})
    tv = _decomposition_comparison(d, truth)
    if truth is not None and truth.spec is not None:
        tv["composition"] = _kernel_tv(comp.kernel, truth.spec.kernel, pxy)
        tv.update(_phase_flip_agreement(d, truth))
    report = {"loss_terms": _loss_report(view, sol, cfg), "tv_to_truth": tv,
              "traces": {"joint": prog.trace}, "caveats": [SYMMETRY_CAVEAT]}
    return sol, report, [prog.trace]


def _task3(view, cfg, truth, hidden):
    spec = view.spec if hidden == "y" else view.spec.transposed()
    known = view.p_x if hidden == "y" else view.p_y
    R = resolving_matrix(known, spec)
    closed = recovery_report(view.p_z, R)
    traces = {}
    if cfg.solver == "closed_form":
        law = closed.recovered_p_y
    else:
        metric = _metric(view, cfg)
        cost_z = ground_metric(view.z_space, metric)
        A = R.entries
        p_z = view.p_z.probs

        def objective(p):
            val, _, v = w1_dual(p_z, A @ p, cost_z)
            return val, A.T @ v

        n = A.shape[1]
        point, trace = optimize_simplex(objective, np.full(n, 1.0 / n), cfg, lower_bound=0.0)
        law = FiniteDistribution(spec.y_space, point / point.sum())
        traces["recovery"] = trace
    p_x, p_y = (view.p_x, law) if hidden == "y" else (law, view.p_y)
    d = None
    if cfg.learn_decomposition:
        d, dtrace = _learn_decomposition(view, view.spec, p_x, p_y, cfg)
        traces["decomposition"] = dtrace
    sol = Solution(p_x=p_x if hidden == "x" else None, p_y=p_y if hidden == "y" else None, decomposition=d,
                   provenance={"p_" + hidden: "optimized" if cfg.solver == "mirror_descent" else "closed_form",
                               "p_" + ("y" if hidden == "x" else "x"): "given", "composition": "given",
                               "decomposition": "optimized" if d is not None else "absent"})
    report = {
        "hidden": hidden,
        "identifiability": closed.to_json(),
        "resolving_matrix": R.entries.tolist(),
        "recovered": law.probs.tolist(),
        "caveats": [] if closed.full_column_rank else [
            f"resolving matrix rank {closed.rank} < {closed.n_columns}: the hidden law is not identifiable; "
            "alternatives reproducing the composed law are listed under identifiability"],
        "traces": traces,
    }
    tv = {}
    if truth is not None and getattr(truth, "p_" + hidden) is not None:
        true_law = getattr(truth, "p_" + hidden)
        tv["p_" + hidden] = tv_distance(law, true_law)
        report["truth"] = true_law.probs.tolist()
        if closed.full_column_rank:
            tv["closed_form_vs_truth"] = tv_distance(closed.recovered_p_y, true_law)
    if cfg.solver == "mirror_descent":
        tv["vs_closed_form"] = tv_distance(law, closed.recovered_p_y)
    if d is not None:
        tv.update(_decomposition_comparison(d, truth))
        report["loss_terms"] = _loss_report(view, sol, cfg)
    report["tv_to_truth"] = tv
    return sol, report, list(traces.values())


def _task4_foreground_space(spec: CompositionSpec) -> SymbolSpace:
    """Candidate foreground range: the declared one plus every composite (overlay only)."""
    if not spec.rule.endswith("overlay"):
        return spec.y_space
    extra = [z for z in spec.z_space.symbols if z not in spec.y_space]
    return SymbolSpace(spec.y_space.symbols + tuple(extra), max(spec.y_space.value_cap, spec.z_space.value_cap))


def _task4(view, cfg, truth):
    metric = _metric(view, cfg)
    spec = view.spec
    fg = _task4_foreground_space(spec)
    cand = spec if fg == spec.y_space else CompositionSpec.overlay(spec.x_space, fg, spec.z_space)
    K = cand.kernel
    nx, ny, nz = len(spec.x_space), len(fg), len(spec.z_space)
    joint = product_space(spec.x_space, fg)
    cost_joint = ground_metric(joint, metric)
    cost_zm = ground_metric(spec.z_space, metric)
    cz = cost_zm.costs
    pc = pair_cost(ground_metric(spec.x_space, metric), ground_metric(fg, metric))
    p_z = view.p_z.probs
    rng = np.random.default_rng(cfg.seed)

    def evaluate(px, py, D):
        pxy = np.outer(px, py).ravel()
        l_c, _, v_c = w1_dual(p_z, pxy @ K, cost_zm)
        l_d, u_d, v_d = w1_dual(pxy, p_z @ D, cost_joint)
        M = K @ D
        c_cyc = float(np.sum(pxy[:, None] * M * pc.T))
        d_cyc = float(np.sum(p_z[:, None] * (D @ K) * cz.T))
        g_joint = (K @ v_c + u_d + cfg.alpha * np.sum(M * pc.T, axis=1)).reshape(nx, ny)
        gD = p_z[:, None] * v_d[None, :] + cfg.alpha * (
            (pxy[:, None] * K).T @ pc.T + p_z[:, None] * (K @ cz).T)
        val = l_c + l_d + cfg.alpha * (c_cyc + d_cyc)
        return val, g_joint @ py, px @ g_joint, gD

    lx = _normalize_log(np.log(_rng_kernel(rng, (nx,))))
    ly = _normalize_log(np.log(_rng_kernel(rng, (ny,))))
    lD = np.log(_rng_kernel(rng, (nz, nx * ny)))
    sD = _inverse_scale(p_z)[:, None]
    prog = _Progress(cfg.step_size, cfg.tol, cfg.max_iter)
    best = (lx.copy(), ly.copy(), lD.copy())
    for it in range(cfg.max_iter):
        px, py, D = np.exp(lx), np.exp(ly), np.exp(lD)
        val, gx, _, _ = evaluate(px, py, D)
        if prog.record(it, val):
            best = (lx.copy(), ly.copy(), lD.copy())
        action = prog.checkpoint(it)
        if action == "stop":
            break
        if action == "reset":
            lx, ly, lD = (b.copy() for b in best)
            continue
        lx = _normalize_log(lx - prog.eta * gx)
        _, _, gy, _ = evaluate(np.exp(lx), py, D)
        ly = _normalize_log(ly - prog.eta * gy)
        _, _, _, gD = evaluate(np.exp(lx), np.exp(ly), D)
        lD = _normalize_log(lD - prog.eta * sD * gD)
    prog.finish()
    p_x = FiniteDistribution(spec.x_space, np.exp(best[0]) / np.exp(best[0]).sum())
    p_y = FiniteDistribution(fg, np.exp(best[1]) / np.exp(best[1]).sum())
    d = DecompositionMap.stochastic(spec.z_space, spec.x_space, fg, np.exp(best[2]))
    sol = Solution(p_x=p_x, p_y=p_y, composition=cand, decomposition=d,
                   provenance={"p_x": "optimized", "p_y": "optimized", "composition": "given",
                               "decomposition": "optimized"})
    terms = loss_terms(view, sol, cfg.alpha, cfg.metric_kind)
    tv = {}
    if truth is not None and truth.p_x is not None and truth.p_y is not None:
        tv = {"p_x": tv_distance_aligned(p_x, truth.p_x), "p_y": tv_distance_aligned(p_y, truth.p_y)}
    try:
        trivial_sol, trivial = trivial_solution_counterexample(truth if truth is not None else view)
        trivial_block = trivial.to_json()
    except PreconditionFailed as exc:
        trivial_block = {"available": False, "reason": str(exc)}
    report = {"loss_terms": terms, "tv_to_truth": tv, "traces": {"joint": prog.trace},
              "trivial_solution": trivial_block, "identifiable": False,
              "caveats": [NON_IDENTIFIABILITY_CAVEAT]}
    return sol, report, [prog.trace]


def solve_task(view: Scenario, cfg: TaskConfig, truth: Scenario | None = None) -> tuple[Solution, dict]:
    """Solve one task on a task view; ``truth`` is consulted only for the report.

    Raises NonConvergence (carrying the solution and report) when an
    optimizer exhausts ``max_iter``.
    """
    hidden = _check_visibility(view, cfg)
    if cfg.task_id == 1:
        sol, report, traces = _task1(view, cfg, truth)
    elif cfg.task_id == 2:
        sol, report, traces = _task2(view, cfg, truth)
    elif cfg.task_id == 3:
        sol, report, traces = _task3(view, cfg, truth, hidden)
    else:
        sol, report, traces = _task4(view, cfg, truth)
    report = {
        "task_id": cfg.task_id,
        "config": cfg.to_json(),
        "scenario": view.name,
        "converged": all(t.converged for t in traces),
        "iterations": sum(len(t) for t in traces),
        **report,
    }
    report["traces"] = {k: v.to_json() for k, v in report["traces"].items()}
    if not report["converged"]:
        raise NonConvergence(f"task {cfg.task_id} optimizer hit max_iter={cfg.max_iter}",
                             trace=report["traces"], solution=sol, report=report)
    return sol, report


def run_task(scenario: Scenario, cfg: TaskConfig) -> tuple[Solution, dict]:
    """Hide what the task must learn, solve, and report against the full scenario."""
    return solve_task(task_view(scenario, cfg), cfg, truth=scenario)


# --------------------------------------------------------------------------
# chain learning


@dataclass(frozen=True, eq=False)
class ChainStage:
    """One link of a chain.

    The first stage only supplies a known law (``known`` and ``component``);
    every later stage brings composed data (``scenario``, the ground truth of
    which is used for reporting only) and names the component it learns.
    """

    name: str
    scenario: Scenario | None = None
    learn: str | None = None
    given_from: str | None = None
    known: FiniteDistribution | None = None


@dataclass
class ChainReport:
    stages: list[dict]

    @property
    def max_tv(self) -> float:
        return max(s["tv_to_truth"] for s in self.stages if s["tv_to_truth"] is not None)

    def summary_rows(self) -> list[dict]:
        return [{"stage": s["name"], "learn": s["learn"], "tv_to_truth": s["tv_to_truth"],
                 "iterations": s["iterations"]} for s in self.stages]

    def to_json(self) -> dict:
        return {"stages": self.stages, "summary": self.summary_rows()}


def chain_learn(stages: list[ChainStage], cfg: TaskConfig) -> ChainReport:
    """Learn component laws stage by stage, each from the previous outputs."""
    if len(stages) < 2:
        raise StageSchemaMismatch("a chain needs a known stage and at least one learning stage")
    first = stages[0]
    if first.known is None:
        raise StageSchemaMismatch(f"stage {first.name!r} must provide a known law")
    outputs = {first.name: first.known}
    order = [first.name]
    results = [{"name": first.name, "learn": None, "given_from": None, "tv_to_truth": None,
                "iterations": 0, "recovered": first.known.probs.tolist(), "trace": []}]
    for k, stage in enumerate(stages[1:], start=1):
        if stage.scenario is None or stage.learn not in ("x", "y"):
            raise StageSchemaMismatch(f"stage {stage.name!r} needs composed data and learn='x' or 'y'")
        if stage.name in outputs:
            raise StageSchemaMismatch(f"duplicate stage name {stage.name!r}")
        source = stage.given_from or order[-1]
        if source not in outputs:
            raise StageSchemaMismatch(f"stage {stage.name!r} references unknown prior output {source!r}")
        given_side = "y" if stage.learn == "x" else "x"
        given_law = outputs[source]
        truth = stage.scenario
        if given_law.space != getattr(truth, given_side + "_space"):
            raise StageSchemaMismatch(
                f"stage {stage.name!r}: output of {source!r} does not live on this stage's {given_side} space")
        view = truth.replace(**{"p_" + given_side: given_law, "p_" + stage.learn: None})
        stage_cfg = TaskConfig(**{**cfg.to_json(), "task_id": 3, "hidden": stage.learn})
        sol, report = solve_task(view, stage_cfg, truth=None)
        learned = getattr(sol, "p_" + stage.learn)
        true_law = getattr(truth, "p_" + stage.learn)
        trace = report["traces"].get("recovery", {"values": []})["values"]
        results.append({
            "name": stage.name,
            "learn": stage.learn,
            "given_from": source,
            "consumed": {"given_law": source, "composed_data": truth.name},
            "tv_to_truth": None if true_law is None else tv_distance(learned, true_law),
            "iterations": report["iterations"],
            "recovered": learned.probs.tolist(),
            "truth": None if true_law is None else true_law.probs.tolist(),
            "trace": trace,
        })
        outputs[stage.name] = learned
        order.append(stage.name)
    return ChainReport(results)


CHAIN_PRESETS = {
    "micro_bb": {
        "stages": [
            {"name": "glyph_one", "known": {"kind": "micro_bb", "component": "y",
                                            "params": {"glyph_family": "one", "glyph_probs": "random"}}},
            {"name": "background", "learn": "x",
             "scenario": {"kind": "micro_bb", "params": {"glyph_family": "one", "glyph_probs": "random",
                                                         "bg_probs": [0.65, 0.35]}}},
            {"name": "glyph_two", "learn": "y",
             "scenario": {"kind": "micro_bb", "params": {"glyph_family": "two", "glyph_probs": "random",
                                                         "quadrant_probs": [0.4, 0.3, 0.2, 0.1],
                                                         "bg_probs": [0.65, 0.35]}}},
        ]
    },
    "cross_family": {
        "stages": [
            {"name": "digit_one", "known": {"kind": "micro_mb", "component": "y",
                                            "params": {"glyph_family": "one", "glyph_probs": "random"}}},
            {"name": "background", "learn": "x",
             "scenario": {"kind": "micro_mb", "params": {"glyph_family": "one", "glyph_probs": "random",
                                                         "bg_probs": [0.3, 0.7]}}},
            {"name": "tshirt", "learn": "y",
             "scenario": {"kind": "micro_mb", "params": {"glyph_family": "tshirt", "glyph_probs": "random",
                                                         "bg_probs": [0.3, 0.7]}}},
        ]
    },
}


def build_chain(config: dict, seed: int = 0, metric_kind: str = "discrete") -> list[ChainStage]:
    """Turn a chain config (stage list of scenario recipes) into ChainStage objects.

    Stage ``k`` draws its randomized parameters from ``seed + k``; the first
    stage and the stage learning from it share seed offsets so that the known
    law equals the law that generated the stage-1 data.
    """
    raw = config.get("stages")
    if not isinstance(raw, list) or len(raw) < 2:
        raise StageSchemaMismatch("stages: need a list with a known stage and at least one learning stage")
    out = []
    for k, st in enumerate(raw):
        name = st.get("name", f"stage{k}")
        if k == 0:
            known = st.get("known")
            if not isinstance(known, dict) or known.get("component") not in ("x", "y"):
                raise StageSchemaMismatch("stages[0].known: need kind, params and component 'x' or 'y'")
            sc = make_scenario(known["kind"], known.get("params", {}), seed + 1, metric_kind=metric_kind)
            out.append(ChainStage(name, known=getattr(sc, "p_" + known["component"])))
            continue
        recipe = st.get("scenario")
        if not isinstance(recipe, dict) or "kind" not in recipe:
            raise StageSchemaMismatch(f"stages[{k}].scenario: missing scenario recipe")
        sc = make_scenario(recipe["kind"], recipe.get("params", {}), seed + k, name=name,
                           metric_kind=metric_kind)
        out.append(ChainStage(name, scenario=sc, learn=st.get("learn"), given_from=st.get("given_from")))
    return out


def composed_consistency(scenario: Scenario) -> float:
    """TV between p_z and the law composed from the scenario's own components."""
    return tv_distance(scenario.p_z, composed_law(scenario.p_x, scenario.p_y, scenario.spec))
