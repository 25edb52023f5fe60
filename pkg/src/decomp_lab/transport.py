"""Exact and entropic Wasserstein-1, and the adversarial losses built on it.

The adversarial losses of the framework are suprema over 1-Lipschitz critics;
on a finite space that supremum is the Kantorovich dual of a transport LP, so
we solve the LP instead of training a critic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import logsumexp

from .compose import (
    Scenario,
    Solution,
    composed_law,
    cycle_losses,
    pushforward_kernel,
)
from .errors import MissingFragment, NonConvergence, SolverFailure, SpaceMismatch
from .finitedist import CostMatrix, FiniteDistribution, ground_metric, product

_HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


@dataclass(frozen=True, eq=False)
class TransportResult:
    value: float
    plan: np.ndarray
    potential_p: np.ndarray
    potential_q: np.ndarray
    duality_gap: float

    def witness(self, cost: CostMatrix) -> np.ndarray:
        """Critic f(i) = min_j cost[i, j] - potential_q[j].

        On a metric cost this is 1-Lipschitz and attains the transport value
        as E_p[f] - E_q[f]; among equally good critics it is the largest one.
        """
        return np.min(cost.costs - self.potential_q[None, :], axis=1)

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "duality_gap": self.duality_gap,
            "plan": self.plan.tolist(),
            "potential_p": self.potential_p.tolist(),
            "potential_q": self.potential_q.tolist(),
        }


def _solve_lp(a: np.ndarray, b: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Transport LP on strictly positive marginals; returns (plan, u, v)."""
    n, m = C.shape
    if n == 1 or m == 1:
        plan = np.outer(a, b)
        if n == 1:
            u, v = np.zeros(1), C[0].copy()
        else:
            u, v = C[:, 0].copy(), np.zeros(1)
        return plan, u, v
    b = b * (a.sum() / b.sum())
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    A = sparse.vstack([rows, cols]).tocsr()
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([a, b]), bounds=(0, None),
                  method="highs", options=_HIGHS_OPTIONS)
    if res.status != 0:
        raise SolverFailure(f"transport LP failed: {res.message}")
    plan = np.clip(res.x.reshape(n, m), 0.0, None)
    y = res.eqlin.marginals
    u, v = y[:n].copy(), y[n:].copy()
    # c-transforms restore exact dual feasibility without lowering the dual value
    v = np.min(C - u[:, None], axis=0)
    u = np.min(C - v[None, :], axis=1)
    return plan, u, v


def _full_potentials(C: np.ndarray, sa: np.ndarray, sb: np.ndarray, u_s: np.ndarray, v_s: np.ndarray):
    n, m = C.shape
    u = np.empty(n)
    v = np.empty(m)
    u[sa] = u_s
    v[sb] = v_s
    zero_rows = np.setdiff1d(np.arange(n), sa)
    zero_cols = np.setdiff1d(np.arange(m), sb)
    if zero_rows.size:
        u[zero_rows] = np.min(C[np.ix_(zero_rows, sb)] - v_s[None, :], axis=1)
    if zero_cols.size:
        v[zero_cols] = np.min(C[:, zero_cols] - u[:, None], axis=0)
    shift = u[0]
    return u - shift, v + shift


def _transport_arrays(a: np.ndarray, b: np.ndarray, C: np.ndarray):
    sa = np.flatnonzero(a > 0)
    sb = np.flatnonzero(b > 0)
    if sa.size == 0 or sb.size == 0:
        raise SolverFailure("transport needs nonempty supports")
    plan_s, u_s, v_s = _solve_lp(a[sa], b[sb], C[np.ix_(sa, sb)])
    plan = np.zeros(C.shape)
    plan[np.ix_(sa, sb)] = plan_s
    u, v = _full_potentials(C, sa, sb, u_s, v_s)
    return plan, u, v


def _check_spaces(p: FiniteDistribution, q: FiniteDistribution, cost: CostMatrix):
    if p.space != cost.rows_space or q.space != cost.cols_space:
        raise SpaceMismatch("distributions do not match the cost matrix spaces")


def wasserstein_exact(p: FiniteDistribution, q: FiniteDistribution, cost: CostMatrix) -> TransportResult:
    """Optimal transport value with primal plan and dual potentials.

    Zero-mass atoms are dropped before solving; their plan rows/columns are
    zero and their potentials are filled by c-transform so the full dual stays
    feasible.  Potentials are shifted so ``potential_p[0] == 0``.
    """
    _check_spaces(p, q, cost)
    C = cost.costs
    plan, u, v = _transport_arrays(p.probs, q.probs, C)
    value = math.fsum((plan * C).ravel())
    dual = math.fsum(np.concatenate([u * p.probs, v * q.probs]))
    return TransportResult(value, plan, u, v, value - dual)


def w1_dual(a: np.ndarray, b: np.ndarray, cost: CostMatrix) -> tuple[float, np.ndarray, np.ndarray]:
    """(value, u, v) for raw probability vectors; ``v`` is a subgradient in ``b``.

    Under the discrete metric this uses the closed form (value = total
    variation, u = 1[a > b], v = -u); otherwise it solves the LP.
    """
    if cost.kind == "discrete" and cost.rows_space == cost.cols_space:
        s = (a > b).astype(np.float64)
        return 0.5 * float(np.sum(np.abs(a - b))), s, -s
    plan, u, v = _transport_arrays(a, b, cost.costs)
    return float(np.sum(plan * cost.costs)), u, v


def _marginal_violation(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(P.sum(axis=1) - a).sum() + np.abs(P.sum(axis=0) - b).sum())


def _newton_polish(f, g, a, b, C, eps, tol, max_steps=30):
    """Newton steps on the entropic dual, with backtracking on the violation.

    Plain Sinkhorn contracts very slowly when the Gibbs kernel is nearly
    block diagonal (small epsilon, well separated atoms); the dual Hessian
    is cheap at these sizes and Newton finishes the job quadratically.
    """
    n = len(a)
    P = np.exp((f[:, None] + g[None, :] - C) / eps)
    viol = _marginal_violation(P, a, b)
    for _ in range(max_steps):
        if viol < tol:
            break
        r, c = P.sum(axis=1), P.sum(axis=0)
        grad = np.concatenate([a - r, b - c])
        H = np.block([[np.diag(r), P], [P.T, np.diag(c)]]) / eps
        try:
            # the dual is invariant under (f + t, g - t); pin the last g entry
            step = np.append(np.linalg.solve(H[:-1, :-1], grad[:-1]), 0.0)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        for _ in range(40):
            f2, g2 = f + t * step[:n], g + t * step[n:]
            with np.errstate(over="ignore", invalid="ignore"):
                # overflowing trial steps are simply rejected
                P2 = np.exp((f2[:, None] + g2[None, :] - C) / eps)
                v2 = _marginal_violation(P2, a, b)
            if np.isfinite(v2) and v2 < viol:
                break
            t *= 0.5
        else:
            break
        f, g, P, viol = f2, g2, P2, v2
    return f, g, viol


def wasserstein_sinkhorn(p: FiniteDistribution, q: FiniteDistribution, cost: CostMatrix,
                         epsilon: float, max_iter: int = 200_000, tol: float = 1e-9) -> float:
    """Transport cost of the entropic plan, computed in the log domain.

    The regularization is annealed from the cost scale down to ``epsilon``
    (factor 4 per stage, warm-started).  A stage that stalls is finished by
    Newton steps on the dual.  Only the last stage has to reach ``tol``, the
    L1 violation of both marginals together.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    _check_spaces(p, q, cost)
    sa, sb = p.support, q.support
    a, b = p.probs[sa], q.probs[sb]
    C = cost.costs[np.ix_(sa, sb)]
    la, lb = np.log(a), np.log(b)
    scale = max(float(C.max()), epsilon)
    ladder = []
    eps = scale
    while eps > epsilon:
        ladder.append(eps)
        eps /= 4.0
    ladder.append(epsilon)

    f = np.zeros(len(a))
    g = np.zeros(len(b))
    it = 0
    violation = math.inf
    for k, eps in enumerate(ladder):
        last = k == len(ladder) - 1
        stage_tol = tol if last else max(tol, 1e-5)
        stage_it = 0
        while True:
            f = eps * (la - logsumexp((g[None, :] - C) / eps, axis=1))
            g = eps * (lb - logsumexp((f[:, None] - C) / eps, axis=0))
            it += 1
            stage_it += 1
            if stage_it % 5 == 0 or it >= max_iter:
                P = np.exp((f[:, None] + g[None, :] - C) / eps)
                violation = _marginal_violation(P, a, b)
                if violation < stage_tol:
                    break
                if stage_it % 500 == 0 and len(a) + len(b) <= 1024:
                    f2, g2, v2 = _newton_polish(f, g, a, b, C, eps, stage_tol)
                    if v2 < violation:
                        f, g, violation = f2, g2, v2
                    if violation < stage_tol:
                        break
            if it >= max_iter:
                raise NonConvergence(f"Sinkhorn stopped after {it} iterations, "
                                     f"marginal violation {violation:.3e}", violation=violation)
    P = np.exp((f[:, None] + g[None, :] - C) / eps)
    return float(np.sum(P * C))


# --------------------------------------------------------------------------
# adversarial losses

ADVERSARIAL_KINDS = ("component_x", "component_y", "composition", "decomposition")


def _pick(candidate, scenario, name):
    value = getattr(candidate, name, None) if candidate is not None else None
    if value is None:
        value = getattr(scenario, "spec" if name == "composition" else name)
    return value


def _metric(space, kind, cost):
    if cost is None:
        return ground_metric(space, kind)
    if cost.rows_space != space or cost.cols_space != space:
        raise SpaceMismatch("cost matrix does not match the loss space")
    return cost


def adversarial_loss(kind: str, scenario: Scenario, candidate: Solution | None,
                     cost: CostMatrix | None = None, metric_kind: str | None = None) -> float:
    """Exact value of one adversarial loss for a candidate.

    Fragments the candidate leaves empty are taken from the scenario.
    """
    metric = metric_kind or scenario.metric_kind
    if kind in ("component_x", "component_y"):
        name = "p_" + kind[-1]
        data = getattr(scenario, name)
        model = getattr(candidate, name, None) if candidate is not None else None
        if data is None or model is None:
            raise MissingFragment(f"{kind} needs both the data law and a candidate {name}")
        if data.space != model.space:
            raise SpaceMismatch(f"candidate {name} lives on a different space")
        return wasserstein_exact(data, model, _metric(data.space, metric, cost)).value
    if kind not in ("composition", "decomposition"):
        raise ValueError(f"unknown adversarial loss kind {kind!r}")
    p_x = _pick(candidate, scenario, "p_x")
    p_y = _pick(candidate, scenario, "p_y")
    if p_x is None or p_y is None:
        raise MissingFragment(f"{kind} loss needs both component laws")
    if kind == "composition":
        comp = _pick(candidate, scenario, "composition")
        if comp is None:
            raise MissingFragment("composition loss needs a composition map")
        if comp.z_space != scenario.z_space:
            raise SpaceMismatch("candidate composition targets a different z_space")
        induced = composed_law(p_x, p_y, comp)
        return wasserstein_exact(scenario.p_z, induced, _metric(scenario.z_space, metric, cost)).value
    d = candidate.decomposition if candidate is not None else None
    if d is None:
        raise MissingFragment("decomposition loss needs a decomposition map")
    if d.x_space != p_x.space or d.y_space != p_y.space or d.z_space != scenario.z_space:
        raise SpaceMismatch("decomposition spaces do not match the component laws")
    joint = product(p_x, p_y)
    induced = pushforward_kernel(scenario.p_z, d.kernel, joint.space)
    return wasserstein_exact(joint, induced, _metric(joint.space, metric, cost)).value


def loss_terms(scenario: Scenario, solution: Solution, alpha: float = 1.0,
               metric_kind: str | None = None) -> dict:
    """All terms of l_c + l_d + alpha * (c_cyc + d_cyc), plus the total."""
    metric = metric_kind or scenario.metric_kind
    p_x = _pick(solution, scenario, "p_x")
    p_y = _pick(solution, scenario, "p_y")
    comp = _pick(solution, scenario, "composition")
    d = solution.decomposition
    missing = [n for n, v in (("p_x", p_x), ("p_y", p_y), ("composition", comp), ("decomposition", d)) if v is None]
    if missing:
        raise MissingFragment(f"solution lacks {', '.join(missing)}")
    l_c = adversarial_loss("composition", scenario, solution, metric_kind=metric)
    l_d = adversarial_loss("decomposition", scenario, solution, metric_kind=metric)
    c_cyc, d_cyc = cycle_losses(comp, d, p_x, p_y, scenario.p_z, ground_metric(p_x.space, metric),
                                ground_metric(p_y.space, metric), ground_metric(scenario.z_space, metric))
    total = l_c + l_d + alpha * (c_cyc + d_cyc)
    return {"l_c": l_c, "l_d": l_d, "c_cyc": c_cyc, "d_cyc": d_cyc, "alpha": alpha, "total": total}


__all__ = [
    "ADVERSARIAL_KINDS",
    "TransportResult",
    "adversarial_loss",
    "loss_terms",
    "w1_dual",
    "wasserstein_exact",
    "wasserstein_sinkhorn",
]
