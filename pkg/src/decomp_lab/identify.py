"""Resolving matrices, rank tests, closed-form recovery and counterexamples.

Conventions: the resolving matrix is built from the *known* component law
(always passed as ``p_x``) and has one column per symbol of the hidden
component.  To recover the first component instead, pass ``spec.transposed()``
together with the second component's law.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .compose import (
    CompositionSpec,
    DecompositionMap,
    Scenario,
    Solution,
    check_bijective,
    cycle_losses,
    invert_composition,
)
from .errors import (
    NotBijective,
    PreconditionFailed,
    RankDeficient,
    SpaceMismatch,
    SymmetryAbsent,
)
from .finitedist import (
    FiniteDistribution,
    SymbolSpace,
    ground_metric,
    new_distribution,
    point_mass,
    tv_distance_aligned,
)
from .transport import adversarial_loss, loss_terms

RANK_TOL = 1e-8
SIMPLEX_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ResolvingMatrix:
    entries: np.ndarray
    spec: CompositionSpec
    p_x: FiniteDistribution
    pruned: tuple[int, ...] = ()

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def to_json(self) -> dict:
        return {"entries": self.entries.tolist(), "pruned_x": list(self.pruned)}


def resolving_matrix(p_x: FiniteDistribution, spec: CompositionSpec) -> ResolvingMatrix:
    """``R[z, y] = sum_x p(x) 1[z = c(x, y)]`` after pruning zero-mass x."""
    if p_x.space != spec.x_space:
        raise SpaceMismatch("p_x is not over the composition's x_space")
    keep = np.flatnonzero(p_x.probs > 0)
    pruned = tuple(int(i) for i in np.flatnonzero(p_x.probs == 0))
    R = np.zeros((len(spec.z_space), len(spec.y_space)))
    cols = np.arange(len(spec.y_space))
    for i in keep:
        np.add.at(R, (spec.table[i], cols), p_x.probs[i])
    R.setflags(write=False)
    return ResolvingMatrix(R, spec, p_x, pruned)


def singular_values(R: ResolvingMatrix | np.ndarray) -> np.ndarray:
    a = R.entries if isinstance(R, ResolvingMatrix) else np.asarray(R)
    return np.linalg.svd(a, compute_uv=False)


def column_rank(R: ResolvingMatrix | np.ndarray, rel_tol: float = RANK_TOL) -> int:
    s = singular_values(R)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@dataclass(frozen=True, eq=False)
class IdentifiabilityReport:
    rank: int
    n_columns: int
    singular_values: np.ndarray
    recovered_p_y: FiniteDistribution | None
    residual: float
    projected: bool = False
    pruned_x: tuple[int, ...] = ()
    alternatives: list[FiniteDistribution] = field(default_factory=list)

    @property
    def full_column_rank(self) -> bool:
        return self.rank == self.n_columns

    def to_json(self) -> dict:
        return {
            "rank": self.rank,
            "n_columns": self.n_columns,
            "full_column_rank": self.full_column_rank,
            "singular_values": self.singular_values.tolist(),
            "recovered_p_y": None if self.recovered_p_y is None else self.recovered_p_y.probs.tolist(),
            "residual": self.residual,
            "projected": self.projected,
            "pruned_x": list(self.pruned_x),
            "alternatives": [a.probs.tolist() for a in self.alternatives],
        }


def _as_simplex_point(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.min() >= -SIMPLEX_TOL and abs(x.sum() - 1.0) <= SIMPLEX_TOL:
        x = np.clip(x, 0.0, None)
        return x / x.sum(), False
    return project_simplex(x), True


def _null_space(R: np.ndarray, rank: int) -> np.ndarray:
    _, _, vt = np.linalg.svd(R)
    basis = vt[rank:]
    for row in basis:
        lead = row[np.flatnonzero(np.abs(row) > 1e-12)[0]]
        if lead < 0:
            row *= -1
    return basis


def _alternatives(base: np.ndarray, basis: np.ndarray, space: SymbolSpace, min_tv: float = 0.01):
    """Distinct simplex points base + t*n along the first usable null direction."""
    for n in basis:
        neg, pos = n < -1e-14, n > 1e-14
        if not neg.any() or not pos.any():
            continue
        t_hi = float(np.min(-base[neg] / n[neg]))
        t_lo = float(np.max(-base[pos] / n[pos]))
        spread = (t_hi - t_lo) * np.abs(n).sum() / 2
        if spread < min_tv:
            continue
        pts = [t_lo, t_hi] if spread < 2 * min_tv else [t_lo, 0.5 * (t_lo + t_hi), t_hi]
        out = []
        for t in pts:
            w = np.clip(base + t * n, 0.0, None)
            out.append(new_distribution(space, w))
        return out
    return []


def recover_component_closed_form(p_z: FiniteDistribution, R: ResolvingMatrix,
                                  rel_tol: float = RANK_TOL) -> IdentifiabilityReport:
    """Least-squares solve of ``R p = p_z`` followed by simplex projection if needed.

    Raises RankDeficient (with a report listing alternative solutions) when R
    lacks full column rank.
    """
    if p_z.space != R.spec.z_space:
        raise SpaceMismatch("p_z is not over the resolving matrix rows")
    A = R.entries
    s = singular_values(A)
    rank = column_rank(A, rel_tol)
    ncol = A.shape[1]
    y_space = R.spec.y_space
    x, *_ = np.linalg.lstsq(A, p_z.probs, rcond=None)
    point, projected = _as_simplex_point(x)
    recovered = FiniteDistribution(y_space, point)
    residual = float(np.abs(A @ point - p_z.probs).sum())
    if rank == ncol:
        return IdentifiabilityReport(rank, ncol, s, recovered, residual, projected, R.pruned)
    alts = _alternatives(point, _null_space(A, rank), y_space)
    report = IdentifiabilityReport(rank, ncol, s, recovered, residual, projected, R.pruned, alts)
    raise RankDeficient(f"resolving matrix has rank {rank} < {ncol}", report)


def recovery_report(p_z: FiniteDistribution, R: ResolvingMatrix, rel_tol: float = RANK_TOL) -> IdentifiabilityReport:
    """Same as :func:`recover_component_closed_form` but returns the report in both regimes."""
    try:
        return recover_component_closed_form(p_z, R, rel_tol)
    except RankDeficient as exc:
        return exc.report


# --------------------------------------------------------------------------
# theorem and lemma verifiers


def random_bijective_spec(nx: int, ny: int, rng: np.random.Generator) -> CompositionSpec:
    table = rng.permutation(nx * ny).reshape(nx, ny)
    return CompositionSpec(SymbolSpace.integers(nx), SymbolSpace.integers(ny),
                           SymbolSpace.integers(nx * ny), table, "table")


def lemma_instance(spec: CompositionSpec, p_x: FiniteDistribution, rel_tol: float = RANK_TOL) -> dict:
    """Check one bijective composition; refuses non-bijective input."""
    result = check_bijective(spec)
    if not result:
        raise NotBijective("the rank lemma only covers bijective compositions", result.witness)
    R = resolving_matrix(p_x, spec)
    s = singular_values(R)
    rank = column_rank(R, rel_tol)
    return {
        "x_size": len(spec.x_space),
        "y_size": len(spec.y_space),
        "rank": rank,
        "full_rank": rank == len(spec.y_space),
        "min_singular_value": float(s[-1]),
        "pruned_x": list(R.pruned),
    }


def _lemma_trial(args):
    seed, max_x, max_y, rel_tol = args
    rng = np.random.default_rng(seed)
    nx = int(rng.integers(1, max_x + 1))
    ny = int(rng.integers(1, max_y + 1))
    spec = random_bijective_spec(nx, ny, rng)
    # flat Dirichlet keeps every atom strictly positive
    p_x = new_distribution(spec.x_space, rng.dirichlet(np.ones(nx)))
    return lemma_instance(spec, p_x, rel_tol)


@dataclass
class LemmaReport:
    trials: list[dict]
    seed: int

    @property
    def n_full(self) -> int:
        return sum(t["full_rank"] for t in self.trials)

    @property
    def passed(self) -> bool:
        return self.n_full == len(self.trials)

    def failures(self) -> list[dict]:
        return [t for t in self.trials if not t["full_rank"]]

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "trials": len(self.trials),
            "full_rank": self.n_full,
            "passed": self.passed,
            "min_singular_value": min(t["min_singular_value"] for t in self.trials),
            "details": self.trials,
        }


def verify_lemma_bijective_rank(trials: int = 100, size_bounds: tuple[int, int] = (8, 8), seed: int = 0,
                                rel_tol: float = RANK_TOL, jobs: int = 1) -> LemmaReport:
    """Random bijective compositions with strictly positive p_x must give full column rank."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(trials)]
    args = [(s, size_bounds[0], size_bounds[1], rel_tol) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_lemma_trial, args))
    else:
        results = [_lemma_trial(a) for a in args]
    for i, r in enumerate(results):
        r["trial"] = i
        r["seed"] = seeds[i]
    return LemmaReport(results, seed)


@dataclass
class Theorem1Report:
    hypothesis_met: bool
    rank: int
    n_columns: int
    recovered_matches: bool | None
    l1_error: float | None
    identifiability: IdentifiabilityReport

    @property
    def passed(self) -> bool:
        return (not self.hypothesis_met) or bool(self.recovered_matches)

    def message(self) -> str:
        if not self.hypothesis_met:
            return f"hypothesis not met: rank {self.rank} < {self.n_columns}"
        verdict = "matches" if self.recovered_matches else "DOES NOT match"
        return f"full column rank {self.rank}; recovered law {verdict} truth (l1 error {self.l1_error:.3e})"

    def to_json(self) -> dict:
        return {
            "hypothesis_met": self.hypothesis_met,
            "rank": self.rank,
            "n_columns": self.n_columns,
            "recovered_matches": self.recovered_matches,
            "l1_error": self.l1_error,
            "passed": self.passed,
            "message": self.message(),
            "identifiability": self.identifiability.to_json(),
        }


def verify_theorem1(scenario: Scenario, hidden: str = "y", tol: float = 1e-9,
                    rel_tol: float = RANK_TOL) -> Theorem1Report:
    """Hypothesis-gated check that full column rank pins down the hidden law."""
    spec, known, truth = _hidden_setup(scenario, hidden)
    R = resolving_matrix(known, spec)
    rep = recovery_report(scenario.p_z, R, rel_tol)
    if not rep.full_column_rank:
        return Theorem1Report(False, rep.rank, rep.n_columns, None, None, rep)
    err = None if truth is None else float(np.abs(rep.recovered_p_y.probs - truth.probs).sum())
    return Theorem1Report(True, rep.rank, rep.n_columns, None if err is None else err <= tol, err, rep)


def _hidden_setup(scenario: Scenario, hidden: str):
    if scenario.spec is None:
        raise PreconditionFailed("scenario carries no composition")
    if hidden == "y":
        return scenario.spec, scenario.p_x, scenario.p_y
    if hidden == "x":
        return scenario.spec.transposed(), scenario.p_y, scenario.p_x
    raise ValueError("hidden must be 'x' or 'y'")


def theorem2_terms(spec: CompositionSpec, d: DecompositionMap, p_x, p_y, p_z) -> dict:
    """The three expectations of the decomposition objective under l1 costs."""
    cost_x = ground_metric(spec.x_space, "l1")
    cost_y = ground_metric(spec.y_space, "l1")
    cost_z = ground_metric(spec.z_space, "l1")
    D = d.kernel
    K = spec.kernel
    pxy = np.outer(p_x.probs, p_y.probs).ravel()
    nx, ny = len(spec.x_space), len(spec.y_space)
    xi = np.repeat(np.arange(nx), ny)
    yi = np.tile(np.arange(ny), nx)
    M = K @ D
    x_term = float(np.sum(pxy[:, None] * M * cost_x.costs[np.ix_(xi, xi)].T))
    y_term = float(np.sum(pxy[:, None] * M * cost_y.costs[np.ix_(yi, yi)].T))
    _, z_term = cycle_losses(spec, d, p_x, p_y, p_z, cost_x, cost_y, cost_z)
    return {"x_term": x_term, "y_term": y_term, "z_term": z_term, "objective": x_term + y_term + z_term}


@dataclass
class Theorem2Report:
    objective: float
    terms: dict
    equal_on_support: bool
    differing_z: list[int]
    tol: float

    @property
    def consistent(self) -> bool:
        return (self.objective <= self.tol) == self.equal_on_support

    def message(self) -> str:
        if self.objective <= self.tol:
            rel = "d = inverse on support" if self.equal_on_support else "d != inverse on support"
            return f"objective {self.objective:.4g} <= tol, {rel}: " + (
                "consistent with theorem" if self.consistent else "THEOREM VIOLATED")
        rel = "d ≠ inverse" if not self.equal_on_support else "d = inverse"
        return f"objective {self.objective:.4f} > 0, {rel}: " + (
            "consistent with theorem" if self.consistent else "THEOREM VIOLATED")

    def to_json(self) -> dict:
        return {
            "objective": self.objective,
            "terms": self.terms,
            "equal_on_support": self.equal_on_support,
            "differing_z": self.differing_z,
            "tol": self.tol,
            "consistent": self.consistent,
            "message": self.message(),
        }


def verify_theorem2(spec: CompositionSpec, d: DecompositionMap, p_x: FiniteDistribution,
                    p_y: FiniteDistribution, p_z: FiniteDistribution, tol: float = 1e-12) -> Theorem2Report:
    """Compare the objective's zero set with agreement to the inverse on supp(p_z)."""
    inverse = invert_composition(spec)
    terms = theorem2_terms(spec, d, p_x, p_y, p_z)
    support = p_z.support
    differ = [int(z) for z in support if not np.array_equal(d.kernel[z], inverse.kernel[z])]
    return Theorem2Report(terms["objective"], terms, not differ, differ, tol)


def theorem2_sweep(spec: CompositionSpec, p_x, p_y, p_z, tol: float = 1e-12, *, exhaustive_limit: int = 50_000,
                   samples: int = 2000, seed: int = 0) -> dict:
    """Check the biconditional over many deterministic decompositions.

    Every map is enumerated when ``|xy|**|z|`` is at most ``exhaustive_limit``.
    Otherwise all single-site deviations from the inverse are enumerated (the
    objective is a sum of per-composite terms, so these cover every way a map
    can fail) and ``samples`` random maps are added on top.
    """
    inverse = invert_composition(spec)
    nz = len(spec.z_space)
    npairs = len(spec.x_space) * len(spec.y_space)
    base = inverse.pairs
    ny = len(spec.y_space)

    def check(flat_choice) -> bool:
        pairs = np.stack([np.asarray(flat_choice) // ny, np.asarray(flat_choice) % ny], axis=1)
        d = DecompositionMap.deterministic(spec.z_space, spec.x_space, spec.y_space, pairs)
        return verify_theorem2(spec, d, p_x, p_y, p_z, tol).consistent

    checked = 0
    violations = []
    base_flat = base[:, 0] * ny + base[:, 1]
    if npairs ** nz <= exhaustive_limit:
        mode = "exhaustive"
        for choice in itertools.product(range(npairs), repeat=nz):
            checked += 1
            if not check(choice):
                violations.append(list(choice))
    else:
        mode = "single-site+sampled"
        for z in range(nz):
            for j in range(npairs):
                choice = base_flat.copy()
                choice[z] = j
                checked += 1
                if not check(choice):
                    violations.append(choice.tolist())
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            choice = base_flat.copy()
            k = int(rng.integers(1, nz + 1))
            sites = rng.choice(nz, size=k, replace=False)
            choice[sites] = rng.integers(0, npairs, size=k)
            checked += 1
            if not check(choice):
                violations.append(choice.tolist())
    return {"mode": mode, "checked": checked, "violations": violations[:10], "n_violations": len(violations)}


# --------------------------------------------------------------------------
# counterexamples


def swap_values_involution(space: SymbolSpace, a: int = 1, b: int = 2) -> np.ndarray:
    """Index map of the cellwise value swap a <-> b; raises SymmetryAbsent if it leaves the space."""
    out = np.empty(len(space), dtype=np.int64)
    for i, s in enumerate(space.symbols):
        image = tuple(b if v == a else a if v == b else v for v in s)
        j = space.find(image)
        if j is None:
            raise SymmetryAbsent(f"value swap maps {s} outside the space")
        out[i] = j
    return out


@dataclass
class PhaseFlipReport:
    loss_a: dict
    loss_b: dict
    disagreement: float
    cycle_consistent_b: bool
    involution: list[int]

    def to_json(self) -> dict:
        return {
            "loss_a": self.loss_a,
            "loss_b": self.loss_b,
            "disagreement_fraction": self.disagreement,
            "cycle_consistent_b": self.cycle_consistent_b,
            "involution": self.involution,
            "explanation": (
                "Solution b composes with the background value swap applied to its background input and "
                "decomposes with the swap applied to its background output. The background law is invariant "
                "under the swap, so every loss term matches the true solution, yet the two decompositions "
                "disagree on every supported composite."),
        }


def phase_flip_counterexample(scenario: Scenario, involution: np.ndarray | None = None,
                              alpha: float = 1.0) -> tuple[Solution, Solution, PhaseFlipReport]:
    """Two zero-loss (composition, decomposition) pairs that disagree everywhere."""
    if scenario.spec is None or scenario.p_x is None or scenario.p_y is None:
        raise PreconditionFailed("phase flip needs the composition and both component laws")
    spec = scenario.spec
    t = swap_values_involution(spec.x_space) if involution is None else np.asarray(involution, dtype=np.int64)
    if not np.array_equal(t[t], np.arange(len(t))):
        raise SymmetryAbsent("the background map is not an involution")
    if np.all(t == np.arange(len(t))):
        raise SymmetryAbsent("the background involution is the identity")
    if np.max(np.abs(scenario.p_x.probs[t] - scenario.p_x.probs)) > SIMPLEX_TOL:
        raise SymmetryAbsent("background law is not invariant under the involution")
    inverse = invert_composition(spec)
    spec_b = CompositionSpec(spec.x_space, spec.y_space, spec.z_space, spec.table[t], "table",
                             {"derived_from": spec.rule})
    pairs_b = inverse.pairs.copy()
    pairs_b[:, 0] = t[pairs_b[:, 0]]
    d_b = DecompositionMap.deterministic(spec.z_space, spec.x_space, spec.y_space, pairs_b)
    sol_a = Solution(composition=spec, decomposition=inverse,
                     provenance={"composition": "given", "decomposition": "constructed"})
    sol_b = Solution(composition=spec_b, decomposition=d_b,
                     provenance={"composition": "constructed", "decomposition": "constructed"})
    loss_a = loss_terms(scenario, sol_a, alpha)
    loss_b = loss_terms(scenario, sol_b, alpha)
    support = scenario.p_z.support
    differ = sum(not np.array_equal(inverse.pairs[z], pairs_b[z]) for z in support)
    consistent = all(
        tuple(pairs_b[spec_b.table[i, j]]) == (i, j)
        for i in range(len(spec.x_space)) for j in range(len(spec.y_space)))
    return sol_a, sol_b, PhaseFlipReport(loss_a, loss_b, differ / len(support), consistent, t.tolist())


@dataclass
class TrivialReport:
    l_c: float
    loss: dict
    tv_foreground: float | None
    tv_background: float | None

    def to_json(self) -> dict:
        return {
            "l_c": self.l_c,
            "loss_terms": self.loss,
            "tv_to_true_foreground": self.tv_foreground,
            "tv_to_true_background": self.tv_background,
            "explanation": (
                "The candidate foreground generator replays whole composites and the background is a point "
                "mass. No composite has a transparent cell, so the overlay returns the foreground unchanged "
                "and the composition loss vanishes although neither component is recovered. Knowing the "
                "composition alone does not identify the components."),
        }


def trivial_solution_counterexample(scenario: Scenario, background_index: int = 0,
                                    alpha: float = 1.0) -> tuple[Solution, TrivialReport]:
    """Zero composition loss with the composites replayed as foregrounds."""
    spec = scenario.spec
    if spec is None or not spec.rule.endswith("overlay"):
        raise PreconditionFailed("trivial solution needs an overlay composition")
    for z in scenario.z_space.symbols:
        if 0 in z:
            raise PreconditionFailed(f"composite {z} has a transparent cell; replaying it as foreground fails")
    fg_space = SymbolSpace(scenario.z_space.symbols, scenario.z_space.value_cap)
    fg_law = FiniteDistribution(fg_space, scenario.p_z.probs)
    bg_law = point_mass(spec.x_space, background_index)
    comp = CompositionSpec.overlay(spec.x_space, fg_space, scenario.z_space)
    pairs = np.stack([np.full(len(scenario.z_space), background_index), np.arange(len(scenario.z_space))], axis=1)
    d = DecompositionMap.deterministic(scenario.z_space, spec.x_space, fg_space, pairs)
    sol = Solution(p_x=bg_law, p_y=fg_law, composition=comp, decomposition=d,
                   provenance={"p_x": "constructed", "p_y": "constructed", "composition": "given",
                               "decomposition": "constructed"})
    # Task-4 view: only the composed law and the rule are known
    view = scenario.replace(p_x=None, p_y=None)
    l_c = adversarial_loss("composition", view, sol)
    loss = loss_terms(view, sol, alpha)
    tv_fg = None if scenario.p_y is None else tv_distance_aligned(fg_law, scenario.p_y)
    tv_bg = None if scenario.p_x is None else tv_distance_aligned(bg_law, scenario.p_x)
    return sol, TrivialReport(l_c, loss, tv_fg, tv_bg)


def rank_deficient_alternatives(scenario: Scenario, hidden: str = "y") -> IdentifiabilityReport:
    spec, known, _ = _hidden_setup(scenario, hidden)
    return recovery_report(scenario.p_z, resolving_matrix(known, spec))


__all__ = [
    "IdentifiabilityReport",
    "ResolvingMatrix",
    "column_rank",
    "phase_flip_counterexample",
    "project_simplex",
    "recover_component_closed_form",
    "resolving_matrix",
    "trivial_solution_counterexample",
    "verify_lemma_bijective_rank",
    "verify_theorem1",
    "verify_theorem2",
]
