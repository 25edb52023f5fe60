"""Composition rules, decomposition maps, cycle losses and scenario builders.

A composition is stored as a total index table ``table[x_index, y_index] ->
z_index``; the named rule (overlay, affine, modadd, concat) only decides how
that table is filled.  Decompositions are row-stochastic kernels from z to
the row-major product of x and y, with deterministic maps as the 0/1 case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Sequence

import numpy as np

from .errors import (
    ImageOutsideTarget,
    InvalidParams,
    LengthMismatch,
    NotBijective,
    SpaceMismatch,
    SymbolNotInSpace,
)
from .finitedist import (
    CostMatrix,
    FiniteDistribution,
    Symbol,
    SymbolSpace,
    new_distribution,
    product,
    product_space,
    pushforward,
    tv_distance,
    uniform,
)

ROW_TOL = 1e-12
SCENARIO_TOL = 1e-12
SCENARIO_KINDS = ("micro_mb", "micro_bb", "modadd", "custom")


def overlay(background: Sequence[int], foreground: Sequence[int]) -> Symbol:
    """Per-coordinate overlay: the foreground value wherever it is nonzero."""
    if len(background) != len(foreground):
        raise SpaceMismatch("overlay needs equal-length background and foreground")
    return tuple(int(b) if f == 0 else int(f) for b, f in zip(background, foreground))


def _rule_image(rule: str, params: dict, x: Symbol, y: Symbol) -> Symbol:
    if rule == "overlay":
        return overlay(x, y)
    if rule == "affine":
        return (params["a"] * x[0] + params["b"] * y[0],)
    if rule == "modadd":
        return ((x[0] + y[0]) % params["K"],)
    if rule == "concat":
        return tuple(x) + tuple(y)
    raise InvalidParams(f"unknown composition rule {rule!r}")


@dataclass(frozen=True, eq=False)
class CompositionSpec:
    """Deterministic composition c: range(X) x range(Y) -> range(Z)."""

    x_space: SymbolSpace
    y_space: SymbolSpace
    z_space: SymbolSpace
    table: np.ndarray
    rule: str = "table"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.int64)
        if t.shape != (len(self.x_space), len(self.y_space)):
            raise LengthMismatch(f"composition table has shape {t.shape}, expected "
                                 f"({len(self.x_space)}, {len(self.y_space)})")
        if np.any(t < 0) or np.any(t >= len(self.z_space)):
            raise ImageOutsideTarget("composition table points outside z_space")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @classmethod
    def from_rule(cls, rule: str, x_space: SymbolSpace, y_space: SymbolSpace,
                  z_space: SymbolSpace | None = None, **params) -> "CompositionSpec":
        """Fill the table from a named rule.

        Without an explicit ``z_space`` the target is the rule's natural range:
        the sorted set of images for overlay, ``{0..max}`` for affine,
        ``Z_K`` for modadd, and the product space for concat.
        """
        if rule == "overlay":
            if x_space.dim != y_space.dim:
                raise InvalidParams("overlay needs background and foreground of equal dim")
        elif rule in ("affine", "modadd"):
            if x_space.dim != 1 or y_space.dim != 1:
                raise InvalidParams(f"{rule} acts on scalar symbols")
            if rule == "modadd" and int(params.get("K", 0)) < 1:
                raise InvalidParams("modadd needs K >= 1")
        elif rule != "concat":
            raise InvalidParams(f"unknown composition rule {rule!r}")
        params = {k: int(v) for k, v in params.items()}
        images = [[_rule_image(rule, params, x, y) for y in y_space.symbols] for x in x_space.symbols]
        if z_space is None:
            if rule == "overlay":
                z_space = SymbolSpace(tuple(sorted({z for row in images for z in row})),
                                      max(x_space.value_cap, y_space.value_cap))
            elif rule == "affine":
                top = max(z[0] for row in images for z in row)
                if min(z[0] for row in images for z in row) < 0:
                    raise InvalidParams("affine rule produced a negative symbol")
                z_space = SymbolSpace.integers(top + 1)
            elif rule == "modadd":
                z_space = SymbolSpace.integers(params["K"])
            else:
                z_space = product_space(x_space, y_space)
        elif rule == "overlay" and (z_space.dim != x_space.dim):
            raise InvalidParams("overlay needs z_space of the same dim as its inputs")
        table = np.empty((len(x_space), len(y_space)), dtype=np.int64)
        for i, row in enumerate(images):
            for j, z in enumerate(row):
                k = z_space.find(z)
                if k is None:
                    raise ImageOutsideTarget(f"c({x_space.symbols[i]}, {y_space.symbols[j]}) = {z} is not in z_space")
                table[i, j] = k
        return cls(x_space, y_space, z_space, table, rule, params)

    @classmethod
    def overlay(cls, background: SymbolSpace, foreground: SymbolSpace, z_space=None):
        return cls.from_rule("overlay", background, foreground, z_space)

    @classmethod
    def affine(cls, a: int, b: int, x_space: SymbolSpace, y_space: SymbolSpace, z_space=None):
        return cls.from_rule("affine", x_space, y_space, z_space, a=a, b=b)

    @classmethod
    def modadd(cls, K: int, x_space: SymbolSpace | None = None, y_space: SymbolSpace | None = None):
        xs = SymbolSpace.integers(K) if x_space is None else x_space
        ys = SymbolSpace.integers(K) if y_space is None else y_space
        return cls.from_rule("modadd", xs, ys, None, K=K)

    @property
    def flat_table(self) -> np.ndarray:
        """z index of every (x, y) pair in row-major order."""
        return self.table.ravel()

    @property
    def kernel(self) -> np.ndarray:
        """0/1 row-stochastic matrix of shape (|x|*|y|, |z|)."""
        k = np.zeros((self.table.size, len(self.z_space)))
        k[np.arange(self.table.size), self.flat_table] = 1.0
        return k

    def evaluate(self, x, y) -> Symbol:
        i = self.x_space.index(x)
        j = self.y_space.index(y)
        return self.z_space.symbols[self.table[i, j]]

    def transposed(self) -> "CompositionSpec":
        """The same map with the roles of the two components exchanged."""
        return CompositionSpec(self.y_space, self.x_space, self.z_space, self.table.T,
                               "transposed:" + self.rule, dict(self.params))

    def to_json(self) -> dict:
        return {
            "rule": self.rule,
            "params": dict(self.params),
            "x_space": self.x_space.to_json(),
            "y_space": self.y_space.to_json(),
            "z_space": self.z_space.to_json(),
            "table": self.table.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CompositionSpec":
        return cls(SymbolSpace.from_json(obj["x_space"]), SymbolSpace.from_json(obj["y_space"]),
                   SymbolSpace.from_json(obj["z_space"]), np.asarray(obj["table"], dtype=np.int64),
                   obj.get("rule", "table"), dict(obj.get("params", {})))


def evaluate_composition(spec: CompositionSpec, x, y) -> Symbol:
    if x not in spec.x_space:
        raise SymbolNotInSpace(f"{x!r} is not in x_space")
    if y not in spec.y_space:
        raise SymbolNotInSpace(f"{y!r} is not in y_space")
    return spec.evaluate(x, y)


def _check_row_stochastic(kernel: np.ndarray, what: str) -> np.ndarray:
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or not np.all(np.isfinite(k)):
        raise InvalidParams(f"{what} kernel must be a finite 2-d array")
    if np.any(k < 0):
        raise InvalidParams(f"{what} kernel has negative entries")
    if np.any(np.abs(k.sum(axis=1) - 1.0) > ROW_TOL):
        raise InvalidParams(f"{what} kernel rows must sum to 1")
    k = k.copy()
    k.setflags(write=False)
    return k


@dataclass(frozen=True, eq=False)
class StochasticComposition:
    """Conditional law of z given (x, y); rows in row-major (x, y) order."""

    x_space: SymbolSpace
    y_space: SymbolSpace
    z_space: SymbolSpace
    kernel: np.ndarray

    def __post_init__(self):
        k = _check_row_stochastic(self.kernel, "composition")
        if k.shape != (len(self.x_space) * len(self.y_space), len(self.z_space)):
            raise LengthMismatch(f"composition kernel shape {k.shape} does not match the spaces")
        object.__setattr__(self, "kernel", k)

    def to_json(self) -> dict:
        return {
            "rule": "stochastic",
            "x_space": self.x_space.to_json(),
            "y_space": self.y_space.to_json(),
            "z_space": self.z_space.to_json(),
            "kernel": self.kernel.tolist(),
        }


def composition_from_json(obj: dict):
    if obj.get("rule") == "stochastic":
        return StochasticComposition(SymbolSpace.from_json(obj["x_space"]), SymbolSpace.from_json(obj["y_space"]),
                                     SymbolSpace.from_json(obj["z_space"]), np.asarray(obj["kernel"]))
    return CompositionSpec.from_json(obj)


@dataclass(frozen=True, eq=False)
class DecompositionMap:
    """Map from composites back to (x, y) pairs, possibly stochastic.

    ``kernel[z, i*|y| + j]`` is the probability that z decomposes into
    ``(x_i, y_j)``.  ``pairs`` is set only for deterministic maps.
    """

    z_space: SymbolSpace
    x_space: SymbolSpace
    y_space: SymbolSpace
    kernel: np.ndarray
    kind: str = "stochastic"
    pairs: np.ndarray | None = None

    def __post_init__(self):
        k = _check_row_stochastic(self.kernel, "decomposition")
        if k.shape != (len(self.z_space), len(self.x_space) * len(self.y_space)):
            raise LengthMismatch(f"decomposition kernel shape {k.shape} does not match the spaces")
        object.__setattr__(self, "kernel", k)
        if self.kind not in ("deterministic", "stochastic"):
            raise InvalidParams(f"unknown decomposition kind {self.kind!r}")

    @classmethod
    def deterministic(cls, z_space, x_space, y_space, pairs) -> "DecompositionMap":
        pairs = np.asarray(pairs, dtype=np.int64).reshape(len(z_space), 2)
        if np.any(pairs < 0) or np.any(pairs[:, 0] >= len(x_space)) or np.any(pairs[:, 1] >= len(y_space)):
            raise ImageOutsideTarget("decomposition table points outside the component spaces")
        k = np.zeros((len(z_space), len(x_space) * len(y_space)))
        k[np.arange(len(z_space)), pairs[:, 0] * len(y_space) + pairs[:, 1]] = 1.0
        pairs = pairs.copy()
        pairs.setflags(write=False)
        return cls(z_space, x_space, y_space, k, "deterministic", pairs)

    @classmethod
    def stochastic(cls, z_space, x_space, y_space, kernel) -> "DecompositionMap":
        return cls(z_space, x_space, y_space, kernel, "stochastic")

    def as_stochastic(self) -> "DecompositionMap":
        return DecompositionMap(self.z_space, self.x_space, self.y_space, self.kernel, "stochastic")

    def argmax_pairs(self) -> np.ndarray:
        """Most probable (x, y) index pair per composite; ties go to the lowest index."""
        flat = np.argmax(self.kernel, axis=1)
        ny = len(self.y_space)
        return np.stack([flat // ny, flat % ny], axis=1)

    def apply(self, z) -> tuple[Symbol, Symbol]:
        if self.pairs is None:
            raise InvalidParams("apply() needs a deterministic decomposition")
        i, j = self.pairs[self.z_space.index(z)]
        return self.x_space.symbols[i], self.y_space.symbols[j]

    def to_json(self) -> dict:
        out = {
            "kind": self.kind,
            "z_space": self.z_space.to_json(),
            "x_space": self.x_space.to_json(),
            "y_space": self.y_space.to_json(),
        }
        if self.kind == "deterministic":
            out["pairs"] = self.pairs.tolist()
        else:
            out["kernel"] = self.kernel.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "DecompositionMap":
        spaces = [SymbolSpace.from_json(obj[k]) for k in ("z_space", "x_space", "y_space")]
        if obj["kind"] == "deterministic":
            return cls.deterministic(*spaces, obj["pairs"])
        return cls.stochastic(*spaces, np.asarray(obj["kernel"]))


@dataclass(frozen=True)
class BijectivityResult:
    bijective: bool
    witness: dict | None = None

    def __bool__(self) -> bool:
        return self.bijective


def check_bijective(spec: CompositionSpec) -> BijectivityResult:
    seen: dict[int, tuple[int, int]] = {}
    for i in range(len(spec.x_space)):
        for j in range(len(spec.y_space)):
            z = int(spec.table[i, j])
            if z in seen:
                a, b = seen[z]
                return BijectivityResult(False, {
                    "collision": [
                        [list(spec.x_space.symbols[a]), list(spec.y_space.symbols[b])],
                        [list(spec.x_space.symbols[i]), list(spec.y_space.symbols[j])],
                    ],
                    "z": list(spec.z_space.symbols[z]),
                })
            seen[z] = (i, j)
    for k in range(len(spec.z_space)):
        if k not in seen:
            return BijectivityResult(False, {"uncovered": list(spec.z_space.symbols[k])})
    return BijectivityResult(True)


def invert_composition(spec: CompositionSpec) -> DecompositionMap:
    result = check_bijective(spec)
    if not result:
        raise NotBijective("composition is not bijective", result.witness)
    pairs = np.empty((len(spec.z_space), 2), dtype=np.int64)
    for i in range(len(spec.x_space)):
        for j in range(len(spec.y_space)):
            pairs[spec.table[i, j]] = (i, j)
    return DecompositionMap.deterministic(spec.z_space, spec.x_space, spec.y_space, pairs)


def _composition_kernel(composition) -> np.ndarray:
    return composition.kernel


def pair_cost(cost_x: CostMatrix, cost_y: CostMatrix) -> np.ndarray:
    """``out[j', j] = cost_x(x', x) + cost_y(y', y)`` over row-major pair indices."""
    nx, ny = cost_x.shape[0], cost_y.shape[0]
    xi = np.repeat(np.arange(nx), ny)
    yi = np.tile(np.arange(ny), nx)
    return cost_x.costs[np.ix_(xi, xi)] + cost_y.costs[np.ix_(yi, yi)]


def _check_cycle_spaces(composition, d: DecompositionMap, p_x, p_y, p_z, cost_x, cost_y, cost_z):
    checks = [
        (composition.x_space, d.x_space), (composition.y_space, d.y_space), (composition.z_space, d.z_space),
        (p_x.space, d.x_space), (p_y.space, d.y_space), (p_z.space, d.z_space),
        (cost_x.rows_space, d.x_space), (cost_x.cols_space, d.x_space),
        (cost_y.rows_space, d.y_space), (cost_y.cols_space, d.y_space),
        (cost_z.rows_space, d.z_space), (cost_z.cols_space, d.z_space),
    ]
    for a, b in checks:
        if a != b:
            raise SpaceMismatch("cycle loss inputs live on inconsistent spaces")


def cycle_losses(composition, d: DecompositionMap, p_x: FiniteDistribution, p_y: FiniteDistribution,
                 p_z: FiniteDistribution, cost_x: CostMatrix, cost_y: CostMatrix,
                 cost_z: CostMatrix) -> tuple[float, float]:
    """Exact (composition-cycle, decomposition-cycle) losses.

    The composition cycle sums the x and y reconstruction costs of d(c(x, y))
    under the product law; the decomposition cycle is the expected cost of
    c(d(z)) against z under ``p_z``.  Works for deterministic and stochastic
    ``composition`` and ``d`` alike.
    """
    _check_cycle_spaces(composition, d, p_x, p_y, p_z, cost_x, cost_y, cost_z)
    K = _composition_kernel(composition)
    D = d.kernel
    pxy = np.outer(p_x.probs, p_y.probs).ravel()
    M = K @ D
    c_cyc = float(np.sum(pxy[:, None] * M * pair_cost(cost_x, cost_y).T))
    N = D @ K
    d_cyc = float(np.sum(p_z.probs[:, None] * N * cost_z.costs.T))
    return c_cyc, d_cyc


def pushforward_kernel(p: FiniteDistribution, kernel: np.ndarray, target: SymbolSpace) -> FiniteDistribution:
    """Image law of ``p`` under a row-stochastic kernel."""
    k = np.asarray(kernel)
    if k.shape != (len(p.space), len(target)):
        raise SpaceMismatch("kernel shape does not match the source and target spaces")
    out = p.probs @ k
    return FiniteDistribution(target, np.clip(out, 0.0, None))


def composed_law(p_x: FiniteDistribution, p_y: FiniteDistribution, composition) -> FiniteDistribution:
    """Law of c(X, Y) for independent X ~ p_x and Y ~ p_y."""
    if p_x.space != composition.x_space or p_y.space != composition.y_space:
        raise SpaceMismatch("component laws do not match the composition's spaces")
    joint = product(p_x, p_y)
    if isinstance(composition, CompositionSpec):
        return pushforward(joint, composition.flat_table, composition.z_space)
    return pushforward_kernel(joint, composition.kernel, composition.z_space)


# --------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True, eq=False)
class Scenario:
    """A problem instance: spaces, composition, component laws and composed law.

    Any of ``spec``, ``p_x`` and ``p_y`` may be absent when a task must learn
    it.  When both component laws and the spec are present, ``p_z`` has to be
    their composed law.
    """

    name: str
    kind: str
    seed: int
    metric_kind: str
    x_space: SymbolSpace
    y_space: SymbolSpace
    z_space: SymbolSpace
    p_z: FiniteDistribution
    spec: CompositionSpec | None = None
    p_x: FiniteDistribution | None = None
    p_y: FiniteDistribution | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric_kind not in ("discrete", "l1"):
            raise InvalidParams(f"metric_kind must be 'discrete' or 'l1', got {self.metric_kind!r}")
        if self.p_z.space != self.z_space:
            raise SpaceMismatch("p_z is not over z_space")
        if self.p_x is not None and self.p_x.space != self.x_space:
            raise SpaceMismatch("p_x is not over x_space")
        if self.p_y is not None and self.p_y.space != self.y_space:
            raise SpaceMismatch("p_y is not over y_space")
        if self.spec is not None and (self.spec.x_space, self.spec.y_space, self.spec.z_space) != (
                self.x_space, self.y_space, self.z_space):
            raise SpaceMismatch("spec spaces differ from the scenario spaces")
        if self.spec is not None and self.p_x is not None and self.p_y is not None:
            gap = tv_distance(self.p_z, composed_law(self.p_x, self.p_y, self.spec))
            if gap > SCENARIO_TOL:
                raise InvalidParams(f"p_z is inconsistent with the components (TV {gap:.3e})")

    def replace(self, **changes) -> "Scenario":
        fields = {k: getattr(self, k) for k in (
            "name", "kind", "seed", "metric_kind", "x_space", "y_space", "z_space",
            "p_z", "spec", "p_x", "p_y", "params")}
        fields.update(changes)
        return Scenario(**fields)

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "name": self.name,
            "kind": self.kind,
            "seed": self.seed,
            "metric_kind": self.metric_kind,
            "params": self.params,
            "spaces": {"x": self.x_space.to_json(), "y": self.y_space.to_json(), "z": self.z_space.to_json()},
            "spec": None if self.spec is None else self.spec.to_json(),
            "p_x": None if self.p_x is None else self.p_x.to_json(),
            "p_y": None if self.p_y is None else self.p_y.to_json(),
            "p_z": self.p_z.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Scenario":
        spaces = obj["spaces"]
        opt = lambda key: None if obj.get(key) is None else FiniteDistribution.from_json(obj[key])  # noqa: E731
        return cls(
            name=obj["name"], kind=obj["kind"], seed=int(obj["seed"]), metric_kind=obj["metric_kind"],
            x_space=SymbolSpace.from_json(spaces["x"]), y_space=SymbolSpace.from_json(spaces["y"]),
            z_space=SymbolSpace.from_json(spaces["z"]), p_z=FiniteDistribution.from_json(obj["p_z"]),
            spec=None if obj.get("spec") is None else CompositionSpec.from_json(obj["spec"]),
            p_x=opt("p_x"), p_y=opt("p_y"), params=obj.get("params", {}),
        )


def scenario_from_parts(name, kind, seed, metric_kind, spec, p_x, p_y, params=None) -> Scenario:
    return Scenario(name, kind, seed, metric_kind, spec.x_space, spec.y_space, spec.z_space,
                    composed_law(p_x, p_y, spec), spec, p_x, p_y, dict(params or {}))


@dataclass(frozen=True, eq=False)
class Solution:
    """Candidate answer to a task; ``None`` fragments fall back to the scenario's."""

    p_x: FiniteDistribution | None = None
    p_y: FiniteDistribution | None = None
    composition: CompositionSpec | StochasticComposition | None = None
    decomposition: DecompositionMap | None = None
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "p_x": None if self.p_x is None else self.p_x.to_json(),
            "p_y": None if self.p_y is None else self.p_y.to_json(),
            "composition": None if self.composition is None else self.composition.to_json(),
            "decomposition": None if self.decomposition is None else self.decomposition.to_json(),
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Solution":
        opt = lambda key: None if obj.get(key) is None else FiniteDistribution.from_json(obj[key])  # noqa: E731
        return cls(
            p_x=opt("p_x"), p_y=opt("p_y"),
            composition=None if obj.get("composition") is None else composition_from_json(obj["composition"]),
            decomposition=None if obj.get("decomposition") is None else DecompositionMap.from_json(obj["decomposition"]),
            provenance=dict(obj.get("provenance", {})),
        )


@lru_cache(maxsize=1)
def _glyph_tables() -> dict:
    text = resources.files("decomp_lab").joinpath("data/glyphs.json").read_text()
    return json.loads(text)


def glyph_family(grid: str, family: str) -> list[Symbol]:
    """Built-in glyphs of one family, flattened row-major."""
    tables = _glyph_tables()
    if grid not in ("micro_mb", "micro_bb"):
        raise InvalidParams(f"no glyph tables for {grid!r}")
    fams = tables[grid]["families"]
    if family not in fams:
        raise InvalidParams(f"unknown glyph_family {family!r} for {grid}; have {sorted(fams)}")
    return [tuple(v for row in g for v in row) for g in fams[family]]


def _law(space: SymbolSpace, spec: Any, rng: np.random.Generator, field_name: str) -> FiniteDistribution:
    if spec is None or spec == "uniform":
        return uniform(space)
    if spec == "random":
        return new_distribution(space, rng.dirichlet(np.ones(len(space))))
    try:
        return new_distribution(space, np.asarray(spec, dtype=np.float64))
    except (ValueError, TypeError) as exc:
        raise InvalidParams(f"{field_name}: {exc}") from exc


def _backgrounds(params: dict, dim: int) -> SymbolSpace:
    values = params.get("backgrounds", [1, 2])
    if not values or len(set(values)) != len(values):
        raise InvalidParams("backgrounds: need distinct values")
    if any(int(v) not in (1, 2) for v in values):
        raise InvalidParams("backgrounds: values must lie in {1, 2}")
    return SymbolSpace(tuple((int(v),) * dim for v in values), 3)


def _check_glyphs(glyphs, size: int, field_name: str) -> list[Symbol]:
    out = []
    for g in glyphs:
        flat = tuple(int(v) for v in np.asarray(g).ravel())
        if len(flat) != size:
            raise InvalidParams(f"{field_name}: glyph has {len(flat)} cells, expected {size}")
        if any(v not in (0, 3) for v in flat):
            raise InvalidParams(f"{field_name}: glyph entries must be 0 or 3")
        out.append(flat)
    if not out or len(set(out)) != len(out):
        raise InvalidParams(f"{field_name}: need distinct glyphs")
    return out


def _micro_mb(params: dict, rng) -> tuple[CompositionSpec, FiniteDistribution, FiniteDistribution]:
    bg = _backgrounds(params, 9)
    if "glyphs" in params:
        glyphs = _check_glyphs(params["glyphs"], 9, "glyphs")
    else:
        glyphs = glyph_family("micro_mb", params.get("glyph_family", "one"))
    for g in glyphs:
        if 0 not in g:
            raise InvalidParams("glyphs: a glyph covering all 9 cells hides the background")
    fg = SymbolSpace(tuple(glyphs), 3)
    spec = CompositionSpec.overlay(bg, fg)
    p_x = _law(bg, params.get("bg_probs"), rng, "bg_probs")
    p_y = _law(fg, params.get("glyph_probs"), rng, "glyph_probs")
    return spec, p_x, p_y


QUADRANTS = ((0, 0), (0, 2), (2, 0), (2, 2))


def _place(glyph: Symbol, quadrant: int) -> Symbol:
    grid = np.zeros((4, 4), dtype=np.int64)
    r, c = QUADRANTS[quadrant]
    grid[r:r + 2, c:c + 2] = np.asarray(glyph).reshape(2, 2)
    return tuple(int(v) for v in grid.ravel())


def _micro_bb(params: dict, rng):
    bg = _backgrounds(params, 16)
    if "glyphs" in params:
        glyphs = _check_glyphs(params["glyphs"], 4, "glyphs")
    else:
        glyphs = glyph_family("micro_bb", params.get("glyph_family", "one"))
    for g in glyphs:
        if 3 not in g:
            raise InvalidParams("glyphs: an empty glyph makes the quadrant unrecoverable")
    fg = SymbolSpace(tuple(_place(g, q) for g in glyphs for q in range(4)), 3)
    glyph_law = _law(SymbolSpace.integers(len(glyphs)), params.get("glyph_probs"), rng, "glyph_probs")
    quad_law = _law(SymbolSpace.integers(4), params.get("quadrant_probs"), rng, "quadrant_probs")
    p_y = new_distribution(fg, np.outer(glyph_law.probs, quad_law.probs).ravel())
    p_x = _law(bg, params.get("bg_probs"), rng, "bg_probs")
    return CompositionSpec.overlay(bg, fg), p_x, p_y


def _modadd(params: dict, rng):
    K = params.get("K", 3)
    if not isinstance(K, int) or K < 1:
        raise InvalidParams("K: must be a positive integer")
    spec = CompositionSpec.modadd(K)
    return spec, _law(spec.x_space, params.get("p_x"), rng, "p_x"), _law(spec.y_space, params.get("p_y"), rng, "p_y")


def _custom(params: dict, rng):
    rule = params.get("rule")
    if rule == "affine":
        nx, ny = int(params.get("x_size", 3)), int(params.get("y_size", 2))
        spec = CompositionSpec.affine(int(params.get("a", 1)), int(params.get("b", nx)),
                                      SymbolSpace.integers(nx), SymbolSpace.integers(ny))
    elif rule == "modadd":
        return _modadd(params, rng)
    elif rule == "random_bijective":
        nx, ny = int(params.get("x_size", 3)), int(params.get("y_size", 3))
        if nx < 1 or ny < 1:
            raise InvalidParams("x_size/y_size: must be >= 1")
        table = rng.permutation(nx * ny).reshape(nx, ny)
        spec = CompositionSpec(SymbolSpace.integers(nx), SymbolSpace.integers(ny),
                               SymbolSpace.integers(nx * ny), table, "table")
    elif rule == "table":
        try:
            table = np.asarray(params["table"], dtype=np.int64)
        except KeyError:
            raise InvalidParams("table: missing") from None
        if table.ndim != 2:
            raise InvalidParams("table: must be a 2-d list")
        nz = int(params.get("z_size", int(table.max()) + 1))
        try:
            spec = CompositionSpec(SymbolSpace.integers(table.shape[0]), SymbolSpace.integers(table.shape[1]),
                                   SymbolSpace.integers(nz), table, "table")
        except (ValueError, IndexError) as exc:
            raise InvalidParams(f"table: {exc}") from exc
    else:
        raise InvalidParams(f"rule: unknown custom rule {rule!r}")
    return spec, _law(spec.x_space, params.get("p_x"), rng, "p_x"), _law(spec.y_space, params.get("p_y"), rng, "p_y")


_BUILDERS = {"micro_mb": _micro_mb, "micro_bb": _micro_bb, "modadd": _modadd, "custom": _custom}


def make_scenario(kind: str, params: dict | None = None, seed: int = 0, *,
                  name: str | None = None, metric_kind: str = "discrete") -> Scenario:
    """Build a scenario deterministically from ``(kind, params, seed)``.

    Probability fields accept a weight list, ``"uniform"`` (default) or
    ``"random"`` (flat Dirichlet draw from the seeded generator).
    """
    if kind not in _BUILDERS:
        raise InvalidParams(f"kind: expected one of {SCENARIO_KINDS}, got {kind!r}")
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    spec, p_x, p_y = _BUILDERS[kind](params, rng)
    return scenario_from_parts(name or kind, kind, int(seed), metric_kind, spec, p_x, p_y, params)
