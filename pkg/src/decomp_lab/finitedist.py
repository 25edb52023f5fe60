"""Finite symbol spaces, probability vectors over them, and ground metrics.

Symbols are tuples of nonnegative integers; a micro-grid is flattened row-major
into one symbol.  Everything here is immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ImageOutsideTarget,
    InvalidDistribution,
    InvalidParams,
    InvalidSpace,
    LengthMismatch,
    NegativeWeight,
    SpaceMismatch,
    SymbolNotInSpace,
    UnmappedSymbol,
    ZeroTotalMass,
)

MASS_TOL = 1e-12

Symbol = tuple[int, ...]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SymbolSpace:
    """Ordered finite set of equal-length integer vectors."""

    symbols: tuple[Symbol, ...]
    value_cap: int
    labels: tuple[str, ...] | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        syms = tuple(tuple(int(v) for v in s) for s in self.symbols)
        if not syms:
            raise InvalidSpace("a symbol space needs at least one symbol")
        dim = len(syms[0])
        if dim < 1:
            raise InvalidSpace("symbols must have dimension >= 1")
        cap = int(self.value_cap)
        index = {}
        for i, s in enumerate(syms):
            if len(s) != dim:
                raise InvalidSpace(f"symbol {i} has {len(s)} entries, expected {dim}")
            if min(s) < 0 or max(s) > cap:
                raise InvalidSpace(f"symbol {s} has entries outside [0, {cap}]")
            if s in index:
                raise InvalidSpace(f"duplicate symbol {s}")
            index[s] = i
        if self.labels is not None and len(self.labels) != len(syms):
            raise InvalidSpace("labels must match symbols one-to-one")
        object.__setattr__(self, "symbols", syms)
        object.__setattr__(self, "value_cap", cap)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        object.__setattr__(self, "_index", index)

    @classmethod
    def scalar(cls, values: Iterable[int], value_cap: int | None = None) -> "SymbolSpace":
        vals = [int(v) for v in values]
        return cls(tuple((v,) for v in vals), max(vals) if value_cap is None else value_cap)

    @classmethod
    def integers(cls, n: int) -> "SymbolSpace":
        """The scalar space {0, ..., n-1}."""
        return cls.scalar(range(n))

    @property
    def dim(self) -> int:
        return len(self.symbols[0])

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.symbols, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def __contains__(self, symbol) -> bool:
        return _as_symbol(symbol) in self._index

    def __eq__(self, other) -> bool:
        if not isinstance(other, SymbolSpace):
            return NotImplemented
        return self.symbols == other.symbols and self.value_cap == other.value_cap

    def __hash__(self) -> int:
        return hash((self.symbols, self.value_cap))

    def index(self, symbol) -> int:
        try:
            return self._index[_as_symbol(symbol)]
        except KeyError:
            raise SymbolNotInSpace(f"symbol {symbol!r} is not in the space") from None

    def find(self, symbol) -> int | None:
        return self._index.get(_as_symbol(symbol))

    def to_json(self) -> dict:
        out = {"dim": self.dim, "value_cap": self.value_cap, "symbols": [list(s) for s in self.symbols]}
        if self.labels is not None:
            out["labels"] = list(self.labels)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SymbolSpace":
        space = cls(tuple(tuple(s) for s in obj["symbols"]), obj["value_cap"], obj.get("labels"))
        if "dim" in obj and obj["dim"] != space.dim:
            raise InvalidSpace(f"declared dim {obj['dim']} does not match symbols ({space.dim})")
        return space


def _as_symbol(symbol) -> Symbol:
    if isinstance(symbol, (int, np.integer)):
        return (int(symbol),)
    return tuple(int(v) for v in symbol)


def product_space(a: SymbolSpace, b: SymbolSpace) -> SymbolSpace:
    """Concatenated symbols, row-major (first factor major)."""
    syms = tuple(s + t for s in a.symbols for t in b.symbols)
    return SymbolSpace(syms, max(a.value_cap, b.value_cap))


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Probability vector over a SymbolSpace.

    The constructor validates but never rescales, so a stored vector
    round-trips bit for bit; use :func:`new_distribution` to normalize weights.
    """

    space: SymbolSpace
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.shape[0] != len(self.space):
            raise LengthMismatch(f"expected {len(self.space)} probabilities, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)):
            raise InvalidDistribution("probabilities must be finite")
        if np.any(probs < 0):
            raise NegativeWeight("probabilities must be nonnegative")
        total = float(np.sum(probs))
        if abs(total - 1.0) > MASS_TOL:
            raise InvalidDistribution(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "probs", _frozen(probs))

    def __len__(self) -> int:
        return len(self.space)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    def prob(self, symbol) -> float:
        return float(self.probs[self.space.index(symbol)])

    def allclose(self, other: "FiniteDistribution", atol: float = 1e-12) -> bool:
        return self.space == other.space and bool(np.allclose(self.probs, other.probs, rtol=0, atol=atol))

    def to_json(self) -> dict:
        out = self.space.to_json()
        out["probs"] = [float(x) for x in self.probs]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "FiniteDistribution":
        return cls(SymbolSpace.from_json(obj), np.asarray(obj["probs"], dtype=np.float64))


def new_distribution(space: SymbolSpace, weights: Sequence[float]) -> FiniteDistribution:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != len(space):
        raise LengthMismatch(f"expected {len(space)} weights, got shape {w.shape}")
    if np.any(w < 0):
        raise NegativeWeight("weights must be nonnegative")
    total = float(np.sum(w))
    if not total > 0:
        raise ZeroTotalMass("weights have zero total mass")
    return FiniteDistribution(space, w / total)


def uniform(space: SymbolSpace) -> FiniteDistribution:
    return new_distribution(space, np.ones(len(space)))


def point_mass(space: SymbolSpace, index: int) -> FiniteDistribution:
    w = np.zeros(len(space))
    w[index] = 1.0
    return FiniteDistribution(space, w)


def product(p: FiniteDistribution, q: FiniteDistribution) -> FiniteDistribution:
    space = product_space(p.space, q.space)
    return FiniteDistribution(space, np.outer(p.probs, q.probs).ravel())


def pushforward(
    p: FiniteDistribution,
    f: Callable[[Symbol], Symbol] | Sequence[int] | np.ndarray,
    target: SymbolSpace,
) -> FiniteDistribution:
    """Image law of ``p`` under ``f``.

    ``f`` is either a callable on symbols or an index table giving the target
    index of every source index (negative entries mean "unmapped").
    """
    if callable(f):
        idx = np.empty(len(p.space), dtype=np.int64)
        for i, s in enumerate(p.space.symbols):
            try:
                image = f(s)
            except KeyError as exc:
                raise UnmappedSymbol(f"map undefined at {s}") from exc
            if image is None:
                raise UnmappedSymbol(f"map undefined at {s}")
            j = target.find(image)
            if j is None:
                raise ImageOutsideTarget(f"image {image} of {s} is outside the target space")
            idx[i] = j
    else:
        idx = np.asarray(f, dtype=np.int64)
        if idx.shape != (len(p.space),):
            raise LengthMismatch("index table must have one entry per source symbol")
        if np.any(idx < 0):
            raise UnmappedSymbol(f"map undefined at source index {int(np.flatnonzero(idx < 0)[0])}")
        if np.any(idx >= len(target)):
            raise ImageOutsideTarget("index table points outside the target space")
    out = np.zeros(len(target))
    np.add.at(out, idx, p.probs)
    return FiniteDistribution(target, out)


def tv_distance(p: FiniteDistribution, q: FiniteDistribution) -> float:
    if p.space != q.space:
        raise SpaceMismatch("total variation needs both laws on the same space")
    return 0.5 * float(np.sum(np.abs(p.probs - q.probs)))


def tv_distance_aligned(p: FiniteDistribution, q: FiniteDistribution) -> float:
    """Total variation after embedding both laws into the union of their supports' symbols."""
    if p.space == q.space:
        return tv_distance(p, q)
    if p.space.dim != q.space.dim:
        raise SpaceMismatch("cannot align spaces of different dimension")
    mass: dict[Symbol, float] = {}
    for s, w in zip(p.space.symbols, p.probs):
        mass[s] = mass.get(s, 0.0) + float(w)
    for s, w in zip(q.space.symbols, q.probs):
        mass[s] = mass.get(s, 0.0) - float(w)
    return 0.5 * float(sum(abs(v) for v in mass.values()))


@dataclass(frozen=True, eq=False)
class CostMatrix:
    rows_space: SymbolSpace
    cols_space: SymbolSpace
    costs: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=np.float64)
        if c.shape != (len(self.rows_space), len(self.cols_space)):
            raise LengthMismatch(f"cost shape {c.shape} does not match the spaces")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise InvalidParams("costs must be finite and nonnegative")
        if self.kind not in ("discrete", "l1", "custom"):
            raise InvalidParams(f"unknown cost kind {self.kind!r}")
        object.__setattr__(self, "costs", _frozen(c))

    @property
    def shape(self) -> tuple[int, int]:
        return self.costs.shape

    def is_metric(self, atol: float = 1e-12) -> bool:
        """Zero diagonal, symmetry and the triangle inequality (square costs only)."""
        c = self.costs
        if self.rows_space != self.cols_space:
            return False
        if np.any(np.abs(np.diag(c)) > atol) or np.any(np.abs(c - c.T) > atol):
            return False
        off = ~np.eye(len(c), dtype=bool)
        if np.any(c[off] <= 0):
            return False
        # c[i,k] <= c[i,j] + c[j,k] for all i, j, k
        via = (c[:, :, None] + c[None, :, :]).min(axis=1)
        return bool(np.all(c <= via + atol))

    def to_json(self) -> dict:
        return {"kind": self.kind, "costs": self.costs.tolist()}


METRIC_CHECK_LIMIT = 64


def ground_metric(space: SymbolSpace, kind: str, cols_space: SymbolSpace | None = None) -> CostMatrix:
    """Built-in ground metric: ``discrete`` (0/1) or ``l1`` on the symbol vectors."""
    cols = space if cols_space is None else cols_space
    if kind == "discrete":
        a = space.array
        b = cols.array
        costs = np.any(a[:, None, :] != b[None, :, :], axis=2).astype(np.float64)
    elif kind == "l1":
        if space.dim != cols.dim:
            raise SpaceMismatch("l1 cost needs equal symbol dimensions")
        costs = np.abs(space.array[:, None, :] - cols.array[None, :, :]).sum(axis=2).astype(np.float64)
    else:
        raise InvalidParams(f"unknown metric kind {kind!r}; expected 'discrete' or 'l1'")
    cm = CostMatrix(space, cols, costs, kind)
    if cols_space is None and len(space) <= METRIC_CHECK_LIMIT and not cm.is_metric():
        raise AssertionError(f"built-in {kind} cost failed the metric axioms")
    return cm
