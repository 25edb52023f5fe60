import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from decomp_lab.errors import (
    ImageOutsideTarget,
    InvalidSpace,
    LengthMismatch,
    NegativeWeight,
    SpaceMismatch,
    SymbolNotInSpace,
    UnmappedSymbol,
    ZeroTotalMass,
)
from decomp_lab.finitedist import (
    FiniteDistribution,
    SymbolSpace,
    ground_metric,
    new_distribution,
    point_mass,
    product,
    product_space,
    pushforward,
    tv_distance,
    tv_distance_aligned,
    uniform,
)

from .conftest import distributions, weights


def test_normalizes_uniform_weights():
    p = new_distribution(SymbolSpace.integers(2), [1, 1])
    assert p.probs.tolist() == [0.5, 0.5]


def test_normalizes_general_weights():
    p = new_distribution(SymbolSpace.integers(3), [5, 3, 2])
    np.testing.assert_allclose(p.probs, [0.5, 0.3, 0.2], atol=1e-15)


@pytest.mark.parametrize("w, exc", [([1, -1], NegativeWeight), ([0, 0], ZeroTotalMass), ([1, 2, 3], LengthMismatch)])
def test_new_distribution_rejects(w, exc):
    with pytest.raises(exc):
        new_distribution(SymbolSpace.integers(2), w)


def test_space_invariants():
    with pytest.raises(InvalidSpace):
        SymbolSpace(((0,), (0,)), 1)
    with pytest.raises(InvalidSpace):
        SymbolSpace(((0, 1), (1,)), 1)
    with pytest.raises(InvalidSpace):
        SymbolSpace(((0,), (5,)), 3)
    s = SymbolSpace(((2, 0), (0, 1)), 3)
    assert s.index((0, 1)) == 1 and s.dim == 2
    with pytest.raises(SymbolNotInSpace):
        s.index((1, 1))


def test_product_row_major():
    p = new_distribution(SymbolSpace.integers(2), [0.5, 0.5])
    q = new_distribution(SymbolSpace.integers(2), [0.6, 0.4])
    pq = product(p, q)
    np.testing.assert_allclose(pq.probs, [0.3, 0.2, 0.3, 0.2], atol=1e-15)
    assert pq.space.symbols == ((0, 0), (0, 1), (1, 0), (1, 1))


def test_product_point_mass_embeds_q():
    q = new_distribution(SymbolSpace.integers(3), [0.2, 0.3, 0.5])
    pq = product(point_mass(SymbolSpace.integers(2), 1), q)
    np.testing.assert_array_equal(pq.probs, [0, 0, 0, 0.2, 0.3, 0.5])


def test_product_of_uniforms_is_uniform():
    pq = product(uniform(SymbolSpace.integers(2)), uniform(SymbolSpace.integers(3)))
    np.testing.assert_allclose(pq.probs, np.full(6, 1 / 6), atol=1e-15)


def test_pushforward_mod2():
    p = new_distribution(SymbolSpace.integers(3), [0.5, 0.3, 0.2])
    q = pushforward(p, lambda s: (s[0] % 2,), SymbolSpace.integers(2))
    np.testing.assert_allclose(q.probs, [0.7, 0.3], atol=1e-15)


def test_pushforward_identity():
    p = new_distribution(SymbolSpace.integers(4), [1, 2, 3, 4])
    assert np.array_equal(pushforward(p, lambda s: s, p.space).probs, p.probs)


def test_pushforward_composition_enumerated():
    # brute force: P(z) = sum over (x, y) with x + 2y = z
    px, py = [0.5, 0.5], [0.6, 0.4]
    expect = np.zeros(4)
    for x in range(2):
        for y in range(2):
            expect[x + 2 * y] += px[x] * py[y]
    joint = product(new_distribution(SymbolSpace.integers(2), px), new_distribution(SymbolSpace.integers(2), py))
    q = pushforward(joint, lambda s: (s[0] + 2 * s[1],), SymbolSpace.integers(4))
    np.testing.assert_allclose(q.probs, expect, atol=1e-15)
    np.testing.assert_allclose(q.probs, [0.3, 0.3, 0.2, 0.2], atol=1e-15)


def test_pushforward_errors():
    p = uniform(SymbolSpace.integers(3))
    with pytest.raises(UnmappedSymbol):
        pushforward(p, {(0,): (0,), (1,): (1,)}.__getitem__, SymbolSpace.integers(2))
    with pytest.raises(ImageOutsideTarget):
        pushforward(p, lambda s: (s[0] + 5,), SymbolSpace.integers(3))


def test_tv_examples():
    s = SymbolSpace.integers(2)
    assert tv_distance(point_mass(s, 0), point_mass(s, 1)) == 1.0
    p = new_distribution(s, [0.5, 0.5])
    assert tv_distance(p, p) == 0.0
    assert abs(tv_distance(p, new_distribution(s, [0.6, 0.4])) - 0.1) < 1e-15
    with pytest.raises(SpaceMismatch):
        tv_distance(p, uniform(SymbolSpace.integers(3)))


def test_tv_aligned_over_symbol_union():
    a = new_distribution(SymbolSpace.scalar([0, 1]), [0.5, 0.5])
    b = new_distribution(SymbolSpace.scalar([1, 2]), [0.5, 0.5])
    assert abs(tv_distance_aligned(a, b) - 0.5) < 1e-15


def test_ground_metric_examples():
    d = ground_metric(SymbolSpace.integers(2), "discrete")
    assert d.costs.tolist() == [[0, 1], [1, 0]]
    l1 = ground_metric(SymbolSpace.scalar([0, 2]), "l1")
    assert l1.costs.tolist() == [[0, 2], [2, 0]]


def test_l1_metric_on_grids():
    s = SymbolSpace(((0, 0, 1), (2, 0, 3), (1, 1, 1)), 3)
    c = ground_metric(s, "l1").costs
    for i, a in enumerate(s.symbols):
        for j, b in enumerate(s.symbols):
            assert c[i, j] == sum(abs(u - v) for u, v in zip(a, b))


@given(st.integers(1, 40), st.sampled_from(["discrete", "l1"]), st.integers(0, 2**31))
def test_ground_metric_axioms(n, kind, seed):
    rng = np.random.default_rng(seed)
    grid = rng.integers(0, 4, size=(3 * n, 3))
    syms = tuple(dict.fromkeys(map(tuple, grid)))[:n]
    space = SymbolSpace(syms, 3)
    c = ground_metric(space, kind)
    C = c.costs
    assert np.all(np.diag(C) == 0)
    assert np.array_equal(C, C.T)
    # triangle: C[i, k] <= C[i, j] + C[j, k]
    assert np.all(C[:, None, :] <= C[:, :, None] + C[None, :, :] + 1e-12)
    assert c.is_metric()


@given(distributions(max_n=10), st.data())
def test_normalization_invariant(p, data):
    assert abs(p.probs.sum() - 1) <= 1e-12 and p.probs.min() >= 0
    assert p.support.size > 0


@given(st.integers(1, 10), st.integers(1, 6), st.data())
def test_pushforward_mass_and_linearity(n, m, data):
    space = SymbolSpace.integers(n)
    p = new_distribution(space, data.draw(weights(n)))
    q = new_distribution(space, data.draw(weights(n)))
    table = np.array(data.draw(st.lists(st.integers(0, m - 1), min_size=n, max_size=n)))
    a = data.draw(st.floats(0, 1))
    target = SymbolSpace.integers(m)
    fp, fq = pushforward(p, table, target), pushforward(q, table, target)
    assert abs(fp.probs.sum() - p.probs.sum()) <= 1e-12
    mix = FiniteDistribution(space, a * p.probs + (1 - a) * q.probs)
    np.testing.assert_allclose(pushforward(mix, table, target).probs, a * fp.probs + (1 - a) * fq.probs, atol=1e-14)


@given(st.integers(1, 12), st.data())
def test_tv_is_metric(n, data):
    space = SymbolSpace.integers(n)
    p, q, r = (data.draw(distributions(space=space)) for _ in range(3))
    assert tv_distance(p, q) == tv_distance(q, p)
    assert tv_distance(p, p) == 0.0
    if tv_distance(p, q) == 0.0:
        np.testing.assert_array_equal(p.probs, q.probs)
    assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-15
    assert 0.0 <= tv_distance(p, q) <= 1.0


def test_json_roundtrip_is_exact():
    space = product_space(SymbolSpace(((1, 2), (0, 3)), 3), SymbolSpace.integers(3))
    p = new_distribution(space, np.random.default_rng(0).random(len(space)))
    text = json.dumps(p.to_json())
    back = FiniteDistribution.from_json(json.loads(text))
    assert back.space == space and np.array_equal(back.probs, p.probs)
    assert json.dumps(back.to_json()) == text
