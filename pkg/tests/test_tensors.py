"""Symmetric tensor storage and polarization identities."""

import itertools
import math

import numpy as np
import pytest

from nlhomog.tensors import (
    SymTensor,
    canonical_count,
    canonical_indices,
    polarize,
    symtensor_from_diagonal,
)


def random_symmetric_full(rng, dim, order):
    arr = rng.standard_normal((dim,) * order)
    sym = np.zeros_like(arr)
    for perm in itertools.permutations(range(order)):
        sym += np.transpose(arr, perm)
    return sym / math.factorial(order)


def test_canonical_count_matches_enumeration():
    for dim in (1, 2, 3):
        for order in (1, 2, 3, 4, 5):
            assert len(canonical_indices(dim, order)) == canonical_count(dim, order)
    assert canonical_count(2, 3) == 4
    assert canonical_count(3, 2) == 6


def test_full_roundtrip_and_entry_lookup():
    rng = np.random.default_rng(11)
    for dim in (1, 2, 3):
        for order in (2, 3, 4):
            arr = random_symmetric_full(rng, dim, order)
            t = SymTensor.from_full(arr)
            assert np.abs(t.full() - arr).max() < 1e-14
            idx = (dim - 1,) * order
            assert t.entry(*idx) == pytest.approx(arr[idx], abs=1e-14)


def test_from_full_rejects_asymmetry_unless_told():
    arr = np.array([[1.0, 2.0], [3.0, 4.0]])
    with pytest.raises(ValueError):
        SymTensor.from_full(arr)
    t = SymTensor.from_full(arr, symmetrize=True)
    assert t.entry(0, 1) == pytest.approx(2.5)


def test_apply_matches_einsum():
    rng = np.random.default_rng(5)
    arr = random_symmetric_full(rng, 3, 4)
    t = SymTensor.from_full(arr)
    vs = rng.standard_normal((4, 3))
    want = np.einsum("abcd,a,b,c,d->", arr, *vs)
    assert t.apply(*vs) == pytest.approx(want, rel=1e-13)
    partial = t.apply(vs[0], vs[1])
    want_partial = np.einsum("abcd,a,b->cd", arr, vs[0], vs[1])
    assert np.abs(partial - want_partial).max() < 1e-13


def test_polarize_recovers_symmetric_forms():
    # The subset-sum formula must invert "form -> diagonal" exactly.
    rng = np.random.default_rng(77)
    for dim in (1, 2, 3):
        for order in (1, 2, 3, 4, 5):
            arr = random_symmetric_full(rng, dim, order)
            t = SymTensor.from_full(arr)

            def diag(v):
                return t.apply(*([v] * order))

            vecs = rng.standard_normal((order, dim))
            scale = max(np.abs(arr).max(), 1.0)
            got = polarize(diag, vecs)
            want = t.apply(*vecs)
            assert abs(got - want) <= 1e-12 * scale * 50


def test_polarize_is_componentwise_for_array_outputs():
    rng = np.random.default_rng(3)
    a = random_symmetric_full(rng, 2, 3)
    b = random_symmetric_full(rng, 2, 3)

    def diag(v):
        va = SymTensor.from_full(a).apply(v, v, v)
        vb = SymTensor.from_full(b).apply(v, v, v)
        return np.array([va, vb])

    vecs = rng.standard_normal((3, 2))
    got = polarize(diag, vecs)
    assert got[0] == pytest.approx(SymTensor.from_full(a).apply(*vecs), abs=1e-12)
    assert got[1] == pytest.approx(SymTensor.from_full(b).apply(*vecs), abs=1e-12)


def test_symtensor_from_diagonal_and_cache_reuse():
    rng = np.random.default_rng(21)
    arr = random_symmetric_full(rng, 2, 4)
    truth = SymTensor.from_full(arr)
    calls = []

    def diag(v):
        calls.append(tuple(v))
        return truth.apply(v, v, v, v)

    cache = {}
    rebuilt = symtensor_from_diagonal(diag, dim=2, order=4, cache=cache)
    assert np.abs(rebuilt.full() - arr).max() < 1e-10
    first_count = len(calls)
    # Same cache, same tensor again: every subset sum is already memoized.
    symtensor_from_diagonal(diag, dim=2, order=4, cache=cache)
    assert len(calls) == first_count
    assert first_count == len(cache)


def test_validation_errors():
    with pytest.raises(ValueError):
        SymTensor(2, 2, np.array([1.0, 2.0]))  # needs 3 canonical entries
    with pytest.raises(ValueError):
        SymTensor(2, 2, np.array([1.0, np.nan, 2.0]))
    with pytest.raises(ValueError):
        polarize(lambda v: 0.0, [])
    t = SymTensor(2, 2, np.array([1.0, 0.0, 2.0]))
    with pytest.raises(ValueError):
        t.apply(np.eye(2)[0], np.eye(2)[1], np.eye(2)[0])
