"""Symmetric tensors in canonical storage and polarization of diagonals.

A symmetric order-n tensor on R^d is determined by its entries at
nondecreasing multi-indices; there are C(d+n-1, n) of them.  ``SymTensor``
keeps exactly those (plus a cached full array for contractions).

``polarize`` recovers the full multilinear form from its diagonal
phi(v) = Phi(v, ..., v) through the signed subset-sum formula

    Phi(v_1, .., v_n) = (1/n!) sum_{A nonempty subset} (-1)^(n-|A|)
                         phi(sum_{j in A} v_j),

which is exact for polynomials, no finite differencing involved.  The
diagonal map may return scalars or arrays (polarization acts
componentwise), which is how vector-valued flux diagonals are expanded
into derivative tensors of the effective Lagrangian.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


def canonical_indices(dim: int, order: int):
    """Nondecreasing multi-indices of the given order, lexicographic."""
    return tuple(itertools.combinations_with_replacement(range(dim), order))


def canonical_count(dim: int, order: int) -> int:
    return math.comb(dim + order - 1, order)


@dataclass(frozen=True)
class SymTensor:
    """Fully symmetric tensor; ``entries`` follow ``canonical_indices``."""

    dim: int
    order: int
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.dim < 1 or self.order < 1:
            raise ValueError("SymTensor needs dim >= 1 and order >= 1")
        e = np.ascontiguousarray(self.entries, dtype=np.float64)
        expected = canonical_count(self.dim, self.order)
        if e.shape != (expected,):
            raise ValueError(
                f"order-{self.order} tensor on R^{self.dim} stores "
                f"{expected} canonical entries, got shape {e.shape}"
            )
        if not np.all(np.isfinite(e)):
            raise ValueError("tensor entries must be finite")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @classmethod
    def from_full(cls, arr, symmetrize: bool = False, tol: float = 1e-10):
        """Build from a full (d,)*n array, checking (or forcing) symmetry."""
        arr = np.asarray(arr, dtype=float)
        order = arr.ndim
        dim = arr.shape[0]
        if arr.shape != (dim,) * order:
            raise ValueError("full tensor must be square in every axis")
        if symmetrize:
            sym = np.zeros_like(arr)
            for perm in itertools.permutations(range(order)):
                sym += np.transpose(arr, perm)
            arr = sym / math.factorial(order)
        else:
            for perm in itertools.permutations(range(order)):
                if np.abs(arr - np.transpose(arr, perm)).max() > tol:
                    raise ValueError("full tensor is not symmetric within tol")
        entries = np.array([arr[idx] for idx in canonical_indices(dim, order)])
        return cls(dim, order, entries)

    def asymmetry_of(self, arr) -> float:
        """Largest deviation of ``arr`` from its own symmetrization."""
        arr = np.asarray(arr, dtype=float)
        worst = 0.0
        for perm in itertools.permutations(range(arr.ndim)):
            worst = max(worst, float(np.abs(arr - np.transpose(arr, perm)).max()))
        return worst

    def full(self) -> np.ndarray:
        """Materialize the full (d,)*order array."""
        out = np.zeros((self.dim,) * self.order)
        for value, idx in zip(self.entries, canonical_indices(self.dim, self.order)):
            for perm in set(itertools.permutations(idx)):
                out[perm] = value
        return out

    def apply(self, *vectors) -> np.ndarray | float:
        """Contract leading slots with the given vectors."""
        if len(vectors) > self.order:
            raise ValueError("more vectors than tensor slots")
        out = self.full()
        for v in vectors:
            out = np.tensordot(out, np.asarray(v, dtype=float), axes=([0], [0]))
        return float(out) if out.ndim == 0 else out

    def entry(self, *idx) -> float:
        return float(self.full()[tuple(idx)])


def polarize(phi, vectors):
    """Evaluate the symmetric multilinear form underlying the diagonal phi.

    ``vectors`` is the length-n argument list; phi maps a single vector to a
    scalar or array.  Exact (up to round-off) whenever phi really is the
    diagonal of an n-linear form.
    """
    vectors = [np.asarray(v, dtype=float) for v in vectors]
    n = len(vectors)
    if n == 0:
        raise ValueError("polarization needs at least one vector")
    total = None
    for size in range(1, n + 1):
        sign = (-1) ** (n - size)
        for subset in itertools.combinations(range(n), size):
            s = vectors[subset[0]].copy()
            for j in subset[1:]:
                s += vectors[j]
            val = np.asarray(phi(s), dtype=float)
            total = sign * val if total is None else total + sign * val
    return total / math.factorial(n)


def symtensor_from_diagonal(phi, dim: int, order: int, cache=None) -> SymTensor:
    """Expand a diagonal map on R^dim into its symmetric order-n tensor.

    ``phi`` must return scalars.  Evaluations at repeated subset sums are
    memoized in ``cache`` (a dict keyed by the integer coefficient tuple)
    so expensive diagonals, e.g. ones that solve cell problems, are only
    hit once per distinct direction.
    """
    if cache is None:
        cache = {}

    def phi_cached(v):
        key = tuple(int(round(c)) for c in v)
        if not np.allclose(v, key, atol=1e-12):
            return phi(v)
        if key not in cache:
            cache[key] = phi(np.asarray(key, dtype=float))
        return cache[key]

    basis = np.eye(dim)
    entries = []
    for idx in canonical_indices(dim, order):
        vecs = [basis[i] for i in idx]
        entries.append(float(polarize(phi_cached, vecs)))
    return SymTensor(dim, order, np.asarray(entries))
