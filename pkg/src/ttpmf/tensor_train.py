"""Tensor-train container and core arithmetic.

A d-mode tensor ``A(i_1, ..., i_d)`` is stored as a chain of order-3 cores
``G_1, ..., G_d``, where core ``G_k`` has shape ``(R_{k-1}, N_k, R_k)`` and
the boundary ranks are ``R_0 = R_d = 1``.  An element is the chain product

    A(i_1, ..., i_d) = G_1[:, i_1, :] @ G_2[:, i_2, :] @ ... @ G_d[:, i_d, :]

which collapses to a 1 x 1 matrix.  Storage is ``sum_k R_{k-1} N_k R_k``
values instead of ``prod_k N_k``, so moderate ranks break the curse of
dimensionality.

Conventions
-----------
* Public tensor trains are real ``float64``.  Complex cores appear only
  transiently inside the FFT convolution helpers (:mod:`ttpmf.tt_algorithms`).
* Dense counterparts are plain numpy arrays indexed ``[i_1, ..., i_d]``.
  Where a flat ordering of a dense tensor is ever needed, the first index
  varies fastest (Fortran order); no routine in this package exchanges flat
  buffers, so in practice dense data stays in index form.
* Every operation is pure: cores are marked read-only at construction and all
  functions return new values.  Instances are therefore safe to share across
  threads.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

__all__ = [
    "DENSE_GUARD_DEFAULT",
    "DenseGuardError",
    "TensorTrain",
    "tt_add",
    "tt_dot",
    "tt_eval",
    "tt_eval_many",
    "tt_from_dense",
    "tt_hadamard",
    "tt_norm",
    "tt_ones",
    "tt_rank_one",
    "tt_round",
    "tt_scale",
    "tt_storage_bytes",
    "tt_sum",
    "tt_to_dense",
    "tt_describe",
]

#: Default ceiling on the number of elements `tt_to_dense` will materialise.
DENSE_GUARD_DEFAULT = 10_000_000


class DenseGuardError(RuntimeError):
    """A dense materialisation would exceed the configured element guard."""


@dataclass(frozen=True)
class TensorTrain:
    """Immutable chain of order-3 cores with unit boundary ranks."""

    cores: tuple[np.ndarray, ...]

    def __post_init__(self):
        cores = tuple(np.array(c, dtype=np.float64) for c in self.cores)
        if not cores:
            raise ValueError("a tensor train needs at least one core")
        for k, c in enumerate(cores):
            if c.ndim != 3:
                raise ValueError(f"core {k} must be 3-dimensional, got shape {c.shape}")
            if min(c.shape) < 1:
                raise ValueError(f"core {k} has an empty dimension: {c.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must both equal 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[2] != cores[k + 1].shape[0]:
                raise ValueError(
                    f"rank mismatch between cores {k} and {k + 1}: "
                    f"{cores[k].shape[2]} != {cores[k + 1].shape[0]}"
                )
        for c in cores:
            c.setflags(write=False)
        object.__setattr__(self, "cores", cores)

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        """All d+1 ranks including the unit boundaries."""
        return (1,) + tuple(c.shape[2] for c in self.cores)

    def __repr__(self) -> str:
        return f"TensorTrain(shape={self.shape}, ranks={self.ranks})"


# ---------------------------------------------------------------------------
# element access
# ---------------------------------------------------------------------------

def _check_index(tt: TensorTrain, idx) -> tuple[int, ...]:
    idx = tuple(int(i) for i in idx)
    if len(idx) != tt.ndim:
        raise IndexError(f"index of length {len(idx)} for a {tt.ndim}-mode tensor")
    for k, (i, n) in enumerate(zip(idx, tt.shape)):
        if not 0 <= i < n:
            raise IndexError(f"index {i} out of bounds for mode {k} of size {n}")
    return idx


def tt_eval(tt: TensorTrain, idx) -> float:
    """Single element by multi-index; cost O(d * maxR^2)."""
    idx = _check_index(tt, idx)
    v = tt.cores[0][:, idx[0], :]
    for k in range(1, tt.ndim):
        v = v @ tt.cores[k][:, idx[k], :]
    return float(v[0, 0])


def tt_eval_many(tt: TensorTrain, idx: np.ndarray) -> np.ndarray:
    """Vectorised element access for an integer index array of shape (K, d)."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 2 or idx.shape[1] != tt.ndim:
        raise IndexError(f"expected index array of shape (K, {tt.ndim}), got {idx.shape}")
    for k, n in enumerate(tt.shape):
        col = idx[:, k]
        if col.size and (col.min() < 0 or col.max() >= n):
            raise IndexError(f"index out of bounds for mode {k} of size {n}")
    v = tt.cores[0][0, idx[:, 0], :]  # (K, R1)
    for k in range(1, tt.ndim):
        core = tt.cores[k]
        r0, n, r1 = core.shape
        col = idx[:, k]
        if r0 * r1 * len(col) <= 4_000_000:
            # small slab: one batched contraction
            v = np.einsum("kr,rkc->kc", v, core[:, col, :])
            continue
        # large slab: group points by mode index so the contraction becomes
        # one small matmul per grid slice instead of a (R, K, R) gather
        order = np.argsort(col, kind="stable")
        bounds = np.searchsorted(col[order], np.arange(n + 1))
        out = np.empty((len(col), r1))
        for j in range(n):
            lo, hi = bounds[j], bounds[j + 1]
            if lo < hi:
                sel = order[lo:hi]
                out[sel] = v[sel] @ core[:, j, :]
        v = out
    return v[:, 0]


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _truncation_rank(s: np.ndarray, delta: float, max_rank: int | None) -> int:
    """Smallest rank whose discarded tail energy is at most delta^2."""
    if delta > 0.0:
        tail = np.cumsum(s[::-1] ** 2)[::-1]  # tail[r] = sum of s[r:]**2
        keep = int(np.searchsorted(-tail, -delta * delta))
        # keep = first r with tail[r] <= delta^2; r singular values retained
        r = max(keep, 1)
    else:
        r = max(len(s), 1)
    if max_rank is not None:
        r = min(r, max_rank)
    return r


def tt_from_dense(values: np.ndarray, tol: float = 0.0,
                  max_rank: int | None = None) -> TensorTrain:
    """Decompose a dense array by successive truncated SVDs of its unfoldings.

    The truncation budget ``tol * ||values||_F`` is split evenly over the
    d - 1 unfoldings (each gets ``tol * ||values|| / sqrt(d - 1)``), so the
    reconstruction satisfies ``||dense - reconstruction||_F <= tol * ||dense||_F``.
    """
    a = np.asarray(values, dtype=np.float64)
    if a.ndim < 1:
        a = a.reshape(1)
    if tol < 0.0:
        raise ValueError("tol must be nonnegative")
    d = a.ndim
    shape = a.shape
    if d == 1:
        return TensorTrain((a.reshape(1, -1, 1),))
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        return TensorTrain(tuple(np.zeros((1, n, 1)) for n in shape))
    delta = tol * norm / math.sqrt(d - 1)
    cores = []
    z = a
    r_prev = 1
    for k in range(d - 1):
        m = z.reshape(r_prev * shape[k], -1)
        u, s, vt = np.linalg.svd(m, full_matrices=False)
        r = _truncation_rank(s, delta, max_rank)
        cores.append(u[:, :r].reshape(r_prev, shape[k], r))
        z = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(z.reshape(r_prev, shape[-1], 1))
    return TensorTrain(tuple(cores))


def tt_to_dense(tt: TensorTrain, max_elements: int = DENSE_GUARD_DEFAULT) -> np.ndarray:
    """Materialise the full dense array; refuses above the element guard."""
    total = math.prod(tt.shape)
    if total > max_elements:
        raise DenseGuardError(
            f"dense materialisation of shape {tt.shape} has {total} elements, "
            f"exceeding the guard of {max_elements}"
        )
    m = tt.cores[0].reshape(tt.shape[0], -1)  # (N_1, R_1)
    for k in range(1, tt.ndim):
        r_prev, n, r = tt.cores[k].shape
        m = m @ tt.cores[k].reshape(r_prev, n * r)
        m = m.reshape(-1, r)
    return m.reshape(tt.shape)


def tt_rank_one(axis_vectors) -> TensorTrain:
    """Rank-one tensor from per-axis vectors: A(i_1..i_d) = prod_l v_l[i_l]."""
    vecs = [np.asarray(v, dtype=np.float64).reshape(-1) for v in axis_vectors]
    if not vecs:
        raise ValueError("need at least one axis vector")
    return TensorTrain(tuple(v.reshape(1, -1, 1) for v in vecs))


def tt_ones(shape) -> TensorTrain:
    """All-ones tensor (rank one)."""
    return tt_rank_one([np.ones(int(n)) for n in shape])


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def _check_same_shape(a: TensorTrain, b: TensorTrain) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def _hadamard_cores(cores_a, cores_b) -> list[np.ndarray]:
    """Core-wise Kronecker products; works for real and complex cores."""
    out = []
    for ca, cb in zip(cores_a, cores_b):
        ra0, n, ra1 = ca.shape
        rb0, _, rb1 = cb.shape
        prod = np.einsum("aib,cid->acibd", ca, cb)
        out.append(prod.reshape(ra0 * rb0, n, ra1 * rb1))
    return out


def tt_hadamard(a: TensorTrain, b: TensorTrain) -> TensorTrain:
    """Elementwise product; output ranks are products of the input ranks."""
    _check_same_shape(a, b)
    return TensorTrain(tuple(_hadamard_cores(a.cores, b.cores)))


def tt_dot(a: TensorTrain, b: TensorTrain) -> float:
    """Frobenius inner product sum_i A(i) * B(i)."""
    _check_same_shape(a, b)
    v = np.ones((1, 1))
    for ca, cb in zip(a.cores, b.cores):
        v = np.einsum("ac,aib,cid->bd", v, ca, cb, optimize=True)
    return float(v[0, 0])


def tt_norm(a: TensorTrain) -> float:
    """Frobenius norm (the self inner product is floored at zero)."""
    return math.sqrt(max(tt_dot(a, a), 0.0))


def tt_sum(a: TensorTrain) -> float:
    """Sum of all elements."""
    v = np.ones((1,))
    for c in a.cores:
        v = v @ c.sum(axis=1)
    return float(v[0])


def tt_scale(a: TensorTrain, c: float) -> TensorTrain:
    """Scalar multiple; the factor is absorbed into the first core."""
    c = float(c)
    cores = [a.cores[0] * c] + [core for core in a.cores[1:]]
    return TensorTrain(tuple(cores))


def tt_add(a: TensorTrain, b: TensorTrain) -> TensorTrain:
    """Elementwise sum via block-diagonal core concatenation.

    Interior ranks add; for single-mode tensors the cores are added directly.
    """
    _check_same_shape(a, b)
    d = a.ndim
    if d == 1:
        return TensorTrain((a.cores[0] + b.cores[0],))
    cores = []
    for k, (ca, cb) in enumerate(zip(a.cores, b.cores)):
        if k == 0:
            cores.append(np.concatenate([ca, cb], axis=2))
        elif k == d - 1:
            cores.append(np.concatenate([ca, cb], axis=0))
        else:
            ra0, n, ra1 = ca.shape
            rb0, _, rb1 = cb.shape
            block = np.zeros((ra0 + rb0, n, ra1 + rb1))
            block[:ra0, :, :ra1] = ca
            block[ra0:, :, ra1:] = cb
            cores.append(block)
    return TensorTrain(tuple(cores))


# ---------------------------------------------------------------------------
# rounding
# ---------------------------------------------------------------------------

def tt_round(tt: TensorTrain, tol: float, max_rank: int | None = None) -> TensorTrain:
    """Recompress to the smallest ranks reproducing the tensor within ``tol``.

    Right-to-left QR orthogonalisation concentrates the norm in the first
    core, then a left-to-right sweep of truncated SVDs discards singular
    values whose tail energy stays below ``tol * ||A||_F / sqrt(d - 1)`` per
    unfolding.  Output ranks never exceed input ranks.
    """
    if tol < 0.0:
        raise ValueError("tol must be nonnegative")
    d = tt.ndim
    if d == 1:
        return TensorTrain((tt.cores[0].copy(),))
    cores = [c.copy() for c in tt.cores]
    # right-to-left: make cores 1..d-1 row-orthonormal
    for k in range(d - 1, 0, -1):
        r_prev, n, r = cores[k].shape
        q, rr = np.linalg.qr(cores[k].reshape(r_prev, n * r).T)
        r_new = q.shape[1]
        cores[k] = q.T.reshape(r_new, n, r)
        cores[k - 1] = np.tensordot(cores[k - 1], rr.T, axes=([2], [0]))
    norm = float(np.linalg.norm(cores[0]))
    if norm == 0.0:
        return TensorTrain(tuple(np.zeros((1, n, 1)) for n in tt.shape))
    delta = tol * norm / math.sqrt(d - 1)
    # left-to-right: truncated SVDs
    for k in range(d - 1):
        r_prev, n, r = cores[k].shape
        u, s, vt = np.linalg.svd(cores[k].reshape(r_prev * n, r), full_matrices=False)
        r_new = _truncation_rank(s, delta, max_rank)
        cores[k] = u[:, :r_new].reshape(r_prev, n, r_new)
        carry = s[:r_new, None] * vt[:r_new]
        cores[k + 1] = np.tensordot(carry, cores[k + 1], axes=([1], [0]))
    return TensorTrain(tuple(cores))


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def tt_storage_bytes(tt: TensorTrain) -> int:
    """Bytes held by the cores, measured from the actual arrays."""
    return int(sum(c.size * c.itemsize for c in tt.cores))


def tt_describe(tt: TensorTrain) -> str:
    """One human-readable line per core: ``core k: R x N x R``."""
    lines = [
        f"core {k}: {c.shape[0]} x {c.shape[1]} x {c.shape[2]}"
        for k, c in enumerate(tt.cores)
    ]
    return "\n".join(lines)
