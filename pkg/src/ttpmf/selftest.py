"""Randomized equivalence checks of TT operations against dense brute force.

Every public tensor-train operation is exercised on small random instances
(at most three modes, each of size at most nine) and compared with a direct
dense computation of the same quantity: explicit chain contraction for
reconstruction, elementwise arithmetic for products and sums, an explicit
shift-and-accumulate loop for circular convolution, and SciPy's regular-grid
interpolator for resampling.  Each check reports the worst relative error
seen over all its instances.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ttpmf.grids import Grid
from ttpmf.tensor_train import (
    TensorTrain,
    tt_add,
    tt_dot,
    tt_eval_many,
    tt_hadamard,
    tt_round,
    tt_scale,
    tt_sum,
)
from ttpmf.tt_algorithms import tt_einsum_tpm, tt_fft_convolve, tt_interpolate

__all__ = ["OpCheck", "SelftestReport", "run_selftest", "dense_from_cores"]

_MAX_MODES = 3
_MAX_SIZE = 9
_MAX_RANK = 4
_REL_TOL = 1e-8
_NORM_FLOOR = 1e-300


@dataclass(frozen=True)
class OpCheck:
    """Worst-case result of one operation's randomized comparison."""

    op: str
    instances: int
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


@dataclass(frozen=True)
class SelftestReport:
    """Outcome of the full equivalence suite."""

    checks: tuple[OpCheck, ...]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            out.append(
                f"{c.op:<12} {c.instances:>3} instances  "
                f"max rel err {c.max_rel_err:.3e}  tol {c.tol:.1e}  {status}"
            )
        out.append(
            f"selftest {'PASS' if self.passed else 'FAIL'} "
            f"({len(self.checks)} operations, {self.seconds:.2f} s)"
        )
        return out


# ---------------------------------------------------------------------------
# instance generation and dense references
# ---------------------------------------------------------------------------

def _random_shape(rng, d: int | None = None, odd: bool = False) -> tuple[int, ...]:
    if d is None:
        d = int(rng.integers(1, _MAX_MODES + 1))
    if odd:
        sizes = rng.choice([3, 5, 7, 9], size=d)
    else:
        sizes = rng.integers(2, _MAX_SIZE + 1, size=d)
    return tuple(int(n) for n in sizes)


def _random_tt(rng, shape: tuple[int, ...]) -> TensorTrain:
    d = len(shape)
    ranks = [1] + [int(rng.integers(1, _MAX_RANK + 1)) for _ in range(d - 1)] + [1]
    cores = tuple(
        rng.standard_normal((ranks[k], shape[k], ranks[k + 1])) for k in range(d)
    )
    return TensorTrain(cores)


def dense_from_cores(tt: TensorTrain) -> np.ndarray:
    """Reference dense reconstruction by direct chain contraction of the cores."""
    out = tt.cores[0][0]
    for core in tt.cores[1:]:
        out = np.tensordot(out, core, axes=([-1], [0]))
    return out[..., 0]


def _all_indices(shape: tuple[int, ...]) -> np.ndarray:
    return np.indices(shape).reshape(len(shape), -1).T


def _rel_frobenius(approx: np.ndarray, exact: np.ndarray) -> float:
    scale = float(np.linalg.norm(np.ravel(exact)))
    diff = float(np.linalg.norm(np.ravel(approx) - np.ravel(exact)))
    return diff / max(scale, _NORM_FLOOR)


# ---------------------------------------------------------------------------
# one comparison per operation
# ---------------------------------------------------------------------------

def _check_eval(rng) -> float:
    tt = _random_tt(rng, _random_shape(rng))
    dense = dense_from_cores(tt)
    vals = tt_eval_many(tt, _all_indices(dense.shape))
    return _rel_frobenius(vals, dense.ravel())


def _check_round(rng) -> float:
    tt = _random_tt(rng, _random_shape(rng))
    # adding a scaled copy doubles every rank without changing the value
    # (up to the known factor), so rounding has redundancy to remove
    inflated = tt_add(tt, tt_scale(tt, -0.25))
    rounded = tt_round(inflated, 1e-10)
    return _rel_frobenius(dense_from_cores(rounded), 0.75 * dense_from_cores(tt))


def _check_hadamard(rng) -> float:
    shape = _random_shape(rng)
    a, b = _random_tt(rng, shape), _random_tt(rng, shape)
    exact = dense_from_cores(a) * dense_from_cores(b)
    return _rel_frobenius(dense_from_cores(tt_hadamard(a, b)), exact)


def _check_dot(rng) -> float:
    shape = _random_shape(rng)
    a, b = _random_tt(rng, shape), _random_tt(rng, shape)
    da, db = dense_from_cores(a), dense_from_cores(b)
    exact = float(np.vdot(da, db))
    scale = max(float(np.linalg.norm(da) * np.linalg.norm(db)), _NORM_FLOOR)
    return abs(tt_dot(a, b) - exact) / scale


def _check_sum(rng) -> float:
    tt = _random_tt(rng, _random_shape(rng))
    dense = dense_from_cores(tt)
    scale = max(float(np.abs(dense).sum()), _NORM_FLOOR)
    return abs(tt_sum(tt) - float(dense.sum())) / scale


def _check_add(rng) -> float:
    shape = _random_shape(rng)
    a, b = _random_tt(rng, shape), _random_tt(rng, shape)
    exact = dense_from_cores(a) + dense_from_cores(b)
    return _rel_frobenius(dense_from_cores(tt_add(a, b)), exact)


def _check_einsum_tpm(rng) -> float:
    d = int(rng.integers(1, _MAX_MODES + 1))
    new_shape = _random_shape(rng, d)
    old_shape = _random_shape(rng, d)
    transition = _random_tt(rng, new_shape + old_shape)
    weights = _random_tt(rng, old_shape)
    out = tt_einsum_tpm(transition, weights)
    t_mat = dense_from_cores(transition).reshape(-1, int(np.prod(old_shape)))
    exact = t_mat @ dense_from_cores(weights).ravel()
    return _rel_frobenius(dense_from_cores(out).ravel(), exact)


def _check_fft_convolve(rng) -> float:
    shape = _random_shape(rng, odd=True)
    kernel, weights = _random_tt(rng, shape), _random_tt(rng, shape)
    out = tt_fft_convolve(kernel, weights, round_tol=1e-12)
    k_d, w_d = dense_from_cores(kernel), dense_from_cores(weights)
    # direct shift-and-accumulate circular convolution:
    #   exact(j) = sum_i kernel((j - i) mod N) * weights(i)
    exact = np.zeros(shape)
    axes = tuple(range(len(shape)))
    for idx in _all_indices(shape):
        exact += w_d[tuple(idx)] * np.roll(k_d, tuple(idx), axis=axes)
    return _rel_frobenius(dense_from_cores(out), exact)


def _random_axis(rng, n: int, lo: float, hi: float) -> np.ndarray:
    step = (hi - lo) / (n - 1)
    return lo + step * np.arange(n)


def _check_interpolate(rng) -> float:
    d = int(rng.integers(1, _MAX_MODES + 1))
    old_axes, new_axes = [], []
    for _ in range(d):
        n_old = int(rng.integers(3, _MAX_SIZE + 1))
        n_new = int(rng.integers(2, _MAX_SIZE + 1))
        lo = float(rng.uniform(-3.0, 0.0))
        hi = float(rng.uniform(1.0, 4.0))
        span = hi - lo
        # new axis sits mostly inside the old hull, sometimes poking out so
        # the zero-outside convention is exercised too
        new_lo = lo + float(rng.uniform(-0.2, 0.4)) * span
        new_hi = hi - float(rng.uniform(-0.2, 0.4)) * span
        if new_hi - new_lo < 0.1 * span:
            new_lo, new_hi = lo + 0.25 * span, hi - 0.25 * span
        old_axes.append(_random_axis(rng, n_old, lo, hi))
        new_axes.append(_random_axis(rng, n_new, new_lo, new_hi))
    old_grid, new_grid = Grid(tuple(old_axes)), Grid(tuple(new_axes))
    tt = _random_tt(rng, old_grid.shape)
    out = tt_interpolate(tt, old_grid, new_grid)
    interp = RegularGridInterpolator(
        old_grid.axes,
        dense_from_cores(tt).reshape(old_grid.shape),
        method="linear",
        bounds_error=False,
        fill_value=0.0,
    )
    mesh = np.stack(
        np.meshgrid(*new_grid.axes, indexing="ij"), axis=-1
    ).reshape(-1, d)
    exact = interp(mesh).reshape(new_grid.shape)
    return _rel_frobenius(dense_from_cores(out).reshape(new_grid.shape), exact)


_CHECKS: tuple[tuple[str, Callable], ...] = (
    ("eval", _check_eval),
    ("round", _check_round),
    ("hadamard", _check_hadamard),
    ("dot", _check_dot),
    ("sum", _check_sum),
    ("add", _check_add),
    ("einsum_tpm", _check_einsum_tpm),
    ("fft_convolve", _check_fft_convolve),
    ("interpolate", _check_interpolate),
)


def run_selftest(
    instances: int = 50, tol: float = _REL_TOL, seed: int = 2024
) -> SelftestReport:
    """Run every operation's randomized dense-equivalence check.

    Deterministic for a fixed seed; instance shapes, ranks and entries are
    drawn from one generator in a fixed operation order.
    """
    if instances < 1:
        raise ValueError("instances must be >= 1")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    checks = []
    for name, fn in _CHECKS:
        worst = 0.0
        for _ in range(instances):
            worst = max(worst, fn(rng))
        checks.append(OpCheck(name, instances, worst, tol))
    return SelftestReport(tuple(checks), time.perf_counter() - t0)
