"""Point-mass Bayesian filters on equidistant grids, dense and tensor-train.

All filters share one recursion shape.  The carried state is the *predictive*
probability-mass density (PMD): weights on an axis-aligned grid that sum to
one when multiplied by the grid cell volume.  One step

1. multiplies the weights by the measurement likelihood and renormalises
   (the filtering PMD, whose moments are the step's state estimate),
2. predicts mean and covariance through the dynamics with a local
   Kalman-style filter and designs the next grid from them,
3. pushes the filtering weights through the transition density onto the new
   grid (full transition-matrix contraction, or an FFT convolution when the
   grids are related by the linear dynamics), and
4. renormalises, so every returned PMD has unit mass exactly.

The dense variants store full weight arrays and transition tensors; the TT
variants keep everything in tensor-train form, building likelihoods,
transition tensors and convolution kernels from black-box evaluators with
greedy cross approximation.  TT compression can introduce slightly negative
weights; those are never silently hidden: scalar readouts that must be
nonnegative are floored, and the total negative mass per step is recorded in
the step diagnostics.  Dense filters clip true negatives (which only arise
from FFT/interpolation roundoff) and record the clipped mass in the same
diagnostic field.

Conventions:

* FFT convolution kernels are displacement-indexed with zero displacement at
  index 0 (``ifftshift`` layout); displacements beyond half the grid wrap to
  their negative counterparts.
* Nonlinear dynamics are linearised with a central-difference Jacobian at the
  current mean for the local Kalman prediction.
* The bootstrap particle filter resamples systematically every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math
import time
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ttpmf.grids import Grid, MomentEstimate, design_grid
from ttpmf.models import GaussianDensity, StateSpaceModel
from ttpmf.tensor_train import (
    TensorTrain,
    tt_dot,
    tt_eval_many,
    tt_hadamard,
    tt_rank_one,
    tt_round,
    tt_scale,
    tt_storage_bytes,
    tt_sum,
    tt_to_dense,
)
from ttpmf.tt_algorithms import (
    BlackBoxTensor,
    CrossConfig,
    CrossResult,
    greedy_cross,
    linear_interp_matrix,
    tt_einsum_tpm,
    tt_eval_at_points,
    tt_fft_convolve,
    tt_interpolate,
)

__all__ = [
    "DegenerateDensityError",
    "GridConfig",
    "ParticleSet",
    "PmdEstimate",
    "StepDiagnostics",
    "bootstrap_pf_step",
    "build_tpm_dense",
    "dense_fft_pmf_step",
    "dense_pmf_step",
    "fft_kernel_blackbox",
    "fft_kernel_dense",
    "grid_redesign",
    "initial_particles",
    "initial_pmd_dense",
    "initial_pmd_tt",
    "kalman_predict",
    "kalman_reference",
    "kalman_update",
    "measurement_update",
    "moments_from_pmd",
    "particle_moments",
    "time_update_dense",
    "time_update_fft_dense",
    "tt_fft_pmf_step",
    "tt_pmf_step",
]

_MASS_FLOOR = 1e-300
_PROBE_COUNT = 4096
_TPM_CHUNK = 512
_SEED_BUDGET = 4096


def _seed_lattice(shape: tuple[int, ...], budget: int = _SEED_BUDGET) -> np.ndarray:
    """Indices of a uniform sublattice of the grid with at most ``budget`` points.

    Used to seed cross approximations of functions whose support may occupy
    only a few cells (thin likelihood ridges); see ``CrossConfig.seed_indices``.
    """
    stride = 1
    while math.prod(len(range(0, n, stride)) for n in shape) > budget:
        stride += 1
    axes = [np.arange(0, n, stride, dtype=np.intp) for n in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


class DegenerateDensityError(RuntimeError):
    """Raised when a density collapses to zero or non-finite mass."""


# ---------------------------------------------------------------------------
# configuration and state containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridConfig:
    """Grid design and numerical policy shared by the grid filters.

    ``n_per_axis`` points per axis (odd), spans of ``sigma_mult`` marginal
    standard deviations around the designed mean.  ``round_tol`` and
    ``round_max_rank`` govern TT rounding of weights after arithmetic.
    ``normalize_before_round`` switches the TT filters to normalising the raw
    product before rounding; the default rounds first and then normalises so
    that unit mass holds exactly in the stored representation.
    ``densify_guard`` bounds the grid sizes for which negative-mass
    diagnostics are computed exactly; larger grids use a fixed random probe
    estimate.
    """

    n_per_axis: int = 33
    sigma_mult: float = 4.0
    round_tol: float = 1e-8
    round_max_rank: int | None = None
    normalize_before_round: bool = False
    densify_guard: int = 2**22

    def __post_init__(self) -> None:
        if self.n_per_axis < 3 or self.n_per_axis % 2 == 0:
            raise ValueError("n_per_axis must be an odd integer >= 3")
        if not self.sigma_mult > 0:
            raise ValueError("sigma_mult must be positive")
        if self.round_tol < 0:
            raise ValueError("round_tol must be nonnegative")
        if self.round_max_rank is not None and self.round_max_rank < 1:
            raise ValueError("round_max_rank must be a positive integer")
        if self.densify_guard < 1:
            raise ValueError("densify_guard must be positive")


@dataclass
class StepDiagnostics:
    """Per-step bookkeeping attached to every returned PMD."""

    filt_moments: MomentEstimate | None = None
    pred_moments: MomentEstimate | None = None
    mass_before_norm: float = float("nan")
    clipped_mass: float = 0.0
    outlier: bool = False
    spd_fixed: bool = False
    tpm_bytes: int = 0
    pmd_bytes: int = 0
    interp_seconds: float = 0.0
    cross_info: dict[str, tuple[float, int, int, bool]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def record_cross(self, name: str, result: CrossResult) -> None:
        self.cross_info[name] = (
            result.achieved_error,
            result.evaluator_calls,
            result.sweeps,
            result.converged,
        )
        if not result.converged:
            self.warnings.append(f"cross '{name}' did not converge")


@dataclass(frozen=True)
class PmdEstimate:
    """A probability-mass density: weights on a grid, dense or TT.

    ``weights`` is either a dense ``ndarray`` of shape ``grid.shape`` or a
    :class:`TensorTrain` with those mode sizes.  ``kind`` is ``"predictive"``
    or ``"filtering"``.  ``diag`` carries the diagnostics of the step that
    produced the estimate (``None`` for freshly constructed priors).
    """

    grid: Grid
    weights: np.ndarray | TensorTrain
    kind: str
    diag: StepDiagnostics | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("predictive", "filtering"):
            raise ValueError("kind must be 'predictive' or 'filtering'")
        if isinstance(self.weights, TensorTrain):
            if self.weights.shape != self.grid.shape:
                raise ValueError("TT weights shape does not match grid shape")
        else:
            arr = np.asarray(self.weights, dtype=float)
            if arr.shape != self.grid.shape:
                raise ValueError("weights shape does not match grid shape")
            object.__setattr__(self, "weights", arr)

    @property
    def is_tt(self) -> bool:
        return isinstance(self.weights, TensorTrain)

    def storage_bytes(self) -> int:
        if self.is_tt:
            return tt_storage_bytes(self.weights)
        return self.weights.nbytes

    def mass(self) -> float:
        if self.is_tt:
            return float(tt_sum(self.weights)) * self.grid.cell_volume
        return float(self.weights.sum()) * self.grid.cell_volume


@dataclass(frozen=True)
class ParticleSet:
    """Weighted particles: positions ``(count, dim)`` and weights summing to 1."""

    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.particles, dtype=float)
        w = np.array(self.weights, dtype=float)
        if pts.ndim != 2:
            raise ValueError("particles must be a (count, dim) array")
        if w.shape != (pts.shape[0],):
            raise ValueError("weights must be a vector matching the particle count")
        if not (np.isfinite(pts).all() and np.isfinite(w).all()):
            raise ValueError("particles and weights must be finite")
        if (w < 0).any():
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to one")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "particles", pts)
        object.__setattr__(self, "weights", w)

    @property
    def count(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def storage_bytes(self) -> int:
        return self.particles.nbytes + self.weights.nbytes


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


def _spd_repair(cov: np.ndarray) -> tuple[np.ndarray, bool]:
    """Symmetrise and, if needed, jitter a covariance to positive definite."""
    cov = 0.5 * (cov + cov.T)
    eigs = np.linalg.eigvalsh(cov)
    lo = float(eigs[0])
    if lo > 0.0:
        return cov, False
    scale = max(float(np.trace(cov)) / cov.shape[0], 1.0)
    shift = 1e-9 * scale - min(lo, 0.0)
    return cov + shift * np.eye(cov.shape[0]), True


def moments_from_pmd(pmd: PmdEstimate) -> tuple[MomentEstimate, bool]:
    """Mean and covariance of a PMD; returns ``(moments, spd_fixed)``.

    Dense weights use the numerically centred formula.  TT weights use
    coordinate rank-one contractions (raw first and second moments), so the
    covariance is assembled as ``M2 - mean mean^T`` and repaired to positive
    definite if compression noise pushed an eigenvalue below zero.
    """
    grid = pmd.grid
    d = grid.dim
    if pmd.is_tt:
        tt = pmd.weights
        mass = float(tt_sum(tt)) * grid.cell_volume
        if not math.isfinite(mass) or mass <= 0.0:
            raise DegenerateDensityError("PMD has non-positive total mass")
        ones = [np.ones(n) for n in grid.shape]

        def coord_dot(vectors: list[np.ndarray]) -> float:
            return float(tt_dot(tt, tt_rank_one(vectors))) * grid.cell_volume

        mean = np.empty(d)
        for axis in range(d):
            vecs = list(ones)
            vecs[axis] = grid.axes[axis]
            mean[axis] = coord_dot(vecs) / mass
        second = np.empty((d, d))
        for i in range(d):
            for j in range(i, d):
                vecs = list(ones)
                if i == j:
                    vecs[i] = grid.axes[i] ** 2
                else:
                    vecs[i] = grid.axes[i]
                    vecs[j] = grid.axes[j]
                second[i, j] = second[j, i] = coord_dot(vecs) / mass
        cov = second - np.outer(mean, mean)
    else:
        w = pmd.weights.reshape(-1) * grid.cell_volume
        mass = float(w.sum())
        if not math.isfinite(mass) or mass <= 0.0:
            raise DegenerateDensityError("PMD has non-positive total mass")
        pts = grid.all_points()
        mean = pts.T @ w / mass
        centered = pts - mean
        cov = centered.T @ (centered * w[:, None]) / mass
    cov, fixed = _spd_repair(cov)
    return MomentEstimate(mean=mean, cov=cov), fixed


def particle_moments(ps: ParticleSet) -> MomentEstimate:
    """Weighted mean and covariance of a particle set."""
    mean = ps.weights @ ps.particles
    centered = ps.particles - mean
    cov = centered.T @ (centered * ps.weights[:, None])
    cov, _ = _spd_repair(cov)
    return MomentEstimate(mean=mean, cov=cov)


# ---------------------------------------------------------------------------
# local Kalman filter (grid design and reference solution)
# ---------------------------------------------------------------------------


def _numerical_jacobian(
    fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, eps: float = 1e-6
) -> np.ndarray:
    """Central-difference Jacobian of ``fn`` at ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        h = eps * max(1.0, abs(x[k]))
        hi = x.copy()
        lo = x.copy()
        hi[k] += h
        lo[k] -= h
        cols.append((np.asarray(fn(hi), dtype=float) - np.asarray(fn(lo), dtype=float)) / (2 * h))
    return np.stack(cols, axis=1)


def kalman_predict(m: MomentEstimate, model: StateSpaceModel) -> MomentEstimate:
    """Propagate moments through the dynamics (extended Kalman prediction)."""
    if model.F is not None:
        jac = model.F
    else:
        jac = _numerical_jacobian(model.f, m.mean)
    mean = model.apply_dynamics(m.mean).reshape(-1)
    cov = jac @ m.cov @ jac.T + model.Q
    cov = 0.5 * (cov + cov.T)
    return MomentEstimate(mean=mean, cov=cov)


def kalman_update(m: MomentEstimate, model: StateSpaceModel, z: np.ndarray) -> MomentEstimate:
    """Linear Kalman measurement update in Joseph form."""
    if model.H is None:
        raise ValueError("kalman_update requires a linear measurement matrix H")
    h_mat = model.H
    z = np.asarray(z, dtype=float)
    s = h_mat @ m.cov @ h_mat.T + model.R
    gain = np.linalg.solve(s.T, (m.cov @ h_mat.T).T).T
    mean = m.mean + gain @ (z - h_mat @ m.mean)
    joseph = np.eye(m.mean.size) - gain @ h_mat
    cov = joseph @ m.cov @ joseph.T + gain @ model.R @ gain.T
    cov = 0.5 * (cov + cov.T)
    return MomentEstimate(mean=mean, cov=cov)


def kalman_reference(
    model: StateSpaceModel,
    prior: MomentEstimate,
    measurements: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Filtering means and covariances for a linear-Gaussian model.

    ``measurements`` has shape ``(steps, dim_z)``; the return is a pair of
    arrays with shapes ``(steps, dim_x)`` and ``(steps, dim_x, dim_x)``
    holding the filtering moments after each measurement.
    """
    measurements = np.asarray(measurements, dtype=float)
    steps = measurements.shape[0]
    means = np.empty((steps, model.dim_x))
    covs = np.empty((steps, model.dim_x, model.dim_x))
    pred = prior
    for k in range(steps):
        filt = kalman_update(pred, model, measurements[k])
        means[k] = filt.mean
        covs[k] = filt.cov
        pred = kalman_predict(filt, model)
    return means, covs


# ---------------------------------------------------------------------------
# normalisation and clipping bookkeeping
# ---------------------------------------------------------------------------


def _negative_mass_dense(weights: np.ndarray, grid: Grid) -> float:
    neg = weights[weights < 0.0]
    return float(-neg.sum()) * grid.cell_volume if neg.size else 0.0


def _negative_mass_tt(tt: TensorTrain, grid: Grid, guard: int) -> float:
    """Total negative mass of a TT PMD; exact when densifiable, else probed."""
    total = grid.total_points
    if total <= guard:
        dense = tt_to_dense(tt, max_elements=guard)
        return _negative_mass_dense(dense, grid)
    rng = np.random.default_rng(0)
    idx = np.stack([rng.integers(0, n, _PROBE_COUNT) for n in grid.shape], axis=1)
    vals = tt_eval_many(tt, idx)
    return float(np.maximum(-vals, 0.0).mean()) * total * grid.cell_volume


def _finalize_dense(
    weights: np.ndarray, grid: Grid, diag: StepDiagnostics
) -> np.ndarray:
    """Clip negatives, renormalise to unit mass, record diagnostics."""
    if not np.isfinite(weights).all():
        raise DegenerateDensityError("dense weights contain non-finite values")
    diag.clipped_mass += _negative_mass_dense(weights, grid)
    weights = np.maximum(weights, 0.0)
    mass = float(weights.sum()) * grid.cell_volume
    diag.mass_before_norm = mass
    if mass <= _MASS_FLOOR:
        raise DegenerateDensityError("dense weights carry no probability mass")
    return weights / mass


def _finalize_tt(
    weights: TensorTrain, grid: Grid, cfg: GridConfig, diag: StepDiagnostics
) -> TensorTrain:
    """Round and renormalise a TT PMD, recording mass diagnostics.

    Default order is round-then-normalise so that unit total mass holds
    exactly for the stored cores; ``normalize_before_round`` flips the order,
    in which case the mass may drift by up to the rounding tolerance.
    """
    if cfg.normalize_before_round:
        mass = float(tt_sum(weights)) * grid.cell_volume
        diag.mass_before_norm = mass
        if not math.isfinite(mass) or mass <= _MASS_FLOOR:
            raise DegenerateDensityError("TT weights carry no probability mass")
        weights = tt_round(
            tt_scale(weights, 1.0 / mass), cfg.round_tol, max_rank=cfg.round_max_rank
        )
    else:
        weights = tt_round(weights, cfg.round_tol, max_rank=cfg.round_max_rank)
        mass = float(tt_sum(weights)) * grid.cell_volume
        diag.mass_before_norm = mass
        if not math.isfinite(mass) or mass <= _MASS_FLOOR:
            raise DegenerateDensityError("TT weights carry no probability mass")
        weights = tt_scale(weights, 1.0 / mass)
    diag.clipped_mass += _negative_mass_tt(weights, grid, cfg.densify_guard)
    return weights


# ---------------------------------------------------------------------------
# initial PMDs
# ---------------------------------------------------------------------------


def initial_pmd_dense(prior: MomentEstimate, cfg: GridConfig) -> PmdEstimate:
    """Dense Gaussian prior PMD on a moment-designed grid."""
    grid = design_grid(prior, cfg.n_per_axis, cfg.sigma_mult)
    density = GaussianDensity(prior.cov)
    vals = density.pdf(grid.all_points() - prior.mean).reshape(grid.shape)
    diag = StepDiagnostics()
    weights = _finalize_dense(vals, grid, diag)
    return PmdEstimate(grid=grid, weights=weights, kind="predictive", diag=diag)


def initial_pmd_tt(
    prior: MomentEstimate, cfg: GridConfig, cross_cfg: CrossConfig
) -> PmdEstimate:
    """TT Gaussian prior PMD built with greedy cross approximation."""
    grid = design_grid(prior, cfg.n_per_axis, cfg.sigma_mult)
    density = GaussianDensity(prior.cov)

    def eval_many(idx: np.ndarray) -> np.ndarray:
        return density.pdf(grid.points_for(idx) - prior.mean)

    result = greedy_cross(
        BlackBoxTensor(shape=grid.shape, evaluate_many=eval_many), cross_cfg
    )
    diag = StepDiagnostics()
    diag.record_cross("initial_pmd", result)
    weights = _finalize_tt(result.tt, grid, cfg, diag)
    return PmdEstimate(grid=grid, weights=weights, kind="predictive", diag=diag)


# ---------------------------------------------------------------------------
# measurement update
# ---------------------------------------------------------------------------


def measurement_update(
    pmd: PmdEstimate,
    model: StateSpaceModel,
    z: np.ndarray | None,
    cfg: GridConfig,
    cross_cfg: CrossConfig | None = None,
    diag: StepDiagnostics | None = None,
) -> PmdEstimate:
    """Multiply a predictive PMD by the likelihood of ``z`` and renormalise.

    ``z=None`` skips the update (the filtering PMD equals the predictive
    one).  If the total likelihood-weighted mass underflows, the measurement
    is flagged as an outlier in the diagnostics and the prior is returned
    unchanged, so the recursion keeps running.
    """
    if diag is None:
        diag = StepDiagnostics()
    if z is None:
        return PmdEstimate(pmd.grid, pmd.weights, "filtering", diag)
    z = np.asarray(z, dtype=float)
    grid = pmd.grid
    if pmd.is_tt:
        if cross_cfg is None:
            raise ValueError("TT measurement update requires a CrossConfig")

        def eval_many(idx: np.ndarray) -> np.ndarray:
            return model.likelihood(z, grid.points_for(idx))

        # a thin measurement ridge can hide from random probing entirely, so
        # seed the cross with a coarse sweep of the whole grid
        seeded = replace(cross_cfg, seed_indices=_seed_lattice(grid.shape))
        result = greedy_cross(
            BlackBoxTensor(shape=grid.shape, evaluate_many=eval_many), seeded
        )
        diag.record_cross("likelihood", result)
        product = tt_hadamard(pmd.weights, result.tt)
        mass = float(tt_sum(product)) * grid.cell_volume
        if not math.isfinite(mass) or mass <= _MASS_FLOOR:
            diag.outlier = True
            diag.warnings.append("measurement likelihood underflow; kept prior")
            return PmdEstimate(grid, pmd.weights, "filtering", diag)
        weights = _finalize_tt(product, grid, cfg, diag)
        return PmdEstimate(grid, weights, "filtering", diag)
    lik = model.likelihood(z, grid.all_points()).reshape(grid.shape)
    product = pmd.weights * lik
    mass = float(product.sum()) * grid.cell_volume
    if not math.isfinite(mass) or mass <= _MASS_FLOOR:
        diag.outlier = True
        diag.warnings.append("measurement likelihood underflow; kept prior")
        return PmdEstimate(grid, pmd.weights, "filtering", diag)
    weights = _finalize_dense(product, grid, diag)
    return PmdEstimate(grid, weights, "filtering", diag)


# ---------------------------------------------------------------------------
# transition tensors and time update (standard point-mass filter)
# ---------------------------------------------------------------------------


def _transition_values(
    model: StateSpaceModel,
    new_points: np.ndarray,
    old_points: np.ndarray,
    delta_old: float,
) -> np.ndarray:
    """Transition probability mass ``p(new | old) * cell_volume_old``."""
    density = model.process_noise
    return density.pdf(new_points - model.apply_dynamics(old_points)) * delta_old


def build_tpm_dense(
    model: StateSpaceModel,
    new_grid: Grid,
    old_grid: Grid,
    max_bytes: int | None = None,
) -> np.ndarray:
    """Dense transition probability tensor of shape ``new.shape + old.shape``.

    Entry ``[i..., j...]`` is the Gaussian transition density from old grid
    point ``j`` to new grid point ``i`` times the old cell volume, so
    contracting it with a PMD performs the Chapman-Kolmogorov quadrature.
    ``max_bytes`` refuses construction beyond the given size.
    """
    if new_grid.dim != old_grid.dim or new_grid.dim != model.dim_x:
        raise ValueError("grid dimensions must match the model state dimension")
    n_new = new_grid.total_points
    n_old = old_grid.total_points
    need = n_new * n_old * 8
    if max_bytes is not None and need > max_bytes:
        raise MemoryError(
            f"dense transition tensor needs {need} bytes, exceeding the "
            f"allowed {max_bytes}"
        )
    new_pts = new_grid.all_points()
    old_pts = old_grid.all_points()
    fx = model.apply_dynamics(old_pts)
    density = model.process_noise
    delta_old = old_grid.cell_volume
    out = np.empty((n_new, n_old))
    for start in range(0, n_new, _TPM_CHUNK):
        stop = min(start + _TPM_CHUNK, n_new)
        diff = new_pts[start:stop, None, :] - fx[None, :, :]
        out[start:stop] = density.pdf(diff.reshape(-1, model.dim_x)).reshape(
            stop - start, n_old
        )
    out *= delta_old
    return out.reshape(new_grid.shape + old_grid.shape)


def time_update_dense(
    pmd: PmdEstimate,
    tpm: np.ndarray,
    new_grid: Grid,
    diag: StepDiagnostics | None = None,
) -> PmdEstimate:
    """Contract a dense transition tensor with a dense filtering PMD."""
    if pmd.is_tt:
        raise TypeError("time_update_dense requires dense weights")
    d = pmd.grid.dim
    if tpm.shape != new_grid.shape + pmd.grid.shape:
        raise ValueError("transition tensor shape does not match the grids")
    if diag is None:
        diag = StepDiagnostics()
    raw = np.tensordot(tpm, pmd.weights, axes=d) * pmd.grid.cell_volume
    if not np.isfinite(raw).all() or raw.sum() <= 0.0:
        raise DegenerateDensityError(
            "time update produced a degenerate predictive density"
        )
    weights = _finalize_dense(raw, new_grid, diag)
    return PmdEstimate(new_grid, weights, "predictive", diag)


def transition_blackbox(
    model: StateSpaceModel, new_grid: Grid, old_grid: Grid
) -> BlackBoxTensor:
    """Black-box view of the transition tensor for cross approximation.

    Mode order is ``new_grid`` axes followed by ``old_grid`` axes; values
    match :func:`build_tpm_dense` entrywise.
    """
    if new_grid.dim != old_grid.dim or new_grid.dim != model.dim_x:
        raise ValueError("grid dimensions must match the model state dimension")
    d = model.dim_x
    delta_old = old_grid.cell_volume

    def eval_many(idx: np.ndarray) -> np.ndarray:
        return _transition_values(
            model,
            new_grid.points_for(idx[:, :d]),
            old_grid.points_for(idx[:, d:]),
            delta_old,
        )

    return BlackBoxTensor(shape=new_grid.shape + old_grid.shape, evaluate_many=eval_many)


# ---------------------------------------------------------------------------
# FFT time update (kernels and convolution)
# ---------------------------------------------------------------------------


def _displacements(grid: Grid, idx: np.ndarray) -> np.ndarray:
    """Grid displacements for kernel indices in ifftshift layout.

    Index 0 is zero displacement; indices past ``(n - 1) // 2`` wrap to the
    negative side, matching circular-convolution indexing.
    """
    idx = np.asarray(idx)
    out = np.empty(idx.shape, dtype=float)
    for axis in range(grid.dim):
        n = grid.shape[axis]
        half = (n - 1) // 2
        signed = np.where(idx[:, axis] <= half, idx[:, axis], idx[:, axis] - n)
        out[:, axis] = signed * grid.steps[axis]
    return out


def _kernel_values(
    model: StateSpaceModel, grid: Grid, idx: np.ndarray
) -> np.ndarray:
    """Convolution kernel values ``N(F m; 0, Q) * cell_volume`` at indices."""
    if model.F is None:
        raise ValueError("FFT time update requires linear dynamics")
    disp = _displacements(grid, idx)
    density = model.process_noise
    return density.pdf(disp @ model.F.T) * grid.cell_volume


def fft_kernel_dense(model: StateSpaceModel, grid: Grid) -> np.ndarray:
    """Dense circular-convolution kernel for the FFT time update.

    The kernel evaluates the transition density on lattice displacements of
    the filtering grid mapped through the dynamics matrix, laid out with zero
    displacement at index 0.  Convolving the filtering weights with it yields
    the predictive density on the image lattice ``F x_j``.
    """
    idx = np.indices(grid.shape).reshape(grid.dim, -1).T
    return _kernel_values(model, grid, idx).reshape(grid.shape)


def fft_kernel_blackbox(model: StateSpaceModel, grid: Grid) -> BlackBoxTensor:
    """Black-box view of the FFT kernel for cross approximation."""
    if model.F is None:
        raise ValueError("FFT time update requires linear dynamics")

    def eval_many(idx: np.ndarray) -> np.ndarray:
        return _kernel_values(model, grid, idx)

    return BlackBoxTensor(shape=grid.shape, evaluate_many=eval_many)


def _circular_convolve(kernel: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Circular convolution of two equal-shape dense arrays via FFT."""
    if kernel.shape != weights.shape:
        raise ValueError("kernel and weights must share a shape")
    return np.fft.ifftn(np.fft.fftn(kernel) * np.fft.fftn(weights)).real


def time_update_fft_dense(
    pmd: PmdEstimate,
    kernel: np.ndarray,
    out_grid: Grid | None = None,
    diag: StepDiagnostics | None = None,
) -> PmdEstimate:
    """FFT-based time update for dense weights on a fixed lattice.

    Valid when the predictive grid is the image of the filtering grid under
    the dynamics (for identity dynamics, the same grid).  ``out_grid``
    defaults to the input grid.
    """
    if pmd.is_tt:
        raise TypeError("time_update_fft_dense requires dense weights")
    if any(n % 2 == 0 for n in pmd.grid.shape):
        raise ValueError(f"grid sizes must be odd, got {pmd.grid.shape}")
    if out_grid is None:
        out_grid = pmd.grid
    if diag is None:
        diag = StepDiagnostics()
    raw = _circular_convolve(kernel, pmd.weights)
    weights = _finalize_dense(raw, out_grid, diag)
    return PmdEstimate(out_grid, weights, "predictive", diag)


# ---------------------------------------------------------------------------
# grid redesign (FFT filters)
# ---------------------------------------------------------------------------


def _redesign_geometry(
    m_filt: MomentEstimate, model: StateSpaceModel, cfg: GridConfig
) -> tuple[Grid, Grid]:
    """New filtering grid and moment-designed predictive grid.

    The predictive grid is designed from Kalman-predicted moments; its
    corners are pulled back through the inverse dynamics and circumscribed by
    an axis-aligned grid, which becomes the new filtering grid.  Singular
    dynamics matrices raise ``numpy.linalg.LinAlgError``.
    """
    if model.F is None:
        raise ValueError("grid redesign requires linear dynamics")
    m_pred = kalman_predict(m_filt, model)
    grid_pred = design_grid(m_pred, cfg.n_per_axis, cfg.sigma_mult)
    f_inv = np.linalg.inv(model.F)
    mapped = grid_pred.corners() @ f_inv.T
    grid_filt = Grid.from_bounds(mapped.min(axis=0), mapped.max(axis=0), cfg.n_per_axis)
    return grid_filt, grid_pred


def _interp_dense(weights: np.ndarray, old_grid: Grid, new_grid: Grid) -> np.ndarray:
    """Axis-aligned multilinear regridding of dense weights (zero outside)."""
    out = weights
    for axis in range(old_grid.dim):
        mat = linear_interp_matrix(new_grid.axes[axis], old_grid.axes[axis])
        out = np.tensordot(mat, out, axes=([1], [axis]))
        out = np.moveaxis(out, 0, axis)
    return out


def grid_redesign(
    pmd: PmdEstimate,
    model: StateSpaceModel,
    cfg: GridConfig,
    moments: MomentEstimate | None = None,
    diag: StepDiagnostics | None = None,
) -> tuple[PmdEstimate, Grid]:
    """Move a filtering PMD onto the pre-convolution grid of the FFT update.

    Returns the re-interpolated filtering PMD on the new grid together with
    the moment-designed predictive grid that the convolved density is
    realigned onto afterwards.
    """
    if diag is None:
        diag = StepDiagnostics()
    if moments is None:
        moments, fixed = moments_from_pmd(pmd)
        diag.spd_fixed = diag.spd_fixed or fixed
    grid_filt, grid_pred = _redesign_geometry(moments, model, cfg)
    if pmd.is_tt:
        shifted = tt_interpolate(pmd.weights, pmd.grid, grid_filt)
        weights = _finalize_tt(shifted, grid_filt, cfg, diag)
    else:
        shifted = _interp_dense(pmd.weights, pmd.grid, grid_filt)
        weights = _finalize_dense(shifted, grid_filt, diag)
    return PmdEstimate(grid_filt, weights, "filtering", diag), grid_pred


# ---------------------------------------------------------------------------
# full filter steps
# ---------------------------------------------------------------------------


def dense_pmf_step(
    pmd: PmdEstimate,
    model: StateSpaceModel,
    z: np.ndarray | None,
    cfg: GridConfig,
    tpm_max_bytes: int | None = None,
) -> PmdEstimate:
    """One step of the dense point-mass filter with full TPM contraction."""
    diag = StepDiagnostics()
    filt = measurement_update(pmd, model, z, cfg, diag=diag)
    m_filt, fixed = moments_from_pmd(filt)
    diag.filt_moments = m_filt
    diag.spd_fixed = diag.spd_fixed or fixed
    m_pred = kalman_predict(m_filt, model)
    diag.pred_moments = m_pred
    new_grid = design_grid(m_pred, cfg.n_per_axis, cfg.sigma_mult)
    tpm = build_tpm_dense(model, new_grid, filt.grid, max_bytes=tpm_max_bytes)
    diag.tpm_bytes = tpm.nbytes
    pred = time_update_dense(filt, tpm, new_grid, diag=diag)
    diag.pmd_bytes = pred.storage_bytes()
    return pred


def tt_pmf_step(
    pmd: PmdEstimate,
    model: StateSpaceModel,
    z: np.ndarray | None,
    cfg: GridConfig,
    cross_cfg: CrossConfig,
) -> PmdEstimate:
    """One step of the TT point-mass filter.

    The measurement update multiplies the TT weights by a cross-approximated
    likelihood; the time update cross-approximates the transition tensor over
    the concatenated (new grid, old grid) modes and contracts it against the
    filtering PMD with a backward mode-by-mode sweep.
    """
    diag = StepDiagnostics()
    filt = measurement_update(pmd, model, z, cfg, cross_cfg=cross_cfg, diag=diag)
    m_filt, fixed = moments_from_pmd(filt)
    diag.filt_moments = m_filt
    diag.spd_fixed = diag.spd_fixed or fixed
    m_pred = kalman_predict(m_filt, model)
    diag.pred_moments = m_pred
    new_grid = design_grid(m_pred, cfg.n_per_axis, cfg.sigma_mult)
    tpm_result = greedy_cross(transition_blackbox(model, new_grid, filt.grid), cross_cfg)
    diag.record_cross("transition", tpm_result)
    diag.tpm_bytes = tt_storage_bytes(tpm_result.tt)
    raw = tt_einsum_tpm(tpm_result.tt, filt.weights)
    raw = tt_scale(raw, filt.grid.cell_volume)
    weights = _finalize_tt(raw, new_grid, cfg, diag)
    pred = PmdEstimate(new_grid, weights, "predictive", diag)
    diag.pmd_bytes = pred.storage_bytes()
    return pred


def dense_fft_pmf_step(
    pmd: PmdEstimate,
    model: StateSpaceModel,
    z: np.ndarray | None,
    cfg: GridConfig,
) -> PmdEstimate:
    """One step of the dense point-mass filter with FFT time update.

    After the measurement update the filtering weights are interpolated onto
    the preimage of a moment-designed predictive grid under the dynamics.  On
    that lattice the dynamics act as the identity in index space, so a single
    circular convolution with the process-noise kernel yields the predictive
    weights directly on the predictive grid.
    """
    if model.F is None:
        raise ValueError("FFT time update requires linear dynamics")
    diag = StepDiagnostics()
    filt = measurement_update(pmd, model, z, cfg, diag=diag)
    m_filt, fixed = moments_from_pmd(filt)
    diag.filt_moments = m_filt
    diag.spd_fixed = diag.spd_fixed or fixed
    m_pred = kalman_predict(m_filt, model)
    diag.pred_moments = m_pred
    grid_pred = design_grid(m_pred, cfg.n_per_axis, cfg.sigma_mult)
    f_inv = np.linalg.inv(model.F)
    t0 = time.perf_counter()
    interp = RegularGridInterpolator(
        filt.grid.axes, filt.weights, method="linear", bounds_error=False, fill_value=0.0
    )
    sheared = interp(grid_pred.all_points() @ f_inv.T).reshape(grid_pred.shape)
    diag.interp_seconds = time.perf_counter() - t0
    # The preimage node F^{-1} y_i maps to predictive node y_i, so the kernel
    # sees plain predictive-grid displacements; the preimage cell volume is
    # the predictive cell volume scaled by 1 / |det F|.
    idx = np.indices(grid_pred.shape).reshape(grid_pred.dim, -1).T
    disp = _displacements(grid_pred, idx)
    kernel = (
        model.process_noise.pdf(disp).reshape(grid_pred.shape)
        * grid_pred.cell_volume
        / abs(np.linalg.det(model.F))
    )
    diag.tpm_bytes = kernel.nbytes
    raw = _circular_convolve(kernel, sheared)
    weights = _finalize_dense(raw, grid_pred, diag)
    pred = PmdEstimate(grid_pred, weights, "predictive", diag)
    diag.pmd_bytes = pred.storage_bytes()
    return pred


def tt_fft_pmf_step(
    pmd: PmdEstimate,
    model: StateSpaceModel,
    z: np.ndarray | None,
    cfg: GridConfig,
    cross_cfg: CrossConfig,
) -> PmdEstimate:
    """One step of the TT point-mass filter with FFT time update.

    Mirrors :func:`dense_fft_pmf_step` in TT form: the convolution kernel is
    cross-approximated and applied with per-core FFTs; the final realignment
    from the sheared image lattice onto the axis-aligned predictive grid is
    itself a cross approximation over a continuous multilinear evaluator of
    the convolved TT.
    """
    diag = StepDiagnostics()
    filt = measurement_update(pmd, model, z, cfg, cross_cfg=cross_cfg, diag=diag)
    m_filt, fixed = moments_from_pmd(filt)
    diag.filt_moments = m_filt
    diag.spd_fixed = diag.spd_fixed or fixed
    diag.pred_moments = kalman_predict(m_filt, model)
    shifted, grid_pred = grid_redesign(filt, model, cfg, moments=m_filt, diag=diag)
    kernel_result = greedy_cross(fft_kernel_blackbox(model, shifted.grid), cross_cfg)
    diag.record_cross("kernel", kernel_result)
    diag.tpm_bytes = tt_storage_bytes(kernel_result.tt)
    conv = tt_fft_convolve(
        kernel_result.tt, shifted.weights, cfg.round_tol, max_rank=cfg.round_max_rank
    )
    t0 = time.perf_counter()
    # every node of the moment-designed predictive grid pulls back into the
    # convolution lattice's hull, because that lattice circumscribes the
    # pulled-back predictive corners by construction
    f_inv = np.linalg.inv(model.F)
    sheared_axes = shifted.grid.axes

    def eval_many(idx: np.ndarray) -> np.ndarray:
        points = grid_pred.points_for(idx) @ f_inv.T
        return tt_eval_at_points(conv, sheared_axes, points)

    seeded = replace(cross_cfg, seed_indices=_seed_lattice(grid_pred.shape))
    realign = greedy_cross(
        BlackBoxTensor(shape=grid_pred.shape, evaluate_many=eval_many), seeded
    )
    diag.record_cross("realign", realign)
    diag.interp_seconds = time.perf_counter() - t0
    weights = _finalize_tt(realign.tt, grid_pred, cfg, diag)
    pred = PmdEstimate(grid_pred, weights, "predictive", diag)
    diag.pmd_bytes = pred.storage_bytes()
    return pred


# ---------------------------------------------------------------------------
# bootstrap particle filter
# ---------------------------------------------------------------------------


def initial_particles(
    prior: MomentEstimate, count: int, rng: np.random.Generator
) -> ParticleSet:
    """Equally weighted particles drawn from a Gaussian prior."""
    if count < 1:
        raise ValueError("count must be positive")
    pts = prior.mean + GaussianDensity(prior.cov).sample(rng, count)
    return ParticleSet(pts, np.full(count, 1.0 / count))


def _systematic_resample(
    weights: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Systematic resampling: indices drawn with one uniform offset."""
    n = weights.size
    positions = (np.arange(n) + rng.uniform()) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


def bootstrap_pf_step(
    ps: ParticleSet,
    model: StateSpaceModel,
    z: np.ndarray | None,
    rng: np.random.Generator,
) -> tuple[ParticleSet, MomentEstimate]:
    """One bootstrap particle filter step.

    Weights the predictive particles by the likelihood of ``z``, computes the
    filtering moments from the weighted set, resamples systematically, and
    propagates through the dynamics with fresh process noise.  Returns the
    new predictive particle set and the filtering moments.  Likelihood
    underflow (all weights zero) keeps the prior weights, mirroring the
    outlier policy of the grid filters.
    """
    if z is None:
        weights = ps.weights
    else:
        lik = model.likelihood(np.asarray(z, dtype=float), ps.particles)
        weighted = ps.weights * lik
        total = float(weighted.sum())
        if not math.isfinite(total) or total <= _MASS_FLOOR:
            weights = ps.weights
        else:
            weights = weighted / total
    filt = ParticleSet(ps.particles, weights)
    moments = particle_moments(filt)
    idx = _systematic_resample(weights, rng)
    resampled = ps.particles[idx]
    noise = model.process_noise.sample(rng, ps.count)
    propagated = model.apply_dynamics(resampled) + noise
    new_ps = ParticleSet(propagated, np.full(ps.count, 1.0 / ps.count))
    return new_ps, moments
