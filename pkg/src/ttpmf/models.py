"""State-space models, Gaussian densities and trajectory simulation.

All dynamics and measurement callables are vectorised over a leading axis:
they accept ``(K, dim)`` arrays and return ``(K, dim')`` arrays.  Angles are
measured in degrees; residual components flagged as angles are wrapped to
(-180, 180] before entering any quadratic form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Callable

import numpy as np

__all__ = [
    "GaussianDensity",
    "StateSpaceModel",
    "Trajectory",
    "angle_wrap_residual",
    "linear_gaussian_1d",
    "radar_identity_model",
    "radar_model",
    "scaling_model",
    "simulate",
]


@dataclass(frozen=True)
class GaussianDensity:
    """Zero-mean multivariate normal with a cached Cholesky factor."""

    cov: np.ndarray

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be square")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14):
            raise ValueError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        norm = cov.shape[0] * math.log(2.0 * math.pi) + log_det
        object.__setattr__(self, "_log_norm", -0.5 * norm)

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    def logpdf(self, diff: np.ndarray) -> np.ndarray:
        diff = np.atleast_2d(np.asarray(diff, dtype=float))
        y = np.linalg.solve(self._chol, diff.T)
        return self._log_norm - 0.5 * np.sum(y * y, axis=0)

    def pdf(self, diff: np.ndarray) -> np.ndarray:
        return np.exp(self.logpdf(diff))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.standard_normal((count, self.dim)) @ self._chol.T


def angle_wrap_residual(z_pred: np.ndarray, z_meas: np.ndarray,
                        angle_components: tuple[int, ...] = ()) -> np.ndarray:
    """Residual ``z_pred - z_meas`` with angle components wrapped to (-180, 180].

    Wrapping keeps quadratic forms meaningful across the +-180 degree seam:
    a prediction of 179 against a measurement of -179 yields -2, not 358.
    """
    res = np.atleast_2d(np.asarray(z_pred, dtype=float) - np.asarray(z_meas, dtype=float))
    for c in angle_components:
        res[:, c] = 180.0 - np.mod(180.0 - res[:, c], 360.0)
    return res


@dataclass(frozen=True)
class StateSpaceModel:
    """Discrete-time model x' = f(x) + w, z = h(x) + v with Gaussian noises.

    Exactly one of ``F`` (linear dynamics matrix) or ``f`` (general callable)
    must be given.  ``H`` may be supplied when the measurement is linear; it
    enables the exact Kalman reference.  ``angle_components`` lists the
    measurement components that are angles in degrees.
    """

    dim_x: int
    dim_z: int
    h: Callable
    Q: np.ndarray
    R: np.ndarray
    F: np.ndarray | None = None
    f: Callable | None = None
    H: np.ndarray | None = None
    angle_components: tuple[int, ...] = ()
    name: str = ""

    def __post_init__(self):
        if (self.F is None) == (self.f is None):
            raise ValueError("exactly one of F and f must be provided")
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))
        if self.F is not None:
            F = np.atleast_2d(np.asarray(self.F, dtype=float))
            if F.shape != (self.dim_x, self.dim_x):
                raise ValueError(f"F must be {self.dim_x} x {self.dim_x}")
            object.__setattr__(self, "F", F)
        if self.H is not None:
            H = np.atleast_2d(np.asarray(self.H, dtype=float))
            if H.shape != (self.dim_z, self.dim_x):
                raise ValueError(f"H must be {self.dim_z} x {self.dim_x}")
            object.__setattr__(self, "H", H)
        if self.Q.shape != (self.dim_x, self.dim_x):
            raise ValueError("Q has the wrong shape")
        if self.R.shape != (self.dim_z, self.dim_z):
            raise ValueError("R has the wrong shape")
        object.__setattr__(self, "_noise_q", GaussianDensity(self.Q))
        object.__setattr__(self, "_noise_r", GaussianDensity(self.R))

    @property
    def is_linear(self) -> bool:
        return self.F is not None

    @property
    def process_noise(self) -> GaussianDensity:
        return self._noise_q

    @property
    def measurement_noise(self) -> GaussianDensity:
        return self._noise_r

    def apply_dynamics(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.F is not None:
            return x @ self.F.T
        return np.atleast_2d(self.f(x))

    def measure(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.atleast_2d(self.h(x))

    def likelihood(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        """p(z | x) for a batch of states, with angle-aware residuals."""
        res = angle_wrap_residual(self.measure(x), np.asarray(z, dtype=float), self.angle_components)
        return self._noise_r.pdf(res)


@dataclass(frozen=True)
class Trajectory:
    """Simulated states ``x_0..x_{k-1}`` and their measurements."""

    states: np.ndarray
    measurements: np.ndarray
    seed: int


def simulate(model: StateSpaceModel, x0_mean, x0_cov, k_f: int, seed: int,
             noise_free: bool = False) -> Trajectory:
    """Draw one trajectory of ``k_f`` states with measurements at every state.

    ``x_0`` is drawn from N(x0_mean, x0_cov) and propagated with process
    noise; a measurement is generated at each stored state.  With
    ``noise_free`` the initial state is the prior mean and all noises vanish,
    so ``x_{k+1} = f(x_k)`` exactly.  Bit-identical for a fixed seed.
    """
    if k_f < 1:
        raise ValueError("k_f must be >= 1")
    rng = np.random.default_rng(seed)
    x0_mean = np.atleast_1d(np.asarray(x0_mean, dtype=float))
    prior = GaussianDensity(x0_cov)
    states = np.empty((k_f, model.dim_x))
    measurements = np.empty((k_f, model.dim_z))
    if noise_free:
        x = x0_mean.copy()
    else:
        x = x0_mean + prior.sample(rng, 1)[0]
    for k in range(k_f):
        states[k] = x
        z = model.measure(x[None, :])[0]
        if not noise_free:
            z = z + model.measurement_noise.sample(rng, 1)[0]
        measurements[k] = z
        x = model.apply_dynamics(x[None, :])[0]
        if not noise_free:
            x = x + model.process_noise.sample(rng, 1)[0]
    return Trajectory(states=states, measurements=measurements, seed=seed)


# ---------------------------------------------------------------------------
# concrete models
# ---------------------------------------------------------------------------

_TRACKING_F = np.array([[1.1, 0.1], [-0.2, 1.1]])


def _range_bearing(x: np.ndarray) -> np.ndarray:
    """Range to the origin and four-quadrant bearing in degrees."""
    x = np.atleast_2d(x)
    rng = np.hypot(x[:, 0], x[:, 1])
    ang = np.degrees(np.arctan2(x[:, 1], x[:, 0]))
    return np.column_stack([rng, ang])


def radar_model() -> StateSpaceModel:
    """2D tracking model with range/bearing measurements in degrees."""
    return StateSpaceModel(
        dim_x=2,
        dim_z=2,
        h=_range_bearing,
        Q=np.eye(2),
        R=np.diag([1.0, 0.1]),
        F=_TRACKING_F.copy(),
        angle_components=(1,),
        name="radar",
    )


def radar_identity_model() -> StateSpaceModel:
    """Same dynamics as :func:`radar_model` but with a linear identity
    measurement, so the exact Kalman filter applies."""
    return StateSpaceModel(
        dim_x=2,
        dim_z=2,
        h=lambda x: np.atleast_2d(x),
        Q=np.eye(2),
        R=np.diag([1.0, 0.1]),
        F=_TRACKING_F.copy(),
        H=np.eye(2),
        name="linear2d",
    )


def linear_gaussian_1d() -> StateSpaceModel:
    """Scalar linear-Gaussian model with a direct state measurement."""
    return StateSpaceModel(
        dim_x=1,
        dim_z=1,
        h=lambda x: np.atleast_2d(x),
        Q=np.array([[1.0]]),
        R=np.array([[1.0]]),
        F=np.array([[0.9]]),
        H=np.array([[1.0]]),
        name="linear1d",
    )


def scaling_model(dim: int) -> StateSpaceModel:
    """Family of models for dimension sweeps.

    The dynamics matrix embeds the 2D tracking block along the diagonal; an
    odd trailing dimension gets a scalar 0.95 block.  Process noise is the
    identity; the measurement is range to the origin plus the bearing of the
    first two axes, with the radar noise levels.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    F = np.zeros((dim, dim))
    for i in range(0, dim - 1, 2):
        F[i : i + 2, i : i + 2] = _TRACKING_F
    if dim % 2 == 1:
        F[dim - 1, dim - 1] = 0.95

    if dim == 1:
        def h(x):
            x = np.atleast_2d(x)
            return np.abs(x[:, :1])

        return StateSpaceModel(
            dim_x=1, dim_z=1, h=h, Q=np.eye(1), R=np.array([[1.0]]),
            F=F, name="scaling-1",
        )

    def h(x):
        x = np.atleast_2d(x)
        rng = np.linalg.norm(x, axis=1)
        ang = np.degrees(np.arctan2(x[:, 1], x[:, 0]))
        return np.column_stack([rng, ang])

    return StateSpaceModel(
        dim_x=dim,
        dim_z=2,
        h=h,
        Q=np.eye(dim),
        R=np.diag([1.0, 0.1]),
        F=F,
        angle_components=(1,),
        name=f"scaling-{dim}",
    )
