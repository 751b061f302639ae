"""Model definitions, angle wrapping and simulation determinism."""

from __future__ import annotations

import numpy as np
import pytest

from ttpmf.models import (
    GaussianDensity,
    StateSpaceModel,
    angle_wrap_residual,
    linear_gaussian_1d,
    radar_identity_model,
    radar_model,
    scaling_model,
    simulate,
)


class TestGaussianDensity:
    def test_pdf_matches_closed_form_1d(self):
        g = GaussianDensity([[1.0]])
        val = g.pdf(np.array([[0.0]]))[0]
        assert val == pytest.approx(0.3989422804014327, rel=1e-12)

    def test_pdf_matches_scipy(self):
        from scipy.stats import multivariate_normal

        rng = np.random.default_rng(0)
        cov = np.array([[2.0, 0.4], [0.4, 1.0]])
        g = GaussianDensity(cov)
        pts = rng.standard_normal((20, 2))
        np.testing.assert_allclose(
            g.pdf(pts), multivariate_normal(mean=[0, 0], cov=cov).pdf(pts), rtol=1e-10
        )

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError):
            GaussianDensity([[1.0, 2.0], [2.0, 1.0]])


class TestAngleWrap:
    def test_seam_example(self):
        res = angle_wrap_residual(
            np.array([[10.0, 179.0]]), np.array([10.0, -179.0]), angle_components=(1,)
        )
        np.testing.assert_allclose(res, [[0.0, -2.0]])

    def test_plain_components_untouched(self):
        res = angle_wrap_residual(np.array([[400.0, 10.0]]), np.array([100.0, 350.0]))
        np.testing.assert_allclose(res, [[300.0, -340.0]])

    def test_wrap_boundary_is_half_open(self):
        res = angle_wrap_residual(np.array([[180.0]]), np.array([0.0]), (0,))
        assert res[0, 0] == 180.0
        res = angle_wrap_residual(np.array([[-180.0]]), np.array([0.0]), (0,))
        assert res[0, 0] == 180.0


class TestRadarModel:
    def test_dynamics_matrix_action(self):
        m = radar_model()
        np.testing.assert_allclose(
            m.apply_dynamics(np.array([[1.0, 1.0]])), [[1.2, 0.9]]
        )

    def test_measurement_example(self):
        m = radar_model()
        z = m.measure(np.array([[3.0, 4.0]]))
        np.testing.assert_allclose(z, [[5.0, 53.13010235415598]], rtol=1e-10)

    def test_bearing_covers_all_quadrants(self):
        m = radar_model()
        z = m.measure(np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]))
        np.testing.assert_allclose(z[:, 1], [45.0, 135.0, -135.0, -45.0])

    def test_likelihood_peaks_at_truth(self):
        m = radar_model()
        x_true = np.array([20.0, 20.0])
        z = m.measure(x_true[None, :])[0]
        pts = np.array([[20.0, 20.0], [22.0, 18.0], [30.0, 5.0]])
        like = m.likelihood(z, pts)
        assert like[0] > like[1] > like[2]


class TestModelValidation:
    def test_requires_exactly_one_dynamics(self):
        with pytest.raises(ValueError):
            StateSpaceModel(
                dim_x=1, dim_z=1, h=lambda x: x, Q=[[1.0]], R=[[1.0]],
                F=[[1.0]], f=lambda x: x,
            )
        with pytest.raises(ValueError):
            StateSpaceModel(dim_x=1, dim_z=1, h=lambda x: x, Q=[[1.0]], R=[[1.0]])


class TestScalingModels:
    def test_dim_2_matches_radar_dynamics(self):
        np.testing.assert_allclose(scaling_model(2).F, radar_model().F)

    def test_odd_dims_get_scalar_block(self):
        m = scaling_model(5)
        np.testing.assert_allclose(m.F[4, 4], 0.95)
        np.testing.assert_allclose(m.F[:2, :2], radar_model().F)
        np.testing.assert_allclose(m.F[2:4, 2:4], radar_model().F)
        assert m.F[4, :4].sum() == 0.0
        np.testing.assert_allclose(m.Q, np.eye(5))

    def test_measurement_is_range_and_first_plane_bearing(self):
        m = scaling_model(3)
        z = m.measure(np.array([[3.0, 4.0, 12.0]]))
        np.testing.assert_allclose(z, [[13.0, 53.13010235415598]], rtol=1e-10)


class TestSimulate:
    def test_bit_identical_for_same_seed(self):
        m = radar_model()
        t1 = simulate(m, [20.0, 20.0], np.diag([9.0, 9.0]), k_f=10, seed=7)
        t2 = simulate(m, [20.0, 20.0], np.diag([9.0, 9.0]), k_f=10, seed=7)
        assert np.array_equal(t1.states, t2.states)
        assert np.array_equal(t1.measurements, t2.measurements)

    def test_different_seeds_differ(self):
        m = radar_model()
        t1 = simulate(m, [20.0, 20.0], np.diag([9.0, 9.0]), k_f=5, seed=1)
        t2 = simulate(m, [20.0, 20.0], np.diag([9.0, 9.0]), k_f=5, seed=2)
        assert not np.allclose(t1.states, t2.states)

    def test_shapes(self):
        m = radar_model()
        t = simulate(m, [20.0, 20.0], np.diag([9.0, 9.0]), k_f=10, seed=0)
        assert t.states.shape == (10, 2)
        assert t.measurements.shape == (10, 2)

    def test_noise_free_follows_dynamics_exactly(self):
        m = radar_model()
        t = simulate(m, [20.0, 20.0], np.diag([9.0, 9.0]), k_f=6, seed=0, noise_free=True)
        np.testing.assert_allclose(t.states[0], [20.0, 20.0])
        for k in range(5):
            np.testing.assert_allclose(t.states[k + 1], m.F @ t.states[k], rtol=1e-14)
        np.testing.assert_allclose(
            t.measurements, m.measure(t.states), rtol=1e-14
        )

    def test_linear_1d_model_runs(self):
        m = linear_gaussian_1d()
        t = simulate(m, [0.0], [[4.0]], k_f=10, seed=3)
        assert t.states.shape == (10, 1)

    def test_identity_measurement_model(self):
        m = radar_identity_model()
        assert m.H is not None
        t = simulate(m, [20.0, 20.0], np.diag([9.0, 9.0]), k_f=4, seed=5)
        assert t.measurements.shape == (4, 2)
