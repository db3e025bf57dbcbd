import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pegp.baselines import (ASMConfig, RotatedGPConfig, asm_reconstruct, default_theta,
                            fit_rotated_hypers, gp_posterior, rotate, rotated_gp_reconstruct,
                            rotated_se)
from pegp.data import CoordScaler, ObservationSet, SpaceTimeGrid
from pegp.errors import ValidationError

GRID = SpaceTimeGrid(0.0, 300.0, 0.0, 100.0, 10.0, 5.0)


def obs_from(points, rho, v):
    pts = np.asarray(points, float)
    n = len(pts)
    return ObservationSet(np.concatenate([pts[:, 0]] * 2), np.concatenate([pts[:, 1]] * 2),
                          np.repeat([0, 1], n), np.concatenate([rho, v]))


def random_obs(seed, n=30, grid=GRID):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(grid.x_min, grid.x_max, n), rng.uniform(grid.t_min, grid.t_max, n)])
    return obs_from(pts, rng.uniform(0.01, 0.1, n), rng.uniform(1.0, 30.0, n))


def test_asm_defaults():
    c = ASMConfig()
    assert (c.dx, c.dt, c.sigma_x, c.tau_t) == (10.0, 5.0, 200.0, 10.0)
    with pytest.raises(ValidationError):
        ASMConfig(c_cong=1.0)
    with pytest.raises(ValidationError):
        ASMConfig(sigma_x=0.0)


def test_asm_constant_observations():
    o = random_obs(0)
    o = ObservationSet(o.x, o.t, o.output, np.where(o.output == 1, 20.0, 0.05))
    f = asm_reconstruct(o, GRID)
    np.testing.assert_allclose(f.v, 20.0, rtol=1e-12)
    np.testing.assert_allclose(f.rho, 0.05, rtol=1e-12)


def test_asm_single_observation_fills_grid():
    f = asm_reconstruct(obs_from([[100.0, 40.0]], [0.07], [12.0]), GRID)
    np.testing.assert_allclose(f.v, 12.0, rtol=1e-12)
    np.testing.assert_allclose(f.rho, 0.07, rtol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 40))
def test_asm_is_convex_combination(seed, n):
    o = random_obs(seed, n)
    f = asm_reconstruct(o, GRID)
    v = o.select(1).value
    r = o.select(0).value
    assert f.v.min() >= v.min() - 1e-9 and f.v.max() <= v.max() + 1e-9
    assert f.rho.min() >= r.min() - 1e-12 and f.rho.max() <= r.max() + 1e-12


def test_asm_translation_invariant():
    o = random_obs(4)
    shift = np.array([1000.0, 500.0])
    moved_grid = SpaceTimeGrid(GRID.x_min + shift[0], GRID.x_max + shift[0],
                               GRID.t_min + shift[1], GRID.t_max + shift[1], GRID.dx, GRID.dt)
    moved = ObservationSet(o.x + shift[0], o.t + shift[1], o.output, o.value)
    a, b = asm_reconstruct(o, GRID), asm_reconstruct(moved, moved_grid)
    np.testing.assert_allclose(a.v, b.v, rtol=1e-9)


def test_asm_errors_and_speed_only():
    with pytest.raises(ValidationError):
        asm_reconstruct(ObservationSet.empty(), GRID)
    o = random_obs(1).select(1)
    f = asm_reconstruct(o, GRID)
    assert not f.mask.any() and np.isnan(f.rho).all()


def test_zero_rotation_is_axis_aligned_se():
    rng = np.random.default_rng(0)
    X1, X2 = rng.normal(size=(5, 2)), rng.normal(size=(6, 2))
    K = np.asarray(rotated_se(X1, X2, 0.0, 0.7, 1.3, 2.0))
    d = X1[:, None, :] - X2[None, :, :]
    ref = 2.0 * np.exp(-0.5 * (d[..., 0] ** 2 / 0.49 + d[..., 1] ** 2 / 1.69))
    np.testing.assert_allclose(K, ref, rtol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-1.5, 1.5), st.integers(0, 10**6))
def test_rotated_gp_equivariance(phi, theta, seed):
    rng = np.random.default_rng(seed)
    X, Xq = rng.uniform(-1, 1, (15, 2)), rng.uniform(-1, 1, (7, 2))
    y = rng.normal(size=15)
    hp = {"signal_var": 1.2, "noise_var": 0.05, "ell_a": 0.4, "ell_b": 0.9, "theta": theta}
    m0, v0 = gp_posterior(X, y, Xq, hp)
    # turning the data by phi is the inverse of turning the axes by phi
    Xr, Xqr = np.asarray(rotate(X, -phi)), np.asarray(rotate(Xq, -phi))
    m1, v1 = gp_posterior(Xr, y, Xqr, {**hp, "theta": theta + phi})
    assert np.max(np.abs(m0 - m1)) < 1e-8 and np.max(np.abs(v0 - v1)) < 1e-8


def test_rotated_gp_interpolates_without_noise():
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, (10, 2))
    y = rng.normal(size=10)
    hp = {"signal_var": 1.0, "noise_var": 1e-10, "ell_a": 0.5, "ell_b": 0.5, "theta": 0.3}
    m, v = gp_posterior(X, y, X, hp, jitter=0.0)
    np.testing.assert_allclose(m, y, atol=1e-6)
    assert v.max() < 1e-6


def test_rotated_gp_lml_trace_non_decreasing():
    rng = np.random.default_rng(3)
    X = rng.uniform(-1, 1, (40, 2))
    y = np.sin(2 * X[:, 0] + X[:, 1]) + 0.1 * rng.normal(size=40)
    _, trace = fit_rotated_hypers(X, y, (0.2, 0.3, 0.5, 0.5), 0.2, RotatedGPConfig(iterations=30))
    assert len(trace) > 1 and np.all(np.diff(trace) >= 0)


def test_default_theta_follows_wave_slope():
    coords = CoordScaler(0.0, 100.0, 0.0, 50.0)
    th = default_theta(-5.0, coords)
    # the rotated first axis points along (dx, dt) = (c_z, 1) up to sign
    d = np.array([-5.0 * 50.0 / 100.0, 1.0])
    d /= np.linalg.norm(d)
    assert abs(abs(np.cos(th) * d[0] + np.sin(th) * d[1]) - 1.0) < 1e-12 or \
        abs(abs(-np.sin(th) * d[0] + np.cos(th) * d[1]) - 1.0) < 1e-12
    assert -math.pi / 2 < th <= math.pi / 2


def test_rotated_gp_reconstruct_smooth_field():
    rng = np.random.default_rng(5)
    pts = np.column_stack([rng.uniform(0, 300, 80), rng.uniform(0, 100, 80)])
    rho = 0.05 + 0.01 * np.sin(pts[:, 0] / 50.0)
    v = 20.0 + 3.0 * np.cos(pts[:, 1] / 20.0)
    fit = rotated_gp_reconstruct(obs_from(pts, rho, v), GRID, RotatedGPConfig(iterations=50))
    X, T = np.meshgrid(GRID.x_centers, GRID.t_centers, indexing="ij")
    assert np.abs(fit.field.v - (20.0 + 3.0 * np.cos(T / 20.0))).mean() < 0.5
    assert np.abs(fit.field.rho - (0.05 + 0.01 * np.sin(X / 50.0))).mean() < 0.002
    assert np.all(fit.var_v >= 0)
    with pytest.raises(ValidationError):
        rotated_gp_reconstruct(obs_from(pts[:1], rho[:1], v[:1]), GRID)
