import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from pegp import kernels as kn
from pegp.data import CoordScaler, Field, SpaceTimeGrid
from pegp.diagnostics import (cka, coefficient_of_variation, decompose_mean, diagnose, energy_gap,
                              joint_ratio, principal_angles, regime_mask, sample_points, shares,
                              uq_fields)
from pegp.errors import ValidationError
from pegp.svgp import make_state

GRID = SpaceTimeGrid(0.0, 100.0, 0.0, 50.0, 10.0, 5.0)


def random_state(mode="lwr_bidirectional", seed=0, b_res=0.3):
    rng = np.random.default_rng(seed)
    P = kn.N_OUTPUTS[mode]
    spec = kn.KernelSpec(mode, lambda1=0.6, lambda2=0.2, alpha=-0.3, beta=0.7, c_f=0.8,
                         c_b=-0.3, coupling=0.5,
                         residual=tuple(kn.ResidualHyper(b_res=b_res) for _ in range(P)))
    Z = rng.uniform(-1, 1, (10, 2))
    # maps the 100 m x 50 s test grid onto the inducing-point box
    coords = CoordScaler(50.0, 50.0, 25.0, 25.0)
    return make_state(spec, Z, m=rng.normal(size=P * 10), coords=coords)


def test_decomposition_is_additive_and_shares_sum_to_one():
    st_ = random_state()
    pts = np.random.default_rng(1).uniform(-1, 1, (50, 2))
    mu, phys, res = decompose_mean(st_, pts)
    assert np.max(np.abs(mu - phys - res)) <= 1e-10 * np.max(np.abs(mu))
    rep = shares(mu, phys, res)
    for a, b in zip(rep.S_phys, rep.S_res):
        assert abs(a + b - 1.0) < 1e-10
    assert min(rep.E_phys + rep.E_res) >= 0
    assert energy_gap(mu, phys, res) < 1e-9
    # independent dot-product cross-check of the aligned share
    k = 0
    ref = sum(float(u) * float(w) for u, w in zip(mu[:, k], phys[:, k])) / sum(float(u) ** 2 for u in mu[:, k])
    assert rep.S_phys[k] == pytest.approx(ref, rel=1e-12)


def test_zero_residual_gives_full_physics_share():
    st_ = random_state(b_res=0.0)
    pts = np.random.default_rng(2).uniform(-1, 1, (20, 2))
    mu, phys, res = decompose_mean(st_, pts)
    assert np.all(res == 0)
    assert shares(mu, phys, res).S_phys == (1.0, 1.0)


def test_share_examples():
    mu = np.array([1.0, 2.0, 3.0])
    r = shares(mu, mu, np.zeros(3))
    assert (r.S_phys[0], r.S_res[0], r.E_phys[0]) == (1.0, 0.0, 1.0)
    perp = np.array([2.0, -1.0, 0.0])
    assert shares(mu, perp, mu - perp).S_phys[0] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValidationError, match="degenerate mean"):
        shares(np.zeros(3), np.zeros(3), np.zeros(3))


def test_joint_ratio_ordering():
    rng = np.random.default_rng(3)
    base = rng.normal(size=(40, 2))
    noise = 0.2 * rng.normal(size=(40, 2))
    physics_dominant = joint_ratio(base + noise, base, noise)
    residual_dominant = joint_ratio(base + noise, noise, base)
    assert physics_dominant < 1 < residual_dominant


def test_plain_mode_has_no_decomposition():
    with pytest.raises(ValidationError):
        decompose_mean(random_state("plain_se"), np.zeros((3, 2)))


def test_cka_examples():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 3))
    assert cka(X, X) == pytest.approx(1.0, abs=1e-12)
    a = np.array([1.0, -1.0, 1.0, -1.0])
    b = np.array([1.0, 1.0, -1.0, -1.0])
    assert cka(a, b) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValidationError):
        cka(np.ones(5), X[:5, 0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 10.0), st.booleans())
def test_cka_scale_and_rotation_invariance(seed, c, negate):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(25, 3)), rng.normal(size=(25, 2))
    R = ortho_group.rvs(3, random_state=seed % (2**32))
    c = -c if negate else c
    assert abs(cka(c * X @ R, Y) - cka(X, Y)) < 1e-10
    assert 0.0 <= cka(X, Y) <= 1.0


def test_principal_angle_examples():
    e = np.eye(3)
    # centring would remove a direction from a 3-row matrix, so pad with mirrored rows
    X = np.vstack([e[:, [0, 1]], -e[:, [0, 1]]])
    Y = np.vstack([e[:, [0, 2]], -e[:, [0, 2]]])
    np.testing.assert_allclose(principal_angles(X, Y), [0.0, 90.0], atol=1e-9)
    np.testing.assert_allclose(principal_angles(X, X), [0.0, 0.0], atol=1e-6)
    Z = np.vstack([e[:, [2]], -e[:, [2]]])
    np.testing.assert_allclose(principal_angles(X, Z), [90.0], atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_principal_angles_sorted_symmetric(seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(20, 4)), rng.normal(size=(20, 3))
    a, b = principal_angles(X, Y), principal_angles(Y, X)
    assert np.all(np.diff(a) >= 0) and a.min() >= 0 and a.max() <= 90
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_regimes_and_sampling():
    v = np.full(GRID.shape, 25.0)
    v[:5] = 5.0
    f = Field(GRID, np.full(GRID.shape, 0.03), v)
    m = regime_mask(f, 60 / 3.6)
    assert m["free"].sum() == 50 and m["congested"].sum() == 50
    assert not regime_mask(f, 1.0)["congested"].any()
    a = sample_points(m["free"], GRID, 20, seed=4)
    assert np.array_equal(a, sample_points(m["free"], GRID, 20, seed=4))
    assert len(sample_points(m["free"], GRID, 50)) == 50
    assert len(sample_points(m["free"], GRID, 80)) == 50


def test_uq_fields_lwr_floor_and_non_negative():
    st_ = random_state()
    u = uq_fields(st_, GRID)
    for k in ("var_rho_latent", "var_v_latent", "var_rho_obs", "var_v_obs"):
        assert np.all(u[k] >= 0)
    np.testing.assert_allclose(u["var_v_obs"] - u["var_v_latent"], u["floor_v"], rtol=1e-12)


def test_uq_fields_arz_speed_variance_is_total_w2():
    from pegp.physics import PressureLaw
    from pegp.data import Standardizer
    from dataclasses import replace
    st_ = random_state("arz")
    st_ = replace(st_, standardizer=Standardizer((30.0, 20.0), (3.0, 2.0), ("w1", "w2"), (False, False)),
                  pressure=PressureLaw(scale=4000.0))
    u = uq_fields(st_, GRID)
    from pegp.svgp import predict_latent
    _, cov = predict_latent(st_, GRID.cell_points())
    tot22 = cov[:, 1, 1] * 4.0 + st_.noise[1] * 4.0
    assert np.array_equal(u["var_v_obs"].ravel(), tot22)


def test_coefficient_of_variation():
    assert coefficient_of_variation([2.0, 2.0]) == 0.0
    assert coefficient_of_variation([1.0, 3.0, np.nan]) == pytest.approx(0.5)


def test_diagnose_reports():
    v = np.tile(np.linspace(2.0, 30.0, GRID.nx)[:, None], (1, GRID.nt))
    f = Field(GRID, np.full(GRID.shape, 0.03), v)
    st_ = random_state()
    rep, sims = diagnose(st_, f, n=30, seed=0)
    assert rep.m == 30
    assert {s.regime for s in sims} == {"free", "congested"}
    for s in sims:
        assert 0 <= s.cka <= 1
