"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -v tests/test_acceptance.py``; the lines appear even when
output capture is on.  Budgets are scaled by 4 / min(cpu_count, 4) because
they are stated for a 4-core desktop.
"""

import json
import os
import time
from dataclasses import replace

import numpy as np
import pytest

import oracles
from pegp import kernels as kn
from pegp.cli import main
from pegp.config import config_from_dict
from pegp.data import Field, SpaceTimeGrid, field_observations
from pegp.diagnostics import (cka, coefficient_of_variation, decompose_mean, energy_gap,
                              joint_ratio, principal_angles, shares, uq_fields)
from pegp.experiment import make_truth, run_loops, run_sweep
from pegp.metrics import is_non_increasing, summarize
from pegp.physics import FundamentalDiagram
from pegp.sim import (default_scenario, emit_trajectories, godunov_lwr, linear_advection_field,
                      ring_scenario, arz_relax)
from pegp.data import sample_probe
from pegp.svgp import (LatentData, SVGPConfig, collapsed_elbo, elbo, make_state, optimal_state,
                       predict_field, predict_latent, train)

CORES = min(os.cpu_count() or 1, 4)
SLOWDOWN = 4 / CORES
_START = []  # wall clock of the first acceptance test that runs

# settings shared by the data-driven criteria
MODEL = {"train_lambdas": True, "ell": 2.0, "iterations": 150, "lr": 0.1}
OVERRIDES = {"pegp_lwr": {"M": 160}, "pegp_arz": {"M": 64, "arz_expansion": "full"}}


@pytest.fixture
def report(capsys):
    if not _START:
        _START.append(time.perf_counter())

    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    return emit


def budget(seconds):
    return seconds * SLOWDOWN


def rel_err(a, b, floor=1e-10):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


# --------------------------------------------------------------------------
# 1. kernel derivatives against high-precision finite differences
# --------------------------------------------------------------------------

def test_criterion_1_kernel_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_d = worst_k = 0.0
    for _ in range(100):
        s, sp = rng.uniform(-1.5, 1.5, 2), rng.uniform(-1.5, 1.5, 2)
        base = (rng.uniform(0.5, 2.0), rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5))
        l1, l2, l0, cf, cb = rng.uniform(-2, 2, 5)
        alpha, tau, wf, c = rng.uniform(-1, 1), rng.uniform(0.3, 3), rng.uniform(0, 1), rng.uniform(-1, 1)
        beta = 1.0 + alpha
        got = kn.se_derivative_family(s, sp, kn.SEHyper(*base))
        ref = oracles.se_quantities(s, sp, *base)
        worst_d = max(worst_d, max(abs(got[k] - ref[k]) / max(abs(ref[k]), 1e-12) for k in ref))
        d = oracles.partials(s, sp, base)
        arz = kn.KernelSpec("arz", kn.SEHyper(*base), lambda1=l1, lambda2=l2, alpha=alpha,
                            beta=beta, tau=tau)
        pairs = [
            (kn.arz_block_kernel(s, sp, arz), oracles.arz_as_printed(d, l1, l2, alpha, beta, tau)),
            (kn.arz_block_kernel_full(s, sp, arz), oracles.arz_full(d, l1, l2, alpha, beta, tau)),
            (kn.lwr_scalar_kernel(s, sp, kn.KernelSpec("lwr_scalar", kn.SEHyper(*base), lambda0=l0)),
             oracles.lwr_scalar(d, l0)),
            (kn.lwr_bidirectional_kernel(s, sp, kn.KernelSpec(
                "lwr_bidirectional", kn.SEHyper(*base), c_f=cf, c_b=cb, w_f=wf, coupling=c)),
             oracles.lwr_bidirectional(d, cf, cb, wf, c)),
        ]
        for a, b in pairs:
            # entries that cancel to ~0 are compared against the block scale
            scale = max(np.max(np.abs(b)), 1e-12)
            worst_k = max(worst_k, float(np.max(np.abs(np.asarray(a) - b)
                                                / np.maximum(np.abs(b), 1e-6 * scale))))
    dt = time.perf_counter() - t0
    ok = worst_d <= 1e-5 and worst_k <= 1e-4 and dt < budget(30)
    report(1, ok, f"max rel err derivatives {worst_d:.1e}, operator kernels {worst_k:.1e}, {dt:.1f}s")
    assert ok


# --------------------------------------------------------------------------
# 2. positive-definiteness sweep
# --------------------------------------------------------------------------

def _draw_spec(rng, mode, expansion):
    base = kn.SEHyper(rng.uniform(0.3, 3.0), rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0))
    P = kn.N_OUTPUTS[mode]
    res = tuple(kn.ResidualHyper(rng.uniform(0.0, 1.0), rng.uniform(0.05, 1.0),
                                 rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0)) for _ in range(P))
    alpha = rng.uniform(-1, 1)
    return kn.KernelSpec(mode, base, lambda1=rng.uniform(-3, 3), lambda2=rng.uniform(-3, 3),
                         alpha=alpha, beta=1.0 + alpha, tau=rng.uniform(0.1, 5.0),
                         lambda0=rng.uniform(-3, 3), c_f=rng.uniform(-3, 3), c_b=rng.uniform(-3, 3),
                         w_f=rng.uniform(0, 1), coupling=rng.uniform(-1, 1), residual=res,
                         arz_expansion=expansion)


def test_criterion_2_positive_definiteness(report):
    t0 = time.perf_counter()
    cases = [("arz", "as_printed"), ("arz", "full"), ("lwr_scalar", "as_printed"),
             ("lwr_bidirectional", "as_printed"), ("plain_se", "as_printed")]
    worst = {}
    chol_fail = 0
    for i, (mode, exp) in enumerate(cases):
        rng = np.random.default_rng(200 + i)
        w = np.inf
        for _ in range(200):
            spec = _draw_spec(rng, mode, exp)
            pts = rng.uniform(-2, 2, (100, 2))
            G = kn.gram(pts, spec)
            w = min(w, float(np.linalg.eigvalsh(G).min() / np.trace(G)))
            try:
                np.linalg.cholesky(kn.add_jitter(G))
            except np.linalg.LinAlgError:
                chol_fail += 1
        worst[f"{mode}/{exp}"] = w
    dt = time.perf_counter() - t0
    eig_ok = all(v >= -1e-8 for k, v in worst.items() if k != "arz/as_printed")
    ok = eig_ok and chol_fail == 0 and dt < budget(120)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(2, ok, f"min eig/trace: {detail}; cholesky failures {chol_fail}; {dt:.1f}s")
    assert ok


# --------------------------------------------------------------------------
# 3. SVGP exactness against the dense GP
# --------------------------------------------------------------------------

def test_criterion_3_svgp_exactness(report):
    rng = np.random.default_rng(3)
    spec = kn.KernelSpec("arz", lambda1=0.5, lambda2=0.2, alpha=-0.5, beta=0.5, tau=1.0,
                         arz_expansion="full")
    n = 30
    X = rng.uniform(-1, 1, (n, 2))
    K = kn.gram(X, spec)
    y = np.linalg.cholesky(K + 0.1 * np.eye(2 * n)) @ rng.standard_normal(2 * n)
    d = LatentData(X, np.tile(np.arange(n), 2), np.repeat([0, 1], n), y)
    state = optimal_state(make_state(spec, X, noise=0.1, jitter=1e-10), d)
    lml, pm, pv = oracles.dense_gp(K, y, np.full(2 * n, 0.1), K, np.diag(K))
    gap = abs(elbo(state, d) - lml)
    mu, cov = predict_latent(state, X, standardized=True)
    mean_err = float(np.max(np.abs(mu.T.ravel() - pm)))
    var_err = float(np.max(np.abs(np.concatenate([cov[:, 0, 0], cov[:, 1, 1]]) - pv)))

    worst_margin = np.inf
    for k in range(50):
        r = np.random.default_rng(100 + k)
        Z = r.uniform(-1, 1, (r.integers(2, 20), 2))
        M2 = 2 * len(Z)
        A = np.tril(r.normal(size=(M2, M2)) * 0.3, -1) + np.diag(r.uniform(0.1, 1.0, M2))
        s = make_state(spec, Z, m=r.normal(size=M2), S_factor=A, noise=0.1)
        worst_margin = min(worst_margin, lml - elbo(s, d), lml - collapsed_elbo(s, d))
    ok = gap <= 1e-3 and mean_err <= 1e-6 and var_err <= 1e-6 and worst_margin >= -1e-6
    report(3, ok, f"|ELBO - LML| {gap:.1e}, mean err {mean_err:.1e}, var err {var_err:.1e}, "
                  f"min LML - ELBO over 50 states {worst_margin:.2e}")
    assert ok


# --------------------------------------------------------------------------
# 7. shock speed and mass conservation
# --------------------------------------------------------------------------

def test_criterion_7_shock_speed_and_mass(report):
    grid = SpaceTimeGrid(0.0, 600.0, 0.0, 60.0, 10.0, 5.0)
    sc = default_scenario(grid=grid, rho_base=0.02, plateaus=((200.0, 600.0, 0.08),),
                          boundary_rho=(0.02, 0.08), signal=None)
    f = godunov_lwr(sc, return_result=True).fine
    x = f.grid.x_centers
    pos = []
    for j in range(f.grid.nt):
        r = f.rho[:, j]
        i = int(np.argmax(r > 0.05))
        pos.append(x[i - 1] + (0.05 - r[i - 1]) / (r[i] - r[i - 1]) * (x[i] - x[i - 1]))
    speed = float(np.polyfit(f.grid.t_centers, pos, 1)[0])
    fd = sc.fd
    exact = (fd.flux(0.08) - fd.flux(0.02)) / 0.06
    mass = godunov_lwr(ring_scenario(), return_result=True).mass
    drift = float(np.max(np.abs(np.diff(mass))) / mass[0])
    ok = abs(speed - exact) <= 0.05 * abs(exact) and drift < 1e-9
    report(7, ok, f"front speed {speed:.3f} m/s vs Rankine-Hugoniot {exact:.3f} m/s, "
                  f"max per-step mass drift {drift:.1e}")
    assert ok


# --------------------------------------------------------------------------
# 8. diagnostics identities
# --------------------------------------------------------------------------

def _model_with_shares(b_phys, b_res, seed):
    """Bidirectional model whose mean is dominated by the physics or the residual part."""
    rng = np.random.default_rng(seed)
    spec = kn.KernelSpec("lwr_bidirectional", kn.SEHyper(b_phys, 0.5, 0.5), c_f=0.8, c_b=-0.3,
                         residual=tuple(kn.ResidualHyper(b_res, 0.3, 0.3) for _ in range(2)))
    Z = rng.uniform(-1, 1, (20, 2))
    # draw the inducing values from the prior so each part carries its own share
    K = kn.gram(Z, spec)
    m = np.linalg.cholesky(kn.add_jitter(K)) @ rng.normal(size=40)
    return make_state(spec, Z, m=m)


def test_criterion_8_diagnostics_identities(report):
    rng = np.random.default_rng(8)
    pts = rng.uniform(-1, 1, (200, 2))
    share_err = gap = 0.0
    ratios = {"physics": [], "residual": []}
    for seed in range(5):
        for kind, (bp, br) in {"physics": (1.0, 0.1), "residual": (0.1, 1.0)}.items():
            st = _model_with_shares(bp, br, seed)
            mu, phys, res = decompose_mean(st, pts)
            rep = shares(mu, phys, res)
            share_err = max(share_err, max(abs(a + b - 1) for a, b in zip(rep.S_phys, rep.S_res)))
            gap = max(gap, energy_gap(mu, phys, res))
            ratios[kind].append(joint_ratio(mu, phys, res))
    order_ok = max(ratios["physics"]) < 1 < min(ratios["residual"])

    X, Y = rng.normal(size=(50, 4)), rng.normal(size=(50, 3))
    self_err = abs(cka(X, X) - 1)
    inv_err = 0.0
    for k in range(20):
        R, _ = np.linalg.qr(np.random.default_rng(k).normal(size=(4, 4)))
        c = np.random.default_rng(k).uniform(-5, 5)
        inv_err = max(inv_err, abs(cka(c * X @ R, Y) - cka(X, Y)))
    e = np.eye(3)
    A = np.vstack([e[:, [0, 1]], -e[:, [0, 1]]])
    B = np.vstack([e[:, [0, 2]], -e[:, [0, 2]]])
    ang = principal_angles(A, B)
    ang_ok = np.allclose(ang, [0.0, 90.0], atol=1e-9)
    ok = (share_err <= 1e-10 and gap <= 1e-9 and self_err <= 1e-10 and inv_err <= 1e-10
          and ang_ok and order_ok)
    report(8, ok, f"share sum err {share_err:.1e}, energy gap {gap:.1e}, CKA self err {self_err:.1e}, "
                  f"invariance err {inv_err:.1e}, angles {np.round(ang, 6).tolist()}, joint ratio "
                  f"physics-dominant max {max(ratios['physics']):.2f}, residual-dominant min "
                  f"{min(ratios['residual']):.2f}")
    assert ok


# --------------------------------------------------------------------------
# 4. physics-consistency fits
# --------------------------------------------------------------------------

def _cell_subset(f: Field, frac, seed):
    cells = np.argwhere(f.mask)
    keep = np.random.default_rng(seed).choice(len(cells), int(frac * len(cells)), replace=False)
    mask = np.zeros(f.grid.shape, bool)
    mask[tuple(cells[keep].T)] = True
    return field_observations(Field(f.grid, f.rho, f.v, mask))


def test_criterion_4_physics_consistency(report):
    t0 = time.perf_counter()
    fd = FundamentalDiagram()
    rho0, amp = 0.04, 0.005
    grid = SpaceTimeGrid(0.0, 600.0, 0.0, 300.0, 10.0, 5.0)
    adv = linear_advection_field(grid, float(fd.dflux(rho0)), rho0, amp, fd)
    st = train(_cell_subset(adv, 0.3, 0), SVGPConfig(mode="lwr_bidirectional", M=64,
                                                     iterations=300, lr=0.05, fd=fd))
    pf = predict_field(st, grid)
    lwr_rho = float(np.mean(np.abs(pf.mu_rho - adv.rho)) / amp)
    lwr_v = float(np.mean(np.abs(pf.mu_v - adv.v)) / (amp * abs(fd.dspeed(rho0))))

    sc = default_scenario()
    res = arz_relax(sc, return_result=True)
    truth = res.field
    traj = emit_trajectories(res.fine, None, 0, periodic=False)
    base = dict(MODEL, M=64, fd=sc.fd, pressure=sc.pressure_law)
    err = {"arz": [], "plain_se": []}
    for seed in range(5):
        obs = sample_probe(traj, truth, 0.2, seed)
        for name, kw in (("arz", {"mode": "arz", "arz_expansion": "full"}),
                         ("plain_se", {"mode": "plain_se"})):
            f = predict_field(train(obs, SVGPConfig(seed=seed, **base, **kw)), truth.grid).as_field()
            err[name].append((np.nanmean(np.abs(f.rho - truth.rho)), np.mean(np.abs(f.v - truth.v))))
    arz, plain = np.mean(err["arz"], 0), np.mean(err["plain_se"], 0)
    dt = time.perf_counter() - t0
    lwr_ok = lwr_rho <= 0.05 and lwr_v <= 0.05
    arz_ok = arz[0] < plain[0] and arz[1] < plain[1]
    ok = lwr_ok and arz_ok and dt < budget(300)
    report(4, ok, f"PEGP-LWR advection MAE/amplitude rho {lwr_rho:.3f}, v {lwr_v:.3f}; "
                  f"PEGP-ARZ vs plain-SE rho {arz[0]:.4f} vs {plain[0]:.4f}, "
                  f"v {arz[1]:.3f} vs {plain[1]:.3f}; {dt:.0f}s (budget {budget(300):.0f}s)")
    assert ok


# --------------------------------------------------------------------------
# 5. penetration trend on the stop-and-go scenario
# --------------------------------------------------------------------------

def test_criterion_5_penetration_trend(report):
    t0 = time.perf_counter()
    cfg = config_from_dict({"model": MODEL, "sweep": {"overrides": OVERRIDES}})
    rows = run_sweep(cfg, jobs=CORES)
    dt = time.perf_counter() - t0
    summary = {(r.method, r.p): r for r in summarize(rows)}
    ps = cfg.sampling.penetrations
    failures = [f"{r.method} p={r.p} seed={r.seed}" for r in rows if r.error]
    trend = {}
    for m in cfg.sweep.methods:
        v = [summary[(m, p)].mae_v for p in ps]
        rho = [summary[(m, p)].mae_rho for p in ps]
        trend[m] = (is_non_increasing(v, 0.05) and is_non_increasing(rho, 0.05), v, rho)
    lwr = [summary[("pegp_lwr", p)] for p in (ps[0], ps[-1])]
    ratio_v = lwr[1].mae_v / lwr[0].mae_v
    ratio_rho = lwr[1].mae_rho / lwr[0].mae_rho
    ok = (not failures and all(t[0] for t in trend.values()) and ratio_v <= 0.5
          and ratio_rho <= 0.5 and dt < budget(900))
    detail = "; ".join(f"{m} v {np.round(t[1], 2).tolist()} {'ok' if t[0] else 'NOT monotone'}"
                       for m, t in trend.items())
    report(5, ok, f"{detail}; PEGP-LWR p50/p5 ratio v {ratio_v:.2f}, rho {ratio_rho:.2f}; "
                  f"failed cells {len(failures)}; {dt:.0f}s (budget {budget(900):.0f}s)")
    assert ok


# --------------------------------------------------------------------------
# 6. loop-detector layout
# --------------------------------------------------------------------------

def test_criterion_6_loop_detectors(report):
    t0 = time.perf_counter()
    cfg = config_from_dict({
        "sampling": {"mode": "loops", "positions": [60.0, 180.0, 300.0, 420.0]},
        "model": dict(MODEL, M=64),
        "sweep": {"methods": ["rotated_gp", "pegp_lwr", "pegp_arz"],
                  "overrides": {"pegp_arz": {"arz_expansion": "full"}}},
    })
    rows = run_loops(cfg)
    dt = time.perf_counter() - t0
    mean = {r.method: r.mae_v for r in summarize(rows)}
    ok = (not any(r.error for r in rows) and mean["pegp_lwr"] < mean["rotated_gp"]
          and mean["pegp_arz"] < mean["rotated_gp"] and dt < budget(300))
    report(6, ok, f"speed MAE rotated GP {mean['rotated_gp']:.3f}, PEGP-LWR {mean['pegp_lwr']:.3f}, "
                  f"PEGP-ARZ {mean['pegp_arz']:.3f} m/s; {dt:.0f}s (budget {budget(300):.0f}s)")
    assert ok


# --------------------------------------------------------------------------
# 9. uncertainty structure
# --------------------------------------------------------------------------

def test_criterion_9_uncertainty_structure(report):
    sc = default_scenario()
    res = godunov_lwr(sc, return_result=True)
    truth = res.field
    obs = sample_probe(emit_trajectories(res.fine, None, 0, periodic=False), truth, 0.1, 0)
    base = dict(MODEL, M=64, fd=sc.fd, pressure=sc.pressure_law)
    arz = train(obs, SVGPConfig(mode="arz", arz_expansion="full", **base))
    lwr = train(obs, SVGPConfig(mode="lwr_bidirectional", **base))
    ua, ul = uq_fields(arz, truth.grid), uq_fields(lwr, truth.grid)

    _, cov = predict_latent(arz, truth.grid.cell_points())
    s2 = arz.standardizer.scale[1] ** 2
    selector_ok = np.array_equal(ua["var_v_obs"].ravel(), cov[:, 1, 1] * s2 + arz.noise[1] * s2)
    cv_arz = coefficient_of_variation(ua["var_rho_obs"])
    cv_lwr = coefficient_of_variation(ul["var_rho_obs"])
    cv_ratio = cv_arz / cv_lwr

    # dense, noisy readings of a smooth wave: latent variance far below the noise
    fd = FundamentalDiagram()
    grid = SpaceTimeGrid(0.0, 600.0, 0.0, 300.0, 10.0, 5.0)
    adv = linear_advection_field(grid, float(fd.dflux(0.04)), 0.04, 0.005, fd)
    dense = field_observations(adv)
    sd = np.where(dense.output == 0, 0.002, 0.5)
    noisy = replace(dense, value=dense.value + sd * np.random.default_rng(0).standard_normal(len(dense)))
    st = train(noisy, SVGPConfig(mode="lwr_bidirectional", M=128, ell=2.0, b_res=1e-3,
                                 iterations=150, lr=0.05, fd=fd))
    u = uq_fields(st, grid)
    frac = min(float(np.mean(np.abs(u[f"var_{k}_obs"] / u[f"floor_{k}"] - 1) <= 0.05))
               for k in ("rho", "v"))
    ok = selector_ok and cv_ratio >= 2 and frac >= 0.9
    report(9, ok, f"ARZ speed variance equals (Sigma_tot)_22: {selector_ok}; CV of density variance "
                  f"ARZ {cv_arz:.2f} vs LWR {cv_lwr:.2f} (ratio {cv_ratio:.1f}); dense LWR cells "
                  f"within 5% of noise floor {frac:.1%}")
    assert ok


# --------------------------------------------------------------------------
# 10. determinism and total runtime (keep last)
# --------------------------------------------------------------------------

SMALL = {
    "scenario": {"grid": {"x_min": 0, "x_max": 600, "t_min": 0, "t_max": 120, "dx": 10, "dt": 5}},
    "sampling": {"penetrations": [0.1, 0.3], "seeds": [0, 1]},
    "model": dict(MODEL, M=32, iterations=40),
    "sweep": {"overrides": {"pegp_arz": {"arz_expansion": "full"}}},
    "diagnostics": {"n": 100},
}


def test_criterion_10_determinism_and_runtime(report, tmp_path):
    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps(SMALL))
    outs = []
    for k, jobs in enumerate((1, CORES)):
        out = tmp_path / f"run{k}"
        assert main(["--config", str(cfg), "--out", str(out), "--jobs", str(jobs), "sweep"]) == 0
        assert main(["--config", str(cfg), "--out", str(out), "sample"]) == 0
        assert main(["--config", str(cfg), "--out", str(out), "fit", "--observations",
                     str(out / "observations.csv")]) == 0
        assert main(["--config", str(cfg), "--out", str(out), "diagnose", "--model",
                     str(out / "model.json")]) == 0
        outs.append(out)
    names = ("results.csv", "summary.csv", "shares.csv", "similarity.csv")
    same = {n: (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names}
    elapsed = time.perf_counter() - _START[0]
    ok = all(same.values()) and elapsed < budget(1800)
    report(10, ok, f"byte-identical reruns {same}; acceptance suite wall time {elapsed / 60:.1f} min "
                   f"(budget {budget(1800) / 60:.0f} min on {CORES} core(s))")
    assert ok
