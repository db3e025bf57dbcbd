"""Reconstruct the synthetic stop-and-go field from 10% probe vehicles.

Fits ASM, PEGP-LWR and PEGP-ARZ, prints their errors and writes PNG
heatmaps of the truth and the PEGP-LWR mean/variance next to this file.

    python demos/reconstruct_stop_and_go.py
"""

from pathlib import Path

import numpy as np

from pegp.baselines import asm_reconstruct
from pegp.data import sample_probe
from pegp.metrics import mae_rmse
from pegp.plotting import plot_field
from pegp.sim import default_scenario, emit_trajectories, godunov_lwr
from pegp.svgp import SVGPConfig, predict_field, train

OUT = Path(__file__).with_name("out")


def main(p=0.1, seed=0):
    sc = default_scenario()
    res = godunov_lwr(sc, return_result=True)
    truth = res.field
    probes = emit_trajectories(res.fine, None, seed=0, periodic=False)
    obs = sample_probe(probes, truth, p, seed)
    print(f"{len(obs)} observations from {p:.0%} of vehicles")

    base = dict(train_lambdas=True, ell=2.0, iterations=150, lr=0.1, fd=sc.fd,
                pressure=sc.pressure_law, seed=seed)
    fits = {
        "asm": asm_reconstruct(obs, truth.grid),
        "pegp_lwr": predict_field(train(obs, SVGPConfig(mode="lwr_bidirectional", M=128, **base)),
                                  truth.grid),
        "pegp_arz": predict_field(train(obs, SVGPConfig(mode="arz", arz_expansion="full", M=64,
                                                        **base)), truth.grid),
    }
    for name, est in fits.items():
        f = est if name == "asm" else est.as_field()
        r = mae_rmse(truth, f, name, p, seed).convert("km/h", "veh/km")
        print(f"{name:9s} speed MAE {r.mae_v:5.2f} km/h  density MAE {r.mae_rho:5.2f} veh/km")

    OUT.mkdir(exist_ok=True)
    plot_field(OUT / "truth.png", truth.grid, truth.rho, truth.v, title="truth")
    lwr = fits["pegp_lwr"]
    plot_field(OUT / "pegp_lwr.png", truth.grid, lwr.mu_rho, lwr.mu_v, lwr.var_rho_obs,
               lwr.var_v_obs, title="PEGP-LWR")
    print(f"heatmaps in {OUT}")


if __name__ == "__main__":
    main()
