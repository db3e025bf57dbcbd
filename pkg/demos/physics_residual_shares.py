"""How much of a trained PEGP mean comes from the physics kernel?

Trains PEGP-LWR and PEGP-ARZ on 5% and 50% probe data and prints the
aligned shares, the joint residual-to-physics ratio and per-regime CKA.

    python demos/physics_residual_shares.py
"""

from pegp.data import sample_probe
from pegp.diagnostics import diagnose
from pegp.sim import default_scenario, emit_trajectories, godunov_lwr
from pegp.svgp import SVGPConfig, train


def main():
    sc = default_scenario()
    res = godunov_lwr(sc, return_result=True)
    truth = res.field
    probes = emit_trajectories(res.fine, None, seed=0, periodic=False)
    base = dict(train_lambdas=True, ell=2.0, iterations=150, lr=0.1, M=64, fd=sc.fd,
                pressure=sc.pressure_law)
    for p in (0.05, 0.5):
        obs = sample_probe(probes, truth, p, 0)
        for name, kw in (("PEGP-LWR", {"mode": "lwr_bidirectional"}),
                         ("PEGP-ARZ", {"mode": "arz", "arz_expansion": "full"})):
            state = train(obs, SVGPConfig(**base, **kw))
            rep, sims = diagnose(state, truth, n=400, seed=0)
            shares = ", ".join(f"{n}: S_phys {a:.2f} S_res {b:.2f}"
                               for n, a, b in zip(rep.names, rep.S_phys, rep.S_res))
            print(f"p={p:.0%} {name}: {shares}; res:phys {rep.joint_ratio:.2f}")
            for s in sims:
                print(f"    {s.regime:9s} {s.output:8s} CKA {s.cka:.2f}")


if __name__ == "__main__":
    main()
