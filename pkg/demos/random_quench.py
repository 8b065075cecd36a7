#!/usr/bin/env python3
"""Spinodal decomposition from a random quench, with the boundary free.

A small-amplitude random mixture is quenched on a quarter-size square.
The dynamic boundary condition lets the contact value evolve; with a
stiffer surface penalty (kappa = 0.075) the boundary still orders, but
on its own schedule.  Energy decays monotonically while both the bulk
and the surface mass stay fixed; decrements scale like the measured
metric cost of each step, which is the gradient-flow identity at work.
"""

from chdbc import (
    State,
    assemble,
    build_friedrichs_keller,
    demo_config,
    full_report,
    holder_quotient,
    make_initial,
    step_fully_implicit,
    total_energy,
    write_outputs,
)

NX = 32
STEPS = 200
OUT = "out-random-quench"


def main():
    cfg = demo_config("fig2", nx=NX, steps=STEPS)
    mesh = build_friedrichs_keller(cfg.domain, cfg.nx, cfg.ny)
    ops = assemble(mesh)

    phi = make_initial(mesh, cfg)
    state = State(t=0.0, phi=phi, mu=None, mu_gamma=None)
    e_prev = total_energy(ops, cfg.params, phi).e_total
    print(f"domain {cfg.domain}, seed {cfg.init.seed}, E0 = {e_prev:.6f}")

    history = [(0.0, phi.copy())]
    for k in range(1, STEPS + 1):
        state = step_fully_implicit(ops, cfg.params, state, cfg.stepper)
        rep = full_report(ops, cfg.params, state)
        if k % 25 == 0 or k == STEPS:
            print(
                f"step {k:4d}  E = {rep.e_total:.6f}"
                f"  decrement {e_prev - rep.e_total:.3e}"
                f"  dissipation {cfg.params.tau * (rep.grad_mu_sq + rep.grad_mug_sq):.3e}"
            )
            write_outputs(mesh, state, None, ("ppm",), OUT, step=k)
            history.append((state.t, state.phi.copy()))
        e_prev = rep.e_total

    q = holder_quotient(ops, history)
    print(f"worst Holder-1/4 quotient over snapshots: {q:.3f}")
    print(f"frames written to {OUT}/")


if __name__ == "__main__":
    main()
