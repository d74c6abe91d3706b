"""Clean-state oracle: STLSQ and STRidge on noiseless simulated trajectories of every system."""
import argparse

import numpy as np

from vid2ode.baselines import stridge
from vid2ode.dynamics import SYSTEMS, sample_initial_conditions, simulate
from vid2ode.library import stlsq


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trajectories", type=int, default=4)
    ap.add_argument("--samples", type=int, default=400)
    ap.add_argument("--tau", type=float, default=0.05)
    ap.add_argument("--central-diff", action="store_true", help="use central differences instead of exact rates")
    args = ap.parse_args()

    for name, system in SYSTEMS.items():
        trs = [simulate(system, x0, args.samples, 0.05, substeps=10)
               for x0 in sample_initial_conditions(system, args.trajectories, seed=0)]
        if args.central_diff:
            X = np.concatenate([t.states[1:-1] for t in trs])
            dX = np.concatenate([(t.states[2:] - t.states[:-2]) / 0.1 for t in trs])
        else:
            X = np.concatenate([t.states for t in trs])
            dX = np.concatenate([t.derivative for t in trs])
        cols = slice(0, 2) if system.order == 1 else slice(2, 4)
        truth = system.true_coefficients.values[:, cols]
        for label, fit in (("stlsq", stlsq(X, dX[:, cols], system.library(), args.tau)),
                           ("stridge", stridge(X, dX[:, cols], system.library()))):
            same = np.array_equal(fit.values != 0, truth != 0)
            nz = truth != 0
            rel = np.max(np.abs(fit.values[nz] - truth[nz]) / np.abs(truth[nz]))
            print(f"{name:<13} {label:<8} structure {'ok' if same else 'WRONG'}  max rel err {rel:.2e}")


if __name__ == "__main__":
    main()
