"""Where two-step regression goes wrong.

STRidge is run on ground-truth coordinates with exact and central-difference
derivatives, and on extracted coordinates, for several column normalisations.
Exact derivatives isolate what differencing alone contributes to false positives.
"""
import argparse

from vid2ode.baselines import regression_data, run_two_step, stridge
from vid2ode.discovery import desk_preset, score
from vid2ode.dynamics import get_system
from vid2ode.video import make_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--system", default="duffing", choices=["duffing", "vanderpol", "cubic"])
    ap.add_argument("--videos", type=int, default=8)
    ap.add_argument("--frames", type=int, default=400)
    ap.add_argument("--skip-extraction", action="store_true", help="only the ground-truth rows")
    args = ap.parse_args()

    system = get_system(args.system)
    lib = system.library()
    ds = make_dataset(system, args.videos, args.frames, seed=0)
    phys = ds.ground_truth.physical
    X_cd, Y_cd = regression_data(phys, ds.dt, 1)
    X_ex = phys[:, 1:-1].reshape(-1, 2)
    Y_ex = system.rhs(X_ex)

    def row(label, xi):
        sc = score(xi, system)
        print(f"{label:<38} TPT {[s['tpt'] for s in sc.values()]}  FPT {[s['fpt'] for s in sc.values()]}")

    for normalize in (1.0, 2.0, 0):
        row(f"gt, exact derivative, normalize={normalize}", stridge(X_ex, Y_ex, lib, normalize=normalize))
        row(f"gt, central difference, normalize={normalize}", stridge(X_cd, Y_cd, lib, normalize=normalize))
    if args.skip_extraction:
        return
    cfg = desk_preset(args.system)
    for normalize in (1.0, 2.0):
        rep = run_two_step(ds, cfg, normalize=normalize)
        row(f"extracted, normalize={normalize}", rep.xi)


if __name__ == "__main__":
    main()
