"""Joint discovery on desk-scale synthetic video sets; one JSON summary per system."""
import argparse
import json
from pathlib import Path

from vid2ode.discovery import desk_preset, run_discovery
from vid2ode.dynamics import get_system
from vid2ode.video import make_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--systems", default="duffing,vanderpol,oscillator2d")
    ap.add_argument("--videos", type=int, default=8)
    ap.add_argument("--frames", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.systems.split(","):
        ds = make_dataset(name, args.videos, args.frames, seed=args.seed)
        cfg = desk_preset(name, seed=args.seed)
        rep = run_discovery(ds, cfg, log=print if args.verbose else None)
        ev = rep.evaluate(get_system(name), ds.ground_truth)
        print(f"{name}: {rep.wall_clock:.0f}s  TPT {ev['tpt']}  FPT {ev['fpt']}  alpha {ev['alpha']:.3f}")
        for eq in ev["equations"]:
            print("   ", eq)
        rep.write_json(out / f"{name}.json")
    print(f"reports in {out}")


if __name__ == "__main__":
    main()
