"""Time-step ladder for RK4 on the linear system against the exact mode solution."""
import argparse

from driftflux.lp_besov import Grid
from driftflux.model import derive_constants, reference_params
from driftflux.scenarios import linear_oracle_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-modes", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--dt0", type=float, default=0.02)
    ap.add_argument("--rungs", type=int, default=6)
    args = ap.parse_args()
    dts = tuple(args.dt0 / 2**i for i in range(args.rungs))
    out = linear_oracle_study(derive_constants(reference_params()), Grid(2, args.n_modes),
                              seed=args.seed, dts=dts)
    print(f"{'dt':>12s} {'max error':>12s} {'ratio':>8s}")
    prev = None
    for dt, err in out.tables["ladder"][1]:
        ratio = f"{prev / err:8.2f}" if prev and err > 0 else " " * 8
        print(f"{dt:12.6g} {err:12.3e} {ratio}")
        prev = err
    print(f"fitted order {out.metrics['slope']:.3f}; stability bound dt <= {out.metrics['stability_bound']:.4g}")


if __name__ == "__main__":
    main()
