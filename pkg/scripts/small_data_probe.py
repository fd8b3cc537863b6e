"""E-norm growth and implied estimate constants across initial sizes E0."""
import argparse

from driftflux.lp_besov import Grid
from driftflux.model import derive_constants, reference_params
from driftflux.scenarios import small_data_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--E0", type=float, nargs="+", default=[0.003, 0.01, 0.03, 0.1])
    ap.add_argument("--n-modes", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--t-end", type=float, default=1.0)
    args = ap.parse_args()
    c = derive_constants(reference_params())
    grid = Grid(2, args.n_modes)
    print(f"{'E0':>8s} {'E_T/E0':>8s} {'C_tr':>10s} {'dC_tr':>9s} {'K_par':>10s} {'dK_par':>9s}")
    for E0 in args.E0:
        m = small_data_study(c, grid, E0, seed=args.seed, t_end=args.t_end).metrics
        print(f"{E0:8.3g} {m['growth']:8.3f} {m['C_transport']:10.4g} {m['rel_change_transport']:9.1e} "
              f"{m['K_parabolic']:10.4g} {m['rel_change_parabolic']:9.1e}")


if __name__ == "__main__":
    main()
