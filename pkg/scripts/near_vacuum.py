"""Compression towards vacuum in the local chart: timeline of the continuation quantities."""
import argparse

from driftflux.diagnostics import ContinuationMonitor
from driftflux.initial_data import compressive_state
from driftflux.lp_besov import Grid
from driftflux.model import derive_constants
from driftflux.scenarios import near_vacuum_params
from driftflux.solver import SolverConfig, run_simulation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--amplitude", type=float, default=1.0)
    ap.add_argument("--dt", type=float, default=0.005)
    ap.add_argument("--t-end", type=float, default=2.0)
    ap.add_argument("--floor", type=float, default=1e-2)
    args = ap.parse_args()
    c = derive_constants(near_vacuum_params())
    st = compressive_state(Grid(2, 64), args.amplitude)
    cfg = SolverConfig(chart="local_modified", dt=args.dt, t_end=args.t_end, snapshot_stride=20)
    mon = ContinuationMonitor(inf_one_plus_rho_floor=args.floor)
    res = run_simulation(st, cfg, c, monitor=mon, raise_on_fault=False)
    print(f"{'t':>8s} {'inf(1+rho)':>12s} {'sup m':>10s} {'int|grad u|':>12s}  status")
    for r in res.records:
        print(f"{r.t:8.4f} {r.inf_one_plus_rho:12.4e} {r.sup_mtilde:10.4f} {r.int_grad_u_inf:12.4f}  {r.status}")
    print(f"monitor: {mon.status}")
    print(f"fault: {res.fault!r}" if res.fault else "completed without fault")


if __name__ == "__main__":
    main()
