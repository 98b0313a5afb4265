"""Maximum PCG iterations against frequency, and the smoothing tradeoff at the top frequency."""
import math

from _common import parser, setup

from dpgmg.driver import run_omega_sweep, run_study
from dpgmg.io_cli import parse_config, write_csv


def main():
    ap = parser(__doc__, "omega_sweep.cfg")
    ap.add_argument("--smooth", type=int, default=5, help="steps for the heavier V-cycle")
    args = ap.parse_args()
    out = setup(args)
    cfg = parse_config(args.config)
    sweep = run_omega_sweep(cfg)
    print(f"{'omega/pi':>8} {'max iters':>9}  per grid")
    for w, m, recs in zip(sweep.omegas, sweep.max_iterations, sweep.records):
        print(f"{w / math.pi:8.2f} {m:9d}  {[r.iterations for r in recs]}")
        write_csv(out / f"omega_{w / math.pi:g}pi.csv", list(recs))
    if sweep.slope is not None:
        print(f"log-log slope: {sweep.slope:.3f}")
    heavy = cfg.replace(omegas=(sweep.omegas[-1],), pre_smooth=args.smooth, post_smooth=args.smooth)
    recs = run_study(heavy)
    top = max(r.iterations for r in recs)
    print(f"V({args.smooth},{args.smooth}) at the top frequency: {top} "
          f"(V({cfg.pre_smooth},{cfg.post_smooth}): {sweep.max_iterations[-1]})")
    write_csv(out / f"omega_{sweep.omegas[-1] / math.pi:g}pi_V{args.smooth}.csv", recs)


if __name__ == "__main__":
    main()
