"""Uniform h-refinement: iteration counts with restricted and stored coarse operators."""
from _common import parser, setup, table

from dpgmg.driver import run_study
from dpgmg.io_cli import parse_config, write_csv


def main():
    ap = parser(__doc__, "uniform_h.cfg")
    ap.add_argument("--both", action="store_true", help="also run the stored coarse operators")
    args = ap.parse_args()
    out = setup(args)
    cfg = parse_config(args.config)
    modes = ("restrict", "store") if args.both else (cfg.coarse_op,)
    for mode in modes:
        recs = run_study(cfg.replace(coarse_op=mode))
        print(f"\nomega = {cfg.omegas[0]:.4f}, coarse operators: {mode}")
        table(recs)
        write_csv(out / f"h_study_{mode}.csv", recs)


if __name__ == "__main__":
    main()
