"""Uniform h to two elements per wavelength, then uniform p up to p_max."""
from _common import parser, setup, table

from dpgmg.driver import run_study
from dpgmg.io_cli import parse_config, write_csv


def main():
    args = parser(__doc__, "uniform_p.cfg").parse_args()
    out = setup(args)
    cfg = parse_config(args.config)
    orders = []
    recs = run_study(cfg, observer=lambda s: orders.append(max(el.order for el in s.mesh.elements)))
    table(recs, ("p", orders))
    write_csv(out / "p_study.csv", recs)


if __name__ == "__main__":
    main()
