"""hp-adaptive refinement for a Gaussian beam, with warm-started solves.

Writes the convergence table, VTK snapshots of every grid and the fraction
of h-refined elements that lie inside the beam corridor.
"""
from _common import parser, setup, table

from dpgmg.driver import corridor_fraction, run_study
from dpgmg.io_cli import parse_config, write_csv, write_field_vtk, write_mesh_vtk


def main():
    ap = parser(__doc__, "hp_adaptive.cfg")
    ap.add_argument("--grids", type=int, help="override the grid cap")
    args = ap.parse_args()
    out = setup(args)
    cfg = parse_config(args.config)
    if args.grids:
        cfg = cfg.replace(grids=args.grids)
    beam = cfg.beam(cfg.omegas[0])
    fractions = []

    def observe(state):
        if "h" in state.marks.values():
            fractions.append(f"{corridor_fraction(beam, state.mesh, state.marks):.2f}")
        else:
            fractions.append("-")
        if cfg.vtk:
            tag = out / f"hp_grid{state.grid:02d}"
            write_mesh_vtk(f"{tag}_mesh.vtk", state.mesh)
            write_field_vtk(f"{tag}_pressure.vtk", state.mesh,
                            state.system.recover_fields(state.solution))

    recs = run_study(cfg, observer=observe)
    table(recs, ("beam", fractions))
    write_csv(out / "hp_adaptive.csv", recs)


if __name__ == "__main__":
    main()
