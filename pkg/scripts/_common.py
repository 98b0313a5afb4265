"""Shared bits for the experiment scripts."""
import argparse
import logging
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def parser(doc: str, config: str) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=doc)
    ap.add_argument("--config", default=str(ROOT / "configs" / config))
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def setup(args) -> Path:
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def table(records, extra=None):
    head = f"{'grid':>4} {'ndof':>8} {'iters':>5} {'rel.res':>9} {'eta':>10} {'solve s':>8}"
    if extra:
        head += f" {extra[0]:>6}"
    print(head)
    for k, r in enumerate(records):
        line = (f"{r.grid:4d} {r.ndof:8d} {r.iterations:5d} {r.final_residual:9.2e} "
                f"{r.dpg_eta:10.4e} {r.solve_s:8.2f}")
        if extra:
            line += f" {extra[1][k]:>6}"
        print(line)
