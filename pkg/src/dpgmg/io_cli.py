"""Configuration files, study CSVs, legacy VTK output and the ``dpgmg`` command.

Config files are flat ``key = value`` lines; ``#`` starts a comment.
Values are numbers (``8pi`` and ``8*pi`` are accepted), booleans
(true/false), strings, or comma-separated number lists.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import re
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import driver
from .driver import ConvergenceRecord, StudyConfig

log = logging.getLogger(__name__)

CSV_HEADER = ("grid", "ndof", "iterations", "final_residual", "dpg_eta", "assembly_s", "solve_s")


class ConfigError(ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, line: int, msg: str = "cannot parse line"):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class UnknownKey(ConfigError):
    def __init__(self, name: str):
        super().__init__(f"unknown key {name!r}")
        self.name = name


class RangeError(ConfigError):
    def __init__(self, key: str, msg: str = "value out of range"):
        super().__init__(f"{key}: {msg}")
        self.key = key


class RequiredMissing(ConfigError):
    def __init__(self, key: str):
        super().__init__(f"required key {key!r} missing")
        self.key = key


# ---------------------------------------------------------------------------
# config


_NUM = re.compile(r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\s*\*?\s*(pi)?\s*$")


def parse_number(text: str) -> float:
    """Float with an optional trailing ``pi`` factor: '2.5', '8pi', '8*pi', 'pi'."""
    m = _NUM.match(text)
    if not m or (m.group(1) is None and m.group(2) is None):
        raise ValueError(f"not a number: {text!r}")
    val = float(m.group(1)) if m.group(1) is not None else 1.0
    return val * math.pi if m.group(2) else val


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int(text: str) -> int:
    v = parse_number(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _parse_list(text: str) -> tuple[float, ...]:
    return tuple(parse_number(t) for t in text.split(",") if t.strip())


def _parse_damping(text: str) -> float | None:
    return None if text.strip().lower() in ("auto", "none") else parse_number(text)


# config key -> (StudyConfig field, parser, range check)
_KEYS = {
    "study": ("study", str.strip, lambda v: v in driver.STUDIES),
    "omega": ("omegas", _parse_list, lambda v: len(v) > 0 and all(w > 0 for w in v)),
    "Z": ("Z", parse_number, lambda v: v > 0),
    "alpha": ("alpha", parse_number, lambda v: v > 0),
    "delta_p": ("delta_p", _parse_int, lambda v: v >= 1),
    "wavespeed": ("wavespeed", parse_number, lambda v: v > 0),
    "p0": ("p0", _parse_int, lambda v: v >= 2),
    "p_max": ("p_max", _parse_int, lambda v: v >= 2),
    "grids": ("grids", _parse_int, lambda v: v >= 1),
    "theta": ("theta", parse_number, lambda v: 0 < v < 1),
    "mark_exponent": ("mark_exponent", _parse_int, lambda v: v in (1, 2)),
    "pre_smooth": ("pre_smooth", _parse_int, lambda v: v >= 0),
    "post_smooth": ("post_smooth", _parse_int, lambda v: v >= 0),
    "damping": ("damping", _parse_damping, lambda v: v is None or 0 < v <= 1),
    "bottom": ("bottom", str.strip, lambda v: v in ("none", "exact_solve")),
    "coarse_op": ("coarse_op", str.strip, lambda v: v in ("restrict", "store")),
    "tol": ("tol", parse_number, lambda v: 0 < v < 1),
    "max_iter": ("max_iter", _parse_int, lambda v: v >= 1),
    "warm_start": ("warm_start", _parse_bool, lambda v: True),
    "load": ("load", str.strip, lambda v: v in driver.LOADS),
    "wave_direction": ("wave_direction", _parse_list, lambda v: len(v) == 2 and any(v)),
    "beam_waist": ("beam_waist", parse_number, lambda v: v > 0),
    "beam_angle": ("beam_angle", parse_number, lambda v: True),
    "beam_origin": ("beam_origin", _parse_list, lambda v: len(v) == 2),
    "vtk": ("vtk", _parse_bool, lambda v: True),
}


def parse_config_text(text: str) -> StudyConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(lineno, "expected key = value")
        key, _, val = (s.strip() for s in line.partition("="))
        if not key or not val:
            raise ParseError(lineno, "empty key or value")
        if key not in _KEYS:
            raise UnknownKey(key)
        name, parse, ok = _KEYS[key]
        try:
            v = parse(val)
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from exc
        if not ok(v):
            raise RangeError(key)
        values[name] = v
    if "study" not in values:
        raise RequiredMissing("study")
    p0 = values.get("p0", 2)
    if values.get("p_max", 5) < p0:
        raise RangeError("p_max", "must be at least p0")
    try:
        return StudyConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path) -> StudyConfig:
    return parse_config_text(Path(path).read_text())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(float(x)) for x in v)
    if v is None:
        return "auto"
    return str(v)


def serialize_config(cfg: StudyConfig) -> str:
    """Config text that parses back to ``cfg`` exactly."""
    by_field = {name: key for key, (name, _, _) in _KEYS.items()}
    lines = [f"{by_field[f.name]} = {_fmt(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# CSV


def write_csv(path, records: list[ConvergenceRecord]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            d = asdict(r)
            w.writerow([_fmt(d[k]) if isinstance(d[k], float) else d[k] for k in CSV_HEADER])


def read_csv(path) -> list[ConvergenceRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: unexpected CSV header")
    out = []
    for row in rows[1:]:
        g, n, it, res, eta, ta, ts = row
        out.append(ConvergenceRecord(int(g), int(n), int(it), float(res), float(eta), float(ta), float(ts)))
    return out


# ---------------------------------------------------------------------------
# legacy VTK


def _vtk_write(path, title, points, cells, point_data=None, cell_data=None):
    points = np.asarray(points, dtype=float)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(points)} double\n")
        for x, y in points:
            fh.write(f"{float(x)!r} {float(y)!r} 0.0\n")
        fh.write(f"CELLS {len(cells)} {5 * len(cells)}\n")
        for c in cells:
            fh.write("4 " + " ".join(str(int(i)) for i in c) + "\n")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        fh.write("9\n" * len(cells))
        for header, data, n in (("CELL_DATA", cell_data, len(cells)), ("POINT_DATA", point_data, len(points))):
            if not data:
                continue
            fh.write(f"{header} {n}\n")
            for name, arr in data.items():
                arr = np.asarray(arr)
                kind = "int" if np.issubdtype(arr.dtype, np.integer) else "double"
                fh.write(f"SCALARS {name} {kind} 1\nLOOKUP_TABLE default\n")
                fh.write("\n".join(repr(float(a)) if kind == "double" else str(int(a)) for a in arr))
                fh.write("\n")


def write_mesh_vtk(path, mesh):
    """Active quads with the polynomial order as cell data."""
    index: dict[tuple[float, float], int] = {}
    cells = []
    for el in mesh.elements:
        x0, y0 = el.origin
        h = el.h
        ids = []
        for pt in ((x0, y0), (x0 + h, y0), (x0 + h, y0 + h), (x0, y0 + h)):
            ids.append(index.setdefault(pt, len(index)))
        cells.append(ids)
    pts = sorted(index, key=index.get)
    _vtk_write(path, "dpgmg mesh", pts, cells,
               cell_data={"order": np.array([el.order for el in mesh.elements], dtype=int)})


def write_field_vtk(path, mesh, fields_, n: int = 4):
    """Pressure sampled on an n x n grid inside every element (discontinuous)."""
    from .dpg import evaluate_pressure

    pts, vals = evaluate_pressure(mesh, fields_, n)
    cells, order = [], []
    for k, el in enumerate(mesh.elements):
        base = k * n * n
        for j in range(n - 1):
            for i in range(n - 1):
                a = base + j * n + i
                cells.append((a, a + 1, a + n + 1, a + n))
                order.append(el.order)
    p = np.concatenate(vals)
    _vtk_write(path, "dpgmg pressure", np.concatenate(pts), cells,
               point_data={"p_real": p.real, "p_imag": p.imag},
               cell_data={"order": np.array(order, dtype=int)})


def read_vtk(path) -> dict:
    """Minimal legacy-VTK reader for the files written here; checks counts."""
    tokens = Path(path).read_text().split("\n")
    if not tokens[0].startswith("# vtk DataFile Version"):
        raise ValueError("missing VTK version header")
    if tokens[2].strip() != "ASCII" or tokens[3].strip() != "DATASET UNSTRUCTURED_GRID":
        raise ValueError("expected an ASCII unstructured grid")
    words = " ".join(tokens[4:]).split()
    pos = 0

    def take(k):
        nonlocal pos
        out = words[pos:pos + k]
        if len(out) != k:
            raise ValueError("unexpected end of file")
        pos += k
        return out

    out: dict = {"cell_data": {}, "point_data": {}}
    if take(1)[0] != "POINTS":
        raise ValueError("expected POINTS")
    npts, _ = take(2)
    out["points"] = np.array(take(3 * int(npts)), dtype=float).reshape(-1, 3)
    if take(1)[0] != "CELLS":
        raise ValueError("expected CELLS")
    ncell, size = (int(t) for t in take(2))
    raw = np.array(take(size), dtype=int)
    cells, k = [], 0
    for _ in range(ncell):
        m = raw[k]
        cells.append(raw[k + 1:k + 1 + m])
        k += m + 1
    if k != size:
        raise ValueError("CELLS size mismatch")
    out["cells"] = cells
    if take(1)[0] != "CELL_TYPES":
        raise ValueError("expected CELL_TYPES")
    out["cell_types"] = np.array(take(int(take(1)[0])), dtype=int)
    if out["cell_types"].size != ncell:
        raise ValueError("CELL_TYPES count mismatch")
    target = None
    while pos < len(words):
        w = take(1)[0]
        if w in ("CELL_DATA", "POINT_DATA"):
            count = int(take(1)[0])
            target = out["cell_data" if w == "CELL_DATA" else "point_data"]
            expected = ncell if w == "CELL_DATA" else int(npts)
            if count != expected:
                raise ValueError(f"{w} count mismatch")
        elif w == "SCALARS":
            name, kind, _ = take(3)
            if take(2) != ["LOOKUP_TABLE", "default"]:
                raise ValueError("expected LOOKUP_TABLE default")
            n = ncell if target is out["cell_data"] else int(npts)
            target[name] = np.array(take(n), dtype=int if kind == "int" else float)
        else:
            raise ValueError(f"unexpected token {w!r}")
    return out


# ---------------------------------------------------------------------------
# self test


def selftest(stream=sys.stdout) -> bool:
    """Fast invariant checks on tiny meshes; True when all pass."""
    import scipy.linalg as sla

    from . import la_core, mg
    from .dpg import ProblemConfig, assemble_global, assemble_uncondensed, direct_solve, plane_wave
    from .mesh import initial_mesh, refine, uniform_marks
    from .skeleton import SCALE, TraceLayout

    results = []

    def check(name, fn):
        try:
            ok = bool(fn())
        except Exception as exc:  # report and keep going
            log.debug("selftest %s raised", name, exc_info=True)
            ok = False
            name = f"{name} ({type(exc).__name__}: {exc})"
        results.append(ok)
        print(f"[{'PASS' if ok else 'FAIL'}] {name}", file=stream)

    rng = np.random.default_rng(1)
    X = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    A8 = X.conj().T @ X + np.eye(8)

    def chol():
        L = la_core.hermitian_cholesky(A8).L
        return np.linalg.norm(L @ L.conj().T - A8) <= 1e-10 * np.linalg.norm(A8)

    w = 2 * math.pi
    cfg = ProblemConfig(w, boundary_load=plane_wave(w, (0.6, 0.8))[0])
    m0 = initial_mesh(2)
    m1 = refine(m0, uniform_marks(m0))
    m2 = refine(m1, {0: "h", 3: "p"})

    def condensation():
        S = assemble_global(m1, cfg)
        x = direct_solve(S)
        M, r, offs = assemble_uncondensed(m1, cfg)
        full = sla.solve(M, r, assume_a="her")
        return np.linalg.norm(full[offs[-1]:] - x) <= 1e-10 * np.linalg.norm(x)

    def hpd():
        A = assemble_global(m2, cfg).A.toarray()
        return la_core.is_hermitian(A) and np.linalg.eigvalsh(A).min() > 0

    def transfer():
        Lc, Lf = TraceLayout(m1), TraceLayout(m2)
        P = mg.build_inclusion(Lc, Lf)
        from .skeleton import on_coarse_skeleton
        macro = np.flatnonzero(on_coarse_skeleton(m1, Lf))
        worst = 0.0
        for j in range(Lc.ndof):
            xc = np.zeros(Lc.ndof, complex)
            xc[j] = 1.0
            xf = np.zeros(Lf.ndof, complex)
            xf[macro] = P @ xc
            for (orient, c), segs in Lc._lines.items():
                for seg in segs:
                    s = np.linspace(seg[2], seg[3], 5) / SCALE
                    a, b = Lc.evaluate(xc, orient, c, s), Lf.evaluate(xf, orient, c, s)
                    worst = max(worst, np.abs(a[0] - b[0]).max(), np.abs(a[1] - b[1]).max())
        return worst <= 1e-12

    def vcycle():
        systems = [assemble_global(m, cfg) for m in (m0, m1, m2)]
        H = mg.build_hierarchy([m0, m1, m2], systems[-1].A, layouts=[s.layout for s in systems])
        M = H.operator_matrix()
        sym = np.linalg.norm(M - M.conj().T) <= 1e-10 * np.linalg.norm(M)
        res = mg.solve(H, systems[-1].rhs)
        return sym and np.linalg.eigvalsh(0.5 * (M + M.conj().T)).min() > 0 and res.relative_residual <= 1e-7

    check("cholesky reproduces input", chol)
    check("condensed solve matches uncondensed normal equations", condensation)
    check("assembled system on a hanging-node mesh is HPD", hpd)
    check("inclusion reproduces coarse traces", transfer)
    check("V-cycle is Hermitian positive definite and PCG converges", vcycle)
    return all(results)


# ---------------------------------------------------------------------------
# command line

COMMANDS = {"h-study": "uniform_h", "p-study": "uniform_p", "hp-adaptive": "hp_adaptive",
            "omega-sweep": None}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpgmg", description="DPG Helmholtz studies with a multigrid-preconditioned CG solver")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key = value study file")
        p.add_argument("--out", default="out", help="output directory (default ./out)")
    sub.add_parser("selftest")
    return ap


def _write_snapshots(out: Path, tag: str):
    def observer(state):
        write_mesh_vtk(out / f"{tag}_grid{state.grid:02d}_mesh.vtk", state.mesh)
        fields_ = state.system.recover_fields(state.solution)
        write_field_vtk(out / f"{tag}_grid{state.grid:02d}_pressure.vtk", state.mesh, fields_)
    return observer


def run(argv=None) -> int:
    from .la_core import BreakdownNonpositiveCurvature, MaxIterationsExceeded

    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        return 0 if selftest() else 1

    try:
        cfg = parse_config(args.config)
    except OSError as exc:
        print(f"dpgmg: cannot read config: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"dpgmg: config error: {exc}", file=sys.stderr)
        return 2
    kind = COMMANDS[args.command]
    if kind is not None and cfg.study != kind:
        print(f"dpgmg: config error: {args.command} needs study = {kind}, got {cfg.study}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if kind is not None:
            obs = _write_snapshots(out, cfg.study) if cfg.vtk else None
            records = driver.run_study(cfg, observer=obs)
            path = out / f"{cfg.study}.csv"
            write_csv(path, records)
            print(f"wrote {path} ({len(records)} grids)")
        else:
            sweep = driver.run_omega_sweep(cfg)
            for k, (w, recs) in enumerate(zip(sweep.omegas, sweep.records)):
                write_csv(out / f"omega_sweep_{cfg.study}_{k}.csv", list(recs))
            with open(out / "omega_sweep_summary.csv", "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(("omega", "max_iterations"))
                for w, m in zip(sweep.omegas, sweep.max_iterations):
                    wr.writerow((repr(w), m))
            slope = "absent" if sweep.slope is None else f"{sweep.slope:.4f}"
            print(f"omega sweep: max iterations {list(sweep.max_iterations)}, log-log slope {slope}")
    except (MaxIterationsExceeded, BreakdownNonpositiveCurvature, np.linalg.LinAlgError) as exc:
        print(f"dpgmg: solver failure: {exc}", file=sys.stderr)
        return 1
    return 0
