"""``hexuntangle`` command line: check, untangle, stats, dump-tets, fixture."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fixtures
from .mesh import MeshError, load_mesh, save_mesh
from .metrics import boundary_report
from .tets import dump_csv, enumerate_tet_patterns
from .untangle import STRATEGIES, UntangleConfig, records_to_csv, untangle
from .validity import METHODS, mesh_validity

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

FIXTURES = ("block", "displaced-center", "stress-block", "folded-boundary", "interior-inversion")

log = logging.getLogger("hexuntangle")


def _err(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _write_text(path, text: str) -> None:
    Path(path).write_text(text)


def _read_unlocked(path) -> list[int]:
    text = Path(path).read_text().replace(",", " ")
    return [int(t) for t in text.split()]


def _print_dets(report) -> None:
    # corner values sample det J itself; the 58-tet minimum can be negative on a valid hex
    corner = float(report.corner_det_min.min()) if len(report.corner_det_min) else float("inf")
    print(f"det_min: {corner:.17g}")
    print(f"det_min_58tet: {report.det_min:.17g}")


def cmd_check(args) -> int:
    try:
        mesh = load_mesh(args.input)
    except (OSError, MeshError) as e:
        return _err(str(e))
    report = mesh_validity(mesh, args.validity, max_depth=args.max_depth)
    print(f"hexes: {mesh.n_hexes}")
    print(f"method: {report.method}")
    print(f"invalid: {report.invalid_count}")
    _print_dets(report)
    if args.csv:
        try:
            _write_text(args.csv, report.to_csv())
        except OSError as e:
            return _err(str(e))
    return EXIT_OK if report.valid else EXIT_FAIL


def _untangle_config(args) -> UntangleConfig:
    return UntangleConfig(
        strategy=args.strategy,
        validity=args.validity,
        penalty_factor=args.penalty_factor,
        lam=args.lam,
        inner_iterations=args.inner_iters,
        max_outer_iterations=args.max_outer,
        fast_epsilon=not args.no_fast_eps,
        boundary=args.boundary,
        layers=args.layers,
        max_depth=args.max_depth,
        snap_back=not args.no_snap_back,
        gradient_tolerance=args.grad_tol,
    )


def _limit_threads(n: int | None) -> None:
    # assembly is vectorised numpy, so the cap only reaches BLAS pools that
    # have not started yet (and any child processes)
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def cmd_untangle(args) -> int:
    if args.threads is not None and args.threads < 1:
        return _err("--threads must be >= 1")
    _limit_threads(args.threads)
    try:
        config = _untangle_config(args)
    except ValueError as e:
        return _err(str(e))
    try:
        mesh = load_mesh(args.input)
    except (OSError, MeshError) as e:
        return _err(str(e))
    if args.seed is not None:
        np.random.seed(args.seed)

    print(
        f"strategy: {config.strategy}  validity: {config.validity}  "
        f"penalty factor: {config.penalty_factor:g}  inner iterations: {config.inner_iterations}"
    )
    result = untangle(mesh, config)
    out = args.output if result.success else args.output + ".partial"
    try:
        save_mesh(result.mesh, out)
        if args.log:
            _write_text(args.log, records_to_csv(result.records))
        if args.report:
            _write_text(args.report, result.boundary.format() + "\n")
        if args.unlocked_out:
            _write_text(args.unlocked_out, "".join(f"{v}\n" for v in sorted(result.ever_unlocked)))
    except OSError as e:
        return _err(str(e))

    print(f"status: {result.status}")
    print(f"outer iterations: {result.iterations}")
    print(f"optimizer calls: {result.optimizer_calls}")
    print(f"invalid: {result.report.invalid_count}")
    _print_dets(result.report)
    print(result.boundary.format())
    print(f"wrote: {out}")
    return EXIT_OK if result.success else EXIT_FAIL


def cmd_stats(args) -> int:
    try:
        before = load_mesh(args.before)
        after = load_mesh(args.after)
        unlocked = _read_unlocked(args.unlocked_list) if args.unlocked_list else []
        report = boundary_report(before, after, unlocked)
    except (OSError, MeshError) as e:
        return _err(str(e))
    except ValueError as e:
        return _err(f"bad unlocked list: {e}")
    print(report.format())
    if args.csv:
        try:
            _write_text(args.csv, report.to_csv())
        except OSError as e:
            return _err(str(e))
    return EXIT_OK


def cmd_dump_tets(args) -> int:
    text = dump_csv(enumerate_tet_patterns())
    if args.output in (None, "-"):
        sys.stdout.write(text)
        return EXIT_OK
    try:
        _write_text(args.output, text)
    except OSError as e:
        return _err(str(e))
    return EXIT_OK


def cmd_fixture(args) -> int:
    name = args.name
    if name == "block":
        mesh = fixtures.block_mesh(args.size)
    elif name == "displaced-center":
        mesh = fixtures.displaced_center()
    elif name == "stress-block":
        mesh = fixtures.stress_block(args.seed, args.size)
    elif name == "folded-boundary":
        mesh = fixtures.folded_boundary()
    else:
        mesh = fixtures.interior_inversion(args.seed if args.seed is not None else 258)
    try:
        save_mesh(mesh, args.output)
    except OSError as e:
        return _err(str(e))
    print(f"wrote: {args.output}  vertices: {mesh.n_vertices}  hexes: {mesh.n_hexes}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hexuntangle", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log every outer iteration")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="classify every hex of a mesh")
    c.add_argument("input")
    c.add_argument("--validity", "--method", dest="validity", choices=METHODS, default="bezier")
    c.add_argument("--max-depth", type=int, default=8, help="Bezier subdivision depth cap")
    c.add_argument("--csv", help="per-hex CSV: hex id, class, min corner det")
    c.set_defaults(func=cmd_check)

    u = sub.add_parser("untangle", help="untangle a mesh")
    u.add_argument("input")
    u.add_argument("output")
    u.add_argument("--strategy", choices=STRATEGIES, default="blob-whole")
    u.add_argument("--validity", choices=METHODS, default="bezier")
    u.add_argument("--penalty-factor", type=float, default=1e6)
    u.add_argument("--lambda", dest="lam", type=float, default=0.0, help="volume term weight")
    u.add_argument("--inner-iters", type=int, default=100)
    u.add_argument("--max-outer", type=int, default=10000)
    u.add_argument("--grad-tol", type=float, default=1e-10)
    u.add_argument("--no-fast-eps", action="store_true")
    u.add_argument("--boundary", choices=("locked", "auto"), default="auto")
    u.add_argument("--layers", type=int, default=1, help="neighbour rings per blob")
    u.add_argument("--max-depth", type=int, default=8)
    u.add_argument("--no-snap-back", action="store_true", help="keep unlocked boundary vertices where the optimizer left them")
    u.add_argument("--log", help="per-iteration CSV log")
    u.add_argument("--report", help="write the boundary movement report here")
    u.add_argument("--unlocked-out", help="write ever-unlocked boundary vertex ids here")
    u.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    u.add_argument("--seed", type=int, help="seed for the global RNG (the solver itself is deterministic)")
    u.set_defaults(func=cmd_untangle)

    s = sub.add_parser("stats", help="boundary movement between two meshes")
    s.add_argument("before")
    s.add_argument("after")
    s.add_argument("--unlocked-list", help="file of boundary vertex ids counted as movable")
    s.add_argument("--csv", help="per-vertex CSV: vertex, d, d_scaled")
    s.set_defaults(func=cmd_stats)

    d = sub.add_parser("dump-tets", help="write the 58 tet patterns as CSV")
    d.add_argument("output", nargs="?", help="output file (stdout if omitted)")
    d.set_defaults(func=cmd_dump_tets)

    f = sub.add_parser("fixture", help="write a synthetic test mesh")
    f.add_argument("name", choices=FIXTURES)
    f.add_argument("output")
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--size", type=int, default=None, help="hexes per side (block, stress-block)")
    f.set_defaults(func=cmd_fixture)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "fixture":
        if args.size is None:
            args.size = 5 if args.name == "stress-block" else 2
        if args.name == "stress-block" and args.seed is None:
            args.seed = 0
        if args.size < 1:
            return _err("--size must be >= 1")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
