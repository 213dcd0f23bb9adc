"""Command-line driver: ``wgmodes {solve,dtn,verify,convergence}``.

Exit codes: 0 success, 2 cutoff frequency, 3 solver failure, 4 validation
failure, 5 I/O or file-format failure.  Failures print one line
``error: <kind>: <message>`` on stderr.

Options may also come from a flat ``key = value`` config file
(``--config``); command-line flags win.  Meshes are file paths or
``rect:a,b,nx,ny``; materials are file paths or ``uniform:eps,mu``.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import rect_beta
from .dtn import build_dtn, export_dtn
from .errors import DegenerateClusterError, FormatError, ValidationError, WaveguideError
from .fields import export_fields
from .materials import MaterialMap, read_materials
from .mesh import generate_rect_mesh, read_mesh, refine_uniform
from .modes import (CLUSTER_TOL, CUTOFF_TOL, ORTH_TOL, REAL_TOL, detect_clusters, mode_table,
                    solve_modes, verification_report)

log = logging.getLogger("wgmodes")

EXIT_OK = 0
EXIT_IO = 5

# option name -> (type, default); None defaults mean "unset"
OPTIONS = {
    "mesh": (str, None),
    "materials": (str, None),
    "omega": (float, None),
    "num_modes": (int, 12),
    "shift": (complex, None),
    "out": (str, None),
    "dtn_out": (str, None),
    "fields_out": (str, None),
    "pencil": (str, "vd1"),
    "tol_real": (float, REAL_TOL),
    "tol_cluster": (float, CLUSTER_TOL),
    "tol_orth": (float, ORTH_TOL),
    "tol_solver": (float, 1e-12),
    "tol_cutoff": (float, CUTOFF_TOL),
    "seed": (int, 0),
    "threads": (int, None),
    "sign": (str, "auto"),
    "levels": (int, 3),
    "mode": (str, "TE10"),
}
PATH_KEYS = ("mesh", "materials", "out", "dtn_out", "fields_out")


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation failures (exit 4), not argparse's exit 2."""

    def error(self, message):
        raise ValidationError(f"usage: {message}")


def build_parser():
    p = _Parser(prog="wgmodes", description="Guided modes of PEC waveguides and modal DtN maps.")
    p.add_argument("--version", action="version", version=f"wgmodes {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    cmds = {
        "solve": "compute modes and write the CSV mode table",
        "dtn": "compute modes and export the WGDTN1 DtN matrix",
        "verify": "run property checks on a solve",
        "convergence": "refinement study against the rectangle reference",
    }
    for name, help_ in cmds.items():
        s = sub.add_parser(name, help=help_, description=help_)
        s.add_argument("--config", help="flat 'key = value' file")
        s.add_argument("--mesh", help="mesh file or rect:a,b,nx,ny")
        s.add_argument("--materials", help="materials file or uniform:eps,mu")
        s.add_argument("--omega", type=float, help="angular frequency (c = 1)")
        s.add_argument("--num-modes", type=int, dest="num_modes")
        s.add_argument("--shift", type=complex, help="eigenvalue shift (default omega^2 max(eps mu))")
        s.add_argument("--out", help="CSV mode table (stdout when omitted)")
        s.add_argument("--fields-out", dest="fields_out", help="VTK field file")
        s.add_argument("--pencil", choices=("vd1", "vd2"))
        for t in ("real", "cluster", "orth", "solver", "cutoff"):
            s.add_argument(f"--tol-{t}", type=float, dest=f"tol_{t}")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int, help="cap on BLAS worker threads")
        s.add_argument("-v", "--verbose", action="count", default=0)
        if name == "dtn":
            s.add_argument("--dtn-out", dest="dtn_out", help="output WGDTN1 file")
            s.add_argument("--sign", choices=("auto", "+1", "-1"))
            s.add_argument("--allow-degenerate", action="store_true",
                           help="write the file even if degenerate clusters were dropped")
            s.add_argument("--timestamp", action=argparse.BooleanOptionalAction, default=False,
                           help="add a creation-time line to the DtN header")
        if name == "convergence":
            s.add_argument("--levels", type=int)
            s.add_argument("--mode", help="reference mode, e.g. TE10")
    return p


def read_config(path):
    """Parse a flat ``key = value`` file; relative paths resolve against its folder."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if not sep or not key:
            raise FormatError(f"{path}: expected 'key = value'", no)
        if key not in OPTIONS:
            raise ValidationError(f"{path}: line {no}: unknown key {key!r}")
        conv = OPTIONS[key][0]
        try:
            out[key] = conv(value)
        except ValueError:
            raise ValidationError(f"{path}: line {no}: bad value for {key}: {value!r}") from None
        if key in PATH_KEYS and ":" not in value:
            out[key] = str(path.parent / value)
    return out


def resolve(args):
    """Merge defaults, config file and flags into a dict."""
    cfg = {k: d for k, (_, d) in OPTIONS.items()}
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for k in OPTIONS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if cfg["mesh"] is None:
        raise ValidationError("no mesh given (--mesh)")
    if cfg["omega"] is None:
        raise ValidationError("no frequency given (--omega)")
    if not cfg["omega"] > 0 or not math.isfinite(cfg["omega"]):
        raise ValidationError(f"omega must be positive, got {cfg['omega']}")
    if cfg["num_modes"] < 1:
        raise ValidationError(f"num-modes must be >= 1, got {cfg['num_modes']}")
    return cfg


def load_mesh(source):
    if source.startswith("rect:"):
        try:
            a, b, nx, ny = source[5:].split(",")
            return generate_rect_mesh(float(a), float(b), int(nx), int(ny))
        except ValueError:
            raise ValidationError(f"bad mesh {source!r} (expected rect:a,b,nx,ny)") from None
    return read_mesh(source)


def load_materials(source, mesh):
    if source is None:
        missing = ", ".join(mesh.region_tags())
        raise ValidationError(f"no materials given (--materials); regions needing one: {missing}")
    if source.startswith("uniform:"):
        try:
            eps, mu = (float(t) for t in source[8:].split(","))
        except ValueError:
            raise ValidationError(f"bad materials {source!r} (expected uniform:eps,mu)") from None
        mats = MaterialMap.uniform(mesh, eps, mu)
    else:
        mats = read_materials(source)
    mats.check(mesh)
    return mats


def _solve(cfg, mesh=None, pencil=None):
    mesh = mesh if mesh is not None else load_mesh(cfg["mesh"])
    mats = load_materials(cfg["materials"], mesh)
    return solve_modes(mesh, mats, cfg["omega"], cfg["num_modes"], shift=cfg["shift"],
                       pencil=pencil or cfg["pencil"], real_tol=cfg["tol_real"],
                       cluster_tol=cfg["tol_cluster"], solver_tol=cfg["tol_solver"],
                       cutoff_tol=cfg["tol_cutoff"], seed=cfg["seed"])


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror}") from None


def _emit_outputs(cfg, ms, out):
    table = mode_table(ms)
    if cfg["out"]:
        _write(cfg["out"], table)
    else:
        out.write(table)
    if cfg["fields_out"]:
        try:
            export_fields(ms.mesh, ms, cfg["fields_out"], title=f"wgmodes omega={cfg['omega']!r}")
        except OSError as exc:
            raise FormatError(f"cannot write {cfg['fields_out']}: {exc.strerror}") from None


def _summary(ms, out):
    n_prop = sum(1 for m in ms if m.classification == "propagating")
    out.write(f"# omega={ms.omega!r} sigma={complex(ms.sigma)!r} modes={len(ms)} "
              f"propagating={n_prop} cutoff_distance={ms.cutoff:.6g}\n")


def cmd_solve(cfg, out):
    ms = _solve(cfg)
    if cfg["out"]:
        _summary(ms, out)
    _emit_outputs(cfg, ms, out)
    return EXIT_OK


def cmd_dtn(cfg, args, out):
    ms = _solve(cfg)
    clusters = detect_clusters(ms, cfg["tol_cluster"])
    sign = None if cfg["sign"] == "auto" else int(cfg["sign"])
    params = {"num_modes": cfg["num_modes"], "pencil": cfg["pencil"], "seed": cfg["seed"],
              "tol_cluster": repr(cfg["tol_cluster"]), "tol_real": repr(cfg["tol_real"]),
              "tol_solver": repr(cfg["tol_solver"])}
    dtn = build_dtn(ms.blocks, ms.omega, ms, clusters, sign=sign, params=params)
    _summary(ms, out)
    for j, (b, c) in enumerate(zip(dtn.betas, dtn.classifications)):
        out.write(f"mode {j} beta {float(b.real)!r} {float(b.imag)!r} {c}\n")
    out.write(f"sign {dtn.sign:+d} truncation {dtn.params['truncation']}\n")
    if dtn.excluded and not args.allow_degenerate:
        raise DegenerateClusterError(f"degenerate cluster modes {list(dtn.excluded)} "
                                     "excluded from the DtN map", dtn.excluded)
    if cfg["dtn_out"]:
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds") \
            if args.timestamp else None
        try:
            export_dtn(dtn, cfg["dtn_out"], timestamp=stamp)
        except OSError as exc:
            raise FormatError(f"cannot write {cfg['dtn_out']}: {exc.strerror}") from None
    if cfg["out"] or cfg["fields_out"]:
        _emit_outputs(cfg, ms, out)
    return EXIT_OK


def cmd_verify(cfg, out):
    ms = _solve(cfg, pencil="vd1")
    other = _solve(cfg, mesh=ms.mesh, pencil="vd2")
    checks = verification_report(ms, other, cluster_tol=cfg["tol_cluster"],
                                 orth_tol=cfg["tol_orth"])
    _summary(ms, out)
    for c in checks:
        out.write(f"{'PASS' if c.ok else 'FAIL'} {c.name} {c.value:.3e} {c.detail}".rstrip() + "\n")
    return EXIT_OK


def rectangle_of(mesh, materials):
    """(a, b, eps, mu) if the setup is a hollow PEC rectangle with constant materials."""
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    a, b = x.max() - x.min(), y.max() - y.min()
    if not math.isclose(mesh.areas.sum(), a * b, rel_tol=1e-12):
        return None
    if not materials.is_constant():
        return None
    vals = {materials.regions[t] for t in mesh.region_tags()}
    if len(vals) != 1:
        return None
    eps, mu = vals.pop()
    return a, b, eps, mu


def cmd_convergence(cfg, out):
    levels = cfg["levels"]
    if levels < 3:
        raise ValidationError(f"convergence needs at least 3 levels, got {levels}")
    name = cfg["mode"].upper()
    try:
        kind, m, n = name[:2], int(name[2]), int(name[3:])
    except (ValueError, IndexError):
        raise ValidationError(f"bad mode name {cfg['mode']!r} (expected e.g. TE10)") from None
    mesh = load_mesh(cfg["mesh"])
    mats = load_materials(cfg["materials"], mesh)
    rect = rectangle_of(mesh, mats)
    if rect is None:
        raise ValidationError("convergence study needs a hollow rectangle with constant "
                              "materials (analytic reference)")
    a, b, eps, mu = rect
    try:
        exact = float(rect_beta(kind, m, n, a, b, cfg["omega"], eps, mu))
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    out.write(f"# {name} exact beta^2 = {exact!r}\n")
    out.write("level,h,dofs,beta_sq,error,order\n")
    prev = None
    for lev in range(levels):
        ms = _solve(cfg, mesh=mesh)
        lam = ms.beta_sq
        if not len(lam):
            raise ValidationError("no modes computed")
        got = lam[np.argmin(np.abs(lam - exact))]
        err = float(abs(got - exact))
        h = float(np.max(np.linalg.norm(np.diff(mesh.nodes[mesh.edge_table.edges], axis=1)[:, 0],
                                        axis=1)))
        order = "" if prev is None or err == 0 else repr(math.log2(prev / err))
        out.write(f"{lev},{h!r},{ms.blocks.dofmap.size},{float(got.real)!r},{err!r},{order}\n")
        prev = err
        if lev + 1 < levels:
            mesh = refine_uniform(mesh)
    return EXIT_OK


def _run(argv, out):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s", force=True)
    cfg = resolve(args)
    limits = None
    if cfg["threads"] is not None:
        if cfg["threads"] < 1:
            raise ValidationError("threads must be >= 1")
        from threadpoolctl import threadpool_limits
        limits = threadpool_limits(limits=cfg["threads"])
    try:
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "dtn":
            return cmd_dtn(cfg, args, out)
        if args.command == "verify":
            return cmd_verify(cfg, out)
        return cmd_convergence(cfg, out)
    finally:
        if limits is not None:
            limits.restore_original_limits()


def main(argv=None, out=None):
    """Entry point; returns the exit code."""
    out = out if out is not None else sys.stdout
    try:
        return _run(argv, out)
    except WaveguideError as exc:
        msg = " ".join(str(exc).split())
        sys.stderr.write(f"error: {exc.kind}: {msg}\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(f"error: io: {exc}\n")
        return EXIT_IO
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
