"""Command-line front end: weight generation, single computations, the
verification suite, norm estimation, and grid sampling.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 I/O error.  Every report is a deterministic function of the inputs and
the seed; suite rows are canonically sorted so scheduling never shows.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .bump import Exponents, bump_cube, characteristic
from .errors import DomainError, FormatError, ScopeError, ShapeError
from .forms import KernelHandle, norm_estimate
from .grids import sample_grid, verify_grid
from .lattice import doubling_report, full_rect, gen_weight, make_lattice
from .suite import rows_to_csv, rows_to_json, run_suite
from .weightio import read_weight, write_weight

_EXIT_OK = 0
_EXIT_FAIL = 1
_EXIT_CONFIG = 2
_EXIT_IO = 3

_GEN_KEYS = {
    "constant": {"value"},
    "power": {"exponent", "center"},
    "halfspace_cutoff": set(),
    "checkerboard": {"levels"},
    "random_lognormal": {"seed", "roughness"},
    "cascade": {"beta", "seed"},
}


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RunConfig:
    """Validated parameters shared by every subcommand."""

    command: str
    depth: int | None
    seed: int
    out: str | None
    fmt: str

    @classmethod
    def from_ns(cls, ns) -> "RunConfig":
        if ns.depth is not None and not 1 <= ns.depth <= 24:
            raise _Exit(_EXIT_CONFIG, f"depth must be in 1..24, got {ns.depth}")
        return cls(ns.command, ns.depth, ns.seed, ns.out, ns.fmt)


def _common_flags(sub):
    sub.add_argument("--depth", type=int, default=None, help="lattice depth L")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", default=None, help="output path (default: stdout)")
    sub.add_argument("--format", dest="fmt", choices=["csv", "json"], default="csv")


def _exponent_flags(sub):
    sub.add_argument("--p", type=float, default=2.0)
    sub.add_argument("--q", type=float, default=4.0)
    sub.add_argument("--alpha", type=float, default=0.5)
    sub.add_argument("--beta", type=float, default=0.5)
    sub.add_argument("--theta", type=float, default=1.0)
    sub.add_argument("--m", type=int, default=1)
    sub.add_argument("--n", type=int, default=1)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dyadlab",
        description="Desk-scale verification of two-weight inequalities on dyadic lattices.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gw = sub.add_parser("gen-weight", help="generate a weight and write it as WGT1")
    _common_flags(gw)
    gw.add_argument("--dim", type=int, default=1)
    gw.add_argument("--kind", required=True, choices=sorted(_GEN_KEYS))
    gw.add_argument(
        "--param",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="descriptor field, repeatable; keys checked against the kind",
    )

    cp = sub.add_parser("compute", help="compute one quantity from weight files")
    _common_flags(cp)
    _exponent_flags(cp)
    cp.add_argument("quantity", choices=["characteristic", "bump", "doubling"])
    cp.add_argument("--kind", default="product_bump", help="characteristic kind")
    cp.add_argument("--family", choices=["dyadic", "onethird"], default=None)
    cp.add_argument("--sigma", default=None, help="weight file (first measure)")
    cp.add_argument("--omega", default=None, help="weight file (second measure)")
    cp.add_argument("--weight", default=None, help="weight file (single-measure quantities)")
    cp.add_argument(
        "--mode",
        choices=["cube", "rectangle", "product_reverse", "strong"],
        default="cube",
        help="doubling scan mode",
    )

    ne = sub.add_parser("norm-estimate", help="lower-bound the bilinear form norm")
    _common_flags(ne)
    _exponent_flags(ne)
    ne.add_argument("--sigma", required=True)
    ne.add_argument("--omega", required=True)
    ne.add_argument("--iterations", type=int, default=8)

    vf = sub.add_parser("verify", help="run the built-in verification suite")
    _common_flags(vf)
    vf.add_argument("--depth2d", type=int, default=5, help="2D lattice depth")
    vf.add_argument(
        "--weight",
        action="append",
        default=[],
        help="extra weight file to run weight-level checks on (repeatable)",
    )

    gs = sub.add_parser("grid-sample", help="sample random shifted grids as GRID1 lines")
    _common_flags(gs)
    gs.add_argument("--dim", type=int, default=1)
    gs.add_argument("--lo", type=int, default=0)
    gs.add_argument("--hi", type=int, default=8)
    gs.add_argument("--count", type=int, default=1)

    return parser


def _write_out(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as e:
        raise _Exit(_EXIT_IO, f"cannot write {out}: {e}") from e


def _load_weight(path: str | None, flag: str, bad_file_code: int = _EXIT_IO):
    if path is None:
        raise _Exit(_EXIT_CONFIG, f"this quantity needs {flag}")
    try:
        return read_weight(path)
    except FormatError as e:
        raise _Exit(bad_file_code, f"{path}: {e}") from e
    except OSError as e:
        raise _Exit(_EXIT_IO, f"cannot read {path}: {e}") from e


def _parse_params(pairs, kind: str, default_seed: int) -> dict:
    spec = {"kind": kind}
    allowed = _GEN_KEYS[kind]
    for pair in pairs:
        key, eq, raw = pair.partition("=")
        if not eq:
            raise _Exit(_EXIT_CONFIG, f"--param needs KEY=VALUE, got {pair!r}")
        if key not in allowed:
            raise _Exit(_EXIT_CONFIG, f"kind {kind!r} does not take key {key!r}")
        try:
            spec[key] = json.loads(raw)
        except json.JSONDecodeError:
            spec[key] = raw
    if "seed" in allowed and "seed" not in spec:
        spec["seed"] = default_seed
    return spec


def cmd_gen_weight(ns) -> int:
    cfg = RunConfig.from_ns(ns)
    if cfg.depth is None:
        raise _Exit(_EXIT_CONFIG, "gen-weight needs --depth")
    if cfg.out is None:
        raise _Exit(_EXIT_CONFIG, "gen-weight needs --out")
    lat = make_lattice(ns.dim, cfg.depth)
    w = gen_weight(lat, _parse_params(ns.param, ns.kind, cfg.seed))
    try:
        write_weight(cfg.out, w)
    except OSError as e:
        raise _Exit(_EXIT_IO, f"cannot write {cfg.out}: {e}") from e
    return _EXIT_OK


def _exps_from(ns) -> Exponents:
    return Exponents(
        p=ns.p, q=ns.q, alpha=ns.alpha, beta=ns.beta, m=ns.m, n=ns.n, theta=ns.theta
    )


def cmd_compute(ns) -> int:
    cfg = RunConfig.from_ns(ns)
    if ns.quantity == "characteristic":
        sigma = _load_weight(ns.sigma, "--sigma")
        omega = _load_weight(ns.omega, "--omega")
        res = characteristic(ns.kind, None, sigma, omega, _exps_from(ns), family=ns.family)
        if ns.fmt == "json":
            text = json.dumps({"quantity": "characteristic", "row": res.csv_row()}, indent=2) + "\n"
        else:
            text = "kind,p,q,theta,alpha,beta,value,levels,indices\n" + res.csv_row() + "\n"
    elif ns.quantity == "bump":
        w = _load_weight(ns.weight, "--weight")
        value = bump_cube(full_rect(w.lattice), w, ns.theta)
        if ns.fmt == "json":
            text = json.dumps({"quantity": "bump", "theta": ns.theta, "value": value}, indent=2) + "\n"
        else:
            text = f"quantity,theta,value\nbump,{ns.theta:.17g},{value:.17g}\n"
    else:
        w = _load_weight(ns.weight, "--weight")
        rep = doubling_report(w, ns.mode)
        payload = {
            "quantity": "doubling",
            "mode": rep.mode,
            "constant": rep.constant,
            "infinite": rep.infinite,
            "rev_C": rep.rev_C,
            "rev_eps": list(rep.rev_eps) if rep.rev_eps else None,
            "rev_eps_cube": rep.rev_eps_cube,
            "strong_beta": rep.strong_beta,
            "passes_reverse": rep.passes_reverse if rep.mode == "product_reverse" else None,
        }
        if ns.fmt == "json":
            text = json.dumps(payload, indent=2) + "\n"
        else:
            lines = ["field,value"]
            for key, val in payload.items():
                lines.append(f"{key},{val}")
            text = "\n".join(lines) + "\n"
    _write_out(text, cfg.out)
    return _EXIT_OK


def cmd_norm_estimate(ns) -> int:
    cfg = RunConfig.from_ns(ns)
    sigma = _load_weight(ns.sigma, "--sigma")
    omega = _load_weight(ns.omega, "--omega")
    exps = _exps_from(ns)
    kernel = KernelHandle.from_exponents(exps)
    est = norm_estimate(kernel, sigma, omega, exps, iterations=ns.iterations, seed=cfg.seed)
    lines = ["iteration,objective,seed"]
    for i, (_, _, obj) in enumerate(est.trace):
        lines.append(f"{i},{obj:.17g},{cfg.seed}")
    lines.append(f"lower_bound,{est.lower_bound:.17g}")
    _write_out("\n".join(lines) + "\n", cfg.out)
    if cfg.out is not None:
        print(f"certified lower bound {est.lower_bound:.17g}")
    return _EXIT_OK


def cmd_verify(ns) -> int:
    cfg = RunConfig.from_ns(ns)
    extra = []
    for path in ns.weight:
        # weight files named in the verify config are configuration: a bad
        # file is a config error, unlike compute where it is an I/O error
        w = _load_weight(path, "--weight", bad_file_code=_EXIT_CONFIG)
        extra.append((Path(path).stem, w))
    depth = 8 if cfg.depth is None else cfg.depth
    rows = run_suite(depth=depth, depth_2d=ns.depth2d, seed=cfg.seed, extra_weights=extra)
    text = rows_to_json(rows) if cfg.fmt == "json" else rows_to_csv(rows)
    _write_out(text, cfg.out)
    failures = [r for r in rows if not r.passed]
    for r in failures:
        print(f"FAIL {r.name} lhs={r.lhs:.6g} bound={r.bound:.6g}", file=sys.stderr)
    return _EXIT_FAIL if failures else _EXIT_OK


def cmd_grid_sample(ns) -> int:
    cfg = RunConfig.from_ns(ns)
    lines = []
    for k in range(ns.count):
        grid = sample_grid(cfg.seed + k, ns.dim, ns.lo, ns.hi)
        verify_grid(grid)
        lines.append(grid.descriptor())
    _write_out("\n".join(lines) + "\n", cfg.out)
    return _EXIT_OK


_DISPATCH = {
    "gen-weight": cmd_gen_weight,
    "compute": cmd_compute,
    "norm-estimate": cmd_norm_estimate,
    "verify": cmd_verify,
    "grid-sample": cmd_grid_sample,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else _EXIT_OK
    try:
        return _DISPATCH[ns.command](ns)
    except _Exit as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (DomainError, ShapeError, ScopeError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return _EXIT_CONFIG
    except FormatError as e:
        print(f"file format error: {e}", file=sys.stderr)
        return _EXIT_IO
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return _EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
