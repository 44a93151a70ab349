"""Command-line front-end: ``nlbvp {validate,solve,study,green,normals}``.

Configuration files hold one ``key = value`` per line; ``#`` starts a
comment and dotted keys (``solver.tol``) group settings. See the README
for the full key list.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_VALIDATION, EXIT_SOLVER = 0, 1, 2, 3, 4

DEFAULTS = {
    "domain": "interval:0,1",
    "mesh.h": "1/64",
    "p": "2",
    "beta": "0",
    "q": "identity",
    "delta": "0.1",
    "lambda": "exact",
    "rho": "mollified:0.8,0.9",
    "psi": "bump:0.9",
    "smoothness": "",
    "bc": "dirichlet",
    "f": "",
    "f1": "",
    "g": "",
    "b": "0",
    "mu": "0",
    "m": "2",
    "mollify": "true",
    "solver.tol": "1e-10",
    "solver.maxit": "20000",
    "quad.n_radial": "12",
    "quad.n_angular": "32",
    "quad.tol": "1e-6",
    "study.kind": "bvp",
    "study.deltas": "",
    "study.reference": "",
    "study.flux": "",
    "green.u": "x^2",
    "green.v": "",
    "green.support": "",
    "green.eps": "",
    "out": "out",
}


class ConfigError(ValueError):
    """A configuration line or value that cannot be parsed."""


@dataclass
class RunConfig:
    """Resolved configuration with the source line of every key."""

    values: dict
    lines: dict = field(default_factory=dict)
    path: str = ""

    def raw(self, key: str) -> str:
        return self.values.get(key, DEFAULTS.get(key, ""))

    def _fail(self, key: str, msg: str):
        where = f"line {self.lines[key]}" if key in self.lines else "default"
        raise ConfigError(f"{self.path}:{where}: key '{key}': {msg}")

    def number(self, key: str) -> float:
        from .expr import ExprError, evaluate, parse

        text = self.raw(key)
        try:
            tree = parse(text)
            return float(evaluate(tree, np.zeros((1, 2)))[0])
        except (ExprError, ValueError) as exc:
            self._fail(key, f"not a number: {text!r} ({exc})")

    def integer(self, key: str) -> int:
        v = self.number(key)
        if v != int(v):
            self._fail(key, "expected an integer")
        return int(v)

    def flag(self, key: str) -> bool:
        v = self.raw(key).lower()
        if v not in ("true", "false", "1", "0", "yes", "no"):
            self._fail(key, f"expected true/false, got {v!r}")
        return v in ("true", "1", "yes")

    def numbers(self, key: str) -> list[float]:
        text = self.raw(key)
        try:
            return [float(s) for s in text.split(",") if s.strip()]
        except ValueError:
            self._fail(key, f"expected a comma-separated list, got {text!r}")

    def field(self, key: str, dim: int, vector: bool = False):
        from .convolutions import Field
        from .expr import ExprError, to_field

        text = self.raw(key)
        if not text:
            return None
        try:
            if vector:
                parts = [to_field(s, dim) for s in text.split(";")]
                if len(parts) != dim:
                    self._fail(key, f"expected {dim} components separated by ';'")
                return Field.closed(lambda X: np.stack([c.value(X) for c in parts], axis=1), dim=dim, vector=True)
            return to_field(text, dim)
        except ExprError as exc:
            self._fail(key, str(exc))


def parse_config(text: str, path: str = "<config>") -> RunConfig:
    """Parse ``key = value`` lines; unknown keys and duplicates are errors."""
    values, lines = {}, {}
    for no, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:line {no}: expected 'key = value', got {body!r}")
        key, _, val = body.partition("=")
        key, val = key.strip(), val.strip().strip('"')
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:line {no}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{path}:line {no}: duplicate key '{key}'")
        values[key], lines[key] = val, no
    return RunConfig(values, lines, path)


def load_config(path: str) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, path)


def parse_domain(spec: str):
    from .geometry import Domain

    kind, _, args = spec.partition(":")
    nums = [float(s) for s in args.replace(";", ",").split(",") if s.strip()]
    if kind == "interval":
        return Domain.interval(*nums)
    if kind == "rectangle":
        return Domain.rectangle(*nums)
    if kind == "disk":
        if len(nums) != 3:
            raise ValueError("disk needs cx,cy,r")
        return Domain.disk(tuple(nums[:2]), nums[2])
    if kind == "polygon":
        if len(nums) % 2:
            raise ValueError("polygon needs x,y pairs")
        return Domain.polygon(list(zip(nums[::2], nums[1::2])))
    raise ValueError(f"unknown domain kind '{kind}'")


# ---------------------------------------------------------------- resolution


def build_context(cfg: RunConfig, delta: float | None = None):
    from .operators import make_context

    try:
        domain = parse_domain(cfg.raw("domain"))
    except ValueError as exc:
        cfg._fail("domain", str(exc))
    sm = cfg.raw("smoothness")
    return make_context(
        domain,
        p=cfg.number("p"),
        beta=cfg.number("beta"),
        q=cfg.raw("q"),
        delta=cfg.number("delta") if delta is None else delta,
        lam=cfg.raw("lambda"),
        rho=cfg.raw("rho"),
        psi=cfg.raw("psi"),
        n_radial=cfg.integer("quad.n_radial"),
        n_angular=cfg.integer("quad.n_angular"),
        quad_tol=cfg.number("quad.tol"),
        smoothness=int(sm) if sm else None,
    )


def build_spec(cfg: RunConfig, ctx):
    from .convolutions import DualDatum
    from .geometry import build_mesh
    from .solvers import ProblemSpec

    d = ctx.d
    mesh = build_mesh(ctx.domain, cfg.number("mesh.h"))
    f = cfg.field("f", d)
    f1 = cfg.field("f1", d, vector=True)
    if f1 is not None:
        from .convolutions import Field

        f = DualDatum(f if f is not None else Field.constant(0.0, d), f1)
    return ProblemSpec(
        ctx,
        mesh,
        cfg.raw("bc"),
        f=f,
        g=cfg.field("g", d),
        b=cfg.number("b"),
        mu=cfg.number("mu"),
        m=cfg.number("m"),
        mollify=cfg.flag("mollify"),
        tol=cfg.number("solver.tol"),
        maxit=cfg.integer("solver.maxit"),
    )


def manifest(cfg: RunConfig, ctx, extra: dict | None = None) -> dict:
    """Every resolved parameter and constant of a run."""
    from .kernels import cbar

    out = {k: cfg.raw(k) for k in sorted(DEFAULTS)}
    out["constants"] = {
        "cbar_d_p": cbar(ctx.d, ctx.p),
        "C_d_beta_p": ctx.consts.C,
        "rho_scale": ctx.consts.scale,
        "rho_bar": ctx.rho_bar,
        "A_delta_N": ctx.a_delta() if ctx.p == 2 else None,
        "delta_threshold": ctx.horizon.threshold,
        "N": ctx.N,
        "kappa0": ctx.rule.distance.kappa0,
        "kappa1": ctx.rule.distance.kappa1,
    }
    out["threads"] = os.environ.get("NLBVP_THREADS", "")
    out.update(extra or {})
    return out


def write_manifest(out: Path, data: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")


def write_rows(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    body = [",".join(header)] + [",".join(f"{float(v):.12e}" for v in r) for r in rows]
    path.write_text("\n".join(body) + "\n")


# ---------------------------------------------------------------- commands


def cmd_validate(cfg: RunConfig, args) -> int:
    from .localization import horizon_threshold, validate_rule
    from .verification import check_normalization

    ctx = build_context(cfg)
    validate_rule(ctx.rule)
    table = check_normalization(ctx)
    out = Path(args.out or cfg.raw("out"))
    table.to_csv(out / "normalization.csv")
    write_manifest(out, manifest(cfg, ctx, {"command": "validate"}))
    print(f"rule {ctx.rule.kind}: ok; threshold {horizon_threshold(ctx.rule):.6g}; rho scale {ctx.consts.scale:.12e}")
    print(table.summary())
    if not table.passed:
        print("validation failed: kernel normalization defect", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_solve(cfg: RunConfig, args) -> int:
    from .solvers import solve

    ctx = build_context(cfg)
    spec = build_spec(cfg, ctx)
    rep = solve(spec)
    out = Path(args.out or cfg.raw("out"))
    mesh = spec.mesh
    header = ["node"] + ["x", "y"][: mesh.dim] + ["value"]
    rows = [[i, *mesh.nodes[i], rep.solution.nodal[i]] for i in range(mesh.n_nodes)]
    write_rows(out / "solution.csv", header, rows)
    stats = {"iterations": rep.iterations, "residual": rep.residual, "h1": rep.h1, "l2": rep.l2, "energy": rep.energy}
    write_manifest(out, manifest(cfg, ctx, {"command": "solve", "result": stats}))
    print(f"solved {mesh.n_nodes} nodes in {rep.iterations} iterations, residual {rep.residual:.3e}")
    return EXIT_OK


def _deltas(cfg: RunConfig, args) -> list[float]:
    if args.deltas:
        try:
            return [float(s) for s in args.deltas.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"--deltas: expected a comma-separated list, got {args.deltas!r}")
    vals = cfg.numbers("study.deltas")
    return vals or [0.16, 0.08, 0.04, 0.02]


def cmd_study(cfg: RunConfig, args) -> int:
    from . import verification as V

    deltas = _deltas(cfg, args)
    ctx = build_context(cfg, delta=max(deltas))
    kind = cfg.raw("study.kind")
    d = ctx.d
    if kind == "bvp":
        spec = build_spec(cfg, ctx)
        table = V.bvp_delta_study(spec, deltas, cfg.field("study.reference", d))
    elif kind == "localization":
        table = V.localization_study(cfg.field("green.u", d), ctx, deltas)
    elif kind == "flux":
        spec = build_spec(cfg, ctx)
        dn = cfg.field("study.flux", d)
        if dn is None:
            cfg._fail("study.flux", "flux studies need the exact normal derivative")
        table = V.flux_study(spec, deltas, dn.value)
    else:
        cfg._fail("study.kind", f"unknown study '{kind}' (bvp, localization, flux)")
    out = Path(args.out or cfg.raw("out"))
    table.to_csv(out / f"study_{kind}.csv")
    write_manifest(out, manifest(cfg, ctx, {"command": "study", "deltas": deltas, "verdicts": table.verdicts}))
    print(table.summary())
    return EXIT_OK if table.passed else EXIT_VERDICT


def cmd_green(cfg: RunConfig, args) -> int:
    from .convolutions import Field
    from . import verification as V

    ctx = build_context(cfg)
    d = ctx.d
    u = cfg.field("green.u", d)
    v = cfg.field("green.v", d)
    which = args.which or "second"
    out = Path(args.out or cfg.raw("out"))
    if which == "first":
        v = v or Field.constant(1.0, d)
        eps = cfg.numbers("green.eps") or None
        table = V.green_full(u, v, ctx, eps)
        table.to_csv(out / "green_first.csv")
        ok, info = table.passed, {"verdicts": table.verdicts}
        print(table.summary())
    else:
        if v is None:
            cfg._fail("green.v", "required for the strong and second identities")
        if which == "second":
            res = V.green_second(u, v, ctx)
        else:
            sup = cfg.numbers("green.support") or None
            res = V.green_strong(u, v, ctx, support=sup)
        write_rows(out / f"green_{which}.csv", list(res), [list(res.values())])
        ok, info = True, {"result": res}
        print(", ".join(f"{k}={val:.12e}" for k, val in res.items()))
    write_manifest(out, manifest(cfg, ctx, {"command": f"green {which}", **info}))
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_normals(cfg: RunConfig, args) -> int:
    from .solvers import solve
    from .verification import default_tests, normal_flux

    ctx = build_context(cfg)
    spec = build_spec(cfg, ctx)
    rep = solve(spec)
    fd = normal_flux(rep, spec)
    out = Path(args.out or cfg.raw("out"))
    dim = spec.mesh.dim
    header = ["x", "y"][:dim] + ["z"]
    write_rows(out / "normal_flux.csv", header, [[*x, z] for x, z in zip(fd.nodes, fd.facet_values)])
    tests = default_tests(spec.mesh)
    write_rows(out / "flux_pairings.csv", ["test", "pairing"], [[i, v] for i, v in enumerate(fd.pairings)][: len(tests)])
    info = {"extension_gap": fd.extension_gap, "robin_gap": fd.robin_gap}
    write_manifest(out, manifest(cfg, ctx, {"command": "normals", "result": info}))
    print(f"Z at boundary nodes: {', '.join(f'{z:.6e}' for z in fd.facet_values[:8])}")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "study": cmd_study, "green": cmd_green, "normals": cmd_normals}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlbvp", description="Nonlocal boundary-value problems with heterogeneous horizons.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="key = value configuration file")
    ap.add_argument("--out", help="output directory (overrides 'out')")
    ap.add_argument("--deltas", help="comma-separated delta schedule for 'study'")
    ap.add_argument("--which", choices=("first", "second", "strong"), help="identity for 'green'")
    return ap


def _cap_threads() -> None:
    n = os.environ.get("NLBVP_THREADS")
    if n is None:
        return
    if not n.isdigit() or int(n) < 1:
        raise ConfigError(f"NLBVP_THREADS must be a positive integer, got {n!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _cap_threads()
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from .localization import HorizonError, RuleValidationError
    from .kernels import KernelError
    from .solvers import SolverError, SpecError

    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HorizonError, RuleValidationError, KernelError) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SpecError as exc:
        print(f"invalid problem: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverError as exc:
        print(f"solver failed at stage '{exc.stage}': {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"solver failed at stage 'numerics': {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
