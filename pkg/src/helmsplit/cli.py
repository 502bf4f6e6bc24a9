"""Command-line front end: ``solve``, ``validate-sphere`` and ``kernel-check``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error,
3 validation threshold not met.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import nufft
from .checks import run_kernel_checks
from .geometry import load_mesh, make_icosphere, scale_to_unit_box
from .operators import OperatorConfig, apply_combined, assemble, rhs_plane_wave
from .solver import (
    N_PER_INV_SQRT_DELTA,
    SolveParams,
    _next_pow2,
    direction_grid,
    farfield,
    farfield_error,
    gmres,
    mie_farfield,
    select_parameters,
)

logger = logging.getLogger("helmsplit")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2, 3
COMMANDS = ("solve", "validate-sphere", "kernel-check")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    command: str = "solve"
    mesh: str | None = None
    sphere_subdiv: int | None = None
    size_lambda: float | None = None
    kappa: float | None = None
    incident: tuple = (0.0, 0.0, 1.0)
    N: int | None = None
    delta: str = "auto"
    preset: str = "lower"
    p: int = 4
    q: int = 5
    filter: str = "power"
    eta: str = "auto"
    curvature: str | None = None
    quad_order: int = 6
    cube_quad_order: int = 5
    tol: float = 1e-6
    maxit: int = 200
    threshold: float = 0.12
    n_theta: int = 32
    n_phi: int = 64
    out: str = "out"
    cache: str | None = None
    workers: int = 1
    inject: str | None = None
    log_level: str = "INFO"

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"command: must be one of {COMMANDS}")
        if self.command == "kernel-check":
            return
        if (self.mesh is None) == (self.sphere_subdiv is None):
            raise ConfigError("mesh/sphere_subdiv: give exactly one of a mesh path and a sphere spec")
        if self.command == "validate-sphere" and self.sphere_subdiv is None:
            raise ConfigError("sphere_subdiv: validate-sphere needs a sphere spec")
        if (self.size_lambda is None) == (self.kappa is None):
            raise ConfigError("size_lambda/kappa: give exactly one")
        if self.sphere_subdiv is not None and not 0 <= self.sphere_subdiv <= 7:
            raise ConfigError("sphere_subdiv: must lie in [0, 7]")
        if self.filter not in ("product", "power"):
            raise ConfigError("filter: must be 'product' or 'power'")
        if self.delta != "auto" and float(self.delta) <= 0:
            raise ConfigError("delta: must be positive or 'auto'")
        if self.eta != "auto" and float(self.eta) <= 0:
            raise ConfigError("eta: must be positive or 'auto'")
        if self.tol <= 0 or self.maxit < 1:
            raise ConfigError("tol/maxit: must be positive")
        if self.workers < 1:
            raise ConfigError("workers: must be at least 1")
        if abs(np.linalg.norm(self.incident) - 1.0) > 1e-9:
            raise ConfigError("incident: must be a unit vector")


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, value: str):
    if key not in _TYPES or key == "command":
        raise ConfigError(f"{key}: unknown configuration key")
    t = _TYPES[key]
    try:
        if key == "incident":
            vals = tuple(float(v) for v in value.replace(",", " ").split())
            if len(vals) != 3:
                raise ValueError
            return vals
        if key in ("delta", "eta"):
            return value if value == "auto" else str(float(value))
        if "int" in t:
            return int(value)
        if "float" in t:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return value


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            out[key] = _convert(key, value)
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="helmsplit", description="Kernel-splitting BEM for sound-soft scattering.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat key=value file; flags override it")
    ap.add_argument("--mesh")
    ap.add_argument("--sphere-subdiv", type=int)
    ap.add_argument("--size-lambda", type=float)
    ap.add_argument("--kappa", type=float, help="physical wavenumber (alternative to --size-lambda)")
    ap.add_argument("--incident", help="unit direction 'x,y,z'")
    ap.add_argument("--N", type=int)
    ap.add_argument("--delta", help="float or 'auto'")
    ap.add_argument("--preset", choices=("lower", "higher"))
    ap.add_argument("--p", type=int)
    ap.add_argument("--q", type=int)
    ap.add_argument("--filter", choices=("product", "power"))
    ap.add_argument("--eta", help="float or 'auto'")
    ap.add_argument("--curvature", choices=("quadric", "zero", "analytic"))
    ap.add_argument("--quad-order", type=int)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--maxit", type=int)
    ap.add_argument("--threshold", type=float)
    ap.add_argument("--out")
    ap.add_argument("--cache")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--inject", choices=("residue-sign",), help="kernel-check mutation hook")
    ap.add_argument("--log-level")
    return ap


def parse_config(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        try:
            values.update(read_config_file(args.config))
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {args.config}") from None
    for key, val in vars(args).items():
        if key in ("command", "config") or val is None:
            continue
        values[key] = _convert(key, str(val)) if key in ("incident", "delta", "eta") else val
    cfg = RunConfig(command=args.command, **values)
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# Runs
# --------------------------------------------------------------------------
@dataclass
class Problem:
    mesh: object
    kappa: float
    params: SolveParams
    op_cfg: OperatorConfig
    resolved: dict = field(default_factory=dict)


def resolve_problem(cfg: RunConfig) -> Problem:
    if cfg.sphere_subdiv is not None:
        raw = make_icosphere(cfg.sphere_subdiv)
        curvature = cfg.curvature or "analytic"
    else:
        raw = load_mesh(cfg.mesh)
        curvature = cfg.curvature or "quadric"
    mesh, rec = scale_to_unit_box(raw)
    if cfg.size_lambda is not None:
        kappa = 2 * math.pi * cfg.size_lambda / mesh.diameter()
    else:
        kappa = rec.to_scaled_wavenumber(cfg.kappa)
    if cfg.delta == "auto":
        auto = select_parameters(kappa, cfg.preset)
        delta, N = auto.delta, cfg.N or auto.N
    else:
        delta = float(cfg.delta)
        N = cfg.N or _next_pow2(N_PER_INV_SQRT_DELTA / math.sqrt(delta))
    eta = kappa / 2 if cfg.eta == "auto" else float(cfg.eta)
    params = SolveParams(delta=delta, N=N, p=cfg.p, q=cfg.q, filter_kind=cfg.filter, eta=eta,
                         tol=cfg.tol, maxit=cfg.maxit, kappa=kappa)
    op_cfg = OperatorConfig(kappa=kappa, eta=eta, delta=delta, N=N, p=cfg.p, q=cfg.q, filter_kind=cfg.filter,
                            curvature_mode=curvature, quad_order=cfg.quad_order,
                            cube_quad_order=cfg.cube_quad_order, cache_dir=cfg.cache)
    resolved = dict(n=mesh.n_panels, N=N, delta=delta, p=cfg.p, q=cfg.q, eta=eta, kappa=kappa,
                    filter=cfg.filter, curvature=curvature, lambda_diag=params.lam, tol=cfg.tol,
                    maxit=cfg.maxit, size_lambda=cfg.size_lambda, scale=rec.scale,
                    incident=list(cfg.incident), mesh=cfg.mesh, sphere_subdiv=cfg.sphere_subdiv)
    logger.info("resolved parameters: %s", json.dumps(resolved))
    return Problem(mesh, kappa, params, op_cfg, resolved)


def write_density_csv(path, mesh, sigma) -> None:
    c = mesh.centroids
    with open(path, "w") as fh:
        fh.write("panel,cx,cy,cz,re,im\n")
        for i, s in enumerate(sigma):
            fh.write(f"{i},{c[i, 0]:.17g},{c[i, 1]:.17g},{c[i, 2]:.17g},{s.real:.17g},{s.imag:.17g}\n")


def run_solve(cfg: RunConfig):
    """Solve and write ``summary.json``, ``density.csv`` and ``farfield.csv``."""
    t0 = time.perf_counter()
    prob = resolve_problem(cfg)
    op = assemble(prob.mesh, prob.op_cfg)
    logger.info("setup %.3f s (kernel coefficients %.3f s, cached=%s)", op.setup_time_s,
                op.timings["ghat_s"], op.ghat_from_cache)
    b = rhs_plane_wave(op.mesh, prob.kappa, cfg.incident, op.quad)
    res = gmres(lambda x: apply_combined(op, x), b, tol=cfg.tol, maxit=cfg.maxit)
    logger.info("gmres: %d iterations, %.3f s/iteration, converged=%s", res.iterations,
                res.time_per_iteration_s, res.converged)
    dirs = direction_grid(cfg.n_theta, cfg.n_phi)
    ff = farfield(op.mesh, res.density, prob.kappa, prob.params.eta, dirs, op.quad)
    res.setup_time_s = op.setup_time_s
    res.total_time_s = time.perf_counter() - t0
    res.mem_bytes = op.mem_bytes(krylov_vectors=res.iterations + 1)
    res.meta = dict(prob.resolved, ghat_time_s=op.timings["ghat_s"], ghat_cached=op.ghat_from_cache)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    res.write_json(out / "summary.json")
    write_density_csv(out / "density.csv", op.mesh, res.density)
    ff.to_csv(out / "farfield.csv")
    return prob, op, res, ff


def run_validate_sphere(cfg: RunConfig) -> int:
    prob, op, res, ff = run_solve(cfg)
    center, radius = op.mesh.sphere
    mie = mie_farfield(prob.kappa, radius, direction_grid(cfg.n_theta, cfg.n_phi), cfg.incident, center)
    err = farfield_error(ff, mie)
    passed = err <= cfg.threshold and cfg.threshold > 0
    report = dict(farfield_error=err, threshold=cfg.threshold, passed=passed, iterations=res.iterations,
                  converged=res.converged)
    with open(Path(cfg.out) / "validation.json", "w") as fh:
        json.dump(report, fh, indent=2)
    print(f"farfield relative L2 error {err:.4f} (threshold {cfg.threshold}): {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_VALIDATION


def run_kernel_check(cfg: RunConfig) -> int:
    report = run_kernel_checks(inject=cfg.inject)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "kernel_check.json", "w") as fh:
        json.dump(report, fh, indent=2)
    for name, item in report["properties"].items():
        print(f"{name}: {'PASS' if item['passed'] else 'FAIL'} (measured {item['measured']:.3e}, "
              f"limit {item['limit']:.1e})")
    return EXIT_OK if report["passed"] else EXIT_VALIDATION


def main(argv=None) -> int:
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=getattr(logging, cfg.log_level.upper(), logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    nufft.fft_workers = cfg.workers
    try:
        if cfg.command == "solve":
            run_solve(cfg)
            return EXIT_OK
        if cfg.command == "validate-sphere":
            return run_validate_sphere(cfg)
        return run_kernel_check(cfg)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, RuntimeError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
