"""Batch driver: read a scenario file, solve, run the registered checks, write reports.

    lbreg list-checks
    lbreg solve  --config configs/default.yaml --out runs/default
    lbreg verify --config configs/paper-suite.yaml --out runs/suite --seed 3 --threads 2
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import analysis, geometry, kernel as kmod, transport
from .errors import ConfigError, DomainError
from .reports import CheckReport, _clean, write_csv


# ----------------------------------------------------------------------------
# scenario


@dataclass
class Scenario:
    name: str
    domain: dict
    potential: dict
    boundary: dict
    grid: dict = field(default_factory=dict)
    solve: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    out: str = "runs/out"
    seed: int = 0



def _number(cfg, key, where, default=None, lo=None, hi=None, lo_open=False, hi_open=False):
    if key not in cfg:
        if default is None:
            raise ConfigError(key, f"missing from [{where}]")
        return default
    try:
        v = float(cfg[key])
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a number, got {cfg[key]!r}") from None
    if not np.isfinite(v):
        raise ConfigError(key, "must be finite")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(key, f"{v} below the allowed range")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        raise ConfigError(key, f"{v} above the allowed range")
    return v


def _validate_scenario(raw: dict) -> Scenario:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "scenario file must hold a mapping")
    for key in ("domain", "potential", "boundary"):
        if not isinstance(raw.get(key), dict):
            raise ConfigError(key, "missing section")
    pot = raw["potential"]
    p = {"gamma": _number(pot, "gamma", "potential", lo=0.0, hi=1.0),
         "delta": _number(pot, "delta", "potential", 0.5, 0.0, 1.0, True, True),
         "beta0": _number(pot, "beta0", "potential", 1.0, 0.0, lo_open=True),
         "c1": _number(pot, "c1", "potential", 0.2, 0.0),
         "c2": _number(pot, "c2", "potential", 1.0, 0.0, lo_open=True)}
    dom = raw["domain"]
    if dom.get("shape", "ball") not in ("ball", "ellipsoid"):
        raise ConfigError("shape", f"unknown domain shape {dom.get('shape')!r}")
    if dom.get("shape", "ball") == "ball":
        _number(dom, "radius", "domain", 1.0, 0.0, lo_open=True)
    bd = raw["boundary"]
    if bd.get("kind", "holder") not in ("zero", "constant", "holder"):
        raise ConfigError("kind", f"unknown boundary datum {bd.get('kind')!r}")
    if bd.get("kind", "holder") == "holder":
        _number(bd, "sigma", "boundary", 0.4, 0.0, 0.5, True, True)
    checks = raw.get("checks", [])
    if checks == "all":
        checks = [{"name": n} for n in REGISTRY]
    if not isinstance(checks, list):
        raise ConfigError("checks", "expected a list or 'all'")
    norm = []
    for c in checks:
        c = {"name": c} if isinstance(c, str) else dict(c)
        if c.get("name") not in REGISTRY:
            raise ConfigError("checks", f"unknown check {c.get('name')!r}")
        norm.append(c)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed", "expected an integer")
    return Scenario(name=str(raw.get("name", "scenario")), domain=dom, potential=p, boundary=bd,
                    grid=dict(raw.get("grid") or {}), solve=dict(raw.get("solve") or {}), checks=norm,
                    out=str(raw.get("out", "runs/out")), seed=seed)


def load_scenario(path) -> Scenario:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return _validate_scenario(raw)


# ----------------------------------------------------------------------------
# run context: builds the objects a check needs, once


class Context:
    def __init__(self, sc: Scenario, threads: int = 1):
        self.sc = sc
        self.threads = threads
        self.domain = geometry.domain_from_config(sc.domain)
        self.kernel = kmod.make_kernel(**sc.potential)
        self.bdry = transport.BoundaryDatum.from_config(sc.boundary)
        self._field = None
        self.solve_report = None

    @property
    def grid(self):
        if not hasattr(self, "_grid"):
            g = self.sc.grid
            velocity = kmod.VelocityQuadrature(float(g.get("r_max", 12.0)), int(g.get("radial_nodes", 12)),
                                               int(g.get("polar_nodes", 6)), int(g.get("azimuthal_nodes", 8)))
            n = int(g.get("centered_nodes", 16))
            centered = kmod.CenteredQuadrature(n, n, n, r_max=float(g.get("r_max", 12.0)))
            if g.get("layout", "radial") == "cartesian":
                self._grid = transport.PhaseGrid.cartesian(self.domain, int(g.get("n_space", 11)),
                                                           velocity=velocity, centered=centered)
            else:
                self._grid = transport.PhaseGrid(self.domain, tuple(g.get("spatial_shape", (13, 10, 10))),
                                                 grading=float(g.get("grading", 2.0)), velocity=velocity,
                                                 centered=centered)
        return self._grid

    @property
    def field(self):
        if self._field is None:
            s = self.sc.solve
            self._field, self.solve_report = transport.picard_solve(
                self.bdry, self.kernel, self.domain, self.grid, tol=float(s.get("tol", 1e-8)),
                max_iter=int(s.get("max_iter", 100)), threads=self.threads)
        return self._field


# ----------------------------------------------------------------------------
# check registry


@dataclass(frozen=True)
class Check:
    name: str
    paper_ref: str
    run: object
    needs_field: bool = False


def _seed(ctx, p):
    return int(p.get("seed", ctx.sc.seed))


def _parallax(ctx, p):
    reps = [geometry.check_parallax_bound(int(p.get("samples", 100000)), a, seed=_seed(ctx, p))
            for a in p.get("a", (0.3, 0.5, 0.7))]
    viol = sum(r.violations or 0 for r in reps)
    return CheckReport("parallax_bound", {"a": [r.params.get("a") for r in reps]},
                       samples=sum(r.samples for r in reps), violations=viol, passed=viol == 0,
                       seed=_seed(ctx, p), paper_ref=reps[0].paper_ref,
                       details={"per_a": [r.to_dict() for r in reps]})


def _domains(ctx, p):
    if p.get("domains") == "scenario":
        return [ctx.domain]
    return [geometry.Ball(), geometry.Ellipsoid((0.0, 0.0, 0.0), (1.5, 1.0, 0.7))]


def _geometry_check(fn, name):
    def run(ctx, p):
        reps = [fn(d, int(p.get("samples", 10000)), seed=_seed(ctx, p)) for d in _domains(ctx, p)]
        ok = all(r.passed for r in reps)
        sups = [r.empirical_sup for r in reps if r.empirical_sup is not None]
        viols = [r.violations for r in reps if r.violations is not None]
        stab = [r.stability_ratio for r in reps if r.stability_ratio is not None]
        return CheckReport(name, {"domains": len(reps)}, samples=sum(r.samples for r in reps),
                           violations=sum(viols) if viols else None,
                           empirical_sup=max(sups) if sups else None,
                           stability_ratio=max(stab) if stab else None, passed=ok, seed=_seed(ctx, p),
                           paper_ref=reps[0].paper_ref, details={"per_domain": [r.to_dict() for r in reps]})
    return run


def _grad_k(ctx, p):
    """All exponents on the scenario's centred quadrature, then p = inf again on the doubled one."""
    quad = ctx.grid.centered
    n = int(p.get("functions", 20))
    rep = kmod.grad_K_norm_check(ctx.kernel, quad, list(p.get("p", [1, 2, "inf"])), seed=_seed(ctx, p),
                                 n_functions=n)
    inf = rep.details["per_p"].get("inf")
    coarse = inf["sup"] if inf else kmod.grad_K_norm_check(ctx.kernel, quad, "inf", seed=_seed(ctx, p),
                                                           n_functions=n).empirical_sup
    fine = kmod.grad_K_norm_check(ctx.kernel, quad.refined(2), "inf", seed=_seed(ctx, p), n_functions=n)
    change = abs(fine.empirical_sup - coarse) / max(coarse, 1e-300)
    rep.stability_ratio = change
    rep.passed = bool(rep.passed and change <= float(p.get("drift_tol", 0.2)))
    rep.details["refined_inf_sup"] = fine.empirical_sup
    return rep


def _k_decay(ctx, p):
    reps = []
    for g in p.get("gammas", (0.0, 0.5)):
        kern = kmod.make_kernel(**{**ctx.sc.potential, "gamma": float(g)})
        reps.append(analysis.k_decay_check(kern))
    return CheckReport("k_decay", {"gammas": list(p.get("gammas", (0.0, 0.5)))},
                       samples=sum(r.samples for r in reps), empirical_sup=max(r.empirical_sup for r in reps),
                       passed=all(r.passed for r in reps), paper_ref=reps[0].paper_ref,
                       details={"per_gamma": [r.to_dict() for r in reps]})


def _holder(ctx, p):
    h = analysis.holder_modulus(ctx.field, float(p.get("sigma", ctx.bdry.holder_sigma)), ctx.domain,
                                int(p.get("pair_samples", 10000)), float(p.get("d0_min", 0.1)), seed=_seed(ctx, p))
    rep = h.to_check_report(paper_ref=REGISTRY["holder_modulus"].paper_ref)
    rep.details["quotients_csv"] = h.pairs
    return rep


def _solve(ctx, p):
    ctx.field
    r = ctx.solve_report
    # a solve that stops after one or two sweeps has no ratio to measure
    c = r.contraction
    return CheckReport("picard_convergence", r.params, samples=r.iterations, empirical_sup=c,
                       passed=r.status == "converged" and (not np.isfinite(c) or c < 1.0),
                       paper_ref="Picard iteration of the integral equation contracts", details=r.to_dict())


def _mixing(ctx, p):
    z = np.asarray(p.get("zeta", (0.5, -0.3, 0.8)), dtype=float)
    base = p.get("base")
    return analysis.mixing_holder_check(ctx.field, ctx.kernel, ctx.domain, z,
                                        None if base is None else np.asarray(base, float),
                                        int(p.get("dyadic_levels", 8)))


REGISTRY: dict[str, Check] = {c.name: c for c in [
    Check("nu_exactness", "collision frequency nu(|z|) = beta0 int exp(-|eta|^2)|eta - z|^gamma d eta",
          lambda ctx, p: kmod.nu_exactness_check(ctx.sc.potential["beta0"])),
    Check("frequency_bounds", "nu0 (1+|z|)^gamma <= nu(|z|) <= nu1 (1+|z|)^gamma",
          lambda ctx, p: kmod.frequency_bounds_check(ctx.kernel, int(p.get("samples", 200)), seed=_seed(ctx, p))),
    Check("caflisch_decay", "(1 + |eta|) I(eta) bounded",
          lambda ctx, p: kmod.caflisch_decay_check(float(p.get("epsilon", 1.0)), float(p.get("a1", 0.25)),
                                                   float(p.get("a2", 0.25)))),
    Check("grad_K_norm", "velocity smoothing of K: ||grad K(f)||_p <= C_p ||f||_p", _grad_k),
    Check("k_decay", "decay of K(f): |K f| <= C ||f||_L* (1 + |z|)^(-(3 - gamma)/2)", _k_decay),
    Check("parallax_bound", "parallax estimate: theta < (pi/4) d^(1-a)", _parallax),
    Check("exit_continuity", "exit point and exit time Lipschitz with constant C6 (1 + 1/d0)",
          _geometry_check(geometry.check_exit_continuity, "exit_continuity")),
    Check("segment_distance", "|zX| <= (R/d0) d(z, boundary) along a chord",
          _geometry_check(geometry.check_segment_distance, "segment_distance")),
    Check("angle_continuity", "exit point Lipschitz in the velocity angle with constant C7 (1 + 1/d0)",
          _geometry_check(geometry.check_angle_continuity, "angle_continuity")),
    Check("picard_convergence", "Picard iteration of the integral equation contracts", _solve, True),
    Check("decomposition_residual", "iterated decomposition f = I + II + III",
          lambda ctx, p: transport.decomposition_residual(ctx.field, int(p.get("n", 20)), seed=_seed(ctx, p),
                                                          tol=float(p.get("tol", 1e-3))), True),
    Check("pure_transport_limit", "collisionless limit: f = exp(-nu tau) f_b(p(x, zeta))",
          lambda ctx, p: transport.pure_transport_check(ctx.bdry, ctx.kernel, ctx.domain, ctx.grid)),
    Check("dual_g_formulation", "space-parametrized G agrees with the (s, zeta') form",
          lambda ctx, p: transport.dual_g_check(ctx.kernel, ctx.domain, int(p.get("probes", 10)), seed=_seed(ctx, p),
                                                rtol=float(p.get("rtol", 1e-4)))),
    Check("mixing_holder_half", "mixing: G is Hoelder-1/2 in space", _mixing, True),
    Check("g_velocity_lipschitz", "G is Lipschitz in velocity with constant C5 ||f||_inf",
          lambda ctx, p: analysis.g_velocity_lipschitz_check(ctx.field, ctx.kernel, ctx.domain,
                                                             n_pairs=int(p.get("pairs", 50)), seed=_seed(ctx, p)),
          True),
    Check("convolution_gain", "gain of integrability through the |x|^-(2-alpha) convolution",
          lambda ctx, p: analysis.convolution_gain_check(ctx.field, ctx.kernel, ctx.domain,
                                                         float(p.get("alpha", 0.5)), int(p.get("probes", 20)),
                                                         seed=_seed(ctx, p)), True),
    Check("holder_modulus", "interior Hoelder modulus of f weighted by (1 + 1/d0)^3", _holder, True),
    Check("boundary_preservation", "damped transport preserves boundary regularity: I and II weighted Hoelder",
          lambda ctx, p: analysis.boundary_preservation_check(
              ctx.bdry, ctx.kernel, ctx.domain, float(p.get("sigma", ctx.bdry.holder_sigma)),
              int(p.get("pair_samples", 10000)), field=ctx.field, d0_min=float(p.get("d0_min", 0.1)),
              seed=_seed(ctx, p)), True),
    Check("boundary_embedding", "|f| on the incoming boundary bounded through the L^inf_x L*_z norm",
          lambda ctx, p: analysis.embedding_check(ctx.field, ctx.bdry, ctx.kernel, ctx.domain,
                                                  int(p.get("samples", 1000)), seed=_seed(ctx, p)), True),
]}


def list_checks() -> list[tuple[str, str]]:
    return [(c.name, c.paper_ref) for c in REGISTRY.values()]


# ----------------------------------------------------------------------------
# running


def _write_report(rep: CheckReport, out: Path):
    quot = rep.details.pop("quotients_csv", None)
    rep.to_json(out / f"{rep.check_name}.json")
    if quot is not None:
        rows = np.column_stack([quot["x"], quot["zeta"], quot["y"], quot["xi"], quot["d0"], quot["quotient"],
                                quot["weighted"]])
        write_csv(out / f"{rep.check_name}_quotients.csv",
                  ["x1", "x2", "x3", "z1", "z2", "z3", "y1", "y2", "y3", "xi1", "xi2", "xi3", "d0", "quotient",
                   "weighted"], rows)


def run_scenario(config_path, out=None, seed=None, threads: int = 1, solve_only: bool = False, log=None) -> int:
    """Execute a scenario; returns the process exit status."""
    log = log or (lambda msg: print(msg, flush=True))
    sc = load_scenario(config_path)
    if seed is not None:
        sc.seed = int(seed)
    out = Path(out or sc.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(sc, threads)
    status = 0
    results = []
    want_solve = solve_only or sc.solve.get("enabled", any(REGISTRY[c["name"]].needs_field for c in sc.checks))
    if want_solve:
        ctx.field
        r = ctx.solve_report
        r.to_json(out / "solve.json")
        transport.save_field(ctx.field, out / "field.csv")
        log(f"solve: {r.status} in {r.iterations} iterations, residual {r.residual:.3e}")
        if r.status != "converged" and sc.solve.get("asserted", True):
            status = 1
    if not solve_only:
        for c in sc.checks:
            name = c["name"]
            chk = REGISTRY[name]
            if chk.needs_field and ctx.solve_report is not None and ctx.solve_report.status != "converged":
                log(f"{name}: skipped (solver diverged)")
                continue
            t0 = time.perf_counter()
            rep = chk.run(ctx, c)
            rep.paper_ref = rep.paper_ref or chk.paper_ref
            asserted = bool(c.get("asserted", True))
            _write_report(rep, out)
            results.append({"check": name, "passed": rep.passed, "asserted": asserted,
                            "sup_or_violations": rep.sup_or_violations})
            log(f"{name}: {'PASS' if rep.passed else 'FAIL'}  sup/violations={rep.sup_or_violations}  "
                f"({time.perf_counter() - t0:.1f}s)")
            if asserted and not rep.passed:
                status = 1
    summary = {"scenario": sc.name, "seed": sc.seed, "config": _clean(asdict(sc)), "results": _clean(results),
               "exit_status": status}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "run_info.json").write_text(json.dumps({"timestamp": datetime.now(timezone.utc).isoformat()}) + "\n")
    return status


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="lbreg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "verify"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, default=1)
    sub.add_parser("list-checks")
    args = ap.parse_args(argv)
    if args.command == "list-checks":
        width = max(len(n) for n in REGISTRY)
        for name, ref in list_checks():
            print(f"{name:<{width}}  {ref}")
        return 0
    try:
        return run_scenario(args.config, args.out, args.seed, args.threads, solve_only=args.command == "solve")
    except (ConfigError, DomainError) as exc:
        print(f"lbreg: invalid config: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
