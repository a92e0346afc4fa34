"""Command-line driver: certify, spectrum, lyapunov, linearize, verify, pipeline.

Exit codes: 0 success, 2 parse or usage error, 3 not certifiable,
4 contraction ratio K L_f / alpha >= 1.  Human diagnostics go to stderr;
stdout carries a single summary line.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import crossing, dichotomy, kinematics, lyapunov, palmer_lin
from .expr import ExprError
from .flow import (CATALOG_NAMES, IntegrationError, LinearSystem, NonlinearPerturbation,
                   SystemSpecError, catalog, solve_linear, zero_perturbation)

log = logging.getLogger("nonautlin")

EXIT_OK, EXIT_USAGE, EXIT_NOT_CERTIFIABLE, EXIT_RATIO = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# IO helpers

def f17(x) -> str:
    return format(float(x), ".17g")


def _clean(obj):
    """Make reports JSON-safe; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise UsageError(f"{path}: invalid JSON ({err})") from None


def load_system(path: str) -> LinearSystem:
    """System JSON ``{dim, A, params}`` or ``{"catalog": name, "params": {...}}``."""
    data = _read_json(path)
    if "catalog" in data:
        if data["catalog"] not in CATALOG_NAMES:
            raise UsageError(f"unknown catalog system {data['catalog']!r}")
        return catalog(data["catalog"], data.get("params", {}))[0]
    return LinearSystem.from_json(data)


def load_perturbation(path: str | None, dim: int) -> NonlinearPerturbation:
    if path is None:
        return zero_perturbation(dim)
    pert = NonlinearPerturbation.from_json(_read_json(path))
    if pert.dim != dim:
        raise UsageError(f"perturbation has dimension {pert.dim}, system has {dim}")
    rep = pert.check(np.linspace(0.0, 5.0, 6), np.random.default_rng(0), n_pairs=16)
    if not rep["class_ok"]:
        raise UsageError(f"perturbation declared A2 but |f(t,0)| reaches {rep['sup_f0']:.3g}")
    if not (rep["lipschitz_ok"] and rep["K0_ok"]):
        log.warning("declared L_f/beta/K0 not confirmed by sampling (ratio %.3g, sup|f(t,0)| %.3g)",
                    rep["lipschitz_ratio"], rep["sup_f0"])
    return pert


def load_points(path: str | None, dim: int, seed: int, n: int) -> list:
    if path is None:
        rng = np.random.default_rng(seed)
        pts = []
        for _ in range(n):
            tau = float(np.round(rng.uniform(0.0, 2.0), 6))
            xi = np.round(rng.uniform(1.0, 3.0, dim) * rng.choice([-1.0, 1.0], dim), 6)
            pts.append((tau, xi))
        return pts
    try:
        pts = crossing.read_points(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}") from None
    for _, xi in pts:
        if len(xi) != dim:
            raise UsageError(f"point of dimension {len(xi)} for a system of dimension {dim}")
    return pts


# ---------------------------------------------------------------------------
# steps

class Context:
    """Shared state for one run; the pipeline reuses certificates across steps."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.sys = load_system(args.system)
        self.pert = load_perturbation(getattr(args, "perturbation", None), self.sys.dim)
        self.transform = None
        if getattr(args, "transform", None):
            self.transform = kinematics.KinematicTransform.from_json(_read_json(args.transform))
            if self.transform.dim != self.sys.dim:
                raise UsageError("transform dimension does not match the system")
        self._samples = None
        self._cert = None

    def samples(self):
        if self._samples is None:
            a = self.args
            self._samples = dichotomy.EvolutionSamples(self.sys, a.t_max, a.samples, tol=a.tol)
        return self._samples

    def cert(self) -> dichotomy.ContractionCertificate:
        if self._cert is None:
            path = getattr(self.args, "cert", None)
            if path:
                self._cert = dichotomy.ContractionCertificate.from_json(_read_json(path)["contraction"])
            else:
                self._cert = dichotomy.fit_contraction(self.samples())
        return self._cert


def run_certify(ctx: Context) -> str:
    cert = dichotomy.fit_contraction(ctx.samples())
    ctx._cert = cert
    growth = dichotomy.fit_bounded_growth(ctx.samples())
    coeff = dichotomy.check_coefficient_bound(ctx.sys, ctx.args.t_max)
    write_json(ctx.out / "cert.json", {
        "contraction": cert.to_json(),
        "growth": {"K0": growth.K0, "a": growth.a, "eps_bar": growth.eps_bar,
                   "residual": growth.residual, "grid": growth.grid},
        "coefficient_bound": {"M": coeff.M, "nu": coeff.nu, "max_violation": coeff.max_violation,
                              "fit_residual": coeff.fit_residual},
        "note": dichotomy.FINITE_WINDOW_NOTE,
    })
    log.info("contraction K=%s alpha=%s mu=%s", f17(cert.K), f17(cert.alpha), f17(cert.mu))
    return f"certify: K={cert.K:.6g} alpha={cert.alpha:.6g} mu={cert.mu:.6g}"


def _projectors(spec):
    if not spec:
        return None
    out = []
    for item in spec:
        item = item.strip()
        out.append([] if item in ("", "-") else [int(v) for v in item.split(",")])
    return out


def run_spectrum(ctx: Context) -> str:
    a = ctx.args
    try:
        grid_ok = dichotomy.lambda_grid(a.lambda_min, a.lambda_max, a.step)
    except ValueError as err:
        raise UsageError(str(err)) from None
    del grid_ok
    est = dichotomy.estimate_spectrum(ctx.samples(), a.lambda_min, a.lambda_max, a.step,
                                      projectors=_projectors(a.projector))
    (ctx.out / "spectrum.csv").write_text(est.to_csv())
    write_json(ctx.out / "intervals.json", est.to_json())
    if est.touches_zero:
        log.warning("a spectral interval reaches lambda >= 0")
    if len(est.intervals) > ctx.sys.dim:
        log.warning("found %d intervals for dimension %d", len(est.intervals), ctx.sys.dim)
    txt = " ".join(f"[{lo:.6g},{hi:.6g}]" for lo, hi in est.intervals) or "none"
    return f"spectrum: {len(est.intervals)} interval(s) {txt} (+/- {a.step:g})"


def _build_V(ctx: Context, kind: str):
    cert = ctx.cert()
    alpha_V = ctx.args.alpha_v if ctx.args.alpha_v is not None else cert.alpha / 2
    if kind == "strict":
        return lyapunov.build_strict(cert, ctx.sys, alpha_V)
    return lyapunov.build_quadratic(cert, ctx.sys, alpha_V, window=ctx.args.t_max)


def run_lyapunov(ctx: Context) -> str:
    a = ctx.args
    V = _build_V(ctx, a.kind)
    rng = np.random.default_rng(a.seed)
    samples = lyapunov.random_samples(a.n_points, ctx.sys.dim, min(a.t_max, 10.0), rng)
    reports = lyapunov.verify_axioms(V, ctx.sys, samples)
    out = {"kind": a.kind, "alpha_V": V.alpha_V, "gamma": V.gamma, "eta": 1.0,
           "axioms": [r.to_json() for r in reports]}
    if a.kind == "quadratic":
        out["operator"] = V.operator_report(np.linspace(0.0, min(a.t_max, 10.0), 21)[1:])
    write_json(ctx.out / "lyapunov.json", out)
    ok = all(r.passed for r in reports)
    return f"lyapunov: {a.kind} V axioms {'pass' if ok else 'FAIL'}"


def _in_new_coords(ctx: Context):
    if ctx.transform is None:
        return ctx.sys, ctx.pert
    return (kinematics.transform_linear(ctx.sys, ctx.transform),
            kinematics.transform_nonlinearity(ctx.pert, ctx.transform))


def _make_hom(ctx: Context, method: str):
    lin, pert = _in_new_coords(ctx)
    cert = ctx.cert() if ctx.transform is None else dichotomy.fit_contraction(
        lin, ctx.args.t_max, ctx.args.samples, tol=ctx.args.tol)
    if method == "picard":
        return palmer_lin.PLHomeomorphism(lin, pert, cert)
    alpha_V = ctx.args.alpha_v if ctx.args.alpha_v is not None else cert.alpha / 2
    V = lyapunov.build_quadratic(cert, lin, alpha_V, window=ctx.args.t_max)
    return crossing.CrossingHomeomorphism(V, lin, pert, crossing.CrossingConfig(level=ctx.args.level))


def _map_point(ctx, hom, method, tau, xi):
    T = ctx.transform
    y = xi if T is None else T.S_inv(tau) @ xi
    if method == "picard":
        sol = hom.picard_Z(tau, y, tau)
        h = y + sol(tau)
        extra = [sol.iterations, sol.residual]
    else:
        try:
            h, Tc = hom.H_with_time(tau, y)
        except (crossing.OutOfDomainError, crossing.NonMonotoneError) as err:
            log.warning("tau=%s xi=%s: %s", tau, xi.tolist(), err)
            h, Tc = np.full_like(y, math.nan), math.nan
        extra = [Tc]
    if T is not None:
        h = T.S(tau) @ h
    return h, extra


def run_linearize(ctx: Context) -> str:
    a = ctx.args
    hom = _make_hom(ctx, a.method)
    pts = load_points(a.points, ctx.sys.dim, a.seed, a.n_points)
    rows = []
    for tau, xi in pts:
        h, extra = _map_point(ctx, hom, a.method, tau, xi)
        rows.append((tau, xi, h, *extra))
    cols = ("iterations", "residual") if a.method == "picard" else ("T",)
    (ctx.out / "mapped.csv").write_text(crossing.write_points(rows, ctx.sys.dim, cols))
    report = _verify(ctx, hom, a.method, pts)
    write_json(ctx.out / "verify.json", report)
    return f"linearize: {len(rows)} point(s) mapped with {a.method}"


def _verify(ctx: Context, hom, method: str, pts) -> dict:
    if ctx.transform is not None:
        pts = [(tau, ctx.transform.S_inv(tau) @ xi) for tau, xi in pts]
    pts = pts[: ctx.args.verify_points]
    if method == "picard":
        rep = palmer_lin.verify_pl_equivalence(hom, pts)
    else:
        cert = hom.V.cert
        rep = crossing.verify_crossing_equivalence(hom, pts, rates=(cert.alpha, cert.mu))
    rep["method"] = method
    rep["coordinates"] = "transformed" if ctx.transform is not None else "original"
    return rep


def run_verify(ctx: Context) -> str:
    a = ctx.args
    hom = _make_hom(ctx, a.method)
    pts = load_points(a.points, ctx.sys.dim, a.seed, a.n_points)
    rep = _verify(ctx, hom, a.method, pts)
    if ctx.transform is not None:
        rep["lipschitz_transfer"] = kinematics.verify_lipschitz_transfer(
            kinematics.transform_nonlinearity(ctx.pert, ctx.transform), ctx.pert, ctx.transform,
            rng=np.random.default_rng(a.seed))
    write_json(ctx.out / "verify.json", rep)
    return f"verify: {a.method} inverse residual {rep['inverse_max']:.3g}"


def run_pipeline(ctx: Context) -> str:
    parts = [run_certify(ctx), run_spectrum(ctx), run_lyapunov(ctx), run_linearize(ctx)]
    for p in parts[:-1]:
        log.info(p)
    return "pipeline: " + "; ".join(p.split(":", 1)[0] + " ok" for p in parts)


# ---------------------------------------------------------------------------
# argument parsing

def _positive(x: str) -> float:
    v = float(x)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {x}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nonautlin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--system", required=True, help="system JSON")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--t-max", type=_positive, default=20.0, help="sample window [0, t_max]")
    common.add_argument("--samples", type=int, default=40, help="base times in the sample grid")
    common.add_argument("--tol", type=_positive, default=1e-9, help="integrator tolerance")
    common.add_argument("--seed", type=int, default=0, help="seed for generated samples")
    common.add_argument("-v", "--verbose", action="store_true")

    spec = argparse.ArgumentParser(add_help=False)
    spec.add_argument("--lambda-min", type=float, default=-5.0)
    spec.add_argument("--lambda-max", type=float, default=0.0)
    spec.add_argument("--step", type=float, default=0.05)
    spec.add_argument("--projector", action="append",
                      help="stable coordinates, comma separated (repeatable); for non-diagonal systems")

    lyap = argparse.ArgumentParser(add_help=False)
    lyap.add_argument("--kind", choices=("strict", "quadratic"), default="quadratic")
    lyap.add_argument("--alpha-v", type=_positive, default=None, help="Lyapunov rate (default alpha/2)")
    lyap.add_argument("--cert", help="reuse a cert.json instead of fitting")

    lin = argparse.ArgumentParser(add_help=False)
    lin.add_argument("--perturbation", help="perturbation JSON (default f = 0)")
    lin.add_argument("--transform", help="kinematic transform JSON")
    lin.add_argument("--method", choices=("crossing", "picard"), default="crossing")
    lin.add_argument("--points", help="CSV rows tau, xi_1..xi_n (default: generated)")
    lin.add_argument("--n-points", type=int, default=8)
    lin.add_argument("--verify-points", type=int, default=2, help="points used by the residual suite")
    lin.add_argument("--level", type=_positive, default=1.0, help="Lyapunov level for crossing times")

    sub.add_parser("certify", parents=[common], help="fit growth and contraction bounds")
    sub.add_parser("spectrum", parents=[common, spec], help="scan shifted systems for dichotomies")
    sp = sub.add_parser("lyapunov", parents=[common, lyap], help="build V and check its axioms")
    sp.add_argument("--n-points", type=int, default=1000)
    sub.add_parser("linearize", parents=[common, lyap, lin], help="map points through H")
    sub.add_parser("verify", parents=[common, lyap, lin], help="run the conjugacy residual suite")
    sub.add_parser("pipeline", parents=[common, spec, lyap, lin], help="all steps in order")
    return p


STEPS = {"certify": run_certify, "spectrum": run_spectrum, "lyapunov": run_lyapunov,
         "linearize": run_linearize, "verify": run_verify, "pipeline": run_pipeline}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        ctx = Context(args)
        summary = STEPS[args.command](ctx)
    except (UsageError, SystemSpecError, ExprError, ValueError) as err:
        if isinstance(err, (dichotomy.NotCertifiable, palmer_lin.ContractionRatioError)):
            code = EXIT_NOT_CERTIFIABLE if isinstance(err, dichotomy.NotCertifiable) else EXIT_RATIO
        else:
            code = EXIT_USAGE
        print(f"error: {err}", file=sys.stderr)
        return code
    except IntegrationError as err:
        print(f"error: integration failed: {err}", file=sys.stderr)
        return 1
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
