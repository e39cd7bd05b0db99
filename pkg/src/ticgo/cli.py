"""Command-line driver: verification suites, forward synthesis, reconstruction, reports.

Exit codes: 0 pass, 1 check failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .cgo import PAIR_KINDS, CgoError, EvanescentError, PairConfig, make_pair, relative_residual, \
    tamper
from .config import ConfigError, ExperimentConfig
from .dn_form import QuadratureSpec, bilinear_form, box_transform, constant_oracle
from .elastic_tensors import IsotropicBackground, SpatialGrid
from .freq_algebra import (COMPONENTS, TERM_COMPONENT, linrel_matrix, listed_coefficients,
                           pair_product_expansion, r2_split, r4_reduction)
from .io import read_bundle, read_field, write_bundle, write_field, write_json
from .phantoms import Bump, constant_density_field, constant_ti_field, isotropic_field
from .recon import field_errors, forward, pair_coefficients, plan_frequencies, reconstruct

log = logging.getLogger("ticgo")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CGO_TOL = 1e-9

CONST_P = np.array([1.0, 0.6, 0.8, 0.5, 1.2])
CONST_RHO = np.array([0.7, 0.9])


class UsageError(Exception):
    pass


# ------------------------------------------------------------ helpers

def _random_node(rng, scale=6.0):
    s = rng.uniform(0.2, scale)
    t = rng.uniform(-scale, scale)
    phi = rng.uniform(0, 2 * np.pi)
    d = np.hypot(s, t)
    r = rng.uniform(d + 0.5, 3 * d + 3)
    return s, t, phi, r


def _box_points(rng, grid: SpatialGrid, n: int):
    lo = np.asarray(grid.center) - np.asarray(grid.half_widths)
    return lo + rng.random((n, 3)) * 2 * np.asarray(grid.half_widths)


def _rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    sc = np.max(np.abs(b))
    return float(np.max(np.abs(a - b)) / sc) if sc > 0 else float(np.max(np.abs(a - b)))


def _row(identity, anchor, deviation, tol):
    return {"identity": identity, "anchor": anchor, "deviation": float(deviation),
            "tol": tol, "pass": bool(deviation <= tol)}


# ------------------------------------------------------------ commands

def cmd_verify_cgo(cfg: ExperimentConfig, out: Path, seed: int, tamper_c: bool = False) -> int:
    """Navier residuals of every pair family over a node sample."""
    rng = np.random.default_rng(seed)
    bg0 = cfg.background()
    grid = cfg.grid()
    pts = _box_points(rng, grid, cfg.verify_points)
    omegas = sorted({0.0, *cfg.omegas, 1.0, 2.0})
    rows, ok = [], True
    for kind in PAIR_KINDS:
        for w in omegas:
            if kind in ("C_affine_right", "D_affine_both") and w > 0:
                continue
            worst, used, skipped = 0.0, 0, 0
            for _ in range(cfg.verify_nodes):
                s, t, phi, r = _random_node(rng)
                if w > 0 and rng.random() < 0.2:
                    s, t = 0.1 * s, 0.1 * t  # exercise the evanescent guard
                try:
                    u, v = make_pair(PairConfig(s, t, phi, r, kind, w), bg0)
                except EvanescentError:
                    skipped += 1
                    continue
                if tamper_c:
                    v = tamper(v)
                worst = max(worst, relative_residual(u, pts), relative_residual(v, pts))
                used += 1
            passed = worst <= CGO_TOL
            ok &= passed
            rows.append({"kind": kind, "omega": w, "max_rel_residual": worst, "nodes": used,
                         "skipped_evanescent": skipped, "tol": CGO_TOL, "pass": passed,
                         "anchor": "Navier system solved by each pair member"})
    write_json({"check": "verify-cgo", "seed": seed, "tampered": tamper_c, "rows": rows,
                "pass": ok}, out / "verify_cgo.json")
    for r in rows:
        log.info("%-15s omega=%-4g max residual %.2e  %s", r["kind"], r["omega"],
                 r["max_rel_residual"], "ok" if r["pass"] else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


def identity_rows(cfg: ExperimentConfig, seed: int) -> List[dict]:
    """Constructive checks of the pair identities (oracle, quadrature, series)."""
    rng = np.random.default_rng(seed)
    bg = cfg.background()
    grid = cfg.grid()
    # node samples stay below |xi| = 12, well inside the 16-point cap
    quad = QuadratureSpec(points=16)
    dC = constant_ti_field(grid, CONST_P)
    dR = constant_density_field(grid, CONST_RHO)
    rows = []
    nodes = [_random_node(rng, 3.0) for _ in range(cfg.verify_nodes)]
    w_pos = [w for w in cfg.omegas if w > 0] or [1.0, 2.0]

    dev = 0.0
    for s, t, phi, r in nodes:
        for kind in PAIR_KINDS:
            for w in ([0.0] if kind in ("C_affine_right", "D_affine_both") else [0.0] + w_pos):
                try:
                    u, v = make_pair(PairConfig(s, t, phi, r, kind, w), bg)
                except EvanescentError:
                    continue
                o = constant_oracle(CONST_P, CONST_RHO, u, v, grid)
                q = bilinear_form(dC, dR, u, v, quad, grid)
                dev = max(dev, abs(q - o) / max(abs(o), 1e-300))
    rows.append(_row("quadrature equals constant oracle", "linearized data functional", dev, 1e-6))

    c1212 = 0.5 * (CONST_P[0] - CONST_P[1])
    g2 = CONST_P[0] - 2 * CONST_P[2] + CONST_P[4] + 4 * CONST_P[3]
    devA = devB = 0.0
    for s, t, phi, _ in nodes:
        d2 = s * s + t * t
        F = box_transform(PairConfig(s, t, phi).xi, grid)
        u, v = make_pair(PairConfig(s, t, phi, 0, "A_shear"), bg)
        devA = max(devA, _rel(bilinear_form(dC, None, u, v, quad, grid),
                              -d2 * (c1212 + CONST_P[3]) * F))
        u, v = make_pair(PairConfig(s, t, phi, 0, "B_gradient"), bg)
        devB = max(devB, _rel(bilinear_form(dC, None, u, v, quad, grid), d2 * d2 * g2 * F))
    rows.append(_row("shear pair gives -(s^2+t^2)(C1212+C1313)", "step 1: shear pair", devA, 1e-6))
    rows.append(_row("gradient pair at r=0 gives (s^2+t^2)^2 (m2+4 C1313)",
                     "step 2: degenerate gradient pair", devB, 1e-6))

    dev4 = dev2 = devL = 0.0
    for s, t, _, _ in nodes:
        d2 = s * s + t * t
        dev4 = max(dev4, _rel(r4_reduction(s, t, 0.0, bg),
                              s**4 / d2**2 * np.array([1, 0, -2, -4, 1])))
        _, B = r2_split(s, t, bg)
        dev2 = max(dev2, _rel((linrel_matrix() @ B).real, 2 * s * s * np.array([1, -2, 2, 0, -1])))
        for w in [0.0] + w_pos:
            b = bg.with_omega(w)
            terms = pair_product_expansion("B_gradient", s, t, w, bg)
            ref = listed_coefficients(s, t, np.sqrt(b.kp2))
            for name, ser in terms.items():
                j = COMPONENTS.index(TERM_COMPONENT[name])
                for p in (4, 2):
                    if p in ref[name]:
                        devL = max(devL, abs(ser.coefficient(p)[j] - ref[name][p])
                                   / max(1.0, abs(ref[name][p])))
    rows.append(_row("r^4 coefficient reduces to s^4/d^4 (1,0,-2,-4,1)",
                     "step 3: leading order of the gradient pair", dev4, 1e-12))
    rows.append(_row("zero-frequency r^2 coefficient reduces to 2 s^2 (1,-2,2,0,-1)",
                     "positive-frequency step 2: subleading order", dev2, 1e-12))
    rows.append(_row("listed r^4 and r^2 coefficients", "expansion of the gradient-pair integrand",
                     devL, 1e-12))

    devC = devD = devDq = 0.0
    for s, t, phi, r in nodes:
        cfgC = PairConfig(s, t, phi, r, "C_affine_right")
        c, _ = pair_coefficients(cfgC, bg)
        beta = np.sqrt(r * r / (s * s + t * t) - 1)
        devC = max(devC, _rel(c[0, 3], bg.mu0 * (t + beta * s) ** 2))
        cfgD = PairConfig(s, t, phi, 0, "D_affine_both")
        c, _ = pair_coefficients(cfgD, bg)
        devD = max(devD, _rel(c[:, 4], [bg.mu0**2, 0, 0]))
        u, v = make_pair(cfgD, bg)
        devDq = max(devDq, _rel(bilinear_form(dC, None, u, v, quad, grid),
                                constant_oracle(CONST_P, None, u, v, grid)))
    rows.append(_row("affine pair weight of C1133-C1111 is mu0 (t+beta s)^2",
                     "step 4: transverse isotropy", devC, 1e-10))
    rows.append(_row("both-affine weight of C1111 is mu0^2", "step 5: divergence product",
                     devD, 1e-12))
    rows.append(_row("both-affine quadrature equals oracle", "step 5: divergence product",
                     devDq, 1e-6))

    devS = 0.0
    for s, t, phi, _ in nodes:
        ws = [1.0, 2.0, 3.0]
        try:
            vals = [pair_coefficients(PairConfig(s + 3, t, phi, 0, "A_shear", w), bg)[0][0]
                    for w in ws]
        except EvanescentError:
            continue
        A = (vals[1] - vals[0]) / (ws[1] ** 2 - ws[0] ** 2)
        devS = max(devS, _rel(vals[0] + A * (ws[2] ** 2 - ws[0] ** 2), vals[2]))
    rows.append(_row("shear-pair data are affine in omega^2", "two-part separation of the shear "
                     "pair", devS, 1e-10))

    # isotropic phantoms differing only in lambda
    lam1 = Bump(0.8, (0.02, -0.03, 0.01), (0.4, 0.4, 0.4))
    lam2 = Bump(-1.3, (-0.05, 0.04, 0.02), (0.38, 0.4, 0.36))
    mu = Bump(0.5, (0.0, 0.03, -0.02), (0.4, 0.38, 0.4))
    f1 = isotropic_field(grid, lam1, mu)
    f2 = isotropic_field(grid, lam2, mu)
    devI = 0.0
    for s, t, phi, _ in nodes:
        for kind in ("A_shear", "E_theta"):
            for w in [0.0] + w_pos:
                try:
                    u, v = make_pair(PairConfig(s + 2.5, t, phi, 0, kind, w), bg)
                except EvanescentError:
                    continue
                a = bilinear_form(f1, None, u, v, quad, grid)
                b = bilinear_form(f2, None, u, v, quad, grid)
                devI = max(devI, abs(a - b) / max(abs(a), abs(b), 1e-300))
    rows.append(_row("divergence-free pairs do not see lambda", "isotropic remark", devI, 1e-10))

    devZ = 0.0
    zero = constant_ti_field(grid, np.zeros(5))
    for s, t, phi, r in nodes[:5]:
        for kind in PAIR_KINDS:
            u, v = make_pair(PairConfig(s, t, phi, r, kind), bg)
            devZ = max(devZ, abs(bilinear_form(zero, None, u, v, quad, grid)))
    rows.append(_row("zero phantom gives zero data", "injectivity at zero", devZ, 0.0))
    return rows


def cmd_verify_identities(cfg: ExperimentConfig, out: Path, seed: int) -> int:
    rows = identity_rows(cfg, seed)
    ok = all(r["pass"] for r in rows)
    write_json({"check": "verify-identities", "seed": seed, "rows": rows, "pass": ok},
               out / "verify_identities.json")
    for r in rows:
        log.info("%-62s %.2e  %s", r["identity"], r["deviation"], "ok" if r["pass"] else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


def _plan(cfg: ExperimentConfig):
    omegas = [0.0] if cfg.omegas == [0.0] or cfg.omegas == [0] else cfg.omegas
    try:
        return plan_frequencies(cfg.grid(), omegas, cfg.background(), cfg.quadrature(),
                                cfg.r_sweep, cfg.r_near, cfg.eta)
    except ValueError as exc:
        raise UsageError(f"invalid frequency plan: {exc}") from exc


def cmd_forward(cfg: ExperimentConfig, out: Path, workers: Optional[int]) -> int:
    grid = cfg.grid()
    spec = cfg.phantom_spec()
    dC = spec.stiffness_field(grid)
    dR = spec.density_field(grid) if max(cfg.omegas) > 0 else None
    plan = _plan(cfg)
    data = forward(dC, dR, plan, workers=workers)
    meta = {"grid": grid.to_dict(), "omegas": list(plan.omegas), "config": cfg.to_dict(),
            "configs": len(data)}
    write_bundle(data, out / "data.jsonl", meta)
    write_field(dC, out / "truth_stiffness")
    if dR is not None:
        write_field(dR, out / "truth_density")
    failed = sum(not v.ok for v in data)
    log.info("wrote %d values (%d failed) to %s", len(data), failed, out / "data.jsonl")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_reconstruct(cfg: ExperimentConfig, out: Path, workers: Optional[int],
                    data_path: Optional[str] = None) -> int:
    path = Path(data_path) if data_path else out / "data.jsonl"
    if not path.exists():
        raise UsageError(f"no data bundle at {path}")
    meta, data = read_bundle(path)
    plan = _plan(cfg)
    if meta is not None:
        if meta.get("grid") != cfg.grid().to_dict():
            raise UsageError("data bundle grid does not match the config grid")
        if [float(w) for w in meta.get("omegas", [])] != list(plan.omegas):
            raise UsageError("data bundle frequencies do not match the config")
    try:
        dC, dR, diag = reconstruct(data, plan, workers=workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    diag.pop("combo_grid", None)
    write_field(dC, out / "recon_stiffness")
    if dR is not None:
        write_field(dR, out / "recon_density")
    write_json(diag, out / "diagnostics.json")
    log.info("flagged fraction %.3f, masked fraction %.3f", diag["flagged_fraction"],
             diag["plan"]["masked_fraction"])
    return EXIT_FAIL if diag["low_confidence"] else EXIT_OK


def cmd_report(out: Path, truth: Optional[str], fields: Optional[str],
               tol: Optional[float] = None) -> int:
    pairs = []
    if truth or fields:
        if not (truth and fields):
            raise UsageError("--truth and --fields go together")
        pairs.append((Path(truth), Path(fields)))
    else:
        for kind in ("stiffness", "density"):
            t, f = out / f"truth_{kind}.json", out / f"recon_{kind}.json"
            if t.exists() and f.exists():
                pairs.append((t, f))
    if not pairs:
        raise UsageError("nothing to report: no truth/reconstruction field files")
    table = {}
    for t, f in pairs:
        try:
            a, b = read_field(t), read_field(f)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read fields: {exc}") from exc
        if a.grid != b.grid:
            raise UsageError("truth and reconstruction grids differ")
        if type(a) is not type(b):
            raise UsageError("truth and reconstruction are different field kinds")
        table.update(field_errors(a, b))
    report = {"errors": table}
    diag_path = out / "diagnostics.json"
    if diag_path.exists():
        d = json.loads(diag_path.read_text())
        report["stage_residuals"] = {k: d[k] for k in ("cond", "consistency", "stage4_residual",
                                                       "density_residual") if k in d}
    write_json(report, out / "errors.json")
    with (out / "errors.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "rel_l2", "rel_linf"])
        for name, e in table.items():
            w.writerow([name, f"{e['rel_l2']:.10e}", f"{e['rel_linf']:.10e}"])
    for name, e in table.items():
        log.info("%-6s rel L2 %.3e  rel Linf %.3e", name, e["rel_l2"], e["rel_linf"])
    if tol is not None and any(e["rel_l2"] > tol for e in table.values()):
        return EXIT_FAIL
    return EXIT_OK


# ------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ticgo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON file (defaults if omitted)")
    common.add_argument("--out", help="output directory (overrides config and $TICGO_OUT)")
    common.add_argument("--workers", type=int, default=None,
                        help="worker count (default: available cores)")
    common.add_argument("--seed", type=int, default=None, help="random seed override")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    vc = sub.add_parser("verify-cgo", parents=[common], help="Navier residuals of all families")
    vc.add_argument("--debug-tamper", action="store_true",
                    help="corrupt the second solution of each pair (fault injection)")
    sub.add_parser("verify-identities", parents=[common], help="pair identity suite")
    sub.add_parser("forward", parents=[common], help="synthesize the data bundle")
    rc = sub.add_parser("reconstruct", parents=[common], help="invert a data bundle")
    rc.add_argument("--data", help="data bundle (default OUT/data.jsonl)")
    rp = sub.add_parser("report", parents=[common], help="error tables against ground truth")
    rp.add_argument("--truth", help="truth field header (.json)")
    rp.add_argument("--fields", help="reconstructed field header (.json)")
    rp.add_argument("--tol", type=float, default=None, help="fail when a relative L2 exceeds this")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None and args.workers < 1:
            raise UsageError("--workers must be positive")
        workers = args.workers or os.cpu_count() or 1
        out = cfg.out_dir(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "verify-cgo":
            return cmd_verify_cgo(cfg, out, cfg.seed, args.debug_tamper)
        if args.command == "verify-identities":
            return cmd_verify_identities(cfg, out, cfg.seed)
        if args.command == "forward":
            return cmd_forward(cfg, out, workers)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, out, workers, args.data)
        return cmd_report(out, args.truth, args.fields, args.tol)
    except (ConfigError, UsageError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
