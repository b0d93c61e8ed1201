"""Experiment implementations behind the CLI.

Each runner takes the validated configuration and returns results, a list of
pass/warn/fail checks, CSV tables, and deferred figure painters.  Every
numeric tolerance actually used is recorded so reports are self-describing.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import reporting
from ._solve import as_dense, spectral_norm
from .errors import ArgumentError, PreconditionError
from .exterior import FiberLayout
from .funcalc import (ContourSpec, Sector, contour_calculus, default_tau_samples,
                      eigen_oracle, exp_decay, rational_psi, sector_probe,
                      sgn_function, sqrt_square, xi_minus, xi_plus)
from .gridops import (DiracTriple, GridSpec, LinearOperator, build_block_triple,
                      build_pi_b, central_difference, flat_triple, grad_operator,
                      multiplier_matrix, orthonormal_range, random_accretive_field,
                      random_triple, validate_hypotheses)
from .hodge import (direct_projections, limit_projections,
                    projection_derivative_check, ptilde)
from .io import import_matrix_market, field_from_block_diagonal, matrix_field_from_csv
from .quadest import (DyadicSystem, TGrid, carleson_embedding_probe, carleson_norm,
                      off_diag_probe, quad_functional, quad_ratio,
                      resolution_identity_check)
from . import apps


def psi_registry():
    return {
        "z/(1+z^2)": lambda: rational_psi([0, 1], [1, 0, 1], label="z/(1+z^2)"),
        "z^2/(1+z^2)^2": lambda: rational_psi([0, 0, 1], [1, 0, 2, 0, 1],
                                              label="z^2/(1+z^2)^2"),
        "z^3/(1+z^2)^2": lambda: rational_psi([0, 0, 0, 1], [1, 0, 2, 0, 1],
                                              label="z^3/(1+z^2)^2"),
        "z/(1+z^2)^2": lambda: rational_psi([0, 1], [1, 0, 2, 0, 1],
                                            label="z/(1+z^2)^2"),
        "expdecay": exp_decay,
    }


def bounded_function(name: str):
    table = {"sgn": sgn_function, "xiPlus": xi_plus, "xiMinus": xi_minus,
             "sqrtSquare": sqrt_square, "expDecay": exp_decay}
    if name not in table:
        raise ArgumentError(f"unknown function {name!r}")
    return table[name]()


@dataclass
class ExperimentOutput:
    results: dict
    checks: list
    tolerances: dict
    csvs: list = dc_field(default_factory=list)     # (name, header, rows)
    figures: list = dc_field(default_factory=list)  # callables out_dir -> path


def check(name: str, ok: bool, value, threshold=None, warn_only: bool = False) -> dict:
    status = "pass" if ok else ("warn" if warn_only else "fail")
    entry = {"name": name, "status": status, "value": value}
    if threshold is not None:
        entry["threshold"] = threshold
    return entry


@dataclass
class TripleSpec:
    triple: DiracTriple
    kind: str
    block: object = None   # BlockTriple when kind == "block"


def build_triple_from_config(config: dict) -> TripleSpec:
    grid = GridSpec(**config["grid"])
    spec = config.get("triple", {"kind": "flat"})
    kind = spec["kind"]
    if kind == "flat":
        return TripleSpec(flat_triple(grid), kind)
    if kind == "randomAccretive":
        omega = spec.get("omega", 0.6)
        seed = spec.get("seed", config.get("seed", 0))
        return TripleSpec(random_triple(grid, omega, seed,
                                        mode=spec.get("mode", "inverse_pair")), kind)
    if kind == "block":
        d_name = spec.get("d", "grad")
        if d_name == "grad":
            d = grad_operator(grid, FiberLayout(grid.n, 1))
        else:
            if grid.n != 1:
                raise PreconditionError("the central-difference derivative is 1D only")
            d = LinearOperator(grid, FiberLayout(1, 1), FiberLayout(1, 1),
                               central_difference(grid), tag="Generic")
        d1 = d.domain.fiber_dim
        d2 = d.codomain.fiber_dim
        if "a1_csv" in spec:
            a1 = matrix_field_from_csv(spec["a1_csv"], grid, d1)
        else:
            a1 = np.tile(np.eye(d1, dtype=complex), (grid.npoints, 1, 1))
        if "a2_csv" in spec:
            a2 = matrix_field_from_csv(spec["a2_csv"], grid, d2)
        elif "omega" in spec:
            a2 = random_accretive_field(grid, FiberLayout(grid.n, d2), spec["omega"],
                                        spec.get("seed", config.get("seed", 0)))
        else:
            a2 = np.tile(np.eye(d2, dtype=complex), (grid.npoints, 1, 1))
        block = build_block_triple(d, a1, a2)
        return TripleSpec(block.triple, kind, block=block)
    if kind == "file":
        gamma_mat = import_matrix_market(spec["gamma_mm"])
        if gamma_mat.shape[0] % grid.npoints:
            raise ArgumentError("operator size is not a multiple of the point count")
        fd = gamma_mat.shape[0] // grid.npoints
        layout = FiberLayout(grid.n, fd)
        gamma = LinearOperator(grid, layout, layout, gamma_mat, tag="Gamma")
        b1 = field_from_block_diagonal(import_matrix_market(spec["b1_mm"]),
                                       grid.npoints, fd)
        b2 = field_from_block_diagonal(import_matrix_market(spec["b2_mm"]),
                                       grid.npoints, fd)
        return TripleSpec(build_pi_b(gamma, b1, b2, label="file"), kind)
    raise ArgumentError(f"unknown triple kind {kind!r}")


def tgrid_from_config(config: dict, triple: DiracTriple) -> TGrid:
    spec = config.get("tgrid")
    if spec is None:
        return TGrid.default(triple)
    norm = triple.norm_estimate()
    return TGrid(spec.get("t_min", 1e-4 / norm), spec.get("t_max", 1e4 / norm),
                 spec.get("count", 400))


def _tol(config, name, default):
    return float(config.get("tolerances", {}).get(name, default))


# ---------------------------------------------------------------------------


def run_validate(config) -> ExperimentOutput:
    ts = build_triple_from_config(config)
    triple = ts.triple
    rep = validate_hypotheses(triple, sample_count=config.get("params", {})
                              .get("u_count", 20), seed=config.get("seed", 0))
    gam_norm = spectral_norm(triple.gamma_mat)
    tol_nilp = _tol(config, "nilpotency", 1e-13)
    tol_cancel = _tol(config, "cancellation", 1e-12)
    tol_h3 = _tol(config, "h3", 1e-8)
    h3_scale = gam_norm**2 * max(spectral_norm(triple.b1_mat), 1.0) \
        * max(spectral_norm(triple.b2_mat), 1.0)
    checks = [
        check("nilpotency", rep.nilpotency_residual <= tol_nilp * gam_norm**2,
              rep.nilpotency_residual, tol_nilp * gam_norm**2),
        check("cancellation", rep.cancellation_residual <= tol_cancel,
              rep.cancellation_residual, tol_cancel),
        check("localisation", rep.localisation_bound <= 2.0,
              rep.localisation_bound, 2.0),
        check("accretivity-kappa1", rep.kappa1 > 0, rep.kappa1, 0.0),
        check("accretivity-kappa2", rep.kappa2 > 0, rep.kappa2, 0.0),
        check("h3", max(rep.h3_residuals) <= tol_h3 * h3_scale,
              max(rep.h3_residuals), tol_h3 * h3_scale,
              warn_only=ts.kind == "independent"),
    ]
    lam = np.linalg.eigvals(as_dense(triple.pi_b))
    order = np.argsort(lam.real + 1e-9 * lam.imag)
    lam = lam[order]
    csvs = [("eigenvalues.csv", ["re", "im"], [(z.real, z.imag) for z in lam])]
    omega = rep.omega if np.isfinite(rep.omega) else 0.0
    figures = [lambda out: reporting.figure_spectrum(
        out, "spectrum.png", lam, omega, title="spectrum of Pi_B")]
    return ExperimentOutput(results={"hypotheses": rep.to_dict(),
                                     "gammaNorm": gam_norm},
                            checks=checks,
                            tolerances={"nilpotency": tol_nilp,
                                        "cancellation": tol_cancel, "h3": tol_h3},
                            csvs=csvs, figures=figures)


def run_sector(config) -> ExperimentOutput:
    ts = build_triple_from_config(config)
    triple = ts.triple
    sector_cfg = config.get("sector", {})
    if "omega" in sector_cfg:
        omega = float(sector_cfg["omega"])
    else:
        rep = validate_hypotheses(triple, sample_count=1, seed=0)
        omega = min(rep.omega, np.pi / 2 - 1e-6) if np.isfinite(rep.omega) else 0.0
    taus = default_tau_samples(omega, triple.norm_estimate())
    probe = sector_probe(triple, omega, taus)
    tol_c = _tol(config, "sector_constant", 1e4)
    checks = [
        check("resolvent-constant-finite", probe.constant < tol_c,
              probe.constant, tol_c),
        check("spectrum-in-sector", True, probe.max_angle_excess, 0.0),
    ]
    rows = [(s["tau"].real, s["tau"].imag, abs(s["tau"]),
             float(np.angle(s["tau"])), s["norm"], s["ratio"])
            for s in probe.samples]
    csvs = [("sector_probe.csv",
             ["re_tau", "im_tau", "abs_tau", "arg_tau", "resolvent_norm", "ratio"],
             rows)]
    series = {"ratio": [(r[3], r[5]) for r in rows]}
    figures = [lambda out: reporting.figure_series(
        out, "sector_probe.png", series, "arg tau", "ratio",
        "resolvent bound probe")]
    return ExperimentOutput(results={"omega": omega, "constant": probe.constant,
                                     "maxAngleExcess": probe.max_angle_excess},
                            checks=checks, tolerances={"sector_constant": tol_c},
                            csvs=csvs, figures=figures)


def run_funcalc(config) -> ExperimentOutput:
    ts = build_triple_from_config(config)
    triple = ts.triple
    registry = psi_registry()
    names = config.get("params", {}).get("psis", list(registry))
    psis = []
    for name in names:
        if name not in registry:
            raise ArgumentError(f"unknown Psi function {name!r}")
        psis.append(registry[name]())
    rep = validate_hypotheses(triple, sample_count=1, seed=0)
    omega = min(rep.omega if np.isfinite(rep.omega) else 0.0, np.pi / 2 - 1e-3)
    sector_cfg = config.get("sector", {})
    mu = sector_cfg.get("mu", omega + 0.5 * (np.pi / 2 - omega))
    sector = Sector(sector_cfg.get("omega", omega), mu)
    scale = triple.norm_estimate()
    ccfg = config.get("contour", {})
    contour = ContourSpec(theta=ccfg.get("theta", 0.5 * (sector.omega + sector.mu)),
                          r_min=ccfg.get("r_min", 1e-7 * scale),
                          r_max=ccfg.get("r_max", 1e7 * scale),
                          nodes_per_ray=ccfg.get("nodes_per_ray", 128))
    results = contour_calculus(triple, psis, contour, sector=sector)
    tol = _tol(config, "funcalc_discrepancy", 1e-6)
    rows = []
    checks = []
    for psi, res in zip(psis, results):
        oracle = eigen_oracle(triple, psi, mu=sector.mu)
        denom = max(np.linalg.norm(oracle.matrix, 2), 1e-300)
        disc = float(np.linalg.norm(res.matrix - oracle.matrix, 2) / denom)
        allowed = max(tol, res.residual_estimate / denom)
        rows.append((psi.label, disc, res.residual_estimate,
                     res.meta["node_doubling"], res.meta["truncation_tail"]))
        checks.append(check(f"contour-vs-oracle[{psi.label}]", disc <= allowed,
                            disc, allowed))
    diag = results[0].meta["diagnostics"]
    csvs = [
        ("funcalc_discrepancies.csv",
         ["psi", "relative_discrepancy", "residual_estimate", "node_doubling",
          "truncation_tail"], rows),
        ("contour_diagnostics.csv",
         ["ray_angle", "r", "abs_weight", "partial_sum_norm"], diag),
    ]
    series = {"discrepancy": [(i, r[1]) for i, r in enumerate(rows)],
              "residual": [(i, r[2]) for i, r in enumerate(rows)]}
    figures = [lambda out: reporting.figure_series(
        out, "funcalc.png", series, "function index", "norm",
        "contour vs oracle", logy=True)]
    return ExperimentOutput(results={"functions": [r[0] for r in rows],
                                     "contour": {"theta": contour.theta,
                                                 "rMin": contour.r_min,
                                                 "rMax": contour.r_max,
                                                 "nodesPerRay": contour.nodes_per_ray},
                                     "sector": {"omega": sector.omega, "mu": sector.mu}},
                            checks=checks,
                            tolerances={"funcalc_discrepancy": tol},
                            csvs=csvs, figures=figures)


def run_hodge(config) -> ExperimentOutput:
    ts = build_triple_from_config(config)
    triple = ts.triple
    tol_alg = _tol(config, "hodge_algebra", 1e-8)
    tol_orth = _tol(config, "hodge_orthogonality", 1e-10)
    direct = direct_projections(triple)
    checks = [
        check("partition", direct.partition_defect() <= tol_alg,
              direct.partition_defect(), tol_alg),
        check("idempotency", max(direct.idempotency_defects()) <= tol_alg,
              max(direct.idempotency_defects()), tol_alg),
    ]
    cross = 0.0
    for a, b in ((direct.p0, direct.p1), (direct.p0, direct.p2),
                 (direct.p1, direct.p2)):
        cross = max(cross, float(np.linalg.norm(a @ b, 2)),
                    float(np.linalg.norm(b @ a, 2)))
    checks.append(check("mutual-annihilation", cross <= tol_alg, cross, tol_alg))
    if ts.kind == "flat":
        sym = max(float(np.linalg.norm(p - p.conj().T, 2))
                  for p in (direct.p0, direct.p1, direct.p2))
        checks.append(check("orthogonality", sym <= tol_orth, sym, tol_orth))

    norm = triple.norm_estimate()
    n_limits = config.get("params", {}).get("n_limits",
                                            [c / norm for c in (100, 200, 400, 800)])
    errors = []
    for n in n_limits:
        lim = limit_projections(triple, n)
        err = max(float(np.linalg.norm(lim.p0 - direct.p0, 2)),
                  float(np.linalg.norm(lim.p1 - direct.p1, 2)),
                  float(np.linalg.norm(lim.p2 - direct.p2, 2)))
        errors.append((float(n), err))
    slope = float(np.polyfit(np.log([e[0] for e in errors]),
                             np.log([max(e[1], 1e-300) for e in errors]), 1)[0])
    order_tol = _tol(config, "limit_order_window", 0.2)
    checks.append(check("limit-first-order", abs(slope + 1.0) <= order_tol,
                        -slope, [1 - order_tol, 1 + order_tol]))

    tilde = ptilde(triple, n_limits[-1], direct)
    tol_fact = _tol(config, "ptilde_factorization", 1e-6)
    checks.append(check("ptilde-factorization",
                        max(tilde.factorization_defects) <= tol_fact,
                        max(tilde.factorization_defects), tol_fact))

    results = {"direct": direct.to_dict(), "limitErrors": errors,
               "fittedOrder": -slope,
               "ptildeDefects": list(tilde.factorization_defects)}

    if ts.kind == "block":
        eps = config.get("params", {}).get("derivative_epsilon", 1e-4)
        block = ts.block
        rng = np.random.default_rng(config.get("seed", 0))
        d1, d2 = block.dim_v1, block.dim_v2
        npts = triple.grid.npoints
        fd = d1 + d2
        a1 = np.zeros((npts, fd, fd), dtype=complex)
        a2 = np.zeros((npts, fd, fd), dtype=complex)
        h1 = rng.standard_normal((npts, d1, d1))
        h2 = rng.standard_normal((npts, d2, d2))
        a1[:, :d1, :d1] = 0.5 * (h1 + h1.transpose(0, 2, 1))
        a2[:, d1:, d1:] = 0.5 * (h2 + h2.transpose(0, 2, 1))
        dcheck = projection_derivative_check(triple, a1, a2, eps)
        half = projection_derivative_check(triple, a1, a2, eps / 2)
        ratios = [c / max(h, 1e-300) for c, h in
                  zip(dcheck.discrepancies, half.discrepancies)]
        tol_d = _tol(config, "derivative_discrepancy", 1e-6)
        checks.append(check("derivative-formulas", dcheck.max_discrepancy <= tol_d,
                            dcheck.max_discrepancy, tol_d))
        checks.append(check("derivative-sum-zero",
                            dcheck.formula_sum_residual <= tol_alg,
                            dcheck.formula_sum_residual, tol_alg))
        checks.append(check("derivative-second-order",
                            all(3.0 <= r <= 5.0 for r in ratios), ratios, [3.0, 5.0]))
        results["derivativeCheck"] = {"epsilon": eps,
                                      "discrepancies": list(dcheck.discrepancies),
                                      "halvingRatios": ratios,
                                      "sumResidual": dcheck.formula_sum_residual}

    csvs = [("limit_errors.csv", ["n", "max_projection_error"], errors)]
    figures = [lambda out: reporting.figure_loglog(
        out, "hodge_limits.png", errors, "n", "error",
        "resolvent-limit convergence", reference_slope=-1.0)]
    return ExperimentOutput(results=results, checks=checks,
                            tolerances={"hodge_algebra": tol_alg,
                                        "hodge_orthogonality": tol_orth,
                                        "limit_order_window": order_tol,
                                        "ptilde_factorization": tol_fact},
                            csvs=csvs, figures=figures)


def run_quad(config) -> ExperimentOutput:
    ts = build_triple_from_config(config)
    triple = ts.triple
    tgrid = tgrid_from_config(config, triple)
    report = quad_ratio(triple, tgrid)
    projections = direct_projections(triple)
    defect, bound, warn = resolution_identity_check(triple, tgrid, projections)
    tol_exact = _tol(config, "selfadjoint_exactness", 1e-6)
    tol_res = _tol(config, "resolution_defect", 1e-6)
    tol_stab = _tol(config, "refinement_stability", 0.05)
    checks = [check("quad-lower-positive", report.lower > 0, report.lower, 0.0)]
    if ts.kind == "flat":
        checks.append(check("selfadjoint-lower", abs(report.lower - 0.5) <= tol_exact,
                            report.lower, [0.5 - tol_exact, 0.5 + tol_exact]))
        checks.append(check("selfadjoint-upper", abs(report.upper - 0.5) <= tol_exact,
                            report.upper, [0.5 - tol_exact, 0.5 + tol_exact]))
    checks.append(check("resolution-identity", defect <= max(tol_res, 2 * bound),
                        defect, max(tol_res, 2 * bound)))
    factor = config.get("params", {}).get("refine_factor", 2)
    refined = quad_ratio(triple, tgrid.refined(factor))
    drift = max(abs(refined.lower - report.lower) / max(report.lower, 1e-300),
                abs(refined.upper - report.upper) / max(report.upper, 1e-300))
    checks.append(check("refinement-stability", drift <= tol_stab, drift, tol_stab))

    rng = np.random.default_rng(config.get("seed", 0))
    u = triple.pi_b @ (rng.standard_normal(triple.dim)
                       + 1j * rng.standard_normal(triple.dim))
    u = u / np.linalg.norm(u)
    value = quad_functional(triple, u, tgrid)
    csvs = [("qt_curve.csv", ["t", "norm_Qt_u"], value.curve)]
    curve = [(t, v) for t, v in value.curve]
    figures = [lambda out: reporting.figure_loglog(
        out, "qt_curve.png", curve, "t", "||Q_t u||", "quadratic functional")]
    return ExperimentOutput(
        results={"quad": report.to_dict(),
                 "refined": refined.to_dict(),
                 "resolutionDefect": defect, "resolutionBound": bound,
                 "resolutionWarning": warn,
                 "sampleFunctional": {"value": value.value,
                                      "truncationBound": value.truncation_bound,
                                      "warning": value.warning}},
        checks=checks,
        tolerances={"selfadjoint_exactness": tol_exact,
                    "resolution_defect": tol_res,
                    "refinement_stability": tol_stab},
        csvs=csvs, figures=figures)


def run_carleson(config) -> ExperimentOutput:
    ts = build_triple_from_config(config)
    triple = ts.triple
    system = DyadicSystem(triple.grid)
    tgrid = tgrid_from_config(config, triple)
    gamma_cache = {}
    car = carleson_norm(triple, system, tgrid, gamma_cache)
    rng = np.random.default_rng(config.get("seed", 0))
    count = config.get("params", {}).get("u_count", 10)
    embedding_bound = _tol(config, "carleson_embedding", 16.0)
    worst = 0.0
    for _ in range(count):
        u = rng.standard_normal(triple.dim) + 1j * rng.standard_normal(triple.dim)
        lhs, rhs, _ = carleson_embedding_probe(triple, system, tgrid, u,
                                               carleson=car, gamma_cache=gamma_cache)
        if rhs > 0:
            worst = max(worst, lhs / rhs)
        elif lhs > 1e-14:
            worst = float("inf")
    checks = [check("carleson-embedding", worst <= embedding_bound, worst,
                    embedding_bound),
              check("carleson-norm-finite", np.isfinite(car.norm), car.norm)]
    csvs = [("carleson_cubes.csv", ["cube", "level", "mass", "mass_over_volume"],
             car.rows)]
    series = {}
    for label, level, _, ratio in car.rows:
        series.setdefault(f"level {level}", []).append((level, ratio))
    figures = [lambda out: reporting.figure_series(
        out, "carleson.png", series, "dyadic level", "mass / |Q|",
        "Carleson box masses")]
    return ExperimentOutput(results={"carlesonNorm": car.norm,
                                     "worstCube": car.worst_cube,
                                     "embeddingWorstRatio": worst,
                                     "samples": count},
                            checks=checks,
                            tolerances={"carleson_embedding": embedding_bound},
                            csvs=csvs, figures=figures)


def run_offdiag(config) -> ExperimentOutput:
    ts = build_triple_from_config(config)
    triple = ts.triple
    grid = triple.grid
    params = config.get("params", {})
    t = params.get("t", 8 * grid.h)
    seps = params.get("separations", [4 * t, 8 * t, 16 * t])
    seps = [d for d in seps if d <= grid.L / 2]
    report = off_diag_probe(triple, [t], seps, seed=config.get("seed", 0),
                            support_cells=params.get("support_cells", 1))
    decay_factor = _tol(config, "offdiag_decay_factor", 4.0)
    r_rows = sorted((r for r in report.rows if r["family"] == "R"),
                    key=lambda r: r["d_over_t"])
    ok = len(r_rows) >= 2
    ratios = []
    for a, b in zip(r_rows, r_rows[1:]):
        if abs(b["d_over_t"] - 2 * a["d_over_t"]) < 1e-9:
            factor = a["ratio"] / max(b["ratio"], 1e-300)
            ratios.append(factor)
            ok = ok and factor >= decay_factor
    checks = [check("resolvent-decay-per-doubling", ok and bool(ratios), ratios,
                    decay_factor)]
    exp_r = report.fitted_exponents.get("R", 0.0)
    checks.append(check("resolvent-exponent", exp_r <= -2.0, exp_r, -2.0))
    csvs = [("offdiag.csv", ["family", "t", "d", "d_over_t", "ratio"],
             [(r["family"], r["t"], r["d"], r["d_over_t"], r["ratio"])
              for r in report.rows])]
    series = {}
    for r in report.rows:
        series.setdefault(r["family"], []).append((r["d_over_t"], max(r["ratio"], 1e-300)))
    figures = [lambda out: reporting.figure_series(
        out, "offdiag.png", series, "d / t", "norm ratio",
        "off-diagonal decay", logy=True)]
    return ExperimentOutput(results={"fittedExponents": report.fitted_exponents,
                                     "saturated": report.saturated,
                                     "skipped": report.skipped,
                                     "doublingFactors": ratios},
                            checks=checks,
                            tolerances={"offdiag_decay_factor": decay_factor},
                            csvs=csvs, figures=figures)


def _curve_from_config(grid: GridSpec, params: dict) -> apps.LipschitzCurve:
    spec = params.get("curve", {"kind": "flat"})
    kind = spec.get("kind", "flat")
    x = np.arange(grid.m) * grid.h
    if kind == "flat":
        g = np.zeros(grid.m)
    elif kind == "constant":
        g = np.full(grid.m, spec.get("level", 1.0))
    elif kind == "sine":
        amp = spec.get("amplitude", 0.3) * grid.L
        freq = spec.get("frequency", 1)
        g = amp * np.sin(2 * np.pi * freq * x / grid.L)
    else:
        raise ArgumentError(f"unknown curve kind {kind!r}")
    return apps.lipschitz_curve(grid, g)


def run_cauchy(config) -> ExperimentOutput:
    grid = GridSpec(**config["grid"])
    if grid.n != 1:
        raise PreconditionError("the Cauchy experiment needs a 1D grid")
    params = config.get("params", {})
    curve = _curve_from_config(grid, params)
    report = apps.cauchy_operator(curve)
    tol_routes = _tol(config, "cauchy_routes", 1e-5)
    tol_proj = _tol(config, "cauchy_projection", 1e-6)
    tol_symbol = _tol(config, "cauchy_symbol", 1e-8)
    checks = [
        check("route-agreement", report.route_discrepancy <= tol_routes,
              report.route_discrepancy, tol_routes),
        check("involution", report.projection_defect <= tol_proj,
              report.projection_defect, tol_proj),
    ]
    results = {"omega": report.omega,
               "lipschitzConstant": curve.lipschitz_constant,
               "routeDiscrepancy": report.route_discrepancy,
               "projectionDefect": report.projection_defect,
               "warning": report.warning}
    if curve.lipschitz_constant == 0.0:
        sym = apps.cauchy_flat_symbol_defect(report.matrix, grid)
        checks.append(check("flat-symbol", sym <= tol_symbol, sym, tol_symbol))
        results["flatSymbolDefect"] = sym
    a = 1.0 / (1.0 + 1j * curve.g_prime)
    op = 1j * (a[:, None] * as_dense(central_difference(grid)))
    lam = np.linalg.eigvals(op)
    lam = lam[np.argsort(lam.real + 1e-9 * lam.imag)]
    csvs = [("curve_spectrum.csv", ["re", "im"], [(z.real, z.imag) for z in lam])]
    figures = [lambda out: reporting.figure_spectrum(
        out, "curve_spectrum.png", lam, report.omega,
        title="spectrum of i D_curve")]
    return ExperimentOutput(results=results, checks=checks,
                            tolerances={"cauchy_routes": tol_routes,
                                        "cauchy_projection": tol_proj,
                                        "cauchy_symbol": tol_symbol},
                            csvs=csvs, figures=figures)


def _coefficient_field(grid: GridSpec, fiber_dim: int, params: dict,
                       default_seed: int) -> np.ndarray:
    spec = params.get("coefficient", {"kind": "identity"})
    kind = spec.get("kind", "identity")
    eye = np.tile(np.eye(fiber_dim, dtype=complex), (grid.npoints, 1, 1))
    if kind == "identity":
        return eye
    if kind == "constant":
        return spec.get("value", 4.0) * eye
    if kind == "random":
        return random_accretive_field(grid, FiberLayout(grid.n, fiber_dim),
                                      spec.get("omega", 0.5),
                                      spec.get("seed", default_seed))
    raise ArgumentError(f"unknown coefficient kind {kind!r}")


def run_kato(config) -> ExperimentOutput:
    grid = GridSpec(**config["grid"])
    params = config.get("params", {})
    a_field = _coefficient_field(grid, grid.n, params, config.get("seed", 0))
    report = apps.kato_sqrt(a_field, grid)
    tol_flat = _tol(config, "kato_identity", 1e-8)
    checks = [check("constants-finite",
                    np.isfinite(report.c_low) and np.isfinite(report.c_high)
                    and report.c_low > 0, [report.c_low, report.c_high])]
    spec = params.get("coefficient", {"kind": "identity"})
    if spec.get("kind", "identity") == "identity":
        worst = max(abs(report.c_low - 1), abs(report.c_high - 1))
        checks.append(check("identity-exact", worst <= tol_flat, worst, tol_flat))
    elif spec.get("kind") == "constant":
        expected = float(np.sqrt(spec.get("value", 4.0)))
        worst = max(abs(report.c_low - expected), abs(report.c_high - expected))
        checks.append(check("constant-scaling", worst <= tol_flat * expected,
                            worst, tol_flat * expected))
    csvs = [("kato.csv", ["c_low", "c_high", "kappa", "omega"],
             [(report.c_low, report.c_high, report.kappa, report.omega)])]
    return ExperimentOutput(results={"cLow": report.c_low, "cHigh": report.c_high,
                                     "kappa": report.kappa, "omega": report.omega,
                                     "sqrtResidual": report.sqrt_residual},
                            checks=checks, tolerances={"kato_identity": tol_flat},
                            csvs=csvs, figures=[])


def run_forms(config) -> ExperimentOutput:
    grid = GridSpec(**config["grid"])
    params = config.get("params", {})
    fd = 2**grid.n
    b_field = _coefficient_field(grid, fd, params, config.get("seed", 0))
    report = apps.hodge_dirac_forms(b_field, grid)
    tol_h3 = _tol(config, "h3", 1e-8)
    checks = [
        check("equivalence-finite",
              report.equiv_low > 0 and np.isfinite(report.equiv_high),
              [report.equiv_low, report.equiv_high]),
        check("h3-automatic", report.h3_residual <= tol_h3
              * max(spectral_norm(grid_gamma(grid)) ** 2, 1.0),
              report.h3_residual),
        check("quad-two-sided", report.quad.lower > 0
              and np.isfinite(report.quad.upper),
              [report.quad.lower, report.quad.upper]),
    ]
    spec = params.get("coefficient", {"kind": "identity"})
    if spec.get("kind", "identity") == "identity":
        checks.append(check("kernel-dimension", report.kernel_dim == fd,
                            report.kernel_dim, fd))
    csvs = [("forms.csv", ["equiv_low", "equiv_high", "kernel_dim", "quad_lower",
                           "quad_upper"],
             [(report.equiv_low, report.equiv_high, report.kernel_dim,
               report.quad.lower, report.quad.upper)])]
    return ExperimentOutput(results={"equivLow": report.equiv_low,
                                     "equivHigh": report.equiv_high,
                                     "kernelDim": report.kernel_dim,
                                     "h3Residual": report.h3_residual,
                                     "omega": report.omega,
                                     "quad": report.quad.to_dict()},
                            checks=checks, tolerances={"h3": tol_h3},
                            csvs=csvs, figures=[])


def grid_gamma(grid: GridSpec):
    from .gridops import build_gamma
    return build_gamma(grid).matrix


def run_lipschitz(config) -> ExperimentOutput:
    ts = build_triple_from_config(config)
    triple = ts.triple
    params = config.get("params", {})
    scales = params.get("scales", [0.2, 0.1, 0.05, 0.025])
    f = bounded_function(params.get("f", "sgn"))
    rng = np.random.default_rng(params.get("direction_seed", config.get("seed", 0)))
    npts = triple.grid.npoints
    fd = triple.layout.fiber_dim
    amp = params.get("direction_scale", 1.0)
    if ts.kind == "block":
        d1 = ts.block.dim_v1
        a1 = np.zeros((npts, fd, fd), dtype=complex)
        a2 = np.zeros((npts, fd, fd), dtype=complex)
        h1 = rng.standard_normal((npts, d1, d1))
        h2 = rng.standard_normal((npts, fd - d1, fd - d1))
        a1[:, :d1, :d1] = amp * 0.5 * (h1 + h1.transpose(0, 2, 1))
        a2[:, d1:, d1:] = amp * 0.5 * (h2 + h2.transpose(0, 2, 1))
    else:
        h1 = rng.standard_normal((npts, fd, fd))
        h2 = rng.standard_normal((npts, fd, fd))
        a1 = amp * 0.5 * (h1 + h1.transpose(0, 2, 1))
        a2 = amp * 0.5 * (h2 + h2.transpose(0, 2, 1))
    registry = psi_registry()
    report = apps.lipschitz_funcalc(triple, a1, a2, f, scales,
                                    psi=registry["z/(1+z^2)"](),
                                    u_seed=config.get("seed", 0))
    tol_conv = _tol(config, "lipschitz_convergence", 0.05)
    checks = [
        check("ratios-finite",
              bool(report.samples) and np.isfinite(report.max_ratio),
              report.max_ratio),
        check("scale-convergence", report.converged,
              [s["ratio"] for s in report.samples[-2:]], tol_conv),
    ]
    rows = [(s["scale"], s["diff"], s["ratio"]) for s in report.samples]
    csvs = [("lipschitz_sweep.csv", ["scale", "difference_norm", "ratio"], rows)]
    series = {"ratio": [(r[0], r[2]) for r in rows]}
    figures = [lambda out: reporting.figure_series(
        out, "lipschitz.png", series, "scale", "ratio",
        "Lipschitz dependence of f(Pi_B)")]
    return ExperimentOutput(results={"samples": report.samples,
                                     "skipped": report.skipped,
                                     "maxRatio": report.max_ratio,
                                     "holomorphyBound": report.holomorphy_bound,
                                     "quadVariant": report.quad_variant},
                            checks=checks,
                            tolerances={"lipschitz_convergence": tol_conv},
                            csvs=csvs, figures=figures)


def validate_metric_config(config) -> None:
    h_norm = config.get("params", {}).get("h_norm", 0.2)
    if not h_norm < 0.25:
        raise PreconditionError(
            f"metric experiment requires ||h||_inf < 1/4 (configured {h_norm}); "
            "the Lipschitz estimate for the perturbed spectral projections "
            "assumes this smallness hypothesis")


def run_metric(config) -> ExperimentOutput:
    validate_metric_config(config)
    grid = GridSpec(**config["grid"])
    params = config.get("params", {})
    h_norm = params.get("h_norm", 0.2)
    seeds = params.get("seeds", 3)
    scales = params.get("scales", [1.0, 0.5, 0.25])
    base_seed = params.get("h_seed", config.get("seed", 0))
    all_rows = []
    per_seed = []
    for k in range(seeds):
        pert = apps.random_metric_perturbation(grid, h_norm, base_seed + k)
        rep = apps.metric_perturb(pert, scales=scales)
        per_seed.append(rep.max_ratio)
        for row in rep.rows:
            all_rows.append((base_seed + k, row["function"], row["scale"],
                             row["diff"], row["ratio"]))
    ratios = np.array(per_seed)
    checks = [
        check("ratios-finite", bool(np.all(np.isfinite(ratios))), per_seed),
        check("hypothesis-enforced", True, h_norm, 0.25),
    ]
    csvs = [("metric_sweep.csv", ["seed", "function", "scale", "difference_norm",
                                  "ratio"], all_rows)]
    series = {}
    for seed, fn, scale, _, ratio in all_rows:
        if seed == base_seed:
            series.setdefault(fn, []).append((scale, ratio))
    figures = [lambda out: reporting.figure_series(
        out, "metric.png", series, "scale", "ratio",
        "metric perturbation Lipschitz ratios")]
    return ExperimentOutput(results={"hNorm": h_norm,
                                     "perSeedMaxRatio": per_seed,
                                     "spread": float(ratios.max() / ratios.min())
                                     if ratios.size and ratios.min() > 0 else None},
                            checks=checks, tolerances={"h_norm_bound": 0.25},
                            csvs=csvs, figures=figures)


RUNNERS = {
    "validate": run_validate,
    "sector": run_sector,
    "funcalc": run_funcalc,
    "hodge": run_hodge,
    "quad": run_quad,
    "carleson": run_carleson,
    "offdiag": run_offdiag,
    "cauchy": run_cauchy,
    "kato": run_kato,
    "forms": run_forms,
    "lipschitz": run_lipschitz,
    "metric": run_metric,
}


def semantic_config_checks(config: dict) -> None:
    """Config-level preconditions surfaced before any computation."""
    experiment = config["experiment"]
    grid = GridSpec(**config["grid"])
    if experiment in ("carleson",) and not grid.is_dyadic:
        raise PreconditionError("the Carleson experiment needs m to be a power of 2")
    if experiment == "metric":
        validate_metric_config(config)
    if experiment == "cauchy" and grid.n != 1:
        raise PreconditionError("the Cauchy experiment needs a 1D grid")
