"""Experiment pipelines.  Each takes a validated config dict and returns

    {"report": {...}, "artifacts": {relative_name: text}, "checks": {name: bool}}

with no file I/O; the CLI persists artifacts and assembles the run report.
"""
from __future__ import annotations

import json

import numpy as np

from . import fourier as ft
from . import levy_model as lm
from . import levy_sampler as ls
from . import nonlocal_op as no
from . import pbp_ode as pbp
from . import resolvent as rs
from . import sde_engine as se
from . import zvonkin as zv
from .errors import ConfigInvalid
from .fixtures import drift_fixtures


# -- builders -----------------------------------------------------------------------

def build_spec(cfg):
    m = cfg["measure"]
    if m["kind"] == "discrete":
        return lm.LevyMeasureSpec.discrete(m["atoms"], m["weights"], m["alpha"], m["c0"], m["rho"],
                                           R=m["R"], name="config-discrete")
    make = lm.LevyMeasureSpec.isotropic if m["kind"] == "isotropic" else lm.LevyMeasureSpec.cylindrical
    return make(m["d"], m["alpha"], m["c0"], m["rho"], c=m["c"], R=m["R"],
                name=f"config-{m['kind']}-a{m['alpha']}")


def build_quad(cfg, spec=None):
    spec = build_spec(cfg) if spec is None else spec
    return no.build_quadrature(spec, levels=cfg["measure"]["levels"])


def build_grid(cfg):
    return ft.PeriodicGrid(cfg["measure"]["d"], cfg["grid"]["L"], cfg["grid"]["N"])


def build_sigma(cfg, grid):
    s = cfg["sigma"]
    d = grid.d
    if s["kind"] == "identity":
        return no.SigmaField.identity(d)
    if s["kind"] == "matrix":
        return no.SigmaField(matrix=np.asarray(s["matrix"], dtype=float).reshape(d, d))
    a, k = s["amplitude"], s["k"]

    def fn(*coords):
        scal = 1 + a * np.sin(np.pi * k * coords[0] / grid.L)
        out = np.zeros((d, d) + grid.shape)
        for i in range(d):
            out[i, i] = scal
        return out

    return no.SigmaField.from_function(grid, fn)


def build_drift(cfg, grid):
    dr = cfg["drift"]
    d = grid.d
    if dr["kind"] == "zero":
        return ft.GridField(grid, np.zeros((d,) + grid.shape))
    if dr["kind"] == "constant":
        v = np.asarray(dr["value"] or [0.7] * d, dtype=float)
        return ft.GridField.constant(grid, v)
    return ft.holder_sample(dr["beta"], grid, dr["seed"], amplitude=dr["amplitude"], ncomp=d)


def _paths(cfg, spec, n, T, salt=0):
    eps = cfg["measure"]["eps"]
    return [ls.sample_jump_path(spec, T, eps, ls.derive_seed(cfg["master_seed"] + salt, k)) for k in range(n)]


def _transform(cfg, grid, spec, quad, sigma, b):
    z = cfg["zvonkin"]
    beta = cfg["drift"]["beta"] if cfg["drift"]["kind"] == "holder" else None
    return zv.build_transform(b, sigma, quad, target=z["target"], lam_start=z["lambda_start"],
                              lam_cap=z["lambda_cap"], alpha=spec.alpha, beta=beta)


def _result(report, checks, artifacts=None):
    return {"report": report, "checks": {k: bool(v) for k, v in checks.items()},
            "artifacts": artifacts or {}}


# -- measure / paths ------------------------------------------------------------------

def certify_measure(cfg):
    spec = build_spec(cfg)
    cert = lm.certify(spec)
    cross = lm.moment_crosscheck(spec)
    quad = build_quad(cfg, spec)
    sm = no.second_moment_error(quad, spec)
    report = {"spec": spec.to_dict(), "certification": cert, "moment_crosscheck": cross,
              "quadrature_nodes": quad.size, "second_moment_rel_err": sm}
    checks = {"a1": cert["pass"], "moments": cross <= 1e-8, "quadrature_second_moment": sm <= 1e-6,
              "quadrature_symmetric": quad.is_symmetric()}
    return _result(report, checks, {"quadrature.csv": quad.to_csv()})


def sample_path(cfg):
    spec = build_spec(cfg)
    T, eps = cfg["sde"]["T"], cfg["measure"]["eps"]
    paths = _paths(cfg, spec, cfg["sde"]["paths"], T)
    arts, rows, exact = {}, [], True
    for k, p in enumerate(paths):
        text = ls.to_csv(p)
        back = ls.from_csv(text)
        exact &= np.array_equal(back.times, p.times) and np.array_equal(back.sizes, p.sizes)
        arts[f"path_{k:03d}.csv"] = text
        rows.append({"k": k, "seed": p.seed, "jumps": p.n_jumps, "sha256": p.digest()})
    report = {"rate": lm.mass_above(spec, eps), "expected_jumps": lm.mass_above(spec, eps) * T,
              "mean_jumps": float(np.mean([r["jumps"] for r in rows])),
              "bias": ls.truncation_bias_bound(spec, T, eps), "paths": rows}
    checks = {"csv_round_trip": exact,
              "bias_within_bound": report["bias"]["exact"] <= report["bias"]["bound"]}
    return _result(report, checks, arts)


# -- Littlewood-Paley and operator checks ----------------------------------------------

def lp_suite(cfg):
    grid = build_grid(cfg)
    J = grid.J
    r = grid.abs_xi
    part = 0.0
    for k in range(J + 1):
        acc = ft.chi(2 * r) + sum(ft.ring(r / 2.0**j) for j in range(k + 1))
        part = max(part, float(np.abs(acc - ft.chi(r / 2.0**k)).max()))
    f = ft.random_field(grid, cfg["master_seed"])
    orth = 0.0
    for j in ft.levels(grid):
        for jp in ft.levels(grid):
            if abs(j - jp) >= 2:
                both = ft.dyadic_block(ft.dyadic_block(f, j), jp)
                orth = max(orth, ft.lp_norm(both, 2) / ft.lp_norm(f, 2))
    recon = 0.0
    for t in range(cfg["analysis"]["lp_fields"]):
        g = ft.random_field(grid, cfg["master_seed"] + 1 + t, band=2.0**J)
        tot = sum(ft.dyadic_block(g, j).values for j in ft.levels(grid))
        recon = max(recon, float(np.abs(tot - g.values).max()))
    beta = 0.6
    hs = ft.holder_sample(beta, grid, cfg["master_seed"])
    js = list(range(0, J + 1))
    sups = [ft.dyadic_block(hs, j).sup() for j in js]
    slope = float(np.polyfit(js, np.log2(sups), 1)[0])
    besov = ft.besov_norm(hs, beta, np.inf, np.inf)
    report = {"J": J, "partition_residual": part, "orthogonality_residual": orth,
              "reconstruction_residual": recon, "holder_slope": slope, "holder_besov": besov}
    checks = {"partition": part <= 1e-12, "orthogonality": orth <= 1e-12, "reconstruction": recon <= 1e-12,
              "holder_slope": abs(slope + beta) <= 0.1, "holder_besov": 1 / 3 <= besov <= 3}
    return _result(report, checks)


def bernstein(cfg):
    spec = build_spec(cfg)
    quad = build_quad(cfg, spec)
    grid = build_grid(cfg)
    sigma = np.eye(grid.d)
    j_range = list(range(3, grid.J))
    if not j_range:
        raise ConfigInvalid(f"grid.N={grid.N} resolves no Bernstein level j >= 3; increase grid.N")
    reports, checks = {}, {}
    for p in cfg["analysis"]["bernstein_p"]:
        rep = no.bernstein_report(quad, sigma, p, j_range, cfg["analysis"]["bernstein_trials"],
                                  cfg["master_seed"], grid, spec.alpha)
        reports[f"p{p:g}"] = rep
        checks[f"p{p:g}_positive"] = min(rep["min_ratio"].values()) > 0
        checks[f"p{p:g}_spread"] = rep["median_spread"] <= 4
        checks[f"p{p:g}_low_block"] = rep["low_block_min"] >= -1e-10
        if p == 2:
            checks["plancherel"] = rep["plancherel_rel_gap"] <= 1e-8
    reports["symbol_lower_constant"] = no.symbol_lower_constant(quad, sigma, grid, spec.alpha, spec.rho)
    checks["symbol_lower_positive"] = reports["symbol_lower_constant"] > 0
    return _result(reports, checks)


def commutator_grid(N=1024):
    return ft.PeriodicGrid(1, np.pi, N)


def commutator_u(grid):
    x = grid.coords[0]
    return ft.GridField(grid, np.cos(x) + 0.5 * np.sin(2 * x))


def commutator(cfg):
    grid = commutator_grid(cfg["analysis"]["commutator_N"])
    u = commutator_u(grid)
    j_range = list(range(3, grid.J - 1))
    reports, checks = {}, {}
    for beta in cfg["analysis"]["commutator_betas"]:
        b = ft.holder_sample(beta, grid, cfg["master_seed"])
        rep = no.commutator_report(b, u, 2.0, j_range, beta)
        reports[f"beta{beta:g}"] = rep
        checks[f"beta{beta:g}_slope"] = abs(rep["slope"] + beta) <= 0.2
    const = ft.GridField.constant(grid, 0.8)
    zero = max(no.commutator(const, u, j).sup() for j in j_range)
    reports["constant_b_max"] = zero
    checks["constant_b_zero"] = zero <= 1e-12
    return _result(reports, checks)


# -- resolvent / zvonkin ------------------------------------------------------------------

def resolvent(cfg):
    spec = build_spec(cfg)
    quad = build_quad(cfg, spec)
    grid = build_grid(cfg)
    rc = cfg["resolvent"]
    lam = rc["lambda"]
    I = no.SigmaField.identity(grid.d)
    k = [rc["wave_k"]] + [0] * (grid.d - 1)
    f, xi0 = rs.plane_wave(grid, k)
    psi0 = float(no.symbol_psi(quad, np.eye(grid.d), xi0))
    rows, checks = [], {}

    def closed_row(name, b, v, limit):
        prob = rs.ResolventProblem(lam, b, f, I, quad, rc["tolerance"], rc["max_iters"], rc["residual_tol"],
                                   alpha=spec.alpha)
        sol = rs.solve_constant_sigma(prob)
        ex = rs.plane_wave_solution(grid, k, lam, psi0, v)
        err = float(np.abs(sol.u.values - ex.values).max() / np.abs(ex.values).max())
        rows.append({"case": name, "rel_err": err, "iterations": sol.iterations, "residual": sol.residual_sup})
        checks[f"closed_form_{name}"] = err <= limit
        return prob, sol

    pw_prob, pw_sol = closed_row("plane_wave_b0", None, None, 1e-10)
    v = np.full(grid.d, 0.5)
    closed_row("plane_wave_bconst", ft.GridField.constant(grid, v), v, 1e-8)
    # a priori ratio against its closed form for the b = 0 plane wave
    gamma, p = rc["gamma"], rc["p"]
    pw_prob.beta = 1.0
    ap_pw = rs.apriori_report(pw_sol, pw_prob, gamma, p)
    pw_gap = max(abs(r["ratio"] - rs.plane_wave_ratio(grid, k, r["lambda"], psi0, spec.alpha, gamma, p))
                 / r["ratio"] for r in ap_pw["rows"])
    checks["apriori_plane_wave_closed_form"] = pw_gap <= 1e-8
    # Holder drift instance
    b = build_drift(cfg, grid)
    beta = cfg["drift"]["beta"]
    hp = rs.ResolventProblem(1.0, b, b, I, quad, rc["tolerance"], rc["max_iters"], rc["residual_tol"],
                             alpha=spec.alpha, beta=max(beta, gamma + 1e-9))
    lam0, hsol = rs.find_lambda0(hp)
    hp = hp.with_lambda(lam0)
    bound = rc["residual_tol"] * b.sup()
    checks["holder_residual"] = hsol.residual_sup <= bound
    ap = rs.apriori_report(hsol, hp, gamma, p)
    checks["apriori_non_increasing"] = ap["non_increasing"]
    contraction = [r["contraction"] for r in ap["rows"]]
    report = {"closed_form": rows, "plane_wave_apriori": ap_pw, "plane_wave_apriori_gap": pw_gap,
              "lambda0": lam0, "holder_residual": hsol.residual_sup, "residual_bound": bound,
              "apriori": ap, "contraction_by_lambda": contraction}
    sigma = build_sigma(cfg, grid)
    if not sigma.is_constant:
        vp = rs.ResolventProblem(4 * lam0, b, b, sigma, quad, rc["tolerance"], rc["max_iters"], rc["residual_tol"])
        vsol = rs.solve_variable_sigma(vp)
        report["variable_sigma"] = {"lambda": 4 * lam0, "residual": vsol.residual_sup,
                                    "lipschitz": sigma.lipschitz(), "iterations": vsol.iterations}
        checks["variable_sigma_residual"] = vsol.residual_sup <= bound
    arts = {"u_holder.csv": ft.field_to_csv(hsol.u), "apriori.json": json.dumps(ap, sort_keys=True, indent=1)}
    return _result(report, checks, arts)


def zvonkin(cfg):
    spec = build_spec(cfg)
    quad = build_quad(cfg, spec)
    grid = build_grid(cfg)
    sigma = build_sigma(cfg, grid)
    fixtures = drift_fixtures(grid)
    fixtures["config"] = build_drift(cfg, grid)
    rng = np.random.default_rng(cfg["master_seed"])
    n = cfg["zvonkin"]["roundtrip_points"]
    rows, checks, arts = {}, {}, {}
    for name, b in fixtures.items():
        tr = _transform(cfg, grid, spec, quad, sigma, b)
        x = rng.uniform(-grid.L, grid.L, (n, grid.d))
        back = zv.invert_phi(tr, tr.phi(x))
        rt = float(np.abs(back - x).max())
        det = zv.jacobian_det_min(tr)
        inj = zv.injectivity_ratio(tr)
        sweep = [s["sup_grad"] for s in tr.sweep if s["sup_grad"] is not None]
        rows[name] = {"lambda": tr.lam, "sup_grad": tr.sup_grad, "roundtrip": rt, "det_min": det,
                      "injectivity": inj, "sweep": tr.sweep,
                      "sweep_non_increasing": all(b_ <= a + 1e-12 for a, b_ in zip(sweep, sweep[1:]))}
        checks[f"{name}_sup_grad"] = tr.sup_grad <= cfg["zvonkin"]["target"]
        checks[f"{name}_roundtrip"] = rt <= 1e-8
        checks[f"{name}_det"] = det > 0
        checks[f"{name}_injective"] = inj >= (1 - tr.sup_grad) * (1 - 1e-9)
        if name == "config":
            arts["transform_u.csv"] = ft.field_to_csv(tr.u)
            arts["transform.json"] = json.dumps(tr.to_dict(), sort_keys=True, indent=1)
    return _result(rows, checks, arts)


# -- SDE pipelines ------------------------------------------------------------------------

def _setup(cfg):
    spec = build_spec(cfg)
    quad = build_quad(cfg, spec)
    grid = build_grid(cfg)
    sigma = build_sigma(cfg, grid)
    b = build_drift(cfg, grid)
    tr = _transform(cfg, grid, spec, quad, sigma, b)
    return spec, quad, grid, sigma, b, tr


def sde(cfg):
    spec, quad, grid, sigma, b, tr = _setup(cfg)
    sc = cfg["sde"]
    paths = _paths(cfg, spec, sc["paths"], sc["T"])
    x0 = np.asarray(sc["x0"], dtype=float)
    fine_dt = sc["dt"] / 2 ** sc["halvings"]
    gaps, agree, refine, consist = [], [], [], []
    arts = {}
    for k, path in enumerate(paths):
        prob = se.SdeProblem(tr, path, x0, sc["T"], sc["dt"], n_max=sc["n_max"], tol=sc["picard_tol"])
        sol = se.picard_solve(prob)
        gaps.append(sol.gaps)
        fine = se.picard_solve(prob.with_path(path, dt=fine_dt, T0=sol.T0))
        euler = se.euler_solve(b, sigma, path, x0, fine_dt, T=sc["T"])
        agree.append(se.sup_distance(fine, euler))
        ladder = [se.euler_solve(b, sigma, path, x0, sc["dt"] / 2**h, T=sc["T"]) for h in range(sc["halvings"] + 1)]
        diffs = [float(np.abs(_coarse(ladder[h + 1], ladder[0]) - _coarse(ladder[h], ladder[0])).max())
                 for h in range(sc["halvings"])]
        refine.append(diffs)
        phiX = tr.phi(fine.X[1:, 0], "spline")
        consist.append(float(np.abs(phiX - fine.Y[1:, 0]).max()))
        if k == 0:
            arts["picard_path000.csv"] = fine.to_csv()
            arts["euler_path000.csv"] = euler.to_csv()
    ratios = mean_ratios(gaps)
    # b = 0 exactness
    zero = ft.GridField(grid, np.zeros((grid.d,) + grid.shape))
    tr0 = zv.build_transform(zero, no.SigmaField.identity(grid.d), quad)
    p0 = paths[0]
    s0 = se.picard_solve(se.SdeProblem(tr0, p0, x0, sc["T"], sc["dt"]))
    e0 = se.euler_solve(None, no.SigmaField.identity(grid.d), p0, x0, sc["dt"], T=sc["T"])
    Z = ls.evaluate_Z(p0, s0.t)
    exact0 = max(float(np.abs(s0.X[:, 0] - (x0 + Z)).max()), float(np.abs(e0.X[:, 0] - (x0 + Z)).max()))
    report = {"lambda": tr.lam, "sup_grad": tr.sup_grad, "mean_ratios": ratios,
              "picard_vs_euler": agree, "euler_refinement": refine, "phi_consistency": max(consist),
              "b0_error": exact0, "fine_dt": fine_dt}
    checks = {"contraction": all(r <= 0.6 for r in ratios.values()) and len(ratios) > 0,
              "uniqueness": max(agree) <= 1e-3,
              "b0_exact": exact0 <= 1e-12,
              "phi_consistency": max(consist) <= 1e-10}
    return _result(report, checks, arts)


def _coarse(sol, ref):
    idx = np.searchsorted(sol.t, ref.t)
    return sol.X[idx]


def mean_ratios(gap_lists, n_range=range(2, 7)):
    """Delta_{n+1}/Delta_n of path-averaged gaps, skipping gaps at round-off level."""
    out = {}
    for n in n_range:
        a = [g[n - 1] for g in gap_lists if len(g) > n]
        b = [g[n] for g in gap_lists if len(g) > n]
        if a and np.mean(a) > se.GAP_FLOOR and np.mean(b) > se.GAP_FLOOR:
            out[n] = float(np.mean(b) / np.mean(a))
    return out


def flow(cfg):
    spec, quad, grid, sigma, b, tr = _setup(cfg)
    sc = cfg["sde"]
    r0 = zv.check_a4(sigma, spec.R)
    paths = _paths(cfg, spec, sc["paths"], sc["T"], salt=1)
    x0 = np.asarray(sc["x0"], dtype=float)
    dets, starts, inj = [], [], []
    for path in paths:
        prob = se.SdeProblem(tr, path, x0, sc["T"], sc["dt"], tol=sc["picard_tol"])
        _, J, _ = se.flow_jacobian(prob, x0, h=sc["flow_h"])
        dets.append(float(np.linalg.det(J).min()))
        starts.append(float(np.abs(J[0] - np.eye(grid.d)).max()))
        e = np.zeros(grid.d)
        e[0] = 1e-2
        inj.append(se.injectivity_gap(prob, x0, x0 + e))
    semi = se.semigroup_check(se.SdeProblem(tr, paths[0], x0, sc["T"], sc["dt"]), int(0.3 / sc["dt"]))
    report = {"r0": r0, "R": spec.R, "det_min": min(dets), "dets": dets, "grad_X0_error": max(starts),
              "injectivity_min_gap": min(inj), "semigroup_error": semi,
              "spline_discrepancy": tr.spline_discrepancy}
    # restarting re-evaluates u spectrally, so the gap cannot beat the interpolant
    semi_tol = max(1e-6, 10 * tr.spline_discrepancy)
    checks = {"a4": spec.R <= r0, "det_positive": min(dets) > 0, "grad_X0_identity": max(starts) == 0.0,
              "injective": min(inj) > 0, "semigroup": semi <= semi_tol}
    return _result(report, checks)


def malliavin(cfg):
    spec, quad, grid, sigma, b, tr = _setup(cfg)
    mc = cfg["malliavin"]
    sc = cfg["sde"]
    T = mc["T"]
    eps = cfg["measure"]["eps"]
    paths = _paths(cfg, spec, mc["paths"], T, salt=2)
    x0 = np.asarray(sc["x0"], dtype=float)
    rng = np.random.default_rng(cfg["master_seed"] + 3)
    gaps = []
    for s in range(mc["samples"]):
        path = paths[s % len(paths)]
        prob = se.SdeProblem(tr, path, x0, T, sc["dt"], tol=sc["picard_tol"])
        r = float(rng.uniform(0.05, 0.95) * T)
        radius = float(rng.uniform(max(eps * 1.01, 0.05), spec.R))
        z = radius * _direction(spec, rng)
        _, Di, _ = se.malliavin_insertion(prob, r, z)
        _, Dr, _ = se.malliavin_recursive(prob, r, z)
        gaps.append(float(np.abs(Di - Dr[0]).max() / (1 + np.linalg.norm(z))))
    keep = (quad.radii > eps) & (quad.radii <= spec.R)
    prob = se.SdeProblem(tr, paths[0], x0, T, sc["dt"], tol=sc["picard_tol"])
    rep = se.derivative_bound_report(prob, paths, [r * T for r in mc["r_grid"]], quad.nodes[keep],
                                     quad.weights[keep])
    report = {"route_gaps": gaps, "bound": rep}
    checks = {"routes_agree": max(gaps) <= 1e-4, "bounded_in_n": rep["bounded_in_n"],
              "uniform_in_r": rep["uniform_in_r"]}
    return _result(report, checks)


def _direction(spec, rng):
    d = spec.d
    if d == 1:
        return np.array([1.0 if rng.random() < 0.5 else -1.0])
    if spec.kind == "isotropic":
        a = rng.uniform(0, 2 * np.pi)
        return np.array([np.cos(a), np.sin(a)])
    e = np.zeros(d)
    e[rng.integers(d)] = 1.0 if rng.random() < 0.5 else -1.0
    return e


def pbp_pipeline(cfg):
    spec = build_spec(cfg)
    grid = build_grid(cfg)
    pc = cfg["pbp"]
    paths = _paths(cfg, spec, pc["paths"], pc["T"], salt=4)
    x0 = np.asarray(cfg["sde"]["x0"], dtype=float)
    b = ft.holder_sample(pc["beta"], grid, cfg["master_seed"], amplitude=pc["amplitude"], ncomp=grid.d)
    rep = pbp.uniqueness_experiment(b, paths, x0, pc["dt"], pc["T"], refinements=pc["refinements"],
                                    tol=pc["tolerance"], alpha=spec.alpha, beta=pc["beta"])
    zero = pbp.uniqueness_experiment(np.zeros(grid.d), paths[:2], x0, pc["dt"], pc["T"], refinements=1)
    v = np.full(grid.d, 0.3)
    const_err = 0.0
    for s in pbp.SCHEMES:
        run = pbp.solve_random_ode(v, paths[0], x0, s, pc["dt"], T=pc["T"])
        const_err = max(const_err, float(np.abs(run.z - (x0 + run.t[:, None] * v)).max()))
    report = {"experiment": rep, "zero_drift_worst": zero["worst_pair"], "constant_drift_error": const_err}
    checks = {"verdict": rep["verdict"] == "consistent-with-uniqueness", "zero_drift": zero["worst_pair"] == 0.0,
              "constant_drift": const_err <= 1e-12, "probe": max(rep["probe_changes"]) <= 1e-12}
    return _result(report, checks, {"pbp.json": json.dumps(rep, sort_keys=True, indent=1)})


PIPELINES = {
    "certify-measure": certify_measure,
    "sample-path": sample_path,
    "lp-suite": lp_suite,
    "bernstein": bernstein,
    "commutator": commutator,
    "resolvent": resolvent,
    "zvonkin": zvonkin,
    "sde": sde,
    "flow": flow,
    "malliavin": malliavin,
    "pbp": pbp_pipeline,
}
