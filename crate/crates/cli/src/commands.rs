use std::time::Instant;

use dirichlet_lab::capacity::{brute_force_capacity, cap_ap, CapacityOptions};
use dirichlet_lab::chain::{mc_potential, mc_solution_check, ChainSpec, McOptions};
use dirichlet_lab::kato::{kato_report, ConvexMap};
use dirichlet_lab::measure::SignedMeasure;
use dirichlet_lab::nonlinearity::Nonlinearity;
use dirichlet_lab::operator::{
    build_grid_operator, fractional_power, random_operator, validate_dirichlet, DirichletOperator,
};
use dirichlet_lab::refine::{
    capacity_scaling_study, conjugate_exponent, reduced_mass_estimate, Column, StudyTable,
};
use dirichlet_lab::solver::{solve_semilinear, truncation_reduce, SolverOptions};
use dirichlet_lab::{audit_estimates, LabError};
use nalgebra::DVector;
use serde_json::json;

use crate::config::{self, ExperimentConfig, NonlinearityKindSpec, OperatorKindSpec, RhoSpec};
use crate::report::{self, to_value, Outcome};
use crate::Flags;

type Res<T> = Result<T, String>;

fn lab<T>(r: Result<T, LabError>) -> Res<T> {
    r.map_err(|e| e.to_string())
}

/// Runs one subcommand; `Ok(pass)` once every artifact is on disk.
pub fn run(command: &str, flags: &Flags) -> Res<bool> {
    let mut cfg = config::load_file(flags.config.as_deref(), &flags.overrides)?;
    apply_flags(command, flags, &mut cfg);
    let start = Instant::now();
    let mut outcome = match command {
        "solve" => solve(&cfg, flags.oracle)?,
        "reduce" => reduce(&cfg)?,
        "audit" => audit(&cfg)?,
        "kato" => kato(&cfg)?,
        "capacity" => capacity(&cfg)?,
        "mc-check" => mc_check(&cfg)?,
        "collapse" => collapse(&cfg)?,
        "cap-scaling" => cap_scaling(&cfg)?,
        other => return Err(format!("unknown command {other}")),
    };
    if flags.no_timestamp {
        zero_runtimes(&mut outcome.result);
        for row in outcome.table.iter_mut().flatten() {
            row.runtime_s = 0.0;
        }
    }
    let written = report::write(command, &cfg, &outcome, start.elapsed().as_secs_f64(), flags.no_timestamp)
        .map_err(|e| format!("cannot write report: {e}"))?;
    for f in &written.files {
        println!("{}", f.display());
    }
    for (name, pass) in &outcome.checks {
        if !pass {
            eprintln!("check failed: {name}");
        }
    }
    Ok(outcome.pass())
}

fn apply_flags(command: &str, flags: &Flags, cfg: &mut ExperimentConfig) {
    if let Some(out) = &flags.out {
        cfg.output.dir = out.clone();
    }
    if let Some(set) = &flags.set {
        cfg.capacity.set = set.clone();
    }
    if let Some(p) = flags.p {
        match command {
            "capacity" | "cap-scaling" => cfg.capacity.p = Some(p),
            "collapse" => cfg.study.p = p,
            _ => cfg.nonlinearity.p = p,
        }
    }
    if flags.oracle {
        cfg.capacity.oracle = true;
    }
    if let Some(paths) = flags.paths {
        cfg.mc.paths = paths;
    }
    if let Some(seed) = flags.seed {
        cfg.mc.seed = seed;
    }
    if let Some(start) = flags.start {
        cfg.mc.start = start;
    }
}

fn zero_runtimes(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, val) in map.iter_mut() {
                if k == "runtime_s" {
                    *val = json!(0.0);
                } else {
                    zero_runtimes(val);
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(zero_runtimes),
        _ => {}
    }
}

pub fn build_operator(cfg: &ExperimentConfig) -> Res<DirichletOperator<f64>> {
    let o = &cfg.operator;
    let h = o.h.unwrap_or(1.0 / (o.n as f64 + 1.0));
    match o.kind {
        OperatorKindSpec::Grid => lab(build_grid_operator(o.dim, o.n, h)),
        OperatorKindSpec::Fractional => lab(fractional_power(&lab(build_grid_operator(o.dim, o.n, h))?, o.alpha)),
        OperatorKindSpec::Random => lab(random_operator(o.n, o.edge_prob, o.seed)),
        OperatorKindSpec::MatrixFile => {
            let path = o.file.as_ref().ok_or("operator.kind = \"matrix-file\" needs operator.file")?;
            let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            lab(DirichletOperator::from_json(&text))
        }
    }
}

fn build_measure(cfg: &ExperimentConfig, op: &DirichletOperator<f64>) -> Res<SignedMeasure<f64>> {
    match (&cfg.measure.atoms, &cfg.measure.density) {
        (Some(_), Some(_)) => Err("measure.atoms and measure.density are exclusive".into()),
        (Some(a), None) => lab(SignedMeasure::parse_sparse(op.space(), a)),
        (None, Some(d)) => lab(SignedMeasure::from_density(op.space(), &DVector::from_column_slice(d))),
        (None, None) => Ok(SignedMeasure::zero(op.space())),
    }
}

fn build_nonlinearity(cfg: &ExperimentConfig) -> Res<Nonlinearity<f64>> {
    let s = &cfg.nonlinearity;
    match s.kind {
        NonlinearityKindSpec::Zero => Ok(Nonlinearity::zero()),
        NonlinearityKindSpec::Power => lab(Nonlinearity::power(s.c, s.p)),
        NonlinearityKindSpec::Exponential => lab(Nonlinearity::exponential(s.c1, s.c2)),
    }
}

fn solver_options(cfg: &ExperimentConfig) -> SolverOptions<f64> {
    SolverOptions { tol: cfg.solver.tol, max_iter: cfg.solver.max_iter, ..Default::default() }
}

fn capacity_options(cfg: &ExperimentConfig) -> CapacityOptions {
    CapacityOptions { max_iter: cfg.capacity.max_iter, gap_tol: cfg.capacity.gap_tol }
}

fn rho(spec: RhoSpec, op: &DirichletOperator<f64>) -> Res<DVector<f64>> {
    match spec {
        RhoSpec::R1 => lab(op.r1()),
        RhoSpec::One => Ok(DVector::from_element(op.len(), 1.0)),
    }
}

/// Operator with its validation recorded as a check.
fn validated(cfg: &ExperimentConfig, outcome: &mut Outcome) -> Res<DirichletOperator<f64>> {
    let op = build_operator(cfg)?;
    let report = validate_dirichlet(&op);
    outcome.check("operator_valid", report.all_pass());
    outcome.result["operator_validation"] = to_value(&report);
    Ok(op)
}

fn vec_json(v: &DVector<f64>) -> serde_json::Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

/// Root of `-A u = f(u) + μ/m` on a one-state space by bisection.
fn scalar_oracle(op: &DirichletOperator<f64>, f: &Nonlinearity<f64>, mu: &SignedMeasure<f64>) -> f64 {
    let a = -op.matrix()[(0, 0)];
    let rhs = mu.atoms()[0] / op.weights()[0];
    let g = |u: f64| a * u - f.eval(0, u) - rhs;
    let mut lo = -1.0;
    while g(lo) > 0.0 {
        lo *= 2.0;
    }
    let mut hi = 1.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn solve(cfg: &ExperimentConfig, oracle: bool) -> Res<Outcome> {
    let mut out = Outcome { result: json!({}), ..Default::default() };
    let op = validated(cfg, &mut out)?;
    let mu = build_measure(cfg, &op)?;
    let f = build_nonlinearity(cfg)?;
    let report = lab(solve_semilinear(&op, &f, &mu, &solver_options(cfg)))?;
    out.check("residual", report.residual_inf <= report.tol);
    out.result["solve"] = report.to_json_value();
    out.result["tol"] = json!(report.tol);
    if oracle {
        if op.len() == 1 {
            let root = scalar_oracle(&op, &f, &mu);
            let err = (report.u[0] - root).abs();
            out.check("scalar_oracle", err <= 1e-9 * (1.0 + root.abs()));
            out.result["oracle"] = json!({ "kind": "scalar bisection", "u": root, "abs_error": err });
        } else {
            out.result["oracle"] = json!({ "kind": "none", "note": "no brute-force solver oracle beyond one state" });
        }
    }
    Ok(out)
}

fn reduce(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome { result: json!({}), ..Default::default() };
    let op = validated(cfg, &mut out)?;
    let mu = build_measure(cfg, &op)?;
    let f = build_nonlinearity(cfg)?;
    let t = lab(truncation_reduce(&op, &f, &mu, cfg.solver.schedule.as_deref(), &solver_options(cfg)))?;
    let tv = mu.total_variation();
    out.check("converged", t.converged);
    out.check("monotone", t.monotone);
    out.check("concentrated_defect", t.concentrated_defect <= 1e-8 * tv);
    out.result["reduce"] = json!({
        "levels": t.levels,
        "iterates": t.iterates.iter().map(vec_json).collect::<Vec<_>>(),
        "u_star": vec_json(&t.u_star),
        "mu": vec_json(mu.atoms()),
        "mu_star": vec_json(t.mu_star.atoms()),
        "concentrated_defect": t.concentrated_defect,
        "integrability_proxy": t.integrability_proxy,
        "integrability_sup": t.integrability_sup,
        "integrability_stabilized": t.integrability_stabilized,
        "monotone": t.monotone,
        "last_increment": t.last_increment,
        "tol_trunc": t.tol_trunc,
        "converged": t.converged,
        "degenerate": "on a finite space every measure is good: mu* = mu and the lattice identities hold through it",
    });
    Ok(out)
}

fn audit(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome { result: json!({}), ..Default::default() };
    let op = validated(cfg, &mut out)?;
    let mu = build_measure(cfg, &op)?;
    let f = build_nonlinearity(cfg)?;
    let mut measures = vec![mu.clone(), mu.jordan().0];
    for text in &cfg.audit.measures {
        measures.push(lab(SignedMeasure::parse_sparse(op.space(), text))?);
    }
    let opts = solver_options(cfg);
    let mut pairs = Vec::with_capacity(measures.len());
    for m in measures {
        let u = lab(solve_semilinear(&op, &f, &m, &opts))?.u;
        pairs.push((m, u));
    }
    let rho = rho(cfg.audit.rho, &op)?;
    let audit = lab(audit_estimates(&op, &f, &pairs, Some(&rho)))?;
    out.check("estimates", audit.all_pass());
    out.result["measures"] = json!(pairs.iter().map(|(m, _)| vec_json(m.atoms())).collect::<Vec<_>>());
    out.result["solutions"] = json!(pairs.iter().map(|(_, u)| vec_json(u)).collect::<Vec<_>>());
    out.result["audit"] = to_value(&audit);
    Ok(out)
}

fn parse_map(text: &str) -> Res<ConvexMap<f64>> {
    match text.split_once(':') {
        None if text == "positive-part" => Ok(ConvexMap::positive_part()),
        None if text == "absolute-value" => Ok(ConvexMap::absolute_value()),
        Some(("shifted-positive-part", c)) => {
            let c: f64 = c.trim().parse().map_err(|_| format!("bad shift in {text:?}"))?;
            lab(ConvexMap::shifted_positive_part(c))
        }
        _ => Err(format!("unknown convex map {text:?}")),
    }
}

fn kato(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome { result: json!({}), ..Default::default() };
    let op = validated(cfg, &mut out)?;
    let mu = build_measure(cfg, &op)?;
    let maps = cfg.kato.maps.iter().map(|m| parse_map(m)).collect::<Res<Vec<_>>>()?;
    let u = lab(op.potential_atoms(mu.atoms()))?;
    let rho = rho(cfg.kato.rho, &op)?;
    let report = lab(kato_report(&op, &u, &mu, &maps, Some(&rho)))?;
    for (name, entry) in &report.audit.entries {
        if name.starts_with("convex_bound") && !cfg.kato.total_variation_bound {
            continue;
        }
        out.check(name, entry.pass);
    }
    out.result["u"] = vec_json(&u);
    out.result["kato"] = to_value(&report);
    Ok(out)
}

fn capacity(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome { result: json!({}), ..Default::default() };
    let op = validated(cfg, &mut out)?;
    let p = cfg.capacity.p.unwrap_or(2.0);
    let cap = lab(cap_ap(&op, &cfg.capacity.set, p, &capacity_options(cfg)))?;
    out.check("duality_gap", cap.gap <= cfg.capacity.gap_tol);
    out.result["p"] = json!(p);
    out.result["set"] = json!(cfg.capacity.set);
    out.result["capacity"] = to_value(&cap);
    out.result["iterations"] = json!(cap.iterations);
    if cfg.capacity.oracle {
        if op.len() <= 3 {
            let brute = lab(brute_force_capacity(&op, &cfg.capacity.set, p, cfg.capacity.oracle_resolution))?;
            let rel = if brute > 0.0 { (cap.value - brute).abs() / brute } else { cap.value.abs() };
            out.check("brute_force_oracle", rel <= 1e-2);
            out.result["oracle"] = json!({ "kind": "grid search", "value": brute, "rel_error": rel });
        } else {
            out.result["oracle"] = json!({ "kind": "none", "note": "grid search is limited to three states" });
        }
    }
    Ok(out)
}

fn mc_check(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome { result: json!({}), ..Default::default() };
    let op = validated(cfg, &mut out)?;
    let mu = build_measure(cfg, &op)?;
    let f = build_nonlinearity(cfg)?;
    let u = lab(solve_semilinear(&op, &f, &mu, &solver_options(cfg)))?.u;
    let opts = McOptions { paths: cfg.mc.paths, seed: cfg.mc.seed };
    let check = lab(mc_solution_check(&op, &u, &f, &mu, cfg.mc.start, &opts))?;
    let spec = lab(ChainSpec::from_operator(&op))?;
    let r1 = lab(op.r1())?[cfg.mc.start];
    let lifetime = lab(mc_potential(&spec, &vec![1.0; op.len()], cfg.mc.start, cfg.mc.paths, cfg.mc.seed))?;
    out.check("representation", check.representation_pass);
    out.check("decay", check.decay_pass);
    out.check("lifetime", lifetime.within(r1, 3.0));
    out.result["u"] = vec_json(&u);
    out.result["solution_check"] = to_value(&check);
    out.result["lifetime"] = json!({
        "estimate": lifetime,
        "exact": r1,
        "z": lifetime.z_score(r1),
    });
    Ok(out)
}

fn table_artifacts(out: &mut Outcome, table: &StudyTable, columns: &[Column]) {
    out.table = Some(table.csv_rows(false));
    for &c in columns {
        out.curves.push((c.name().to_string(), table.curve_dat(c)));
    }
}

fn expect(out: &mut Outcome, cfg: &ExperimentConfig, verdict: &serde_json::Value) {
    if let Some(want) = &cfg.study.expect {
        out.check("expected_verdict", verdict.as_str() == Some(want.as_str()));
    }
}

fn collapse(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome { result: json!({}), ..Default::default() };
    let s = &cfg.study;
    let (reduced, study) = lab(reduced_mass_estimate(&s.family, s.p, s.c, &s.thresholds, &solver_options(cfg)))?;
    out.check("table_complete", study.table.is_complete());
    let balance = study.table.rows.iter().all(|r| r.balance_error.is_some_and(|e| e <= 1e-6 * s.family.mass.abs()));
    out.check("mass_balance", balance);
    let verdict = to_value(&study.verdict);
    expect(&mut out, cfg, &verdict);
    table_artifacts(&mut out, &study.table, &[Column::ProbeMax, Column::Retained, Column::SupU]);
    out.result["verdict"] = verdict;
    out.result["study"] = to_value(&study);
    out.result["reduced_mass"] = to_value(&reduced);
    out.result["critical_exponent"] = json!(dirichlet_lab::refine::critical_exponent(s.family.dim, s.family.alpha));
    Ok(out)
}

fn cap_scaling(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome { result: json!({}), ..Default::default() };
    let s = &cfg.study;
    let p = cfg.capacity.p.unwrap_or_else(|| conjugate_exponent(s.p));
    let study = lab(capacity_scaling_study(&s.family, p, s.target, &s.thresholds, &capacity_options(cfg)))?;
    out.check("table_complete", study.table.is_complete());
    let verdict = to_value(&study.verdict);
    expect(&mut out, cfg, &verdict);
    table_artifacts(&mut out, &study.table, &[Column::Cap]);
    out.result["verdict"] = verdict;
    out.result["study"] = to_value(&study);
    Ok(out)
}
