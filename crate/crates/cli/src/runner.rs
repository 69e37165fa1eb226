//! One function per experiment: validate the scenario, run the module
//! operation, write CSV artifacts, and record pass/fail checks.

use std::path::Path;

use anyhow::{anyhow, bail};

use jumplab_core::chain::{
    assemble_generator, build_conductances, dirichlet_form, AdjacentPolicy, ConductanceMatrix,
    GeneratorMatrix, GeneratorMode, Lattice,
};
use jumplab_core::convergence::{
    self, bump, default_pair_dictionary, resolvent_convergence, semigroup_convergence,
};
use jumplab_core::functionals::{self, LOptions};
use jumplab_core::kernels::{verify_bounds, KernelSpec, SamplingPlan};
use jumplab_core::operators;
use jumplab_core::pathsim;
use jumplab_core::point::{BoxBounds, Point};
use jumplab_core::stats;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_mode, parse_point, parse_policy, ScenarioConfig};
use crate::output::{Check, OutDir};

pub struct Scenario<'a> {
    pub cfg: &'a ScenarioConfig,
    pub config_dir: &'a Path,
    pub seed: u64,
    pub out: &'a OutDir,
}

impl Scenario<'_> {
    fn lattice(&self) -> anyhow::Result<Lattice> {
        let lc = self
            .cfg
            .lattice
            .as_ref()
            .ok_or_else(|| anyhow!("this experiment needs a [lattice] table"))?;
        let bbox = BoxBounds::cube(self.cfg.kernel.dimension, lc.bounds[0], lc.bounds[1])?;
        Ok(Lattice::build(self.cfg.kernel.dimension, lc.n, bbox)?)
    }

    fn chain(
        &self,
        spec: &KernelSpec,
        quad_order: usize,
        mode: GeneratorMode,
        policy: AdjacentPolicy,
    ) -> anyhow::Result<(ConductanceMatrix, GeneratorMatrix)> {
        let lattice = self.lattice()?;
        let c = build_conductances(spec, &lattice, quad_order, policy)?;
        let a = assemble_generator(&c, mode, spec)?;
        Ok((c, a))
    }
}

/// Dispatch; returns overall pass/fail of the experiment's checks.
pub fn run_experiment(name: &str, sc: &Scenario) -> anyhow::Result<bool> {
    match name {
        "kernel-verify" => kernel_verify(sc),
        "functionals" => functionals_experiment(sc),
        "chain-build" => chain_build(sc),
        "exit-mc" => exit_mc(sc),
        "mean-exit-mc" => mean_exit_mc(sc),
        "levy-check" => levy_check(sc),
        "heat-kernel" => heat_kernel_experiment(sc),
        "resolvent-check" => resolvent_check(sc),
        "harmonic" => harmonic_experiment(sc),
        "holder" => holder_experiment(sc),
        "uic-check" => uic_check(sc),
        "weak-probe" => weak_probe(sc),
        "converge" => converge(sc),
        other => bail!("unknown experiment `{other}`"),
    }
}

fn kernel_verify(sc: &Scenario) -> anyhow::Result<bool> {
    let cfg = sc
        .cfg
        .experiments
        .kernel_verify
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [experiments.kernel-verify] table"))?;
    let spec = sc.cfg.build_kernel(sc.config_dir)?;
    if spec.order_field().is_some() {
        eprintln!(
            "note: the order-field modulus is checked in the form c / log(2/|x-y|) at separations below one"
        );
    }
    let plan = SamplingPlan {
        grid_points: cfg.grid_points,
        random_pairs: cfg.random_pairs,
        seed: sc.seed,
        center: parse_point(&cfg.center)?,
        radius: cfg.radius,
        delta_levels: cfg.delta_levels,
        sample_halfwidth: 2.0,
    };
    let report = verify_bounds(&spec, &plan)?;
    sc.out.write_csv(
        "bounds_report.csv",
        "check,pass,worst_ratio,witness_value,bound_value",
        &report.checks,
        |c| {
            format!(
                "{},{},{},{},{}",
                c.name, c.pass, c.worst_ratio, c.witness_value, c.bound_value
            )
        },
    )?;
    let checks: Vec<Check> = report
        .checks
        .iter()
        .map(|c| {
            Check::new(
                format!("bounds:{}", c.name),
                c.pass,
                format!("worst ratio {}", c.worst_ratio),
            )
        })
        .collect();
    sc.out.write_summary("kernel-verify", sc.seed, &checks)
}

fn functionals_experiment(sc: &Scenario) -> anyhow::Result<bool> {
    let cfg = sc
        .cfg
        .experiments
        .functionals
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [experiments.functionals] table"))?;
    let spec = sc.cfg.build_kernel(sc.config_dir)?;
    let order = spec
        .order_field()
        .copied()
        .ok_or_else(|| anyhow!("the functionals experiment needs a variable-order kernel"))?;
    let z0 = parse_point(&cfg.z0)?;
    let opts = LOptions::default();
    let report = functionals::order_comparability(&spec, &z0, &cfg.r_grid, cfg.threshold, &opts)?;
    sc.out.write_csv(
        "comparability.csv",
        "r,L,compensated,quadrature_error",
        &report.rows,
        |r| {
            format!(
                "{},{},{},{}",
                r.r, r.l_value, r.compensated, r.quadrature_error
            )
        },
    )?;
    let mut checks = vec![Check::new(
        "comparability-ratio",
        report.pass,
        format!("max/min {} vs threshold {}", report.ratio, report.threshold),
    )];
    // Annulus floor under the declared local lower bound, order-adjusted.
    let kappa4_eff = spec.bounds.kappa4 * (-order.log_lip_c).exp();
    let mut floor_ok = true;
    for row in &report.rows {
        let alpha_r = order.min_on_ball(&z0, 3.0 * row.r, opts.grid_per_axis);
        let bound = functionals::l_lower_bound(spec.dimension, kappa4_eff, alpha_r, row.r);
        floor_ok &= row.l_value >= bound;
    }
    checks.push(Check::new(
        "annulus-floor",
        floor_ok,
        "L(z0, r) dominates the local annulus mass",
    ));
    sc.out.write_summary("functionals", sc.seed, &checks)
}

fn chain_build(sc: &Scenario) -> anyhow::Result<bool> {
    let cfg = sc
        .cfg
        .experiments
        .chain_build
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [experiments.chain-build] table"))?;
    let spec = sc.cfg.build_kernel(sc.config_dir)?;
    let mode = parse_mode(&cfg.mode)?;
    let policy = parse_policy(&cfg.adjacent_policy)?;
    let (c, a) = sc.chain(&spec, cfg.quad_order, mode, policy)?;
    let mut buf = Vec::new();
    c.write_csv(&mut buf)?;
    sc.out
        .write_text("conductance.csv", &String::from_utf8(buf)?)?;
    let mut buf = Vec::new();
    a.write_csv(&mut buf)?;
    sc.out
        .write_text("generator.csv", &String::from_utf8(buf)?)?;

    let mut checks = Vec::new();
    let rows_ok = match mode {
        GeneratorMode::ConservativeTruncated => (0..a.num_sites()).all(|i| a.row_sum(i) == 0.0),
        GeneratorMode::Killed => (0..a.num_sites()).all(|i| a.row_sum(i) <= 0.0),
    };
    checks.push(Check::new(
        "row-sums",
        rows_ok,
        format!("mode {}", mode.label()),
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let n = a.num_sites();
    let mut adjoint_ok = true;
    for _ in 0..10 {
        let f: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let lhs = a.inner(&a.apply(&f), &g);
        let rhs = a.inner(&f, &a.apply(&g));
        adjoint_ok &= (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1e-300);
    }
    checks.push(Check::new(
        "self-adjoint",
        adjoint_ok,
        "pairing symmetric on random functions",
    ));
    let mut form_ok = true;
    for _ in 0..5 {
        let f: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        form_ok &= dirichlet_form(&c, &f, &f) >= 0.0;
    }
    checks.push(Check::new(
        "form-nonnegative",
        form_ok,
        "energy of random functions",
    ));
    sc.out.write_summary("chain-build", sc.seed, &checks)
}

struct ExitRow {
    r: f64,
    t: f64,
    estimate: f64,
    stderr: f64,
    n: usize,
    seed: u64,
    l_value: f64,
    ratio: f64,
}

fn exit_mc(sc: &Scenario) -> anyhow::Result<bool> {
    let cfg = sc
        .cfg
        .experiments
        .exit_mc
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [experiments.exit-mc] table"))?;
    let spec = sc.cfg.build_kernel(sc.config_dir)?;
    let x0_pt = parse_point(&cfg.x0)?;
    // Validate every precondition before any computation.
    let mut violations = Vec::new();
    let lattice = sc.lattice()?;
    for &r in &cfg.r_grid {
        if lattice.bbox.margin(&x0_pt) < r * 1.05 {
            violations.push(format!(
                "ball of radius {r} around {:?} leaves the box",
                x0_pt.coords()
            ));
        }
        if !(r > 0.0 && r < 1.0) {
            violations.push(format!("radius {r} outside (0, 1)"));
        }
    }
    if cfg.paths < 100 {
        violations.push(format!("need at least 100 paths, got {}", cfg.paths));
    }
    if !violations.is_empty() {
        bail!("{}", violations.join("; "));
    }
    let (_, a) = sc.chain(
        &spec,
        cfg.quad_order,
        GeneratorMode::Killed,
        AdjacentPolicy::MomentMatched,
    )?;
    let x0 = a.lattice.nearest_site(&x0_pt);
    let opts = LOptions::default();
    let mut rows: Vec<ExitRow> = Vec::new();
    let mut monotone = true;
    let mut finite = true;
    for &r in &cfg.r_grid {
        let grid = pathsim::exit_prob_grid(&a, x0, r, &cfg.t_grid, cfg.paths, sc.seed)?;
        let l_value = functionals::compute_l(&spec, &x0_pt, r, spec.bounds.alpha, &opts)?.value;
        for w in grid.windows(2) {
            monotone &= w[1].probability >= w[0].probability;
        }
        for e in &grid {
            let ratio = if e.t > 0.0 {
                e.probability / (e.t * l_value)
            } else {
                0.0
            };
            finite &= ratio.is_finite();
            rows.push(ExitRow {
                r,
                t: e.t,
                estimate: e.probability,
                stderr: e.stderr,
                n: e.samples,
                seed: e.seed,
                l_value,
                ratio,
            });
        }
    }
    sc.out.write_csv(
        "exit_mc.csv",
        "r,t,estimate,stderr,N,seed,L_value,ratio",
        &rows,
        |e| {
            format!(
                "{},{},{},{},{},{},{},{}",
                e.r, e.t, e.estimate, e.stderr, e.n, e.seed, e.l_value, e.ratio
            )
        },
    )?;
    if let Some(k) = cfg.dump_paths {
        let engine = pathsim::PathEngine::new(&a);
        let t_max = cfg.t_grid.iter().cloned().fold(0.0f64, f64::max);
        let mut dump = Vec::new();
        for p in 0..k {
            let mut rng = pathsim::path_rng(sc.seed, p as u64);
            let path = engine.simulate(x0, t_max, &mut rng);
            dump.push((p, 0.0, path.start));
            for e in &path.events {
                dump.push((p, e.time, e.site));
            }
        }
        sc.out
            .write_csv("paths.csv", "path,time,site", &dump, |(p, t, s)| {
                format!("{p},{t},{s}")
            })?;
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0f64, f64::max);
    let checks = vec![
        Check::new("estimates-monotone-in-t", monotone, "coupled paths"),
        Check::new("ratios-finite", finite, format!("sup ratio {max_ratio}")),
        Check::new(
            "probabilities-in-range",
            rows.iter().all(|r| (0.0..=1.0).contains(&r.estimate)),
            "binomial estimates",
        ),
    ];
    sc.out.write_summary("exit-mc", sc.seed, &checks)
}

fn mean_exit_mc(sc: &Scenario) -> anyhow::Result<bool> {
    let cfg = sc
        .cfg
        .experiments
        .mean_exit_mc
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [experiments.mean-exit-mc] table"))?;
    let spec = sc.cfg.build_kernel(sc.config_dir)?;
    let x0_pt = parse_point(&cfg.x0)?;
    let (_, a) = sc.chain(
        &spec,
        cfg.quad_order,
        GeneratorMode::Killed,
        AdjacentPolicy::MomentMatched,
    )?;
    let x0 = a.lattice.nearest_site(&x0_pt);
    let mut rows = Vec::new();
    for &r in &cfg.r_grid {
        let t_cap = 100.0 * r.powf(spec.bounds.beta1);
        rows.push(pathsim::estimate_mean_exit(
            &a, x0, r, cfg.paths, sc.seed, t_cap,
        )?);
    }
    sc.out.write_csv(
        "mean_exit.csv",
        "r,mean,stderr,N,censored,flagged",
        &rows,
        |e| {
            format!(
                "{},{},{},{},{},{}",
                e.r, e.mean, e.stderr, e.samples, e.censored, e.flagged
            )
        },
    )?;
    let log_r: Vec<f64> = rows.iter().map(|e| e.r.ln()).collect();
    let log_tau: Vec<f64> = rows.iter().map(|e| e.mean.ln()).collect();
    let fit = stats::linear_fit(&log_r, &log_tau);
    let mut checks = vec![
        Check::new(
            "censoring",
            rows.iter().all(|e| !e.flagged),
            format!(
                "max censored {}",
                rows.iter().map(|e| e.censored).max().unwrap_or(0)
            ),
        ),
        Check::new(
            "scaling-exponent",
            (fit.slope - spec.bounds.alpha).abs() <= cfg.slope_tolerance,
            format!("slope {} vs alpha {}", fit.slope, spec.bounds.alpha),
        ),
    ];
    let mut grows = true;
    for w in rows.windows(2) {
        let joint = (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
        grows &= w[1].mean >= w[0].mean - 3.0 * joint;
    }
    checks.push(Check::new("mean-grows-with-radius", grows, "nested balls"));
    sc.out.write_summary("mean-exit-mc", sc.seed, &checks)
}

fn levy_check(sc: &Scenario) -> anyhow::Result<bool> {
    let cfg = sc
        .cfg
        .experiments
        .levy_check
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [experiments.levy-check] table"))?;
    let spec = sc.cfg.build_kernel(sc.config_dir)?;
    let (_, a) = sc.chain(
        &spec,
        cfg.quad_order,
        GeneratorMode::ConservativeTruncated,
        AdjacentPolicy::MomentMatched,
    )?;
    let functions: Vec<(&str, Box<dyn Fn(&Point, &Point) -> f64 + Sync>)> = vec![
        ("zero", Box::new(|_: &Point, _: &Point| 0.0)),
        (
            "square-capped",
            Box::new(|x: &Point, y: &Point| x.dist(y).powi(2).min(1.0)),
        ),
        (
            "far-indicator",
            Box::new(|x: &Point, y: &Point| if x.dist(y) > 0.5 { 1.0 } else { 0.0 }),
        ),
    ];
    struct Row {
        name: &'static str,
        report: pathsim::JumpIdentityReport,
    }
    let mut rows = Vec::new();
    for (name, f) in &functions {
        let report = pathsim::levy_system_check(&a, f.as_ref(), cfg.horizon, cfg.paths, sc.seed)?;
        rows.push(Row { name, report });
    }
    sc.out.write_csv(
        "levy.csv",
        "function,jump_sum_mean,jump_sum_stderr,integral_mean,integral_stderr,diff_mean,diff_stderr,pass",
        &rows,
        |r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.name,
                r.report.jump_sum_mean,
                r.report.jump_sum_stderr,
                r.report.integral_mean,
                r.report.integral_stderr,
                r.report.diff_mean,
                r.report.diff_stderr,
                r.report.pass
            )
        },
    )?;
    let mut checks: Vec<Check> = rows
        .iter()
        .map(|r| {
            Check::new(
                format!("identity:{}", r.name),
                r.report.pass,
                format!(
                    "diff {} (stderr {})",
                    r.report.diff_mean, r.report.diff_stderr
                ),
            )
        })
        .collect();
    let zero = &rows[0].report;
    checks.push(Check::new(
        "zero-function-exact",
        zero.jump_sum_mean == 0.0 && zero.integral_mean == 0.0,
        "both estimators vanish identically",
    ));
    sc.out.write_summary("levy-check", sc.seed, &checks)
}

fn heat_kernel_experiment(sc: &Scenario) -> anyhow::Result<bool> {
    let cfg = sc
        .cfg
        .experiments
        .heat_kernel
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [experiments.heat-kernel] table"))?;
    let spec = sc.cfg.build_kernel(sc.config_dir)?;
    let (_, a) = sc.chain(
        &spec,
        cfg.quad_order,
        GeneratorMode::ConservativeTruncated,
        AdjacentPolicy::MomentMatched,
    )?;
    let decomp = operators::spectral_decompose(&a)?;
    let p = operators::heat_kernel(&decomp, cfg.t)?;
    struct SliceRow {
        x: Vec<f64>,
        y: Vec<f64>,
        value: f64,
    }
    let mut rows = Vec::new();
    // slice_y holds concatenated coordinates, one chunk per slice point.
    for y_coords in cfg.slice_y.chunks(spec.dimension) {
        let y_pt = parse_point(y_coords)?;
        let y = a.lattice.nearest_site(&y_pt);
        for (i, pt) in a.lattice.sites() {
            rows.push(SliceRow {
                x: pt.coords().to_vec(),
                y: a.lattice.point(y).coords().to_vec(),
                value: p.value(i, y),
            });
        }
    }
    sc.out
        .write_csv("heat_kernel.csv", "x,y,value", &rows, |r| {
            format!(
                "{},{},{}",
                r.x.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
                r.y.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
                r.value
            )
        })?;
    let mut checks = Vec::new();
    checks.push(Check::new(
        "symmetry",
        p.max_asymmetry() <= 1e-10,
        format!("max asymmetry {}", p.max_asymmetry()),
    ));
    checks.push(Check::new(
        "nonnegative",
        p.min_entry() >= -1e-10,
        format!("min entry {}", p.min_entry()),
    ));
    let mass_ok = (0..p.size()).all(|x| match a.mode {
        GeneratorMode::ConservativeTruncated => (p.row_mass(x) - 1.0).abs() <= 1e-8,
        GeneratorMode::Killed => p.row_mass(x) <= 1.0 + 1e-8,
    });
    checks.push(Check::new(
        "row-mass",
        mass_ok,
        format!("mode {}", a.mode.label()),
    ));
    // Semigroup composition at half time.
    let ph = operators::heat_kernel(&decomp, 0.5 * cfg.t)?;
    let nu = a.lattice.site_mass();
    let mut ck_worst = 0.0f64;
    for x in (0..p.size()).step_by((p.size() / 16).max(1)) {
        for y in (0..p.size()).step_by((p.size() / 16).max(1)) {
            let mut acc = 0.0;
            for z in 0..p.size() {
                acc += ph.value(x, z) * ph.value(z, y);
            }
            ck_worst = ck_worst.max((acc * nu - p.value(x, y)).abs());
        }
    }
    checks.push(Check::new(
        "composition",
        ck_worst <= 1e-8,
        format!("worst gap {ck_worst}"),
    ));
    // Cross-method column comparison.
    let mut cross_worst = 0.0f64;
    for y in (0..p.size()).step_by((p.size() / 8).max(1)) {
        let mut delta = vec![0.0; p.size()];
        delta[y] = 1.0 / nu;
        let col = operators::semigroup_apply(&a, cfg.t, &delta)?;
        for x in 0..p.size() {
            cross_worst = cross_worst.max((col[x] - p.value(x, y)).abs());
        }
    }
    checks.push(Check::new(
        "cross-method",
        cross_worst <= 1e-8,
        format!("worst gap {cross_worst}"),
    ));
    sc.out.write_summary("heat-kernel", sc.seed, &checks)
}

fn resolvent_check(sc: &Scenario) -> anyhow::Result<bool> {
    let cfg = sc
        .cfg
        .experiments
        .resolvent_check
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [experiments.resolvent-check] table"))?;
    let spec = sc.cfg.build_kernel(sc.config_dir)?;
    let (c, a) = sc.chain(
        &spec,
        cfg.quad_order,
        GeneratorMode::ConservativeTruncated,
        AdjacentPolicy::MomentMatched,
    )?;
    let n = a.num_sites();
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let f: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let g: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let report = operators::verify_resolvent_identity(&c, &a, cfg.lambda, &f, &g)?;
    let u = operators::resolvent(&a, cfg.lambda, &f)?;
    struct Row {
        x: Vec<f64>,
        f: f64,
        u: f64,
    }
    let rows: Vec<Row> = a
        .lattice
        .sites()
        .map(|(i, pt)| Row {
            x: pt.coords().to_vec(),
            f: f[i],
            u: u[i],
        })
        .collect();
    sc.out.write_csv("resolvent.csv", "x,f,u", &rows, |r| {
        format!(
            "{},{},{}",
            r.x.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            r.f,
            r.u
        )
    })?;
    let mut checks = vec![Check::new(
        "energy-identity",
        report.pass,
        format!("relative discrepancy {}", report.rel_discrepancy),
    )];
    let ones = vec![1.0; n];
    let u1 = operators::resolvent(&a, cfg.lambda, &ones)?;
    let want = 1.0 / cfg.lambda;
    checks.push(Check::new(
        "constant-inverse",
        u1.iter().all(|v| (v - want).abs() <= 1e-12 * want),
        "resolvent of the constant function",
    ));
    let sup_f = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sup_u = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    checks.push(Check::new(
        "sup-contraction",
        sup_u <= sup_f / cfg.lambda * (1.0 + 1e-10),
        format!("{sup_u} vs {}", sup_f / cfg.lambda),
    ));
    sc.out.write_summary("resolvent-check", sc.seed, &checks)
}

fn harmonic_experiment(sc: &Scenario) -> anyhow::Result<bool> {
    let cfg = sc
        .cfg
        .experiments
        .harmonic
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [experiments.harmonic] table"))?;
    let spec = sc.cfg.build_kernel(sc.config_dir)?;
    let (_, a) = sc.chain(
        &spec,
        cfg.quad_order,
        GeneratorMode::Killed,
        AdjacentPolicy::MomentMatched,
    )?;
    let center = parse_point(&cfg.center)?;
    let n = a.num_sites();
    let boundary: Vec<f64> = match cfg.boundary.as_str() {
        "sign" => (0..n)
            .map(|i| a.lattice.point(i).coord(0).signum())
            .collect(),
        "constant" => vec![1.0; n],
        other => bail!("unknown boundary data `{other}` (sign | constant)"),
    };
    let sol = operators::solve_harmonic(&a, &center, cfg.radius, &boundary)?;
    struct Row {
        x: Vec<f64>,
        value: f64,
    }
    let rows: Vec<Row> = a
        .lattice
        .sites()
        .map(|(i, pt)| Row {
            x: pt.coords().to_vec(),
            value: sol.values[i],
        })
        .collect();
    sc.out.write_csv("harmonic.csv", "x,value", &rows, |r| {
        format!(
            "{},{}",
            r.x.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            r.value
        )
    })?;
    let lo = boundary
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let hi = boundary
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let max_principle = sol
        .interior
        .iter()
        .all(|&i| sol.values[i] >= lo && sol.values[i] <= hi);
    let ah = a.apply(&sol.values);
    let residual_ok = sol
        .interior
        .iter()
        .all(|&i| ah[i].abs() <= 1e-9 * a.total_rate(i).max(1.0));
    let x0 = a.lattice.nearest_site(&center);
    let t_scale = cfg.radius.powf(spec.bounds.alpha);
    let t_grid = [0.25 * t_scale, t_scale, 4.0 * t_scale];
    let mart = operators::martingale_check(&a, &sol, x0, &t_grid, cfg.martingale_paths, sc.seed)?;
    let checks = vec![
        Check::new(
            "maximum-principle",
            max_principle,
            format!("interior values within [{lo}, {hi}]"),
        ),
        Check::new(
            "interior-residual",
            residual_ok,
            "generator annihilates the solution inside",
        ),
        Check::new(
            "martingale",
            mart.pass,
            format!("means {:?} around {}", mart.means, mart.reference),
        ),
    ];
    sc.out.write_summary("harmonic", sc.seed, &checks)
}

fn holder_experiment(sc: &Scenario) -> anyhow::Result<bool> {
    let cfg = sc
        .cfg
        .experiments
        .holder
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [experiments.holder] table"))?;
    let spec = sc.cfg.build_kernel(sc.config_dir)?;
    let center = parse_point(&cfg.center)?;
    let policy = operators::PairPolicy::default();
    let mode = match cfg.target.as_str() {
        "harmonic" => GeneratorMode::Killed,
        _ => GeneratorMode::ConservativeTruncated,
    };
    let (_, a) = sc.chain(&spec, cfg.quad_order, mode, AdjacentPolicy::MomentMatched)?;
    let n = a.num_sites();
    let u: Vec<f64> = match cfg.target.as_str() {
        "harmonic" => {
            let boundary: Vec<f64> = (0..n)
                .map(|i| a.lattice.point(i).coord(0).signum())
                .collect();
            operators::solve_harmonic(&a, &center, cfg.radius, &boundary)?.values
        }
        "heat-kernel" => {
            let t = cfg
                .t
                .ok_or_else(|| anyhow!("holder target heat-kernel needs `t`"))?;
            let decomp = operators::spectral_decompose(&a)?;
            let p = operators::heat_kernel(&decomp, t)?;
            p.column(a.lattice.nearest_site(&center))
        }
        "resolvent" => {
            let lambda = cfg
                .lambda
                .ok_or_else(|| anyhow!("holder target resolvent needs `lambda`"))?;
            let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
            let f: Vec<f64> = (0..n)
                .map(|_| if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 })
                .collect();
            operators::resolvent(&a, lambda, &f)?
        }
        other => bail!("unknown holder target `{other}` (harmonic | heat-kernel | resolvent)"),
    };
    let fit = operators::holder_fit(&a, &u, &center, 0.5 * cfg.radius, &policy)?;
    #[derive(serde::Serialize)]
    struct HolderRecord {
        target: String,
        exponent: f64,
        constant: f64,
        residual: f64,
        pairs_used: usize,
    }
    let record = HolderRecord {
        target: cfg.target.clone(),
        exponent: fit.exponent,
        constant: fit.constant,
        residual: fit.residual,
        pairs_used: fit.pairs_used,
    };
    sc.out.write_text(
        "holder.json",
        &format!("{}\n", serde_json::to_string_pretty(&vec![record])?),
    )?;
    let checks = vec![Check::new(
        "positive-exponent",
        fit.exponent > 0.0,
        format!("exponent {} constant {}", fit.exponent, fit.constant),
    )];
    sc.out.write_summary("holder", sc.seed, &checks)
}

fn uic_check(sc: &Scenario) -> anyhow::Result<bool> {
    let cfg = sc
        .cfg
        .experiments
        .uic_check
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [experiments.uic-check] table"))?;
    let seq = sc.cfg.build_sequence(sc.config_dir)?;
    let etas: Vec<f64> = (0..=cfg.eta_levels)
        .map(|k| 0.5f64.powi(k as i32))
        .collect();
    let xs: Vec<Point> = cfg
        .x_samples
        .iter()
        .map(|c| parse_point(c))
        .collect::<anyhow::Result<_>>()?;
    let report = convergence::verify_uic(&seq, &etas, &xs)?;
    sc.out.write_csv(
        "uic.csv",
        "eta,far_tail_sup,near_moment_sup",
        &report.rows,
        |r| format!("{},{},{}", r.eta, r.far_tail_sup, r.near_moment_sup),
    )?;
    let checks = vec![
        Check::new(
            "columns-decreasing",
            report.decreasing,
            "both columns fall along the eta grid",
        ),
        Check::new(
            "columns-vanishing",
            report.vanishing,
            "final row below 10% of the first",
        ),
    ];
    // The eta grid is a finite certificate, not an almost-every statement.
    eprintln!("note: the eta grid samples finitely many cutoffs; the vanishing-limit claim is certified on those only");
    sc.out.write_summary("uic-check", sc.seed, &checks)
}

fn weak_probe(sc: &Scenario) -> anyhow::Result<bool> {
    let cfg = sc
        .cfg
        .experiments
        .weak_probe
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [experiments.weak-probe] table"))?;
    let seq = sc.cfg.build_sequence(sc.config_dir)?;
    let dict = default_pair_dictionary();
    let report = convergence::weak_convergence_probe(&seq, cfg.eta, &dict)?;
    struct Row {
        name: String,
        omega: f64,
        integral: f64,
        limit: f64,
        gap: f64,
    }
    let mut rows = Vec::new();
    for fr in &report.per_function {
        for r in &fr.rows {
            rows.push(Row {
                name: fr.name.clone(),
                omega: r.omega,
                integral: r.integral,
                limit: fr.limit_integral,
                gap: r.gap,
            });
        }
    }
    sc.out.write_csv(
        "weak_probe.csv",
        "function,omega,integral,limit_integral,gap",
        &rows,
        |r| {
            format!(
                "{},{},{},{},{}",
                r.name, r.omega, r.integral, r.limit, r.gap
            )
        },
    )?;
    let checks: Vec<Check> = report
        .per_function
        .iter()
        .map(|fr| {
            Check::new(
                format!("gap-decay:{}", fr.name),
                fr.pass,
                format!("limit integral {}", fr.limit_integral),
            )
        })
        .collect();
    sc.out.write_summary("weak-probe", sc.seed, &checks)
}

fn converge(sc: &Scenario) -> anyhow::Result<bool> {
    let cfg = sc
        .cfg
        .experiments
        .converge
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [experiments.converge] table"))?;
    let seq = sc.cfg.build_sequence(sc.config_dir)?;
    let lc = sc
        .cfg
        .lattice
        .as_ref()
        .ok_or_else(|| anyhow!("converge needs a [lattice] table"))?;
    let bbox = BoxBounds::cube(seq.limit.dimension, lc.bounds[0], lc.bounds[1])?;
    let compact = BoxBounds::cube(seq.limit.dimension, cfg.compact[0], cfg.compact[1])?;
    let mid = 0.5 * (cfg.compact[0] + cfg.compact[1]);
    let half = 0.5 * (cfg.compact[1] - cfg.compact[0]);
    let f = move |p: &Point| bump((p.coord(0) - mid) / half);

    let semi = semigroup_convergence(&seq, cfg.t, f, lc.n, &bbox, &compact, cfg.quad_order)?;
    let reso = resolvent_convergence(&seq, cfg.lambda, f, lc.n, &bbox, &compact, cfg.quad_order)?;
    let mut rows: Vec<(String, f64, f64, usize, f64)> = Vec::new();
    for r in &semi.rows {
        rows.push((
            "semigroup".into(),
            r.omega,
            r.sup_error,
            semi.resolution,
            semi.parameter,
        ));
    }
    for r in &reso.rows {
        rows.push((
            "resolvent".into(),
            r.omega,
            r.sup_error,
            reso.resolution,
            reso.parameter,
        ));
    }
    sc.out.write_csv(
        "converge.csv",
        "target,n_or_omega,sup_error,resolution,t_or_lambda",
        &rows,
        |r| format!("{},{},{},{},{}", r.0, r.1, r.2, r.3, r.4),
    )?;
    let mut checks = vec![
        Check::new(
            "semigroup-errors-decay",
            semi.pass,
            format!(
                "errors {:?}",
                semi.rows.iter().map(|r| r.sup_error).collect::<Vec<_>>()
            ),
        ),
        Check::new(
            "resolvent-errors-decay",
            reso.pass,
            format!(
                "errors {:?}",
                reso.rows.iter().map(|r| r.sup_error).collect::<Vec<_>>()
            ),
        ),
    ];
    if cfg.refine_check {
        let coarse_n = lc.n / 2;
        let semi_c =
            semigroup_convergence(&seq, cfg.t, f, coarse_n, &bbox, &compact, cfg.quad_order)?;
        let reso_c = resolvent_convergence(
            &seq,
            cfg.lambda,
            f,
            coarse_n,
            &bbox,
            &compact,
            cfg.quad_order,
        )?;
        let movement = |fine: &convergence::ConvergenceTable,
                        coarse: &convergence::ConvergenceTable| {
            fine.rows
                .iter()
                .zip(&coarse.rows)
                .map(|(a, b)| (a.sup_error - b.sup_error).abs() / a.sup_error.max(1e-12))
                .fold(0.0f64, f64::max)
        };
        let semi_move = movement(&semi, &semi_c);
        let reso_move = movement(&reso, &reso_c);
        checks.push(Check::new(
            "refinement-stability",
            semi_move < 0.25 && reso_move < 0.25,
            format!("movement semigroup {semi_move}, resolvent {reso_move}"),
        ));
    }
    sc.out.write_summary("converge", sc.seed, &checks)
}
