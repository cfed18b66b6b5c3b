use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use fkbridge::bridge::{pde_kernel_auto, solve_schrodinger_system_unchecked, transition_density_consistent};
use fkbridge::cases::{validate_case, CaseDefinition, CaseName, Quantity};
use fkbridge::diffusion::{empirical_density, estimate_moments, simulate_paths, Drift, SlicedDrift};
use fkbridge::io;
use fkbridge::kernel::{
    assemble_kernel_analytic, chapman_kolmogorov_residual, mc_kernel_estimate, McConfig, PathScheme,
};
use fkbridge::{
    BridgeProblem, Error, Grid, KernelMatrix, PdeOptions, PotentialKind, PotentialSpec, Profile, SimulationConfig,
    SolveOptions, TimeGrid,
};
use serde_json::{json, Value};

use crate::config::{build_potential, RunConfig};
use crate::Outcome;

/// Writes `config.toml` and `summary.json`. The payload is deterministic for
/// a given config; wall-clock data lives under `metadata` only.
fn write_run(dir: &Path, cfg: &RunConfig, command: &str, payload: Value, started: Instant) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let summary = json!({
        "command": command,
        "payload": payload,
        "metadata": {
            "created_unix": created,
            "elapsed_seconds": started.elapsed().as_secs_f64(),
            "workers": rayon::current_num_threads(),
            "version": env!("CARGO_PKG_VERSION"),
        },
    });
    io::write_json(&dir.join("summary.json"), &summary)?;
    Ok(())
}

fn case_name(cfg: &RunConfig) -> Result<Option<CaseName>> {
    let Some(name) = cfg.problem.case.as_deref() else {
        return Ok(None);
    };
    let mut case: CaseName = name.parse()?;
    match &mut case {
        CaseName::Centrifugal { gamma } => *gamma = cfg.problem.gamma,
        CaseName::MovingNode { alpha } => *alpha = cfg.problem.alpha,
        _ => {}
    }
    Ok(Some(case))
}

fn base_grid(cfg: &RunConfig) -> Result<Grid<f64>> {
    Ok(Grid::uniform(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.nx)?)
}

/// One spatial component of a problem; `node_below` tells which end of the
/// grid borders the node (`None` for the whole line).
struct Component {
    label: String,
    grid: Grid<f64>,
    node_below: Option<bool>,
}

/// Half-line grids with the configured spacing; the node becomes the ghost
/// point just outside each.
fn split_at_node(grid: &Grid<f64>) -> Result<Vec<Component>> {
    let (lo, hi, h) = (grid.x_min(), grid.x_max(), grid.spacing());
    if !(lo < 0.0 && hi > 0.0) {
        bail!("a nodal case needs x_min < 0 < x_max");
    }
    let n_neg = (-lo / h).round() as usize;
    let n_pos = (hi / h).round() as usize;
    Ok(vec![
        Component { label: "negative".into(), grid: Grid::uniform(-h * n_neg as f64, -h, n_neg)?, node_below: Some(false) },
        Component { label: "positive".into(), grid: Grid::uniform(h, h * n_pos as f64, n_pos)?, node_below: Some(true) },
    ])
}

fn components_for(case: Option<&CaseDefinition<f64>>, grid: Grid<f64>) -> Result<Vec<Component>> {
    match case {
        Some(c) if c.domain_components.len() == 2 => split_at_node(&grid),
        _ => Ok(vec![Component { label: "whole".into(), grid, node_below: None }]),
    }
}

fn pde_options(cfg: &RunConfig, node_below: Option<bool>) -> PdeOptions {
    let base = PdeOptions { steps_per_unit: cfg.solver.steps_per_unit, pad: cfg.solver.pad, ..PdeOptions::default() };
    match node_below {
        Some(below) => base.for_component(below),
        None => base,
    }
}

fn analytic_problem(
    spec: &PotentialSpec<f64>,
    rho0: Profile<f64>,
    rho_t: Profile<f64>,
    times: TimeGrid<f64>,
) -> Result<BridgeProblem<f64>> {
    let grid = *rho0.grid();
    let (t0, t1, m) = (times.t0(), times.t1(), times.len());
    let mut from_start = vec![None];
    let mut to_end = Vec::with_capacity(m);
    for k in 1..m {
        from_start.push(Some(assemble_kernel_analytic(spec, &grid, t0, times.time(k))?));
    }
    for k in 0..m - 1 {
        to_end.push(Some(assemble_kernel_analytic(spec, &grid, times.time(k), t1)?));
    }
    to_end.push(None);
    let full = from_start[m - 1].clone().expect("m >= 2");
    Ok(BridgeProblem::with_slices(rho0, rho_t, full, times, from_start, to_end)?)
}

fn l1(a: &Profile<f64>, b: &Profile<f64>) -> Result<f64> {
    Ok(a.l1_distance(b)?)
}

pub fn solve(cfg: &RunConfig) -> Result<Outcome> {
    let started = Instant::now();
    let out = &cfg.output.dir;
    let times = TimeGrid::uniform(cfg.problem.t0, cfg.problem.t1, cfg.problem.slices)?;
    let case = case_name(cfg)?.map(CaseDefinition::<f64>::new).transpose()?;

    // (component, rho0, rhoT, masses before normalization)
    let mut jobs = Vec::new();
    let spec = match &case {
        Some(c) => {
            if cfg.problem.rho0.is_some() || cfg.problem.rho_t.is_some() {
                bail!("--case cannot be combined with --rho0/--rhoT");
            }
            for comp in components_for(Some(c), base_grid(cfg)?)? {
                let r0 = c.sample(Quantity::Rho, &comp.grid, times.t0())?;
                let r1 = c.sample(Quantity::Rho, &comp.grid, times.t1())?;
                let masses = (r0.integral(), r1.integral());
                jobs.push((comp, r0.normalized()?, r1.normalized()?, masses));
            }
            c.potential.clone()
        }
        None => {
            let (Some(p0), Some(p1)) = (&cfg.problem.rho0, &cfg.problem.rho_t) else {
                bail!("solve needs --case or both --rho0 and --rhoT");
            };
            let r0: Profile<f64> = io::read_profile_csv(p0)?;
            let r1: Profile<f64> = io::read_profile_csv(p1)?;
            if r0.grid() != r1.grid() {
                bail!("{} and {} use different grids", p0.display(), p1.display());
            }
            let masses = (r0.integral(), r1.integral());
            let r0 = r0.normalized()?.with_time(times.t0());
            let r1 = r1.normalized()?.with_time(times.t1());
            let comp = Component { label: "whole".into(), grid: *r0.grid(), node_below: None };
            jobs.push((comp, r0, r1, masses));
            build_potential(cfg.problem.potential.as_deref().unwrap_or("free"), cfg.problem.gamma, cfg.problem.alpha)?
        }
    };

    let single = jobs.len() == 1;
    let mut reports = Vec::new();
    let mut all_converged = true;
    for (k, (comp, r0, r1, masses)) in jobs.into_iter().enumerate() {
        let prob = match cfg.solver.kernel_method.as_str() {
            "pde" => BridgeProblem::assemble_pde(&spec, r0, r1, times, pde_options(cfg, comp.node_below))
                .map_err(|e| singular_hint(e, "solve"))?,
            "analytic" => analytic_problem(&spec, r0, r1, times)?,
            other => bail!("unknown kernel method {other:?} for solve (pde, analytic)"),
        };
        let sol = solve_schrodinger_system_unchecked(
            &prob,
            SolveOptions { tol: cfg.solver.tol, max_iter: cfg.solver.max_iter },
        )?;
        let dir = if single { out.clone() } else { out.join(format!("component_{k}")) };
        io::write_solution(&dir, &sol)?;
        let mass_error: Vec<f64> = sol.rho.iter().map(|p| (p.integral() - 1.0).abs()).collect();
        let reference_l1 = match &case {
            Some(c) => Some(
                sol.rho
                    .iter()
                    .map(|p| {
                        let exact = c.sample(Quantity::Rho, &comp.grid, p.time())?.normalized()?;
                        l1(p, &exact)
                    })
                    .collect::<Result<Vec<f64>>>()?,
            ),
            None => None,
        };
        if !sol.converged {
            all_converged = false;
            eprintln!(
                "component {}: not converged after {} iterations (residual {:.3e} > tol {:.1e})",
                comp.label, sol.iterations, sol.marginal_residual, cfg.solver.tol
            );
        }
        reports.push(json!({
            "component": comp.label,
            "directory": dir,
            "domain": [comp.grid.x_min(), comp.grid.x_max()],
            "nodes": comp.grid.len(),
            "mass_rho0": masses.0,
            "mass_rhoT": masses.1,
            "converged": sol.converged,
            "iterations": sol.iterations,
            "residual": sol.marginal_residual,
            "times": sol.times,
            "mass_error": mass_error,
            "reference_rho_l1": reference_l1,
        }));
    }
    let payload = json!({
        "case": cfg.problem.case,
        "potential": spec.name(),
        "tol": cfg.solver.tol,
        "converged": all_converged,
        "residual": reports.iter().filter_map(|r| r["residual"].as_f64()).fold(0.0, f64::max),
        "components": reports,
    });
    write_run(out, cfg, "solve", payload, started)?;
    Ok(if all_converged { Outcome::Ok } else { Outcome::NotConverged })
}

fn singular_hint(e: Error, command: &str) -> anyhow::Error {
    match e {
        Error::SingularPotential(msg) => anyhow!(
            "{command}: the pde method needs a potential finite on the grid ({msg}); \
             use domain splitting (a grid on one side of the singular point, e.g. --x-min > 0) \
             or --method mc"
        ),
        other => other.into(),
    }
}

fn parse_scheme(s: &str) -> Result<PathScheme> {
    match s {
        "forward" => Ok(PathScheme::Forward),
        "pinned_bridge" | "pinned" => Ok(PathScheme::PinnedBridge),
        other => bail!("unknown Monte Carlo scheme {other:?} (forward, pinned_bridge)"),
    }
}

pub fn kernel(cfg: &RunConfig) -> Result<Outcome> {
    let started = Instant::now();
    let out = &cfg.output.dir;
    let name = cfg.problem.potential.as_deref().unwrap_or("free");
    let spec = build_potential(name, cfg.problem.gamma, cfg.problem.alpha)?;
    let (s, tau) = (cfg.kernel.s, cfg.kernel.tau);
    if !(tau > 0.0) {
        bail!("tau must be positive, got {tau}");
    }
    let t = s + tau;
    let payload = match cfg.kernel.method.as_str() {
        "mc" => {
            let mc = McConfig {
                n_paths: cfg.mc.paths,
                n_time: cfg.mc.substeps,
                seed: cfg.mc.seed,
                domain: None,
                scheme: parse_scheme(&cfg.mc.scheme)?,
            };
            let est = mc_kernel_estimate(&spec, cfg.kernel.y, cfg.kernel.x, s, t, &mc)?;
            let payload = json!({
                "method": "mc",
                "potential": spec.name(),
                "y": cfg.kernel.y, "x": cfg.kernel.x, "s": s, "t": t,
                "seed": cfg.mc.seed, "substeps": cfg.mc.substeps, "scheme": cfg.mc.scheme,
                "estimate": est,
            });
            fs::create_dir_all(out)?;
            io::write_json(&out.join("estimate.json"), &payload)?;
            payload
        }
        method @ ("pde" | "analytic") => {
            let grid = base_grid(cfg)?;
            let mut opts = pde_options(cfg, None);
            // pad only away from singular points outside the grid
            for &z in &spec.singular_set {
                if z <= grid.x_min() {
                    opts.pad_lower = false;
                }
                if z >= grid.x_max() {
                    opts.pad_upper = false;
                }
            }
            let build = |a: f64, b: f64| -> Result<KernelMatrix<f64>> {
                if method == "pde" {
                    pde_kernel_auto(&spec, &grid, a, b, opts).map_err(|e| singular_hint(e, "kernel"))
                } else {
                    Ok(assemble_kernel_analytic(&spec, &grid, a, b)?)
                }
            };
            let k = build(s, t)?;
            let k1 = build(s, s + tau / 2.0)?;
            let k2 = build(s + tau / 2.0, t)?;
            let quarter = (grid.x_max() - grid.x_min()) / 4.0;
            let window = (grid.x_min() + quarter, grid.x_max() - quarter);
            let ck = chapman_kolmogorov_residual(&k1, &k2, &k, Some(window))?;
            fs::create_dir_all(out)?;
            io::write_kernel(&out.join("kernel.fkk"), &k)?;
            json!({
                "method": method,
                "potential": spec.name(),
                "s": s, "t": t,
                "grid": { "x_min": grid.x_min(), "x_max": grid.x_max(), "nx": grid.len() },
                "file": "kernel.fkk",
                "min_entry": k.min_entry(),
                "clamped": k.clamped(),
                "chapman_kolmogorov": { "residual": ck, "window": [window.0, window.1], "split": s + tau / 2.0 },
            })
        }
        other => bail!("unknown kernel method {other:?} (pde, analytic, mc)"),
    };
    write_run(out, cfg, "kernel", payload, started)?;
    Ok(Outcome::Ok)
}

struct ClosedFormDrift(CaseDefinition<f64>);

impl Drift<f64> for ClosedFormDrift {
    fn eval(&self, x: f64, t: f64) -> f64 {
        self.0.evaluate(Quantity::B, x, t).unwrap_or(0.0)
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let started = Instant::now();
    let out = &cfg.output.dir;
    let sc = &cfg.simulate;
    // reference densities per recorded slice, plus the run's drift
    let (grid, record, reference, ens) = if let Some(run) = &sc.from_run {
        let slices = io::read_solution_slices(run).with_context(|| format!("reading run {}", run.display()))?;
        let m = slices.times.len();
        let record = TimeGrid::uniform(slices.times[0], slices.times[m - 1], m)?;
        let grid = *slices.rho[0].grid();
        let drift = SlicedDrift::new(slices.times.clone(), slices.drift.clone())?;
        let rho0 = slices.rho[0].normalized()?;
        let h = grid.spacing();
        let sim = SimulationConfig {
            n_paths: sc.paths,
            dt: sc.dt,
            seed: sc.seed,
            domain: (grid.x_min() - h, grid.x_max() + h),
            record,
            guard: None,
        };
        let ens = simulate_paths(&drift, &rho0, &sim)?;
        (grid, record, slices.rho, ens)
    } else {
        let Some(name) = case_name(cfg)? else {
            bail!("simulate needs --from-run DIR or --case");
        };
        let case = CaseDefinition::<f64>::new(name)?;
        if case.domain_components.len() != 1 || matches!(case.potential.kind, PotentialKind::MovingNode { .. }) {
            bail!("simulate --case supports gaussian_spread and harmonic; solve nodal cases first and pass --from-run DIR/component_k");
        }
        let grid = base_grid(cfg)?;
        let record = TimeGrid::uniform(cfg.problem.t0, cfg.problem.t1, cfg.problem.slices)?;
        let rho0 = case.sample(Quantity::Rho, &grid, record.t0())?.normalized()?;
        let reference = record
            .times()
            .into_iter()
            .map(|t| case.sample(Quantity::Rho, &grid, t))
            .collect::<fkbridge::Result<Vec<_>>>()?;
        let h = grid.spacing();
        let sim = SimulationConfig {
            n_paths: sc.paths,
            dt: sc.dt,
            seed: sc.seed,
            domain: (grid.x_min() - h, grid.x_max() + h),
            record,
            guard: None,
        };
        let ens = simulate_paths(&ClosedFormDrift(case), &rho0, &sim)?;
        (grid, record, reference, ens)
    };
    fs::create_dir_all(out)?;
    io::write_ensemble(&out.join("ensemble.bin"), &ens)?;
    let summary = ens.summary();
    io::write_summary_csv(&out.join("summary.csv"), &summary)?;
    let mut slices = Vec::new();
    for (k, row) in summary.iter().enumerate() {
        let emp = empirical_density(&ens, record.time(k), &grid, 0.0)?;
        let reference = reference[k].normalized()?;
        slices.push(json!({
            "t": row.t, "mean": row.mean, "var": row.var, "n_absorbed": row.n_absorbed,
            "density_l1": l1(&emp, &reference)?,
        }));
    }
    let last = summary.last().expect("at least two slices");
    let payload = json!({
        "source": sc.from_run.as_ref().map(|p| p.display().to_string()).or(cfg.problem.case.clone()),
        "n_paths": sc.paths, "dt": sc.dt, "seed": sc.seed,
        "mean_T": last.mean, "var_T": last.var,
        "n_absorbed": ens.n_absorbed,
        "slices": slices,
    });
    write_run(out, cfg, "simulate", payload, started)?;
    Ok(Outcome::Ok)
}

pub fn validate(cfg: &RunConfig) -> Result<Outcome> {
    let started = Instant::now();
    let Some(name) = case_name(cfg)? else {
        bail!("validate needs --case (one of {})", CaseName::ALL.join(", "));
    };
    let report = validate_case(name)?;
    for c in &report.checks {
        println!(
            "{} {:<36} measured {:>12.4e} {} {:.3e}  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.comparison,
            c.tolerance,
            c.detail
        );
    }
    let out = &cfg.output.dir;
    fs::create_dir_all(out)?;
    io::write_json(&out.join("report.json"), &report)?;
    let failing = report.failing();
    let payload = json!({ "case": report.case, "passed": report.passed, "failing": failing });
    write_run(out, cfg, "validate", payload, started)?;
    if report.passed {
        Ok(Outcome::Ok)
    } else {
        eprintln!("validation failed: {}", failing.join(", "));
        Ok(Outcome::ValidationFailed)
    }
}

pub fn moments(cfg: &RunConfig) -> Result<Outcome> {
    let started = Instant::now();
    let name = case_name(cfg)?.unwrap_or(CaseName::GaussianSpread);
    let case = CaseDefinition::<f64>::new(name)?;
    if !case.available(Quantity::G) {
        bail!("moments needs a case with a closed-form g (gaussian_spread, stable_node, harmonic, centrifugal)");
    }
    let m = &cfg.moments;
    let comps = components_for(Some(&case), base_grid(cfg)?)?;
    let comp = comps
        .into_iter()
        .find(|c| c.grid.x_min() - c.grid.spacing() < m.x0 && m.x0 < c.grid.x_max() + c.grid.spacing())
        .ok_or_else(|| anyhow!("x0 = {} lies outside every component", m.x0))?;
    let densities = m
        .increments
        .iter()
        .map(|&d| {
            let mut opts = pde_options(cfg, comp.node_below);
            opts.steps_per_unit = opts.steps_per_unit.max((40.0 / d).ceil() as usize);
            let k = pde_kernel_auto(&case.potential, &comp.grid, m.s, m.s + d, opts)?;
            let theta = case.sample(Quantity::G, &comp.grid, m.s + d)?;
            transition_density_consistent(&k, &theta)
        })
        .collect::<fkbridge::Result<Vec<_>>>()?;
    let est = estimate_moments(&densities, m.x0, m.epsilon)?;
    let payload = json!({
        "case": name.as_str(),
        "estimates": est,
        "reference_drift": case.evaluate(Quantity::B, m.x0, m.s).ok(),
        "reference_diffusion": 2.0,
    });
    let out = &cfg.output.dir;
    fs::create_dir_all(out)?;
    io::write_json(&out.join("moments.json"), &payload)?;
    write_run(out, cfg, "moments", payload, started)?;
    Ok(Outcome::Ok)
}
