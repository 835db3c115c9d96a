use std::path::PathBuf;
use std::time::Instant;

use log::info;
use rayon::prelude::*;

use super::config::{ExperimentConfig, InitialKind, StudyKind};
use super::report::{emit_plot_data, persist_report, ExperimentReport};
use crate::coarse_grain::{hbar_y_hessian, BlockScheme};
use crate::dynamics::{
    integrate_meso, simulate_ensemble, solve_macro_pde, CoarseOperator, InitialLaw, KawasakiOperator, MacroFlux,
    MacroPdeConfig, MacroTrajectory, MesoMode, MesoOdeConfig, Profile, SdeConfig, TrajectoryEnsemble,
};
use crate::error::{Error, Result};
use crate::free_energy::{cramer_gap, legendre, sigma_grid, CoarseGrainedCurve, FreeEnergyCurve, FreeEnergySource};
use crate::lsi;
use crate::metrics::{h_minus1_distance, meso_macro_error, micro_macro_error, micro_meso_error, theta_functional, TorusFunction};
use crate::model::{ModelSpec, PotentialSpec};
use crate::rng::derive_seed;
use crate::stats::loglog_slope;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Execution options that do not affect results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every logical core.
    pub workers: Option<usize>,
    /// Output directory; overrides the config.
    pub out: Option<PathBuf>,
}

/// Runs the configured study. Artifacts go to the output directory when one
/// is set; on failure the partial report is still written there.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport> {
    config.validate()?;
    let study = config.study()?;
    let mut report = ExperimentReport::empty(study, config.hash()?, config.seed);
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let result = pool.install(|| run_study(config, study, &mut report));
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    if let Err(e) = &result {
        report.error = Some(e.to_string());
    }
    if let Some(dir) = opts.out.clone().or_else(|| config.output.clone()) {
        emit_plot_data(&report, &dir)?;
        persist_report(&report, &dir)?;
    }
    result.map(|_| report)
}

fn run_study(cfg: &ExperimentConfig, study: StudyKind, report: &mut ExperimentReport) -> Result<()> {
    let model = cfg.load_model()?;
    info!("study {} on model {}", study.name(), &model.content_hash()[..12]);
    match study {
        StudyKind::Validate => validate_study(&model, report),
        StudyKind::FreeEnergy => free_energy_study(cfg, &model, report),
        StudyKind::Phi => phi_study(cfg, &model, report),
        StudyKind::Cramer => cramer_study(cfg, &model, report),
        StudyKind::Hessian => hessian_study(cfg, &model, report),
        StudyKind::Simulate => simulate_study(cfg, &model, report),
        StudyKind::Converge => converge_study(cfg, &model, report),
        StudyKind::Certify => certify_study(cfg, &model, report),
    }
}

/// `psi_b = 0`, `h = 0`, no field.
pub fn is_gaussian(model: &ModelSpec) -> bool {
    model.potential == PotentialSpec::Zero && model.kernel.is_zero() && !model.has_field()
}

fn grid(g: [f64; 3]) -> Vec<f64> {
    sigma_grid(g[0], g[1], g[2])
}

fn sizes(cfg: &ExperimentConfig) -> Vec<usize> {
    cfg.ladder.iter().map(|&(n, _)| n).collect()
}

/// `max / min` of positive values; `None` when some value vanishes.
fn spread(values: &[f64]) -> Option<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(0.0, f64::max);
    (lo > 0.0).then(|| hi / lo)
}

fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

fn validate_study(model: &ModelSpec, report: &mut ExperimentReport) -> Result<()> {
    for c in model.validate().checks {
        report.check(&c.name, c.passed, c.detail);
    }
    Ok(())
}

fn free_energy_study(cfg: &ExperimentConfig, model: &ModelSpec, report: &mut ExperimentReport) -> Result<()> {
    let limit = FreeEnergySource::limit(model);
    let ns = sizes(cfg);
    let sigmas = &cfg.params.sigma_points;
    let jobs: Vec<(f64, usize)> = sigmas.iter().flat_map(|&s| ns.iter().map(move |&n| (s, n))).collect();
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|&(s, n)| {
            FreeEnergySource::finite(&model.with_size(n), n)
                .value(s)
                .map_err(|e| e.context(format!("A_N at N = {n}, sigma = {s}")))
        })
        .collect::<Result<_>>()?;
    let limits: Vec<f64> = sigmas.iter().map(|&s| limit.value(s)).collect::<Result<_>>()?;
    let gaussian = is_gaussian(model);
    let mut closed_form_err = 0.0f64;
    for (k, &(s, n)) in jobs.iter().enumerate() {
        let a_lim = limits[k / ns.len()];
        let gap = n as f64 * (values[k] - a_lim).abs();
        report.table_mut("free_energy").push(vec![s, n as f64, values[k], a_lim, gap]);
        closed_form_err = closed_form_err.max((values[k] - (0.5 * s * s + 0.5 * LN_2PI)).abs());
    }
    for (i, &s) in sigmas.iter().enumerate() {
        let gaps: Vec<f64> = (0..ns.len()).map(|j| report.tables["free_energy"].rows[i * ns.len() + j][4]).collect();
        let (passed, detail) = if gaps.iter().all(|g| *g < 1e-10) {
            (true, format!("A_N equals the limit at sigma = {s}"))
        } else {
            match spread(&gaps) {
                Some(r) => (r <= 2.0, format!("N |A_N - A| spread {r:.3} at sigma = {s}")),
                None => (false, format!("A_N meets the limit at some N only, sigma = {s}")),
            }
        };
        report.check(&format!("free_energy_rate_sigma_{s}"), passed, detail);
    }
    if gaussian {
        report.check(
            "gaussian_closed_form",
            closed_form_err <= 1e-8,
            format!("max |A_N - (sigma^2/2 + log(2 pi)/2)| = {closed_form_err:.2e}"),
        );
    }
    Ok(())
}

fn phi_study(cfg: &ExperimentConfig, model: &ModelSpec, report: &mut ExperimentReport) -> Result<()> {
    let source = FreeEnergySource::limit(model);
    let curve = FreeEnergyCurve::tabulate(&source, grid(cfg.params.sigma_grid))?;
    report.artifacts.insert("free_energy_curve.csv".into(), curve.to_csv());
    let ms = grid(cfg.params.phi_grid);
    let rows: Vec<(f64, f64, f64)> = ms
        .par_iter()
        .map(|&m| {
            let r = legendre(&source, Some(&curve), m).map_err(|e| e.context(format!("phi at m = {m}")))?;
            Ok((r.value, r.sigma_star, curve.a_prime(r.sigma_star).1))
        })
        .collect::<Result<_>>()?;
    let mut closed_form_err = 0.0f64;
    for (m, (phi, dphi, a2)) in ms.iter().zip(&rows) {
        report.table_mut("phi").push(vec![*m, *phi, *dphi, *a2]);
        closed_form_err = closed_form_err.max((phi - (0.5 * m * m - 0.5 * LN_2PI)).abs());
    }
    let monotone = rows.windows(2).all(|w| w[1].1 > w[0].1);
    report.check(
        "phi_strictly_convex",
        monotone && curve.is_monotone(),
        format!("phi' increasing on the m grid; A'' convexity constant {:.3}", curve.convexity_constant()),
    );
    if is_gaussian(model) {
        report.check(
            "gaussian_closed_form",
            closed_form_err <= 1e-8,
            format!("max |phi - (m^2/2 - log(2 pi)/2)| = {closed_form_err:.2e}"),
        );
    }
    Ok(())
}

fn cramer_study(cfg: &ExperimentConfig, model: &ModelSpec, report: &mut ExperimentReport) -> Result<()> {
    let ns = sizes(cfg);
    let ms = &cfg.params.m_points;
    let jobs: Vec<(f64, usize)> = ms.iter().flat_map(|&m| ns.iter().map(move |&n| (m, n))).collect();
    let gaps: Vec<_> = jobs
        .par_iter()
        .map(|&(m, n)| cramer_gap(&model.with_size(n), m, n).map_err(|e| e.context(format!("Cramer gap at N = {n}, m = {m}"))))
        .collect::<Result<_>>()?;
    let mut closed_form_err = 0.0f64;
    for g in &gaps {
        let nf = g.n as f64;
        let scaled = nf * g.gap_limit.abs() / (g.m * g.m + 1.0);
        report
            .table_mut("cramer_gap")
            .push(vec![g.m, nf, g.gap_limit, nf * g.gap_limit, scaled, g.gap_finite]);
        closed_form_err = closed_form_err.max((g.gap_limit - LN_2PI / (2.0 * nf)).abs());
    }
    for (i, &m) in ms.iter().enumerate() {
        let scaled: Vec<f64> = (0..ns.len()).map(|j| report.tables["cramer_gap"].rows[i * ns.len() + j][4]).collect();
        let (passed, detail) = match spread(&scaled) {
            Some(r) => (r <= 2.0, format!("N |gap| / (m^2 + 1) spread {r:.3} at m = {m}")),
            None => (false, format!("vanishing gap at m = {m}")),
        };
        report.check(&format!("cramer_rate_m_{m}"), passed, detail);
    }
    if is_gaussian(model) {
        report.check(
            "gaussian_closed_form",
            closed_form_err <= 1e-6,
            format!("max |gap - log(2 pi)/(2N)| = {closed_form_err:.2e}"),
        );
    }
    Ok(())
}

fn hessian_study(cfg: &ExperimentConfig, model: &ModelSpec, report: &mut ExperimentReport) -> Result<()> {
    let p = &cfg.params;
    let mut ks = Vec::new();
    let mut mags = Vec::new();
    let mut resolved = true;
    for (k, &(n, mb)) in cfg.ladder.iter().enumerate() {
        let block = n / mb;
        let l = p.hessian_block;
        if l + 1 >= mb {
            return Err(Error::InvalidConfig(format!("entry ({l}, {}) needs more than {mb} blocks", l + 1)));
        }
        let scheme = BlockScheme::equal(n, block)?;
        let mut sampler = p.sampler.clone();
        sampler.chain.seed = derive_seed(cfg.seed, k as u64);
        if let Some(&s) = p.hessian_samples.get(k) {
            sampler.samples_per_chain = s;
        }
        let t = Instant::now();
        let dump = hbar_y_hessian(&model.with_size(n), &scheme, &vec![p.hessian_y; mb], &sampler)
            .map_err(|e| e.context(format!("rung N = {n}, M = {mb}")))?;
        let e = *dump.entry(l, l + 1).expect("entry inside the dump");
        info!("hessian K = {block}: {:.5} +- {:.5} ({:.1}s)", e.value, e.se, t.elapsed().as_secs_f64());
        report.artifacts.insert(format!("hessian_N{n}_M{mb}.json"), dump.to_json()?);
        report
            .table_mut("hessian_offdiag")
            .push(vec![block as f64, n as f64, mb as f64, l as f64, (l + 1) as f64, e.value, e.se]);
        resolved &= e.value.abs() >= 3.0 * e.se;
        ks.push(block as f64);
        mags.push(e.value.abs());
    }
    report.check(
        "offdiag_resolved",
        resolved,
        "every |entry| >= 3 SE".to_string(),
    );
    if ks.len() >= 2 {
        let slope = loglog_slope(&ks, &mags)?;
        report.check(
            "offdiag_slope",
            (-1.5..=-0.5).contains(&slope),
            format!("log-log slope {slope:.3} (want [-1.5, -0.5])"),
        );
    }
    Ok(())
}

/// Macroscopic data shared by every rung.
struct MacroContext {
    phi: FreeEnergyCurve,
    /// Snapshots are the exact heat-kernel solution when one exists.
    pde: MacroTrajectory,
    gaussian: bool,
    /// Largest H^-1 distance between the PDE solver and the exact solution.
    solver_gap: Option<f64>,
}

/// Cell averages of the heat flow from a cosine (or constant) profile.
fn heat_kernel(profile: &Profile, cells: usize, t: f64) -> Option<Result<TorusFunction>> {
    let decayed = match *profile {
        Profile::Constant { m } => Profile::Constant { m },
        Profile::Cosine { m, amplitude, mode } => {
            let w = 2.0 * std::f64::consts::PI * mode as f64;
            Profile::Cosine {
                m,
                amplitude: amplitude * (-w * w * t).exp(),
                mode,
            }
        }
        Profile::Cells { .. } => return None,
    };
    Some(TorusFunction::cell_averages(cells, |x| decayed.antiderivative(x)))
}

fn macro_context(cfg: &ExperimentConfig, model: &ModelSpec) -> Result<MacroContext> {
    let p = &cfg.params;
    let phi = FreeEnergyCurve::tabulate(&FreeEnergySource::limit(model), grid(p.sigma_grid))?;
    let gaussian = is_gaussian(model);
    let flux = if gaussian { MacroFlux::Linear } else { MacroFlux::Curve(&phi) };
    let z0 = TorusFunction::cell_averages(p.pde_cells, |t| p.profile.antiderivative(t))?;
    let pde_cfg = MacroPdeConfig {
        cells: p.pde_cells,
        dt: p.pde_dt,
        checkpoints: p.checkpoints,
        ..MacroPdeConfig::default()
    };
    let mut pde = solve_macro_pde(flux, &z0, cfg.horizon, &pde_cfg).map_err(|e| e.context("macroscopic equation"))?;
    let mut solver_gap = None;
    if gaussian && heat_kernel(&p.profile, p.pde_cells, 0.0).is_some() {
        let mut gap = 0.0f64;
        for (t, snap) in pde.times.iter().zip(pde.snapshots.iter_mut()) {
            let exact = heat_kernel(&p.profile, p.pde_cells, *t).expect("checked above")?;
            gap = gap.max(h_minus1_distance(snap, &exact)?);
            *snap = exact;
        }
        solver_gap = Some(gap);
    }
    Ok(MacroContext {
        phi,
        pde,
        gaussian,
        solver_gap,
    })
}

/// One rung of the ladder, integrated at all three scales.
struct Rung {
    n: usize,
    scheme: BlockScheme,
    ensemble: TrajectoryEnsemble,
    /// Meso states in aux mode, then phi mode, per checkpoint.
    eta_aux: Vec<Vec<f64>>,
    eta_phi: Vec<Vec<f64>>,
    meso_mass_drift: f64,
}

fn run_rung(cfg: &ExperimentConfig, model: &ModelSpec, ctx: &MacroContext, index: usize) -> Result<Rung> {
    let (n, mb) = cfg.ladder[index];
    let block = n / mb;
    let p = &cfg.params;
    let model = model.with_size(n);
    let scheme = BlockScheme::equal(n, block)?;
    let op = CoarseOperator::new(&scheme)?;
    let eta0 = p.profile.block_means(&scheme);
    let curves = vec![CoarseGrainedCurve::tabulate(&model, block, grid(p.meso_grid))?];
    let ode = MesoOdeConfig {
        rtol: p.meso_rtol,
        atol: p.meso_rtol,
        checkpoints: p.checkpoints,
        ..MesoOdeConfig::default()
    };
    let aux = integrate_meso(&op, MesoMode::Aux(&curves), &eta0, cfg.horizon, &ode)?;
    let phi = integrate_meso(&op, MesoMode::Phi(&ctx.phi), &eta0, cfg.horizon, &ode)?;
    let law = match p.initial {
        InitialKind::Deterministic => InitialLaw::Deterministic {
            profile: p.profile.clone(),
        },
        InitialKind::LocalEquilibrium => InitialLaw::LocalEquilibrium {
            profile: p.profile.clone(),
            block_size: block,
            chain: p.initial_chain.clone(),
        },
    };
    let sde = SdeConfig::from_stability(n, p.stability_factor, cfg.horizon, p.checkpoints, derive_seed(cfg.seed, index as u64));
    let t = Instant::now();
    let ensemble = simulate_ensemble(&model, &law, &sde, cfg.ensemble)?;
    info!(
        "rung N = {n}, M = {mb}: {} trajectories in {:.1}s",
        cfg.ensemble,
        t.elapsed().as_secs_f64()
    );
    Ok(Rung {
        n,
        scheme,
        ensemble,
        eta_aux: aux.states,
        eta_phi: phi.states,
        meso_mass_drift: aux.max_mass_drift.max(phi.max_mass_drift),
    })
}

fn simulate_study(cfg: &ExperimentConfig, model: &ModelSpec, report: &mut ExperimentReport) -> Result<()> {
    let ctx = macro_context(cfg, model)?;
    let rung = run_rung(cfg, model, &ctx, 0).map_err(|e| e.context("rung 0"))?;
    let op = KawasakiOperator::new(rung.n)?;
    for (c, cp) in rung.ensemble.checkpoints.iter().enumerate() {
        for (traj, x) in cp.states.iter().enumerate() {
            let err = h_minus1_distance(&TorusFunction::step_embedding(x)?, &ctx.pde.snapshots[c])?;
            let theta = theta_functional(std::slice::from_ref(x), &rung.eta_aux[c], &rung.scheme, &op)?.estimate;
            report.table_mut("scalars").push(vec![traj as f64, cp.t, err, theta]);
        }
    }
    report
        .artifacts
        .insert(format!("blocks_N{}.csv", rung.n), rung.ensemble.block_csv(&rung.scheme)?);
    report.artifacts.insert("pde_snapshots.csv".into(), ctx.pde.snapshots_csv());
    conservation_checks(report, &[&rung], &ctx);
    Ok(())
}

fn conservation_checks(report: &mut ExperimentReport, rungs: &[&Rung], ctx: &MacroContext) {
    let micro = rungs.iter().map(|r| r.ensemble.max_mean_drift).fold(0.0, f64::max);
    let meso = rungs.iter().map(|r| r.meso_mass_drift).fold(0.0, f64::max);
    report.check("micro_conservation", micro <= 1e-12, format!("max mean drift {micro:.2e}"));
    report.check("meso_conservation", meso <= 1e-10, format!("max weighted-mean drift {meso:.2e}"));
    report.check(
        "macro_conservation",
        ctx.pde.max_mass_drift <= 1e-12,
        format!("max mass drift {:.2e}", ctx.pde.max_mass_drift),
    );
    if let Some(gap) = ctx.solver_gap {
        report.check(
            "macro_solver_vs_heat_kernel",
            gap <= 1e-6,
            format!("max H^-1 distance {gap:.2e}; the exact solution is the reference"),
        );
    }
}

fn converge_study(cfg: &ExperimentConfig, model: &ModelSpec, report: &mut ExperimentReport) -> Result<()> {
    let ctx = macro_context(cfg, model)?;
    report.artifacts.insert("pde_snapshots.csv".into(), ctx.pde.snapshots_csv());
    let mut sups = Vec::new();
    let mut rungs = Vec::new();
    // meso-macro error per rung and checkpoint
    let mut meso_paths: Vec<Vec<f64>> = Vec::new();
    for index in 0..cfg.ladder.len() {
        let (n, mb) = cfg.ladder[index];
        let rung = run_rung(cfg, model, &ctx, index).map_err(|e| e.context(format!("rung N = {n}, M = {mb}")))?;
        let op = KawasakiOperator::new(n)?;
        let (mut sup_mm, mut sup_meso, mut sup_aux, mut sup_theta, mut theta0) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0);
        let slack = cfg.horizon * mb as f64 / n as f64 + 1.0 / (mb * mb) as f64;
        let mut meso_path = Vec::new();
        for (c, cp) in rung.ensemble.checkpoints.iter().enumerate() {
            let zeta = &ctx.pde.snapshots[c];
            let mm = micro_macro_error(&cp.states, zeta)?;
            let mu = micro_meso_error(&cp.states, &rung.eta_aux[c], &rung.scheme)?;
            let me = meso_macro_error(&rung.eta_phi[c], &rung.scheme, zeta)?;
            let me_aux = meso_macro_error(&rung.eta_aux[c], &rung.scheme, zeta)?;
            let th = theta_functional(&cp.states, &rung.eta_aux[c], &rung.scheme, &op)?;
            if c == 0 {
                theta0 = th.estimate;
            }
            let (nf, mf) = (n as f64, mb as f64);
            report.table_mut("hydro_error").push(vec![cp.t, nf, mm.estimate, mm.standard_error]);
            report.table_mut("error_curve").push(vec![
                cp.t,
                nf,
                mf,
                mu.estimate,
                me,
                mm.estimate,
                th.estimate,
                mu.standard_error,
                mm.standard_error,
                th.standard_error,
                me_aux,
            ]);
            report
                .table_mut("theta")
                .push(vec![cp.t, nf, mf, th.estimate, th.standard_error, theta0 + slack]);
            sup_mm = sup_mm.max(mm.estimate);
            sup_meso = sup_meso.max(me);
            meso_path.push(me);
            sup_aux = sup_aux.max(me_aux);
            sup_theta = sup_theta.max(th.estimate);
        }
        report.table_mut("ladder").push(vec![
            n as f64,
            mb as f64,
            sup_mm,
            sup_meso,
            sup_aux,
            theta0,
            sup_theta,
            theta0 + slack,
            rung.ensemble.max_mean_drift,
        ]);
        sups.push((sup_mm, sup_meso, theta0, sup_theta, theta0 + slack));
        meso_paths.push(meso_path);
        rungs.push(rung);
    }
    let col = |k: usize| -> Vec<f64> {
        sups.iter()
            .map(|s| [s.0, s.1, s.2, s.3, s.4][k])
            .collect()
    };
    report.check(
        "micro_macro_decreasing",
        strictly_decreasing(&col(0)),
        format!("sup_t micro-macro error {:?}", col(0)),
    );
    let every_checkpoint = (0..meso_paths[0].len()).all(|c| {
        let at: Vec<f64> = meso_paths.iter().map(|p| p[c]).collect();
        strictly_decreasing(&at)
    });
    report.check(
        "meso_macro_decreasing",
        strictly_decreasing(&col(1)) && every_checkpoint,
        format!(
            "sup_t meso-macro error (phi mode) {:?}; decreasing at every checkpoint: {every_checkpoint}",
            col(1)
        ),
    );
    report.check(
        "theta0_decreasing",
        strictly_decreasing(&col(2)),
        format!("Theta(0) {:?}", col(2)),
    );
    report.check(
        "theta_bound",
        sups.iter().all(|s| s.3 <= s.4),
        format!("sup Theta {:?} vs Theta(0) + T M/N + 1/M^2 {:?}", col(3), col(4)),
    );
    if ctx.gaussian {
        if let (Some(last), Some(amp)) = (col(0).last().copied(), profile_amplitude(cfg)) {
            let limit = 0.05 * amp * amp;
            report.check(
                "linear_case_threshold",
                last <= limit,
                format!("sup_t micro-macro at the top rung {last:.3e} (limit {limit:.3e})"),
            );
        }
    }
    let refs: Vec<&Rung> = rungs.iter().collect();
    conservation_checks(report, &refs, &ctx);
    Ok(())
}

fn profile_amplitude(cfg: &ExperimentConfig) -> Option<f64> {
    match cfg.params.profile {
        Profile::Cosine { amplitude, .. } => Some(amplitude.abs()),
        _ => None,
    }
}

fn certify_study(cfg: &ExperimentConfig, model: &ModelSpec, report: &mut ExperimentReport) -> Result<()> {
    let mut certificates = Vec::new();
    let mut notes = Vec::new();
    let bound = lsi::model_hessian_lower_bound(model)?;
    match lsi::bakry_emery(bound) {
        Ok(c) => certificates.push(c),
        Err(e) => notes.push(format!("Bakry-Emery: {e}")),
    }
    // single-site conditionals are Gaussian tilted by psi_b
    let osc = model.potential.perturbation_bounds().osc;
    let site = lsi::holley_stroock(1.0, osc)?;
    let n = model.n;
    let rho = vec![site.rho; n];
    let kappa: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i == j {
                0.0
            } else {
                model.kernel.off_diagonal(i, j).abs()
            }
        })
        .collect();
    if model.kernel.is_zero() {
        certificates.push(lsi::tensorize(site.rho, site.rho)?);
    }
    match lsi::otto_reznikoff(&rho, &kappa) {
        Ok(c) => certificates.push(c),
        Err(e) => notes.push(format!("Otto-Reznikoff: {e}")),
    }
    let model_certified = !certificates.is_empty();
    certificates.push(site);
    if let Some(t) = cfg.params.two_scale {
        match lsi::two_scale_combine(t.rho1, t.rho2, t.kappa) {
            Ok(c) => certificates.push(c),
            Err(e) => {
                report.check("two_scale", false, e.to_string());
            }
        }
    }
    for (i, c) in certificates.iter().enumerate() {
        report.table_mut("certificates").push(vec![i as f64, c.rho]);
        let name = serde_json::to_value(c.provenance)?;
        report
            .artifacts
            .insert(format!("certificate_{i}_{}.json", name.as_str().unwrap_or("lsi")), c.to_json());
    }
    let best = certificates
        .iter()
        .filter(|c| c.provenance != lsi::LsiProvenance::HolleyStroock && c.provenance != lsi::LsiProvenance::TwoScale)
        .map(|c| c.rho)
        .fold(0.0, f64::max);
    report.check(
        "lsi_certified",
        model_certified,
        if model_certified {
            format!("best certified rho {best:.4}")
        } else {
            format!("no criterion applies: {}", notes.join("; "))
        },
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_free_energy_and_cramer_studies_pass() {
        let model = ModelSpec::gaussian(8);
        let mut cfg = ExperimentConfig::new(&model, StudyKind::FreeEnergy, vec![(8, 2), (16, 4)]);
        let r = run(&cfg, &RunOptions::default()).unwrap();
        assert!(r.passed(), "{:?}", r.criteria);
        cfg.study = Some(StudyKind::Cramer);
        cfg.params.m_points = vec![0.5];
        let r = run(&cfg, &RunOptions::default()).unwrap();
        assert!(r.passed(), "{:?}", r.criteria);
        assert_eq!(r.tables["cramer_gap"].rows.len(), 2);
    }

    #[test]
    fn certify_reports_products_and_failures() {
        let cfg = ExperimentConfig::new(&ModelSpec::gaussian(6), StudyKind::Certify, vec![]);
        let r = run(&cfg, &RunOptions::default()).unwrap();
        assert!(r.passed());
        assert!(r.tables["certificates"].column("rho").unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-9));
        let cfg = ExperimentConfig::new(&ModelSpec::double_well(6), StudyKind::Certify, vec![]);
        let r = run(&cfg, &RunOptions::default()).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn small_converge_run_is_reproducible() {
        let mut cfg = ExperimentConfig::new(&ModelSpec::gaussian(16), StudyKind::Converge, vec![(16, 4), (32, 8)]);
        cfg.ensemble = 4;
        cfg.horizon = 0.01;
        cfg.params.checkpoints = 2;
        cfg.params.pde_cells = 64;
        cfg.params.pde_dt = 1e-4;
        cfg.params.meso_grid = [-1.0, 1.5, 0.05];
        cfg.params.sigma_grid = [-3.0, 3.0, 0.1];
        let opts = RunOptions {
            workers: Some(2),
            out: None,
        };
        let a = run(&cfg, &opts).unwrap();
        let b = run(&cfg, &opts).unwrap();
        assert_eq!(a.without_timing(), b.without_timing());
        assert_eq!(a.tables["hydro_error"].rows.len(), 2 * 3);
        assert!(a.criterion("micro_conservation").unwrap().passed);
    }
}
