//! Convergence studies in `eps`: reference limit solutions, error tables,
//! log–log rate fits and the initial-layer study, plus CSV output.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::diagnostics::{compute_q, energy_ea, energy_eb, DiagnosticsRecorder};
use crate::error::{Error, Result};
use crate::grid::{l2_norm, Field, Grid, InteriorMask};
use crate::integrator::{run, run_observed, Evolution, LimitSystem, MicroSystem, StepConfig, Trajectory};
use crate::model::{build_hk, well_prepared_split, HkSpec, LimitState, MicroState, SktParams};

/// Reference limit solutions use this many substeps per microscopic step.
pub const REFERENCE_SUBSTEPS: usize = 4;

/// Named analytic initial data, all compatible with zero-flux boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// `u = 1 + cos(pi x/L)/2`, `v = 1 + cos(2 pi x/L)/2`, tensorized in 2D.
    Cosine,
    /// `u = 1`, `v = 1`: spatially homogeneous.
    Flat,
}

impl Profile {
    fn mode(grid: &Grid, p: [f64; 2], k: f64) -> f64 {
        (0..grid.dim())
            .map(|a| (k * std::f64::consts::PI * p[a] / grid.extent(a)).cos())
            .product()
    }

    pub fn u_init(&self, grid: Grid) -> Field {
        match self {
            Profile::Cosine => Field::from_fn(grid, |p| 1.0 + 0.5 * Self::mode(&grid, p, 1.0)),
            Profile::Flat => Field::constant(grid, 1.0),
        }
    }

    pub fn v_init(&self, grid: Grid) -> Field {
        match self {
            Profile::Cosine => Field::from_fn(grid, |p| 1.0 + 0.5 * Self::mode(&grid, p, 2.0)),
            Profile::Flat => Field::constant(grid, 1.0),
        }
    }

    /// Slow-state share used for ill-prepared data: `1/2 + a cos(pi x/L)`
    /// (homogeneous `1/2 + a` for the flat profile).
    fn ill_share(&self, grid: Grid, amplitude: f64) -> Field {
        match self {
            Profile::Cosine => Field::from_fn(grid, |p| 0.5 + amplitude * Self::mode(&grid, p, 1.0)),
            Profile::Flat => Field::constant(grid, 0.5 + amplitude),
        }
    }
}

/// Everything needed to run one sweep over `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub params: SktParams,
    /// Replaces the computed bound `A` of the relaxation pair.
    pub a_override: Option<f64>,
    pub grid: Grid,
    pub t_final: f64,
    pub step: StepConfig,
    /// Strictly decreasing.
    pub eps_list: Vec<f64>,
    pub well_prepared: bool,
    pub ill_amplitude: f64,
    pub profile: Profile,
    pub margin: f64,
    pub l_max: usize,
    /// Number of equispaced sample times in `(0, t_final]`.
    pub samples: usize,
    /// Steps per initial-layer time `t_eps` in the layer study.
    pub layer_steps: usize,
}

impl SweepPlan {
    pub fn new(grid: Grid, t_final: f64, dt: f64, eps_list: Vec<f64>) -> Self {
        SweepPlan {
            params: SktParams::default(),
            a_override: None,
            grid,
            t_final,
            step: StepConfig::new(dt),
            eps_list,
            well_prepared: false,
            ill_amplitude: 0.25,
            profile: Profile::Cosine,
            margin: 0.1,
            l_max: 2,
            samples: 10,
            layer_steps: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.step.validate()?;
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(Error::param(format!("T must be > 0, got {}", self.t_final)));
        }
        if self.eps_list.is_empty() {
            return Err(Error::param("eps_list is empty"));
        }
        if self.eps_list.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::param("every eps must be > 0"));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::param("eps_list must be strictly decreasing"));
        }
        if !(0.0..=0.5).contains(&self.ill_amplitude) {
            return Err(Error::param("ill_amplitude must lie in [0, 0.5]"));
        }
        if self.l_max > crate::grid::MAX_DERIVATIVE_ORDER {
            return Err(Error::param(format!(
                "l_max must be <= {}",
                crate::grid::MAX_DERIVATIVE_ORDER
            )));
        }
        for axis in 0..self.grid.dim() {
            if self.grid.nodes(axis) < 2 * self.l_max.max(2) + 1 {
                return Err(Error::param("grid too coarse for the requested l_max"));
            }
        }
        InteriorMask::new(self.grid, self.margin)?;
        if self.samples == 0 || self.layer_steps == 0 {
            return Err(Error::param("samples and layer_steps must be >= 1"));
        }
        self.spec().map(|_| ())
    }

    pub fn spec(&self) -> Result<HkSpec> {
        match self.a_override {
            Some(a) => HkSpec::with_bound(&self.params, a),
            None => build_hk(&self.params, self.profile.v_init(self.grid).max()),
        }
    }

    pub fn interior(&self) -> InteriorMask {
        InteriorMask::new(self.grid, self.margin).expect("validated margin")
    }

    pub fn sample_times(&self) -> Vec<f64> {
        (1..=self.samples)
            .map(|k| {
                if k == self.samples {
                    self.t_final
                } else {
                    self.t_final * k as f64 / self.samples as f64
                }
            })
            .collect()
    }

    pub fn initial_limit(&self) -> LimitState {
        LimitState {
            t: 0.0,
            u: self.profile.u_init(self.grid),
            v: self.profile.v_init(self.grid),
        }
    }

    /// Microscopic initial data: the equilibrium split of `u_init`, or the
    /// ill-prepared split `u_A = u_init (1/2 + a cos)` clipped to `[0, u_init]`.
    pub fn initial_micro(&self, eps: f64, well_prepared: bool) -> Result<MicroState> {
        let spec = self.spec()?;
        let lim = self.initial_limit();
        let (ua, ub) = if well_prepared {
            well_prepared_split(&lim.u, &lim.v, &spec)?
        } else {
            let share = self.profile.ill_share(self.grid, self.ill_amplitude);
            let ua = lim.u.zip_map(&share, |u, s| (u * s).clamp(0.0, u))?;
            let ub = lim.u.sub(&ua)?;
            (ua, ub)
        };
        MicroState::new(0.0, ua, ub, lim.v, eps)
    }

    fn limit_system(&self, dt: f64) -> LimitSystem {
        LimitSystem {
            params: self.params,
            cfg: self.step.with_dt(dt),
        }
    }
}

/// Limit solution on the sweep grid with step `dt / 4`, sampled at the
/// sweep's sample times.
pub fn reference_limit(plan: &SweepPlan) -> Result<Trajectory<LimitState>> {
    reference_with_step(plan, plan.step.dt / REFERENCE_SUBSTEPS as f64)
}

fn reference_with_step(plan: &SweepPlan, dt: f64) -> Result<Trajectory<LimitState>> {
    plan.validate()?;
    let sys = plan.limit_system(dt);
    run(&sys, plan.initial_limit(), plan.t_final, dt, &plan.sample_times())
}

/// Richardson-style estimate of the reference time error: the largest L2
/// difference over the sample times between runs with `dt/4` and `dt/8`.
pub fn reference_self_check(plan: &SweepPlan) -> Result<f64> {
    let coarse = reference_limit(plan)?;
    let fine = reference_with_step(plan, plan.step.dt / (2 * REFERENCE_SUBSTEPS) as f64)?;
    compare_trajectories(&coarse, &fine)
}

/// Largest L2 distance (in `u` or `v`) between two trajectories with equal
/// sample times.
pub fn compare_trajectories(
    a: &Trajectory<LimitState>,
    b: &Trajectory<LimitState>,
) -> Result<f64> {
    if a.snapshots.len() != b.snapshots.len() {
        return Err(Error::contract("trajectories have different sample counts"));
    }
    let mut worst: f64 = 0.0;
    for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
        let m = InteriorMask::full(*x.u.grid());
        worst = worst
            .max(l2_norm(&x.u.sub(&y.u)?, &m)?)
            .max(l2_norm(&x.v.sub(&y.v)?, &m)?);
    }
    Ok(worst)
}

/// One line of a rate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub eps: f64,
    pub u_linf_l2: f64,
    pub u_l2_h1: f64,
    pub v_linf_l2: f64,
    pub v_l2_h1: f64,
    pub u_l2_l2: f64,
    pub u_linf_hl_interior: f64,
    pub v_linf_hl_interior: f64,
    pub dissipation: f64,
    pub eps_init_m1: f64,
    pub eps_init_0: f64,
    pub eps_init_1: f64,
    pub clipped_mass: f64,
    /// `sup_t (E_A + E_B)`.
    pub energy_sup: f64,
    /// `E_A(0) + E_B(0)`.
    pub energy_initial: f64,
    pub q_linf_l2: f64,
    pub steps: usize,
    pub linear_iterations: usize,
}

impl RateRow {
    pub const CSV_HEADER: [&'static str; 13] = [
        "eps",
        "U_LinfL2",
        "U_L2H1",
        "V_LinfL2",
        "V_L2H1",
        "U_L2L2",
        "U_LinfHl_interior",
        "V_LinfHl_interior",
        "dissipation",
        "eps_init_m1",
        "eps_init_0",
        "eps_init_1",
        "clipped_mass",
    ];

    pub fn csv_values(&self) -> [f64; 13] {
        [
            self.eps,
            self.u_linf_l2,
            self.u_l2_h1,
            self.v_linf_l2,
            self.v_l2_h1,
            self.u_l2_l2,
            self.u_linf_hl_interior,
            self.v_linf_hl_interior,
            self.dissipation,
            self.eps_init_m1,
            self.eps_init_0,
            self.eps_init_1,
            self.clipped_mass,
        ]
    }

    /// `||U||_{L^inf L^2} + ||U||_{L^2 H^1}`
    pub fn u_combined(&self) -> f64 {
        self.u_linf_l2 + self.u_l2_h1
    }

    pub fn v_combined(&self) -> f64 {
        self.v_linf_l2 + self.v_l2_h1
    }
}

/// Ordinary least squares fit of `log value = slope log eps + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Half width of the 95% confidence interval of the slope.
    pub slope_ci95: f64,
    pub points_used: usize,
}

/// Fits a power law to `(eps, value)` pairs. With a saturation floor, points
/// whose value is below three times the floor are dropped first.
pub fn fit_rate(points: &[(f64, f64)], saturation_floor: Option<f64>) -> Result<RateFit> {
    if let Some(&(e, v)) = points.iter().find(|(e, v)| !(*e > 0.0 && *v > 0.0)) {
        return Err(Error::param(format!(
            "log-log fit needs positive data, got ({e}, {v})"
        )));
    }
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, v)| saturation_floor.is_none_or(|f| *v >= 3.0 * f))
        .map(|(e, v)| (e.ln(), v.ln()))
        .collect();
    let n = kept.len();
    if n < 4 {
        return Err(Error::FitInsufficient { usable: n });
    }
    let nf = n as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = kept.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = kept.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = kept.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = kept.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::param("log-log fit needs at least two distinct eps"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = kept
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let dof = nf - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .expect("dof >= 2")
        .inverse_cdf(0.975);
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        slope_ci95: t * se,
        points_used: n,
    })
}

/// Error table of a sweep with fitted rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    /// `(quantity, fit)`; only present with at least 4 rows.
    pub fits: Vec<(String, RateFit)>,
    pub dt: f64,
    pub dt_reference: f64,
    /// Reference self-check error (`dt/4` vs `dt/8`).
    pub reference_error: f64,
    /// Self-check error is not below 5% of the largest error in the sweep.
    pub reference_limited: bool,
}

impl RateReport {
    pub fn fit(&self, quantity: &str) -> Option<&RateFit> {
        self.fits.iter().find(|(q, _)| q == quantity).map(|(_, f)| f)
    }
}

/// Quantities fitted by [`convergence_sweep`], with their row accessors.
pub const FITTED_QUANTITIES: [(&str, fn(&RateRow) -> f64); 7] = [
    ("U_combined", RateRow::u_combined),
    ("V_combined", RateRow::v_combined),
    ("U_LinfL2", |r| r.u_linf_l2),
    ("U_L2H1", |r| r.u_l2_h1),
    ("U_L2L2", |r| r.u_l2_l2),
    ("U_LinfHl_interior", |r| r.u_linf_hl_interior),
    ("dissipation", |r| r.dissipation),
];

/// Runs the microscopic system for one `eps` against a limit solution
/// advanced in lockstep (`REFERENCE_SUBSTEPS` substeps per step).
pub fn error_row(plan: &SweepPlan, eps: f64, well_prepared: bool) -> Result<RateRow> {
    let spec = plan.spec()?;
    let m0 = plan.initial_micro(eps, well_prepared)?;
    let energy_initial = energy_ea(&m0, &spec) + energy_eb(&m0, &spec);
    let micro = MicroSystem {
        params: plan.params,
        spec,
        cfg: plan.step,
    };
    let limit_sys = plan.limit_system(plan.step.dt / REFERENCE_SUBSTEPS as f64);
    let samples = plan.sample_times();
    let mut recorder = DiagnosticsRecorder::new(&m0, spec, plan.interior(), plan.l_max, &samples)?;
    let mut limit = plan.initial_limit();
    let traj = run_observed(&micro, m0, plan.t_final, plan.step.dt, &samples, |m, h| {
        if h > 0.0 {
            let sub = h / REFERENCE_SUBSTEPS as f64;
            for _ in 0..REFERENCE_SUBSTEPS {
                limit = limit_sys.step(&limit, sub)?.0;
            }
            LimitSystem::set_time(&mut limit, m.t);
        }
        recorder.observe(m, Some(&limit))
    })?;
    let r = recorder.report;
    Ok(RateRow {
        eps,
        u_linf_l2: r.u_l2.sup,
        u_l2_h1: r.u_h1.l2_in_time(),
        v_linf_l2: r.v_l2.sup,
        v_l2_h1: r.v_h1.l2_in_time(),
        u_l2_l2: r.u_l2.l2_in_time(),
        u_linf_hl_interior: r.u_hl_interior.sup,
        v_linf_hl_interior: r.v_hl_interior.sup,
        dissipation: r.dissipation,
        eps_init_m1: r.eps_init[0],
        eps_init_0: r.eps_init[1],
        eps_init_1: r.eps_init[2],
        clipped_mass: traj.stats.clipped_mass,
        energy_sup: r.energy.sup,
        energy_initial,
        q_linf_l2: r.q_l2.sup,
        steps: traj.step_sizes.len(),
        linear_iterations: traj.stats.linear_iterations,
    })
}

/// Error table over `plan.eps_list` with log–log rate fits.
pub fn convergence_sweep(plan: &SweepPlan) -> Result<RateReport> {
    plan.validate()?;
    let reference_error = reference_self_check(plan)?;
    let results: Vec<Result<RateRow>> = plan
        .eps_list
        .par_iter()
        .map(|&eps| error_row(plan, eps, plan.well_prepared))
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                return Err(Error::SweepAborted {
                    partial: rows,
                    source: Box::new(e),
                })
            }
        }
    }
    let largest = rows
        .iter()
        .map(|r| r.u_linf_l2.max(r.v_linf_l2))
        .fold(0.0, f64::max);
    let mut fits = Vec::new();
    if rows.len() >= 4 {
        for (name, get) in FITTED_QUANTITIES {
            let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, get(r))).collect();
            if let Ok(f) = fit_rate(&pts, None) {
                fits.push((name.to_string(), f));
            }
        }
    }
    Ok(RateReport {
        rows,
        fits,
        dt: plan.step.dt,
        dt_reference: plan.step.dt / REFERENCE_SUBSTEPS as f64,
        reference_error,
        reference_limited: reference_error >= 0.05 * largest,
    })
}

/// One line of the initial-layer table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub eps: f64,
    pub t_eps: f64,
    pub q_l2_at_teps: f64,
    pub ratio_sqrt_eps: f64,
    pub tprime_eps: f64,
    pub q_l2_interior_at_tprime: f64,
    pub ratio_eps_logeps: f64,
    /// `||Q(0)||_{L^2}`.
    pub q_l2_initial: f64,
}

impl LayerRow {
    pub const CSV_HEADER: [&'static str; 7] = [
        "eps",
        "t_eps",
        "Q_L2_at_teps",
        "ratio_sqrt_eps",
        "tprime_eps",
        "Q_L2_interior_at_tprime",
        "ratio_eps_logeps",
    ];

    pub fn csv_values(&self) -> [f64; 7] {
        [
            self.eps,
            self.t_eps,
            self.q_l2_at_teps,
            self.ratio_sqrt_eps,
            self.tprime_eps,
            self.q_l2_interior_at_tprime,
            self.ratio_eps_logeps,
        ]
    }
}

/// Initial-layer time `eps |ln eps| / (2 S)`.
pub fn layer_time(eps: f64, s: f64) -> f64 {
    eps * eps.ln().abs() / (2.0 * s)
}

/// Interior initial-layer time `eps |ln eps^2| / (2 S)`.
pub fn interior_layer_time(eps: f64, s: f64) -> f64 {
    eps * (eps * eps).ln().abs() / (2.0 * s)
}

/// Decay of `Q` through the initial layer for every `eps` in the plan, using
/// the plan's initial data (`well_prepared` selects the split).
pub fn initial_layer_study(plan: &SweepPlan) -> Result<Vec<LayerRow>> {
    plan.validate()?;
    let spec = plan.spec()?;
    let interior = plan.interior();
    let full = InteriorMask::full(plan.grid);
    plan.eps_list
        .par_iter()
        .map(|&eps| {
            let t_eps = layer_time(eps, spec.s);
            let t_prime = interior_layer_time(eps, spec.s);
            let dt = plan.step.dt.min(t_eps / plan.layer_steps as f64);
            let sys = MicroSystem {
                params: plan.params,
                spec,
                cfg: plan.step.with_dt(dt),
            };
            let m0 = plan.initial_micro(eps, plan.well_prepared)?;
            let q0 = l2_norm(&compute_q(&m0, &spec), &full)?;
            let traj = run(&sys, m0, t_prime, dt, &[t_eps, t_prime])?;
            let at = |t: f64| {
                traj.sample_times
                    .iter()
                    .position(|&s| s == t)
                    .map(|i| &traj.snapshots[i])
                    .ok_or_else(|| Error::contract(format!("missing sample at t = {t}")))
            };
            let q_teps = l2_norm(&compute_q(at(t_eps)?, &spec), &full)?;
            let q_tprime = l2_norm(&compute_q(at(t_prime)?, &spec), &interior)?;
            Ok(LayerRow {
                eps,
                t_eps,
                q_l2_at_teps: q_teps,
                ratio_sqrt_eps: q_teps / eps.sqrt(),
                tprime_eps: t_prime,
                q_l2_interior_at_tprime: q_tprime,
                ratio_eps_logeps: q_tprime / (eps * eps.ln().abs().sqrt()),
                q_l2_initial: q0,
            })
        })
        .collect()
}

/// A table that can be written as CSV.
pub trait CsvTable {
    fn header(&self) -> &'static [&'static str];
    fn records(&self) -> Vec<Vec<f64>>;
}

impl CsvTable for RateReport {
    fn header(&self) -> &'static [&'static str] {
        &RateRow::CSV_HEADER
    }

    fn records(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.csv_values().to_vec()).collect()
    }
}

impl CsvTable for [LayerRow] {
    fn header(&self) -> &'static [&'static str] {
        &LayerRow::CSV_HEADER
    }

    fn records(&self) -> Vec<Vec<f64>> {
        self.iter().map(|r| r.csv_values().to_vec()).collect()
    }
}

impl CsvTable for Vec<LayerRow> {
    fn header(&self) -> &'static [&'static str] {
        self.as_slice().header()
    }

    fn records(&self) -> Vec<Vec<f64>> {
        self.as_slice().records()
    }
}

/// Renders a table as CSV text with shortest round-trip float formatting.
pub fn to_csv_string(table: &(impl CsvTable + ?Sized)) -> String {
    let mut out = table.header().join(",");
    out.push('\n');
    let mut buf = ryu::Buffer::new();
    for rec in table.records() {
        for (i, x) in rec.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            if x.is_finite() {
                out.push_str(buf.format_finite(*x));
            } else {
                let _ = write!(out, "{x}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn emit_csv(table: &(impl CsvTable + ?Sized), path: &Path) -> Result<()> {
    std::fs::write(path, to_csv_string(table)).map_err(|e| Error::io(path, e))
}
