//! Time stepping for both systems.
//!
//! The microscopic system is advanced by a symmetric splitting
//!
//! ```text
//! reaction(dt/2) . diffusion(dt/2) . relaxation(dt) . diffusion(dt/2) . reaction(dt/2)
//! ```
//!
//! where the stiff exchange term is integrated in closed form per node with
//! `v` frozen, diffusion is backward Euler and reaction is explicit Euler. No
//! substep depends on `eps` except through the exact exponential, so the step
//! cost and linear-solver work are independent of `eps`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, InteriorMask};
use crate::linsolve::{solve_shifted, LinearSolver, SolveOptions};
use crate::model::{HkSpec, LimitState, MicroState, SktParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub dt: f64,
    pub solver: LinearSolver,
    pub tol_lin: f64,
    /// `None` means 10 times the node count.
    pub max_iter: Option<usize>,
    pub clip_negative: bool,
}

impl StepConfig {
    pub fn new(dt: f64) -> Self {
        StepConfig {
            dt,
            solver: LinearSolver::Auto,
            tol_lin: 1e-10,
            max_iter: None,
            clip_negative: true,
        }
    }

    pub fn with_dt(&self, dt: f64) -> Self {
        StepConfig { dt, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.tol_lin > 0.0 && self.tol_lin <= 1e-4) {
            return Err(Error::param(format!(
                "tol_lin must lie in (0, 1e-4], got {}",
                self.tol_lin
            )));
        }
        Ok(())
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            solver: self.solver,
            tol: self.tol_lin,
            max_iter: self.max_iter,
        }
    }
}

/// Work and positivity bookkeeping for one or more steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub linear_iterations: usize,
    pub clipped_nodes: usize,
    /// Mass (trapezoid integral) added by clipping negative values to zero.
    pub clipped_mass: f64,
}

impl StepStats {
    pub fn absorb(&mut self, other: &StepStats) {
        self.linear_iterations += other.linear_iterations;
        self.clipped_nodes += other.clipped_nodes;
        self.clipped_mass += other.clipped_mass;
    }
}

/// Exact solution of the exchange subsystem over `dt` with `v` frozen.
///
/// Per node the sum `u_A + u_B` is invariant and the deviation
/// `Q = k u_B - h u_A` decays as `exp(-S dt / eps)`.
pub fn relax_exact(
    ua: &Field,
    ub: &Field,
    v: &Field,
    spec: &HkSpec,
    eps: f64,
    dt: f64,
) -> Result<(Field, Field)> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::param(format!("eps must be > 0, got {eps}")));
    }
    if !(dt >= 0.0) {
        return Err(Error::param(format!("dt must be >= 0, got {dt}")));
    }
    ua.same_grid(ub)?;
    ua.same_grid(v)?;
    let mut a = ua.clone();
    let mut b = ub.clone();
    relax_in_place(a.values_mut(), b.values_mut(), v.values(), spec, eps, dt);
    Ok((a, b))
}

fn relax_in_place(ua: &mut [f64], ub: &mut [f64], v: &[f64], spec: &HkSpec, eps: f64, dt: f64) {
    // 1 - exp(-S dt / eps), accurate for small arguments
    let decay = -(-spec.s * dt / eps).exp_m1();
    for i in 0..ua.len() {
        let h = spec.eval_h(v[i]);
        let k = spec.s - h;
        let q = k * ub[i] - h * ua[i];
        let shift = q * decay / spec.s;
        ua[i] += shift;
        ub[i] -= shift;
    }
}

/// One backward-Euler step of `df/dt = coeff Lap f`.
pub fn diffusion_step(f: &Field, coeff: f64, dt: f64, cfg: &StepConfig) -> Result<Field> {
    Ok(diffuse(f, coeff, dt, cfg)?.0)
}

fn diffuse(f: &Field, coeff: f64, dt: f64, cfg: &StepConfig) -> Result<(Field, usize)> {
    if !(coeff >= 0.0) {
        return Err(Error::param(format!("diffusion coefficient must be >= 0, got {coeff}")));
    }
    if coeff == 0.0 || dt == 0.0 {
        return Ok((f.clone(), 0));
    }
    let a = vec![1.0; f.len()];
    solve_shifted(&a, coeff * dt, f, &cfg.solve_options())
}

/// Explicit Euler reaction `x += tau * rate_i * x_i`, clipping negatives.
fn react(
    x: &mut [f64],
    rate: &[f64],
    tau: f64,
    clip: bool,
    weights: &[f64],
    stats: &mut StepStats,
) {
    for i in 0..x.len() {
        x[i] += tau * rate[i] * x[i];
        if clip && x[i] < 0.0 {
            stats.clipped_nodes += 1;
            stats.clipped_mass += -x[i] * weights[i];
            x[i] = 0.0;
        }
    }
}

fn micro_reaction(s: &mut MicroState, p: &SktParams, tau: f64, cfg: &StepConfig, w: &[f64], stats: &mut StepStats) {
    let n = s.v.len();
    let mut fu = vec![0.0; n];
    let mut fv = vec![0.0; n];
    {
        let (ua, ub, v) = (s.ua.values(), s.ub.values(), s.v.values());
        for i in 0..n {
            let u = ua[i] + ub[i];
            fu[i] = p.f_u(u, v[i]);
            fv[i] = p.f_v(u, v[i]);
        }
    }
    react(s.ua.values_mut(), &fu, tau, cfg.clip_negative, w, stats);
    react(s.ub.values_mut(), &fu, tau, cfg.clip_negative, w, stats);
    react(s.v.values_mut(), &fv, tau, cfg.clip_negative, w, stats);
}

fn micro_diffusion(
    s: &mut MicroState,
    p: &SktParams,
    spec: &HkSpec,
    tau: f64,
    cfg: &StepConfig,
    stats: &mut StepStats,
) -> Result<()> {
    let (a, i1) = diffuse(&s.ua, spec.d_a, tau, cfg)?;
    let (b, i2) = diffuse(&s.ub, spec.d_a + spec.d_b, tau, cfg)?;
    let (v, i3) = diffuse(&s.v, p.d_v, tau, cfg)?;
    s.ua = a;
    s.ub = b;
    s.v = v;
    stats.linear_iterations += i1 + i2 + i3;
    Ok(())
}

/// One splitting step of the microscopic system over `cfg.dt`.
pub fn step_micro(
    s: &MicroState,
    p: &SktParams,
    spec: &HkSpec,
    cfg: &StepConfig,
) -> Result<(MicroState, StepStats)> {
    let dt = cfg.dt;
    let half = 0.5 * dt;
    let w = InteriorMask::full(*s.v.grid()).weights();
    let mut stats = StepStats::default();
    let mut next = s.clone();

    micro_reaction(&mut next, p, half, cfg, &w, &mut stats);
    micro_diffusion(&mut next, p, spec, half, cfg, &mut stats)?;
    relax_in_place(
        next.ua.values_mut(),
        next.ub.values_mut(),
        next.v.values(),
        spec,
        s.eps,
        dt,
    );
    micro_diffusion(&mut next, p, spec, half, cfg, &mut stats)?;
    micro_reaction(&mut next, p, half, cfg, &w, &mut stats);

    next.t = s.t + dt;
    if !(next.ua.is_finite() && next.ub.is_finite() && next.v.is_finite()) {
        return Err(Error::Blowup { t: next.t });
    }
    Ok((next, stats))
}

/// One semi-implicit step of the cross-diffusion system over `cfg.dt`.
///
/// `v` takes explicit reaction then implicit diffusion. `u` takes explicit
/// reaction, then the cross-diffusion term is solved implicitly with the
/// coefficient `d_u + sigma v` lagged at the new `v`.
pub fn step_limit(
    s: &LimitState,
    p: &SktParams,
    cfg: &StepConfig,
) -> Result<(LimitState, StepStats)> {
    let dt = cfg.dt;
    let g = *s.u.grid();
    let w = InteriorMask::full(g).weights();
    let mut stats = StepStats::default();
    let (u, v) = (s.u.values(), s.v.values());
    let fu: Vec<f64> = (0..u.len()).map(|i| p.f_u(u[i], v[i])).collect();
    let fv: Vec<f64> = (0..u.len()).map(|i| p.f_v(u[i], v[i])).collect();

    let mut v_rhs = s.v.clone();
    react(v_rhs.values_mut(), &fv, dt, cfg.clip_negative, &w, &mut stats);
    let (v_new, iv) = diffuse(&v_rhs, p.d_v, dt, cfg)?;

    let mut u_rhs = s.u.clone();
    react(u_rhs.values_mut(), &fu, dt, cfg.clip_negative, &w, &mut stats);
    // (I - dt Lap M) u' = rhs  <=>  (M^-1 - dt Lap) (M u') = rhs
    let m: Vec<f64> = v_new.values().iter().map(|v| p.d_u + p.sigma * v).collect();
    let inv_m: Vec<f64> = m.iter().map(|m| 1.0 / m).collect();
    let (flux, iu) = solve_shifted(&inv_m, dt, &u_rhs, &cfg.solve_options())?;
    let u_new = Field::from_raw(
        g,
        flux.values().iter().zip(&inv_m).map(|(w, im)| w * im).collect(),
    );
    stats.linear_iterations += iv + iu;

    let next = LimitState {
        t: s.t + dt,
        u: u_new,
        v: v_new,
    };
    if !(next.u.is_finite() && next.v.is_finite()) {
        return Err(Error::Blowup { t: next.t });
    }
    Ok((next, stats))
}

/// A system that can be advanced by one step of a given length.
pub trait Evolution {
    type State: Clone;

    fn time(state: &Self::State) -> f64;

    fn set_time(state: &mut Self::State, t: f64);

    fn step(&self, state: &Self::State, dt: f64) -> Result<(Self::State, StepStats)>;
}

/// Microscopic system with fixed coefficients and relaxation pair.
#[derive(Debug, Clone, Copy)]
pub struct MicroSystem {
    pub params: SktParams,
    pub spec: HkSpec,
    pub cfg: StepConfig,
}

impl Evolution for MicroSystem {
    type State = MicroState;

    fn time(state: &MicroState) -> f64 {
        state.t
    }

    fn set_time(state: &mut MicroState, t: f64) {
        state.t = t;
    }

    fn step(&self, state: &MicroState, dt: f64) -> Result<(MicroState, StepStats)> {
        step_micro(state, &self.params, &self.spec, &self.cfg.with_dt(dt))
    }
}

/// Cross-diffusion system with fixed coefficients.
#[derive(Debug, Clone, Copy)]
pub struct LimitSystem {
    pub params: SktParams,
    pub cfg: StepConfig,
}

impl Evolution for LimitSystem {
    type State = LimitState;

    fn time(state: &LimitState) -> f64 {
        state.t
    }

    fn set_time(state: &mut LimitState, t: f64) {
        state.t = t;
    }

    fn step(&self, state: &LimitState, dt: f64) -> Result<(LimitState, StepStats)> {
        step_limit(state, &self.params, &self.cfg.with_dt(dt))
    }
}

/// Snapshots at the requested sample times plus whole-run bookkeeping.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    /// Starts at the initial time, strictly increasing.
    pub sample_times: Vec<f64>,
    pub snapshots: Vec<S>,
    /// Length of every step taken, in order.
    pub step_sizes: Vec<f64>,
    pub stats: StepStats,
}

impl<S> Trajectory<S> {
    pub fn last(&self) -> &S {
        self.snapshots.last().expect("trajectory holds the initial state")
    }
}

/// Relative slack under which a step is stretched to land on a target time.
const LANDING_SLACK: f64 = 1e-9;

/// Integrates from `s0` to `t_end` with nominal step `dt`, shortening steps
/// to land exactly on every sample time and on `t_end`.
pub fn run<E: Evolution>(
    system: &E,
    s0: E::State,
    t_end: f64,
    dt: f64,
    samples: &[f64],
) -> Result<Trajectory<E::State>> {
    run_observed(system, s0, t_end, dt, samples, |_, _| Ok(()))
}

/// Like [`run`], calling `observer(state, step_length)` on the initial state
/// (with length 0) and after every step.
pub fn run_observed<E: Evolution>(
    system: &E,
    s0: E::State,
    t_end: f64,
    dt: f64,
    samples: &[f64],
    mut observer: impl FnMut(&E::State, f64) -> Result<()>,
) -> Result<Trajectory<E::State>> {
    let t0 = E::time(&s0);
    if !(t_end > t0) {
        return Err(Error::param(format!("final time {t_end} must exceed start time {t0}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::param(format!("dt must be > 0, got {dt}")));
    }
    let mut targets: Vec<f64> = samples
        .iter()
        .copied()
        .filter(|&t| t > t0 && t < t_end)
        .collect();
    if let Some(&bad) = samples.iter().find(|&&t| t < t0 || t > t_end || !t.is_finite()) {
        return Err(Error::param(format!("sample time {bad} outside [{t0}, {t_end}]")));
    }
    targets.sort_by(f64::total_cmp);
    targets.dedup();
    let record_end = samples.iter().any(|&t| t == t_end);
    targets.push(t_end);

    observer(&s0, 0.0)?;
    let mut traj = Trajectory {
        sample_times: vec![t0],
        snapshots: vec![s0.clone()],
        step_sizes: Vec::new(),
        stats: StepStats::default(),
    };
    let mut state = s0;
    let mut t = t0;
    for (ti, &target) in targets.iter().enumerate() {
        while t < target {
            let remaining = target - t;
            let h = if remaining <= dt * (1.0 + LANDING_SLACK) {
                remaining
            } else {
                dt
            };
            let (mut next, st) = system.step(&state, h)?;
            // snap to the landing target so sample times are exact
            t = if h == remaining { target } else { t + h };
            E::set_time(&mut next, t);
            traj.stats.absorb(&st);
            traj.step_sizes.push(h);
            observer(&next, h)?;
            state = next;
        }
        let is_end = ti + 1 == targets.len();
        if !is_end || record_end || samples.is_empty() {
            traj.sample_times.push(t);
            traj.snapshots.push(state.clone());
        }
    }
    Ok(traj)
}
