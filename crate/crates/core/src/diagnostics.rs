//! Functionals of the microscopic solution that are controlled uniformly in
//! `eps`: the exchange deviation `Q`, the errors `U`, `V` against the limit
//! solution, the energies `E_A`, `E_B`, the dissipation of `Q` and the
//! initial-deviation sizes `eps_init_l`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    gradient, h1_seminorm, l2_norm, sobolev_seminorm, sum_of_squares, Field, InteriorMask,
};
use crate::model::{HkSpec, LimitState, MicroState};

/// `Q = k(v) u_B - h(v) u_A`, nodewise.
pub fn compute_q(s: &MicroState, spec: &HkSpec) -> Field {
    let (ua, ub, v) = (s.ua.values(), s.ub.values(), s.v.values());
    let vals = (0..ua.len())
        .map(|i| spec.eval_k(v[i]) * ub[i] - spec.eval_h(v[i]) * ua[i])
        .collect();
    Field::from_raw(*s.v.grid(), vals)
}

/// `U = (u_A + u_B) - u` and `V = v_micro - v_limit` at a common time.
pub fn compute_uv(micro: &MicroState, limit: &LimitState) -> Result<(Field, Field)> {
    let scale = micro.t.abs().max(limit.t.abs()).max(1.0);
    if (micro.t - limit.t).abs() > 1e-12 * scale {
        return Err(Error::contract(format!(
            "states at different times: {} vs {}",
            micro.t, limit.t
        )));
    }
    let u = micro.total().sub(&limit.u)?;
    let v = micro.v.sub(&limit.v)?;
    Ok((u, v))
}

fn weighted_energy(
    weight: &Field,
    part: &Field,
    total: &Field,
    rate: &Field,
    s: f64,
) -> f64 {
    let g = *part.grid();
    let w = InteriorMask::full(g).weights();
    let dp = gradient(part);
    let dr = gradient(rate);
    let mut acc = 0.0;
    for i in 0..g.len() {
        let c = total.values()[i] / s;
        let sq: f64 = dp
            .iter()
            .zip(&dr)
            .map(|(a, b)| (a.values()[i] - c * b.values()[i]).powi(2))
            .sum();
        acc += w[i] * weight.values()[i] * sq;
    }
    acc
}

/// `E_A = int h(v) |grad u_A - (u/S) grad k(v)|^2`
pub fn energy_ea(s: &MicroState, spec: &HkSpec) -> f64 {
    let h = s.v.map(|v| spec.eval_h(v));
    let k = s.v.map(|v| spec.eval_k(v));
    weighted_energy(&h, &s.ua, &s.total(), &k, spec.s)
}

/// `E_B = int k(v) |grad u_B - (u/S) grad h(v)|^2`
pub fn energy_eb(s: &MicroState, spec: &HkSpec) -> f64 {
    let h = s.v.map(|v| spec.eval_h(v));
    let k = s.v.map(|v| spec.eval_k(v));
    weighted_energy(&k, &s.ub, &s.total(), &h, spec.s)
}

/// `dt (1/eps) int |grad Q|^2` for the current state.
pub fn dissipation_increment(s: &MicroState, spec: &HkSpec, dt: f64) -> f64 {
    dt * dissipation_rate(s, spec)
}

fn dissipation_rate(s: &MicroState, spec: &HkSpec) -> f64 {
    let q = compute_q(s, spec);
    let w = InteriorMask::full(*q.grid()).weights();
    sum_of_squares(&gradient(&q), &w) / s.eps
}

/// Size of the initial exchange deviation: for `l = -1` the L2 norm of `Q0`,
/// otherwise the largest of its order-`k` seminorms for `k = 0..=l+1`.
pub fn eps_init(l: i32, q0: &Field) -> Result<f64> {
    if l < -1 {
        return Err(Error::contract(format!("eps_init needs l >= -1, got {l}")));
    }
    let full = InteriorMask::full(*q0.grid());
    if l == -1 {
        return l2_norm(q0, &full);
    }
    let mut best: f64 = 0.0;
    for k in 0..=(l + 1) as usize {
        best = best.max(sobolev_seminorm(q0, k, &full)?);
    }
    Ok(best)
}

/// Largest nodewise residual of `S U_B = Q + (h(v_eps) - h(v)) u + h(v_eps) U`
/// where `U_B = u_B - h(v) u / S`, relative to the size of the terms.
pub fn fast_share_identity_residual(
    micro: &MicroState,
    limit: &LimitState,
    spec: &HkSpec,
) -> Result<f64> {
    let (u_err, _) = compute_uv(micro, limit)?;
    let q = compute_q(micro, spec);
    let mut worst: f64 = 0.0;
    for i in 0..q.len() {
        let (u, v) = (limit.u.values()[i], limit.v.values()[i]);
        let h_eps = spec.eval_h(micro.v.values()[i]);
        let h_lim = spec.eval_h(v);
        let ub_err = micro.ub.values()[i] - h_lim * u / spec.s;
        let rhs = (q.values()[i] + (h_eps - h_lim) * u + h_eps * u_err.values()[i]) / spec.s;
        let scale = ub_err
            .abs()
            .max(micro.ua.values()[i].abs() + micro.ub.values()[i].abs())
            .max(u.abs())
            .max(f64::MIN_POSITIVE);
        worst = worst.max((ub_err - rhs).abs() / scale);
    }
    Ok(worst)
}

/// Running supremum and trapezoidal L2-in-time integral of one scalar series.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeNorm {
    pub sup: f64,
    /// Accumulated `int value(t)^2 dt`.
    pub integral_sq: f64,
    last: Option<(f64, f64)>,
}

impl TimeNorm {
    pub fn push(&mut self, t: f64, value: f64) {
        self.sup = self.sup.max(value);
        let sq = value * value;
        if let Some((t0, sq0)) = self.last {
            self.integral_sq += 0.5 * (t - t0) * (sq0 + sq);
        }
        self.last = Some((t, sq));
    }

    pub fn l2_in_time(&self) -> f64 {
        self.integral_sq.sqrt()
    }
}

/// Spatial diagnostics of one state (one time level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    pub t: f64,
    pub q_l2: f64,
    pub q_h1: f64,
    pub u_l2: f64,
    pub u_h1: f64,
    pub v_l2: f64,
    pub v_h1: f64,
    pub e_a: f64,
    pub e_b: f64,
    /// Interior seminorms of `U` for orders `0..=l_max`.
    pub u_hl_interior: Vec<f64>,
    pub v_hl_interior: Vec<f64>,
}

impl SampleDiagnostics {
    /// Evaluates every spatial functional. Without a limit state the `U`, `V`
    /// entries are reported as zero.
    pub fn evaluate(
        micro: &MicroState,
        limit: Option<&LimitState>,
        spec: &HkSpec,
        interior: &InteriorMask,
        l_max: usize,
    ) -> Result<Self> {
        let full = InteriorMask::full(*micro.v.grid());
        let q = compute_q(micro, spec);
        let mut d = SampleDiagnostics {
            t: micro.t,
            q_l2: l2_norm(&q, &full)?,
            q_h1: h1_seminorm(&q, &full)?,
            u_l2: 0.0,
            u_h1: 0.0,
            v_l2: 0.0,
            v_h1: 0.0,
            e_a: energy_ea(micro, spec),
            e_b: energy_eb(micro, spec),
            u_hl_interior: vec![0.0; l_max + 1],
            v_hl_interior: vec![0.0; l_max + 1],
        };
        if let Some(limit) = limit {
            let (u, v) = compute_uv(micro, limit)?;
            d.u_l2 = l2_norm(&u, &full)?;
            d.u_h1 = h1_seminorm(&u, &full)?;
            d.v_l2 = l2_norm(&v, &full)?;
            d.v_h1 = h1_seminorm(&v, &full)?;
            for l in 0..=l_max {
                d.u_hl_interior[l] = sobolev_seminorm(&u, l, interior)?;
                d.v_hl_interior[l] = sobolev_seminorm(&v, l, interior)?;
            }
        }
        Ok(d)
    }

    /// Full `H^1(Omega)` norm of `U`.
    pub fn u_h1_full(&self) -> f64 {
        self.u_l2.hypot(self.u_h1)
    }

    pub fn v_h1_full(&self) -> f64 {
        self.v_l2.hypot(self.v_h1)
    }

    /// Full interior `H^l_max` norm of `U`.
    pub fn u_hl_full(&self) -> f64 {
        self.u_hl_interior.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn v_hl_full(&self) -> f64 {
        self.v_hl_interior.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Time-accumulated diagnostics of one microscopic run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Values at the requested sample times.
    pub samples: Vec<SampleDiagnostics>,
    pub q_l2: TimeNorm,
    pub u_l2: TimeNorm,
    pub u_h1: TimeNorm,
    pub v_l2: TimeNorm,
    pub v_h1: TimeNorm,
    pub u_hl_interior: TimeNorm,
    pub v_hl_interior: TimeNorm,
    pub energy: TimeNorm,
    /// `(1/eps) int_0^T int |grad Q|^2`, trapezoidal in time.
    pub dissipation: f64,
    /// `eps_init_l` for `l = -1..=max(l_max, 1)`, in that order.
    pub eps_init: Vec<f64>,
    pub clipped_mass: f64,
    last_rate: Option<(f64, f64)>,
}

impl DiagnosticsReport {
    pub fn new(q0: &Field, l_max: usize) -> Result<Self> {
        let top = l_max.max(1);
        let mut eps = Vec::with_capacity(top + 2);
        for l in -1..=top as i32 {
            eps.push(eps_init(l, q0)?);
        }
        Ok(DiagnosticsReport {
            eps_init: eps,
            ..Default::default()
        })
    }

    /// Folds one time level into the running norms. `rate` is the
    /// dissipation density `(1/eps) int |grad Q|^2` at that time.
    pub fn accumulate(&mut self, d: &SampleDiagnostics, rate: f64) {
        let t = d.t;
        self.q_l2.push(t, d.q_l2);
        self.u_l2.push(t, d.u_l2);
        self.u_h1.push(t, d.u_h1_full());
        self.v_l2.push(t, d.v_l2);
        self.v_h1.push(t, d.v_h1_full());
        self.u_hl_interior.push(t, d.u_hl_full());
        self.v_hl_interior.push(t, d.v_hl_full());
        self.energy.push(t, d.e_a + d.e_b);
        if let Some((t0, r0)) = self.last_rate {
            self.dissipation += 0.5 * (t - t0) * (r0 + rate);
        }
        self.last_rate = Some((t, rate));
    }

    pub fn eps_init_at(&self, l: i32) -> Option<f64> {
        self.eps_init.get((l + 1) as usize).copied()
    }
}

/// Accumulates one time level into `report`, returning the updated report.
pub fn accumulate_spacetime(
    mut report: DiagnosticsReport,
    values: &SampleDiagnostics,
    dissipation_rate: f64,
) -> DiagnosticsReport {
    report.accumulate(values, dissipation_rate);
    report
}

/// Drives a [`DiagnosticsReport`] from a step observer: evaluates every time
/// level, folds it into the running norms and keeps the sample-time values.
#[derive(Debug)]
pub struct DiagnosticsRecorder {
    pub report: DiagnosticsReport,
    spec: HkSpec,
    interior: InteriorMask,
    l_max: usize,
    sample_times: Vec<f64>,
    next_sample: usize,
}

impl DiagnosticsRecorder {
    pub fn new(
        initial: &MicroState,
        spec: HkSpec,
        interior: InteriorMask,
        l_max: usize,
        sample_times: &[f64],
    ) -> Result<Self> {
        let report = DiagnosticsReport::new(&compute_q(initial, &spec), l_max)?;
        let mut times = sample_times.to_vec();
        times.sort_by(f64::total_cmp);
        Ok(DiagnosticsRecorder {
            report,
            spec,
            interior,
            l_max,
            sample_times: times,
            next_sample: 0,
        })
    }

    pub fn observe(&mut self, micro: &MicroState, limit: Option<&LimitState>) -> Result<()> {
        let d = SampleDiagnostics::evaluate(micro, limit, &self.spec, &self.interior, self.l_max)?;
        let rate = dissipation_rate(micro, &self.spec);
        self.report.accumulate(&d, rate);
        while self.next_sample < self.sample_times.len()
            && self.sample_times[self.next_sample] <= micro.t * (1.0 + 1e-12)
        {
            if (self.sample_times[self.next_sample] - micro.t).abs() <= 1e-12 * micro.t.max(1.0) {
                self.report.samples.push(d.clone());
            }
            self.next_sample += 1;
        }
        Ok(())
    }
}
