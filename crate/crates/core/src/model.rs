//! Model coefficients, Lotka–Volterra reaction terms and the relaxation pair
//! `(h, k)` that couples the two-state microscopic system to the cross-diffusion
//! system.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;

/// Coefficients shared by the cross-diffusion system and its microscopic
/// relaxation approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SktParams {
    pub d_u: f64,
    pub d_v: f64,
    pub sigma: f64,
    pub r_u: f64,
    pub r_v: f64,
    pub d11: f64,
    pub d12: f64,
    pub d21: f64,
    pub d22: f64,
}

impl Default for SktParams {
    fn default() -> Self {
        SktParams {
            d_u: 1.0,
            d_v: 1.0,
            sigma: 1.0,
            r_u: 1.0,
            r_v: 1.0,
            d11: 1.0,
            d12: 0.5,
            d21: 0.5,
            d22: 1.0,
        }
    }
}

impl SktParams {
    /// Pure diffusion: every reaction coefficient zero.
    pub fn without_reactions(self) -> Self {
        SktParams {
            r_u: 0.0,
            r_v: 0.0,
            d11: 0.0,
            d12: 0.0,
            d21: 0.0,
            d22: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, val) in [("d_u", self.d_u), ("d_v", self.d_v), ("sigma", self.sigma)] {
            if !(val.is_finite() && val > 0.0) {
                return Err(Error::param(format!("{name} must be > 0, got {val}")));
            }
        }
        for (name, val) in [
            ("r_u", self.r_u),
            ("r_v", self.r_v),
            ("d11", self.d11),
            ("d12", self.d12),
            ("d21", self.d21),
            ("d22", self.d22),
        ] {
            if !(val.is_finite() && val >= 0.0) {
                return Err(Error::param(format!("{name} must be >= 0, got {val}")));
            }
        }
        Ok(())
    }

    /// `f_u(u, v) = r_u - d11 u - d12 v`
    pub fn f_u(&self, u: f64, v: f64) -> f64 {
        self.r_u - self.d11 * u - self.d12 * v
    }

    /// `f_v(u, v) = r_v - d21 u - d22 v`
    pub fn f_v(&self, u: f64, v: f64) -> f64 {
        self.r_v - self.d21 * u - self.d22 * v
    }
}

pub fn f_u(p: &SktParams, u: f64, v: f64) -> f64 {
    p.f_u(u, v)
}

pub fn f_v(p: &SktParams, u: f64, v: f64) -> f64 {
    p.f_v(u, v)
}

/// The relaxation pair: switching rates `h` (slow to fast) and `k` (fast to
/// slow) with constant sum `s`, and the two microscopic diffusion rates.
///
/// On `[0, a]` the pair is affine, `h(v) = d_u/2 + sigma v`, and satisfies
/// `d_a + d_b h(v) / s = d_u + sigma v`. Outside that interval the slope
/// function is extended smoothly and stays inside `[-d_u/4, sigma a + 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HkSpec {
    /// A-priori bound on `v`; the affine range is `[0, a]`.
    pub a: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub s: f64,
    pub h0: f64,
    pub phi_slope: f64,
    pub phi_cap: f64,
    pub phi_floor: f64,
}

/// Builds the pair from the model coefficients and `sup v_init`.
pub fn build_hk(p: &SktParams, v_init_sup: f64) -> Result<HkSpec> {
    if !(v_init_sup.is_finite() && v_init_sup >= 0.0) {
        return Err(Error::param(format!(
            "sup of initial v must be finite and >= 0, got {v_init_sup}"
        )));
    }
    let a = if p.r_v > 0.0 {
        if p.d22 <= 0.0 {
            return Err(Error::param(
                "r_v > 0 requires d22 > 0 to bound v (A undefined)",
            ));
        }
        v_init_sup.max(p.r_v / (2.0 * p.d22))
    } else {
        v_init_sup
    };
    HkSpec::with_bound(p, a)
}

impl HkSpec {
    /// Builds the pair for an explicitly chosen bound `a`.
    pub fn with_bound(p: &SktParams, a: f64) -> Result<Self> {
        p.validate()?;
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::param(format!("bound A must be >= 0, got {a}")));
        }
        let phi_cap = p.sigma * a + 1.0;
        Ok(HkSpec {
            a,
            d_a: 0.5 * p.d_u,
            d_b: p.d_u + phi_cap,
            s: p.d_u + phi_cap,
            h0: 0.25 * p.d_u,
            phi_slope: p.sigma,
            phi_cap,
            phi_floor: -0.25 * p.d_u,
        })
    }

    /// `d_u`, recovered from `d_a = d_u / 2`.
    pub fn d_u(&self) -> f64 {
        2.0 * self.d_a
    }

    /// Slope function: `sigma v` on `[0, a]`, tanh-saturated towards the cap
    /// above `a` and towards the floor below 0; C1 at both junctions.
    pub fn phi(&self, v: f64) -> f64 {
        if v < 0.0 {
            let floor = -self.phi_floor;
            floor * (self.phi_slope * v / floor).tanh()
        } else if v <= self.a {
            self.phi_slope * v
        } else {
            self.phi_slope * self.a + (self.phi_slope * (v - self.a)).tanh()
        }
    }

    pub fn eval_h(&self, v: f64) -> f64 {
        self.d_a + self.phi(v)
    }

    pub fn eval_k(&self, v: f64) -> f64 {
        self.s - self.eval_h(v)
    }

    /// Diffusion rate seen by `u` at local equilibrium.
    pub fn effective_diffusion(&self, v: f64) -> f64 {
        self.d_a + self.d_b * self.eval_h(v) / self.s
    }
}

pub fn eval_h(spec: &HkSpec, v: f64) -> f64 {
    spec.eval_h(v)
}

pub fn eval_k(spec: &HkSpec, v: f64) -> f64 {
    spec.eval_k(v)
}

/// Largest violation of `d_a + d_b h(v)/s = d_u + sigma v` over `samples`
/// equispaced points of `[0, a]`.
pub fn check_hk_relation(spec: &HkSpec, p: &SktParams, samples: usize) -> f64 {
    let samples = samples.max(2);
    (0..samples)
        .map(|i| {
            let v = spec.a * i as f64 / (samples - 1) as f64;
            (spec.d_a + spec.d_b * spec.eval_h(v) / spec.s - (p.d_u + p.sigma * v)).abs()
        })
        .fold(0.0, f64::max)
}

/// Splits `u` into its local-equilibrium shares `u_a = k(v) u / s`,
/// `u_b = h(v) u / s`.
pub fn well_prepared_split(u: &Field, v: &Field, spec: &HkSpec) -> Result<(Field, Field)> {
    let ua = u.zip_map(v, |u, v| spec.eval_k(v) * u / spec.s)?;
    let ub = u.zip_map(v, |u, v| spec.eval_h(v) * u / spec.s)?;
    Ok((ua, ub))
}

fn check_nonnegative(name: &str, f: &Field) -> Result<()> {
    if !f.is_finite() {
        return Err(Error::contract(format!("{name} has non-finite values")));
    }
    if f.min() < 0.0 {
        return Err(Error::contract(format!(
            "{name} must be nonnegative, min is {}",
            f.min()
        )));
    }
    Ok(())
}

/// State of the microscopic system: slow and fast subpopulations of `u` and
/// the competitor `v`, for one relaxation parameter `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroState {
    pub t: f64,
    pub ua: Field,
    pub ub: Field,
    pub v: Field,
    pub eps: f64,
}

impl MicroState {
    pub fn new(t: f64, ua: Field, ub: Field, v: Field, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::param(format!("eps must be > 0, got {eps}")));
        }
        ua.same_grid(&ub)?;
        ua.same_grid(&v)?;
        check_nonnegative("u_A", &ua)?;
        check_nonnegative("u_B", &ub)?;
        check_nonnegative("v", &v)?;
        Ok(MicroState { t, ua, ub, v, eps })
    }

    /// Total density `u_A + u_B`.
    pub fn total(&self) -> Field {
        self.ua.add(&self.ub).expect("state fields share a grid")
    }
}

/// State of the cross-diffusion system.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitState {
    pub t: f64,
    pub u: Field,
    pub v: Field,
}

impl LimitState {
    pub fn new(t: f64, u: Field, v: Field) -> Result<Self> {
        u.same_grid(&v)?;
        check_nonnegative("u", &u)?;
        check_nonnegative("v", &v)?;
        Ok(LimitState { t, u, v })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;

    fn example_params() -> SktParams {
        SktParams {
            d_u: 2.0,
            sigma: 1.0,
            r_v: 1.0,
            d22: 1.0,
            ..SktParams::default()
        }
    }

    #[test]
    fn build_hk_hand_example() {
        let p = example_params();
        let spec = build_hk(&p, 3.0).unwrap();
        assert_eq!(spec.a, 3.0);
        assert_eq!(spec.d_a, 1.0);
        assert_eq!(spec.d_b, 6.0);
        assert_eq!(spec.s, 6.0);
        for v in [0.0, 0.5, 1.0, 2.0, 3.0] {
            assert!((spec.eval_h(v) - (1.0 + v)).abs() < 1e-15);
            assert!((spec.eval_k(v) - (5.0 - v)).abs() < 1e-15);
        }
        assert!((spec.d_a + spec.d_b * spec.eval_h(1.0) / spec.s - 3.0).abs() < 1e-15);
    }

    #[test]
    fn build_hk_degenerate_bound() {
        let p = SktParams {
            d_u: 1.5,
            ..SktParams::default()
        }
        .without_reactions();
        let spec = build_hk(&p, 0.0).unwrap();
        assert_eq!(spec.a, 0.0);
        assert_eq!(spec.s, 2.5);
        assert_eq!(spec.eval_h(0.0), 0.75);
        assert_eq!(spec.eval_k(0.0), 1.75);
    }

    #[test]
    fn build_hk_uses_printed_reaction_bound() {
        let p = SktParams {
            d_u: 1.0,
            sigma: 2.0,
            r_v: 4.0,
            d22: 1.0,
            ..SktParams::default()
        };
        assert_eq!(build_hk(&p, 0.0).unwrap().a, 2.0);
    }

    #[test]
    fn build_hk_needs_d22_when_v_grows() {
        let p = SktParams {
            r_v: 1.0,
            d22: 0.0,
            ..SktParams::default()
        };
        assert!(matches!(build_hk(&p, 1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn reaction_terms() {
        let p = SktParams {
            r_u: 0.0,
            d11: 0.0,
            d12: 0.0,
            ..SktParams::default()
        };
        assert_eq!(f_u(&p, 3.0, 7.0), 0.0);
        let p = SktParams {
            r_u: 1.0,
            d11: 0.5,
            d12: 0.25,
            r_v: 2.0,
            d21: 1.0,
            d22: 1.0,
            ..SktParams::default()
        };
        assert_eq!(f_u(&p, 2.0, 4.0), -1.0);
        assert_eq!(f_v(&p, 0.0, 2.0), 0.0);
    }

    #[test]
    fn well_prepared_split_examples() {
        let spec = build_hk(&example_params(), 3.0).unwrap();
        let g = Grid::line(1.0, 5).unwrap();
        let (ua, ub) =
            well_prepared_split(&Field::constant(g, 6.0), &Field::zeros(g), &spec).unwrap();
        assert!(ua.values().iter().all(|&x| (x - 5.0).abs() < 1e-14));
        assert!(ub.values().iter().all(|&x| (x - 1.0).abs() < 1e-14));

        let (ua, ub) = well_prepared_split(&Field::zeros(g), &Field::zeros(g), &spec).unwrap();
        assert!(ua.values().iter().chain(ub.values()).all(|&x| x == 0.0));

        // h(v*) = k(v*) at v* = 2 for this pair
        let (ua, ub) =
            well_prepared_split(&Field::constant(g, 3.0), &Field::constant(g, 2.0), &spec)
                .unwrap();
        assert_eq!(ua, ub);
        assert!((ua.values()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn hk_relation_residuals() {
        let p = example_params();
        let mut spec = build_hk(&p, 3.0).unwrap();
        assert!(check_hk_relation(&spec, &p, 101) <= 1e-12);
        assert!(check_hk_relation(&spec, &p, 2) <= 1e-12);
        spec.d_b += 0.1;
        let r = check_hk_relation(&spec, &p, 101);
        assert!((r - 0.1 * 4.0 / 6.0).abs() < 1e-12, "{r}");
    }

    #[test]
    fn extension_is_continuous_at_junctions() {
        let spec = build_hk(&example_params(), 3.0).unwrap();
        let d = 1e-7;
        for v in [0.0, spec.a] {
            let slope = (spec.phi(v + d) - spec.phi(v - d)) / (2.0 * d);
            assert!((slope - spec.phi_slope).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn hk_identities_hold_on_the_affine_range(
            d_u in 0.01f64..10.0,
            sigma in 0.01f64..10.0,
            r_v in 0.0f64..5.0,
            d22 in 0.1f64..5.0,
            vsup in 0.0f64..5.0,
            frac in 0.0f64..=1.0,
        ) {
            let p = SktParams { d_u, sigma, r_v, d22, ..SktParams::default() };
            let spec = build_hk(&p, vsup).unwrap();
            let v = frac * spec.a;
            let (h, k) = (spec.eval_h(v), spec.eval_k(v));
            prop_assert!((h + k - spec.s).abs() <= 1e-12 * spec.s.max(1.0));
            prop_assert!((spec.effective_diffusion(v) - (d_u + sigma * v)).abs() <= 1e-12 * (d_u + sigma * v).max(1.0));
            prop_assert!(h >= spec.h0 && k >= spec.h0);
        }

        #[test]
        fn hk_bounded_below_everywhere(
            d_u in 0.01f64..10.0,
            sigma in 0.01f64..10.0,
            vsup in 0.0f64..5.0,
            v in -1e3f64..1e3,
        ) {
            let p = SktParams { d_u, sigma, ..SktParams::default() };
            let spec = build_hk(&p, vsup).unwrap();
            prop_assert!(spec.eval_h(v) >= spec.h0);
            prop_assert!(spec.eval_k(v) >= spec.h0);
            prop_assert!((spec.eval_h(v) + spec.eval_k(v) - spec.s).abs() <= 1e-12 * spec.s);
        }

        #[test]
        fn split_recombines(
            u in proptest::collection::vec(0.0f64..10.0, 5),
            v in proptest::collection::vec(0.0f64..3.0, 5),
        ) {
            let g = Grid::line(1.0, 5).unwrap();
            let spec = build_hk(&example_params(), 3.0).unwrap();
            let uf = Field::new(g, u).unwrap();
            let (ua, ub) = well_prepared_split(&uf, &Field::new(g, v).unwrap(), &spec).unwrap();
            for i in 0..5 {
                let s = ua.values()[i] + ub.values()[i];
                prop_assert!((s - uf.values()[i]).abs() <= 1e-15 * uf.values()[i].max(1e-300) * 2.0);
            }
        }
    }
}
