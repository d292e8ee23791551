//! Discrete spatial operators with zero-flux (homogeneous Neumann) boundaries.
//!
//! The Laplacian is the standard 3-point stencil per axis; the ghost node
//! outside each face mirrors the first interior node, so on a face the stencil
//! reads `2 (f_1 - f_0) / h^2`. Weighted by the trapezoidal rule the operator
//! is symmetric and its integral vanishes identically.

use crate::error::Result;
use crate::grid::Field;
use crate::model::{HkSpec, LimitState, MicroState, SktParams};

/// Neumann Laplacian with mirror ghost nodes.
pub fn laplacian(f: &Field) -> Field {
    let g = *f.grid();
    let v = f.values();
    let mut out = vec![0.0; v.len()];
    for axis in 0..g.dim() {
        let n = g.nodes(axis);
        let s = g.stride(axis);
        let inv_h2 = 1.0 / (g.spacing(axis) * g.spacing(axis));
        for start in g.line_starts(axis) {
            let at = |i: usize| v[start + i * s];
            out[start] += 2.0 * (at(1) - at(0)) * inv_h2;
            for i in 1..n - 1 {
                out[start + i * s] += (at(i + 1) - 2.0 * at(i) + at(i - 1)) * inv_h2;
            }
            out[start + (n - 1) * s] += 2.0 * (at(n - 2) - at(n - 1)) * inv_h2;
        }
    }
    Field::from_raw(g, out)
}

/// Right-hand side of the cross-diffusion system:
/// `du = Lap((d_u + sigma v) u) + f_u u`, `dv = d_v Lap(v) + f_v v`.
///
/// The flux variable `(d_u + sigma v) u` is formed nodewise before the
/// Laplacian, so the mirror ghosts impose the zero-flux condition on it.
pub fn rhs_limit(s: &LimitState, p: &SktParams) -> Result<(Field, Field)> {
    let w = s.u.zip_map(&s.v, |u, v| (p.d_u + p.sigma * v) * u)?;
    let mut du = laplacian(&w);
    let mut dv = laplacian(&s.v);
    let (u, v) = (s.u.values(), s.v.values());
    for (i, x) in du.values_mut().iter_mut().enumerate() {
        *x += p.f_u(u[i], v[i]) * u[i];
    }
    for (i, x) in dv.values_mut().iter_mut().enumerate() {
        *x = p.d_v * *x + p.f_v(u[i], v[i]) * v[i];
    }
    Ok((du, dv))
}

/// Non-stiff part of the microscopic system (diffusion and reaction). The
/// `1/eps` exchange term is left to the exact relaxation substep.
pub fn rhs_micro_slow(
    s: &MicroState,
    p: &SktParams,
    spec: &HkSpec,
) -> Result<(Field, Field, Field)> {
    s.ua.same_grid(&s.ub)?;
    s.ua.same_grid(&s.v)?;
    let mut dua = laplacian(&s.ua);
    let mut dub = laplacian(&s.ub);
    let mut dv = laplacian(&s.v);
    let (ua, ub, v) = (s.ua.values(), s.ub.values(), s.v.values());
    let d_fast = spec.d_a + spec.d_b;
    for i in 0..ua.len() {
        let u = ua[i] + ub[i];
        let fu = p.f_u(u, v[i]);
        dua.values_mut()[i] = spec.d_a * dua.values()[i] + fu * ua[i];
        dub.values_mut()[i] = d_fast * dub.values()[i] + fu * ub[i];
        dv.values_mut()[i] = p.d_v * dv.values()[i] + p.f_v(u, v[i]) * v[i];
    }
    Ok((dua, dub, dv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, l2_norm, Grid, InteriorMask};
    use crate::model::build_hk;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn max_abs_diff(a: &Field, b: &Field) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn cos_error(n: usize) -> f64 {
        let g = Grid::line(1.0, n).unwrap();
        let f = Field::from_fn(g, |p| (PI * p[0]).cos());
        let exact = f.scale(-PI * PI);
        max_abs_diff(&laplacian(&f), &exact)
    }

    #[test]
    fn constant_is_in_the_kernel() {
        let g = Grid::rect([1.0, 2.0], [7, 9]).unwrap();
        assert!(laplacian(&Field::constant(g, 4.2))
            .values()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn cosine_eigenfunction() {
        assert!(cos_error(257) <= 1e-3);
    }

    #[test]
    fn second_order_consistency() {
        let e = [cos_error(65), cos_error(129), cos_error(257)];
        for w in e.windows(2) {
            let r = w[0] / w[1];
            assert!((r - 4.0).abs() <= 0.4, "ratio {r}");
        }
    }

    #[test]
    fn tensor_cosine_in_2d() {
        let g = Grid::rect([1.0, 2.0], [129, 257]).unwrap();
        let f = Field::from_fn(g, |p| (PI * p[0]).cos() * (PI * p[1]).cos());
        let exact = f.scale(-PI * PI * 2.0);
        assert!(max_abs_diff(&laplacian(&f), &exact) < 2e-3);
    }

    #[test]
    fn rhs_limit_examples() {
        let g = Grid::line(1.0, 257).unwrap();
        let p = SktParams::default();
        let v = Field::from_fn(g, |x| 1.0 + (PI * x[0]).cos());
        let s = LimitState::new(0.0, Field::zeros(g), v.clone()).unwrap();
        let (du, _) = rhs_limit(&s, &p).unwrap();
        assert!(du.values().iter().all(|&x| x == 0.0));

        let q = p.without_reactions();
        let s = LimitState::new(0.0, Field::constant(g, 2.0), Field::constant(g, 0.7)).unwrap();
        let (du, dv) = rhs_limit(&s, &q).unwrap();
        assert!(du.values().iter().chain(dv.values()).all(|&x| x == 0.0));

        let s = LimitState::new(0.0, Field::constant(g, 1.0), v).unwrap();
        let (du, _) = rhs_limit(&s, &q).unwrap();
        let exact = Field::from_fn(g, |x| -PI * PI * (PI * x[0]).cos());
        assert!(max_abs_diff(&du, &exact) < 1e-3);
    }

    #[test]
    fn rhs_micro_examples() {
        let g = Grid::line(1.0, 257).unwrap();
        let p = SktParams::default();
        let spec = build_hk(&p, 1.5).unwrap();
        let z = Field::zeros(g);
        let s = MicroState::new(0.0, z.clone(), z.clone(), z.clone(), 0.1).unwrap();
        let (a, b, c) = rhs_micro_slow(&s, &p, &spec).unwrap();
        assert!(a.values().iter().chain(b.values()).chain(c.values()).all(|&x| x == 0.0));

        let q = p.without_reactions();
        let c1 = Field::constant(g, 1.0);
        let s = MicroState::new(0.0, c1.clone(), c1.scale(2.0), c1.clone(), 0.1).unwrap();
        let (a, b, c) = rhs_micro_slow(&s, &q, &spec).unwrap();
        assert!(a.values().iter().chain(b.values()).chain(c.values()).all(|&x| x == 0.0));

        // u_A = cos(pi x) is not nonnegative, so bypass the state constructor
        let mut spec1 = spec;
        spec1.d_a = 1.0;
        let s = MicroState {
            t: 0.0,
            ua: Field::from_fn(g, |x| (PI * x[0]).cos()),
            ub: z.clone(),
            v: z.clone(),
            eps: 0.1,
        };
        let (a, b, _) = rhs_micro_slow(&s, &q, &spec1).unwrap();
        let exact = Field::from_fn(g, |x| -PI * PI * (PI * x[0]).cos());
        assert!(max_abs_diff(&a, &exact) < 1e-3);
        assert!(b.values().iter().all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn laplacian_integrates_to_zero(vals in proptest::collection::vec(-10.0f64..10.0, 5 * 7)) {
            let g = Grid::rect([1.3, 0.7], [5, 7]).unwrap();
            let f = Field::new(g, vals).unwrap();
            let m = InteriorMask::full(g);
            let i = integrate(&laplacian(&f), &m).unwrap();
            let scale = l2_norm(&f, &m).unwrap();
            prop_assert!(i.abs() <= 1e-12 * scale.max(1.0));
        }

        #[test]
        fn laplacian_is_linear(
            a in proptest::collection::vec(-5.0f64..5.0, 9),
            b in proptest::collection::vec(-5.0f64..5.0, 9),
        ) {
            let g = Grid::line(2.0, 9).unwrap();
            let fa = Field::new(g, a).unwrap();
            let fb = Field::new(g, b).unwrap();
            let lhs = laplacian(&fa.add(&fb).unwrap());
            let rhs = laplacian(&fa).add(&laplacian(&fb)).unwrap();
            prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-12);
        }

        #[test]
        fn micro_mass_identity(
            a in proptest::collection::vec(0.0f64..5.0, 11),
            b in proptest::collection::vec(0.0f64..5.0, 11),
            v in proptest::collection::vec(0.0f64..2.0, 11),
        ) {
            let g = Grid::line(1.0, 11).unwrap();
            let p = SktParams::default().without_reactions();
            let spec = build_hk(&p, 2.0).unwrap();
            let s = MicroState::new(0.0, Field::new(g, a).unwrap(), Field::new(g, b).unwrap(), Field::new(g, v).unwrap(), 0.1).unwrap();
            let (da, db, _) = rhs_micro_slow(&s, &p, &spec).unwrap();
            let m = InteriorMask::full(g);
            let i = integrate(&da.add(&db).unwrap(), &m).unwrap();
            let scale = l2_norm(&s.ua, &m).unwrap() + l2_norm(&s.ub, &m).unwrap();
            prop_assert!(i.abs() <= 1e-12 * scale.max(1.0));
        }

        #[test]
        fn limit_mass_identity(
            u in proptest::collection::vec(0.0f64..5.0, 11),
            v in proptest::collection::vec(0.0f64..2.0, 11),
        ) {
            let g = Grid::line(1.0, 11).unwrap();
            let p = SktParams::default().without_reactions();
            let s = LimitState::new(0.0, Field::new(g, u).unwrap(), Field::new(g, v).unwrap()).unwrap();
            let (du, _) = rhs_limit(&s, &p).unwrap();
            let m = InteriorMask::full(g);
            let i = integrate(&du, &m).unwrap();
            let scale = l2_norm(&s.u, &m).unwrap();
            prop_assert!(i.abs() <= 1e-12 * scale.max(1.0));
        }
    }
}
