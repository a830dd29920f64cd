//! Equilibrium measure on [-2, 2]: the polynomial P, the density
//! rho = P sqrt(4 - x^2) / (2 pi), the log potential u and the one-cut
//! conditions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{cosine_moment, Polynomial};
use crate::potential::{check_growth, Potential};
use crate::quadrature::{fourier_coefficient, CompositeRule, QuadSpec};

pub const MASS_TOLERANCE: f64 = 1e-8;
pub const DENSITY_GRID: usize = 1001;
pub const POTENTIAL_GRID: usize = 601;

/// Grid of (point, value) pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub points: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumData {
    pub p_coeffs: Polynomial,
    pub density_grid: Grid,
    pub mass: f64,
    /// Error estimate of `mass` (closed-form moments, so roundoff only).
    pub mass_error: f64,
    /// u(x) = 2 int log|x - y| rho(y) dy - V(x) on the working interval.
    pub effective_potential_grid: Grid,
}

impl EquilibriumData {
    /// rho(x), zero outside [-2, 2].
    pub fn density(&self, x: f64) -> f64 {
        density_from_p(&self.p_coeffs, x)
    }

    /// Same data with P scaled by `s` (test hook for broken normalisations).
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.p_coeffs = self.p_coeffs.scale(s);
        out.mass *= s;
        for v in &mut out.density_grid.values {
            *v *= s;
        }
        out
    }
}

fn density_from_p(p: &Polynomial, x: f64) -> f64 {
    if x.abs() >= 2.0 {
        0.0
    } else {
        p.eval(x) * (4.0 - x * x).sqrt() / (2.0 * PI)
    }
}

/// P(z) = (1/2pi) int [V'(z) - V'(2cos y)] / (z - 2cos y) dy.
///
/// With V'(z) = sum a_k z^k the divided difference is
/// sum_k a_k sum_{i<k} z^i w^{k-1-i}, and the y-average of w^j = (2cos y)^j
/// is the central binomial moment.
pub fn compute_p(pot: &Potential) -> Polynomial {
    let a = pot.effective_derivative().coeffs();
    let mut p = vec![0.0; a.len().max(1)];
    for (k, &ak) in a.iter().enumerate() {
        for (i, pi) in p.iter_mut().enumerate().take(k) {
            *pi += ak * cosine_moment(k - 1 - i);
        }
    }
    Polynomial::new(p)
}

/// int rho = sum_m p_{2m} Catalan(m).
pub fn mass_of(p: &Polynomial) -> f64 {
    let mut catalan = 1.0;
    let mut s = 0.0;
    for (m, c) in p.coeffs().iter().step_by(2).enumerate() {
        s += c * catalan;
        catalan *= 2.0 * (2 * m + 1) as f64 / (m + 2) as f64;
    }
    s
}

/// Chebyshev-cosine coefficients g_k of g(theta) = (2/pi) P(2cos theta) sin^2 theta,
/// so that rho(2cos theta) 2 sin theta dtheta = g(theta) dtheta on [0, pi].
fn density_cosine_coeffs(p: &Polynomial) -> Vec<f64> {
    let kmax = p.degree() + 2;
    let m = 4 * (kmax + 4);
    let g = |th: f64| 2.0 / PI * p.eval(2.0 * th.cos()) * th.sin().powi(2);
    (0..=kmax)
        .map(|k| {
            let (re, _) = fourier_coefficient(g, k as i64, m);
            if k == 0 {
                re
            } else {
                2.0 * re
            }
        })
        .collect()
}

/// int log|x - y| rho(y) dy from the expansion
/// log|2cos phi - 2cos theta| = -sum_k (2/k) cos k phi cos k theta inside
/// [-2, 2] and a - sum_k (2/k) (+-1)^k e^{-ka} cos k theta at x = +-2cosh a.
fn log_potential(g: &[f64], x: f64) -> f64 {
    let (a, c): (f64, Box<dyn Fn(usize) -> f64>) = if x.abs() <= 2.0 {
        let phi = (x / 2.0).acos();
        (0.0, Box::new(move |k| (k as f64 * phi).cos()))
    } else {
        let a = (x.abs() / 2.0).acosh();
        let s = x.signum();
        (
            a,
            Box::new(move |k| s.powi(k as i32) * (-(k as f64) * a).exp()),
        )
    };
    let tail: f64 = g
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, gk)| c(k) * gk / k as f64)
        .sum();
    PI * (a * g[0] - tail)
}

/// u(x) = 2 int log|x - y| rho(y) dy - V(x).
pub fn effective_potential(pot: &Potential, p: &Polynomial, x: f64) -> f64 {
    let g = density_cosine_coeffs(p);
    2.0 * log_potential(&g, x) - pot.value(x)
}

fn effective_potential_grid(pot: &Potential, p: &Polynomial, size: usize) -> Grid {
    let g = density_cosine_coeffs(p);
    let (lo, hi) = pot.interval();
    let points: Vec<f64> = (0..size)
        .map(|i| lo + (hi - lo) * i as f64 / (size - 1) as f64)
        .collect();
    let values = points
        .iter()
        .map(|&x| 2.0 * log_potential(&g, x) - pot.value(x))
        .collect();
    Grid { points, values }
}

/// Minimum of P on [-2, 2] over a fine grid: (argmin, value).
fn min_on_support(p: &Polynomial) -> (f64, f64) {
    (0..=4000)
        .map(|i| -2.0 + 4.0 * i as f64 / 4000.0)
        .map(|x| (x, p.eval(x)))
        .fold(
            (f64::NAN, f64::INFINITY),
            |a, b| if b.1 < a.1 { b } else { a },
        )
}

pub fn compute_density(pot: &Potential) -> Result<EquilibriumData> {
    compute_density_on(pot, DENSITY_GRID)
}

/// Equilibrium data with an equispaced density grid of `size` points on [-2, 2].
pub fn compute_density_on(pot: &Potential, size: usize) -> Result<EquilibriumData> {
    if size < 2 {
        return Err(Error::Config("density grid needs at least 2 points".into()));
    }
    let p = compute_p(pot);
    let (at, value) = min_on_support(&p);
    if value <= 0.0 {
        return Err(Error::OneCut { at, value });
    }
    let mass = mass_of(&p);
    if (mass - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::InconsistentPotential { mass });
    }
    let points: Vec<f64> = (0..size)
        .map(|i| -2.0 + 4.0 * i as f64 / (size - 1) as f64)
        .collect();
    let values = points.iter().map(|&x| density_from_p(&p, x)).collect();
    let mass_error = 4.0 * f64::EPSILON * p.coeffs().iter().map(|c| c.abs()).sum::<f64>();
    Ok(EquilibriumData {
        effective_potential_grid: effective_potential_grid(pot, &p, POTENTIAL_GRID),
        p_coeffs: p,
        density_grid: Grid { points, values },
        mass,
        mass_error,
    })
}

/// PV int rho(y) / (x - y) dy with `panels` Gauss-Legendre panels of order 8
/// in theta (y = 2cos theta), after subtracting the singularity:
/// int [rho(y) - rho(x)] / (x - y) dy + rho(x) log((2 + x) / (2 - x)).
pub fn principal_value(eq: &EquilibriumData, x: f64, panels: usize) -> f64 {
    let rule = CompositeRule::<f64>::new(0.0, PI, QuadSpec { panels, order: 8 });
    let rx = eq.density(x);
    let p = &eq.p_coeffs;
    let drx = {
        // rho'(x) for the removable point y = x
        let s = (4.0 - x * x).sqrt();
        (p.derivative().eval(x) * s - p.eval(x) * x / s) / (2.0 * PI)
    };
    let vals: Vec<f64> = rule
        .nodes
        .iter()
        .map(|&th| {
            let y = 2.0 * th.cos();
            let jac = 2.0 * th.sin();
            let q = if (x - y).abs() < 1e-9 {
                -drx
            } else {
                (eq.density(y) - rx) / (x - y)
            };
            q * jac
        })
        .collect();
    rule.integrate(&vals) + rx * ((2.0 + x) / (2.0 - x)).ln()
}

/// Residual of V'(x) = 2 PV int rho(y) / (x - y) dy together with its
/// quadrature error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub value: f64,
    pub error: f64,
}

pub fn equilibrium_residual(pot: &Potential, eq: &EquilibriumData, points: &[f64]) -> Result<f64> {
    equilibrium_residual_with(pot, eq, points, 1e-11).map(|r| r.value)
}

/// Panels are doubled from 16 until the estimated quadrature error of every
/// PV integral drops below `tol`.
pub fn equilibrium_residual_with(
    pot: &Potential,
    eq: &EquilibriumData,
    points: &[f64],
    tol: f64,
) -> Result<Residual> {
    let mut worst = Residual {
        value: 0.0,
        error: 0.0,
    };
    for &x in points {
        if !(x.abs() <= 1.95) {
            return Err(Error::Domain {
                x,
                lo: -1.95,
                hi: 1.95,
            });
        }
        let mut panels = 16;
        let mut prev = principal_value(eq, x, panels);
        let (pv, err) = loop {
            panels *= 2;
            let cur = principal_value(eq, x, panels);
            let err = (cur - prev).abs();
            if err <= tol {
                break (cur, err);
            }
            if panels >= 4096 {
                return Err(Error::Numeric(format!(
                    "principal value at x = {x} did not converge: estimated error {err:e} > {tol:e} with {panels} panels"
                )));
            }
            prev = cur;
        };
        let r = (pot.derivative(x) - 2.0 * pv).abs();
        if r > worst.value {
            worst.value = r;
        }
        worst.error = worst.error.max(2.0 * err);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub pass: bool,
    pub detail: String,
    /// Point where the condition is closest to failing (or fails).
    pub witness: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub c1: ConditionCheck,
    pub c2: ConditionCheck,
    pub c3: ConditionCheck,
    pub c4: ConditionCheck,
    pub p_coeffs: Polynomial,
    pub mass: f64,
    pub edge_exponents: (f64, f64),
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.c1.pass && self.c2.pass && self.c3.pass && self.c4.pass
    }
}

/// Least-squares slope of log rho against log(distance to the edge) on
/// distances in [0.001, 0.1].
fn edge_exponent(p: &Polynomial, right: bool) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..50)
        .map(|i| 10f64.powf(-3.0 + 2.0 * i as f64 / 49.0))
        .map(|dist| {
            let x = if right { 2.0 - dist } else { -2.0 + dist };
            (dist.ln(), density_from_p(p, x).ln())
        })
        .unzip();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn verify_one_cut(pot: &Potential) -> ConditionReport {
    let p = compute_p(pot);
    let mass = mass_of(&p);

    let growth = check_growth(pot, pot.growth_epsilon(), &Potential::tail_grid(pot.d()))
        .expect("tail grid is nonempty and epsilon positive");
    let even = pot.is_even();
    let c1 = ConditionCheck {
        pass: even && growth.holds,
        detail: format!(
            "even: {even}; growth with eps = {:.4} on the tail grid: {}",
            pot.growth_epsilon(),
            growth.holds
        ),
        witness: Some(growth.worst_x),
    };

    let c2 = ConditionCheck {
        pass: (mass - 1.0).abs() <= MASS_TOLERANCE,
        detail: format!("mass of P sqrt(4-x^2)/(2pi) on [-2,2] = {mass:.15}"),
        witness: None,
    };

    let (at, pmin) = min_on_support(&p);
    let exps = (edge_exponent(&p, false), edge_exponent(&p, true));
    let edges_ok = [exps.0, exps.1].iter().all(|e| (e - 0.5).abs() <= 0.1);
    let c3 = ConditionCheck {
        pass: pmin > 0.0 && edges_ok,
        detail: format!(
            "min P on [-2,2] = {pmin:.6e} at {at:.4}; edge exponents ({:.4}, {:.4})",
            exps.0, exps.1
        ),
        witness: Some(at),
    };

    let grid = effective_potential_grid(pot, &p, 4 * POTENTIAL_GRID);
    let (mut umax, mut outside) = (f64::NEG_INFINITY, (f64::NAN, f64::NEG_INFINITY));
    for (&x, &u) in grid.points.iter().zip(&grid.values) {
        if x.abs() <= 2.0 {
            umax = umax.max(u);
        } else if x.abs() > 2.01 && u > outside.1 {
            outside = (x, u);
        }
    }
    let c4 = ConditionCheck {
        pass: outside.1 < umax - 1e-6,
        detail: format!(
            "max u on [-2,2] = {umax:.10}; max u for 2.01 < |x| <= 2+d is {:.10}",
            outside.1
        ),
        witness: Some(outside.0),
    };

    ConditionReport {
        c1,
        c2,
        c3,
        c4,
        p_coeffs: p,
        mass,
        edge_exponents: exps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quartic() -> Potential {
        Potential::quartic(0.7, 0.1, 1.0).unwrap()
    }

    #[test]
    fn p_examples() {
        let p = compute_p(&Potential::gaussian());
        assert_eq!(p.coeffs(), &[1.0]);
        let p = compute_p(&quartic());
        assert!((p.eval(0.0f64) - 0.9).abs() < 1e-15);
        assert!((p.eval(2.0f64) - 1.3).abs() < 1e-15);
        assert_eq!(p.degree(), 2);
    }

    /// Direct trapezoid evaluation of the defining y-average.
    #[test]
    fn p_matches_defining_integral() {
        let pot = Potential::new(vec![0.0, 0.0, 0.2, 0.0, 0.05, 0.0, 0.01], 1.0).unwrap();
        let p = compute_p(&pot);
        for z in [-2.7, -0.4, 0.0, 1.1, 3.0] {
            let vz = pot.derivative(z);
            let direct = crate::quadrature::periodic_mean(
                |y| {
                    let w = 2.0 * f64::cos(y);
                    (vz - pot.derivative(w)) / (z - w)
                },
                257,
            );
            assert!((direct - p.eval(z)).abs() < 1e-12, "z = {z}");
        }
    }

    #[test]
    fn semicircle() {
        let eq = compute_density(&Potential::gaussian()).unwrap();
        assert!((eq.density(0.0) - 1.0 / PI).abs() < 1e-15);
        assert_eq!(eq.mass, 1.0);
        assert_eq!(eq.density(2.0), 0.0);
        for (x, v) in eq.density_grid.points.iter().zip(&eq.density_grid.values) {
            assert!((v - (4.0 - x * x).max(0.0).sqrt() / (2.0 * PI)).abs() < 1e-15);
        }
    }

    #[test]
    fn quartic_mass_is_one() {
        let eq = compute_density(&quartic()).unwrap();
        assert!((eq.mass - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mass_matches_quadrature() {
        let p = Polynomial::new(vec![0.3, 0.0, 0.2, 0.0, 0.01]);
        let rule = CompositeRule::<f64>::new(
            0.0,
            PI,
            QuadSpec {
                panels: 8,
                order: 16,
            },
        );
        let vals: Vec<f64> = rule
            .nodes
            .iter()
            .map(|&th| density_from_p(&p, 2.0 * th.cos()) * 2.0 * th.sin())
            .collect();
        assert!((rule.integrate(&vals) - mass_of(&p)).abs() < 1e-13);
    }

    #[test]
    fn rejects_inconsistent_and_multi_cut() {
        let wide = Potential::new(vec![0.0, 0.0, 0.4], 1.0).unwrap();
        assert!(matches!(
            compute_density(&wide),
            Err(Error::InconsistentPotential { .. })
        ));
        let two_cut = Potential::quartic_one_cut(1.5, 1.0).unwrap();
        match compute_density(&two_cut) {
            Err(Error::OneCut { at, value }) => {
                assert!(at.abs() < 1e-9);
                assert!((value + 0.5).abs() < 1e-12);
            }
            other => panic!("expected one-cut violation, got {other:?}"),
        }
    }

    #[test]
    fn semicircle_residual() {
        let pot = Potential::gaussian();
        let eq = compute_density(&pot).unwrap();
        assert!(equilibrium_residual(&pot, &eq, &[-1.0, 0.3, 1.5]).unwrap() <= 1e-8);
        let broken = eq.scaled(2.0);
        assert!(equilibrium_residual(&pot, &broken, &[1.0]).unwrap() > 0.1);
    }

    #[test]
    fn quartic_residual() {
        let pot = quartic();
        let eq = compute_density(&pot).unwrap();
        let pts: Vec<f64> = (0..20).map(|i| -1.9 + 3.8 * i as f64 / 19.0).collect();
        assert!(equilibrium_residual(&pot, &eq, &pts).unwrap() <= 1e-7);
    }

    #[test]
    fn residual_rejects_edge_points() {
        let pot = Potential::gaussian();
        let eq = compute_density(&pot).unwrap();
        assert!(equilibrium_residual(&pot, &eq, &[1.99]).is_err());
    }

    #[test]
    fn residual_converges_under_refinement() {
        let pot = quartic();
        let eq = compute_density(&pot).unwrap();
        let x = 0.7;
        let exact = pot.derivative(x) / 2.0;
        let mut prev = f64::INFINITY;
        for panels in [1, 2, 4] {
            let err = (principal_value(&eq, x, panels) - exact).abs();
            assert!(
                err <= prev / 10.0 || err < 1e-12,
                "panels {panels}: {err} vs {prev}"
            );
            prev = err;
        }
    }

    #[test]
    fn effective_potential_is_constant_on_support() {
        for pot in [Potential::gaussian(), quartic()] {
            let p = compute_p(&pot);
            let u0 = effective_potential(&pot, &p, 0.0);
            for x in [-1.9, -0.5, 0.8, 2.0] {
                assert!((effective_potential(&pot, &p, x) - u0).abs() < 1e-12);
            }
        }
        // semicircle: u = -1 on the support
        let g = Potential::gaussian();
        assert!((effective_potential(&g, &compute_p(&g), 0.3) + 1.0).abs() < 1e-13);
    }

    /// Compare the series for the log potential against a brute-force
    /// theta quadrature with the log singularity resolved by panel refinement.
    #[test]
    fn log_potential_matches_quadrature_outside() {
        let pot = quartic();
        let p = compute_p(&pot);
        let g = density_cosine_coeffs(&p);
        let rule = CompositeRule::<f64>::new(
            0.0,
            PI,
            QuadSpec {
                panels: 32,
                order: 16,
            },
        );
        for x in [-2.6, 2.3, 3.0] {
            let vals: Vec<f64> = rule
                .nodes
                .iter()
                .map(|&th| {
                    let y = 2.0 * th.cos();
                    (x - y).abs().ln() * density_from_p(&p, y) * 2.0 * th.sin()
                })
                .collect();
            assert!(
                (rule.integrate(&vals) - log_potential(&g, x)).abs() < 1e-12,
                "x = {x}"
            );
        }
    }

    #[test]
    fn one_cut_reports() {
        let r = verify_one_cut(&Potential::gaussian());
        assert!(r.all_pass(), "{r:?}");
        assert!((r.edge_exponents.0 - 0.5).abs() < 0.1);
        let r = verify_one_cut(&quartic());
        assert!(r.all_pass(), "{r:?}");
        let r = verify_one_cut(&Potential::quartic_one_cut(1.5, 1.0).unwrap());
        assert!(r.c1.pass && r.c2.pass);
        assert!(!r.c3.pass);
        assert!(r.c3.witness.unwrap().abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn one_cut_family_has_unit_mass(g in 0.0f64..0.3) {
            let pot = Potential::quartic_one_cut(g, 1.0).unwrap();
            prop_assert!((mass_of(&compute_p(&pot)) - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn edge_exponent_near_half(g in 0.0f64..0.3) {
            let p = compute_p(&Potential::quartic_one_cut(g, 1.0).unwrap());
            prop_assert!((edge_exponent(&p, true) - 0.5).abs() <= 0.1);
            prop_assert!((edge_exponent(&p, false) - 0.5).abs() <= 0.1);
        }
    }
}
