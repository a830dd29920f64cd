//! Confining potentials, polynomial test functions and the scaled
//! perturbation `V + t phi / n` on the working interval `[-2-d, 2+d]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Polynomial;
use crate::scalar::Real;

pub const MAX_POTENTIAL_DEGREE: usize = 12;
pub const MAX_TEST_FUNCTION_DEGREE: usize = 8;
/// Relative width of the evaluation guard band beyond the working interval.
pub const GUARD_BAND: f64 = 0.10;

/// Polynomial test function of degree at most 8.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TestFunction {
    poly: Polynomial,
}

impl TestFunction {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        let poly = Polynomial::new(coeffs);
        if !poly.is_finite() {
            return Err(Error::Config(
                "test function coefficients must be finite".into(),
            ));
        }
        if poly.degree() > MAX_TEST_FUNCTION_DEGREE {
            return Err(Error::Config(format!(
                "test function degree {} exceeds {MAX_TEST_FUNCTION_DEGREE}",
                poly.degree()
            )));
        }
        Ok(Self { poly })
    }

    /// phi(x) = x^k
    pub fn monomial(k: usize) -> Self {
        Self::new(Polynomial::monomial(k, 1.0).coeffs().to_vec()).expect("degree within bound")
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c]).expect("constant")
    }

    pub fn poly(&self) -> &Polynomial {
        &self.poly
    }

    pub fn eval<T: Real>(&self, x: T) -> T {
        self.poly.eval(x)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::new(self.poly.add(&other.poly).coeffs().to_vec())
    }

    pub fn degree(&self) -> usize {
        self.poly.degree()
    }

    /// Compact label such as `1*x^2`, used in report ids.
    pub fn label(&self) -> String {
        let terms: Vec<String> = self
            .poly
            .coeffs()
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(k, c)| match k {
                0 => format!("{c}"),
                1 => format!("{c}*x"),
                _ => format!("{c}*x^{k}"),
            })
            .collect();
        if terms.is_empty() {
            "0".into()
        } else {
            terms.join("+")
        }
    }
}

impl TryFrom<Vec<f64>> for TestFunction {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TestFunction> for Vec<f64> {
    fn from(f: TestFunction) -> Self {
        f.poly.coeffs().to_vec()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub phi: TestFunction,
    pub t: f64,
    pub n: usize,
}

/// Polynomial confining potential, optionally perturbed by `t phi / n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    base: Polynomial,
    d: f64,
    d1: f64,
    /// Largest epsilon (capped at 1) for which the growth bound holds on the
    /// tail grid; see [`Potential::tail_grid`].
    growth_epsilon: f64,
    perturbation: Option<Perturbation>,
    effective: Polynomial,
    effective_derivative: Polynomial,
}

impl Potential {
    pub fn new(coeffs: Vec<f64>, d: f64) -> Result<Self> {
        Self::with_strip(coeffs, d, 1.0)
    }

    pub fn with_strip(coeffs: Vec<f64>, d: f64, d1: f64) -> Result<Self> {
        let base = Polynomial::new(coeffs);
        if !base.is_finite() {
            return Err(Error::Config(
                "potential coefficients must be finite".into(),
            ));
        }
        if base.degree() > MAX_POTENTIAL_DEGREE {
            return Err(Error::Config(format!(
                "potential degree {} exceeds {MAX_POTENTIAL_DEGREE}",
                base.degree()
            )));
        }
        if !base.is_even() {
            return Err(Error::Config(
                "base potential must be even (odd coefficients exactly zero)".into(),
            ));
        }
        if !(d > 0.0 && d.is_finite()) || !(d1 > 0.0 && d1.is_finite()) {
            return Err(Error::Config(format!(
                "d = {d} and d1 = {d1} must be positive"
            )));
        }
        let tail = Self::tail_grid(d);
        let growth_epsilon = tail
            .iter()
            .map(|&x| base.eval(x).abs() / (2.0 * (1.0 + x.abs()).ln()) - 1.0)
            .fold(f64::INFINITY, f64::min)
            .min(1.0);
        if growth_epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "potential violates |V| >= 2(1+eps) log(1+|x|) on the tail grid (best eps {growth_epsilon:.3})"
            )));
        }
        let effective_derivative = base.derivative();
        Ok(Self {
            effective: base.clone(),
            base,
            d,
            d1,
            growth_epsilon,
            perturbation: None,
            effective_derivative,
        })
    }

    /// V(x) = x^2 / 2 (Gaussian ensembles), d = 1.
    pub fn gaussian() -> Self {
        Self::new(vec![0.0, 0.0, 0.5], 1.0).expect("gaussian potential")
    }

    /// V with V'(x) = t x + g x^3.
    pub fn quartic(t: f64, g: f64, d: f64) -> Result<Self> {
        Self::new(vec![0.0, 0.0, t / 2.0, 0.0, g / 4.0], d)
    }

    /// Quartic member of the one-cut family on [-2, 2]: V' = t x + g x^3 with
    /// t + 3g = 1, which makes the equilibrium mass exactly one.
    pub fn quartic_one_cut(g: f64, d: f64) -> Result<Self> {
        Self::quartic(1.0 - 3.0 * g, g, d)
    }

    /// Grid used for the recorded growth epsilon: |x| in [2+d, 40(2+d)].
    pub fn tail_grid(d: f64) -> Vec<f64> {
        let lo = 2.0 + d;
        let hi = 40.0 * lo;
        (0..=200)
            .map(|i| lo * (hi / lo).powf(i as f64 / 200.0))
            .flat_map(|x| [x, -x])
            .collect()
    }

    pub fn base(&self) -> &Polynomial {
        &self.base
    }

    /// V_t = V + t phi / n
    pub fn effective(&self) -> &Polynomial {
        &self.effective
    }

    pub fn effective_derivative(&self) -> &Polynomial {
        &self.effective_derivative
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn d1(&self) -> f64 {
        self.d1
    }

    pub fn growth_epsilon(&self) -> f64 {
        self.growth_epsilon
    }

    pub fn perturbation(&self) -> Option<&Perturbation> {
        self.perturbation.as_ref()
    }

    /// Perturbation strength t (zero when unperturbed).
    pub fn t(&self) -> f64 {
        self.perturbation.as_ref().map_or(0.0, |p| p.t)
    }

    /// Evenness of the effective potential; symmetry shortcuts downstream are
    /// only taken when this holds.
    pub fn is_even(&self) -> bool {
        self.effective.is_even()
    }

    /// Working interval [-2-d, 2+d].
    pub fn interval(&self) -> (f64, f64) {
        (-2.0 - self.d, 2.0 + self.d)
    }

    pub fn guard_interval(&self) -> (f64, f64) {
        let r = (2.0 + self.d) * (1.0 + GUARD_BAND);
        (-r, r)
    }

    /// V_t(x) for order 0, V_t'(x) for order 1.
    pub fn eval(&self, x: f64, order: u8) -> Result<f64> {
        let (lo, hi) = self.guard_interval();
        if !(lo..=hi).contains(&x) {
            return Err(Error::Domain { x, lo, hi });
        }
        match order {
            0 => Ok(self.effective.eval(x)),
            1 => Ok(self.effective_derivative.eval(x)),
            _ => Err(Error::Config(format!(
                "derivative order {order} not supported"
            ))),
        }
    }

    /// Unchecked evaluation of V_t in any scalar type.
    pub fn value<T: Real>(&self, x: T) -> T {
        self.effective.eval(x)
    }

    pub fn derivative<T: Real>(&self, x: T) -> T {
        self.effective_derivative.eval(x)
    }

    /// Potential V + t phi / n. Perturbing an already perturbed potential
    /// replaces the previous perturbation.
    pub fn perturb(&self, phi: &TestFunction, t: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("perturbation needs n >= 2, got {n}")));
        }
        if phi.degree() > MAX_TEST_FUNCTION_DEGREE {
            return Err(Error::Config(format!(
                "test function degree {} exceeds {MAX_TEST_FUNCTION_DEGREE}",
                phi.degree()
            )));
        }
        if !t.is_finite() {
            return Err(Error::Config("perturbation strength must be finite".into()));
        }
        let effective = self.base.add(&phi.poly().scale(t / n as f64));
        let effective_derivative = effective.derivative();
        Ok(Self {
            base: self.base.clone(),
            d: self.d,
            d1: self.d1,
            growth_epsilon: self.growth_epsilon,
            perturbation: Some(Perturbation {
                phi: phi.clone(),
                t,
                n,
            }),
            effective,
            effective_derivative,
        })
    }

    /// Short id used in report file names.
    pub fn label(&self) -> String {
        let mut s = format!(
            "V[{}]",
            TestFunction {
                poly: self.base.clone()
            }
            .label()
        );
        if let Some(p) = &self.perturbation {
            s.push_str(&format!("+{}*({})/{}", p.t, p.phi.label(), p.n));
        }
        s
    }
}

/// Worst point of a growth check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub holds: bool,
    pub worst_x: f64,
    /// |V(x)| - 2(1+eps) log(1+|x|) at the worst point.
    pub worst_margin: f64,
}

/// True iff |V(x)| >= 2(1+eps) log(1+|x|) at every grid point.
pub fn check_growth(pot: &Potential, epsilon: f64, grid: &[f64]) -> Result<GrowthReport> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if grid.is_empty() {
        return Err(Error::Config("growth grid is empty".into()));
    }
    let mut worst = (f64::NAN, f64::INFINITY);
    for &x in grid {
        let margin = pot.effective().eval(x).abs() - 2.0 * (1.0 + epsilon) * (1.0 + x.abs()).ln();
        if margin < worst.1 {
            worst = (x, margin);
        }
    }
    Ok(GrowthReport {
        holds: worst.1 >= 0.0,
        worst_x: worst.0,
        worst_margin: worst.1,
    })
}
