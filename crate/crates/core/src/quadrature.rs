//! Gauss-Legendre rules, composite panel rules with spectral cumulative
//! integration, and the periodic trapezoid rule.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Gauss-Legendre rule on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre<T: Real> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

/// Legendre values P_0..P_{m} at x.
fn legendre_all<T: Real>(m: usize, x: T) -> Vec<T> {
    let mut p = Vec::with_capacity(m + 1);
    p.push(T::one());
    if m >= 1 {
        p.push(x);
    }
    for k in 1..m {
        let kf = T::of_usize(k);
        let next = ((kf + kf + T::one()) * x * p[k] - kf * p[k - 1]) / (kf + T::one());
        p.push(next);
    }
    p
}

/// (P_m(x), P_m'(x)).
fn legendre_with_derivative<T: Real>(m: usize, x: T) -> (T, T) {
    let mut p0 = T::one();
    let mut p1 = x;
    for k in 1..m {
        let kf = T::of_usize(k);
        let p2 = ((kf + kf + T::one()) * x * p1 - kf * p0) / (kf + T::one());
        p0 = p1;
        p1 = p2;
    }
    let mf = T::of_usize(m);
    let dp = mf * (x * p1 - p0) / (x * x - T::one());
    (p1, dp)
}

impl<T: Real> GaussLegendre<T> {
    /// Nodes ascending. Newton iterations run in `T`, so double-double rules
    /// are accurate to the full working precision.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![T::zero(); order];
        let mut weights = vec![T::zero(); order];
        if order == 1 {
            weights[0] = T::of(2.0);
            return Self { nodes, weights };
        }
        let m = order;
        for i in 0..m.div_ceil(2) {
            let guess = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            let mut x = T::of(guess);
            for _ in 0..100 {
                let (p, dp) = legendre_with_derivative(m, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() <= T::epsilon() * T::of(4.0) {
                    break;
                }
            }
            let (_, dp) = legendre_with_derivative(m, x);
            let w = T::of(2.0) / ((T::one() - x * x) * dp * dp);
            nodes[m - 1 - i] = x;
            nodes[i] = -x;
            weights[i] = w;
            weights[m - 1 - i] = w;
        }
        if m % 2 == 1 {
            nodes[m / 2] = T::zero();
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }
}

/// Panel layout of a composite rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSpec {
    pub panels: usize,
    pub order: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        Self {
            panels: 64,
            order: 24,
        }
    }
}

impl QuadSpec {
    pub fn refined(self) -> Self {
        Self {
            panels: self.panels * 2,
            order: self.order,
        }
    }
}

/// Composite Gauss-Legendre rule on [a, b] with equal panels.
#[derive(Clone, Debug)]
pub struct CompositeRule<T: Real> {
    pub a: T,
    pub b: T,
    pub spec: QuadSpec,
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
    base: GaussLegendre<T>,
    /// `partial[i][j]` = int_{-1}^{x_i} l_j on the reference panel.
    partial: Vec<Vec<T>>,
    /// Normalised Legendre interpolation factors w_j (2m+1)/2 P_m(x_j).
    interp: Vec<Vec<T>>,
    /// `diff[i][j]` = l_j'(x_i) on the reference panel.
    diff: Vec<Vec<T>>,
}

impl<T: Real> CompositeRule<T> {
    pub fn new(a: T, b: T, spec: QuadSpec) -> Self {
        assert!(spec.panels >= 1 && spec.order >= 2);
        let base = GaussLegendre::<T>::new(spec.order);
        let m = spec.order;
        let h = (b - a) / T::of_usize(spec.panels);
        let half = h * T::half();
        let mut nodes = Vec::with_capacity(m * spec.panels);
        let mut weights = Vec::with_capacity(m * spec.panels);
        for p in 0..spec.panels {
            let left = a + h * T::of_usize(p);
            for j in 0..m {
                nodes.push(left + half * (base.nodes[j] + T::one()));
                weights.push(half * base.weights[j]);
            }
        }
        let interp: Vec<Vec<T>> = (0..m)
            .map(|j| {
                let pj = legendre_all(m - 1, base.nodes[j]);
                (0..m)
                    .map(|k| base.weights[j] * T::of((2 * k + 1) as f64 * 0.5) * pj[k])
                    .collect()
            })
            .collect();
        let partial = base
            .nodes
            .iter()
            .map(|&xi| {
                let ints = legendre_integrals(m - 1, xi);
                (0..m)
                    .map(|j| (0..m).map(|k| interp[j][k] * ints[k]).sum())
                    .collect()
            })
            .collect();
        let diff = base
            .nodes
            .iter()
            .map(|&xi| {
                let dp = legendre_derivatives(m - 1, xi);
                (0..m)
                    .map(|j| (0..m).map(|k| interp[j][k] * dp[k]).sum())
                    .collect()
            })
            .collect();
        Self {
            a,
            b,
            spec,
            nodes,
            weights,
            base,
            partial,
            interp,
            diff,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn order(&self) -> usize {
        self.spec.order
    }

    pub fn panel_width(&self) -> T {
        (self.b - self.a) / T::of_usize(self.spec.panels)
    }

    /// sum_i w_i f_i
    pub fn integrate(&self, f: &[T]) -> T {
        debug_assert_eq!(f.len(), self.len());
        let mut acc = T::zero();
        for (w, v) in self.weights.iter().zip(f) {
            acc += *w * *v;
        }
        acc
    }

    /// `F_i = int_a^{x_i} f` using the panel interpolant (spectral accuracy).
    pub fn cumulative(&self, f: &[T]) -> Vec<T> {
        let m = self.order();
        let half = self.panel_width() * T::half();
        let mut out = Vec::with_capacity(f.len());
        let mut offset = T::zero();
        for chunk in f.chunks(m) {
            for row in &self.partial {
                let mut s = T::zero();
                for (c, v) in row.iter().zip(chunk) {
                    s += *c * *v;
                }
                out.push(offset + half * s);
            }
            let mut tot = T::zero();
            for (w, v) in self.base.weights.iter().zip(chunk) {
                tot += *w * *v;
            }
            offset += half * tot;
        }
        out
    }

    /// `(eps f)(x_i) = (1/2)[int_a^{x_i} f - int_{x_i}^b f]`.
    pub fn epsilon(&self, f: &[T]) -> Vec<T> {
        let total = self.integrate(f);
        let half_total = total * T::half();
        self.cumulative(f)
            .into_iter()
            .map(|c| c - half_total)
            .collect()
    }

    /// Derivative of the panel interpolant at the nodes.
    pub fn differentiate(&self, f: &[T]) -> Vec<T> {
        let scale = T::of(2.0) / self.panel_width();
        let mut out = Vec::with_capacity(f.len());
        for chunk in f.chunks(self.order()) {
            for row in &self.diff {
                let mut s = T::zero();
                for (c, v) in row.iter().zip(chunk) {
                    s += *c * *v;
                }
                out.push(s * scale);
            }
        }
        out
    }

    /// Panel index and reference coordinate of x (clamped into [a, b]).
    fn locate(&self, x: T) -> (usize, T) {
        let h = self.panel_width();
        let rel = ((x - self.a) / h).as_f64();
        let p = (rel.floor().max(0.0) as usize).min(self.spec.panels - 1);
        let left = self.a + h * T::of_usize(p);
        let t = (x - left) / (h * T::half()) - T::one();
        (p, t)
    }

    /// Value of the panel interpolant of f at an arbitrary x in [a, b].
    pub fn interpolate(&self, f: &[T], x: T) -> T {
        let m = self.order();
        let (p, t) = self.locate(x);
        let pl = legendre_all(m - 1, t);
        let chunk = &f[p * m..(p + 1) * m];
        let mut s = T::zero();
        for (j, v) in chunk.iter().enumerate() {
            let lj: T = (0..m).map(|k| self.interp[j][k] * pl[k]).sum();
            s += lj * *v;
        }
        s
    }

    /// `int_a^x f` for an arbitrary x in [a, b].
    pub fn integrate_to(&self, f: &[T], x: T) -> T {
        let m = self.order();
        let (p, t) = self.locate(x);
        let half = self.panel_width() * T::half();
        let mut offset = T::zero();
        for chunk in f.chunks(m).take(p) {
            for (w, v) in self.base.weights.iter().zip(chunk) {
                offset += half * *w * *v;
            }
        }
        let ints = legendre_integrals(m - 1, t);
        let chunk = &f[p * m..(p + 1) * m];
        let mut s = T::zero();
        for (j, v) in chunk.iter().enumerate() {
            let lj: T = (0..m).map(|k| self.interp[j][k] * ints[k]).sum();
            s += lj * *v;
        }
        offset + half * s
    }

    /// Index range of the nodes inside panel p.
    pub fn panel_range(&self, p: usize) -> std::ops::Range<usize> {
        let m = self.order();
        p * m..(p + 1) * m
    }

    pub fn to_f64(&self) -> CompositeRule<f64> {
        CompositeRule::new(self.a.as_f64(), self.b.as_f64(), self.spec)
    }
}

/// P_k'(x) for k = 0..=m via P_{k+1}' = P_{k-1}' + (2k+1) P_k.
fn legendre_derivatives<T: Real>(m: usize, x: T) -> Vec<T> {
    let p = legendre_all(m, x);
    let mut d = vec![T::zero(); m + 1];
    for k in 0..m {
        let prev = if k >= 1 { d[k - 1] } else { T::zero() };
        d[k + 1] = prev + T::of((2 * k + 1) as f64) * p[k];
    }
    d
}

/// int_{-1}^{x} P_k for k = 0..=m.
fn legendre_integrals<T: Real>(m: usize, x: T) -> Vec<T> {
    let p = legendre_all(m + 1, x);
    (0..=m)
        .map(|k| {
            if k == 0 {
                x + T::one()
            } else {
                (p[k + 1] - p[k - 1]) / T::of((2 * k + 1) as f64)
            }
        })
        .collect()
}

/// Mean of a 2pi-periodic function over `m` equispaced points starting at -pi,
/// i.e. the trapezoid approximation of (1/2pi) int_{-pi}^{pi} f.
pub fn periodic_mean<F: Fn(f64) -> f64>(f: F, m: usize) -> f64 {
    let h = 2.0 * std::f64::consts::PI / m as f64;
    let vals = (0..m).map(|k| f(-std::f64::consts::PI + h * k as f64));
    crate::scalar::compensated_sum(vals) / m as f64
}

/// Fourier coefficient (1/2pi) int e^{i j x} f(x) dx by the trapezoid rule,
/// returned as (re, im).
pub fn fourier_coefficient<F: Fn(f64) -> f64>(f: F, j: i64, m: usize) -> (f64, f64) {
    let re = periodic_mean(|x| f(x) * (j as f64 * x).cos(), m);
    let im = periodic_mean(|x| f(x) * (j as f64 * x).sin(), m);
    (re, im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dd::DoubleDouble;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let gl = GaussLegendre::<f64>::new(10);
        for deg in 0..20 {
            let s: f64 = gl
                .nodes
                .iter()
                .zip(&gl.weights)
                .map(|(x, w)| w * x.powi(deg))
                .sum();
            let exact = if deg % 2 == 1 {
                0.0
            } else {
                2.0 / (deg as f64 + 1.0)
            };
            assert!((s - exact).abs() < 1e-14, "deg {deg}");
        }
    }

    #[test]
    fn double_double_rule_beats_f64() {
        let gl = GaussLegendre::<DoubleDouble>::new(20);
        let s: DoubleDouble = gl
            .nodes
            .iter()
            .zip(&gl.weights)
            .map(|(x, w)| *w * *x * *x * *x * *x)
            .sum();
        let err = (s - DoubleDouble::from(2.0) / DoubleDouble::from(5.0)).as_f64();
        assert!(err.abs() < 1e-29, "{err:e}");
    }

    #[test]
    fn cumulative_integral_is_spectral() {
        let rule = CompositeRule::<f64>::new(
            -3.0,
            3.0,
            QuadSpec {
                panels: 8,
                order: 16,
            },
        );
        let f: Vec<f64> = rule.nodes.iter().map(|x| x.cos()).collect();
        let c = rule.cumulative(&f);
        for (x, v) in rule.nodes.iter().zip(&c) {
            assert!((v - (x.sin() - (-3.0f64).sin())).abs() < 1e-13);
        }
        let at = rule.integrate_to(&f, 0.123);
        assert!((at - (0.123f64.sin() + 3.0f64.sin())).abs() < 1e-13);
        let interp = rule.interpolate(&f, 1.234);
        assert!((interp - 1.234f64.cos()).abs() < 1e-13);
        let d = rule.differentiate(&f);
        for (x, v) in rule.nodes.iter().zip(&d) {
            assert!((v + x.sin()).abs() < 1e-11);
        }
    }

    #[test]
    fn epsilon_of_even_function_is_odd() {
        let rule = CompositeRule::<f64>::new(
            -3.0,
            3.0,
            QuadSpec {
                panels: 6,
                order: 12,
            },
        );
        let f: Vec<f64> = rule.nodes.iter().map(|x| (-x * x).exp()).collect();
        let e = rule.epsilon(&f);
        let n = e.len();
        for i in 0..n {
            assert!((e[i] + e[n - 1 - i]).abs() < 1e-13);
        }
    }

    #[test]
    fn periodic_rule_closed_form() {
        // (1/2pi) int dx / (a + b cos x) = 1/sqrt(a^2 - b^2)
        let m = periodic_mean(|x| 1.0 / (1.1 + 0.2 * x.cos()), 256);
        assert!((m - 1.0 / (1.1f64 * 1.1 - 0.04).sqrt()).abs() < 1e-15);
    }
}
