use crate::error::{Error, Result};

/// C² periodic cubic spline through `(knots[i], values[i])`.
#[derive(Clone, Debug)]
pub struct PeriodicSpline {
    knots: Vec<f64>,
    period: f64,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl PeriodicSpline {
    /// `knots` must be strictly increasing and span less than one period.
    pub fn new(knots: Vec<f64>, period: f64, values: Vec<f64>) -> Result<Self> {
        let n = knots.len();
        if n < 3 || values.len() != n {
            return Err(Error::InvalidInput(format!(
                "periodic spline needs >= 3 knots with matching values ({} knots, {} values)",
                n,
                values.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || !(knots[n - 1] < knots[0] + period) {
            return Err(Error::InvalidInput(
                "spline knots must be strictly increasing within one period".into(),
            ));
        }
        let h = |i: usize| -> f64 {
            if i + 1 < n {
                knots[i + 1] - knots[i]
            } else {
                knots[0] + period - knots[n - 1]
            }
        };
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let prev = (i + n - 1) % n;
            let next = (i + 1) % n;
            let (hp, hi) = (h(prev), h(i));
            sub[i] = hp;
            diag[i] = 2.0 * (hp + hi);
            sup[i] = hi;
            rhs[i] = 6.0 * ((values[next] - values[i]) / hi - (values[i] - values[prev]) / hp);
        }
        let second = solve_cyclic(&sub, &diag, &sup, &rhs);
        Ok(Self {
            knots,
            period,
            values,
            second,
        })
    }

    fn locate(&self, t: f64) -> (usize, f64, f64) {
        let t0 = self.knots[0];
        let tt = t0 + (t - t0).rem_euclid(self.period);
        let i = self.knots.partition_point(|&k| k <= tt).saturating_sub(1);
        let right = if i + 1 < self.knots.len() {
            self.knots[i + 1]
        } else {
            t0 + self.period
        };
        (i, right - self.knots[i], tt - self.knots[i])
    }

    pub fn eval(&self, t: f64) -> f64 {
        let (i, h, dt) = self.locate(t);
        let j = (i + 1) % self.knots.len();
        let b = dt / h;
        let a = 1.0 - b;
        a * self.values[i]
            + b * self.values[j]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[j]) * h * h / 6.0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let (i, h, dt) = self.locate(t);
        let j = (i + 1) % self.knots.len();
        let b = dt / h;
        let a = 1.0 - b;
        (self.values[j] - self.values[i]) / h - (3.0 * a * a - 1.0) / 6.0 * h * self.second[i]
            + (3.0 * b * b - 1.0) / 6.0 * h * self.second[j]
    }
}

/// Solves a cyclic tridiagonal system by Sherman-Morrison on top of the Thomas algorithm.
///
/// Row `i` reads `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]`, indices mod n.
fn solve_cyclic(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let corner_top = sub[0];
    let corner_bottom = sup[n - 1];
    let gamma = -diag[0];
    let mut bb = diag.to_vec();
    bb[0] = diag[0] - gamma;
    bb[n - 1] = diag[n - 1] - corner_bottom * corner_top / gamma;
    let x = solve_tridiagonal(sub, &bb, sup, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = corner_bottom;
    let z = solve_tridiagonal(sub, &bb, sup, &u);
    let fact = (x[0] + corner_top * x[n - 1] / gamma) / (1.0 + z[0] + corner_top * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / m;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn uniform(n: usize) -> Vec<f64> {
        (0..n).map(|k| TAU * k as f64 / n as f64).collect()
    }

    #[test]
    fn reproduces_nodes_and_constants() {
        let knots = uniform(16);
        let s = PeriodicSpline::new(knots.clone(), TAU, vec![0.3; 16]).unwrap();
        for t in [0.0, 0.1, 1.7, 6.2, -0.4, 13.0] {
            assert!((s.eval(t) - 0.3).abs() < 1e-15);
            assert!(s.derivative(t).abs() < 1e-13);
        }
        let vals: Vec<f64> = knots.iter().map(|t| t.sin()).collect();
        let s = PeriodicSpline::new(knots.clone(), TAU, vals.clone()).unwrap();
        for (t, v) in knots.iter().zip(vals) {
            assert!((s.eval(*t) - v).abs() < 1e-14);
        }
    }

    #[test]
    fn sine_is_captured_to_fourth_order() {
        let err = |n: usize| {
            let knots = uniform(n);
            let vals = knots.iter().map(|t| t.sin()).collect();
            let s = PeriodicSpline::new(knots, TAU, vals).unwrap();
            (0..1000)
                .map(|k| {
                    let t = TAU * (k as f64 + 0.37) / 1000.0;
                    (s.eval(t) - t.sin()).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(32), err(64));
        assert!(e2 < 1e-6);
        assert!(e1 / e2 > 12.0, "observed ratio {}", e1 / e2);
        let knots = uniform(256);
        let vals = knots.iter().map(|t| t.sin()).collect();
        let s = PeriodicSpline::new(knots, TAU, vals).unwrap();
        assert!((s.derivative(1.0) - 1.0f64.cos()).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(PeriodicSpline::new(vec![0.0, 1.0], TAU, vec![0.0, 0.0]).is_err());
        assert!(PeriodicSpline::new(vec![0.0, 2.0, 1.0], TAU, vec![0.0; 3]).is_err());
        assert!(PeriodicSpline::new(vec![0.0, 3.0, 7.0], TAU, vec![0.0; 3]).is_err());
    }
}
