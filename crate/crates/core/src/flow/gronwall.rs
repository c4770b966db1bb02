//! Comparison bounds for the blocks of the variational matrix.
//!
//! If `D_r R <= -2s`, `|D_y R|, |D_r Y| <= sigma` and `|D_y Y| <= nu` along a
//! trajectory, the block norms of `D phi(t)` are dominated by the entries of
//! `exp(tB)` with `B = [[-2s, sigma], [sigma, nu]]`. The printed closed forms
//! for these entries contain operators that can be read two ways; both
//! readings are evaluated and compared with the exact exponential.

use std::io::Write;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GronwallParams {
    /// Half the decay rate of the normal direction.
    pub s: f64,
    /// Bound on the mixed blocks.
    pub sigma: f64,
    /// Bound on the tangential block.
    pub nu: f64,
}

impl GronwallParams {
    pub fn new(s: f64, sigma: f64, nu: f64) -> Self {
        Self { s, sigma, nu }
    }

    /// `sigma, nu, sigma^2, nu^2 < s / 4`.
    pub fn satisfies_ineq(&self) -> bool {
        let q = self.s / 4.0;
        self.s > 0.0
            && self.sigma >= 0.0
            && self.nu >= 0.0
            && [self.sigma, self.nu, self.sigma * self.sigma, self.nu * self.nu]
                .iter()
                .all(|v| *v < q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.satisfies_ineq() {
            Ok(())
        } else {
            Err(Error::ParamsViolateIneq(format!(
                "s = {}, sigma = {}, nu = {}",
                self.s, self.sigma, self.nu
            )))
        }
    }
}

/// How the ambiguous operators of the printed closed forms are read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrintedReading {
    /// `(lambda_- nu)` as `lambda_- - nu`, and `sigma (lambda_+ 2s)` as `sigma / (lambda_+ + 2s)`.
    Difference,
    /// `(lambda_- nu)` as `lambda_- * nu`, and `sigma (lambda_+ 2s)` as `sigma (lambda_+ + 2s)`.
    Product,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct Kappa {
    k1: f64,
    k2: f64,
    k1_bar: f64,
    k2_bar: f64,
}

/// Exact and printed comparison functions for one parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GronwallBounds {
    pub params: GronwallParams,
    /// Eigenvalues of `B`, `lambda_minus <= lambda_plus`.
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    /// The exponents as printed, `-((2s - nu) / 2) [1 +- sqrt(1 + (4 sigma^2 + nu^2) / (2s - nu)^2)]`.
    pub printed_lambda_plus: f64,
    pub printed_lambda_minus: f64,
    eigvecs: [[f64; 2]; 2],
    kappa_difference: Kappa,
    kappa_product: Kappa,
}

/// Validates the parameters and builds the bounds.
pub fn gronwall_bounds(params: GronwallParams) -> Result<GronwallBounds> {
    params.validate()?;
    Ok(GronwallBounds::new_unchecked(params))
}

impl GronwallBounds {
    /// Builds the bounds without checking the parameter inequality.
    pub fn new_unchecked(params: GronwallParams) -> Self {
        let GronwallParams { s, sigma, nu } = params;
        let eig = Self::matrix(&params).symmetric_eigen();
        let (lo, hi) = if eig.eigenvalues[0] <= eig.eigenvalues[1] {
            (0, 1)
        } else {
            (1, 0)
        };
        let q = eig.eigenvectors;
        let eigvecs = [[q[(0, lo)], q[(1, lo)]], [q[(0, hi)], q[(1, hi)]]];
        let lambda_minus = eig.eigenvalues[lo];
        let lambda_plus = eig.eigenvalues[hi];

        let d = 2.0 * s - nu;
        let root = (1.0 + (4.0 * sigma * sigma + nu * nu) / (d * d)).sqrt();
        let printed_lambda_plus = -(d / 2.0) * (1.0 + root);
        let printed_lambda_minus = -(d / 2.0) * (1.0 - root);

        let kappa = |reading: PrintedReading| {
            let lp = lambda_plus + 2.0 * s;
            let lm = lambda_minus - nu;
            let amb = match reading {
                PrintedReading::Difference => lambda_minus - nu,
                PrintedReading::Product => lambda_minus * nu,
            };
            let inner = lp + sigma * sigma * lm;
            Kappa {
                k1: 1.0 - sigma * sigma / (lp * inner),
                k2: -sigma / (amb * lp * inner),
                k1_bar: sigma * amb / (lp * lm + sigma * sigma),
                k2_bar: 1.0 / (1.0 + sigma * sigma / (lp * lm)),
            }
        };
        Self {
            params,
            lambda_minus,
            lambda_plus,
            printed_lambda_plus,
            printed_lambda_minus,
            eigvecs,
            kappa_difference: kappa(PrintedReading::Difference),
            kappa_product: kappa(PrintedReading::Product),
        }
    }

    pub fn matrix(params: &GronwallParams) -> Matrix2<f64> {
        Matrix2::new(-2.0 * params.s, params.sigma, params.sigma, params.nu)
    }

    fn spectral(&self, weight: impl Fn(f64) -> f64) -> [f64; 4] {
        let [vm, vp] = self.eigvecs.map(Vector2::from);
        let e = vm * vm.transpose() * weight(self.lambda_minus)
            + vp * vp.transpose() * weight(self.lambda_plus);
        [e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]]
    }

    /// `exp(tB)` read as `[E0, E1, E2, E3] = [(0,0), (0,1), (1,0), (1,1)]`.
    pub fn reference(&self, t: f64) -> [f64; 4] {
        self.spectral(|l| (l * t).exp())
    }

    /// Largest entry of `d/dt exp(tB) - B exp(tB)`.
    pub fn residual(&self, t: f64) -> f64 {
        let d = self.spectral(|l| l * (l * t).exp());
        let e = self.reference(t);
        let b = Self::matrix(&self.params);
        let be = b * Matrix2::new(e[0], e[1], e[2], e[3]);
        [
            d[0] - be[(0, 0)],
            d[1] - be[(0, 1)],
            d[2] - be[(1, 0)],
            d[3] - be[(1, 1)],
        ]
        .iter()
        .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// The printed closed forms `[E0, E1, E2, E3]` under `reading`.
    pub fn printed(&self, t: f64, reading: PrintedReading) -> [f64; 4] {
        let GronwallParams { s, sigma, nu } = self.params;
        let k = match reading {
            PrintedReading::Difference => self.kappa_difference,
            PrintedReading::Product => self.kappa_product,
        };
        let lp = self.lambda_plus + 2.0 * s;
        let amb = match reading {
            PrintedReading::Difference => self.lambda_minus - nu,
            PrintedReading::Product => self.lambda_minus * nu,
        };
        let mixed = match reading {
            PrintedReading::Difference => sigma / lp,
            PrintedReading::Product => sigma * lp,
        };
        let em = (self.lambda_minus * t).exp();
        let ep = (self.lambda_plus * t).exp();
        let e0 = k.k1 * em - sigma / lp * k.k2 * ep;
        let e1 = k.k1_bar * em - mixed * k.k2_bar * ep;
        let e2 = sigma / (self.lambda_minus - nu) * k.k1 * em - k.k2 * ep;
        let e3 = sigma / amb * k.k1_bar * em - k.k2_bar * ep;
        [e0, e1, e2, e3]
    }

    /// Largest gap between the magnitudes of a printed reading and the reference.
    pub fn discrepancy(&self, t: f64, reading: PrintedReading) -> f64 {
        let p = self.printed(t, reading);
        let r = self.reference(t);
        (0..4).fold(0.0, |m: f64, i| {
            let gap = (p[i].abs() - r[i].abs()).abs();
            if gap.is_nan() {
                f64::INFINITY
            } else {
                m.max(gap)
            }
        })
    }

    /// Bounds used downstream: the larger of the first printed reading and the reference, in magnitude.
    pub fn bound(&self, t: f64) -> [f64; 4] {
        let p = self.printed(t, PrintedReading::Difference);
        let r = self.reference(t);
        std::array::from_fn(|i| {
            if p[i].is_finite() {
                p[i].abs().max(r[i].abs())
            } else {
                r[i].abs()
            }
        })
    }

    /// The three estimates required of the time-`t` map, as `1 - lhs` margins
    /// (non-strict for the second).
    pub fn estimate_margins(&self, t: f64) -> [f64; 3] {
        let f = self.bound(t);
        let b = self.bound(-t);
        [
            1.0 - (f[0] * (1.0 + b[2]) + f[1]),
            1.0 - (f[0] + f[1]) * (b[2] + b[3]),
            1.0 - (f[0] * (2.0 * b[2] + b[3]) + f[1] * b[2]),
        ]
    }

    pub fn estimates_hold(&self, t: f64) -> bool {
        let m = self.estimate_margins(t);
        m[0] > 0.0 && m[1] >= 0.0 && m[2] > 0.0
    }
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GronwallRow {
    pub t: f64,
    pub s: f64,
    pub sigma: f64,
    pub nu: f64,
    pub ineq_ok: bool,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub printed_lambda_minus: f64,
    pub printed_lambda_plus: f64,
    pub reference: [f64; 4],
    pub printed_difference: [f64; 4],
    pub printed_product: [f64; 4],
    pub discrepancy_difference: f64,
    pub discrepancy_product: f64,
    pub residual: f64,
}

/// Rows for every `(params, t)` pair; parameter sets violating the inequality are kept and flagged.
pub fn gronwall_table(params: &[GronwallParams], times: &[f64]) -> Vec<GronwallRow> {
    let mut rows = Vec::with_capacity(params.len() * times.len());
    for p in params {
        let b = GronwallBounds::new_unchecked(*p);
        let ineq_ok = p.satisfies_ineq();
        if !ineq_ok {
            log::warn!("parameters {p:?} violate the Gronwall inequality");
        }
        for &t in times {
            rows.push(GronwallRow {
                t,
                s: p.s,
                sigma: p.sigma,
                nu: p.nu,
                ineq_ok,
                lambda_minus: b.lambda_minus,
                lambda_plus: b.lambda_plus,
                printed_lambda_minus: b.printed_lambda_minus,
                printed_lambda_plus: b.printed_lambda_plus,
                reference: b.reference(t),
                printed_difference: b.printed(t, PrintedReading::Difference),
                printed_product: b.printed(t, PrintedReading::Product),
                discrepancy_difference: b.discrepancy(t, PrintedReading::Difference),
                discrepancy_product: b.discrepancy(t, PrintedReading::Product),
                residual: b.residual(t),
            });
        }
    }
    rows
}

pub fn write_gronwall_csv<W: Write>(w: W, rows: &[GronwallRow]) -> Result<()> {
    let fail = |e: csv::Error| Error::InvalidInput(format!("csv output failed: {e}"));
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
        "t",
        "s",
        "sigma",
        "nu",
        "ineq_ok",
        "lambda_minus",
        "lambda_plus",
        "printed_lambda_minus",
        "printed_lambda_plus",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["ref", "printed_difference", "printed_product"] {
        header.extend((0..4).map(|i| format!("{prefix}_e{i}")));
    }
    header.extend(["discrepancy_difference", "discrepancy_product", "residual"].map(String::from));
    out.write_record(&header).map_err(fail)?;
    for r in rows {
        let mut row: Vec<String> = vec![
            r.t.to_string(),
            r.s.to_string(),
            r.sigma.to_string(),
            r.nu.to_string(),
            r.ineq_ok.to_string(),
            r.lambda_minus.to_string(),
            r.lambda_plus.to_string(),
            r.printed_lambda_minus.to_string(),
            r.printed_lambda_plus.to_string(),
        ];
        for block in [r.reference, r.printed_difference, r.printed_product] {
            row.extend(block.iter().map(|v| v.to_string()));
        }
        row.extend([r.discrepancy_difference, r.discrepancy_product, r.residual].map(|v| v.to_string()));
        out.write_record(&row).map_err(fail)?;
    }
    out.flush().map_err(|e| Error::InvalidInput(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn expm(p: &GronwallParams, t: f64) -> DMatrix<f64> {
        let b = GronwallBounds::matrix(p);
        (DMatrix::from_row_slice(2, 2, b.transpose().as_slice()) * t).exp()
    }

    #[test]
    fn decoupled_case_is_exact() {
        let p = GronwallParams::new(1.0, 0.0, 0.0);
        let b = gronwall_bounds(p).unwrap();
        for t in [0.5, 1.0, 2.0] {
            let r = b.reference(t);
            assert!((r[0] - (-2.0 * t).exp()).abs() < 1e-15);
            assert!(r[1].abs() < 1e-15 && r[2].abs() < 1e-15);
            assert!((r[3] - 1.0).abs() < 1e-15);
            assert!(b.discrepancy(t, PrintedReading::Difference) < 1e-15);
            // the product reading divides zero by zero here
            assert!(b.printed(t, PrintedReading::Product)[2].is_nan());
            assert_eq!(b.bound(t), [(-2.0 * t).exp(), 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn eigenvalues_of_the_comparison_matrix() {
        let p = GronwallParams::new(1.0, 0.1, 0.1);
        let b = GronwallBounds::new_unchecked(p);
        assert!((b.lambda_plus - 0.1048).abs() < 1e-4);
        assert!((b.lambda_minus + 2.0048).abs() < 1e-4);
        // the printed exponents are not the eigenvalues once nu > 0
        assert!((b.printed_lambda_plus + 1.9066).abs() < 1e-4);
        assert!((b.printed_lambda_minus - 0.0066).abs() < 1e-4);
        let d = GronwallBounds::new_unchecked(GronwallParams::new(1.0, 0.1, 0.0));
        assert!((d.printed_lambda_plus - d.lambda_minus).abs() < 1e-12);
    }

    #[test]
    fn reference_is_the_matrix_exponential() {
        for p in [
            GronwallParams::new(1.0, 0.1, 0.1),
            GronwallParams::new(0.4, 0.05, 0.02),
            GronwallParams::new(2.0, 0.3, 0.0),
        ] {
            let b = GronwallBounds::new_unchecked(p);
            for t in [-2.0, -1.0, 0.0, 0.37, 1.0, 1.5, 2.0] {
                let e = expm(&p, t);
                let r = b.reference(t);
                let exact = [e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]];
                for i in 0..4 {
                    assert!((r[i] - exact[i]).abs() < 1e-12 * (1.0 + exact[i].abs()));
                }
                assert!(b.residual(t) <= 1e-10);
            }
        }
    }

    #[test]
    fn violating_parameters_are_rejected() {
        let err = gronwall_bounds(GronwallParams::new(0.1, 0.2, 0.0)).unwrap_err();
        assert!(matches!(err, Error::ParamsViolateIneq(_)));
        let rows = gronwall_table(&[GronwallParams::new(0.1, 0.2, 0.0)], &[1.0]);
        assert_eq!(rows.len(), 1);
        assert!(!rows[0].ineq_ok);
    }

    #[test]
    fn estimates_for_strong_decay() {
        let b = gronwall_bounds(GronwallParams::new(1.0, 0.0, 0.0)).unwrap();
        assert!(b.estimates_hold(1.0));
        let m = b.estimate_margins(1.0);
        assert!((m[0] - (1.0 - (-2.0f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn table_csv_has_one_row_per_pair() {
        let rows = gronwall_table(
            &[GronwallParams::new(1.0, 0.1, 0.1), GronwallParams::new(1.0, 0.0, 0.0)],
            &[1.0, 2.0],
        );
        let mut buf = Vec::new();
        write_gronwall_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
