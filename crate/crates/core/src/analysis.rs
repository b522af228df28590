//! Ordinary least squares for the outcome model and Rubin's-rules pooling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imputation::{Dataset, ImputedDataset};
use crate::specfun;

/// Least-squares fit with classical standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    /// σ̂² (XᵀX)⁻¹.
    pub cov: Vec<Vec<f64>>,
    /// RSS / (n − p).
    pub sigma2: f64,
    pub n: usize,
    pub p: usize,
}

impl OlsFit {
    pub fn se(&self) -> Vec<f64> {
        (0..self.p).map(|j| self.cov[j][j].sqrt()).collect()
    }

    pub fn df(&self) -> f64 {
        (self.n - self.p) as f64
    }

    /// Two-sided t intervals at level `confidence`.
    pub fn confidence_intervals(&self, confidence: f64) -> Result<Vec<(f64, f64)>> {
        let t = specfun::student_t_quantile(0.5 + 0.5 * confidence, self.df())?;
        Ok(self
            .beta
            .iter()
            .zip(self.se())
            .map(|(b, s)| (b - t * s, b + t * s))
            .collect())
    }
}

/// Solve min ‖y − Xβ‖ by Householder QR.
///
/// Fails with the names of the offending columns when the design is rank
/// deficient.
pub fn ols(x: &DMatrix<f64>, y: &[f64], names: &[String]) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n || names.len() != p {
        return Err(Error::InvalidData("design, response and names disagree in size".into()));
    }
    if n <= p {
        return Err(Error::TooFewRows { n, k: p });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite value in the regression data".into()));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let diag_max = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let deficient: Vec<usize> = (0..p)
        .filter(|&j| !(r[(j, j)].abs() > 1e-10 * diag_max))
        .collect();
    if !deficient.is_empty() {
        return Err(Error::RankDeficient { columns: collinear_names(&r, &deficient, names) });
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient { columns: names.to_vec() })?;
    let resid = &yv - x * &beta;
    let rss = resid.norm_squared();
    let sigma2 = rss / (n - p) as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient { columns: names.to_vec() })?;
    let xtx_inv = &r_inv * r_inv.transpose();
    Ok(OlsFit {
        names: names.to_vec(),
        beta: beta.iter().copied().collect(),
        cov: (0..p).map(|i| (0..p).map(|j| sigma2 * xtx_inv[(i, j)]).collect()).collect(),
        sigma2,
        n,
        p,
    })
}

/// Each deficient column together with the earlier columns it is a
/// combination of.
fn collinear_names(r: &DMatrix<f64>, deficient: &[usize], names: &[String]) -> Vec<String> {
    let mut involved = vec![false; names.len()];
    for &j in deficient {
        involved[j] = true;
        // express column j through the leading well-conditioned block
        let lead: Vec<usize> = (0..j).filter(|i| !deficient.contains(i)).collect();
        if lead.is_empty() {
            continue;
        }
        let block = DMatrix::from_fn(lead.len(), lead.len(), |a, b| r[(lead[a], lead[b])]);
        let rhs = DVector::from_fn(lead.len(), |a, _| r[(lead[a], j)]);
        if let Some(c) = block.solve_upper_triangular(&rhs) {
            let scale = c.amax().max(1e-300);
            for (a, &i) in lead.iter().enumerate() {
                if c[a].abs() > 1e-8 * scale {
                    involved[i] = true;
                }
            }
        }
    }
    names
        .iter()
        .zip(involved)
        .filter(|(_, keep)| *keep)
        .map(|(n, _)| n.clone())
        .collect()
}

/// Design [1, w, z…] and response for a dataset.
pub fn design(data: &Dataset) -> (DMatrix<f64>, Vec<f64>, Vec<String>) {
    let q = data.columns.covariates.len();
    let n = data.len();
    let x = DMatrix::from_fn(n, q + 2, |i, j| match j {
        0 => 1.0,
        1 => data.records[i].w,
        _ => data.records[i].z[j - 2],
    });
    let y = data.records.iter().map(|r| r.y).collect();
    let mut names = vec!["(Intercept)".to_string(), data.columns.observed.clone()];
    names.extend(data.columns.covariates.iter().cloned());
    (x, y, names)
}

/// OLS of y on [1, w, z…].
pub fn ols_dataset(data: &Dataset) -> Result<OlsFit> {
    let (x, y, names) = design(data);
    ols(&x, &y, &names)
}

pub fn ols_imputed(data: &ImputedDataset) -> Result<OlsFit> {
    ols_dataset(&data.data)
}

/// Estimates pooled across imputations.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFit {
    pub names: Vec<String>,
    pub beta_bar: Vec<f64>,
    /// Mean within-imputation variance.
    pub within: Vec<f64>,
    /// Between-imputation variance of the estimates.
    pub between: Vec<f64>,
    pub total_var: Vec<f64>,
    pub se: Vec<f64>,
    pub df: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub b: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Serialized form of [`PooledFit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledReport {
    pub coef: Vec<CoefRow>,
    #[serde(rename = "B")]
    pub b: usize,
    pub confidence: f64,
}

impl PooledFit {
    pub fn report(&self) -> PooledReport {
        PooledReport {
            coef: (0..self.names.len())
                .map(|j| CoefRow {
                    name: self.names[j].clone(),
                    estimate: self.beta_bar[j],
                    se: self.se[j],
                    ci_lower: self.ci_lower[j],
                    ci_upper: self.ci_upper[j],
                })
                .collect(),
            b: self.b,
            confidence: self.confidence,
        }
    }
}

/// Rubin's rules.
///
/// total = within + (1 + 1/B)·between, with t intervals on
/// (B − 1)(1 + within / ((1 + 1/B)·between))² degrees of freedom. When the
/// imputations agree exactly (between = 0, including B = 1) the complete-data
/// n − p is used instead.
pub fn pool(fits: &[OlsFit], confidence: f64) -> Result<PooledFit> {
    let first = fits.first().ok_or_else(|| Error::InvalidParams("nothing to pool".into()))?;
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidParams(format!("confidence {confidence} outside (0, 1)")));
    }
    if fits.iter().any(|f| f.names != first.names || f.beta.len() != first.p) {
        return Err(Error::LayoutMismatch);
    }
    let b = fits.len();
    let bf = b as f64;
    let p = first.p;
    let mut out = PooledFit {
        names: first.names.clone(),
        beta_bar: vec![0.0; p],
        within: vec![0.0; p],
        between: vec![0.0; p],
        total_var: vec![0.0; p],
        se: vec![0.0; p],
        df: vec![0.0; p],
        ci_lower: vec![0.0; p],
        ci_upper: vec![0.0; p],
        b,
        confidence,
    };
    for j in 0..p {
        // offsets from the first estimate keep identical imputations exact
        let anchor = first.beta[j];
        let mean = anchor + fits.iter().map(|f| f.beta[j] - anchor).sum::<f64>() / bf;
        let within = fits.iter().map(|f| f.cov[j][j]).sum::<f64>() / bf;
        let between = if b > 1 {
            fits.iter().map(|f| (f.beta[j] - mean).powi(2)).sum::<f64>() / (bf - 1.0)
        } else {
            0.0
        };
        let inflated = (1.0 + 1.0 / bf) * between;
        let total = within + inflated;
        let df = if inflated > 0.0 {
            (bf - 1.0) * (1.0 + within / inflated).powi(2)
        } else {
            first.df()
        };
        let se = total.sqrt();
        let t = specfun::student_t_quantile(0.5 + 0.5 * confidence, df)?;
        out.beta_bar[j] = mean;
        out.within[j] = within;
        out.between[j] = between;
        out.total_var[j] = total;
        out.se[j] = se;
        out.df[j] = df;
        out.ci_lower[j] = mean - t * se;
        out.ci_upper[j] = mean + t * se;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    fn fake_fit(beta: f64, var: f64) -> OlsFit {
        OlsFit { names: names(1), beta: vec![beta], cov: vec![vec![var]], sigma2: 1.0, n: 100, p: 1 }
    }

    #[test]
    fn exact_line_is_recovered() {
        let xs = [0.0, 1.0, 2.0, 3.5, 7.0];
        let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let y: Vec<f64> = xs.iter().map(|v| 2.0 + 3.0 * v).collect();
        let f = ols(&x, &y, &names(2)).unwrap();
        assert_relative_eq!(f.beta[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(f.beta[1], 3.0, epsilon = 1e-12);
        assert!(f.sigma2 < 1e-24);
    }

    #[test]
    fn intercept_only_is_the_mean() {
        let y = [1.0, 4.0, 2.5, 8.0];
        let f = ols(&DMatrix::from_element(4, 1, 1.0), &y, &names(1)).unwrap();
        assert_relative_eq!(f.beta[0], 3.875, max_relative = 1e-14);
        // variance of the mean: s²/n
        let s2 = y.iter().map(|v| (v - 3.875f64).powi(2)).sum::<f64>() / 3.0;
        assert_relative_eq!(f.cov[0][0], s2 / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn three_point_hand_solution() {
        // points (0,1), (1,2), (2,4): slope 1.5, intercept 5/6, RSS 1/6
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let f = ols(&x, &[1.0, 2.0, 4.0], &names(2)).unwrap();
        assert!((f.beta[0] - 5.0 / 6.0).abs() < 1e-12);
        assert!((f.beta[1] - 1.5).abs() < 1e-12);
        assert!((f.sigma2 - 1.0 / 6.0).abs() < 1e-12);
        // Var(slope) = σ² / Σ(x − x̄)² = (1/6) / 2
        assert!((f.cov[1][1] - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_columns_are_named() {
        let x = DMatrix::from_fn(6, 4, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            2 => (i * i) as f64,
            _ => 2.0 * i as f64,
        });
        let y = [1.0, 0.5, 2.0, 3.0, 2.2, 4.0];
        let nm = vec!["(Intercept)".into(), "a".into(), "b".into(), "c".into()];
        match ols(&x, &y, &nm) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["a".to_string(), "c".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pooling_by_hand() {
        let p = pool(&[fake_fit(1.0, 1.0), fake_fit(3.0, 1.0)], 0.95).unwrap();
        assert_eq!(p.beta_bar[0], 2.0);
        assert_eq!(p.within[0], 1.0);
        assert_eq!(p.between[0], 2.0);
        assert_eq!(p.total_var[0], 4.0);
        assert_eq!(p.se[0], 2.0);
        // (B−1)(1 + 1/3)² = 16/9
        assert_relative_eq!(p.df[0], 16.0 / 9.0, max_relative = 1e-14);
    }

    #[test]
    fn single_fit_passes_through() {
        let f = fake_fit(0.7, 0.04);
        let p = pool(std::slice::from_ref(&f), 0.95).unwrap();
        assert_eq!(p.se[0], 0.2);
        assert_eq!(p.df[0], 99.0);
        let ci = f.confidence_intervals(0.95).unwrap();
        assert_relative_eq!(p.ci_lower[0], ci[0].0, max_relative = 1e-14);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let mut g = fake_fit(1.0, 1.0);
        g.names = vec!["other".into()];
        assert_eq!(pool(&[fake_fit(1.0, 1.0), g], 0.95), Err(Error::LayoutMismatch));
        assert!(pool(&[], 0.95).is_err());
    }

    #[test]
    fn report_json_layout() {
        let p = pool(&[fake_fit(1.0, 1.0), fake_fit(3.0, 1.0)], 0.95).unwrap();
        let v = serde_json::to_value(p.report()).unwrap();
        assert_eq!(v["B"], 2);
        assert_eq!(v["confidence"], 0.95);
        for key in ["name", "estimate", "se", "ci_lower", "ci_upper"] {
            assert!(v["coef"][0].get(key).is_some(), "{key}");
        }
    }
}
