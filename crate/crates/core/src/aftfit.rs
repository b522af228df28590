//! Maximum-likelihood fitting of the imputation model for a censored covariate.
//!
//! Location-scale families are fitted as accelerated failure-time models,
//! `log X = η + σ ε` (or `X = η + σ ε` on the real line), with ε standard
//! extreme-value (exponential, Weibull), normal (log-normal, Gaussian) or
//! logistic (log-logistic, logistic). The optimizer works on the unconstrained
//! vector θ = (β, log σ); the exponential model fixes σ = 1.
//!
//! The piecewise exponential model is fitted in its Poisson form with
//! θ = (log baseline rates, covariate effects) and a hazard of
//! `exp(ρ_j + γᵀz)` in piece j.
//!
//! Both engines supply analytic gradients and Hessians. The optimizer is
//! Newton–Raphson with step halving, falling back to Nelder–Mead when the
//! Hessian stays indefinite.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun;
use crate::survdist::{Family, FamilySpec, Link, PiecewiseRates};

/// What is known about one value of the censored covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    Exact(f64),
    /// Known to exceed the value.
    Right(f64),
    /// Known to lie in `(lower, upper]`; `upper` may be infinite.
    Interval { lower: f64, upper: f64 },
}

impl Observation {
    /// Right-censored at `w` unless `delta` marks an event.
    pub fn from_event(w: f64, delta: bool) -> Self {
        if delta {
            Observation::Exact(w)
        } else {
            Observation::Right(w)
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Observation::Exact(_))
    }

    /// Collapse an interval with an infinite upper end to right censoring.
    fn normalized(self) -> Self {
        match self {
            Observation::Interval { lower, upper } if upper == f64::INFINITY => Observation::Right(lower),
            o => o,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoredRow {
    pub obs: Observation,
    pub z: Vec<f64>,
}

/// Rows of censored covariate values with their fully observed covariates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CensoredSample {
    rows: Vec<CensoredRow>,
}

impl CensoredSample {
    pub fn new(rows: Vec<CensoredRow>) -> Result<Self> {
        let q = rows.first().map_or(0, |r| r.z.len());
        for (i, r) in rows.iter().enumerate() {
            if r.z.len() != q {
                return Err(Error::DimensionMismatch { expected: q, got: r.z.len() }.at_row(i));
            }
            if r.z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData("non-finite covariate".into()).at_row(i));
            }
            let ok = match r.obs {
                Observation::Exact(w) | Observation::Right(w) => w.is_finite(),
                Observation::Interval { lower, upper } => lower.is_finite() && !upper.is_nan() && upper > lower,
            };
            if !ok {
                return Err(Error::InvalidData(format!("invalid observation {:?}", r.obs)).at_row(i));
            }
        }
        let rows = rows
            .into_iter()
            .map(|r| CensoredRow { obs: r.obs.normalized(), z: r.z })
            .collect();
        Ok(Self { rows })
    }

    /// Build from parallel columns of observed values, event flags and covariates.
    pub fn from_columns(w: &[f64], delta: &[bool], z: &[Vec<f64>]) -> Result<Self> {
        if w.len() != delta.len() || w.len() != z.len() {
            return Err(Error::InvalidData("column lengths differ".into()));
        }
        Self::new(
            w.iter()
                .zip(delta)
                .zip(z)
                .map(|((&w, &d), z)| CensoredRow { obs: Observation::from_event(w, d), z: z.clone() })
                .collect(),
        )
    }

    pub fn rows(&self) -> &[CensoredRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.rows.first().map_or(0, |r| r.z.len())
    }

    pub fn n_exact(&self) -> usize {
        self.rows.iter().filter(|r| r.obs.is_exact()).count()
    }

    /// Rows at the given indices, repeats allowed.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self { rows: idx.iter().map(|&i| self.rows[i].clone()).collect() }
    }
}

/// Observed-data log-likelihood of `spec` on `data`, evaluated through the
/// generic distribution functions.
pub fn log_likelihood(spec: &FamilySpec, data: &CensoredSample) -> Result<f64> {
    let mut total = 0.0;
    for (i, row) in data.rows.iter().enumerate() {
        let p = spec.resolve(&row.z).map_err(|e| e.at_row(i))?;
        let term = match row.obs {
            Observation::Exact(w) => p.log_density(w),
            Observation::Right(w) => p.log_survival(w),
            Observation::Interval { lower, upper } => {
                let hl = p.cum_hazard(lower);
                let hu = p.cum_hazard(upper);
                -hl + (-(-(hu - hl)).exp_m1()).ln()
            }
        };
        if !term.is_finite() {
            return Err(Error::DegenerateLikelihood { row: i });
        }
        total += term;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Aic,
    Bic,
}

impl FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            _ => Err(Error::InvalidParams(format!("unknown criterion '{s}'"))),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Convergence threshold on the Euclidean norm of the score.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting θ; the deterministic default start is used when absent.
    pub init: Option<Vec<f64>>,
    /// Covariate link reported for exponential and Weibull fits.
    pub link: Link,
    /// Number of pieces when cutpoints are chosen from the data.
    pub pieces: usize,
    /// Explicit piecewise cutpoints, starting at 0.
    pub cutpoints: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            init: None,
            link: Link::Aft,
            pieces: 10,
            cutpoints: None,
        }
    }
}

/// A fitted imputation model with its fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedImputationModel {
    #[serde(flatten)]
    pub spec: FamilySpec,
    pub loglik: f64,
    pub k: usize,
    pub n: usize,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: f64,
    /// Estimates on the unconstrained scale used by the optimizer.
    pub theta: Vec<f64>,
    /// Inverse observed information for `theta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl FittedImputationModel {
    pub fn family(&self) -> Family {
        self.spec.family
    }

    /// Standard errors of `theta` from the observed information.
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.len()).map(|i| c[i][i].sqrt()).collect())
    }

    /// Model with the same layout at another unconstrained parameter vector.
    pub fn spec_at(&self, theta: &[f64]) -> Result<FamilySpec> {
        spec_from_theta(self.spec.family, self.spec.link, theta, &self.spec.cutpoints, self.spec.n_covariates())
    }

    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        let c = self.covariance.as_ref()?;
        let d = c.len();
        Some(DMatrix::from_fn(d, d, |i, j| c[i][j]))
    }
}

/// `(AIC, BIC)` for a fitted model.
pub fn information_criteria(model: &FittedImputationModel) -> (f64, f64) {
    (aic(model.k, model.loglik), bic(model.k, model.n, model.loglik))
}

pub fn aic(k: usize, loglik: f64) -> f64 {
    2.0 * k as f64 - 2.0 * loglik
}

pub fn bic(k: usize, n: usize, loglik: f64) -> f64 {
    k as f64 * (n as f64).ln() - 2.0 * loglik
}

/// Number of free parameters for a family with `q` covariates and `pieces` pieces.
pub fn parameter_count(family: Family, q: usize, pieces: usize) -> usize {
    match family {
        Family::PiecewiseExponential => pieces + q,
        f if f.has_shape() => q + 2,
        _ => q + 1,
    }
}

/// Map an unconstrained parameter vector to a [`FamilySpec`].
pub fn spec_from_theta(family: Family, link: Link, theta: &[f64], cutpoints: &[f64], q: usize) -> Result<FamilySpec> {
    if family == Family::PiecewiseExponential {
        let j = cutpoints.len();
        if theta.len() != j + q {
            return Err(Error::DimensionMismatch { expected: j + q, got: theta.len() });
        }
        let mut coefficients = vec![0.0];
        coefficients.extend_from_slice(&theta[j..]);
        return Ok(FamilySpec::piecewise(cutpoints.to_vec(), theta[..j].to_vec(), coefficients));
    }
    let k = parameter_count(family, q, 0);
    if theta.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: theta.len() });
    }
    let beta = &theta[..q + 1];
    let sigma = if family.has_shape() { theta[q + 1].exp() } else { 1.0 };
    let spec = match (family, link) {
        (Family::Exponential, Link::Aft) => FamilySpec::exponential(beta.to_vec()),
        (Family::Exponential, Link::Ph) => FamilySpec::exponential(beta.iter().map(|b| -b).collect()).with_link(Link::Ph),
        (Family::Weibull, Link::Aft) => FamilySpec::weibull(1.0 / sigma, beta.to_vec()),
        (Family::Weibull, Link::Ph) => {
            FamilySpec::weibull(1.0 / sigma, beta.iter().map(|b| -b / sigma).collect()).with_link(Link::Ph)
        }
        (Family::LogNormal, _) => FamilySpec::lognormal(sigma, beta.to_vec()),
        (Family::LogLogistic, _) => FamilySpec::loglogistic(1.0 / sigma, beta.to_vec()),
        (Family::Gaussian, _) => FamilySpec::gaussian(sigma, beta.to_vec()),
        (Family::Logistic, _) => FamilySpec::logistic(sigma, beta.to_vec()),
        (Family::PiecewiseExponential, _) => unreachable!(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Inverse of [`spec_from_theta`].
pub fn theta_from_spec(spec: &FamilySpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.family == Family::PiecewiseExponential {
        let mut theta = spec.baseline_log_rates.clone();
        // a nonzero intercept is absorbed into the baseline
        for r in theta.iter_mut() {
            *r += spec.coefficients[0];
        }
        theta.extend_from_slice(&spec.coefficients[1..]);
        return Ok(theta);
    }
    let shape = spec.shape.unwrap_or(1.0);
    let sigma = match spec.family {
        Family::Weibull | Family::LogLogistic => 1.0 / shape,
        Family::Exponential => 1.0,
        _ => shape,
    };
    let mut theta: Vec<f64> = match spec.link {
        Link::Ph => spec.coefficients.iter().map(|c| -c * sigma).collect(),
        Link::Aft => spec.coefficients.clone(),
    };
    if spec.family.has_shape() {
        theta.push(sigma.ln());
    }
    Ok(theta)
}

/// Log-likelihood with its gradient and Hessian in θ.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loglik: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Standardized error distribution of a location-scale model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Standard {
    ExtremeValue,
    Normal,
    Logistic,
}

fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Standard {
    fn of(family: Family) -> Self {
        match family {
            Family::Exponential | Family::Weibull => Standard::ExtremeValue,
            Family::LogNormal | Family::Gaussian => Standard::Normal,
            _ => Standard::Logistic,
        }
    }

    fn ln_pdf(self, e: f64) -> f64 {
        match self {
            Standard::ExtremeValue => e - e.exp(),
            Standard::Normal => specfun::ln_normal_pdf(e),
            Standard::Logistic => e - 2.0 * softplus(e),
        }
    }

    fn pdf(self, e: f64) -> f64 {
        if e.is_infinite() {
            return 0.0;
        }
        self.ln_pdf(e).exp()
    }

    /// d ln f / dε and its derivative.
    fn score_pdf(self, e: f64) -> (f64, f64) {
        match self {
            Standard::ExtremeValue => {
                let x = e.exp();
                (1.0 - x, -x)
            }
            Standard::Normal => (-e, -1.0),
            Standard::Logistic => {
                let f = sigmoid(e);
                (1.0 - 2.0 * f, -2.0 * f * (1.0 - f))
            }
        }
    }

    fn ln_sf(self, e: f64) -> f64 {
        match self {
            Standard::ExtremeValue => -e.exp(),
            Standard::Normal => specfun::ln_normal_sf(e).unwrap_or(f64::NAN),
            Standard::Logistic => -softplus(e),
        }
    }

    /// d ln S / dε and its derivative.
    fn score_sf(self, e: f64) -> (f64, f64) {
        match self {
            Standard::ExtremeValue => {
                let x = e.exp();
                (-x, -x)
            }
            Standard::Normal => {
                let l = specfun::normal_hazard(e);
                (-l, -l * (l - e))
            }
            Standard::Logistic => {
                let f = sigmoid(e);
                (-f, -f * (1.0 - f))
            }
        }
    }

    /// ln S with its first two derivatives, sharing the tail evaluation.
    fn ln_sf_with_score(self, e: f64) -> (f64, f64, f64) {
        match self {
            Standard::Normal if e < 25.0 => {
                let sf = specfun::normal_sf(e).unwrap_or(f64::NAN);
                let l = specfun::normal_pdf(e) / sf;
                (sf.ln(), -l, -l * (l - e))
            }
            _ => {
                let (r, rp) = self.score_sf(e);
                (self.ln_sf(e), r, rp)
            }
        }
    }

    fn sf(self, e: f64) -> f64 {
        match e {
            f64::NEG_INFINITY => 1.0,
            f64::INFINITY => 0.0,
            _ => self.ln_sf(e).exp(),
        }
    }

    fn cdf(self, e: f64) -> f64 {
        match e {
            f64::NEG_INFINITY => 0.0,
            f64::INFINITY => 1.0,
            _ => match self {
                Standard::ExtremeValue => -(-e.exp()).exp_m1(),
                Standard::Normal => specfun::normal_cdf(e).unwrap_or(f64::NAN),
                Standard::Logistic => sigmoid(e),
            },
        }
    }

    /// Mass between a < b, taken from whichever tail avoids cancellation.
    fn mass(self, a: f64, b: f64) -> f64 {
        if a > 0.0 {
            self.sf(a) - self.sf(b)
        } else {
            self.cdf(b) - self.cdf(a)
        }
    }

    /// f(ε), ε f(ε), f'(ε) and ε² f'(ε), all zero at ±∞.
    fn endpoint_terms(self, e: f64) -> (f64, f64, f64, f64) {
        if e.is_infinite() {
            return (0.0, 0.0, 0.0, 0.0);
        }
        let f = self.pdf(e);
        let fp = f * self.score_pdf(e).0;
        (f, e * f, fp, e * e * fp)
    }
}

/// Row in location-scale form: transformed bounds.
#[derive(Debug, Clone, Copy)]
enum ScaledObs {
    Exact { y: f64, jacobian: f64 },
    Right(f64),
    Interval(f64, f64),
}

struct AftEngine {
    standard: Standard,
    with_scale: bool,
    p: usize,
    x: Vec<f64>,
    obs: Vec<ScaledObs>,
}

impl AftEngine {
    fn new(family: Family, data: &CensoredSample) -> Result<Self> {
        let positive = family.positive_support();
        let p = data.n_covariates() + 1;
        let tr = |v: f64| if positive { v.ln() } else { v };
        let mut x = Vec::with_capacity(data.len() * p);
        let mut obs = Vec::with_capacity(data.len());
        for (i, r) in data.rows.iter().enumerate() {
            let o = match r.obs {
                Observation::Exact(w) => {
                    if positive && !(w > 0.0) {
                        return Err(Error::InvalidData(format!("{family} needs positive exact values, got {w}")).at_row(i));
                    }
                    ScaledObs::Exact { y: tr(w), jacobian: if positive { w.ln() } else { 0.0 } }
                }
                Observation::Right(w) => {
                    if positive && w < 0.0 {
                        return Err(Error::InvalidData(format!("negative censoring value {w}")).at_row(i));
                    }
                    if positive && w == 0.0 {
                        // contributes ln S(0) = 0
                        continue;
                    }
                    ScaledObs::Right(tr(w))
                }
                Observation::Interval { lower, upper } => {
                    if positive && lower < 0.0 {
                        return Err(Error::InvalidData(format!("negative interval bound {lower}")).at_row(i));
                    }
                    ScaledObs::Interval(tr(lower), tr(upper))
                }
            };
            obs.push(o);
            x.push(1.0);
            x.extend_from_slice(&r.z);
        }
        Ok(Self {
            standard: Standard::of(family),
            with_scale: family.has_shape(),
            p,
            x,
            obs,
        })
    }

    fn dim(&self) -> usize {
        self.p + usize::from(self.with_scale)
    }

    fn evaluate(&self, theta: &[f64], derivs: bool) -> Evaluation {
        let p = self.p;
        let d = self.dim();
        let s = if self.with_scale { theta[p] } else { 0.0 };
        let sigma = s.exp();
        let mut ll = 0.0;
        let mut grad = DVector::zeros(if derivs { d } else { 0 });
        let mut hess = DMatrix::zeros(if derivs { d } else { 0 }, if derivs { d } else { 0 });
        let sd = self.standard;
        for (i, o) in self.obs.iter().enumerate() {
            let xi = &self.x[i * p..(i + 1) * p];
            let eta: f64 = xi.iter().zip(&theta[..p]).map(|(a, b)| a * b).sum();
            // local derivatives in (η, s)
            let (l, le, ls, lee, les, lss) = match *o {
                ScaledObs::Exact { y, jacobian } => {
                    let e = (y - eta) / sigma;
                    if !derivs {
                        ll += sd.ln_pdf(e) - s - jacobian;
                        continue;
                    }
                    let (g, gp) = sd.score_pdf(e);
                    (
                        sd.ln_pdf(e) - s - jacobian,
                        -g / sigma,
                        -g * e - 1.0,
                        gp / (sigma * sigma),
                        (gp * e + g) / sigma,
                        gp * e * e + g * e,
                    )
                }
                ScaledObs::Right(y) => {
                    let e = (y - eta) / sigma;
                    if !derivs {
                        ll += sd.ln_sf(e);
                        continue;
                    }
                    let (ln_s, r, rp) = sd.ln_sf_with_score(e);
                    (
                        ln_s,
                        -r / sigma,
                        -r * e,
                        rp / (sigma * sigma),
                        (rp * e + r) / sigma,
                        rp * e * e + r * e,
                    )
                }
                ScaledObs::Interval(yl, yu) => {
                    let a = (yl - eta) / sigma;
                    let b = (yu - eta) / sigma;
                    let dm = sd.mass(a, b);
                    let (fa, afa, fpa, a2fpa) = sd.endpoint_terms(a);
                    let (fb, bfb, fpb, b2fpb) = sd.endpoint_terms(b);
                    let afpa = if a.is_infinite() { 0.0 } else { a * fpa };
                    let bfpb = if b.is_infinite() { 0.0 } else { b * fpb };
                    let d_e = (fa - fb) / sigma;
                    let d_s = afa - bfb;
                    let d_ee = -(fpa - fpb) / (sigma * sigma);
                    let d_es = (-(fa - fb) - afpa + bfpb) / sigma;
                    let d_ss = -afa - a2fpa + bfb + b2fpb;
                    (
                        dm.ln(),
                        d_e / dm,
                        d_s / dm,
                        d_ee / dm - d_e * d_e / (dm * dm),
                        d_es / dm - d_e * d_s / (dm * dm),
                        d_ss / dm - d_s * d_s / (dm * dm),
                    )
                }
            };
            ll += l;
            if !derivs {
                continue;
            }
            for a in 0..p {
                grad[a] += le * xi[a];
                for b in 0..=a {
                    hess[(a, b)] += lee * xi[a] * xi[b];
                }
                if self.with_scale {
                    hess[(p, a)] += les * xi[a];
                }
            }
            if self.with_scale {
                grad[p] += ls;
                hess[(p, p)] += lss;
            }
        }
        symmetrize(&mut hess);
        Evaluation { loglik: ll, gradient: grad, hessian: hess }
    }
}

fn symmetrize(h: &mut DMatrix<f64>) {
    for a in 0..h.nrows() {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
}

/// Piecewise exponential in Poisson form.
struct PweEngine {
    pieces: usize,
    q: usize,
    z: Vec<f64>,
    rows: Vec<PweRow>,
}

enum PweRow {
    /// Exact (`Some(piece)`) or right-censored, with exposure per piece.
    Point { event: Option<usize>, exposure: Vec<f64> },
    Interval { lower: Vec<f64>, upper: Vec<f64> },
}

impl PweEngine {
    fn new(data: &CensoredSample, cutpoints: &[f64]) -> Result<Self> {
        let shape = PiecewiseRates::new(cutpoints.to_vec(), vec![1.0; cutpoints.len()])?;
        let q = data.n_covariates();
        let mut z = Vec::with_capacity(data.len() * q);
        let mut rows = Vec::with_capacity(data.len());
        for (i, r) in data.rows.iter().enumerate() {
            let expo = |x: f64| shape.time_at_risk(x).collect::<Vec<_>>();
            let row = match r.obs {
                Observation::Exact(w) | Observation::Right(w) if w < 0.0 => {
                    return Err(Error::InvalidData(format!("negative value {w}")).at_row(i));
                }
                Observation::Exact(w) => PweRow::Point { event: Some(shape.piece_of(w)), exposure: expo(w) },
                Observation::Right(w) => PweRow::Point { event: None, exposure: expo(w) },
                Observation::Interval { lower, upper } => {
                    if lower < 0.0 {
                        return Err(Error::InvalidData(format!("negative interval bound {lower}")).at_row(i));
                    }
                    PweRow::Interval { lower: expo(lower), upper: expo(upper) }
                }
            };
            rows.push(row);
            z.extend_from_slice(&r.z);
        }
        Ok(Self { pieces: cutpoints.len(), q, z, rows })
    }

    fn dim(&self) -> usize {
        self.pieces + self.q
    }

    /// Baseline log rates ln(events/exposure) with no covariate effects.
    fn initial(&self) -> Result<Vec<f64>> {
        let mut events = vec![0.0; self.pieces];
        let mut exposure = vec![0.0; self.pieces];
        for r in &self.rows {
            let (ev, ex) = match r {
                PweRow::Point { event, exposure } => (*event, exposure),
                PweRow::Interval { lower, .. } => (None, lower),
            };
            if let Some(j) = ev {
                events[j] += 1.0;
            }
            for (e, x) in exposure.iter_mut().zip(ex) {
                *e += x;
            }
        }
        if let Some(j) = events.iter().position(|&d| d == 0.0) {
            return Err(Error::InvalidData(format!(
                "piece {} has no events; choose fewer or different cutpoints",
                j + 1
            )));
        }
        let mut theta: Vec<f64> = events.iter().zip(&exposure).map(|(d, e)| (d / e).ln()).collect();
        theta.resize(self.dim(), 0.0);
        Ok(theta)
    }

    /// H and its per-piece terms, which are also ∂H/∂ρ.
    fn cum_hazard(&self, theta: &[f64], lin: f64, expo: &[f64], derivs: bool) -> (f64, Vec<f64>) {
        let j = self.pieces;
        let scale = lin.exp();
        let mut per_piece = vec![0.0; if derivs { j } else { 0 }];
        let mut h = 0.0;
        for k in 0..j {
            if expo[k] > 0.0 {
                let c = scale * expo[k] * theta[k].exp();
                h += c;
                if derivs {
                    per_piece[k] = c;
                }
            }
        }
        (h, per_piece)
    }

    fn evaluate(&self, theta: &[f64], derivs: bool) -> Evaluation {
        let j = self.pieces;
        let q = self.q;
        let d = self.dim();
        let dd = if derivs { d } else { 0 };
        let mut ll = 0.0;
        let mut grad = DVector::zeros(dd);
        let mut hess = DMatrix::zeros(dd, dd);
        // ∇H = (per_piece, H z); ∇²H = [[diag(per_piece), per_piece zᵀ], [z per_pieceᵀ, H z zᵀ]]
        let add_grad = |grad: &mut DVector<f64>, coef: f64, h: f64, pp: &[f64], zi: &[f64]| {
            for k in 0..j {
                grad[k] += coef * pp[k];
            }
            for a in 0..q {
                grad[j + a] += coef * h * zi[a];
            }
        };
        let add_hess = |hess: &mut DMatrix<f64>, coef: f64, h: f64, pp: &[f64], zi: &[f64]| {
            for k in 0..j {
                hess[(k, k)] += coef * pp[k];
                for a in 0..q {
                    hess[(j + a, k)] += coef * pp[k] * zi[a];
                }
            }
            for a in 0..q {
                for b in 0..=a {
                    hess[(j + a, j + b)] += coef * h * zi[a] * zi[b];
                }
            }
        };
        let add_outer = |hess: &mut DMatrix<f64>, coef: f64, v: &[f64]| {
            for a in 0..v.len() {
                for b in 0..=a {
                    hess[(a, b)] += coef * v[a] * v[b];
                }
            }
        };
        for (i, r) in self.rows.iter().enumerate() {
            let zi = &self.z[i * q..(i + 1) * q];
            let lin: f64 = zi.iter().zip(&theta[j..]).map(|(a, b)| a * b).sum();
            match r {
                PweRow::Point { event, exposure } => {
                    let (h, pp) = self.cum_hazard(theta, lin, exposure, derivs);
                    ll -= h;
                    if let Some(k) = event {
                        ll += theta[*k] + lin;
                    }
                    if derivs {
                        if let Some(k) = event {
                            grad[*k] += 1.0;
                            for a in 0..q {
                                grad[j + a] += zi[a];
                            }
                        }
                        add_grad(&mut grad, -1.0, h, &pp, zi);
                        add_hess(&mut hess, -1.0, h, &pp, zi);
                    }
                }
                PweRow::Interval { lower, upper } => {
                    let (hl, ppl) = self.cum_hazard(theta, lin, lower, derivs);
                    let (hu, ppu) = self.cum_hazard(theta, lin, upper, derivs);
                    let delta = hu - hl;
                    ll += -hl + (-(-delta).exp_m1()).ln();
                    if derivs {
                        let qf = 1.0 / delta.exp_m1();
                        let dpp: Vec<f64> = ppu.iter().zip(&ppl).map(|(u, l)| u - l).collect();
                        add_grad(&mut grad, -1.0, hl, &ppl, zi);
                        add_grad(&mut grad, qf, delta, &dpp, zi);
                        add_hess(&mut hess, -1.0, hl, &ppl, zi);
                        add_hess(&mut hess, qf, delta, &dpp, zi);
                        let mut g_delta = dpp.clone();
                        g_delta.extend(zi.iter().map(|z| delta * z));
                        add_outer(&mut hess, -qf * (1.0 + qf), &g_delta);
                    }
                }
            }
        }
        symmetrize(&mut hess);
        Evaluation { loglik: ll, gradient: grad, hessian: hess }
    }
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Cutpoints at the j/J percentiles of the exact values; pieces left without
/// an event are merged into a neighbour.
pub fn default_cutpoints(data: &CensoredSample, pieces: usize) -> Result<Vec<f64>> {
    let mut exact: Vec<f64> = data
        .rows
        .iter()
        .filter_map(|r| match r.obs {
            Observation::Exact(w) => Some(w),
            _ => None,
        })
        .collect();
    if exact.is_empty() {
        return Err(Error::AllCensored);
    }
    if pieces == 0 {
        return Err(Error::InvalidParams("at least one piece is required".into()));
    }
    exact.sort_by(f64::total_cmp);
    let mut cuts = vec![0.0];
    for j in 1..pieces {
        let c = quantile_sorted(&exact, j as f64 / pieces as f64);
        if c > *cuts.last().unwrap() {
            cuts.push(c);
        }
    }
    loop {
        let shape = PiecewiseRates::new(cuts.clone(), vec![1.0; cuts.len()])?;
        let mut counts = vec![0usize; cuts.len()];
        for &w in &exact {
            counts[shape.piece_of(w)] += 1;
        }
        match counts.iter().position(|&c| c == 0) {
            None => return Ok(cuts),
            // drop the boundary so the empty piece joins its neighbour
            Some(0) => {
                cuts.remove(1);
            }
            Some(j) => {
                cuts.remove(j);
            }
        }
    }
}

enum Engine {
    Aft(AftEngine),
    Pwe(PweEngine),
}

impl Engine {
    fn dim(&self) -> usize {
        match self {
            Engine::Aft(e) => e.dim(),
            Engine::Pwe(e) => e.dim(),
        }
    }

    fn evaluate(&self, theta: &[f64], derivs: bool) -> Evaluation {
        match self {
            Engine::Aft(e) => e.evaluate(theta, derivs),
            Engine::Pwe(e) => e.evaluate(theta, derivs),
        }
    }
}

/// Analytic log-likelihood, score and Hessian in the optimizer's coordinates.
///
/// `cutpoints` is only used by the piecewise exponential family.
pub fn evaluate_theta(family: Family, data: &CensoredSample, theta: &[f64], cutpoints: &[f64]) -> Result<Evaluation> {
    let engine = build_engine(family, data, cutpoints)?;
    if theta.len() != engine.dim() {
        return Err(Error::DimensionMismatch { expected: engine.dim(), got: theta.len() });
    }
    Ok(engine.evaluate(theta, true))
}

fn build_engine(family: Family, data: &CensoredSample, cutpoints: &[f64]) -> Result<Engine> {
    Ok(if family == Family::PiecewiseExponential {
        Engine::Pwe(PweEngine::new(data, cutpoints)?)
    } else {
        Engine::Aft(AftEngine::new(family, data)?)
    })
}

fn default_init(family: Family, data: &CensoredSample, dim: usize) -> Vec<f64> {
    let exact: Vec<f64> = data
        .rows
        .iter()
        .filter_map(|r| match r.obs {
            Observation::Exact(w) => Some(w),
            _ => None,
        })
        .collect();
    let mean = exact.iter().sum::<f64>() / exact.len() as f64;
    let mut theta = vec![0.0; dim];
    theta[0] = if family.positive_support() { mean.ln() } else { mean };
    theta
}

/// Fit `family` to `data` by maximum likelihood.
pub fn fit(family: Family, data: &CensoredSample, options: &FitOptions) -> Result<FittedImputationModel> {
    let n = data.len();
    if data.n_exact() == 0 {
        return Err(Error::AllCensored);
    }
    if !(options.tol > 0.0) || options.max_iter == 0 {
        return Err(Error::InvalidParams("tolerance and iteration cap must be positive".into()));
    }
    let q = data.n_covariates();
    let cutpoints = if family == Family::PiecewiseExponential {
        match &options.cutpoints {
            Some(c) => c.clone(),
            None => default_cutpoints(data, options.pieces)?,
        }
    } else {
        Vec::new()
    };
    let k = parameter_count(family, q, cutpoints.len());
    if n < k + 1 {
        return Err(Error::TooFewRows { n, k });
    }
    let engine = build_engine(family, data, &cutpoints)?;
    let init = match (&options.init, &engine) {
        (Some(t), _) => {
            if t.len() != k {
                return Err(Error::DimensionMismatch { expected: k, got: t.len() });
            }
            t.clone()
        }
        (None, Engine::Pwe(e)) => e.initial()?,
        (None, Engine::Aft(_)) => default_init(family, data, k),
    };
    let out = newton(&engine, init, options)?;
    let loglik = out.eval.loglik;
    let score_norm = out.eval.gradient.norm();
    let converged = score_norm < options.tol;
    let neg_h = -&out.eval.hessian;
    let covariance = match neg_h.clone().cholesky() {
        Some(ch) => {
            let inv = ch.inverse();
            Some((0..k).map(|i| (0..k).map(|j| inv[(i, j)]).collect()).collect())
        }
        None if converged => return Err(Error::SingularInformation),
        None => None,
    };
    let spec = spec_from_theta(family, options.link, &out.theta, &cutpoints, q)?;
    Ok(FittedImputationModel {
        spec,
        loglik,
        k,
        n,
        aic: aic(k, loglik),
        bic: bic(k, n, loglik),
        converged,
        iterations: out.iterations,
        score_norm,
        theta: out.theta,
        covariance,
    })
}

struct NewtonOutcome {
    theta: Vec<f64>,
    eval: Evaluation,
    iterations: usize,
}

fn newton(engine: &Engine, init: Vec<f64>, options: &FitOptions) -> Result<NewtonOutcome> {
    let mut theta = init;
    let mut eval = engine.evaluate(&theta, true);
    if !eval.loglik.is_finite() {
        return Err(Error::InvalidData("log-likelihood is not finite at the starting values".into()));
    }
    let mut indefinite_run = 0;
    let mut iterations = 0;
    while iterations < options.max_iter {
        if eval.gradient.norm() < options.tol {
            break;
        }
        iterations += 1;
        let neg_h = -&eval.hessian;
        let step: DVector<f64> = match neg_h.cholesky() {
            Some(ch) => {
                indefinite_run = 0;
                ch.solve(&eval.gradient)
            }
            None => {
                indefinite_run += 1;
                if indefinite_run >= 3 {
                    indefinite_run = 0;
                    theta = nelder_mead(engine, &theta);
                    eval = engine.evaluate(&theta, true);
                    continue;
                }
                let g = &eval.gradient;
                g / g.norm().max(1.0)
            }
        };
        let floor = eval.loglik - 1e-10 * (1.0 + eval.loglik.abs());
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=40 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let ll = engine.evaluate(&cand, false).loglik;
            if ll.is_finite() && ll >= floor {
                accepted = Some(cand);
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some(cand) => {
                theta = cand;
                eval = engine.evaluate(&theta, true);
            }
            None => break,
        }
    }
    Ok(NewtonOutcome { theta, eval, iterations })
}

/// Derivative-free maximization used when Newton keeps meeting an
/// indefinite Hessian.
fn nelder_mead(engine: &Engine, start: &[f64]) -> Vec<f64> {
    let d = start.len();
    let f = |x: &[f64]| {
        let ll = engine.evaluate(x, false).loglik;
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..d {
        let mut x = start.to_vec();
        x[i] += 0.1 * x[i].abs().max(1.0);
        let fx = f(&x);
        simplex.push((x, fx));
    }
    for _ in 0..200 * d.max(1) {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[d].1 - simplex[0].1).abs() <= 1e-12 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|s| s.0[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let xc = along(0.5);
            let fc = f(&xc);
            if fc < simplex[d].1 {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    s.0 = best.iter().zip(&s.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    s.1 = f(&s.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0).0
}

/// Fit every candidate and rank by the criterion, smaller first.
///
/// Ties go to fewer parameters, then to the order of [`Family`]. Fits that
/// fail or do not converge are dropped; if none survive the error lists why.
pub fn select_model(
    candidates: &[Family],
    data: &CensoredSample,
    criterion: Criterion,
    options: &FitOptions,
) -> Result<Vec<FittedImputationModel>> {
    if candidates.is_empty() {
        return Err(Error::InvalidParams("no candidate families".into()));
    }
    let mut fitted = Vec::new();
    let mut failures = Vec::new();
    for &family in candidates {
        match fit(family, data, options) {
            Ok(m) if m.converged => fitted.push(m),
            Ok(m) => failures.push((
                family.to_string(),
                Error::InvalidData(format!("did not converge (score norm {:e})", m.score_norm)),
            )),
            Err(e) => failures.push((family.to_string(), e)),
        }
    }
    if fitted.is_empty() {
        return Err(Error::NoCandidateFitted(failures));
    }
    let key = |m: &FittedImputationModel| match criterion {
        Criterion::Aic => m.aic,
        Criterion::Bic => m.bic,
    };
    fitted.sort_by(|a, b| {
        key(a)
            .total_cmp(&key(b))
            .then(a.k.cmp(&b.k))
            .then(a.spec.family.cmp(&b.spec.family))
    });
    Ok(fitted)
}
