//! Parametric survival families with covariate-dependent parameters.
//!
//! A [`FamilySpec`] holds population-level parameters (regression
//! coefficients, shape, piecewise baseline). Calling [`FamilySpec::resolve`]
//! with one subject's covariates yields [`SubjectParams`], which carries the
//! distribution functions used by fitting and imputation.
//!
//! Link conventions (η = coefficients · (1, z)):
//!
//! | family                | parameters for subject i                    |
//! |-----------------------|---------------------------------------------|
//! | exponential (AFT)     | λ_i = exp(−η)                               |
//! | exponential (PH)      | λ_i = exp(η)                                |
//! | Weibull (AFT)         | α = shape, λ_i = exp(−α η), S = exp(−λ x^α) |
//! | Weibull (PH)          | α = shape, λ_i = exp(η)                     |
//! | log-normal            | μ_i = η, σ = shape                          |
//! | log-logistic          | α = shape, λ_i = exp(η), S = 1/(1+(x/λ)^α)  |
//! | piecewise exponential | λ_ij = exp(baseline_log_rates[j] + η)       |
//! | Gaussian / logistic   | location η, scale = shape                   |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Exponential,
    Weibull,
    #[serde(alias = "lognormal")]
    LogNormal,
    #[serde(alias = "loglogistic")]
    LogLogistic,
    #[serde(alias = "pwe")]
    PiecewiseExponential,
    Gaussian,
    Logistic,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Exponential,
        Family::Weibull,
        Family::LogNormal,
        Family::LogLogistic,
        Family::PiecewiseExponential,
        Family::Gaussian,
        Family::Logistic,
    ];

    /// The five positive-support families with closed-form conditional means.
    pub const ANALYTIC: [Family; 5] = [
        Family::Exponential,
        Family::Weibull,
        Family::LogNormal,
        Family::LogLogistic,
        Family::PiecewiseExponential,
    ];

    pub fn positive_support(self) -> bool {
        !matches!(self, Family::Gaussian | Family::Logistic)
    }

    pub fn has_shape(self) -> bool {
        !matches!(self, Family::Exponential | Family::PiecewiseExponential)
    }

    pub fn has_analytic_mean(self) -> bool {
        self.positive_support()
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Weibull => "weibull",
            Family::LogNormal => "lognormal",
            Family::LogLogistic => "loglogistic",
            Family::PiecewiseExponential => "pwe",
            Family::Gaussian => "gaussian",
            Family::Logistic => "logistic",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "exponential" | "exp" => Family::Exponential,
            "weibull" => Family::Weibull,
            "lognormal" => Family::LogNormal,
            "loglogistic" => Family::LogLogistic,
            "pwe" | "piecewiseexponential" | "piecewise" => Family::PiecewiseExponential,
            "gaussian" | "normal" => Family::Gaussian,
            "logistic" => Family::Logistic,
            _ => return Err(Error::InvalidParams(format!("unknown family '{s}'"))),
        })
    }
}

/// How covariates enter exponential and Weibull models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Aft,
    Ph,
}

fn is_default_link(l: &Link) -> bool {
    *l == Link::Aft
}

/// Population-level model: family, regression coefficients and shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<f64>,
    /// Intercept followed by one coefficient per covariate.
    pub coefficients: Vec<f64>,
    /// Piecewise exponential only: `[0, τ₁, …, τ_{J−1}]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cutpoints: Vec<f64>,
    /// Piecewise exponential only: J baseline log hazards.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baseline_log_rates: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_default_link")]
    pub link: Link,
}

impl FamilySpec {
    pub fn exponential(coefficients: Vec<f64>) -> Self {
        Self::with_shape(Family::Exponential, None, coefficients)
    }

    pub fn weibull(shape: f64, coefficients: Vec<f64>) -> Self {
        Self::with_shape(Family::Weibull, Some(shape), coefficients)
    }

    pub fn lognormal(sigma: f64, coefficients: Vec<f64>) -> Self {
        Self::with_shape(Family::LogNormal, Some(sigma), coefficients)
    }

    pub fn loglogistic(shape: f64, coefficients: Vec<f64>) -> Self {
        Self::with_shape(Family::LogLogistic, Some(shape), coefficients)
    }

    pub fn gaussian(sigma: f64, coefficients: Vec<f64>) -> Self {
        Self::with_shape(Family::Gaussian, Some(sigma), coefficients)
    }

    pub fn logistic(sigma: f64, coefficients: Vec<f64>) -> Self {
        Self::with_shape(Family::Logistic, Some(sigma), coefficients)
    }

    pub fn piecewise(cutpoints: Vec<f64>, baseline_log_rates: Vec<f64>, coefficients: Vec<f64>) -> Self {
        Self {
            family: Family::PiecewiseExponential,
            shape: None,
            coefficients,
            cutpoints,
            baseline_log_rates,
            link: Link::Aft,
        }
    }

    fn with_shape(family: Family, shape: Option<f64>, coefficients: Vec<f64>) -> Self {
        Self {
            family,
            shape,
            coefficients,
            cutpoints: Vec::new(),
            baseline_log_rates: Vec::new(),
            link: Link::Aft,
        }
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    pub fn n_covariates(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.is_empty() {
            return Err(Error::InvalidParams("coefficients must include an intercept".into()));
        }
        if self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParams("coefficients must be finite".into()));
        }
        if self.family.has_shape() {
            match self.shape {
                Some(s) if s > 0.0 && s.is_finite() => {}
                other => {
                    return Err(Error::InvalidParams(format!(
                        "{} requires a positive shape, got {other:?}",
                        self.family
                    )))
                }
            }
        }
        if self.link == Link::Ph
            && !matches!(
                self.family,
                Family::Exponential | Family::Weibull | Family::PiecewiseExponential
            )
        {
            return Err(Error::InvalidParams(format!(
                "{} has no proportional-hazards parameterization",
                self.family
            )));
        }
        if self.family == Family::PiecewiseExponential {
            PiecewiseRates::validate_cutpoints(&self.cutpoints)?;
            if self.cutpoints.len() != self.baseline_log_rates.len() {
                return Err(Error::InvalidParams(format!(
                    "{} cutpoints but {} baseline rates",
                    self.cutpoints.len(),
                    self.baseline_log_rates.len()
                )));
            }
            if self.baseline_log_rates.iter().any(|r| !r.is_finite()) {
                return Err(Error::InvalidParams("baseline log rates must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn linear_predictor(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.n_covariates() {
            return Err(Error::DimensionMismatch {
                expected: self.n_covariates(),
                got: z.len(),
            });
        }
        Ok(self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(z)
                .map(|(b, x)| b * x)
                .sum::<f64>())
    }

    /// Subject-specific parameters for covariate vector `z`.
    pub fn resolve(&self, z: &[f64]) -> Result<SubjectParams> {
        self.validate()?;
        let eta = self.linear_predictor(z)?;
        let shape = self.shape.unwrap_or(1.0);
        let params = match (self.family, self.link) {
            (Family::Exponential, Link::Aft) => SubjectParams::Exponential { rate: (-eta).exp() },
            (Family::Exponential, Link::Ph) => SubjectParams::Exponential { rate: eta.exp() },
            (Family::Weibull, Link::Aft) => SubjectParams::Weibull {
                shape,
                rate: (-eta * shape).exp(),
            },
            (Family::Weibull, Link::Ph) => SubjectParams::Weibull {
                shape,
                rate: eta.exp(),
            },
            (Family::LogNormal, _) => SubjectParams::LogNormal { mu: eta, sigma: shape },
            (Family::LogLogistic, _) => SubjectParams::LogLogistic {
                shape,
                scale: eta.exp(),
            },
            (Family::PiecewiseExponential, _) => {
                let rates = self.baseline_log_rates.iter().map(|r| (r + eta).exp()).collect();
                SubjectParams::PiecewiseExponential(PiecewiseRates::new(self.cutpoints.clone(), rates)?)
            }
            (Family::Gaussian, _) => SubjectParams::Gaussian { mu: eta, sigma: shape },
            (Family::Logistic, _) => SubjectParams::Logistic { mu: eta, sigma: shape },
        };
        params.validate()?;
        Ok(params)
    }
}

/// Piecewise-constant hazard on `[τ_{j−1}, τ_j)`, last piece open-ended.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseRates {
    cutpoints: Vec<f64>,
    rates: Vec<f64>,
    /// Cumulative hazard at each cutpoint.
    cum: Vec<f64>,
}

impl PiecewiseRates {
    fn validate_cutpoints(cutpoints: &[f64]) -> Result<()> {
        if cutpoints.first() != Some(&0.0) {
            return Err(Error::InvalidParams("piecewise cutpoints must start at 0".into()));
        }
        if cutpoints.iter().any(|c| !c.is_finite()) || cutpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParams(
                "piecewise cutpoints must be finite and strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn new(cutpoints: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        Self::validate_cutpoints(&cutpoints)?;
        if cutpoints.len() != rates.len() {
            return Err(Error::InvalidParams("one rate per piece required".into()));
        }
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidParams("piecewise rates must be positive".into()));
        }
        let mut cum = Vec::with_capacity(cutpoints.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for j in 1..cutpoints.len() {
            acc += rates[j - 1] * (cutpoints[j] - cutpoints[j - 1]);
            cum.push(acc);
        }
        Ok(Self { cutpoints, rates, cum })
    }

    pub fn cutpoints(&self) -> &[f64] {
        &self.cutpoints
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn pieces(&self) -> usize {
        self.rates.len()
    }

    /// Zero-based piece containing `x`; pieces are closed on the left.
    pub fn piece_of(&self, x: f64) -> usize {
        self.cutpoints.partition_point(|&c| c <= x).saturating_sub(1)
    }

    /// Cumulative hazard at the start of piece `j` (`j = J` gives +∞).
    pub fn cum_hazard_at_cut(&self, j: usize) -> f64 {
        self.cum.get(j).copied().unwrap_or(f64::INFINITY)
    }

    pub fn cum_hazard(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let j = self.piece_of(x);
        self.cum[j] + self.rates[j] * (x - self.cutpoints[j])
    }

    /// Time at risk in each piece up to `x`.
    pub fn time_at_risk(&self, x: f64) -> impl Iterator<Item = f64> + '_ {
        let n = self.cutpoints.len();
        (0..n).map(move |j| {
            let lo = self.cutpoints[j];
            let hi = if j + 1 < n { self.cutpoints[j + 1] } else { f64::INFINITY };
            (x.min(hi) - lo).max(0.0)
        })
    }

    fn inverse_cum_hazard(&self, h: f64) -> f64 {
        let j = self.cum.partition_point(|&c| c <= h).saturating_sub(1);
        self.cutpoints[j] + (h - self.cum[j]) / self.rates[j]
    }
}

/// One subject's resolved distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum SubjectParams {
    Exponential { rate: f64 },
    Weibull { shape: f64, rate: f64 },
    LogNormal { mu: f64, sigma: f64 },
    LogLogistic { shape: f64, scale: f64 },
    PiecewiseExponential(PiecewiseRates),
    Gaussian { mu: f64, sigma: f64 },
    Logistic { mu: f64, sigma: f64 },
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

impl SubjectParams {
    pub fn family(&self) -> Family {
        match self {
            SubjectParams::Exponential { .. } => Family::Exponential,
            SubjectParams::Weibull { .. } => Family::Weibull,
            SubjectParams::LogNormal { .. } => Family::LogNormal,
            SubjectParams::LogLogistic { .. } => Family::LogLogistic,
            SubjectParams::PiecewiseExponential(_) => Family::PiecewiseExponential,
            SubjectParams::Gaussian { .. } => Family::Gaussian,
            SubjectParams::Logistic { .. } => Family::Logistic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        let valid = match *self {
            SubjectParams::Exponential { rate } => ok(rate),
            SubjectParams::Weibull { shape, rate } => ok(shape) && ok(rate),
            SubjectParams::LogNormal { mu, sigma }
            | SubjectParams::Gaussian { mu, sigma }
            | SubjectParams::Logistic { mu, sigma } => mu.is_finite() && ok(sigma),
            SubjectParams::LogLogistic { shape, scale } => ok(shape) && ok(scale),
            SubjectParams::PiecewiseExponential(_) => true,
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("{self:?}")))
        }
    }

    /// Lower end of the support.
    pub fn support_lower(&self) -> f64 {
        if self.family().positive_support() {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Points where the hazard is discontinuous.
    pub fn breakpoints(&self) -> &[f64] {
        match self {
            SubjectParams::PiecewiseExponential(p) => &p.cutpoints[1..],
            _ => &[],
        }
    }

    /// Cumulative hazard H(x) = −ln S(x).
    pub fn cum_hazard(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if self.family().positive_support() && x <= 0.0 {
            return 0.0;
        }
        match self {
            SubjectParams::Exponential { rate } => rate * x,
            SubjectParams::Weibull { shape, rate } => rate * x.powf(*shape),
            SubjectParams::LogNormal { mu, sigma } => {
                -specfun::ln_normal_sf((x.ln() - mu) / sigma).unwrap_or(f64::NAN)
            }
            SubjectParams::LogLogistic { shape, scale } => softplus(shape * (x / scale).ln()),
            SubjectParams::PiecewiseExponential(p) => p.cum_hazard(x),
            SubjectParams::Gaussian { mu, sigma } => {
                -specfun::ln_normal_sf((x - mu) / sigma).unwrap_or(f64::NAN)
            }
            SubjectParams::Logistic { mu, sigma } => softplus((x - mu) / sigma),
        }
    }

    pub fn log_survival(&self, x: f64) -> f64 {
        -self.cum_hazard(x)
    }

    pub fn survival(&self, x: f64) -> f64 {
        (-self.cum_hazard(x)).exp()
    }

    pub fn hazard(&self, x: f64) -> f64 {
        if self.family().positive_support() && x < 0.0 {
            return 0.0;
        }
        match self {
            SubjectParams::Exponential { rate } => *rate,
            SubjectParams::Weibull { shape, rate } => shape * rate * x.powf(shape - 1.0),
            SubjectParams::LogNormal { mu, sigma } => {
                if x == 0.0 {
                    return 0.0;
                }
                specfun::normal_hazard((x.ln() - mu) / sigma) / (sigma * x)
            }
            SubjectParams::LogLogistic { shape, scale } => {
                if x == 0.0 {
                    return if *shape < 1.0 {
                        f64::INFINITY
                    } else if *shape == 1.0 {
                        1.0 / scale
                    } else {
                        0.0
                    };
                }
                shape / x * sigmoid(shape * (x / scale).ln())
            }
            SubjectParams::PiecewiseExponential(p) => p.rates[p.piece_of(x)],
            SubjectParams::Gaussian { mu, sigma } => specfun::normal_hazard((x - mu) / sigma) / sigma,
            SubjectParams::Logistic { mu, sigma } => sigmoid((x - mu) / sigma) / sigma,
        }
    }

    /// ln f(x); −∞ outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        if self.family().positive_support() && x < 0.0 {
            return f64::NEG_INFINITY;
        }
        match self {
            SubjectParams::LogNormal { mu, sigma } => {
                if x == 0.0 {
                    return f64::NEG_INFINITY;
                }
                specfun::ln_normal_pdf((x.ln() - mu) / sigma) - sigma.ln() - x.ln()
            }
            SubjectParams::Gaussian { mu, sigma } => specfun::ln_normal_pdf((x - mu) / sigma) - sigma.ln(),
            SubjectParams::Logistic { mu, sigma } => {
                let u = (x - mu) / sigma;
                u - 2.0 * softplus(u) - sigma.ln()
            }
            _ => self.hazard(x).ln() - self.cum_hazard(x),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    /// Unconditional mean; `+∞` when it does not exist.
    pub fn mean(&self) -> f64 {
        match self {
            SubjectParams::Exponential { rate } => 1.0 / rate,
            SubjectParams::Weibull { shape, rate } => {
                (-rate.ln() / shape + libm::lgamma(1.0 + 1.0 / shape)).exp()
            }
            SubjectParams::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            SubjectParams::LogLogistic { shape, scale } => {
                if *shape <= 1.0 {
                    f64::INFINITY
                } else {
                    let b = std::f64::consts::PI / shape;
                    scale * b / b.sin()
                }
            }
            SubjectParams::PiecewiseExponential(p) => {
                let mut total = 0.0;
                for j in 0..p.pieces() {
                    let s_lo = (-p.cum[j]).exp();
                    let s_hi = (-p.cum_hazard_at_cut(j + 1)).exp();
                    total += (s_lo - s_hi) / p.rates[j];
                }
                total
            }
            SubjectParams::Gaussian { mu, .. } | SubjectParams::Logistic { mu, .. } => *mu,
        }
    }

    /// Inverse survival function: the `x` with `S(x) = u`, for `u ∈ (0, 1)`.
    pub fn inverse_survival(&self, u: f64) -> f64 {
        let h = -u.ln();
        match self {
            SubjectParams::Exponential { rate } => h / rate,
            SubjectParams::Weibull { shape, rate } => (h / rate).powf(1.0 / shape),
            SubjectParams::LogNormal { mu, sigma } => {
                (mu - sigma * specfun::normal_quantile(u).unwrap_or(f64::NAN)).exp()
            }
            SubjectParams::LogLogistic { shape, scale } => scale * ((1.0 - u) / u).powf(1.0 / shape),
            SubjectParams::PiecewiseExponential(p) => p.inverse_cum_hazard(h),
            SubjectParams::Gaussian { mu, sigma } => mu - sigma * specfun::normal_quantile(u).unwrap_or(f64::NAN),
            SubjectParams::Logistic { mu, sigma } => mu + sigma * ((1.0 - u) / u).ln(),
        }
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.inverse_survival(u)
    }
}
