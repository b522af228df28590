//! Single and multiple conditional-mean imputation of a censored covariate.

use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aftfit::{self, CensoredRow, CensoredSample, FitOptions, FittedImputationModel, Observation};
use crate::condmean::{self, Method, Strategy};
use crate::error::{Error, Result};
use crate::survdist::{Family, FamilySpec};

/// One subject: outcome, censored covariate, event flag, other covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub y: f64,
    /// Observed value: the true covariate when `delta`, else the censoring value
    /// (the lower bound for interval-censored rows).
    pub w: f64,
    pub delta: bool,
    /// Upper bound for interval censoring; `None` means right-censored.
    #[serde(default)]
    pub upper: Option<f64>,
    pub z: Vec<f64>,
}

impl Record {
    pub fn observation(&self) -> Observation {
        match (self.delta, self.upper) {
            (true, _) => Observation::Exact(self.w),
            (false, Some(u)) if u.is_finite() => Observation::Interval { lower: self.w, upper: u },
            (false, _) => Observation::Right(self.w),
        }
    }
}

/// Column names of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub outcome: String,
    pub observed: String,
    pub event: String,
    #[serde(default)]
    pub upper: Option<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            outcome: "y".into(),
            observed: "w".into(),
            event: "delta".into(),
            upper: None,
            covariates: vec!["z".into()],
        }
    }
}

/// Source text of a CSV, kept so untouched cells are written back verbatim.
#[derive(Debug, Clone, PartialEq)]
struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    observed_col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: ColumnMap,
    pub records: Vec<Record>,
    raw: Option<RawTable>,
}

impl Dataset {
    pub fn new(columns: ColumnMap, records: Vec<Record>) -> Result<Self> {
        let q = columns.covariates.len();
        for (i, r) in records.iter().enumerate() {
            if r.z.len() != q {
                return Err(Error::DimensionMismatch { expected: q, got: r.z.len() }.at_row(i));
            }
            if !r.y.is_finite() || !r.w.is_finite() || r.z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData("missing or non-finite value".into()).at_row(i));
            }
            if let Some(u) = r.upper {
                if !r.delta && !(u > r.w) {
                    return Err(Error::InvalidData(format!("upper bound {u} not above {}", r.w)).at_row(i));
                }
            }
        }
        Ok(Self { columns, records, raw: None })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_censored(&self) -> usize {
        self.records.iter().filter(|r| !r.delta).count()
    }

    /// The censored-covariate sample used to fit the imputation model.
    pub fn censored_sample(&self) -> Result<CensoredSample> {
        CensoredSample::new(
            self.records
                .iter()
                .map(|r| CensoredRow { obs: r.observation(), z: r.z.clone() })
                .collect(),
        )
    }

    /// Rows at the given indices, repeats allowed. Source text is dropped.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.clone(),
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            raw: None,
        }
    }

    /// Read a CSV with a header row, mapping columns by name.
    pub fn read_csv<R: Read>(reader: R, columns: ColumnMap) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let iy = find(&columns.outcome)?;
        let iw = find(&columns.observed)?;
        let id = find(&columns.event)?;
        let iu = columns.upper.as_deref().map(find).transpose()?;
        let iz = columns.covariates.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
        let mut records = Vec::new();
        let mut raw_rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let cell = |j: usize| -> Result<f64> {
                let s = rec.get(j).unwrap_or("");
                parse_number(s).ok_or_else(|| {
                    Error::InvalidData(format!("line {line}, column '{}': cannot parse '{s}'", header[j]))
                })
            };
            let delta = match rec.get(id).unwrap_or("") {
                "1" => true,
                "0" => false,
                s => {
                    return Err(Error::InvalidData(format!(
                        "line {line}, column '{}': event flag must be 0 or 1, got '{s}'",
                        header[id]
                    )))
                }
            };
            let upper = match iu {
                Some(j) if rec.get(j).is_some_and(|s| !s.is_empty()) => Some(cell(j)?),
                _ => None,
            };
            let record = Record {
                y: cell(iy)?,
                w: cell(iw)?,
                delta,
                upper,
                z: iz.iter().map(|&j| cell(j)).collect::<Result<_>>()?,
            };
            records.push(record);
            raw_rows.push(rec.iter().map(str::to_string).collect());
        }
        let mut data = Dataset::new(columns, records).map_err(|e| match e {
            Error::AtRow { row, source } => Error::InvalidData(format!("line {}: {source}", row + 2)),
            e => e,
        })?;
        data.raw = Some(RawTable { header, rows: raw_rows, observed_col: iw });
        Ok(data)
    }

    /// Write the mapped columns (or the original table when read from CSV).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let (header, rows) = self.table(None);
        wtr.write_record(&header)?;
        for r in rows {
            wtr.write_record(&r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Header and rows as text, with `values` replacing the observed column
    /// where given.
    fn table(&self, values: Option<&[Option<f64>]>) -> (Vec<String>, Vec<Vec<String>>) {
        let replace = |i: usize| values.and_then(|v| v[i]);
        if let Some(raw) = &self.raw {
            let rows = raw
                .rows
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let mut row = row.clone();
                    if let Some(v) = replace(i) {
                        row[raw.observed_col] = format_number(v);
                    }
                    row
                })
                .collect();
            return (raw.header.clone(), rows);
        }
        let c = &self.columns;
        let mut header = vec![c.outcome.clone(), c.observed.clone(), c.event.clone()];
        if let Some(u) = &c.upper {
            header.push(u.clone());
        }
        header.extend(c.covariates.iter().cloned());
        let rows = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = vec![
                    format_number(r.y),
                    format_number(replace(i).unwrap_or(r.w)),
                    if r.delta { "1".into() } else { "0".into() },
                ];
                if c.upper.is_some() {
                    row.push(r.upper.map(format_number).unwrap_or_default());
                }
                row.extend(r.z.iter().map(|&v| format_number(v)));
                row
            })
            .collect();
        (header, rows)
    }
}

fn parse_number(s: &str) -> Option<f64> {
    let v: f64 = match s {
        "inf" | "+inf" | "Inf" => f64::INFINITY,
        "-inf" | "-Inf" => f64::NEG_INFINITY,
        _ => s.parse().ok()?,
    };
    (!v.is_nan()).then_some(v)
}

/// Shortest text that reads back to the same double.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

/// A dataset whose censored values have been replaced by conditional means.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedDataset {
    /// Copy of the input with `w` overwritten on imputed rows.
    pub data: Dataset,
    /// Which rows were imputed.
    pub imputed: Vec<bool>,
    /// The observed values before imputation.
    pub original_w: Vec<f64>,
    pub family: Family,
    pub method: Method,
    pub model: FamilySpec,
    /// 1-based position in a multiple imputation.
    pub imputation_id: usize,
}

impl ImputedDataset {
    /// Covariate values used downstream, observed or imputed.
    pub fn x(&self) -> Vec<f64> {
        self.data.records.iter().map(|r| r.w).collect()
    }
}

/// Replace every censored value using a fixed imputation model.
pub fn impute_with_model(data: &Dataset, model: &FamilySpec, strategy: &Strategy) -> Result<ImputedDataset> {
    strategy.validate()?;
    let mut out = data.clone();
    let mut imputed = vec![false; data.len()];
    let mut original_w = Vec::with_capacity(data.len());
    for (i, rec) in out.records.iter_mut().enumerate() {
        original_w.push(rec.w);
        if rec.delta {
            continue;
        }
        let params = model.resolve(&rec.z).map_err(|e| e.at_row(i))?;
        rec.w = condmean::cm_observation(&params, rec.w, rec.upper, strategy).map_err(|e| e.at_row(i))?;
        imputed[i] = true;
    }
    Ok(ImputedDataset {
        data: out,
        imputed,
        original_w,
        family: model.family,
        method: strategy.method,
        model: model.clone(),
        imputation_id: 1,
    })
}

/// Fit the imputation model on `data`, then impute it.
pub fn impute_single(
    data: &Dataset,
    family: Family,
    strategy: &Strategy,
    options: &FitOptions,
) -> Result<(ImputedDataset, FittedImputationModel)> {
    let model = fit_converged(family, &data.censored_sample()?, options)?;
    let imputed = impute_with_model(data, &model.spec, strategy)?;
    Ok((imputed, model))
}

fn fit_converged(family: Family, sample: &CensoredSample, options: &FitOptions) -> Result<FittedImputationModel> {
    let m = aftfit::fit(family, sample, options)?;
    if !m.converged {
        return Err(Error::InvalidData(format!(
            "{family} fit did not converge after {} iterations (score norm {:e})",
            m.iterations, m.score_norm
        )));
    }
    Ok(m)
}

/// How the B imputations differ from each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Every imputation uses the fit on the full data.
    None,
    /// Refit on a with-replacement resample of rows for each imputation.
    #[default]
    Bootstrap,
    /// Resample rows, then fit and impute on the resample itself, so each
    /// imputed dataset is a bootstrap sample.
    BootstrapSample,
    /// Draw parameters from the asymptotic normal of the full-data fit.
    ParameterDraw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MIConfig {
    /// Number of imputations.
    pub b: usize,
    pub seed: u64,
    pub resampling: Resampling,
    /// Extra draws allowed when a replicate's fit fails.
    pub max_redraws: usize,
}

impl MIConfig {
    pub fn new(b: usize, seed: u64) -> Self {
        Self {
            b,
            seed,
            resampling: if b > 1 { Resampling::Bootstrap } else { Resampling::None },
            max_redraws: 10,
        }
    }
}

/// Random stream for imputation `index`, independent across indices.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// B imputations of `data`, ordered by imputation index.
///
/// Bootstrap replicates refit on resampled rows but impute the original rows,
/// except under [`Resampling::BootstrapSample`]. A replicate whose fit or imputation fails is redrawn up to
/// `max_redraws` times before the whole call fails.
pub fn impute_multiple(
    data: &Dataset,
    family: Family,
    strategy: &Strategy,
    options: &FitOptions,
    cfg: &MIConfig,
) -> Result<Vec<ImputedDataset>> {
    if cfg.b == 0 {
        return Err(Error::InvalidParams("the number of imputations must be at least 1".into()));
    }
    strategy.validate()?;
    let number = |mut d: ImputedDataset, b: usize| {
        d.imputation_id = b + 1;
        d
    };
    match cfg.resampling {
        Resampling::None => {
            let (single, _) = impute_single(data, family, strategy, options)?;
            Ok((0..cfg.b).map(|b| number(single.clone(), b)).collect())
        }
        Resampling::Bootstrap | Resampling::BootstrapSample => {
            let sample = data.censored_sample()?;
            let n = data.len();
            (0..cfg.b)
                .into_par_iter()
                .map(|b| {
                    let mut rng = replicate_rng(cfg.seed, b as u64);
                    let mut last = None;
                    for _ in 0..=cfg.max_redraws {
                        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                        let attempt = fit_converged(family, &sample.subset(&idx), options).and_then(|m| {
                            if cfg.resampling == Resampling::BootstrapSample {
                                impute_with_model(&data.subset(&idx), &m.spec, strategy)
                            } else {
                                impute_with_model(data, &m.spec, strategy)
                            }
                        });
                        match attempt {
                            Ok(d) => return Ok(number(d, b)),
                            Err(e) => last = Some(e),
                        }
                    }
                    Err(Error::BootstrapFailed {
                        replicate: b + 1,
                        attempts: cfg.max_redraws + 1,
                        last: Box::new(last.expect("at least one attempt")),
                    })
                })
                .collect()
        }
        Resampling::ParameterDraw => {
            let model = fit_converged(family, &data.censored_sample()?, options)?;
            let cov = model.covariance_matrix().ok_or(Error::SingularInformation)?;
            let chol = cov.cholesky().ok_or(Error::SingularInformation)?;
            let l = chol.l();
            let k = model.theta.len();
            (0..cfg.b)
                .into_par_iter()
                .map(|b| {
                    let mut rng = replicate_rng(cfg.seed, b as u64);
                    let mut last = None;
                    for _ in 0..=cfg.max_redraws {
                        let e = nalgebra::DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                        let shift = &l * e;
                        let theta: Vec<f64> = model.theta.iter().zip(shift.iter()).map(|(t, s)| t + s).collect();
                        let attempt = model
                            .spec_at(&theta)
                            .and_then(|spec| impute_with_model(data, &spec, strategy));
                        match attempt {
                            Ok(d) => return Ok(number(d, b)),
                            Err(e) => last = Some(e),
                        }
                    }
                    Err(Error::BootstrapFailed {
                        replicate: b + 1,
                        attempts: cfg.max_redraws + 1,
                        last: Box::new(last.expect("at least one attempt")),
                    })
                })
                .collect()
        }
    }
}

/// Stack imputed datasets into one CSV with `imputed` and `imputation_id`
/// columns appended.
pub fn write_imputed_csv<W: Write>(writer: W, sets: &[ImputedDataset]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut wrote_header = false;
    for set in sets {
        let values: Vec<Option<f64>> = set
            .imputed
            .iter()
            .zip(&set.data.records)
            .map(|(&imp, r)| imp.then_some(r.w))
            .collect();
        let (mut header, rows) = set.data.table(Some(&values));
        if !wrote_header {
            header.push("imputed".into());
            header.push("imputation_id".into());
            wtr.write_record(&header)?;
            wrote_header = true;
        }
        for (mut row, &imp) in rows.into_iter().zip(&set.imputed) {
            row.push(if imp { "1".into() } else { "0".into() });
            row.push(set.imputation_id.to_string());
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}
