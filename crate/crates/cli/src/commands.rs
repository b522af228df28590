use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use censimpute::aftfit::{self, Criterion, FitOptions, FittedImputationModel};
use censimpute::analysis;
use censimpute::condmean::{Method, Strategy};
use censimpute::imputation::{self, Dataset, ImputedDataset, MIConfig, Resampling};
use censimpute::simlab::{self, SimDesign, SimResult};
use censimpute::{Error, Family};
use serde_json::json;

use crate::{AnalyzeArgs, DataArgs, Failure, FitArgs, Format, ImputationArgs, ImputeArgs, Output, SimMode, SimulateArgs};

type CmdResult = Result<(), Failure>;

fn read_data(args: &DataArgs) -> Result<Dataset, Failure> {
    let file = File::open(&args.input)
        .map_err(|e| Failure::usage(format!("cannot open {}: {e}", args.input.display())))?;
    Ok(Dataset::read_csv(io::BufReader::new(file), args.columns())?)
}

fn writer(out: &Output) -> Result<Box<dyn Write>, Failure> {
    Ok(match &out.output {
        Some(path) => Box::new(BufWriter::new(create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn create(path: &Path) -> Result<File, Failure> {
    File::create(path).map_err(|e| Failure::usage(format!("cannot create {}: {e}", path.display())))
}

fn write_json(out: &Output, value: &serde_json::Value) -> CmdResult {
    let mut w = writer(out)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::from(Error::Io(e.to_string())))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Failure::from(Error::from(e)))
}

fn init_workers(workers: Option<usize>) -> CmdResult {
    if let Some(n) = workers {
        if n == 0 {
            return Err(Failure::usage("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot start worker pool: {e}")))?;
    }
    Ok(())
}

fn strategy_for(args: &ImputationArgs) -> Result<Strategy, Failure> {
    let mut s = match args.strategy {
        Some(m) => Strategy::new(m),
        None => Strategy::default_for(args.family),
    };
    if let Some(k) = args.grid_size {
        s.grid_size = k;
    }
    s.validate()?;
    Ok(s)
}

fn fit_options(data: &DataArgs) -> FitOptions {
    FitOptions {
        pieces: data.pieces,
        ..FitOptions::default()
    }
}

fn imputations(data: &Dataset, args: &ImputationArgs, options: &FitOptions) -> Result<Vec<ImputedDataset>, Failure> {
    let strategy = strategy_for(args)?;
    let mut cfg = MIConfig::new(args.b, args.seed);
    if args.b > 1 {
        cfg.resampling = args.resampling.into();
    }
    Ok(imputation::impute_multiple(data, args.family, &strategy, options, &cfg)?)
}

pub fn fit(a: FitArgs) -> CmdResult {
    init_workers(a.out.workers)?;
    let families = if a.family.eq_ignore_ascii_case("all") {
        Family::ANALYTIC.to_vec()
    } else {
        vec![crate::parse_family(&a.family).map_err(Failure::usage)?]
    };
    let data = read_data(&a.data)?;
    let sample = data.censored_sample()?;
    let options = fit_options(&a.data);
    let mut fitted: Vec<FittedImputationModel> = Vec::new();
    let mut last_error = None;
    for family in families {
        match aftfit::fit(family, &sample, &options) {
            Ok(m) if m.converged => fitted.push(m),
            Ok(m) => eprintln!("warning: {family} did not converge (score norm {:e})", m.score_norm),
            Err(e) => {
                eprintln!("warning: {family} could not be fitted: {e}");
                last_error = Some(e);
            }
        }
    }
    if fitted.is_empty() {
        return Err(match last_error {
            Some(e) => e.into(),
            None => Failure::from(Error::InvalidData("no model converged".into())),
        });
    }
    let key = |m: &FittedImputationModel| match a.criterion {
        Criterion::Aic => m.aic,
        Criterion::Bic => m.bic,
    };
    fitted.sort_by(|x, y| {
        key(x)
            .total_cmp(&key(y))
            .then(x.k.cmp(&y.k))
            .then(x.spec.family.cmp(&y.spec.family))
    });
    match a.out.format {
        Format::Json => write_json(
            &a.out,
            &json!({ "criterion": a.criterion.to_string(), "models": fitted }),
        ),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(writer(&a.out)?);
            w.write_record(["rank", "family", "k", "loglik", "aic", "bic", "iterations"])
                .map_err(Error::from)?;
            for (i, m) in fitted.iter().enumerate() {
                w.write_record([
                    (i + 1).to_string(),
                    m.spec.family.to_string(),
                    m.k.to_string(),
                    m.loglik.to_string(),
                    m.aic.to_string(),
                    m.bic.to_string(),
                    m.iterations.to_string(),
                ])
                .map_err(Error::from)?;
            }
            w.flush().map_err(Error::from)?;
            Ok(())
        }
    }
}

pub fn impute(a: ImputeArgs) -> CmdResult {
    init_workers(a.out.workers)?;
    let data = read_data(&a.data)?;
    let sets = imputations(&data, &a.imputation, &fit_options(&a.data))?;
    match a.out.format {
        Format::Csv => Ok(imputation::write_imputed_csv(writer(&a.out)?, &sets)?),
        Format::Json => {
            let list: Vec<_> = sets
                .iter()
                .map(|s| {
                    json!({
                        "imputation_id": s.imputation_id,
                        "model": s.model,
                        "values": s.x(),
                        "imputed": s.imputed,
                    })
                })
                .collect();
            write_json(
                &a.out,
                &json!({
                    "family": a.imputation.family,
                    "strategy": strategy_for(&a.imputation)?.method.to_string(),
                    "B": a.imputation.b,
                    "seed": a.imputation.seed,
                    "imputations": list,
                }),
            )
        }
    }
}

pub fn analyze(a: AnalyzeArgs) -> CmdResult {
    init_workers(a.out.workers)?;
    let data = read_data(&a.data)?;
    // a rank-deficient design fails the same way with any imputed values
    analysis::ols_dataset(&data)?;
    let sets = imputations(&data, &a.imputation, &fit_options(&a.data))?;
    let fits = sets.iter().map(analysis::ols_imputed).collect::<censimpute::Result<Vec<_>>>()?;
    let pooled = analysis::pool(&fits, a.confidence)?;
    match a.out.format {
        Format::Json => {
            let mut report = serde_json::to_value(pooled.report()).map_err(|e| Error::Io(e.to_string()))?;
            report["family"] = json!(a.imputation.family);
            report["strategy"] = json!(strategy_for(&a.imputation)?.method.to_string());
            write_json(&a.out, &report)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(writer(&a.out)?);
            w.write_record(["term", "estimate", "se", "ci_lower", "ci_upper", "df"])
                .map_err(Error::from)?;
            for j in 0..pooled.names.len() {
                w.write_record([
                    pooled.names[j].clone(),
                    pooled.beta_bar[j].to_string(),
                    pooled.se[j].to_string(),
                    pooled.ci_lower[j].to_string(),
                    pooled.ci_upper[j].to_string(),
                    pooled.df[j].to_string(),
                ])
                .map_err(Error::from)?;
            }
            w.flush().map_err(Error::from)?;
            Ok(())
        }
    }
}

fn load_design(a: &SimulateArgs) -> Result<SimDesign, Failure> {
    let mut design = match (&a.design, &a.preset) {
        (Some(path), _) => {
            let file = File::open(path).map_err(|e| Failure::usage(format!("cannot open {}: {e}", path.display())))?;
            serde_json::from_reader(io::BufReader::new(file))
                .map_err(|e| Failure::usage(format!("design file {}: {e}", path.display())))?
        }
        (None, Some(name)) => SimDesign::preset(name)?,
        (None, None) => SimDesign::default(),
    };
    if let Some(n) = a.n {
        design.n = n;
    }
    if let Some(r) = a.replicates {
        design.replicates = r;
    }
    if let Some(b) = a.b {
        design.b = b;
    }
    if let Some(s) = a.seed {
        design.seed = s;
    }
    if let Some(f) = a.family {
        design.family_fit = f;
    }
    if let Some(m) = a.strategy {
        design.strategy = m;
    }
    if let Some(c) = a.censor_rate {
        design.censor_rate = c;
    }
    if let Some(r) = a.resampling {
        design.resampling = Resampling::from(r);
    }
    if a.out.workers.is_some() {
        design.workers = a.out.workers;
    }
    design.validate()?;
    Ok(design)
}

fn summaries_json(results: &[SimResult]) -> serde_json::Value {
    json!(results
        .iter()
        .map(|r| json!({ "design": r.design, "summary": r.summary, "full_cohort": r.full_cohort }))
        .collect::<Vec<_>>())
}

pub fn simulate(a: SimulateArgs) -> CmdResult {
    let design = load_design(&a)?;
    if let Some(path) = &a.emit_dataset {
        let (data, _) = simlab::generate_replicate(&design, 0)?;
        return Ok(data.write_csv(BufWriter::new(create(path)?))?);
    }
    if a.mode == SimMode::Selection {
        let r = simlab::run_selection_study(&design, &design.candidates)?;
        return match a.out.format {
            Format::Json => write_json(&a.out, &json!(r)),
            Format::Csv => {
                let mut w = csv::Writer::from_writer(writer(&a.out)?);
                w.write_record(["family", "aic_first", "bic_first", "replicates_ok", "excluded"])
                    .map_err(Error::from)?;
                for (i, f) in r.candidates.iter().enumerate() {
                    w.write_record([
                        f.to_string(),
                        r.aic_first[i].to_string(),
                        r.bic_first[i].to_string(),
                        r.replicates_ok.to_string(),
                        r.excluded.to_string(),
                    ])
                    .map_err(Error::from)?;
                }
                w.flush().map_err(Error::from)?;
                Ok(())
            }
        };
    }
    let results = match a.mode {
        SimMode::Compare => simlab::compare_strategies(&design, &Method::ALL)?,
        _ => vec![simlab::run_cell(&design)?],
    };
    if let Some(path) = &a.long {
        simlab::write_long_csv(BufWriter::new(create(path)?), &results)?;
    }
    match a.out.format {
        Format::Json => write_json(&a.out, &summaries_json(&results)),
        Format::Csv => Ok(simlab::write_summary_csv(writer(&a.out)?, &results)?),
    }
}
