use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use survkit::datamodel::{build_grid, read_feature_rows, write_csv, CsvSchema, GridStrategy, TimeGrid};
use survkit::registry::{fit_model, SavedModel};
use survkit::simulate::{generate, Censoring, Scenario, ScenarioFamily};
use survkit::stacking::stack as stack_problem;
use survkit::{Result, SurvError};

use crate::config::{self, RunConfig};
use crate::{FitArgs, PredictArgs, SimulateArgs, StackArgs};

/// Parses a kebab-case enum name through its serde representation.
pub fn parse_name<T: DeserializeOwned>(s: &str, what: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| SurvError::validation(format!("unknown {what} '{s}'")))
}

fn effective_config(a: &FitArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &a.data {
        c.data = Some(v.clone());
    }
    if let Some(v) = &a.model {
        c.fit.model = v.parse()?;
    }
    if let Some(v) = a.events {
        c.events = v;
    }
    if let Some(v) = &a.time_col {
        c.time_col = v.clone();
    }
    if let Some(v) = &a.event_col {
        c.event_col = v.clone();
    }
    if let Some(v) = a.epochs {
        c.fit.epochs = v;
    }
    if let Some(v) = a.lr {
        c.fit.lr = v;
    }
    if let Some(v) = a.batch_size {
        c.fit.batch_size = Some(v);
    }
    if let Some(v) = a.seed {
        c.fit.seed = v;
    }
    if let Some(v) = &a.hidden {
        c.fit.hidden = v.clone();
    }
    if let Some(v) = &a.grid {
        c.fit.grid = v.parse()?;
    }
    if let Some(v) = a.grid_size {
        c.fit.grid_size = Some(v);
    }
    if a.linear {
        c.fit.linear = true;
    }
    if let Some(v) = &a.encoder {
        c.fit.encoder = parse_name(v, "encoder")?;
    }
    Ok(c)
}

pub fn fit(a: &FitArgs, out: &Path) -> Result<()> {
    let cfg = effective_config(a)?;
    let data = cfg.data.clone().ok_or_else(|| SurvError::validation("no training data given (use --data or a config file)"))?;
    let ds = config::load(&data, &cfg.schema(), "data")?;
    log::info!("fitting {:?} on {} records", cfg.fit.model, ds.len());
    let (model, trace) = fit_model(&cfg.fit, &ds)?;
    std::fs::write(out.join("model.json"), model.to_json()?)?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in trace.epochs.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", e + 1);
    }
    std::fs::write(out.join("loss_trace.csv"), csv)?;
    config::write_manifest(out, "fit", &cfg, &[&data])?;
    println!("wrote {}", out.join("model.json").display());
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    config::require_file(path, "model")?;
    SavedModel::from_json(&std::fs::read_to_string(path)?)
}

pub fn predict(a: &PredictArgs, out: &Path) -> Result<()> {
    let model = load_model(&a.model_file)?;
    config::require_file(&a.inputs, "inputs")?;
    let rows = read_feature_rows(std::fs::File::open(&a.inputs)?, &CsvSchema::default())?;
    let grid = match &a.times {
        Some(t) => TimeGrid::new(t.clone())?,
        None => model
            .natural_grid()
            .ok_or_else(|| SurvError::validation("this model has no time grid of its own; pass --times"))?,
    };
    for (i, x) in rows.iter().enumerate() {
        let b = model.predict(x, &grid)?;
        let cifs = if model.is_competing() { model.cif(x)? } else { Vec::new() };
        let mut text = String::from("time,survival,hazard,cumhaz");
        for d in 1..=cifs.len() {
            let _ = write!(text, ",cif_{d}");
        }
        text.push('\n');
        for (l, t) in b.grid.times().iter().enumerate() {
            let _ = write!(text, "{t},{},{},{}", b.survival[l], b.hazard[l], b.cumhaz[l]);
            for c in &cifs {
                let _ = write!(text, ",{}", c.values[l]);
            }
            text.push('\n');
        }
        std::fs::write(out.join(format!("curve_{i}.csv")), text)?;
    }
    config::write_manifest(out, "predict", &serde_json::json!({ "times": a.times }), &[&a.model_file, &a.inputs])?;
    println!("wrote {} curves to {}", rows.len(), out.display());
    Ok(())
}

fn scenario_from_flags(a: &SimulateArgs) -> Result<Scenario> {
    let family = match a.family.as_str() {
        "exponential-ph" => ScenarioFamily::ExponentialPh { beta: a.beta.clone(), psi: a.psi },
        "weibull-ph" => ScenarioFamily::WeibullPh {
            beta: a.beta.clone(),
            shape: a.shape,
            scale: a.scale,
        },
        "two-cluster" => match a.rates.as_slice() {
            [r0, r1] => ScenarioFamily::TwoCluster { rates: [*r0, *r1] },
            _ => return Err(SurvError::validation("two-cluster needs exactly two --rates")),
        },
        "competing-exponential" => ScenarioFamily::CompetingExponential {
            rates: a.rates.clone(),
            dim: a.dim,
        },
        other => return Err(SurvError::validation(format!("unknown family '{other}'"))),
    };
    let censoring = match a.censoring.as_str() {
        "none" => Censoring::None,
        "exponential" => Censoring::Exponential { rate: a.censor_rate },
        "uniform" => Censoring::Uniform { a: a.censor_a, b: a.censor_b },
        other => return Err(SurvError::validation(format!("unknown censoring '{other}'"))),
    };
    Ok(Scenario::new(family, censoring, a.n, a.seed))
}

pub fn simulate(a: &SimulateArgs, out: &Path) -> Result<()> {
    let scenario = match &a.scenario {
        Some(p) => {
            config::require_file(p, "scenario")?;
            serde_json::from_str(&std::fs::read_to_string(p)?)?
        }
        None => scenario_from_flags(a)?,
    };
    let (ds, oracle) = generate(&scenario)?;
    write_csv(&ds, out.join("data.csv"), None)?;
    std::fs::write(out.join("oracle.json"), oracle.to_json()?)?;
    config::write_manifest(out, "simulate", &scenario, &[])?;
    println!("wrote {} records to {}", ds.len(), out.join("data.csv").display());
    Ok(())
}

pub fn stack(a: &StackArgs, out: &Path) -> Result<()> {
    let ds = config::load(&a.data, &CsvSchema::default(), "data")?;
    let grid = match &a.times {
        Some(t) => TimeGrid::new(t.clone())?,
        None => build_grid(&ds, a.grid.parse::<GridStrategy>()?, a.grid_size)?,
    };
    let p = stack_problem(&ds, &grid)?;
    p.write_csv(std::fs::File::create(out.join("stacked.csv"))?)?;
    config::write_manifest(out, "stack", &serde_json::json!({ "grid": grid.times() }), &[&a.data])?;
    println!("wrote {} rows x {} columns", p.rows(), p.cols() + 1);
    Ok(())
}
