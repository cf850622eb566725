use std::path::PathBuf;

use anyhow::Context as _;
use celestine::dataset::Category;
use celestine::metrics::{confusion_matrix, LCID_BLURRY_FIXTURES};
use celestine::runtime::{evaluate, load_checkpoint, EvalReport};
use clap::{ArgGroup, ValueEnum};
use serde_json::json;

use super::Outcome;
use crate::store;
use crate::Context;

#[derive(Clone, Copy, ValueEnum)]
enum Fixture {
    /// The four published blurry-set confusion matrices.
    LcidBlurry,
}

#[derive(clap::Args)]
#[command(group(ArgGroup::new("source").required(true).args(["data", "predictions", "fixture"])))]
pub struct Args {
    /// Sample store to classify (needs --checkpoint).
    #[arg(long, requires = "checkpoint")]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// CSV with `prediction,label` columns (0/1 or galaxy/nsc).
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,
    /// With --data: write per-sample predictions here.
    #[arg(long, requires = "data")]
    save_predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
}

fn parse_class(s: &str) -> Option<usize> {
    let s = s.trim();
    s.parse::<usize>()
        .ok()
        .or_else(|| Category::ALL.into_iter().find(|c| c.to_string().eq_ignore_ascii_case(s)).map(Category::label))
}

fn read_predictions(path: &PathBuf) -> anyhow::Result<(Vec<usize>, Vec<usize>)> {
    let bad = |msg: String| crate::usage(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name).ok_or_else(|| bad(format!("missing column `{name}`")));
    let (pc, lc) = (col("prediction")?, col("label")?);
    let (mut preds, mut labels) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for (c, out) in [(pc, &mut preds), (lc, &mut labels)] {
            let v = rec.get(c).and_then(parse_class).ok_or_else(|| bad(format!("row {}: unreadable class", i + 2)))?;
            out.push(v);
        }
    }
    Ok((preds, labels))
}

pub fn run(args: &Args, ctx: &Context) -> Outcome {
    let reports: Vec<EvalReport> = if let Some(fixture) = args.fixture {
        match fixture {
            Fixture::LcidBlurry => LCID_BLURRY_FIXTURES
                .iter()
                .map(|(model, cm, _)| EvalReport::new(format!("LCID-Blurry fixture, {model}"), *cm))
                .collect(),
        }
    } else if let Some(path) = &args.predictions {
        let (p, l) = read_predictions(path)?;
        vec![EvalReport::new(path.display().to_string(), confusion_matrix(&p, &l).map_err(|e| crate::usage(e.to_string()))?)]
    } else {
        let dir = args.data.as_ref().expect("clap enforces a source");
        let spec = ctx.spec_or("hr-celestialnet")?;
        let ckpt = args.checkpoint.as_ref().expect("clap enforces --checkpoint");
        let model = load_checkpoint::<f32>(ckpt, &spec)?;
        let (rows, data) = store::load_labeled(dir, spec.input)?;
        let ev = evaluate(&model, &data, args.batch_size)?;
        if let Some(out) = &args.save_predictions {
            let mut w = csv::Writer::from_path(out).with_context(|| format!("writing {}", out.display()))?;
            w.write_record(["sample_id", "prediction", "label", "galaxy_probability"])?;
            for (i, row) in rows.iter().enumerate() {
                w.write_record([
                    row.sample_id.clone(),
                    ev.predictions[i].to_string(),
                    data.labels[i].to_string(),
                    format!("{:.6}", ev.galaxy_probability[i]),
                ])?;
            }
            w.flush()?;
        }
        vec![EvalReport::new(dir.display().to_string(), ev.confusion)]
    };
    for (i, r) in reports.iter().enumerate() {
        if i > 0 {
            println!();
        }
        let text = r.to_string();
        // The published table is identical for every report; print it once.
        match text.find("\nPublished results") {
            Some(n) if i + 1 < reports.len() => println!("{}", text[..n].trim_end()),
            _ => print!("{text}"),
        }
    }
    let report = json!({ "command": "eval", "evaluations": reports });
    Ok((report, Ok(())))
}
