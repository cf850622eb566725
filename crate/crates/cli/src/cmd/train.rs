use std::path::PathBuf;

use anyhow::Context as _;
use celestine::runtime::{save_checkpoint, train, Model, TrainConfig};
use serde_json::json;

use super::Outcome;
use crate::store;
use crate::Context;

#[derive(clap::Args)]
pub struct Args {
    /// Sample store written by `preprocess` or `synth`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    /// Keep sample order fixed instead of reshuffling every epoch.
    #[arg(long)]
    no_shuffle: bool,
    #[arg(long, default_value = "model.ckpt")]
    checkpoint: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long, default_value = "train.log")]
    log: PathBuf,
}

pub fn run(args: &Args, ctx: &Context) -> Outcome {
    let spec = ctx.spec_or("hr-celestialnet")?;
    let config = TrainConfig {
        batch_size: args.batch_size,
        lr: args.lr,
        epochs: args.epochs,
        seed: ctx.seed,
        shuffle: !args.no_shuffle,
    };
    config.validate()?;
    let (rows, data) = store::load_labeled(&args.data, spec.input)?;
    println!("training {} on {} samples from {}", spec.name, rows.len(), args.data.display());
    let mut model = Model::<f32>::init(spec, ctx.seed)?;
    let log = train(&mut model, &data, &config, |r| {
        println!("epoch {:>4}  loss {:.6}  train_acc {:.4}", r.epoch, r.loss, r.train_acc);
    })?;
    std::fs::write(&args.log, log.to_string()).with_context(|| format!("writing {}", args.log.display()))?;
    save_checkpoint(&model, &args.checkpoint)?;
    println!("log {}, checkpoint {}", args.log.display(), args.checkpoint.display());
    let report = json!({
        "command": "train",
        "spec": model.spec.name,
        "config": config,
        "samples": rows.len(),
        "log": log,
        "checkpoint": args.checkpoint,
    });
    Ok((report, Ok(())))
}
