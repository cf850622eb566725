use std::path::PathBuf;

use anyhow::Context as _;
use celestine::dataset::{load_manifest, save_manifest, split_by_body, LCID_PUBLISHED_SPLIT};
use serde_json::json;

use super::Outcome;
use crate::Context;

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    manifest: PathBuf,
    /// Fraction of each category's bodies that go to training.
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    /// Directory for `train.csv` and `test.csv`.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: &Args, ctx: &Context) -> Outcome {
    let manifest = load_manifest(&args.manifest)?;
    let split = split_by_body(&manifest, args.ratio, ctx.seed)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    save_manifest(&split.train, args.out.join("train.csv"))?;
    save_manifest(&split.test, args.out.join("test.csv"))?;
    let summary = split.summary();
    println!("split of {} (ratio {}, seed {})", args.manifest.display(), args.ratio, ctx.seed);
    print!("{summary}");
    println!();
    println!("published LCID split, for reference:");
    print!("{LCID_PUBLISHED_SPLIT}");
    let report = json!({
        "command": "split",
        "summary": summary,
        "train": args.out.join("train.csv"),
        "test": args.out.join("test.csv"),
    });
    Ok((report, Ok(())))
}
