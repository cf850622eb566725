use std::path::PathBuf;

use anyhow::Context as _;
use celestine::dataset::{synthesize_sample, Category, ExposureConfig, SceneTemplate, ThroughputModel};
use celestine::preprocess::{CCD_COLS, CCD_ROWS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::Outcome;
use crate::store;
use crate::Context;

#[derive(clap::Args)]
pub struct Args {
    /// Output sample store.
    #[arg(long)]
    out: PathBuf,
    /// Samples per category.
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value_t = CCD_ROWS)]
    height: usize,
    #[arg(long, default_value_t = CCD_COLS)]
    width: usize,
    /// Exposure time in seconds [default: 500 s scaled by frame area].
    #[arg(long)]
    exposure_time: Option<f64>,
    /// Multiplies the source SED (brightness).
    #[arg(long, default_value_t = 1.0)]
    sed_scale: f64,
}

pub fn run(args: &Args, ctx: &Context) -> Outcome {
    if args.count == 0 || args.height == 0 || args.width == 0 {
        return Err(crate::usage("--count, --height and --width must be >= 1"));
    }
    let mut exposure = ExposureConfig::scaled_to(args.height, args.width);
    if let Some(t) = args.exposure_time {
        exposure.t = t;
    }
    exposure.validate()?;
    let model = ThroughputModel::demo_broadband().with_sed_scaled(args.sed_scale)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    for category in Category::ALL {
        for i in 0..args.count {
            let template = SceneTemplate::random(category, args.height, args.width, &mut rng);
            let sample = synthesize_sample(category, &template, &exposure, &model, rng.random())?;
            let id = format!("synthetic-{category}-{i}");
            rows.push(store::write_sample(&args.out, &id, &id, category, &sample.pixels)?);
            let (lo, hi) = sample.pixels.min_max();
            println!(
                "{id:<22} electrons {:>12.4e}  DN range [{lo}, {hi}]  saturated {:.3}%",
                sample.electrons,
                sample.saturated_fraction * 100.0
            );
            samples.push(json!({
                "sample_id": id,
                "category": category,
                "template": template,
                "electrons": sample.electrons,
                "saturated_fraction": sample.saturated_fraction,
            }));
        }
    }
    store::write_index(&args.out, &rows)?;
    println!("{} samples of {}x{} in {}", rows.len(), args.height, args.width, args.out.display());
    let report = json!({
        "command": "synth",
        "seed": ctx.seed,
        "exposure": exposure,
        "sed_scale": args.sed_scale,
        "samples": samples,
    });
    Ok((report, Ok(())))
}
