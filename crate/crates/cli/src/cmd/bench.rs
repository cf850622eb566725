use std::path::{Path, PathBuf};

use anyhow::Context as _;
use celestine::dataset::{cache_name, fetch_manifest_files, load_manifest, synthesize_sample, Category, ExposureConfig, Fetcher, LocalFetcher, SceneTemplate, ThroughputModel};
use celestine::fits::{extract_image, parse_fits, write_fits};
use celestine::nn::Tensor;
use celestine::preprocess::{crop_raw, embed_science, raw_fits_file, resize_bilinear, to_float_normalized, Chip, Instrument};
use celestine::runtime::{bench_timing, forward_pass, load_checkpoint, Model};
use serde_json::json;

use super::Outcome;
use crate::http::HttpFetcher;
use crate::Context;

#[derive(clap::Args)]
pub struct Args {
    /// Raw frames to time. Without it, synthetic raw ACS frames are used.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Synthetic frames to generate when no manifest is given.
    #[arg(long, default_value_t = 2)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    /// Untimed passes before measuring.
    #[arg(long, default_value_t = 0)]
    warmup: usize,
    /// Trained weights [default: freshly initialized from --seed].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Cache for fetched manifest files.
    #[arg(long, default_value = "bench-cache")]
    cache: PathBuf,
}

/// An in-memory raw file and the science HDU to read.
struct RawSample {
    bytes: Vec<u8>,
    instrument: Instrument,
    hdu_index: usize,
}

fn synthetic_frames(n: usize, seed: u64) -> anyhow::Result<Vec<RawSample>> {
    let model = ThroughputModel::demo_broadband();
    (0..n)
        .map(|i| {
            let category = Category::ALL[i % 2];
            let template = SceneTemplate::full_frame(category, seed.wrapping_add(i as u64));
            let s = synthesize_sample(category, &template, &ExposureConfig::default(), &model, seed.wrapping_add(i as u64))?;
            let file = raw_fits_file(
                Instrument::AcsWfc,
                embed_science(Chip::Wfc1, &s.pixels, 0.0),
                embed_science(Chip::Wfc2, &s.pixels, 0.0),
            );
            Ok(RawSample { bytes: write_fits(&file)?, instrument: Instrument::AcsWfc, hdu_index: 4 })
        })
        .collect()
}

fn manifest_frames(path: &Path, cache: &Path, workers: usize) -> anyhow::Result<Vec<RawSample>> {
    let mut manifest = load_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for e in &mut manifest {
        if !e.path.contains("://") && Path::new(&e.path).is_relative() {
            e.path = base.join(&e.path).to_string_lossy().into_owned();
        }
    }
    let http = HttpFetcher::new()?;
    let fetchers: [&dyn Fetcher; 2] = [&LocalFetcher, &http];
    let report = fetch_manifest_files(&manifest, cache, &fetchers, workers)?;
    if let Some(f) = report.failed.first() {
        anyhow::bail!("fetching {}: {}", f.source, f.reason);
    }
    manifest
        .iter()
        .map(|e| {
            let p = cache.join(cache_name(&e.path));
            let bytes = std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
            Ok(RawSample { bytes, instrument: e.instrument, hdu_index: e.hdu_index })
        })
        .collect()
}

/// Raw bytes to a normalized network input, resized when the network is smaller than the CCD.
fn prepare(s: &RawSample, input: [usize; 3]) -> anyhow::Result<Tensor<f32>> {
    let image = extract_image(&parse_fits(&s.bytes)?, s.hdu_index)?;
    let chip = Chip::resolve(s.instrument, &image, s.hdu_index)?;
    let mut grid = to_float_normalized(&crop_raw(&image, chip)?)?;
    if (grid.height, grid.width) != (input[1], input[2]) {
        grid = resize_bilinear(&grid, input[1], input[2])?;
    }
    Ok(Tensor::new(vec![1, 1, grid.height, grid.width], grid.data))
}

pub fn run(args: &Args, ctx: &Context) -> Outcome {
    let spec = ctx.spec_or("hr-celestialnet")?;
    if spec.input[0] != 1 {
        return Err(crate::usage("bench needs a single-channel network"));
    }
    let input = spec.input;
    let model = match &args.checkpoint {
        Some(p) => load_checkpoint::<f32>(p, &spec)?,
        None => Model::<f32>::init(spec, ctx.seed)?,
    };
    let samples = match &args.manifest {
        Some(m) => manifest_frames(m, &args.cache, ctx.threads)?,
        None if args.samples == 0 => return Err(crate::usage("--samples must be >= 1")),
        None => synthetic_frames(args.samples, ctx.seed)?,
    };
    // Fail before timing rather than inside the timed closures.
    for s in &samples {
        prepare(s, input)?;
    }
    println!("timing {} on {} raw frame(s) with {} thread(s); file reads are not timed", model.spec.name, samples.len(), ctx.threads);
    let report = bench_timing(
        &samples,
        args.repetitions,
        args.warmup,
        |s| prepare(s, input).expect("validated above"),
        |x| {
            forward_pass(&model, x).expect("input shape validated above");
        },
    )?;
    print!("{report}");
    let json = json!({
        "command": "bench",
        "spec": model.spec.name,
        "threads": ctx.threads,
        "timing": report,
        "comparison_status": celestine::runtime::REFERENCE_ONLY,
    });
    Ok((json, Ok(())))
}
