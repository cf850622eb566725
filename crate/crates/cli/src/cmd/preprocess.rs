use std::path::{Path, PathBuf};

use anyhow::Context as _;
use celestine::dataset::{cache_name, fetch_manifest_files, load_manifest, Category, CategoryCounts, Fetcher, LocalFetcher, ManifestEntry};
use celestine::fits::{extract_image, parse_fits};
use celestine::par;
use celestine::preprocess::{crop_raw, resize_bilinear, Chip, RESIZE_COLS, RESIZE_ROWS};
use serde::Serialize;
use serde_json::json;

use super::Outcome;
use crate::http::HttpFetcher;
use crate::store::{self, StoreRow};
use crate::{Context, ItemFailures};

#[derive(clap::Args)]
pub struct Args {
    /// Manifest CSV. Relative local paths resolve against its directory.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; crops go to `full/`, resized copies to `resize/`.
    #[arg(long)]
    out: PathBuf,
    /// Also write 224x448 bilinear copies.
    #[arg(long)]
    resize: bool,
    /// Where fetched raw files are kept [default: <out>/raw].
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Failure {
    sample_id: String,
    source: String,
    reason: String,
}

fn sample_id(e: &ManifestEntry) -> String {
    format!("{}_{}_hdu{}", e.body_id, e.obsid, e.hdu_index)
}

/// Local relative paths are taken relative to the manifest.
fn resolve_paths(entries: &mut [ManifestEntry], base: &Path) {
    for e in entries {
        let local = !e.path.contains("://");
        if local && Path::new(&e.path).is_relative() {
            e.path = base.join(&e.path).to_string_lossy().into_owned();
        }
    }
}

fn process(e: &ManifestEntry, cache: &Path, full: &Path, resized: Option<&Path>) -> anyhow::Result<(StoreRow, Option<StoreRow>)> {
    let raw = cache.join(cache_name(&e.path));
    let bytes = std::fs::read(&raw).with_context(|| format!("reading {}", raw.display()))?;
    let image = extract_image(&parse_fits(&bytes)?, e.hdu_index)?;
    let chip = Chip::resolve(e.instrument, &image, e.hdu_index)?;
    let crop = crop_raw(&image, chip)?;
    let id = sample_id(e);
    let row = store::write_sample(full, &id, &e.body_id, e.category, &crop)?;
    let small = match resized {
        Some(dir) => Some(store::write_sample(dir, &id, &e.body_id, e.category, &resize_bilinear(&crop, RESIZE_ROWS, RESIZE_COLS)?)?),
        None => None,
    };
    Ok((row, small))
}

pub fn run(args: &Args, ctx: &Context) -> Outcome {
    let mut manifest = load_manifest(&args.manifest)?;
    resolve_paths(&mut manifest, args.manifest.parent().unwrap_or(Path::new(".")));
    let cache = args.cache.clone().unwrap_or_else(|| args.out.join("raw"));
    let full = args.out.join("full");
    let resized = args.resize.then(|| args.out.join("resize"));
    for dir in [Some(&full), resized.as_ref()].into_iter().flatten() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    let http = HttpFetcher::new()?;
    let fetchers: [&dyn Fetcher; 2] = [&LocalFetcher, &http];
    let fetch = fetch_manifest_files(&manifest, &cache, &fetchers, ctx.threads)?;
    println!("fetched {}, already cached {}, failed {}", fetch.fetched.len(), fetch.skipped.len(), fetch.failed.len());

    let results = par::map_collect(&manifest, |e| process(e, &cache, &full, resized.as_deref()));
    let mut rows = Vec::new();
    let mut small_rows = Vec::new();
    let mut failures = Vec::new();
    for (e, r) in manifest.iter().zip(results) {
        match r {
            Ok((row, small)) => {
                rows.push(row);
                small_rows.extend(small);
            }
            Err(err) => {
                eprintln!("failed {}: {err:#}", e.path);
                failures.push(Failure { sample_id: sample_id(e), source: e.path.clone(), reason: format!("{err:#}") });
            }
        }
    }
    store::write_index(&full, &rows)?;
    if let Some(dir) = &resized {
        store::write_index(dir, &small_rows)?;
    }

    let mut counts = CategoryCounts::default();
    for r in &rows {
        match r.category {
            Category::Galaxy => counts.galaxy += 1,
            Category::Nsc => counts.nsc += 1,
        }
        counts.total += 1;
    }
    println!("{:<12}{:>10}{:>10}{:>10}", "", "Galaxies", "NSC", "Total");
    println!("{:<12}{:>10}{:>10}{:>10}", "samples", counts.galaxy, counts.nsc, counts.total);
    println!("crops in {}{}", full.display(), resized.as_ref().map(|d| format!(", 224x448 copies in {}", d.display())).unwrap_or_default());
    if !failures.is_empty() {
        println!("{} of {} entries failed", failures.len(), manifest.len());
    }

    let report = json!({
        "command": "preprocess",
        "entries": manifest.len(),
        "fetch": fetch,
        "samples": counts,
        "resized": resized.is_some(),
        "failures": failures,
    });
    let outcome = if failures.is_empty() { Ok(()) } else { Err(ItemFailures(failures.len()).into()) };
    Ok((report, outcome))
}
