//! Manifests, body-level train/test splitting, the electron-flux model and
//! synthetic raw-like samples, plus fetching manifest files into a cache.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::preprocess::{Grid, Instrument, CCD_COLS, CCD_ROWS, DN_MAX};

/// Planck constant, J·s.
pub const PLANCK_H: f64 = 6.62607015e-34;
/// Speed of light, m/s.
pub const LIGHT_C: f64 = 2.99792458e8;

pub const MANIFEST_COLUMNS: [&str; 9] =
    ["body_id", "category", "instrument", "obsid", "filter", "ra_deg", "dec_deg", "hdu_index", "path"];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("manifest row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("body {body} is labelled both galaxy and nsc")]
    ConflictingCategory { body: String },
    #[error("split: {0}")]
    Split(String),
    #[error("flux model: {0}")]
    Model(String),
    #[error("exposure: {0}")]
    Exposure(String),
    #[error("scene: {0}")]
    Scene(String),
    #[error("{fraction:.1}% of pixels saturate; the sample is unusable")]
    Saturated { fraction: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Galaxy,
    Nsc,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Galaxy, Category::Nsc];

    /// Class index: galaxy 0, nsc 1.
    pub fn label(self) -> usize {
        match self {
            Category::Galaxy => 0,
            Category::Nsc => 1,
        }
    }

    pub fn from_label(label: usize) -> Option<Self> {
        match label {
            0 => Some(Category::Galaxy),
            1 => Some(Category::Nsc),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Galaxy => "galaxy",
            Category::Nsc => "nsc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub body_id: String,
    pub category: Category,
    pub instrument: Instrument,
    pub obsid: String,
    pub filter: String,
    pub ra_deg: f64,
    pub dec_deg: f64,
    pub hdu_index: usize,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    read_manifest(fs::File::open(path)?)
}

/// Parses manifest CSV, validating the header, each row, and per-body
/// category consistency. Entries keep file order.
pub fn read_manifest(reader: impl Read) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let ok = header.len() >= 9
        && header.iter().zip(MANIFEST_COLUMNS).all(|(h, e)| h == e)
        && (header.len() == 9 || (header.len() == 10 && header[9] == "sha256"));
    if !ok {
        return Err(DatasetError::Manifest(format!(
            "header must be `{}[,sha256]`, got `{}`",
            MANIFEST_COLUMNS.join(","),
            header.join(",")
        )));
    }
    let mut entries = Vec::new();
    let mut categories: HashMap<String, Category> = HashMap::new();
    for (i, row) in rdr.deserialize::<ManifestEntry>().enumerate() {
        let row_no = i + 2;
        let mut entry = row.map_err(|e| DatasetError::Row { row: row_no, message: e.to_string() })?;
        if entry.sha256.as_deref() == Some("") {
            entry.sha256 = None;
        }
        validate_entry(&entry).map_err(|message| DatasetError::Row { row: row_no, message })?;
        match categories.get(&entry.body_id) {
            Some(&c) if c != entry.category => {
                return Err(DatasetError::ConflictingCategory { body: entry.body_id.clone() })
            }
            _ => {
                categories.insert(entry.body_id.clone(), entry.category);
            }
        }
        entries.push(entry);
    }
    Ok(entries)
}

fn validate_entry(e: &ManifestEntry) -> std::result::Result<(), String> {
    if e.body_id.is_empty() {
        return Err("empty body_id".into());
    }
    if e.hdu_index < 1 {
        return Err("hdu_index must be >= 1".into());
    }
    if e.path.is_empty() {
        return Err("empty path".into());
    }
    if let Some(h) = &e.sha256 {
        if h.len() != 64 || !h.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(format!("sha256 {h:?} is not 64 hex digits"));
        }
    }
    Ok(())
}

pub fn write_manifest(entries: &[ManifestEntry], writer: impl Write) -> Result<()> {
    let with_sha = entries.iter().any(|e| e.sha256.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = MANIFEST_COLUMNS.to_vec();
    if with_sha {
        header.push("sha256");
    }
    w.write_record(&header)?;
    for e in entries {
        let mut rec = vec![
            e.body_id.clone(),
            e.category.to_string(),
            e.instrument.to_string(),
            e.obsid.clone(),
            e.filter.clone(),
            e.ra_deg.to_string(),
            e.dec_deg.to_string(),
            e.hdu_index.to_string(),
            e.path.clone(),
        ];
        if with_sha {
            rec.push(e.sha256.clone().unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    write_manifest(entries, fs::File::create(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
    pub seed: u64,
    pub ratio: f64,
}

/// Number of training bodies for a category of `n >= 2` bodies:
/// `round(ratio * n)` with halves rounding up, clamped to `[1, n - 1]` so
/// neither side is empty.
pub fn train_body_count(n: usize, ratio: f64) -> usize {
    let rounded = (ratio * n as f64 + 0.5).floor() as usize;
    rounded.clamp(1, n.saturating_sub(1).max(1))
}

/// Splits by celestial body, independently per category: sorted body ids
/// are shuffled with the seed and the first `train_body_count` go to train.
/// A category with fewer than two bodies is an error.
/// Every image follows its body; entries keep manifest order in each split.
pub fn split_by_body(manifest: &[ManifestEntry], ratio: f64, seed: u64) -> Result<SplitResult> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::Split(format!("ratio {ratio} is outside (0, 1)")));
    }
    let mut bodies: BTreeMap<Category, BTreeSet<&str>> = BTreeMap::new();
    let mut seen: HashMap<&str, Category> = HashMap::new();
    for e in manifest {
        if let Some(&c) = seen.get(e.body_id.as_str()) {
            if c != e.category {
                return Err(DatasetError::ConflictingCategory { body: e.body_id.clone() });
            }
        }
        seen.insert(&e.body_id, e.category);
        bodies.entry(e.category).or_default().insert(&e.body_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_bodies: BTreeSet<&str> = BTreeSet::new();
    for (category, set) in &bodies {
        let mut ids: Vec<&str> = set.iter().copied().collect();
        let n = ids.len();
        let k = train_body_count(n, ratio);
        if n < 2 {
            return Err(DatasetError::Split(format!(
                "{n} {category} bodies cannot be split at ratio {ratio} with both sides nonempty"
            )));
        }
        ids.shuffle(&mut rng);
        train_bodies.extend(&ids[..k]);
    }
    let (train, test) = manifest.iter().cloned().partition(|e| train_bodies.contains(e.body_id.as_str()));
    Ok(SplitResult { train, test, seed, ratio })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub galaxy: usize,
    pub nsc: usize,
    pub total: usize,
}

impl CategoryCounts {
    fn add(&mut self, c: Category, n: usize) {
        match c {
            Category::Galaxy => self.galaxy += n,
            Category::Nsc => self.nsc += n,
        }
        self.total += n;
    }

    pub fn of_samples(entries: &[ManifestEntry]) -> Self {
        let mut out = Self::default();
        entries.iter().for_each(|e| out.add(e.category, 1));
        out
    }

    pub fn of_bodies(entries: &[ManifestEntry]) -> Self {
        let mut out = Self::default();
        let bodies: BTreeMap<&str, Category> = entries.iter().map(|e| (e.body_id.as_str(), e.category)).collect();
        bodies.values().for_each(|&c| out.add(c, 1));
        out
    }
}

/// Split bookkeeping. Per-split body counts are absent for the published
/// reference, which only reports body totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub seed: Option<u64>,
    pub ratio: f64,
    pub bodies: CategoryCounts,
    pub bodies_train: Option<CategoryCounts>,
    pub bodies_test: Option<CategoryCounts>,
    pub samples_train: CategoryCounts,
    pub samples_test: CategoryCounts,
}

/// The published LCID split.
pub const LCID_PUBLISHED_SPLIT: SplitSummary = SplitSummary {
    seed: None,
    ratio: 0.8,
    bodies: CategoryCounts { galaxy: 48, nsc: 23, total: 71 },
    bodies_train: None,
    bodies_test: None,
    samples_train: CategoryCounts { galaxy: 3310, nsc: 2908, total: 6218 },
    samples_test: CategoryCounts { galaxy: 852, nsc: 743, total: 1595 },
};

impl SplitResult {
    pub fn summary(&self) -> SplitSummary {
        let all: Vec<ManifestEntry> = self.train.iter().chain(&self.test).cloned().collect();
        SplitSummary {
            seed: Some(self.seed),
            ratio: self.ratio,
            bodies: CategoryCounts::of_bodies(&all),
            bodies_train: Some(CategoryCounts::of_bodies(&self.train)),
            bodies_test: Some(CategoryCounts::of_bodies(&self.test)),
            samples_train: CategoryCounts::of_samples(&self.train),
            samples_test: CategoryCounts::of_samples(&self.test),
        }
    }
}

fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl fmt::Display for SplitSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = |f: &mut fmt::Formatter<'_>, name: &str, c: &CategoryCounts| {
            writeln!(f, "{name:<20}{:>10}{:>10}{:>10}", thousands(c.galaxy), thousands(c.nsc), thousands(c.total))
        };
        writeln!(f, "{:<20}{:>10}{:>10}{:>10}", "", "Galaxies", "NSC", "Total")?;
        row(f, "Celestial bodies", &self.bodies)?;
        if let (Some(tr), Some(te)) = (&self.bodies_train, &self.bodies_test) {
            row(f, "Bodies (Training)", tr)?;
            row(f, "Bodies (Testing)", te)?;
        }
        row(f, "Samples (Training)", &self.samples_train)?;
        row(f, "Samples (Testing)", &self.samples_test)?;
        let total = CategoryCounts {
            galaxy: self.samples_train.galaxy + self.samples_test.galaxy,
            nsc: self.samples_train.nsc + self.samples_test.nsc,
            total: self.samples_train.total + self.samples_test.total,
        };
        row(f, "Samples (Total)", &total)
    }
}

/// Tabulated SED and system throughput on a shared wavelength grid.
///
/// Units: wavelength in m, `sed` as spectral irradiance in W·m⁻²·m⁻¹,
/// `throughput` dimensionless (mirror efficiency × filter transmission,
/// detector quantum efficiency folded in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputModel {
    lambda: Vec<f64>,
    sed: Vec<f64>,
    throughput: Vec<f64>,
}

impl ThroughputModel {
    pub fn new(lambda: Vec<f64>, sed: Vec<f64>, throughput: Vec<f64>) -> Result<Self> {
        let n = lambda.len();
        if n < 2 {
            return Err(DatasetError::Model(format!("grid has {n} points, need at least 2")));
        }
        if sed.len() != n || throughput.len() != n {
            return Err(DatasetError::Model("lambda, sed and throughput lengths differ".into()));
        }
        if lambda[0] <= 0.0 || lambda.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DatasetError::Model("wavelengths must be positive and strictly increasing".into()));
        }
        if let Some(v) = sed.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(DatasetError::Model(format!("negative or non-finite SED value {v}")));
        }
        if let Some(v) = throughput.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DatasetError::Model(format!("throughput {v} outside [0, 1]")));
        }
        Ok(Self { lambda, sed, throughput })
    }

    /// Flat SED `s0` and constant throughput `tau` on `n` evenly spaced
    /// wavelengths in `[lo, hi]`.
    pub fn flat(lo: f64, hi: f64, n: usize, s0: f64, tau: f64) -> Result<Self> {
        let step = (hi - lo) / (n.max(2) - 1) as f64;
        let lambda: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
        Self::new(lambda, vec![s0; n], vec![tau; n])
    }

    /// A broadband optical example: flat SED of 4e-7 W·m⁻²·m⁻¹ through a
    /// constant 0.3 throughput over 470 to 720 nm. With the default exposure
    /// this gives about 2e8 electrons.
    pub fn demo_broadband() -> Self {
        Self::flat(4.7e-7, 7.2e-7, 251, 4e-7, 0.3).expect("valid constants")
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn sed(&self) -> &[f64] {
        &self.sed
    }

    pub fn throughput(&self) -> &[f64] {
        &self.throughput
    }

    pub fn with_sed_scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.lambda.clone(), self.sed.iter().map(|s| s * k).collect(), self.throughput.clone())
    }
}

/// Noise-free electron count `t · A_eff · ∫ S(λ) τ(λ) λ/(hc) dλ`, trapezoid rule
/// on the model's grid.
pub fn electron_flux(model: &ThroughputModel, t: f64, a_eff: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(DatasetError::Exposure(format!("exposure time {t} < 0")));
    }
    if !(a_eff > 0.0) {
        return Err(DatasetError::Exposure(format!("effective area {a_eff} <= 0")));
    }
    let f = |i: usize| model.sed[i] * model.throughput[i] * model.lambda[i] / (PLANCK_H * LIGHT_C);
    let integral: f64 =
        (1..model.lambda.len()).map(|i| 0.5 * (f(i - 1) + f(i)) * (model.lambda[i] - model.lambda[i - 1])).sum();
    Ok(t * a_eff * integral)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureConfig {
    /// s
    pub t: f64,
    /// m²
    pub a_eff: f64,
    /// electrons per data number
    pub gain: f64,
    /// electrons
    pub read_noise_sigma: f64,
    /// electrons per pixel
    pub sky_level: f64,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        Self { t: 500.0, a_eff: 4.5, gain: 2.0, read_noise_sigma: 3.0, sky_level: 20.0 }
    }
}

impl ExposureConfig {
    /// The default exposure with time scaled by the frame area relative to
    /// the full CCD, keeping per-pixel brightness comparable on small frames.
    pub fn scaled_to(height: usize, width: usize) -> Self {
        let d = Self::default();
        Self { t: d.t * (height * width) as f64 / (CCD_ROWS * CCD_COLS) as f64, ..d }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t >= 0.0) {
            return Err(DatasetError::Exposure(format!("t = {} < 0", self.t)));
        }
        if !(self.a_eff > 0.0) {
            return Err(DatasetError::Exposure(format!("a_eff = {} <= 0", self.a_eff)));
        }
        if !(self.gain > 0.0) {
            return Err(DatasetError::Exposure(format!("gain = {} <= 0", self.gain)));
        }
        if !(self.read_noise_sigma >= 0.0) || !(self.sky_level >= 0.0) {
            return Err(DatasetError::Exposure("read noise and sky must be >= 0".into()));
        }
        Ok(())
    }
}

/// Procedural scene: a smooth elliptical galaxy, or a field of point
/// sources with an optional diffuse glow for a nebula/star cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneKind {
    /// Exponential profile `exp(-r / scale)` with elliptical radius.
    Galaxy { center: (f64, f64), scale_px: f64, axis_ratio: f64, angle_rad: f64 },
    /// `sources` Gaussian point sources inside a circle of `spread_px`, plus a
    /// Gaussian diffuse component holding `diffuse_fraction` of the light.
    Nsc { center: (f64, f64), sources: usize, spread_px: f64, psf_sigma_px: f64, diffuse_fraction: f64, diffuse_px: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTemplate {
    pub height: usize,
    pub width: usize,
    pub kind: SceneKind,
}

impl SceneTemplate {
    /// A randomized template of the given category, sized relative to the frame.
    pub fn random(category: Category, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let size = height.min(width) as f64;
        let center = (height as f64 * rng.random_range(0.3..0.7), width as f64 * rng.random_range(0.3..0.7));
        let kind = match category {
            Category::Galaxy => SceneKind::Galaxy {
                center,
                scale_px: size * rng.random_range(0.06..0.14),
                axis_ratio: rng.random_range(0.35..1.0),
                angle_rad: rng.random_range(0.0..std::f64::consts::PI),
            },
            Category::Nsc => SceneKind::Nsc {
                center,
                sources: rng.random_range(25..60),
                spread_px: size * rng.random_range(0.25..0.45),
                psf_sigma_px: (size / 400.0).max(0.7),
                diffuse_fraction: rng.random_range(0.0..0.3),
                diffuse_px: size * 0.2,
            },
        };
        Self { height, width, kind }
    }

    pub fn full_frame(category: Category, seed: u64) -> Self {
        Self::random(category, CCD_ROWS, CCD_COLS, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(DatasetError::Scene("empty frame".into()));
        }
        let bad = match &self.kind {
            SceneKind::Galaxy { scale_px, axis_ratio, .. } => !(*scale_px > 0.0) || !(*axis_ratio > 0.0 && *axis_ratio <= 1.0),
            SceneKind::Nsc { sources, spread_px, psf_sigma_px, diffuse_fraction, diffuse_px, .. } => {
                !(*psf_sigma_px > 0.0)
                    || !(*spread_px >= 0.0)
                    || !(0.0..=1.0).contains(diffuse_fraction)
                    || (*diffuse_fraction > 0.0 && !(*diffuse_px > 0.0))
                    || (*sources == 0 && *diffuse_fraction < 1.0)
            }
        };
        if bad {
            return Err(DatasetError::Scene(format!("invalid template parameters {:?}", self.kind)));
        }
        Ok(())
    }
}

/// Renders the template scaled so its pixels sum to `total` electrons.
/// Point-source positions come from `seed`.
pub fn render_scene(template: &SceneTemplate, total: f64, seed: u64) -> Result<Vec<f64>> {
    template.validate()?;
    let (h, w) = (template.height, template.width);
    let mut img = vec![0.0f64; h * w];
    match template.kind {
        SceneKind::Galaxy { center, scale_px, axis_ratio, angle_rad } => {
            let (s, c) = angle_rad.sin_cos();
            for r in 0..h {
                for col in 0..w {
                    let (dy, dx) = (r as f64 - center.0, col as f64 - center.1);
                    let (u, v) = (dx * c + dy * s, (-dx * s + dy * c) / axis_ratio);
                    img[r * w + col] = (-(u * u + v * v).sqrt() / scale_px).exp();
                }
            }
        }
        SceneKind::Nsc { center, sources, spread_px, psf_sigma_px, diffuse_fraction, diffuse_px } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce7e);
            let stamp = |img: &mut [f64], cy: f64, cx: f64, sigma: f64, weight: f64| {
                let reach = (4.0 * sigma).ceil() as isize;
                let (r0, c0) = (cy.round() as isize, cx.round() as isize);
                let mut cells = Vec::new();
                let mut sum = 0.0;
                for r in (r0 - reach).max(0)..(r0 + reach + 1).min(h as isize) {
                    for col in (c0 - reach).max(0)..(c0 + reach + 1).min(w as isize) {
                        let d2 = (r as f64 - cy).powi(2) + (col as f64 - cx).powi(2);
                        let v = (-d2 / (2.0 * sigma * sigma)).exp();
                        cells.push((r as usize * w + col as usize, v));
                        sum += v;
                    }
                }
                if sum > 0.0 {
                    cells.into_iter().for_each(|(i, v)| img[i] += weight * v / sum);
                }
            };
            let point_share = 1.0 - diffuse_fraction;
            for _ in 0..sources {
                let radius = spread_px * rng.random::<f64>().sqrt();
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let cy = (center.0 + radius * theta.sin()).clamp(0.0, (h - 1) as f64);
                let cx = (center.1 + radius * theta.cos()).clamp(0.0, (w - 1) as f64);
                let brightness = rng.random_range(0.2..1.0);
                stamp(&mut img, cy, cx, psf_sigma_px, point_share * brightness);
            }
            let points: f64 = img.iter().sum();
            if points > 0.0 {
                img.iter_mut().for_each(|v| *v *= point_share / points);
            }
            if diffuse_fraction > 0.0 {
                let mut glow = vec![0.0f64; h * w];
                for r in 0..h {
                    for col in 0..w {
                        let d2 = (r as f64 - center.0).powi(2) + (col as f64 - center.1).powi(2);
                        glow[r * w + col] = (-d2 / (2.0 * diffuse_px * diffuse_px)).exp();
                    }
                }
                let g: f64 = glow.iter().sum();
                img.iter_mut().zip(&glow).for_each(|(v, gv)| *v += diffuse_fraction * gv / g);
            }
        }
    }
    let sum: f64 = img.iter().sum();
    if !(sum > 0.0) {
        return Err(DatasetError::Scene("template renders no light inside the frame".into()));
    }
    img.iter_mut().for_each(|v| *v *= total / sum);
    Ok(img)
}

/// A synthetic frame in data numbers with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pixels: Grid,
    pub category: Category,
    /// Noise-free electrons from the flux model.
    pub electrons: f64,
    /// Fraction of pixels clipped at full scale.
    pub saturated_fraction: f64,
}

impl Sample {
    pub fn label(&self) -> usize {
        self.category.label()
    }
}

/// Renders `template`, scales it to `electron_flux`, adds sky, Poisson shot
/// noise and Gaussian read noise, converts to data numbers by `gain`, rounds,
/// and clips to `[0, 65535]`. Deterministic per seed.
pub fn synthesize_sample(
    category: Category,
    template: &SceneTemplate,
    exposure: &ExposureConfig,
    model: &ThroughputModel,
    seed: u64,
) -> Result<Sample> {
    exposure.validate()?;
    let electrons = electron_flux(model, exposure.t, exposure.a_eff)?;
    let scene = render_scene(template, electrons, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let read = Normal::new(0.0, exposure.read_noise_sigma).map_err(|e| DatasetError::Exposure(e.to_string()))?;
    let mut saturated = 0usize;
    let data: Vec<f32> = scene
        .iter()
        .map(|&e| {
            let lambda = e + exposure.sky_level;
            let shot = if lambda > 0.0 {
                Poisson::new(lambda).map(|p| p.sample(&mut rng)).unwrap_or(lambda)
            } else {
                0.0
            };
            let noisy = shot + if exposure.read_noise_sigma > 0.0 { read.sample(&mut rng) } else { 0.0 };
            let dn = (noisy / exposure.gain).round().clamp(0.0, DN_MAX as f64) + 0.0;
            if dn >= DN_MAX as f64 {
                saturated += 1;
            }
            dn as f32
        })
        .collect();
    let fraction = saturated as f64 / data.len() as f64;
    if fraction > 0.5 {
        return Err(DatasetError::Saturated { fraction: 100.0 * fraction });
    }
    Ok(Sample {
        pixels: Grid::new(template.height, template.width, data),
        category,
        electrons,
        saturated_fraction: fraction,
    })
}

/// `n_per_class` synthetic samples per category on an `h×w` frame, galaxies
/// first, each with its own template and noise seed derived from `seed`.
pub fn synthetic_set(n_per_class: usize, height: usize, width: usize, seed: u64) -> Result<Vec<Sample>> {
    let model = ThroughputModel::demo_broadband();
    let exposure = ExposureConfig::scaled_to(height, width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * n_per_class);
    for category in Category::ALL {
        for _ in 0..n_per_class {
            let template = SceneTemplate::random(category, height, width, &mut rng);
            out.push(synthesize_sample(category, &template, &exposure, &model, rng.random())?);
        }
    }
    Ok(out)
}

/// Copies or downloads one source into `dest`.
pub trait Fetcher: Sync {
    /// Whether this fetcher understands `source`.
    fn handles(&self, source: &str) -> bool;
    fn fetch(&self, source: &str, dest: &Path) -> std::result::Result<u64, String>;
}

/// Plain filesystem paths and `file://` URLs.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalFetcher;

impl LocalFetcher {
    fn local_path(source: &str) -> &str {
        source.strip_prefix("file://").unwrap_or(source)
    }
}

impl Fetcher for LocalFetcher {
    fn handles(&self, source: &str) -> bool {
        source.starts_with("file://") || !source.contains("://")
    }

    fn fetch(&self, source: &str, dest: &Path) -> std::result::Result<u64, String> {
        fs::copy(Self::local_path(source), dest).map_err(|e| format!("{source}: {e}"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FetchFailure {
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FetchReport {
    pub fetched: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<FetchFailure>,
}

impl FetchReport {
    pub fn is_success(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Cache file name for a manifest source (its last path segment).
pub fn cache_name(source: &str) -> String {
    let trimmed = source.split(['?', '#']).next().unwrap_or(source);
    trimmed.rsplit(['/', '\\']).next().filter(|s| !s.is_empty()).unwrap_or("download").to_string()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

enum Outcome {
    Fetched,
    Skipped,
    Failed(String),
}

/// Brings every distinct manifest file into `dest_dir` with up to `workers`
/// concurrent transfers. Files already present (and matching their checksum,
/// when one is given) are skipped. The report lists sources in manifest order.
pub fn fetch_manifest_files(
    manifest: &[ManifestEntry],
    dest_dir: &Path,
    fetchers: &[&dyn Fetcher],
    workers: usize,
) -> Result<FetchReport> {
    fs::create_dir_all(dest_dir)?;
    let mut jobs: Vec<(&str, Option<&str>)> = Vec::new();
    let mut seen = BTreeSet::new();
    for e in manifest {
        if seen.insert(e.path.as_str()) {
            jobs.push((&e.path, e.sha256.as_deref()));
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Outcome>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let run = |source: &str, sha: Option<&str>| -> Outcome {
        let dest: PathBuf = dest_dir.join(cache_name(source));
        let verify = |p: &Path| match sha {
            None => Ok(()),
            Some(want) => match file_sha256(p) {
                Ok(got) if got.eq_ignore_ascii_case(want) => Ok(()),
                Ok(got) => Err(format!("checksum mismatch: expected {want}, got {got}")),
                Err(e) => Err(e.to_string()),
            },
        };
        if dest.exists() && verify(&dest).is_ok() {
            return Outcome::Skipped;
        }
        let Some(fetcher) = fetchers.iter().find(|f| f.handles(source)) else {
            return Outcome::Failed("no fetcher for this source".into());
        };
        let partial = dest.with_extension("part");
        if let Err(e) = fetcher.fetch(source, &partial) {
            let _ = fs::remove_file(&partial);
            return Outcome::Failed(e);
        }
        if let Err(e) = verify(&partial) {
            let _ = fs::remove_file(&partial);
            return Outcome::Failed(e);
        }
        match fs::rename(&partial, &dest) {
            Ok(()) => Outcome::Fetched,
            Err(e) => Outcome::Failed(e.to_string()),
        }
    };
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(source, sha)) = jobs.get(i) else { break };
                let outcome = run(source, sha);
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    let mut report = FetchReport::default();
    for ((source, _), outcome) in jobs.iter().zip(results.into_inner().unwrap()) {
        match outcome.expect("every job ran") {
            Outcome::Fetched => report.fetched.push(source.to_string()),
            Outcome::Skipped => report.skipped.push(source.to_string()),
            Outcome::Failed(reason) => report.failed.push(FetchFailure { source: source.to_string(), reason }),
        }
    }
    Ok(report)
}
