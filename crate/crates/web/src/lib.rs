//! Browser bindings. Each export has a plain-Rust twin returning
//! `Result<_, String>` so it can be tested natively.

use celestine::dataset::{synthesize_sample, Category, ExposureConfig, SceneTemplate, ThroughputModel};
use celestine::netspec::{
    compare_with_published, count_params, estimate_memory, gib, mib, propagate_shapes, NetSpec, HR_CELESTIALNET_TINY_TOML,
    HR_CELESTIALNET_TOML,
};
use celestine::preprocess::{Chip, DetectorGeometry, Grid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest frame the page may request; keeps a browser tab responsive.
pub const MAX_PIXELS: usize = 1024 * 2048;

/// A rendered synthetic exposure.
#[wasm_bindgen]
pub struct SyntheticImage {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    stats: String,
}

#[wasm_bindgen]
impl SyntheticImage {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Display pixels, RGBA, row-major.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// Electron budget, DN range and saturation as JSON.
    pub fn stats(&self) -> String {
        self.stats.clone()
    }
}

/// Asinh stretch of DN values to 8-bit grey.
pub fn stretch_rgba(grid: &Grid) -> Vec<u8> {
    let (lo, hi) = grid.min_max();
    let span = (hi - lo).max(1.0);
    let soft = 0.02 * span;
    let norm = (span / soft).asinh();
    let mut out = Vec::with_capacity(grid.data.len() * 4);
    for &v in &grid.data {
        let g = (((v - lo) / soft).asinh() / norm * 255.0).round().clamp(0.0, 255.0) as u8;
        out.extend_from_slice(&[g, g, g, 255]);
    }
    out
}

pub fn synthesize_native(category: &str, height: usize, width: usize, exposure_time: f64, sed_scale: f64, seed: u64) -> Result<SyntheticImage, String> {
    let category = Category::ALL
        .into_iter()
        .find(|c| c.to_string() == category)
        .ok_or_else(|| format!("unknown category `{category}` (galaxy or nsc)"))?;
    if height == 0 || width == 0 || height * width > MAX_PIXELS {
        return Err(format!("frame must have between 1 and {MAX_PIXELS} pixels"));
    }
    let exposure = ExposureConfig { t: exposure_time, ..ExposureConfig::default() };
    let model = ThroughputModel::demo_broadband().with_sed_scaled(sed_scale).map_err(|e| e.to_string())?;
    let template = SceneTemplate::random(category, height, width, &mut ChaCha8Rng::seed_from_u64(seed));
    let sample = synthesize_sample(category, &template, &exposure, &model, seed).map_err(|e| e.to_string())?;
    let (lo, hi) = sample.pixels.min_max();
    let stats = json!({
        "category": category,
        "electrons": sample.electrons,
        "dn_min": lo,
        "dn_max": hi,
        "saturated_fraction": sample.saturated_fraction,
        "exposure": exposure,
        "template": template,
    });
    Ok(SyntheticImage { width, height, rgba: stretch_rgba(&sample.pixels), stats: stats.to_string() })
}

/// Synthesizes one exposure of `category` ("galaxy" or "nsc").
#[wasm_bindgen]
pub fn synthesize(category: &str, height: usize, width: usize, exposure_time: f64, sed_scale: f64, seed: u64) -> Result<SyntheticImage, JsError> {
    synthesize_native(category, height, width, exposure_time, sed_scale, seed).map_err(|e| JsError::new(&e))
}

pub fn crop_layout_native(chip: &str) -> Result<String, String> {
    let chip = [Chip::Wfc1, Chip::Wfc2, Chip::Uvis1, Chip::Uvis2]
        .into_iter()
        .find(|c| c.to_string().eq_ignore_ascii_case(chip))
        .ok_or_else(|| format!("unknown chip `{chip}` (WFC1, WFC2, UVIS1, UVIS2)"))?;
    let g = DetectorGeometry::of(chip);
    Ok(json!({ "geometry": g, "regions": g.regions() }).to_string())
}

/// Raw-frame layout of a chip: dimensions and every removed or kept rectangle.
#[wasm_bindgen]
pub fn crop_layout(chip: &str) -> Result<String, JsError> {
    crop_layout_native(chip).map_err(|e| JsError::new(&e))
}

pub fn analyze_native(spec_toml: &str, batch: usize) -> Result<String, String> {
    let spec = NetSpec::from_toml(spec_toml).map_err(|e| e.to_string())?;
    spec.validate().map_err(|e| e.to_string())?;
    let batch = batch.max(1);
    let shapes = propagate_shapes(&spec).map_err(|e| e.to_string())?;
    let params = count_params(&spec, false).map_err(|e| e.to_string())?;
    let with_bn = count_params(&spec, true).map_err(|e| e.to_string())?;
    let resources = estimate_memory(&spec, batch).map_err(|e| e.to_string())?;
    let comparison = if spec.name == "HR-CelestialNet" { Some(compare_with_published(&spec).map_err(|e| e.to_string())?) } else { None };
    let layers: Vec<_> = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| json!({ "kind": l.kind(), "output": shapes.outputs[i], "params": params.per_layer[i] }))
        .collect();
    Ok(json!({
        "name": spec.name,
        "input": spec.input,
        "layers": layers,
        "params": params.total,
        "params_with_batchnorm": with_bn.total,
        "input_mb": mib(resources.input_bytes),
        "params_mb": mib(resources.param_bytes),
        "estimated_total_gb": gib(resources.estimated_total_bytes),
        "batch": batch,
        "published_comparison": comparison,
    })
    .to_string())
}

/// Shapes, parameter counts and memory estimate of a TOML network spec.
#[wasm_bindgen]
pub fn analyze(spec_toml: &str, batch: usize) -> Result<String, JsError> {
    analyze_native(spec_toml, batch).map_err(|e| JsError::new(&e))
}

/// The shipped spec text, full-size or tiny.
#[wasm_bindgen]
pub fn default_spec(tiny: bool) -> String {
    if tiny { HR_CELESTIALNET_TINY_TOML } else { HR_CELESTIALNET_TOML }.to_string()
}
