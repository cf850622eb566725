//! Sample store: a directory of single-image FITS files indexed by `samples.csv`.

use std::path::Path;

use anyhow::{bail, Context};
use celestine::dataset::Category;
use celestine::fits::{extract_image, parse_fits, write_fits, CardValue, FitsCard, FitsFile, ImageHdu};
use celestine::preprocess::{to_float_normalized, Grid};
use celestine::runtime::LabeledData;
use serde::{Deserialize, Serialize};

pub const INDEX: &str = "samples.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRow {
    pub sample_id: String,
    pub body_id: String,
    pub category: Category,
    pub file: String,
    pub height: usize,
    pub width: usize,
}

/// File-name-safe form of an identifier.
pub fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

/// Writes `grid` (DN, rounded to integers) as `<sample_id>.fits` in `dir`.
pub fn write_sample(dir: &Path, sample_id: &str, body_id: &str, category: Category, grid: &Grid) -> anyhow::Result<StoreRow> {
    let file = format!("{}.fits", sanitize(sample_id));
    let pixels = grid.data.iter().map(|v| v.round().clamp(0.0, 65535.0)).collect();
    let mut image = ImageHdu::new_unsigned(grid.width, grid.height, pixels);
    image.cards.push(FitsCard::new("OBJECT", CardValue::Str(body_id.into())));
    image.cards.push(FitsCard::new("CATEGORY", CardValue::Str(category.to_string())));
    let mut fits = FitsFile::default();
    fits.push_image(image);
    std::fs::write(dir.join(&file), write_fits(&fits)?).with_context(|| format!("writing {file}"))?;
    Ok(StoreRow {
        sample_id: sample_id.into(),
        body_id: body_id.into(),
        category,
        file,
        height: grid.height,
        width: grid.width,
    })
}

pub fn write_index(dir: &Path, rows: &[StoreRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(dir.join(INDEX))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_index(dir: &Path) -> anyhow::Result<Vec<StoreRow>> {
    let path = dir.join(INDEX);
    let mut r = csv::Reader::from_path(&path).map_err(|e| crate::usage(format!("{}: {e}", path.display())))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<StoreRow>, _>>()
        .map_err(|e| crate::usage(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(crate::usage(format!("{} lists no samples", path.display())));
    }
    Ok(rows)
}

pub fn load_grid(dir: &Path, row: &StoreRow) -> anyhow::Result<Grid> {
    let bytes = std::fs::read(dir.join(&row.file)).with_context(|| format!("reading {}", row.file))?;
    let image = extract_image(&parse_fits(&bytes)?, 1)?;
    if (image.height, image.width) != (row.height, row.width) {
        bail!("{}: index says {}x{}, file holds {}x{}", row.file, row.height, row.width, image.height, image.width);
    }
    Ok(Grid::new(image.height, image.width, image.pixels))
}

/// Loads a store as normalized network input, checking every sample against `input`.
pub fn load_labeled(dir: &Path, input: [usize; 3]) -> anyhow::Result<(Vec<StoreRow>, LabeledData<f32>)> {
    let rows = read_index(dir)?;
    if input[0] != 1 {
        return Err(crate::usage(format!("stores hold single-channel images; the network expects {} channels", input[0])));
    }
    let mut data = LabeledData::new(input);
    for row in &rows {
        if [row.height, row.width] != [input[1], input[2]] {
            return Err(crate::usage(format!(
                "sample {} is {}x{} but the network input is {}x{}; pick a matching --spec",
                row.sample_id, row.height, row.width, input[1], input[2]
            )));
        }
        let grid = to_float_normalized(&load_grid(dir, row)?)?;
        data.push(&grid.data, row.category.label())?;
    }
    Ok((rows, data))
}
