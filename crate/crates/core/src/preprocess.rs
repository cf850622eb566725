//! Raw-frame geometry: cropping ACS/WFC and WFC3/UVIS frames down to the
//! uniform 2048x4096 CCD image, bilinear resizing, and input scaling.
//!
//! Row 0 is the first row of the FITS data array. "Bottom" rows are the
//! highest row indices, "top" rows the lowest.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::fits::{CardValue, FitsCard, FitsFile, Hdu, ImageHdu, RawHdu};

pub const CCD_ROWS: usize = 2048;
pub const CCD_COLS: usize = 4096;
pub const RESIZE_ROWS: usize = 224;
pub const RESIZE_COLS: usize = 448;
pub const DN_MAX: f32 = 65535.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PreprocessError {
    #[error("{chip} expects a {want_w}x{want_h} raw frame, got {got_w}x{got_h}")]
    DimensionMismatch { chip: Chip, want_w: usize, want_h: usize, got_w: usize, got_h: usize },
    #[error("chip {0} does not belong to {1}")]
    WrongInstrument(Chip, Instrument),
    #[error("zero-sized image ({0}x{1})")]
    Empty(usize, usize),
    #[error("pixel value {value} at index {index} outside [0, 65535]")]
    OutOfRange { index: usize, value: f32 },
    #[error("cannot determine chip for HDU {hdu_index} of {instrument}")]
    UnknownChip { instrument: Instrument, hdu_index: usize },
}

/// Single-channel real image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width, "grid data does not match {height}x{width}");
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instrument {
    #[serde(rename = "ACS_WFC")]
    AcsWfc,
    #[serde(rename = "WFC3_UVIS")]
    Wfc3Uvis,
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Instrument::AcsWfc => "ACS_WFC",
            Instrument::Wfc3Uvis => "WFC3_UVIS",
        })
    }
}

impl Instrument {
    pub fn chips(self) -> [Chip; 2] {
        match self {
            Instrument::AcsWfc => [Chip::Wfc1, Chip::Wfc2],
            Instrument::Wfc3Uvis => [Chip::Uvis1, Chip::Uvis2],
        }
    }

    /// Chip `n` (1 or 2) of this instrument.
    pub fn chip(self, n: i64) -> Option<Chip> {
        match n {
            1 => Some(self.chips()[0]),
            2 => Some(self.chips()[1]),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Chip {
    #[serde(rename = "WFC1")]
    Wfc1,
    #[serde(rename = "WFC2")]
    Wfc2,
    #[serde(rename = "UVIS1")]
    Uvis1,
    #[serde(rename = "UVIS2")]
    Uvis2,
}

impl fmt::Display for Chip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Chip::Wfc1 => "WFC1",
            Chip::Wfc2 => "WFC2",
            Chip::Uvis1 => "UVIS1",
            Chip::Uvis2 => "UVIS2",
        })
    }
}

impl Chip {
    pub fn instrument(self) -> Instrument {
        match self {
            Chip::Wfc1 | Chip::Wfc2 => Instrument::AcsWfc,
            Chip::Uvis1 | Chip::Uvis2 => Instrument::Wfc3Uvis,
        }
    }

    pub fn number(self) -> i64 {
        match self {
            Chip::Wfc1 | Chip::Uvis1 => 1,
            Chip::Wfc2 | Chip::Uvis2 => 2,
        }
    }

    /// Resolves the chip of a raw science extension.
    ///
    /// A `CCDCHIP` header keyword wins when present. Otherwise the raw-file
    /// convention applies: the first science extension (HDU 1) is chip 2 and
    /// the second (HDU 4) is chip 1.
    pub fn resolve(instrument: Instrument, image: &ImageHdu, hdu_index: usize) -> Result<Chip, PreprocessError> {
        if let Some(n) = image.keyword("CCDCHIP").and_then(CardValue::as_i64) {
            return instrument.chip(n).ok_or(PreprocessError::UnknownChip { instrument, hdu_index });
        }
        match hdu_index {
            1 => Ok(instrument.chips()[1]),
            4 => Ok(instrument.chips()[0]),
            _ => Err(PreprocessError::UnknownChip { instrument, hdu_index }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OverscanPosition {
    Top,
    Bottom,
}

/// Raw-frame layout of one chip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DetectorGeometry {
    pub instrument: Instrument,
    pub chip: Chip,
    pub raw_width: usize,
    pub raw_height: usize,
    /// Prescan (ACS) or physical overscan (WFC3) columns on each side.
    pub prescan_cols: usize,
    pub virtual_overscan_rows: usize,
    pub virtual_overscan_position: OverscanPosition,
    /// Central virtual-overscan column band between the two amplifier halves.
    pub mid_overscan_cols: usize,
    /// Extra science rows removed on the overscan side to reach 2048 rows.
    pub trim_rows: usize,
}

impl DetectorGeometry {
    pub fn of(chip: Chip) -> Self {
        let position = match chip.number() {
            1 => OverscanPosition::Bottom,
            _ => OverscanPosition::Top,
        };
        match chip.instrument() {
            Instrument::AcsWfc => Self {
                instrument: Instrument::AcsWfc,
                chip,
                raw_width: 4144,
                raw_height: 2068,
                prescan_cols: 24,
                virtual_overscan_rows: 20,
                virtual_overscan_position: position,
                mid_overscan_cols: 0,
                trim_rows: 0,
            },
            Instrument::Wfc3Uvis => Self {
                instrument: Instrument::Wfc3Uvis,
                chip,
                raw_width: 4206,
                raw_height: 2070,
                prescan_cols: 25,
                virtual_overscan_rows: 19,
                virtual_overscan_position: position,
                mid_overscan_cols: 60,
                trim_rows: 3,
            },
        }
    }

    /// Width of one amplifier half of the science area.
    fn half_cols(&self) -> usize {
        (self.raw_width - 2 * self.prescan_cols - self.mid_overscan_cols) / 2
    }

    /// Raw row range kept by the crop, half-open.
    pub fn kept_rows(&self) -> (usize, usize) {
        let removed = self.virtual_overscan_rows + self.trim_rows;
        match self.virtual_overscan_position {
            OverscanPosition::Bottom => (0, self.raw_height - removed),
            OverscanPosition::Top => (removed, self.raw_height),
        }
    }

    /// Raw column ranges kept by the crop, half-open, in output order.
    pub fn kept_cols(&self) -> Vec<(usize, usize)> {
        let left = self.prescan_cols;
        if self.mid_overscan_cols == 0 {
            vec![(left, self.raw_width - self.prescan_cols)]
        } else {
            let half = self.half_cols();
            let right = left + half + self.mid_overscan_cols;
            vec![(left, left + half), (right, right + half)]
        }
    }

    /// Classifies a raw pixel position.
    pub fn region_of(&self, row: usize, col: usize) -> Region {
        if col < self.prescan_cols || col >= self.raw_width - self.prescan_cols {
            return Region::Prescan;
        }
        let vos = self.virtual_overscan_rows;
        let in_vos = match self.virtual_overscan_position {
            OverscanPosition::Bottom => row >= self.raw_height - vos,
            OverscanPosition::Top => row < vos,
        };
        if in_vos {
            return Region::VirtualOverscan;
        }
        if self.mid_overscan_cols > 0 {
            let start = self.prescan_cols + self.half_cols();
            if (start..start + self.mid_overscan_cols).contains(&col) {
                return Region::MidOverscan;
            }
        }
        let (r0, r1) = self.kept_rows();
        if row < r0 || row >= r1 {
            return Region::TrimmedScience;
        }
        Region::Science
    }

    /// Every removed area as a rectangle, plus the kept science blocks.
    pub fn regions(&self) -> Vec<RegionRect> {
        let mut out = Vec::new();
        let h = self.raw_height;
        let w = self.raw_width;
        let p = self.prescan_cols;
        out.push(RegionRect { region: Region::Prescan, rows: (0, h), cols: (0, p) });
        out.push(RegionRect { region: Region::Prescan, rows: (0, h), cols: (w - p, w) });
        let vos = self.virtual_overscan_rows;
        let (vos_rows, trim_rows) = match self.virtual_overscan_position {
            OverscanPosition::Bottom => ((h - vos, h), (h - vos - self.trim_rows, h - vos)),
            OverscanPosition::Top => ((0, vos), (vos, vos + self.trim_rows)),
        };
        out.push(RegionRect { region: Region::VirtualOverscan, rows: vos_rows, cols: (p, w - p) });
        let (r0, r1) = self.kept_rows();
        if self.mid_overscan_cols > 0 {
            let start = p + self.half_cols();
            let rows = match self.virtual_overscan_position {
                OverscanPosition::Bottom => (0, h - vos),
                OverscanPosition::Top => (vos, h),
            };
            out.push(RegionRect { region: Region::MidOverscan, rows, cols: (start, start + self.mid_overscan_cols) });
        }
        if self.trim_rows > 0 {
            for cols in self.kept_cols() {
                out.push(RegionRect { region: Region::TrimmedScience, rows: trim_rows, cols });
            }
        }
        for cols in self.kept_cols() {
            out.push(RegionRect { region: Region::Science, rows: (r0, r1), cols });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Science,
    Prescan,
    VirtualOverscan,
    MidOverscan,
    TrimmedScience,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegionRect {
    pub region: Region,
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

fn check_dims(raw: &ImageHdu, g: &DetectorGeometry) -> Result<(), PreprocessError> {
    if raw.width != g.raw_width || raw.height != g.raw_height {
        return Err(PreprocessError::DimensionMismatch {
            chip: g.chip,
            want_w: g.raw_width,
            want_h: g.raw_height,
            got_w: raw.width,
            got_h: raw.height,
        });
    }
    Ok(())
}

/// Crops a raw frame to the 2048x4096 CCD image of `chip`.
pub fn crop_raw(raw: &ImageHdu, chip: Chip) -> Result<Grid, PreprocessError> {
    let g = DetectorGeometry::of(chip);
    check_dims(raw, &g)?;
    let (r0, r1) = g.kept_rows();
    let cols = g.kept_cols();
    let mut data = Vec::with_capacity(CCD_ROWS * CCD_COLS);
    for r in r0..r1 {
        let row = &raw.pixels[r * raw.width..(r + 1) * raw.width];
        for &(c0, c1) in &cols {
            data.extend_from_slice(&row[c0..c1]);
        }
    }
    debug_assert_eq!(data.len(), CCD_ROWS * CCD_COLS);
    Ok(Grid::new(r1 - r0, data.len() / (r1 - r0), data))
}

pub fn crop_acs_wfc(raw: &ImageHdu, chip: Chip) -> Result<Grid, PreprocessError> {
    if chip.instrument() != Instrument::AcsWfc {
        return Err(PreprocessError::WrongInstrument(chip, Instrument::AcsWfc));
    }
    crop_raw(raw, chip)
}

pub fn crop_wfc3_uvis(raw: &ImageHdu, chip: Chip) -> Result<Grid, PreprocessError> {
    if chip.instrument() != Instrument::Wfc3Uvis {
        return Err(PreprocessError::WrongInstrument(chip, Instrument::Wfc3Uvis));
    }
    crop_raw(raw, chip)
}

/// Bilinear resize with half-pixel-center mapping,
/// `src = (dst + 0.5) * in / out - 0.5`, clamped to the image.
pub fn resize_bilinear(img: &Grid, out_h: usize, out_w: usize) -> Result<Grid, PreprocessError> {
    if img.height == 0 || img.width == 0 {
        return Err(PreprocessError::Empty(img.height, img.width));
    }
    if out_h == 0 || out_w == 0 {
        return Err(PreprocessError::Empty(out_h, out_w));
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = taps(img.height, out_h);
    let xs = taps(img.width, out_w);
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        let (a, b) = (img.row(y0), img.row(y1));
        for &(x0, x1, fx) in &xs {
            let top = a[x0] as f64 * (1.0 - fx) + a[x1] as f64 * fx;
            let bot = b[x0] as f64 * (1.0 - fx) + b[x1] as f64 * fx;
            data.push((top * (1.0 - fy) + bot * fy) as f32);
        }
    }
    Ok(Grid::new(out_h, out_w, data))
}

/// Maps data numbers in [0, 65535] to [0, 1].
pub fn to_float_normalized(img: &Grid) -> Result<Grid, PreprocessError> {
    if let Some((index, &value)) = img.data.iter().enumerate().find(|(_, v)| !(0.0..=DN_MAX).contains(*v)) {
        return Err(PreprocessError::OutOfRange { index, value });
    }
    Ok(Grid::new(img.height, img.width, img.data.iter().map(|&v| (v as f64 / 65535.0) as f32).collect()))
}

/// Builds a raw frame for `chip` by evaluating `fill` at every raw pixel.
pub fn raw_frame(chip: Chip, fill: impl Fn(Region, usize, usize) -> f32) -> ImageHdu {
    let g = DetectorGeometry::of(chip);
    let mut pixels = Vec::with_capacity(g.raw_width * g.raw_height);
    for r in 0..g.raw_height {
        for c in 0..g.raw_width {
            pixels.push(fill(g.region_of(r, c), r, c));
        }
    }
    let mut img = ImageHdu::new_unsigned(g.raw_width, g.raw_height, pixels);
    img.cards.push(FitsCard::new("EXTNAME", CardValue::Str("SCI".into())));
    img.cards.push(FitsCard::new("CCDCHIP", CardValue::Int(chip.number())).with_comment("CCD chip"));
    img
}

/// Embeds a 2048x4096 science image into a raw frame whose non-science
/// regions carry `bias`; `crop_raw` recovers `science` exactly.
pub fn embed_science(chip: Chip, science: &Grid, bias: f32) -> ImageHdu {
    assert_eq!((science.height, science.width), (CCD_ROWS, CCD_COLS));
    let g = DetectorGeometry::of(chip);
    let (r0, _) = g.kept_rows();
    let cols = g.kept_cols();
    raw_frame(chip, |region, r, c| {
        if region != Region::Science {
            return bias;
        }
        let mut out_c = 0;
        for &(c0, c1) in &cols {
            if (c0..c1).contains(&c) {
                return science.get(r - r0, out_c + c - c0);
            }
            out_c += c1 - c0;
        }
        bias
    })
}

fn empty_extension(extname: &str) -> Hdu {
    Hdu::Raw(RawHdu {
        cards: vec![
            FitsCard::new("XTENSION", CardValue::Str("IMAGE".into())),
            FitsCard::new("BITPIX", CardValue::Int(16)),
            FitsCard::new("NAXIS", CardValue::Int(0)),
            FitsCard::new("PCOUNT", CardValue::Int(0)),
            FitsCard::new("GCOUNT", CardValue::Int(1)),
            FitsCard::new("EXTNAME", CardValue::Str(extname.into())),
        ],
        data: Vec::new(),
    })
}

/// Raw multi-extension file in the SCI/ERR/DQ x 2 layout: science images at
/// HDU 1 (chip 2) and HDU 4 (chip 1), data-less ERR/DQ extensions between.
pub fn raw_fits_file(instrument: Instrument, chip1: ImageHdu, chip2: ImageHdu) -> FitsFile {
    let mut primary = RawHdu::empty_primary();
    primary.cards.push(FitsCard::new(
        "INSTRUME",
        CardValue::Str(match instrument {
            Instrument::AcsWfc => "ACS".into(),
            Instrument::Wfc3Uvis => "WFC3".into(),
        }),
    ));
    FitsFile {
        primary,
        extensions: vec![
            Hdu::Image(chip2),
            empty_extension("ERR"),
            empty_extension("DQ"),
            Hdu::Image(chip1),
            empty_extension("ERR"),
            empty_extension("DQ"),
        ],
    }
}
