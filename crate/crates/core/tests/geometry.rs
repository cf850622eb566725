//! Sentinel and ramp fixtures for the raw-frame crops.

use celestine::fits::{extract_image, parse_fits, write_fits};
use celestine::preprocess::*;

const SENTINEL: f32 = 65535.0;

/// Expected raw (row, col) of output pixel (i, j), written out from the
/// detector descriptions independently of `DetectorGeometry`.
fn oracle(chip: Chip, i: usize, j: usize) -> (usize, usize) {
    match chip {
        Chip::Wfc1 => (i, j + 24),
        Chip::Wfc2 => (i + 20, j + 24),
        Chip::Uvis1 => (i, if j < 2048 { j + 25 } else { j + 25 + 60 }),
        Chip::Uvis2 => (i + 19 + 3, if j < 2048 { j + 25 } else { j + 25 + 60 }),
    }
}

fn crop(chip: Chip, raw: &celestine::fits::ImageHdu) -> Grid {
    match chip.instrument() {
        Instrument::AcsWfc => crop_acs_wfc(raw, chip).unwrap(),
        Instrument::Wfc3Uvis => crop_wfc3_uvis(raw, chip).unwrap(),
    }
}

const CHIPS: [Chip; 4] = [Chip::Wfc1, Chip::Wfc2, Chip::Uvis1, Chip::Uvis2];

#[test]
fn raw_dimensions() {
    for (chip, w, h) in [(Chip::Wfc1, 4144, 2068), (Chip::Wfc2, 4144, 2068), (Chip::Uvis1, 4206, 2070), (Chip::Uvis2, 4206, 2070)] {
        let g = DetectorGeometry::of(chip);
        assert_eq!((g.raw_width, g.raw_height), (w, h), "{chip}");
    }
}

#[test]
fn no_sentinel_survives() {
    for chip in CHIPS {
        let raw = raw_frame(chip, |region, _, _| if region == Region::Science { 7.0 } else { SENTINEL });
        let out = crop(chip, &raw);
        assert_eq!((out.height, out.width), (CCD_ROWS, CCD_COLS), "{chip}");
        assert!(out.data.iter().all(|&v| v == 7.0), "{chip}: sentinel leaked into the crop");
    }
}

#[test]
fn sentinels_fill_exactly_the_removed_area() {
    for chip in CHIPS {
        let g = DetectorGeometry::of(chip);
        let raw = raw_frame(chip, |region, _, _| if region == Region::Science { 0.0 } else { SENTINEL });
        let removed = raw.pixels.iter().filter(|&&v| v == SENTINEL).count();
        assert_eq!(removed, g.raw_width * g.raw_height - CCD_ROWS * CCD_COLS, "{chip}");
    }
}

#[test]
fn row_and_column_ramps_follow_chip_offsets() {
    for chip in CHIPS {
        let rows = crop(chip, &raw_frame(chip, |_, r, _| r as f32));
        let cols = crop(chip, &raw_frame(chip, |_, _, c| c as f32));
        for i in [0, 1, 1023, 2047] {
            for j in [0, 1, 2047, 2048, 4095] {
                let (r, c) = oracle(chip, i, j);
                assert_eq!(rows.get(i, j), r as f32, "{chip} row at ({i},{j})");
                assert_eq!(cols.get(i, j), c as f32, "{chip} col at ({i},{j})");
            }
        }
        for i in 0..CCD_ROWS {
            assert_eq!(rows.get(i, 5), oracle(chip, i, 5).0 as f32);
        }
        for j in 0..CCD_COLS {
            assert_eq!(cols.get(3, j), oracle(chip, 3, j).1 as f32);
        }
    }
}

#[test]
fn wrong_dimensions_rejected() {
    let acs = raw_frame(Chip::Wfc1, |_, _, _| 0.0);
    assert!(crop_wfc3_uvis(&acs, Chip::Uvis1).is_err());
    let uvis = raw_frame(Chip::Uvis2, |_, _, _| 0.0);
    assert!(crop_acs_wfc(&uvis, Chip::Wfc2).is_err());
    assert!(crop_acs_wfc(&acs, Chip::Uvis1).is_err());
}

#[test]
fn chip_resolution_through_a_fits_file() {
    let science = Grid::from_fn(CCD_ROWS, CCD_COLS, |r, c| ((r * 3 + c) % 1000) as f32);
    let file = raw_fits_file(
        Instrument::AcsWfc,
        embed_science(Chip::Wfc1, &science, 4000.0),
        embed_science(Chip::Wfc2, &science, 4001.0),
    );
    let parsed = parse_fits(&write_fits(&file).unwrap()).unwrap();
    for (hdu, chip) in [(1, Chip::Wfc2), (4, Chip::Wfc1)] {
        let img = extract_image(&parsed, hdu).unwrap();
        assert_eq!(Chip::resolve(Instrument::AcsWfc, &img, hdu).unwrap(), chip);
        assert_eq!(crop_raw(&img, chip).unwrap(), science);
    }
}
