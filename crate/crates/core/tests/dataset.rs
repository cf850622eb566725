use celestine::dataset::*;
use celestine::preprocess::Instrument;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;

#[test]
fn flat_sed_matches_closed_form() {
    let (l1, l2, s0, t, a) = (4.0e-7, 9.0e-7, 2.5e-6, 300.0, 4.5);
    let model = ThroughputModel::flat(l1, l2, 10_001, s0, 1.0).unwrap();
    let quad = electron_flux(&model, t, a).unwrap();
    let exact = t * a * s0 * (l2 * l2 - l1 * l1) / (2.0 * 6.62607015e-34 * 2.99792458e8);
    assert!(((quad - exact) / exact).abs() < 1e-6, "{quad} vs {exact}");
}

#[test]
fn flux_rejects_negative_time() {
    let model = ThroughputModel::demo_broadband();
    assert!(electron_flux(&model, -1.0, 1.0).is_err());
    assert!(electron_flux(&model, 1.0, 0.0).is_err());
}

#[test]
fn rendered_scene_sums_to_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for category in Category::ALL {
        for _ in 0..5 {
            let tpl = SceneTemplate::random(category, 96, 160, &mut rng);
            let scene = render_scene(&tpl, 1.234e7, 5).unwrap();
            let sum: f64 = scene.iter().sum();
            assert!((sum / 1.234e7 - 1.0).abs() < 1e-3);
        }
    }
}

#[test]
fn synthesis_is_deterministic() {
    let tpl = SceneTemplate::random(Category::Nsc, 48, 96, &mut ChaCha8Rng::seed_from_u64(1));
    let exp = ExposureConfig::scaled_to(48, 96);
    let model = ThroughputModel::demo_broadband();
    let a = synthesize_sample(Category::Nsc, &tpl, &exp, &model, 77).unwrap();
    let b = synthesize_sample(Category::Nsc, &tpl, &exp, &model, 77).unwrap();
    assert_eq!(a, b);
    let c = synthesize_sample(Category::Nsc, &tpl, &exp, &model, 78).unwrap();
    assert_ne!(a.pixels, c.pixels);
}

#[test]
fn dark_frame_without_noise_is_zero() {
    let tpl = SceneTemplate::random(Category::Galaxy, 20, 30, &mut ChaCha8Rng::seed_from_u64(2));
    let exp = ExposureConfig { t: 0.0, read_noise_sigma: 0.0, sky_level: 0.0, ..Default::default() };
    let s = synthesize_sample(Category::Galaxy, &tpl, &exp, &ThroughputModel::demo_broadband(), 1).unwrap();
    assert!(s.pixels.data.iter().all(|&v| v == 0.0));
}

#[test]
fn overexposure_is_rejected() {
    let tpl = SceneTemplate::random(Category::Galaxy, 20, 30, &mut ChaCha8Rng::seed_from_u64(2));
    let exp = ExposureConfig { t: 1e6, ..Default::default() };
    let r = synthesize_sample(Category::Galaxy, &tpl, &exp, &ThroughputModel::demo_broadband(), 1);
    assert!(matches!(r, Err(DatasetError::Saturated { .. })));
}

#[test]
fn low_exposure_has_lower_snr() {
    let tpl = SceneTemplate::random(Category::Galaxy, 64, 128, &mut ChaCha8Rng::seed_from_u64(3));
    let model = ThroughputModel::demo_broadband();
    let bright = ExposureConfig::scaled_to(64, 128);
    let faint = ExposureConfig { t: bright.t / 50.0, ..bright };
    let peak = |e: &ExposureConfig| {
        let s = synthesize_sample(Category::Galaxy, &tpl, e, &model, 4).unwrap();
        s.pixels.min_max().1
    };
    assert!(peak(&faint) < peak(&bright) / 10.0);
}

fn entry(path: &str, sha: Option<String>) -> ManifestEntry {
    ManifestEntry {
        body_id: "NGC628".into(),
        category: Category::Galaxy,
        instrument: Instrument::AcsWfc,
        obsid: "j96r23b7q".into(),
        filter: "F435W".into(),
        ra_deg: 24.152604,
        dec_deg: 15.769880,
        hdu_index: 1,
        path: path.into(),
        sha256: sha,
    }
}

#[test]
fn fetch_copies_skips_and_reports_failures() {
    let src = tempfile::tempdir().unwrap();
    let dest = tempfile::tempdir().unwrap();
    let mut manifest = Vec::new();
    for i in 0..3 {
        let p = src.path().join(format!("f{i}.fits"));
        fs::write(&p, vec![i as u8; 3000 + i]).unwrap();
        let path = if i == 0 { format!("file://{}", p.display()) } else { p.display().to_string() };
        manifest.push(entry(&path, None));
    }
    let r = fetch_manifest_files(&manifest, dest.path(), &[&LocalFetcher], 2).unwrap();
    assert_eq!((r.fetched.len(), r.skipped.len(), r.failed.len()), (3, 0, 0));
    for i in 0..3 {
        let name = format!("f{i}.fits");
        assert_eq!(fs::read(dest.path().join(&name)).unwrap(), fs::read(src.path().join(&name)).unwrap());
    }
    let again = fetch_manifest_files(&manifest, dest.path(), &[&LocalFetcher], 2).unwrap();
    assert_eq!((again.fetched.len(), again.skipped.len()), (0, 3));

    manifest.push(entry(&src.path().join("missing.fits").display().to_string(), None));
    let r = fetch_manifest_files(&manifest, dest.path(), &[&LocalFetcher], 4).unwrap();
    assert_eq!(r.failed.len(), 1);
    assert!(r.failed[0].source.ends_with("missing.fits"));
}

#[test]
fn fetch_checks_checksums() {
    let src = tempfile::tempdir().unwrap();
    let dest = tempfile::tempdir().unwrap();
    let p = src.path().join("a.fits");
    fs::write(&p, b"SIMPLE").unwrap();
    let good = sha256_hex(b"SIMPLE");
    let bad = "0".repeat(64);
    let ok = fetch_manifest_files(&[entry(&p.display().to_string(), Some(good))], dest.path(), &[&LocalFetcher], 1).unwrap();
    assert!(ok.is_success());
    let dest2 = tempfile::tempdir().unwrap();
    let r = fetch_manifest_files(&[entry(&p.display().to_string(), Some(bad))], dest2.path(), &[&LocalFetcher], 1).unwrap();
    assert!(r.failed[0].reason.contains("checksum"));
    assert!(!dest2.path().join("a.fits").exists());
}

#[test]
fn unknown_scheme_fails_without_a_fetcher() {
    let dest = tempfile::tempdir().unwrap();
    let r = fetch_manifest_files(&[entry("https://example.invalid/x.fits", None)], dest.path(), &[&LocalFetcher], 1).unwrap();
    assert_eq!(r.failed.len(), 1);
}
