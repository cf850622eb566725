use celestine::dataset::*;
use celestine::fits::{extract_image, parse_fits, write_fits, CardValue, FitsCard, FitsFile, ImageHdu};
use celestine::metrics::*;
use celestine::netspec::{count_params, init_params, propagate_shapes, LayerSpec, NetSpec};
use celestine::nn::Mode;
use celestine::preprocess::{resize_bilinear, Grid, Instrument};
use celestine::runtime::{checkpoint_bytes, checkpoint_from_bytes, Model};
use proptest::prelude::*;
use std::collections::HashSet;

fn entries_from(bodies: &[(usize, bool, usize)]) -> Vec<ManifestEntry> {
    let mut out = Vec::new();
    for &(id, nsc, images) in bodies {
        for k in 0..images {
            out.push(ManifestEntry {
                body_id: format!("B{id}"),
                category: if nsc { Category::Nsc } else { Category::Galaxy },
                instrument: Instrument::Wfc3Uvis,
                obsid: format!("o{id}_{k}"),
                filter: "F555W".into(),
                ra_deg: id as f64,
                dec_deg: -(k as f64),
                hdu_index: if k % 2 == 0 { 1 } else { 4 },
                path: format!("b{id}_{k}.fits"),
                sha256: None,
            });
        }
    }
    out
}

fn manifest_strategy() -> impl Strategy<Value = Vec<ManifestEntry>> {
    (2usize..30, 2usize..30, proptest::collection::vec(1usize..5, 60)).prop_map(|(g, n, images)| {
        let bodies: Vec<(usize, bool, usize)> = (0..g + n).map(|i| (i, i >= g, images[i])).collect();
        entries_from(&bodies)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_never_leaks(manifest in manifest_strategy(), seed: u64) {
        let s = split_by_body(&manifest, 0.8, seed).unwrap();
        let train: HashSet<_> = s.train.iter().map(|e| &e.body_id).collect();
        let test: HashSet<_> = s.test.iter().map(|e| &e.body_id).collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(s.train.len() + s.test.len(), manifest.len());
        let summary = s.summary();
        let bt = summary.bodies_train.unwrap();
        for (got, n) in [(bt.galaxy, summary.bodies.galaxy), (bt.nsc, summary.bodies.nsc)] {
            let rounded = (0.8 * n as f64).round() as i64;
            prop_assert!((got as i64 - rounded).abs() <= 1);
            prop_assert!(got >= 1 && got < n);
        }
        prop_assert_eq!(split_by_body(&manifest, 0.8, seed).unwrap(), s);
    }

    #[test]
    fn flux_is_linear_and_monotone(t in 0.0f64..1e4, a in 0.01f64..50.0, s0 in 0.0f64..1e-5, bump in 0.0f64..1e-6) {
        let m = ThroughputModel::flat(3e-7, 9e-7, 101, s0, 0.4).unwrap();
        let c = electron_flux(&m, t, a).unwrap();
        prop_assert_eq!(electron_flux(&m, 2.0 * t, a).unwrap(), 2.0 * c);
        prop_assert_eq!(electron_flux(&m, t, 2.0 * a).unwrap(), 2.0 * c);
        let brighter = ThroughputModel::flat(3e-7, 9e-7, 101, s0 + bump, 0.4).unwrap();
        prop_assert!(electron_flux(&brighter, t, a).unwrap() >= c);
        let clearer = ThroughputModel::flat(3e-7, 9e-7, 101, s0, 0.5).unwrap();
        prop_assert!(electron_flux(&clearer, t, a).unwrap() >= c);
    }

    #[test]
    fn metric_invariants(tp in 0u64..200, fp in 0u64..200, fn_ in 0u64..200, tn in 0u64..200) {
        let cm = ConfusionMatrix::new(tp, fp, fn_, tn);
        if let Ok(acc) = accuracy(&cm) {
            prop_assert!((0.0..=1.0).contains(&acc));
            prop_assert_eq!(acc, accuracy(&cm.transposed()).unwrap());
        }
        let prf = precision_recall_f1(&cm);
        for v in [prf.precision, prf.recall, prf.f1].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if let (Some(p), Some(r), Some(f)) = (prf.precision, prf.recall, prf.f1) {
            prop_assert!(f >= p.min(r) - 1e-12 && f <= p.max(r) + 1e-12);
        }
    }

    #[test]
    fn confusion_matches_counting_oracle(pairs in proptest::collection::vec((0usize..2, 0usize..2), 0..300)) {
        let (p, l): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let cm = confusion_matrix(&p, &l).unwrap();
        let count = |a: usize, b: usize| pairs.iter().filter(|&&x| x == (a, b)).count() as u64;
        prop_assert_eq!(cm, ConfusionMatrix::new(count(0, 0), count(0, 1), count(1, 0), count(1, 1)));
    }

    #[test]
    fn fits_round_trip(w in 1usize..40, h in 1usize..40, seed: u64, exptime in 0.0f64..5000.0) {
        let pixels: Vec<f32> = (0..w * h).map(|i| (((i as u64 * 2654435761) ^ seed) % 65536) as f32).collect();
        let mut img = ImageHdu::new_unsigned(w, h, pixels);
        img.cards.push(FitsCard::new("EXPTIME", CardValue::Real(exptime)));
        img.cards.push(FitsCard::new("OBJECT", CardValue::Str("NGC 628".into())));
        let mut file = FitsFile::default();
        let idx = file.push_image(img.clone());
        let back = extract_image(&parse_fits(&write_fits(&file).unwrap()).unwrap(), idx).unwrap();
        prop_assert_eq!(&back.pixels, &img.pixels);
        prop_assert_eq!(back.keyword("OBJECT").and_then(|v| v.as_str()), Some("NGC 628"));
        prop_assert_eq!(back.keyword("EXPTIME").and_then(|v| v.as_f64()), Some(exptime));
    }

    #[test]
    fn resize_stays_within_input_range(h in 1usize..30, w in 1usize..30, oh in 1usize..40, ow in 1usize..40, seed: u64) {
        let g = Grid::from_fn(h, w, |r, c| ((r * 131 + c * 17) as u64 ^ seed) as f32 % 1000.0);
        let (lo, hi) = g.min_max();
        let out = resize_bilinear(&g, oh, ow).unwrap();
        prop_assert!(out.data.iter().all(|&v| v >= lo - 1e-3 && v <= hi + 1e-3));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_pixels_in_range(seed: u64, galaxy: bool, t in 0.0f64..3.0, sky in 0.0f64..50.0) {
        let category = if galaxy { Category::Galaxy } else { Category::Nsc };
        let tpl = SceneTemplate::random(category, 32, 48, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed));
        let exposure = ExposureConfig { t, sky_level: sky, ..Default::default() };
        match synthesize_sample(category, &tpl, &exposure, &ThroughputModel::demo_broadband(), seed) {
            Ok(s) => prop_assert!(s.pixels.data.iter().all(|&v| (0.0..=65535.0).contains(&v))),
            Err(DatasetError::Saturated { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn checkpoint_round_trip(seed: u64, channels in 1usize..4, units in 2usize..6, mean in -1.0f32..1.0) {
        let spec = NetSpec {
            name: "prop".into(),
            version: 1,
            input: [1, 9, 11],
            layers: vec![
                LayerSpec::Conv { kernel: 3, stride: 1, out_channels: channels },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool { kernel: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Linear { units },
                LayerSpec::Relu,
                LayerSpec::Linear { units: 2 },
                LayerSpec::Softmax,
            ],
        };
        let mut model = Model::<f32>::init(spec.clone(), seed).unwrap();
        if let celestine::nn::Layer::BatchNorm(b) = &mut model.network.layers[1] {
            b.running_mean = vec![mean; channels];
            b.running_var = vec![mean.abs() + 0.5; channels];
        }
        model.network.set_mode(Mode::Eval);
        let back: Model<f32> = checkpoint_from_bytes(&checkpoint_bytes(&model), &spec).unwrap();
        prop_assert!(back == model);
    }

    #[test]
    fn spec_text_round_trip_and_param_counts(c in 1usize..3, k in 1usize..4, o in 1usize..5, units in 1usize..8, pool: bool) {
        let mut layers = vec![LayerSpec::Conv { kernel: k, stride: 1, out_channels: o }, LayerSpec::BatchNorm, LayerSpec::Relu];
        if pool {
            layers.push(LayerSpec::MaxPool { kernel: 2, stride: 2 });
        }
        layers.extend([LayerSpec::Flatten, LayerSpec::Linear { units }, LayerSpec::Relu, LayerSpec::Linear { units: 2 }, LayerSpec::Softmax]);
        let spec = NetSpec { name: "p".into(), version: 1, input: [c, 12, 10], layers };
        prop_assert_eq!(NetSpec::from_toml(&spec.to_toml()).unwrap(), spec.clone());
        let shapes = propagate_shapes(&spec).unwrap();
        let flat = shapes.flatten_size.unwrap();
        let (h, w) = if pool { ((13 - k) / 2, (11 - k) / 2) } else { (13 - k, 11 - k) };
        prop_assert_eq!(flat, o * h * w);
        let net = init_params::<f32>(&spec, 0).unwrap();
        prop_assert_eq!(count_params(&spec, true).unwrap().total, net.param_count());
    }
}
