use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use esiqa_core::data::*;
use esiqa_core::metrics::srcc;
use esiqa_core::model::{load_checkpoint, ModelConfig};
use esiqa_core::subjective::MosEntry;
use esiqa_core::DisplayMode;
use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn entry(id: &str, scene: Option<&str>, source: Source) -> ManifestEntry {
    ManifestEntry {
        image_id: id.into(),
        left_path: PathBuf::from(format!("{id}_L.png")),
        right_path: PathBuf::from(format!("{id}_R.png")),
        source,
        scene_id: scene.map(String::from),
        width: 64,
        height: 64,
        split: None,
    }
}

fn flat_manifest(n: usize) -> DatasetManifest {
    DatasetManifest {
        entries: (0..n).map(|i| entry(&format!("i{i}"), None, Source::Captured)).collect(),
        labels: Vec::new(),
    }
}

#[test]
fn five_hundred_entries_split_four_to_one() {
    let m = flat_manifest(500);
    let spec = SplitSpec { seed: 3, ..Default::default() };
    let s = split_manifest(&m, &spec).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (400, 100));
    assert_eq!(split_manifest(&m, &spec).unwrap(), s);
    assert_ne!(split_manifest(&m, &SplitSpec { seed: 4, ..spec }).unwrap(), s);
}

#[test]
fn explicit_split_across_a_scene_is_leakage() {
    let mut m = DatasetManifest {
        entries: vec![
            entry("cap", Some("s1"), Source::Captured),
            entry("syn", Some("s1"), Source::Synthesized),
            entry("other", Some("s2"), Source::Captured),
        ],
        labels: Vec::new(),
    };
    m.entries[0].split = Some(Side::Train);
    m.entries[1].split = Some(Side::Test);
    m.entries[2].split = Some(Side::Test);
    assert!(matches!(split_manifest(&m, &SplitSpec::default()), Err(DataError::Leakage(s)) if s == "s1"));
    m.entries[1].split = Some(Side::Train);
    let s = split_manifest(&m, &SplitSpec::default()).unwrap();
    assert_eq!((s.train, s.test), (vec![0, 1], vec![2]));
}

proptest! {
    #[test]
    fn seeded_splits_never_share_scenes(groups in prop::collection::vec(1usize..4, 2..60), seed in any::<u64>()) {
        let mut m = DatasetManifest::default();
        for (g, &size) in groups.iter().enumerate() {
            for k in 0..size {
                let source = if k == 0 { Source::Captured } else { Source::Synthesized };
                m.entries.push(entry(&format!("g{g}_{k}"), Some(&format!("scene{g}")), source));
            }
        }
        let s = split_manifest(&m, &SplitSpec { seed, train_fraction: 0.8 }).unwrap();
        let scenes = |idx: &[usize]| idx.iter().map(|&i| m.entries[i].group().to_string()).collect::<BTreeSet<_>>();
        prop_assert!(scenes(&s.train).is_disjoint(&scenes(&s.test)));
        prop_assert_eq!(s.train.len() + s.test.len(), m.entries.len());
    }
}

#[test]
fn loading_respects_mode_and_validates_views() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic_dataset(dir.path(), 8, 40, 1).unwrap();
    let loaded = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(loaded.entries.len(), 8);
    assert_eq!(loaded.labels.len(), 24);

    let stereo = ModelConfig::reduced();
    let (train, test) = load_and_split(&loaded, &SplitSpec::default(), &stereo).unwrap();
    assert_eq!(train.len() + test.len(), 8);
    let s = &train.samples[0];
    assert_eq!(s.left.extents(), &[3, 32, 32]);
    assert!(s.right.is_some() && s.mos.is_some());

    // the 2d mode never opens right views
    for e in &loaded.entries {
        std::fs::remove_file(&e.right_path).unwrap();
    }
    let flat = ModelConfig::reduced().with_mode(DisplayMode::Flat);
    let all = load_all(&loaded, &flat).unwrap();
    assert!(all.samples.iter().all(|s| s.right.is_none()));
    assert!(matches!(load_all(&loaded, &stereo), Err(DataError::MissingFile(_))));

    RgbImage::from_pixel(40, 30, Rgb([1, 2, 3])).save(&loaded.entries[0].right_path).unwrap();
    let one = DatasetManifest { entries: vec![loaded.entries[0].clone()], labels: Vec::new() };
    assert!(matches!(load_all(&one, &stereo), Err(DataError::ResolutionMismatch { .. })));

    std::fs::write(&loaded.entries[0].left_path, b"not an image").unwrap();
    assert!(matches!(load_all(&one, &flat), Err(DataError::Decode { .. })));
    drop(manifest);
}

fn quick_config(mode: DisplayMode) -> TrainConfig {
    let mut model = ModelConfig::reduced().with_mode(mode);
    model.dropout = 0.0;
    TrainConfig { model, epochs: 3, batch_size: 4, learning_rate: 1e-3, seed: 5, ..Default::default() }
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let data = synthetic_dataset(8, 32, DisplayMode::Window, 2);
    let mut cfg = quick_config(DisplayMode::Window);
    cfg.learning_rate = 0.0;
    cfg.batch_size = 8;
    let out = train(&data, None, &cfg, None).unwrap();
    assert_eq!(out.trace.len(), 3);
    assert!(out.trace.iter().all(|p| p.loss == out.trace[0].loss));
}

#[test]
fn training_writes_artifacts_and_lowers_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_dataset(8, 32, DisplayMode::Window, 3);
    let mut cfg = quick_config(DisplayMode::Window);
    cfg.epochs = 20;
    let out = train(&data, Some(&data), &cfg, Some(dir.path())).unwrap();
    let first = out.trace[0].loss;
    assert!(out.best_loss < first, "{} !< {first}", out.best_loss);
    let ckpt = load_checkpoint(&dir.path().join("best.ckpt")).unwrap();
    assert_eq!(ckpt.metadata["seed"], "5");
    assert_eq!(ckpt.metadata["epoch"], out.best_epoch.to_string());
    let trace = std::fs::read_to_string(dir.path().join("loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), out.trace.len() + 1);
}

#[test]
fn non_finite_loss_aborts_with_dump() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = synthetic_dataset(4, 32, DisplayMode::Flat, 4);
    data.samples[2].mos = Some(f64::NAN);
    let err = train(&data, None, &quick_config(DisplayMode::Flat), Some(dir.path())).unwrap_err();
    let DataError::NonFiniteLoss { dump, .. } = err else { panic!("{err}") };
    let text = std::fs::read_to_string(dump).unwrap();
    assert!(text.contains("syn0002"));
}

#[test]
fn missing_label_is_rejected() {
    let mut data = synthetic_dataset(4, 32, DisplayMode::Flat, 4);
    data.samples[1].mos = None;
    assert!(matches!(train(&data, None, &quick_config(DisplayMode::Flat), None), Err(DataError::MissingLabel { .. })));
}

#[test]
fn evaluation_is_deterministic_and_mode_checked() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_dataset(12, 32, DisplayMode::Immersive, 6);
    let mut cfg = quick_config(DisplayMode::Immersive);
    cfg.epochs = 1;
    train(&data, None, &cfg, Some(dir.path())).unwrap();
    let ckpt = load_checkpoint(&dir.path().join("best.ckpt")).unwrap();
    let raw: BTreeMap<String, Vec<f64>> = data
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.image_id.clone(), (0..6).map(|k| s.mos.unwrap() + (k + i) as f64 % 3.0).collect()))
        .collect();
    let render = || {
        let e = evaluate(&data, &ckpt, DisplayMode::Immersive, "esiqanet", Some(&raw)).unwrap();
        let mut buf = Vec::new();
        esiqa_core::metrics::write_report(&mut buf, std::slice::from_ref(&e.report)).unwrap();
        write_predictions(&mut buf, &e.predictions).unwrap();
        (buf, e)
    };
    let (a, e) = render();
    assert_eq!(a, render().0);
    assert!(e.report.auc_ds.is_some() || e.report.auc_bw.is_some());
    assert!(matches!(
        evaluate(&data, &ckpt, DisplayMode::Window, "x", None),
        Err(DataError::ModeMismatch { trained: DisplayMode::Immersive, requested: DisplayMode::Window })
    ));
    assert!(matches!(
        evaluate(&Dataset::default(), &ckpt, DisplayMode::Immersive, "x", None),
        Err(DataError::Empty(_))
    ));
}

#[test]
fn shuffled_labels_have_near_zero_rank_correlation() {
    // null sd of SRCC is 1/sqrt(n-1), so P(|r| < 0.2) is about 0.953 at n = 100
    let trials = 1000;
    let mut ok = 0;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..100.0)).collect();
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut rng);
        ok += (srcc(&labels, &shuffled).unwrap().abs() < 0.2) as usize;
    }
    let se = (0.95f64 * 0.05 / trials as f64).sqrt();
    assert!(ok as f64 / trials as f64 >= 0.95 - 3.0 * se, "{ok}/{trials}");
}

#[test]
fn train_config_text_round_trip() {
    let cfg = TrainConfig {
        epochs: 7,
        learning_rate: 3e-4,
        freeze_backbone: true,
        seed: 11,
        ..quick_config(DisplayMode::Flat)
    };
    let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
    assert!(TrainConfig::from_text("loss = huber").is_err());
}

fn solid(v: u8) -> RgbImage {
    RgbImage::from_pixel(16, 16, Rgb([v, v, v]))
}

#[test]
fn feature_reference_images() {
    let gray = image_features(&solid(128));
    assert_eq!(&gray[1..], &[0.0, 0.0, 0.0]);
    let table = feature_table(vec![
        ("white".into(), image_features(&solid(255))),
        ("black".into(), image_features(&solid(0))),
        ("gray".into(), gray),
    ]);
    assert_eq!(table.rows[0].normalized[0], 1.0);
    assert_eq!(table.rows[1].normalized[0], 0.0);
    assert!(!table.degenerate);
    let single = feature_table(vec![("only".into(), gray)]);
    assert!(single.degenerate);
    assert_eq!(single.rows[0].normalized, gray);
}

#[test]
fn blur_lowers_checkerboard_sharpness() {
    let board = RgbImage::from_fn(32, 32, |x, y| if (x / 4 + y / 4) % 2 == 0 { Rgb([230; 3]) } else { Rgb([20; 3]) });
    let blurred = image::imageops::blur(&board, 2.0);
    assert!(image_features(&board)[3] > image_features(&blurred)[3]);
}

#[test]
fn normalized_features_span_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let raw: Vec<(String, [f64; 4])> = (0..6)
        .map(|i| {
            let img = RgbImage::from_fn(12, 12, |_, _| Rgb([rng.random(), rng.random(), rng.random::<u8>() / (i + 1)]));
            (format!("r{i}"), image_features(&img))
        })
        .collect();
    let table = feature_table(raw);
    for k in 0..4 {
        let col: Vec<f64> = table.rows.iter().map(|r| r.normalized[k]).collect();
        assert_eq!(col.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(col.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
    }
    let kde = kde_series(&table.rows.iter().map(|r| r.normalized[0]).collect::<Vec<_>>(), 101);
    assert_eq!(kde.len(), 101);
    assert!(kde.iter().all(|(_, d)| d.is_finite() && *d >= 0.0));
}

fn mos_table(mode: DisplayMode, values: &[f64]) -> Vec<MosEntry> {
    values
        .iter()
        .enumerate()
        .map(|(j, &mos)| MosEntry {
            image_id: format!("img{j:04}"),
            mode,
            mos,
            std: 1.0,
            ci_halfwidth: 1.0,
            n_subjects: 22,
            ci_defined: true,
        })
        .collect()
}

#[test]
fn difference_histograms() {
    let base: Vec<f64> = (0..30).map(|j| 20.0 + j as f64).collect();
    let same: BTreeMap<_, _> = DisplayMode::ALL.iter().map(|&m| (m, mos_table(m, &base))).collect();
    let r = mos_reports(&same, None).unwrap();
    assert_eq!(r.differences.len(), 3);
    for s in &r.differences {
        let hit: Vec<_> = s.bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(hit.len(), 1);
        assert!(hit[0].lo <= 0.0 && 0.0 < hit[0].hi && hit[0].count == 30);
    }

    let plus5: Vec<f64> = base.iter().map(|v| v + 5.0).collect();
    let shifted = BTreeMap::from([
        (DisplayMode::Flat, mos_table(DisplayMode::Flat, &base)),
        (DisplayMode::Window, mos_table(DisplayMode::Window, &plus5)),
    ]);
    let r = mos_reports(&shifted, None).unwrap();
    assert_eq!(r.differences.len(), 1);
    assert_eq!(r.differences[0].name, "3d_window-2d");
    assert!(r.differences[0].values.iter().all(|&d| d == 5.0));
    let hit: Vec<_> = r.differences[0].bins.iter().filter(|b| b.count > 0).collect();
    assert!(hit.len() == 1 && hit[0].lo <= 5.0 && 5.0 < hit[0].hi);

    let mut within = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || (0..200).map(|_| rng.random_range(0.0..100.0)).collect::<Vec<f64>>();
        let random = BTreeMap::from([
            (DisplayMode::Flat, mos_table(DisplayMode::Flat, &draw())),
            (DisplayMode::Immersive, mos_table(DisplayMode::Immersive, &draw())),
        ]);
        let s = &mos_reports(&random, None).unwrap().differences[0];
        within += (s.mean().abs() < 3.0 * s.std_error()) as usize;
    }
    assert!(within >= 97, "{within}/100");
}

#[test]
fn matched_pairs_need_a_captured_scene() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = write_synthetic_dataset(dir.path(), 8, 16, 2).unwrap();
    let mos: Vec<f64> = (0..8).map(|j| j as f64 * 10.0).collect();
    let tables = BTreeMap::from([(DisplayMode::Flat, mos_table(DisplayMode::Flat, &mos))]);
    let r = mos_reports(&tables, Some(&manifest)).unwrap();
    // img0003 and img0007 are synthesized from scenes of img0002 and img0006
    assert_eq!(r.matched[0].values, vec![10.0, 10.0]);
    manifest.entries[3].scene_id = Some("nowhere".into());
    assert!(matches!(mos_reports(&tables, Some(&manifest)), Err(DataError::UnmatchedScene { .. })));
}
