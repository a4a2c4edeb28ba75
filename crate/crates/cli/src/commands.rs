use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use esiqa_core::data::{
    evaluate, load_and_split, load_view, low_level_features, mos_reports, split_manifest, train, write_feature_table,
    write_histograms, write_kde, write_predictions, DataError, SplitSpec,
};
use esiqa_core::metrics::{
    auc_significance_matrix, format_significance_matrix, roc_better_vs_worse, roc_different_vs_similar,
    significant_pairs, write_report, RocResult,
};
use esiqa_core::model::{load_checkpoint, stage_heatmap, ForwardCtx};
use esiqa_core::subjective::{
    discriminability_curve, mean_ci_curve, mos_pipeline, read_mos, read_ratings, write_mos, RatingMatrix, RatingRecord,
};
use esiqa_core::tensor::no_grad;
use esiqa_core::{DatasetManifest, DisplayMode, TrainConfig};
use esiqa_service::ServiceConfig;

use crate::args::Command;
use crate::InputResult;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Mos { ratings, mode, out } => mos(&ratings, mode, &out),
        Command::Discriminability { ratings, mode, out, seed, sizes, trials, alpha } => {
            discriminability(&ratings, mode, &out, seed, sizes, trials, alpha)
        }
        Command::Features { manifest, out, points } => features(&manifest, &out, points),
        Command::Train { manifest, mode, config, seed, train_fraction, out } => {
            train_cmd(&manifest, mode, config.as_deref(), seed, train_fraction, &out)
        }
        Command::Eval { manifest, checkpoint, mode, seed, train_fraction, ratings, method, out } => {
            eval(&manifest, &checkpoint, mode, seed, train_fraction, ratings.as_deref(), &method, &out)
        }
        Command::Roc { ratings, mode, predictions, seed, resamples, alpha, out } => {
            roc(&ratings, mode, &predictions, seed, resamples, alpha, &out)
        }
        Command::Report { mos, manifest, out } => report(&mos, manifest.as_deref(), &out),
        Command::Serve { manifest, ratings_log, port, seed } => {
            esiqa_service::run_blocking(ServiceConfig { manifest, ratings_log, port, seed }).input()
        }
        Command::Heatmap { manifest, checkpoint, image, stage, out } => {
            heatmap(&manifest, &checkpoint, &image, stage, &out)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display())).input()?;
    read_ratings(file).with_context(|| format!("reading {}", path.display())).input()
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).input()
}

fn mos(ratings: &Path, mode: DisplayMode, out: &Path) -> Result<()> {
    let records = load_ratings(ratings)?;
    let (screening, entries) = mos_pipeline(&records, mode).input()?;
    for p in screening.rejected() {
        log::info!("rejected rater {p}");
    }
    write_mos(create(out)?, &entries)?;
    log::info!("{} MOS values from {} raters", entries.len(), screening.retained.len());
    Ok(())
}

fn discriminability(
    ratings: &Path,
    mode: DisplayMode,
    out: &Path,
    seed: u64,
    mut sizes: Vec<usize>,
    trials: usize,
    alpha: f64,
) -> Result<()> {
    let records = load_ratings(ratings)?;
    if sizes.is_empty() {
        let panel = RatingMatrix::from_records(&records, mode).input()?.participants.len();
        sizes = (2..=panel).collect();
    }
    let disc = discriminability_curve(&records, mode, &sizes, trials, alpha, seed).input()?;
    let ci = mean_ci_curve(&records, mode, &sizes, trials, seed).input()?;
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(["curve", "size", "value"])?;
    for (name, curve) in [("discriminability", &disc), ("ci95", &ci)] {
        for p in curve {
            w.write_record([name.to_string(), p.size.to_string(), format!("{:.6}", p.value)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn features(manifest: &Path, out: &Path, points: usize) -> Result<()> {
    let manifest = load_manifest(manifest)?;
    let table = low_level_features(&manifest).input()?;
    if table.degenerate {
        log::warn!("fewer than two images: features are reported unnormalized");
    }
    write_feature_table(create(&out.join("features.csv"))?, &table)?;
    write_kde(create(&out.join("kde.csv"))?, &table, points)?;
    Ok(())
}

fn train_cmd(
    manifest: &Path,
    mode: Option<DisplayMode>,
    config: Option<&Path>,
    seed: Option<u64>,
    train_fraction: f64,
    out: &Path,
) -> Result<()> {
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).input()?;
            TrainConfig::from_text(&text).with_context(|| format!("parsing {}", path.display())).input()?
        }
        None => TrainConfig::default(),
    };
    if let Some(mode) = mode {
        cfg.model = cfg.model.with_mode(mode);
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().input()?;
    let manifest = load_manifest(manifest)?;
    let spec = SplitSpec { seed: cfg.seed, train_fraction };
    let split = split_manifest(&manifest, &spec).input()?;
    let (train_set, test_set) = load_and_split(&manifest, &spec, &cfg.model).input()?;
    log::info!("training on {} images, selecting on {}", train_set.len(), test_set.len());
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let validation = (!test_set.is_empty()).then_some(&test_set);
    let outcome = match train(&train_set, validation, &cfg, Some(out)) {
        Err(e @ (DataError::MissingLabel { .. } | DataError::InvalidArgument(_) | DataError::Empty(_))) => {
            return Err(e).input()
        }
        r => r?,
    };
    std::fs::write(out.join("train_config.txt"), cfg.to_text())?;
    let mut w = csv::Writer::from_writer(create(&out.join("split.csv"))?);
    w.write_record(["image_id", "side"])?;
    for (side, idx) in [("train", &split.train), ("test", &split.test)] {
        for &i in idx {
            w.write_record([manifest.entries[i].image_id.as_str(), side])?;
        }
    }
    w.flush()?;
    log::info!("best epoch {} loss {:.6}", outcome.best_epoch, outcome.best_loss);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    manifest: &Path,
    checkpoint: &Path,
    mode: DisplayMode,
    seed: Option<u64>,
    train_fraction: f64,
    ratings: Option<&Path>,
    method: &str,
    out: &Path,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display())).input()?;
    if ckpt.config.mode != mode {
        return Err(DataError::ModeMismatch { trained: ckpt.config.mode, requested: mode }).input();
    }
    let seed = match seed {
        Some(s) => s,
        None => ckpt.metadata.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0),
    };
    let manifest = load_manifest(manifest)?;
    let (_, test) = load_and_split(&manifest, &SplitSpec { seed, train_fraction }, &ckpt.config).input()?;
    let raw = match ratings {
        Some(path) => {
            let m = RatingMatrix::from_records(&load_ratings(path)?, mode).input()?;
            Some(raw_columns(&m))
        }
        None => None,
    };
    let ev = match evaluate(&test, &ckpt, mode, method, raw.as_ref()) {
        Err(e @ (DataError::Empty(_) | DataError::MissingLabel { .. } | DataError::Metric(_))) => {
            return Err(e).input()
        }
        r => r?,
    };
    write_predictions(create(&out.join("predictions.csv"))?, &ev.predictions)?;
    write_report(create(&out.join("report.csv"))?, std::slice::from_ref(&ev.report))?;
    let rocs: Vec<(&str, &RocResult)> = [(method, &ev.roc_ds), (method, &ev.roc_bw)]
        .into_iter()
        .filter_map(|(m, r)| r.as_ref().map(|r| (m, r)))
        .collect();
    if !rocs.is_empty() {
        write_roc_pairs(&out.join("roc_pairs.csv"), &rocs)?;
    }
    let r = &ev.report;
    log::info!("srcc {:.4} krcc {:.4} plcc {:.4}", r.srcc, r.krcc, r.plcc);
    Ok(())
}

fn raw_columns(m: &RatingMatrix) -> BTreeMap<String, Vec<f64>> {
    m.images.iter().enumerate().map(|(j, id)| (id.clone(), m.image_column(j))).collect()
}

fn analysis_name(r: &RocResult) -> &'static str {
    match r.kind {
        esiqa_core::metrics::RocKind::DifferentVsSimilar => "different_vs_similar",
        esiqa_core::metrics::RocKind::BetterVsWorse => "better_vs_worse",
    }
}

fn write_roc_pairs(path: &Path, rocs: &[(&str, &RocResult)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["method", "analysis", "positive", "score"])?;
    for (method, r) in rocs {
        for (l, s) in r.labels.iter().zip(&r.scores) {
            w.write_record([method.to_string(), analysis_name(r).into(), u8::from(*l).to_string(), format!("{s:.6}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn split_assignment(arg: &str) -> Result<(&str, &str)> {
    match arg.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k, v)),
        _ => Err(anyhow::anyhow!("expected name=path, got `{arg}`")).input(),
    }
}

fn read_prediction_column(path: &Path, images: &[String]) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display())).input()?;
    let headers = r.headers().input()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(id), Some(pred)) = (col("image_id"), col("predicted")) else {
        bail!(crate::InputError(anyhow::anyhow!("{}: needs image_id and predicted columns", path.display())));
    };
    let mut values = BTreeMap::new();
    for row in r.records() {
        let row = row.input()?;
        let v: f64 = row[pred]
            .trim()
            .parse()
            .with_context(|| format!("{}: bad prediction `{}`", path.display(), &row[pred]))
            .input()?;
        values.insert(row[id].to_string(), v);
    }
    images
        .iter()
        .map(|img| values.get(img).copied())
        .collect::<Option<Vec<f64>>>()
        .with_context(|| format!("{} does not cover every rated image", path.display()))
        .input()
}

fn roc(
    ratings: &Path,
    mode: DisplayMode,
    predictions: &[String],
    seed: u64,
    resamples: usize,
    alpha: f64,
    out: &Path,
) -> Result<()> {
    let m = RatingMatrix::from_records(&load_ratings(ratings)?, mode).input()?;
    let columns: Vec<Vec<f64>> = (0..m.images.len()).map(|j| m.image_column(j)).collect();
    let pairs = significant_pairs(&columns, alpha).input()?;
    let mut names = Vec::new();
    let (mut ds, mut bw) = (Vec::new(), Vec::new());
    for arg in predictions {
        let (name, path) = split_assignment(arg)?;
        let y = read_prediction_column(Path::new(path), &m.images)?;
        ds.push(roc_different_vs_similar(&pairs, &y).input()?);
        bw.push(roc_better_vs_worse(&pairs, &y).input()?);
        names.push(name.to_string());
    }
    let mut w = csv::Writer::from_writer(create(&out.join("roc.csv"))?);
    w.write_record(["method", "mode", "auc_ds", "auc_bw"])?;
    for (i, name) in names.iter().enumerate() {
        w.write_record([name.clone(), mode.to_string(), format!("{:.6}", ds[i].auc), format!("{:.6}", bw[i].auc)])?;
    }
    w.flush()?;
    for (file, results) in [("significance_ds.txt", &ds), ("significance_bw.txt", &bw)] {
        let sig = auc_significance_matrix(results, resamples, alpha, seed).input()?;
        create(&out.join(file))?.write_all(format_significance_matrix(&names, &sig).as_bytes())?;
    }
    let all: Vec<(&str, &RocResult)> =
        names.iter().zip(&ds).chain(names.iter().zip(&bw)).map(|(n, r)| (n.as_str(), r)).collect();
    write_roc_pairs(&out.join("roc_pairs.csv"), &all)
}

fn report(mos: &[String], manifest: Option<&Path>, out: &Path) -> Result<()> {
    let mut tables = BTreeMap::new();
    for arg in mos {
        let (mode, path) = split_assignment(arg)?;
        let mode: DisplayMode = mode.parse().input()?;
        let file = File::open(path).with_context(|| format!("opening {path}")).input()?;
        tables.insert(mode, read_mos(file).with_context(|| format!("reading {path}")).input()?);
    }
    let manifest = manifest.map(load_manifest).transpose()?;
    let reports = mos_reports(&tables, manifest.as_ref()).input()?;
    write_histograms(create(&out.join("histograms.csv"))?, &reports)?;
    let mut w = csv::Writer::from_writer(create(&out.join("summary.csv"))?);
    w.write_record(["series", "n", "mean", "std_error"])?;
    for s in reports.per_mode.iter().chain(&reports.differences).chain(&reports.matched) {
        let n = s.values.len();
        let (mean, se) = if n == 0 {
            (String::new(), String::new())
        } else {
            (format!("{:.6}", s.mean()), format!("{:.6}", s.std_error()))
        };
        w.write_record([s.name.clone(), n.to_string(), mean, se])?;
    }
    w.flush()?;
    Ok(())
}

fn heatmap(manifest: &Path, checkpoint: &Path, image: &str, stage: usize, out: &Path) -> Result<()> {
    if !(1..=4).contains(&stage) {
        return Err(anyhow::anyhow!("stage must be 1 to 4, got {stage}")).input();
    }
    let ckpt = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display())).input()?;
    let manifest = load_manifest(manifest)?;
    let entry = manifest.entry(image).with_context(|| format!("no image `{image}` in manifest")).input()?;
    let side = ckpt.config.input_side as u32;
    let batch = |t: esiqa_core::Tensor| {
        let mut e = vec![1];
        e.extend_from_slice(t.extents());
        t.reshape(&e)
    };
    let left = batch(load_view(&entry.left_path, side).input()?.0)?;
    let right =
        if ckpt.config.mode.is_stereo() { Some(batch(load_view(&entry.right_path, side).input()?.0)?) } else { None };
    let model = ckpt.into_model()?;
    let features = no_grad(|| model.stage_features(&left, right.as_ref(), &mut ForwardCtx::eval()))?;
    let v = features[stage - 1].left_channel_major()?;
    let e = v.extents().to_vec();
    let map = stage_heatmap(&v.reshape(&e[1..])?)?;
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(["row", "col", "value"])?;
    for r in 0..map.side {
        for c in 0..map.side {
            w.write_record([r.to_string(), c.to_string(), format!("{:.6}", map.at(r, c))])?;
        }
    }
    w.flush()?;
    Ok(())
}
