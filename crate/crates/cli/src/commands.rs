//! Subcommand implementations. Every command resolves its settings from an
//! optional TOML file overlaid by flags, validates everything it can before
//! doing work, and writes its outputs only after that.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use scoreq_core::data::{
    generate_corpus, generate_references, load_manifest, partition, write_corpus, LabeledSample, Split,
    SyntheticSpec,
};
use scoreq_core::eval::{
    bootstrap_compare, diagnose_embeddings, eval_report, BootstrapConfig, BootstrapReport, EvalReport, ScoreKind,
};
use scoreq_core::model::{nmr_scores, Checkpoint, EncoderConfig, Layer, ReferenceSet};
use scoreq_core::numerics::FeatureSequence;
use scoreq_core::training::{
    metrics_csv, time_training_step, train_l2_baseline, train_nr_head, train_offline, train_scoreq, LossMode,
    StepTiming, TrainConfig, TrainRun,
};

use crate::args::*;
use crate::error::{CliError, Result};
use crate::protocol::{run_protocol, summarize, ProtocolConfig};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Bootstrap(a) => bootstrap(&a),
        Command::Diagnose(a) => diagnose(&a),
        Command::Bench(a) => bench(&a),
        Command::Protocol(a) => protocol(&a),
    }
}

// ---------------------------------------------------------------- plumbing

fn read_config(path: Option<&Path>) -> Result<Option<toml::Table>> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path).map_err(|e| scoreq_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let table = text.parse::<toml::Table>().map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(Some(table))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `base` with every key present in the config file replaced.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, file: Option<toml::Table>, path: Option<&Path>) -> Result<T> {
    let bad = |message: String| CliError::Config {
        path: path.map(Path::to_path_buf).unwrap_or_default(),
        message,
    };
    let mut table = toml::Table::try_from(base).map_err(|e| bad(e.to_string()))?;
    if let Some(file) = file {
        merge(&mut table, file);
    }
    table.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))
}

fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string_pretty(v).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| scoreq_core::Error::Serde(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    scoreq_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn check_new_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Exists(path.to_path_buf()));
    }
    Ok(())
}

/// Creates `dir`; an existing non-empty directory needs `force`.
fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.is_dir() && !force && fs::read_dir(dir).map_err(|e| io(dir, e))?.next().is_some() {
        return Err(CliError::Exists(dir.to_path_buf()));
    }
    fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io(path, e))
}

/// Writes to `out` if given, else to stdout.
fn emit(out: Option<&Path>, text: &str, force: bool) -> Result<()> {
    match out {
        Some(p) => {
            check_new_file(p, force)?;
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
            }
            write(p, text)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn default_refs_path(manifest: &Path) -> PathBuf {
    manifest.parent().unwrap_or(Path::new("")).join("refs").join("manifest.csv")
}

/// References from `--refs`, else `refs/manifest.csv` next to the manifest,
/// else the manifest's own `ref` rows.
fn load_refs(manifest: &Path, refs: Option<&Path>, inline: Vec<LabeledSample>) -> Result<Vec<FeatureSequence>> {
    let path = match refs {
        Some(p) => Some(p.to_path_buf()),
        None => Some(default_refs_path(manifest)).filter(|p| p.exists()),
    };
    let samples = match path {
        Some(p) => load_manifest(&p)?,
        None => inline,
    };
    Ok(samples.into_iter().map(|s| s.features).collect())
}

fn parse_splits(names: &[String]) -> Result<Vec<Split>> {
    names.iter().map(|n| n.parse::<Split>().map_err(CliError::from)).collect()
}

fn select(samples: &[LabeledSample], splits: &[Split]) -> Vec<LabeledSample> {
    samples.iter().filter(|s| splits.contains(&s.split)).cloned().collect()
}

fn check_width(samples: &[LabeledSample], model: &EncoderConfig) -> Result<()> {
    if let Some(s) = samples.first() {
        if s.features.cols() != model.input_dim {
            return Err(CliError::Usage(format!(
                "features have {} channels but the model expects input_dim = {}",
                s.features.cols(),
                model.input_dim
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- gen-data

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let path = a.common.config.as_deref();
    let mut spec: SyntheticSpec = overlay(&SyntheticSpec::default(), read_config(path)?, path)?;
    if let Some(v) = a.families {
        spec.n_families = v;
    }
    if let Some(v) = a.samples_per_family {
        spec.samples_per_family = v;
    }
    if let Some(v) = a.frames {
        spec.frames = v;
    }
    if let Some(v) = a.input_dim {
        spec.input_dim = v;
    }
    if let Some(v) = &a.holdout {
        spec.holdout_families = v.clone();
    }
    if let Some(v) = a.mos_noise_sd {
        spec.mos_noise_sd = v;
    }
    if let Some(v) = a.references {
        spec.n_references = v;
    }
    if let Some(v) = a.common.seed {
        spec.seed = v;
    }
    spec.validate()?;

    let out = a.common.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    let manifest = out.join("manifest.csv");
    check_new_file(&manifest, a.common.force)?;
    let corpus = generate_corpus(&spec)?;
    let refs = generate_references(&spec)?;
    for stale in [out.join("features"), out.join("refs")] {
        if stale.is_dir() {
            fs::remove_dir_all(&stale).map_err(|e| io(&stale, e))?;
        }
    }
    fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
    write_corpus(&out, &corpus)?;
    let refs_manifest = write_corpus(&out.join("refs"), &refs)?;
    write(&out.join("corpus.toml"), &to_toml(&spec)?)?;

    let mut counts: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for s in &corpus {
        let c = counts.entry(s.degradation.as_str()).or_default();
        match s.split {
            Split::Train => c[0] += 1,
            Split::Val => c[1] += 1,
            Split::Test | Split::Ref => c[2] += 1,
        }
    }
    let mut text = format!(
        "wrote {} samples to {} and {} references to {}\n",
        corpus.len(),
        manifest.display(),
        refs.len(),
        refs_manifest.display()
    );
    let _ = writeln!(text, "{:<7} {:<16} {:<9} {:>6} {:>5} {:>5}", "family", "corruption", "response", "train", "val", "test");
    for f in 0..spec.n_families {
        let (tag, corruption, response) = spec.family(f);
        let c = counts.get(tag.as_str()).copied().unwrap_or_default();
        let holdout = if spec.holdout_families.contains(&tag) { "  (held out)" } else { "" };
        let _ = writeln!(
            text,
            "{:<7} {:<16} {:<9} {:>6} {:>5} {:>5}{holdout}",
            tag,
            format!("{corruption:?}"),
            format!("{response:?}"),
            c[0],
            c[1],
            c[2]
        );
    }
    print!("{text}");
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub manifest: Option<PathBuf>,
    pub refs: Option<PathBuf>,
    /// Chain the frozen-encoder MOS head after a triplet run.
    pub nr: bool,
    pub train: TrainConfig,
    /// Settings of the MOS-head stage; only its optimisation fields are used.
    pub head: TrainConfig,
}

impl TrainRunConfig {
    fn for_mode(loss: LossMode) -> Self {
        Self {
            manifest: None,
            refs: None,
            nr: false,
            train: TrainConfig::for_mode(loss),
            head: TrainConfig {
                batch_size: 64,
                ..TrainConfig::for_mode(loss)
            },
        }
    }
}

#[derive(Serialize)]
struct StageSummary<'a> {
    stage: &'a str,
    loss_mode: &'a str,
    best_epoch: usize,
    best_criterion: Option<f64>,
    stats: &'a scoreq_core::training::TrainStats,
}

fn write_stage(dir: &Path, run: &TrainRun) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    write(&dir.join("metrics.csv"), &metrics_csv(&run.log))?;
    run.best.save(&dir.join("best.json"))?;
    run.last.save(&dir.join("final.json"))?;
    let summary = StageSummary {
        stage: &run.best.meta.stage,
        loss_mode: &run.best.meta.loss_mode,
        best_epoch: run.stats.best_epoch,
        best_criterion: run.best.meta.val_criterion,
        stats: &run.stats,
    };
    write(&dir.join("summary.json"), &to_json(&summary)?)
}

fn train(a: &TrainArgs) -> Result<()> {
    let path = a.common.config.as_deref();
    let file = read_config(path)?;
    let file_loss = file
        .as_ref()
        .and_then(|t| t.get("train"))
        .and_then(|t| t.get("loss_mode"))
        .and_then(|v| v.as_str())
        .map(str::parse::<LossMode>)
        .transpose()?;
    let loss = a.loss.or(file_loss).unwrap_or(LossMode::ScoreqAdaptive);
    let mut cfg: TrainRunConfig = overlay(&TrainRunConfig::for_mode(loss), file, path)?;
    cfg.train.loss_mode = loss;
    if let Some(v) = a.max_epochs {
        cfg.head.max_epochs = v;
    }
    let t = &mut cfg.train;
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr_encoder {
        t.lr_encoder = v;
    }
    if let Some(v) = a.lr_head {
        t.lr_head = v;
    }
    if let Some(v) = a.max_epochs {
        t.max_epochs = v;
    }
    if let Some(v) = a.patience {
        t.early_stop_patience = v;
    }
    if a.max_frames.is_some() {
        t.max_frames = a.max_frames;
    }
    if let Some(v) = a.margin {
        t.margin = v;
    }
    if let Some(v) = a.kappa {
        t.kappa = v;
    }
    if let Some(s) = a.common.seed {
        cfg.train.seed = s;
        cfg.head.seed = s;
    }
    if a.manifest.is_some() {
        cfg.manifest = a.manifest.clone();
    }
    if a.refs.is_some() {
        cfg.refs = a.refs.clone();
    }
    cfg.nr |= a.nr;

    cfg.train.validate()?;
    if cfg.nr {
        if !matches!(loss, LossMode::ScoreqFixed | LossMode::ScoreqAdaptive | LossMode::OfflineTriplet) {
            return Err(CliError::Usage("--nr chains a MOS head after a triplet loss; l2 already has one".into()));
        }
        cfg.head.validate()?;
    }
    let manifest = cfg.manifest.clone().ok_or(CliError::Missing("manifest"))?;
    let (splits, inline_refs) = partition(load_manifest(&manifest)?);
    check_width(&splits.train, &cfg.train.model)?;
    let refs = if loss.is_triplet() {
        let r = load_refs(&manifest, cfg.refs.as_deref(), inline_refs)?;
        if r.is_empty() {
            return Err(CliError::Usage("triplet training needs clean references (--refs)".into()));
        }
        r
    } else {
        Vec::new()
    };

    let out = a.common.out.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("{}-seed{}", loss.as_str(), cfg.train.seed))
    });
    prepare_dir(&out, a.common.force)?;
    write(&out.join("config.toml"), &to_toml(&cfg)?)?;

    let run = match loss {
        LossMode::L2 => train_l2_baseline(&splits.train, &splits.val, &cfg.train)?,
        LossMode::ScoreqFixed | LossMode::ScoreqAdaptive => train_scoreq(&splits.train, &splits.val, &refs, &cfg.train)?,
        LossMode::OfflineTriplet => train_offline(&splits.train, &splits.val, &refs, &cfg.train)?,
    };
    write_stage(&out, &run)?;
    println!(
        "{}: best epoch {} of {} (criterion {:.6}) -> {}",
        run.best.meta.stage,
        run.stats.best_epoch,
        run.stats.epochs,
        run.best.meta.val_criterion.unwrap_or(f64::NAN),
        out.join("best.json").display()
    );
    if cfg.nr {
        let head = train_nr_head(&run.best, &splits.train, &splits.val, &cfg.head)?;
        let dir = out.join("nr_head");
        write_stage(&dir, &head)?;
        println!(
            "nr_head: best epoch {} of {} (val mse {:.6}) -> {}",
            head.stats.best_epoch,
            head.stats.epochs,
            head.best.meta.val_criterion.unwrap_or(f64::NAN),
            dir.join("best.json").display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    checkpoint: Option<PathBuf>,
    manifest: Option<PathBuf>,
    mode: Option<EvalMode>,
    refs: Option<PathBuf>,
    layer: Option<Layer>,
    splits: Option<Vec<String>>,
    predictions: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalOutput {
    checkpoint: PathBuf,
    manifest: PathBuf,
    mode: ScoreKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    layer: Option<Layer>,
    splits: BTreeMap<String, EvalReport>,
}

fn eval(a: &EvalArgs) -> Result<()> {
    let path = a.common.config.as_deref();
    let c: EvalConfig = overlay(&EvalConfig::default(), read_config(path)?, path)?;
    let checkpoint = a.checkpoint.clone().or(c.checkpoint).ok_or(CliError::Missing("checkpoint"))?;
    let manifest = a.manifest.clone().or(c.manifest).ok_or(CliError::Missing("manifest"))?;
    let mode = a.mode.or(c.mode).unwrap_or(EvalMode::Nr);
    let layer = a.layer.or(c.layer).unwrap_or_default();
    let split_names = a.splits.clone().or(c.splits);
    let refs_path = a.refs.clone().or(c.refs);
    let predictions = a.predictions.clone().or(c.predictions);
    if let Some(p) = &predictions {
        check_new_file(p, a.common.force)?;
    }
    if let Some(p) = &a.common.out {
        check_new_file(p, a.common.force)?;
    }

    let ck = Checkpoint::load(&checkpoint)?;
    if mode == EvalMode::Nr && !ck.model.config.mos_head {
        return Err(CliError::Usage(format!(
            "{} has no MOS head; use --mode nmr or train with --nr",
            checkpoint.display()
        )));
    }
    let samples = load_manifest(&manifest)?;
    check_width(&samples, &ck.model.config)?;
    let splits = match &split_names {
        Some(n) => parse_splits(n)?,
        None => [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .filter(|sp| samples.iter().any(|s| s.split == *sp))
            .collect(),
    };
    let reference = if mode == EvalMode::Nmr {
        let inline: Vec<LabeledSample> = samples.iter().filter(|s| s.split == Split::Ref).cloned().collect();
        let refs = load_refs(&manifest, refs_path.as_deref(), inline)?;
        Some(ReferenceSet::from_samples(&ck.model, &refs, layer)?)
    } else {
        None
    };

    let mut reports = BTreeMap::new();
    let mut score_csv = String::from("id,score\n");
    for sp in splits {
        let chosen = select(&samples, &[sp]);
        if chosen.is_empty() {
            return Err(CliError::Usage(format!("split {} is empty in {}", sp.as_str(), manifest.display())));
        }
        let xs: Vec<FeatureSequence> = chosen.iter().map(|s| s.features.clone()).collect();
        let mos: Vec<f64> = chosen.iter().map(|s| s.mos).collect();
        let fams: Vec<String> = chosen.iter().map(|s| s.degradation.clone()).collect();
        let (kind, scores) = match &reference {
            Some(r) => (ScoreKind::Nmr, nmr_scores(&ck.model, &xs, r)?),
            None => (ScoreKind::Nr, ck.model.predict_mos_batch(&xs)?),
        };
        reports.insert(sp.as_str().to_string(), eval_report(kind, &scores, &mos, &fams)?);
        for (s, v) in chosen.iter().zip(&scores) {
            let _ = writeln!(score_csv, "{},{v}", s.id);
        }
    }
    let report = EvalOutput {
        checkpoint,
        manifest,
        mode: if mode == EvalMode::Nr { ScoreKind::Nr } else { ScoreKind::Nmr },
        layer: (mode == EvalMode::Nmr).then_some(layer),
        splits: reports,
    };
    if let Some(p) = &predictions {
        emit(Some(p), &score_csv, true)?;
    }
    emit(a.common.out.as_deref(), &to_json(&report)?, true)
}

// ---------------------------------------------------------------- bootstrap

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BootstrapFile {
    mos: Option<PathBuf>,
    pred_a: Option<PathBuf>,
    pred_b: Option<PathBuf>,
    bootstrap: BootstrapConfig,
}

/// CSV with a header row. Ids come from the `id` column (else the first);
/// values from the column named `value_col` (else the second). A data
/// manifest therefore works as a MOS file.
fn read_scores(path: &Path, value_col: &str, issues: &mut Vec<String>) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(err) => io(path, err),
            other => CliError::Usage(format!("{}: {other:?}", path.display())),
        })?;
    let name = path.display();
    let header = rdr.headers().map_err(|e| CliError::Usage(format!("{name}: {e}")))?.clone();
    let col = |n: &str| header.iter().position(|h| h.trim() == n);
    let id_col = col("id").unwrap_or(0);
    let val_col = col(value_col).unwrap_or(1);
    if header.len() < 2 {
        issues.push(format!("{name} line 1: expected an id column and a value column"));
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                issues.push(format!("{name} line {line}: {e}"));
                continue;
            }
        };
        let (Some(id), Some(raw)) = (rec.get(id_col), rec.get(val_col)) else {
            issues.push(format!("{name} line {line}: expected {} fields, found {}", header.len(), rec.len()));
            continue;
        };
        let id = id.trim().to_string();
        match raw.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => {
                if !seen.insert(id.clone()) {
                    issues.push(format!("{name} line {line}: duplicate id {id:?}"));
                } else {
                    out.push((id, v));
                }
            }
            _ => issues.push(format!("{name} line {line}: value {raw:?} is not a finite number")),
        }
    }
    Ok(out)
}

/// Aligns both prediction files and the MOS values on model A's id order.
/// The prediction files must cover the same ids; the MOS file may hold more.
fn align(
    mos: &[(String, f64)],
    (a_path, a): (&Path, &[(String, f64)]),
    (b_path, b): (&Path, &[(String, f64)]),
    issues: &mut Vec<String>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mos: HashMap<&str, f64> = mos.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    let by_b: HashMap<&str, f64> = b.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    let (mut y, mut pa, mut pb) = (Vec::new(), Vec::new(), Vec::new());
    for (id, va) in a {
        match (mos.get(id.as_str()), by_b.get(id.as_str())) {
            (Some(m), Some(vb)) => {
                y.push(*m);
                pa.push(*va);
                pb.push(*vb);
            }
            (m, vb) => {
                if m.is_none() {
                    issues.push(format!("{}: id {id:?} has no MOS", a_path.display()));
                }
                if vb.is_none() {
                    issues.push(format!("{}: missing id {id:?}", b_path.display()));
                }
            }
        }
    }
    let a_ids: HashSet<&str> = a.iter().map(|(id, _)| id.as_str()).collect();
    for (id, _) in b {
        if !a_ids.contains(id.as_str()) {
            issues.push(format!("{}: missing id {id:?}", a_path.display()));
        }
    }
    (y, pa, pb)
}

fn bootstrap(a: &BootstrapArgs) -> Result<()> {
    let path = a.common.config.as_deref();
    let c: BootstrapFile = overlay(&BootstrapFile::default(), read_config(path)?, path)?;
    let mut settings = c.bootstrap;
    let mos_path = a.mos.clone().or(c.mos).ok_or(CliError::Missing("mos"))?;
    let a_path = a.pred_a.clone().or(c.pred_a).ok_or(CliError::Missing("pred_a"))?;
    let b_path = a.pred_b.clone().or(c.pred_b).ok_or(CliError::Missing("pred_b"))?;
    if let Some(v) = &a.name_a {
        settings.name_a = v.clone();
    }
    if let Some(v) = &a.name_b {
        settings.name_b = v.clone();
    }
    if let Some(v) = a.iterations {
        settings.iterations = v;
    }
    if let Some(v) = a.confidence {
        settings.confidence = v;
    }
    if let Some(v) = a.correlation {
        settings.correlation = v.into();
    }
    if let Some(v) = a.common.seed {
        settings.seed = v;
    }
    if let Some(out) = &a.common.out {
        check_new_file(out, a.common.force)?;
    }

    let mut issues = Vec::new();
    let mos = read_scores(&mos_path, "mos", &mut issues)?;
    let pa = read_scores(&a_path, "score", &mut issues)?;
    let pb = read_scores(&b_path, "score", &mut issues)?;
    let (y, ya, yb) = align(&mos, (&a_path, &pa), (&b_path, &pb), &mut issues);
    if !issues.is_empty() {
        return Err(CliError::Input {
            what: "bootstrap inputs".into(),
            issues,
        });
    }
    let report: BootstrapReport = bootstrap_compare(&y, &ya, &yb, &settings)?;
    print!("{}", report.table());
    if let Some(out) = &a.common.out {
        emit(Some(out), &to_json(&report)?, true)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- diagnose

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DiagnoseConfig {
    checkpoint: Option<PathBuf>,
    manifest: Option<PathBuf>,
    refs: Option<PathBuf>,
    layer: Option<Layer>,
    splits: Option<Vec<String>>,
    k: Option<usize>,
    seed: Option<u64>,
}

fn diagnose(a: &DiagnoseArgs) -> Result<()> {
    let path = a.common.config.as_deref();
    let c: DiagnoseConfig = overlay(&DiagnoseConfig::default(), read_config(path)?, path)?;
    let checkpoint = a.checkpoint.clone().or(c.checkpoint).ok_or(CliError::Missing("checkpoint"))?;
    let manifest = a.manifest.clone().or(c.manifest).ok_or(CliError::Missing("manifest"))?;
    let layer = a.layer.or(c.layer).unwrap_or_default();
    let splits = parse_splits(&a.splits.clone().or(c.splits).unwrap_or_else(|| vec!["test".into()]))?;
    let k = a.k.or(c.k);
    let seed = a.common.seed.or(c.seed).unwrap_or(0);
    let out = a.common.out.clone().unwrap_or_else(|| PathBuf::from("diagnostics"));

    let ck = Checkpoint::load(&checkpoint)?;
    let all = load_manifest(&manifest)?;
    check_width(&all, &ck.model.config)?;
    let samples = select(&all, &splits);
    let inline: Vec<LabeledSample> = all.iter().filter(|s| s.split == Split::Ref).cloned().collect();
    let refs = load_refs(&manifest, a.refs.as_deref().or(c.refs.as_deref()), inline)?;
    let report = diagnose_embeddings(&ck.model, &samples, &refs, layer, k, seed)?;

    prepare_dir(&out, a.common.force)?;
    write(&out.join("report.json"), &to_json(&report)?)?;
    report.write_embeddings_csv(&out.join("embeddings_2d.csv"))?;
    println!(
        "layer={} n={} k={} nmi={:.4} pc_dist_mos={:.4} explained_variance=[{:.4}, {:.4}] -> {}",
        if layer == Layer::Encoder { "encoder" } else { "projection" },
        report.n,
        report.k,
        report.nmi,
        report.pc_dist_mos,
        report.explained_variance[0],
        report.explained_variance[1],
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- bench

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    pub reps: usize,
    pub warmup: usize,
    pub loss: LossMode,
    pub model: EncoderConfig,
    pub frames: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_sizes: vec![32, 64, 128],
            reps: 20,
            warmup: 3,
            loss: LossMode::ScoreqAdaptive,
            model: EncoderConfig::default(),
            frames: 24,
            seed: 0,
        }
    }
}

pub const MIN_BENCH_REPS: usize = 20;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRow {
    pub batch_size: usize,
    pub l2: StepTiming,
    pub scoreq: StepTiming,
    /// Median SCOREQ step time over median L2 step time.
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:>6} {:>12} {:>12} {:>7} {:>12} {:>12}\n",
            "N", "l2 ms", "scoreq ms", "ratio", "valid", "active"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>6} {:>12.3} {:>12.3} {:>7.3} {:>12} {:>12}",
                r.batch_size,
                r.l2.median_seconds * 1e3,
                r.scoreq.median_seconds * 1e3,
                r.ratio,
                r.scoreq.valid_triplets,
                r.scoreq.active_triplets
            );
        }
        let _ = writeln!(
            out,
            "median of {} reps after {} warmup steps; loss {}",
            self.config.reps,
            self.config.warmup,
            self.config.loss.as_str()
        );
        out
    }
}

/// Times L2 against the configured triplet loss at every batch size.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.reps < MIN_BENCH_REPS {
        return Err(CliError::Usage(format!("bench needs at least {MIN_BENCH_REPS} reps")));
    }
    if !matches!(cfg.loss, LossMode::ScoreqFixed | LossMode::ScoreqAdaptive) {
        return Err(CliError::Usage("bench compares l2 with scoreq_fixed or scoreq_adaptive".into()));
    }
    let largest = cfg.batch_sizes.iter().copied().max().ok_or(CliError::Missing("batch_sizes"))?;
    let spec = SyntheticSpec {
        samples_per_family: largest,
        frames: cfg.frames,
        input_dim: cfg.model.input_dim,
        seed: cfg.seed,
        ..Default::default()
    };
    let corpus = generate_corpus(&spec)?;
    // families are stored contiguously; striding mixes them
    let pool: Vec<&LabeledSample> = corpus.iter().step_by(spec.n_families).collect();
    let mut rows = Vec::new();
    for &n in &cfg.batch_sizes {
        let xs: Vec<FeatureSequence> = pool[..n].iter().map(|s| s.features.clone()).collect();
        let ys: Vec<f64> = pool[..n].iter().map(|s| s.mos).collect();
        let tc = |mode| TrainConfig {
            model: cfg.model.clone(),
            seed: cfg.seed,
            ..TrainConfig::for_mode(mode)
        };
        let l2 = time_training_step(&tc(LossMode::L2), &xs, &ys, cfg.warmup, cfg.reps)?;
        let scoreq = time_training_step(&tc(cfg.loss), &xs, &ys, cfg.warmup, cfg.reps)?;
        rows.push(BenchRow {
            batch_size: n,
            ratio: scoreq.median_seconds / l2.median_seconds,
            l2,
            scoreq,
        });
    }
    Ok(BenchReport {
        config: cfg.clone(),
        rows,
    })
}

fn bench(a: &BenchArgs) -> Result<()> {
    let path = a.common.config.as_deref();
    let mut cfg: BenchConfig = overlay(&BenchConfig::default(), read_config(path)?, path)?;
    if let Some(v) = &a.batch_sizes {
        cfg.batch_sizes = v.clone();
    }
    if let Some(v) = a.reps {
        cfg.reps = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup = v;
    }
    if let Some(v) = a.loss {
        cfg.loss = v;
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    if let Some(out) = &a.common.out {
        check_new_file(out, a.common.force)?;
    }
    let report = run_bench(&cfg)?;
    print!("{}", report.table());
    if let Some(out) = &a.common.out {
        emit(Some(out), &to_json(&report)?, true)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- protocol

fn protocol(a: &ProtocolArgs) -> Result<()> {
    let path = a.common.config.as_deref();
    let mut cfg: ProtocolConfig = overlay(&ProtocolConfig::default(), read_config(path)?, path)?;
    if let Some(v) = &a.folds {
        cfg.folds = v.clone();
    }
    match (&a.seeds, a.common.seed) {
        (Some(v), _) => cfg.seeds = v.clone(),
        (None, Some(s)) => cfg.seeds = vec![s],
        (None, None) => {}
    }
    if let Some(v) = a.bootstrap_iterations {
        cfg.bootstrap_iterations = v;
    }
    if a.no_offline {
        cfg.offline = None;
    }
    cfg.validate()?;
    let out = a.common.out.clone().unwrap_or_else(|| PathBuf::from("protocol"));
    prepare_dir(&out, a.common.force)?;
    write(&out.join("config.toml"), &to_toml(&cfg)?)?;
    let runs = run_protocol(&cfg, |r| {
        eprintln!(
            "fold {} seed {}: scoreq pc {:.4}, l2 pc {:.4}, outcome {} ({:.1}s)",
            r.holdout, r.seed, r.scoreq.heldout_pc, r.l2.heldout_pc, r.bootstrap.outcome, r.seconds
        );
    })?;
    let summary = summarize(&runs);
    write(&out.join("runs.json"), &to_json(&runs)?)?;
    write(&out.join("summary.json"), &to_json(&summary)?)?;
    print!("{}", summary.table());
    Ok(())
}
