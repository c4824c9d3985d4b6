//! Subcommand implementations. Each returns the record it wrote.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cckd_core::adversarial::{evaluate_robustness, AdversarialSet};
use cckd_core::checkpoint::{load_network, save_network};
use cckd_core::data::{load_idx, synth_blobs};
use cckd_core::distill::{run_distillation, DistillReport};
use cckd_core::metrics::{accuracy, predict_labels, sample_efficiency, PredictionLedger, Rate};
use cckd_core::{Architecture, Dataset, Error, Network, Regime, Result, Role, Split};

use crate::config::{DataSource, RunConfig};
use crate::record::{Efficiency, EpochRecord, FinalMetrics, RunRecord, Summary};

/// Train and test splits named by the config.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset configured: set `data_dir` or `data`".into()))?;
    let (train, test) = match data {
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            load_idx(train_images, train_labels, Split::Train, cfg.limit)?,
            load_idx(test_images, test_labels, Split::Test, cfg.limit)?,
        ),
        DataSource::Synth {
            classes,
            dim,
            per_class,
            spread,
            seed,
        } => {
            let make = |s, split| synth_blobs(*classes, *dim, *per_class, *spread, s, split);
            let train = make(*seed, Split::Train)?;
            let test = make(seed.wrapping_add(1), Split::Test)?;
            match cfg.limit {
                Some(l) => (train.take_first(l.min(train.len())), test.take_first(l.min(test.len()))),
                None => (train, test),
            }
        }
    };
    if train.num_classes() != test.num_classes() {
        return Err(Error::Consistency(format!(
            "train split has {} classes, test split {}",
            train.num_classes(),
            test.num_classes()
        )));
    }
    Ok((train, test))
}

fn build(arch: &Architecture, data: &Dataset, role: Role, seed: u64) -> Result<Network> {
    let layers = arch.layers(data.sample_shape(), data.num_classes())?;
    Network::new(data.sample_shape().to_vec(), layers, role, seed)
}

/// Names the architecture of `net` when it matches a known family.
pub fn describe_arch(net: &Network) -> String {
    let (shape, k) = (net.input_shape(), net.num_classes());
    for arch in [Architecture::Lenet5, Architecture::Lenet5Half] {
        if arch.layers(shape, k).ok().as_deref() == Some(net.layers()) {
            return arch.to_string();
        }
    }
    let mut hidden: Vec<usize> = net
        .layers()
        .iter()
        .filter_map(|l| match *l {
            cckd_core::LayerSpec::Dense { out_units, .. } => Some(out_units),
            _ => None,
        })
        .collect();
    hidden.pop();
    let mlp = Architecture::Mlp(hidden);
    if mlp.layers(shape, k).ok().as_deref() == Some(net.layers()) {
        mlp.to_string()
    } else {
        "custom".to_owned()
    }
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

fn out_path(cfg: &RunConfig, name: &str, ext: &str) -> PathBuf {
    cfg.out_dir.join(format!("{name}.{ext}"))
}

fn base_record(cfg: &RunConfig, command: &str, name: &str) -> RunRecord {
    RunRecord {
        command: command.to_owned(),
        name: name.to_owned(),
        config: cfg.echo().into_iter().collect(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        epochs: Vec::new(),
        final_metrics: FinalMetrics::default(),
        lambda_summary: None,
        artifacts: BTreeMap::new(),
        optimizer_steps: None,
        wall_clock_seconds: 0.0,
    }
}

fn epoch_records(report: &DistillReport) -> Vec<EpochRecord> {
    report
        .epochs
        .iter()
        .map(|e| EpochRecord {
            epoch: e.epoch,
            train_loss: e.mean_loss,
            test_accuracy: e.test_accuracy,
            included: e.included,
            presented: e.presented,
        })
        .collect()
}

fn efficiency(report: &DistillReport) -> Result<Efficiency> {
    let e = sample_efficiency(&report.usage)?;
    Ok(Efficiency {
        used: e.used,
        total: e.total,
        fraction: e.fraction,
        alpha: report.usage.alpha,
        display: e.display(),
    })
}

/// `train`: separate training from scratch.
pub fn cmd_train(cfg: &RunConfig) -> Result<RunRecord> {
    let start = Instant::now();
    if cfg.regime != Regime::Separate {
        return Err(Error::Config(format!(
            "`train` runs regime separate; got {} (use `distill`)",
            cfg.regime
        )));
    }
    let (train, test) = load_data(cfg)?;
    let name = cfg.name.clone().unwrap_or_else(|| cfg.role.as_str().to_owned());
    let mut net = build(&cfg.arch, &train, cfg.role, cfg.init_seed())?;
    let report = run_distillation(&cfg.plan(), None, &mut net, &train, Some(&test))?;

    ensure_out_dir(cfg)?;
    let ckpt = out_path(cfg, &name, "ckpt");
    save_network(&ckpt, &net)?;
    let mut rec = base_record(cfg, "train", &name);
    rec.epochs = epoch_records(&report);
    rec.final_metrics.test_accuracy = report.epochs.last().and_then(|e| e.test_accuracy);
    rec.final_metrics.train_accuracy = Some(accuracy(&net, &train)?);
    rec.optimizer_steps = Some(report.optimizer_steps);
    rec.artifacts.insert("checkpoint".into(), ckpt.display().to_string());
    finish(cfg, rec, start)
}

fn finish(cfg: &RunConfig, mut rec: RunRecord, start: Instant) -> Result<RunRecord> {
    let path = out_path(cfg, &rec.name, "json");
    rec.artifacts.insert("record".into(), path.display().to_string());
    rec.wall_clock_seconds = start.elapsed().as_secs_f64();
    rec.write(&path)?;
    Ok(rec)
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` must be set")))
}

/// Loads a checkpoint and checks its layers against `arch` on `data`.
pub fn load_checked(path: &Path, arch: &Architecture, data: &Dataset) -> Result<Network> {
    let net = load_network(path)?;
    let want = arch.layers(data.sample_shape(), data.num_classes())?;
    if net.input_shape() != data.sample_shape() || net.layers() != want.as_slice() {
        return Err(Error::Checkpoint(format!(
            "{} holds a {} network, config expects {arch}",
            path.display(),
            describe_arch(&net)
        )));
    }
    Ok(net)
}

/// `distill`: trains a student from a frozen teacher checkpoint.
pub fn cmd_distill(cfg: &RunConfig) -> Result<RunRecord> {
    let start = Instant::now();
    if !cfg.regime.needs_teacher() {
        return Err(Error::Config(format!(
            "regime {} does not use a teacher (use `train`)",
            cfg.regime
        )));
    }
    let teacher_path = require(&cfg.teacher_checkpoint, "teacher_checkpoint")?;
    let (train, test) = load_data(cfg)?;
    let teacher = load_checked(teacher_path, &cfg.teacher_arch, &train)?;
    let name = cfg.name.clone().unwrap_or_else(|| cfg.regime.to_string());
    let mut student = build(&cfg.arch, &train, Role::Student, cfg.init_seed())?;
    let report = run_distillation(&cfg.plan(), Some(&teacher), &mut student, &train, Some(&test))?;

    ensure_out_dir(cfg)?;
    let ckpt = out_path(cfg, &name, "ckpt");
    save_network(&ckpt, &student)?;
    let ledger = PredictionLedger::evaluate(&teacher, &student, &train)?;
    let mut rec = base_record(cfg, "distill", &name);
    rec.epochs = epoch_records(&report);
    rec.final_metrics = FinalMetrics {
        test_accuracy: report.epochs.last().and_then(|e| e.test_accuracy),
        train_accuracy: Some(accuracy(&student, &train)?),
        eta_s: ledger.success_rate().value(),
        eta_f: ledger.failure_rate().value(),
        efficiency: Some(efficiency(&report)?),
        ..Default::default()
    };
    rec.lambda_summary = report.lambdas.as_deref().and_then(Summary::of);
    rec.optimizer_steps = Some(report.optimizer_steps);
    rec.artifacts.insert("checkpoint".into(), ckpt.display().to_string());
    rec.artifacts.insert("teacher".into(), teacher_path.display().to_string());
    finish(cfg, rec, start)
}

/// `attack`: crafts FGSM samples from the first training samples.
pub fn cmd_attack(cfg: &RunConfig) -> Result<RunRecord> {
    let start = Instant::now();
    let source_path = require(&cfg.source_checkpoint, "source_checkpoint")?;
    let source = load_network(source_path)?;
    let (train, _) = load_data(cfg)?;
    let id = source_path
        .file_stem()
        .map_or_else(|| "source".to_owned(), |s| s.to_string_lossy().into_owned());
    let adv = AdversarialSet::craft_from(
        &source,
        &train,
        cfg.attack_samples,
        cfg.epsilon,
        cfg.max_iters,
        &id,
    )?;
    let name = cfg.name.clone().unwrap_or_else(|| "adversarial".to_owned());
    ensure_out_dir(cfg)?;
    let path = out_path(cfg, &name, "adv");
    adv.save(&path)?;
    let mut rec = base_record(cfg, "attack", &name);
    rec.final_metrics.attack_success_rate = Some(adv.success_rate());
    rec.final_metrics.adversarial_accuracy = Some(evaluate_robustness(&source, &adv)?);
    rec.artifacts.insert("adversarial_set".into(), path.display().to_string());
    rec.artifacts.insert("source".into(), source_path.display().to_string());
    finish(cfg, rec, start)
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub role: Role,
    pub arch: String,
    pub params: usize,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub eta_s: Rate,
    pub eta_f: Rate,
    pub adversarial_accuracy: Option<f64>,
}

pub const EVAL_COLUMNS: &str =
    "model,role,arch,params,test_accuracy,train_accuracy,eta_s,eta_f,adversarial_accuracy";

impl EvalRow {
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.model,
            self.role.as_str(),
            self.arch,
            self.params,
            self.test_accuracy,
            self.train_accuracy,
            self.eta_s,
            self.eta_f,
            opt(self.adversarial_accuracy)
        )
    }
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// `eval`: compares the teacher and every listed checkpoint.
///
/// Rates are measured on the training split against the teacher; accuracy
/// on the test split; adversarial accuracy on the configured set.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(RunRecord, Vec<EvalRow>)> {
    let start = Instant::now();
    let teacher_path = require(&cfg.teacher_checkpoint, "teacher_checkpoint")?;
    let (train, test) = load_data(cfg)?;
    let teacher = load_network(teacher_path)?;
    let adv = match &cfg.adversarial_set {
        Some(p) => Some(AdversarialSet::load(p)?),
        None => None,
    };
    let teacher_train = predict_labels(&teacher, &train)?;
    let mut paths = vec![teacher_path.to_path_buf()];
    paths.extend(cfg.checkpoints.iter().cloned());
    let mut rows = Vec::with_capacity(paths.len());
    for path in &paths {
        let net = load_network(path)?;
        let student_train = predict_labels(&net, &train)?;
        let ledger = PredictionLedger::from_predictions(train.labels(), &teacher_train, &student_train)?;
        rows.push(EvalRow {
            model: stem(path),
            role: net.role(),
            arch: describe_arch(&net),
            params: net.param_count(),
            test_accuracy: accuracy(&net, &test)?,
            train_accuracy: cckd_core::metrics::accuracy_of(&student_train, train.labels()),
            eta_s: ledger.success_rate(),
            eta_f: ledger.failure_rate(),
            adversarial_accuracy: adv.as_ref().map(|a| evaluate_robustness(&net, a)).transpose()?,
        });
    }
    let name = cfg.name.clone().unwrap_or_else(|| "eval".to_owned());
    ensure_out_dir(cfg)?;
    let csv_path = out_path(cfg, &name, "csv");
    let mut csv = format!("{EVAL_COLUMNS}\n");
    for r in &rows {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    std::fs::write(&csv_path, csv)?;
    let mut rec = base_record(cfg, "eval", &name);
    rec.artifacts.insert("csv".into(), csv_path.display().to_string());
    for (i, p) in paths.iter().enumerate() {
        rec.artifacts.insert(format!("model.{i}"), p.display().to_string());
    }
    if let Some(p) = &cfg.adversarial_set {
        rec.artifacts.insert("adversarial_set".into(), p.display().to_string());
    }
    Ok((finish(cfg, rec, start)?, rows))
}

/// `report`: sample-efficiency table over distillation records.
///
/// Reads `records` when given, otherwise every `*.json` record of a
/// `distill` run in `out_dir`. Writes `<name>.csv` and returns the rendered
/// table.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let paths: Vec<PathBuf> = if cfg.records.is_empty() {
        let mut found: Vec<PathBuf> = std::fs::read_dir(&cfg.out_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        found.sort();
        found
    } else {
        cfg.records.clone()
    };
    let mut records = Vec::new();
    for p in &paths {
        let r = RunRecord::read(p)?;
        if r.command == "distill" {
            records.push(r);
        }
    }
    if records.is_empty() {
        return Err(Error::Config("no distill run records to report".into()));
    }
    let mut csv = String::from("run,regime,sample_efficiency,alpha,test_accuracy\n");
    let mut table = format!(
        "{:<16} {:<12} {:<32} {:<8} {}\n",
        "run", "regime", "sample efficiency", "alpha", "test accuracy"
    );
    for r in &records {
        let regime = r.config.get("regime").map_or("?", String::as_str);
        let eff = r.final_metrics.efficiency.as_ref();
        let shown = eff.map_or_else(|| "n/a".to_owned(), |e| e.display.clone());
        let alpha = eff.map_or_else(|| "n/a".to_owned(), |e| e.alpha.to_string());
        let acc = r
            .final_metrics
            .test_accuracy
            .map_or_else(|| "n/a".to_owned(), |a| format!("{a:.4}"));
        let _ = writeln!(csv, "{},{},{},{},{}", r.name, regime, shown, alpha, acc);
        let _ = writeln!(table, "{:<16} {:<12} {:<32} {:<8} {}", r.name, regime, shown, alpha, acc);
    }
    let name = cfg.name.clone().unwrap_or_else(|| "report".to_owned());
    ensure_out_dir(cfg)?;
    std::fs::write(out_path(cfg, &name, "csv"), csv)?;
    Ok(table)
}
