//! Command-line front end.

mod config;

pub use config::{DataSection, EvalSection, FlatConfig, GradCheckSection, RunConfig, RunSection};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::Rng;
use serde_json::Value;

use crate::data::{
    generate_synthetic_dataset, load_image, read_manifest, scan_dataset, split_dataset, write_manifest, Partition,
    SynthOptions,
};
use crate::error::{Error, Result};
use crate::model::{build_model, load_checkpoint, render_summary, save_checkpoint, ModelConfig};
use crate::rng::stream;
use crate::tensor::{inject_conv_weight_grad_fault, Tensor};
use crate::train::{
    build_report, evaluate, gradient_check, train, write_confusion_csv, write_curves_csv, write_metrics_json,
    write_roc_csvs,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_VERIFICATION: i32 = 5;

const GRADCHECK_INPUT_STREAM: u64 = 0x4749;

#[derive(Debug, Parser)]
#[command(name = "fourcropnet", version, about = "Leaf disease classifier: training, evaluation and diagnostics")]
struct Cli {
    /// JSON file of flat `section.field` settings.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for initialization, splitting, shuffling and augmentation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for image decoding.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// 64-bit arithmetic for the gradient check (always on for `gradcheck`).
    #[arg(long = "f64", global = true)]
    use_f64: bool,
    /// Override a setting, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan, split and train; writes checkpoints, curves and the split manifest.
    Train {
        /// Dataset root with one directory per class.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on one partition of the saved split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// train, valid or test.
        #[arg(long)]
        part: Option<Partition>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print the predicted class and confidence for each image.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Print the layer table and parameter counts.
    Summary {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Write a procedural dataset with one texture per class.
    MakeSynth {
        #[arg(long, default_value_t = 15)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        size: u32,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
    },
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Version { .. } => EXIT_CONFIG,
        Error::Data(_) | Error::Io { .. } | Error::Decode { .. } | Error::Checksum { .. } | Error::LabelOutOfRange { .. } => {
            EXIT_DATA
        }
        Error::NonFiniteLoss { .. } | Error::DegenerateBatch { .. } => EXIT_NUMERICAL,
        Error::DimensionMismatch { .. } | Error::Precondition { .. } | Error::Json(_) => EXIT_INTERNAL,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let mut flat = match &cli.config {
        Some(path) => FlatConfig::from_file(path)?,
        None => FlatConfig::default(),
    };
    for o in &cli.overrides {
        flat.set_override(o)?;
    }
    if let Some(seed) = cli.seed {
        flat.set("train.seed", Value::from(seed));
    }
    if let Some(out) = &cli.out {
        flat.set("run.out_dir", Value::from(out.to_string_lossy().into_owned()));
    }
    if let Some(t) = cli.threads {
        flat.set("run.threads", Value::from(t));
    }
    match &cli.command {
        Command::Train { data, epochs } => {
            set_path(&mut flat, "data.root", data);
            if let Some(e) = epochs {
                flat.set("train.epochs", Value::from(*e));
            }
        }
        Command::Eval { checkpoint, data, part, manifest } => {
            set_path(&mut flat, "eval.checkpoint", checkpoint);
            set_path(&mut flat, "data.root", data);
            set_path(&mut flat, "data.manifest", manifest);
            if let Some(p) = part {
                flat.set("eval.partition", Value::from(p.to_string()));
            }
        }
        Command::Gradcheck { samples: Some(n), .. } => flat.set("gradcheck.samples", Value::from(*n)),
        _ => {}
    }
    let cfg = flat.resolve()?;
    // a second initialization in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.run.threads).build_global();
    if cli.use_f64 && !matches!(cli.command, Command::Gradcheck { .. }) {
        eprintln!("note: --f64 only changes the gradient check; this command runs in 32-bit");
    }

    match cli.command {
        Command::Train { .. } => cmd_train(cfg, &flat),
        Command::Eval { .. } => cmd_eval(&cfg),
        Command::Predict { checkpoint, images } => cmd_predict(&cfg, checkpoint, &images),
        Command::Summary { checkpoint } => cmd_summary(&cfg, checkpoint),
        Command::Gradcheck { inject_fault, .. } => cmd_gradcheck(&cfg, inject_fault),
        Command::MakeSynth { classes, per_class, size, noise } => {
            let opts = SynthOptions {
                num_classes: classes,
                per_class,
                image_size: size,
                noise,
            };
            cmd_make_synth(&cfg, &opts)
        }
    }
}

fn set_path(flat: &mut FlatConfig, key: &str, path: &Option<PathBuf>) {
    if let Some(p) = path {
        flat.set(key, Value::from(p.to_string_lossy().into_owned()));
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn checkpoint_path(cfg: &RunConfig, explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| cfg.eval.checkpoint.clone())
        .unwrap_or_else(|| cfg.run.out_dir.join("checkpoint_best.fcn"))
}

fn data_root(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .root
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset given; pass --data or set data.root".into()))
}

fn cmd_train(mut cfg: RunConfig, flat: &FlatConfig) -> Result<i32> {
    let root = data_root(&cfg)?.to_path_buf();
    let index = scan_dataset(&root)?;
    let found = index.class_count();
    if flat.contains("model.num_classes") && cfg.model.num_classes != found {
        return Err(Error::Config(format!(
            "model.num_classes is {} but {} has {found} class directories",
            cfg.model.num_classes,
            root.display()
        )));
    }
    cfg.model.num_classes = found;
    cfg.model.validate()?;

    let out = cfg.run.out_dir.clone();
    create_dir(&out)?;
    let effective = out.join("effective_config.json");
    fs::write(&effective, cfg.to_flat_json()?).map_err(|e| Error::io(&effective, e))?;

    let seed = cfg.train.seed;
    let split = split_dataset(&index, seed)?;
    write_manifest(&split, &out.join("split.csv"))?;
    eprintln!(
        "{} classes, {} images: {} train / {} valid / {} test",
        found,
        index.total_files(),
        split.train.len(),
        split.valid.len(),
        split.test.len()
    );

    let model = build_model::<f32>(&cfg.model, seed)?;
    let augment = cfg.train.augment.then_some(&cfg.augment);
    let outcome = train(model, &root, &split, &cfg.train, augment, &mut |r| {
        eprintln!(
            "epoch {:>4}  train loss {:.4} acc {:.4}  valid loss {:.4} acc {:.4}",
            r.epoch, r.train_loss, r.train_acc, r.valid_loss, r.valid_acc
        );
    })?;

    let names = index.class_names();
    write_curves_csv(&outcome.curve, &out.join("curves.csv"))?;
    save_checkpoint(&outcome.best, &names, &out.join("checkpoint_best.fcn"))?;
    save_checkpoint(&outcome.last, &names, &out.join("checkpoint_last.fcn"))?;
    let mut best = outcome.best;
    let test = evaluate(&mut best, &root, &split.test, cfg.train.batch_size)?;
    println!(
        "best epoch {} of {}: valid accuracy {:.4}, test accuracy {:.4}",
        outcome.best_epoch,
        outcome.curve.rows.len(),
        outcome.best_valid_accuracy,
        test.accuracy
    );
    println!("artifacts written to {}", out.display());
    Ok(EXIT_OK)
}

fn cmd_eval(cfg: &RunConfig) -> Result<i32> {
    let root = data_root(cfg)?;
    let ck = load_checkpoint::<f32>(&checkpoint_path(cfg, None))?;
    let classes = ck.model.config().num_classes;
    let index = scan_dataset(root)?;
    if index.class_count() != classes {
        return Err(Error::Config(format!(
            "checkpoint has {classes} classes but {} has {} class directories",
            root.display(),
            index.class_count()
        )));
    }
    if index.class_names() != ck.class_names {
        eprintln!("warning: class directory names differ from those stored in the checkpoint");
    }
    let manifest = cfg.data.manifest.clone().unwrap_or_else(|| cfg.run.out_dir.join("split.csv"));
    let split = read_manifest(&manifest, cfg.train.seed)?;
    let part = cfg.eval.partition;
    let samples = split.part(part);
    let mut model = ck.model;
    let ev = evaluate(&mut model, root, samples, cfg.train.batch_size)?;
    let (report, cm, roc) = build_report(&ev, &ck.class_names, &part.to_string(), cfg.eval.exclude_empty_classes)?;

    let out = &cfg.run.out_dir;
    create_dir(out)?;
    write_confusion_csv(&cm, &ck.class_names, &out.join("confusion.csv"))?;
    write_metrics_json(&report, &out.join("metrics.json"))?;
    write_roc_csvs(&roc, &ck.class_names, out)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{part}: {} samples, accuracy {:.4}, macro sensitivity {:.4}, macro specificity {:.4}, macro F1 {:.4}, macro AUC {:.4}",
        report.samples,
        report.accuracy,
        report.macro_sensitivity,
        report.macro_specificity,
        report.macro_f1,
        report.macro_auc
    );
    Ok(EXIT_OK)
}

fn cmd_predict(cfg: &RunConfig, checkpoint: Option<PathBuf>, images: &[PathBuf]) -> Result<i32> {
    let ck = load_checkpoint::<f32>(&checkpoint_path(cfg, checkpoint))?;
    let mut model = ck.model;
    let s = model.config().input_size;
    for path in images {
        let img = load_image(path, s)?.reshape(&[1, s, s, 3])?;
        let p = model.predict(&img)?[0];
        println!("{}\t{:.6}", ck.class_names[p.class], p.confidence);
    }
    Ok(EXIT_OK)
}

fn cmd_summary(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<i32> {
    let model_cfg: ModelConfig = match checkpoint {
        Some(path) => load_checkpoint::<f32>(&path)?.model.config().clone(),
        None => cfg.model.clone(),
    };
    print!("{}", render_summary(&model_cfg)?);
    Ok(EXIT_OK)
}

fn cmd_gradcheck(cfg: &RunConfig, inject_fault: bool) -> Result<i32> {
    let g = &cfg.gradcheck;
    if g.batch == 0 {
        return Err(Error::Config("gradcheck.batch must be >= 1".into()));
    }
    let model_cfg = ModelConfig {
        input_size: g.input_size,
        ..cfg.model.clone()
    };
    let seed = cfg.train.seed;
    let mut model = build_model::<f64>(&model_cfg, seed)?;
    let s = g.input_size;
    let mut rng = stream(seed, &[GRADCHECK_INPUT_STREAM]);
    let images = Tensor::from_fn(&[g.batch, s, s, 3], |_| rng.gen::<f64>());
    let labels: Vec<usize> = (0..g.batch).map(|i| i % model_cfg.num_classes).collect();

    inject_conv_weight_grad_fault(inject_fault);
    let report = gradient_check(&mut model, &images, &labels, &cfg.gradcheck_options());
    inject_conv_weight_grad_fault(false);
    let report = report?;

    println!("gradient check: {} scalars, 64-bit, epsilon {:e}", report.samples.len(), g.epsilon);
    println!("{:<24} {:>12}", "layer", "max rel err");
    for (layer, err) in &report.per_layer {
        println!("{layer:<24} {err:>12.3e}");
    }
    println!(
        "max relative error {:.3e} (tolerance {:.0e}): {}",
        report.max_error,
        report.tolerance,
        if report.passed { "PASS" } else { "FAIL" }
    );
    if report.passed {
        return Ok(EXIT_OK);
    }
    if let Some(w) = report.worst() {
        eprintln!(
            "gradient check failed; worst offender {}[{}]: analytic {:.6e}, numeric {:.6e}, relative error {:.3e}",
            w.param, w.index, w.analytic, w.numeric, w.rel_error
        );
    }
    Ok(EXIT_VERIFICATION)
}

fn cmd_make_synth(cfg: &RunConfig, opts: &SynthOptions) -> Result<i32> {
    let out = &cfg.run.out_dir;
    create_dir(out)?;
    let names = generate_synthetic_dataset(opts, cfg.train.seed, out)?;
    println!(
        "wrote {} images ({} classes x {}) to {}",
        names.len() * opts.per_class,
        names.len(),
        opts.per_class,
        out.display()
    );
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Data("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::LabelOutOfRange { label: 3, classes: 2 }), EXIT_DATA);
        let nf = Error::NonFiniteLoss {
            epoch: 1,
            batch: 1,
            learning_rate: 1.0,
        };
        assert_eq!(exit_code(&nf), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::precondition("op", "bad")), EXIT_INTERNAL);
    }

    #[test]
    fn usage_errors_exit_2_and_help_exits_0() {
        assert_eq!(run(["fourcropnet", "--help"]), EXIT_OK);
        assert_eq!(run(["fourcropnet", "train", "--epochs", "many"]), EXIT_CONFIG);
        assert_eq!(run(["fourcropnet", "eval", "--part", "holdout"]), EXIT_CONFIG);
    }

    #[test]
    fn train_without_data_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_string_lossy().into_owned();
        assert_eq!(run(["fourcropnet", "train", "--out", out.as_str()]), EXIT_CONFIG);
    }
}
