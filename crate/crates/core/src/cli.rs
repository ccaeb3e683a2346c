//! `fairvit` command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{
    load_dataset, route, split_groups, synth_biased_dataset, train_val_split, write_dataset, Image,
    Sample, SENSITIVE_ATTR, TARGET_ATTR,
};
use crate::error::{Error, Result};
use crate::explain::{gradient_attention_rollout, render_heatmap};
use crate::metrics::{EvalRecord, FairnessReport};
use crate::rng::substream;
use crate::trainer::{fit, predict, Checkpoint};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const RUN_LOG: &str = "run.log";
pub const MODEL_FILE: &str = "model.fvit";
pub const SPLIT_FILE: &str = "split.txt";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(name = "fairvit", version, about = "Fairness-aware vision transformer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset whose background tracks the label.
    Synth {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0.8)]
        correlation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign the samples of a dataset to parts.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        groups: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = TARGET_ATTR)]
        target_attr: String,
        #[arg(long, default_value = SENSITIVE_ATTR)]
        sensitive_attr: String,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoints plus a run log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` override, repeatable.
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the fairness report of a checkpoint on a labelled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = TARGET_ATTR)]
        target_attr: String,
        #[arg(long, default_value = SENSITIVE_ATTR)]
        sensitive_attr: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write rollout heat maps for images.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "image", required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        label: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// An error plus the exit status it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Self {
            code: exit_code(&error),
            error,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Contract(_) => EXIT_USAGE,
        Error::NonFinite { .. } => EXIT_NUMERIC,
        Error::Shape(_)
        | Error::Parse { .. }
        | Error::UndefinedMetric(_)
        | Error::Format(_)
        | Error::Io { .. } => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the command, returns the exit status.
pub fn run<I, A>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "fairvit: {}", f.error);
            f.code
        }
    }
}

fn dispatch(cmd: Command, stdout: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::Synth {
            n,
            correlation,
            seed,
            image_size,
            out,
        } => {
            let samples = synth_biased_dataset(n, correlation, image_size, seed)?;
            write_dataset(&out, &samples, TARGET_ATTR, SENSITIVE_ATTR)?;
            let snap = format!(
                "n = {n}\ncorrelation = {correlation}\nseed = {seed}\nimage_size = {image_size}\n"
            );
            write_file(&out.join(SNAPSHOT_FILE), &snap)?;
            let _ = writeln!(stdout, "wrote {n} samples to {}", out.display());
            Ok(())
        }
        Command::Split {
            data,
            groups,
            seed,
            target_attr,
            sensitive_attr,
            out,
        } => {
            let samples = load_dataset(&data, &target_attr, &sensitive_attr)?;
            let s: Vec<u8> = samples.iter().map(|x| x.s).collect();
            let a = split_groups(&s, groups, seed)?;
            let ids: Vec<String> = samples.iter().map(|x| x.id.clone()).collect();
            write_file(&out, &a.render(&ids))?;
            Ok(())
        }
        Command::Train {
            config,
            set,
            data,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p).map_err(|error| Failure {
                    code: EXIT_USAGE,
                    error,
                })?,
                None => RunConfig::default(),
            };
            for s in &set {
                cfg.apply_override(s)?;
            }
            if let Some(d) = data {
                cfg.train_data = Some(d);
            }
            if let Some(o) = out {
                cfg.out_dir = Some(o);
            }
            cfg.train.validate()?;
            train(&cfg, stdout)
        }
        Command::Eval {
            checkpoint,
            data,
            target_attr,
            sensitive_attr,
            out,
        } => {
            let ck = Checkpoint::<f32>::load(&checkpoint)?;
            let samples = load_dataset(&data, &target_attr, &sensitive_attr)?;
            let report = evaluate(&ck, &samples)?;
            create_dir(&out)?;
            write_file(&out.join(REPORT_FILE), &report.to_kv())?;
            let snap = format!(
                "checkpoint = {}\ndata = {}\ntarget_attr = {target_attr}\nsensitive_attr = {sensitive_attr}\n",
                checkpoint.display(),
                data.display()
            );
            write_file(&out.join(SNAPSHOT_FILE), &snap)?;
            let _ = write!(stdout, "{}", report.to_kv());
            Ok(())
        }
        Command::Explain {
            checkpoint,
            images,
            label,
            out,
        } => {
            let ck = Checkpoint::<f32>::load(&checkpoint)?;
            create_dir(&out)?;
            for path in &images {
                let image = Image::read(path)?;
                let r = gradient_attention_rollout(&ck.model, &ck.bank, &image, label)?;
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "image".into());
                render_heatmap(
                    &r,
                    &ck.model.config,
                    out.join(format!("{stem}.heat.csv")),
                    out.join(format!("{stem}.heat.pgm")),
                )?;
            }
            let mut snap = format!("checkpoint = {}\nlabel = {label}\n", checkpoint.display());
            for p in &images {
                snap.push_str(&format!("image = {}\n", p.display()));
            }
            write_file(&out.join(SNAPSHOT_FILE), &snap)?;
            Ok(())
        }
    }
}

/// Predictions come from images alone; `s` only enters the counting.
pub fn evaluate(ck: &Checkpoint<f32>, samples: &[Sample]) -> Result<FairnessReport> {
    let images: Vec<Image> = samples.iter().map(|s| s.image.clone()).collect();
    let preds = predict(&ck.model, &ck.bank, &images)?;
    let records = samples
        .iter()
        .zip(preds)
        .map(|(s, p)| {
            let p = u8::try_from(p)
                .ok()
                .filter(|&p| p <= 1)
                .ok_or_else(|| Error::config("fairness metrics need a binary classifier"))?;
            EvalRecord::new(p, s.y, s.s)
        })
        .collect::<Result<Vec<_>>>()?;
    FairnessReport::from_records(&records)
}

fn train(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<(), Failure> {
    let data_dir = cfg
        .train_data
        .as_ref()
        .ok_or_else(|| Error::config("no training data: set train_data or pass --data"))?;
    let out = cfg
        .out_dir
        .as_ref()
        .ok_or_else(|| Error::config("no output directory: set out_dir or pass --out"))?;
    let tc = &cfg.train;
    let samples = load_dataset(data_dir, &cfg.target_attr, &cfg.sensitive_attr)?;
    let (train_set, val_set) =
        train_val_split(&samples, tc.val_ratio, &mut substream(tc.seed, "val-split"))?;
    if val_set.is_empty() {
        return Err(Error::config("validation split is empty").into());
    }
    let s: Vec<u8> = train_set.iter().map(|x| x.s).collect();
    let assignment = split_groups(&s, tc.groups, tc.seed)?;
    let routed = route(&train_set, &assignment)?;
    let val: Vec<_> = val_set.iter().map(Sample::unlabeled_view).collect();

    create_dir(out)?;
    write_file(&out.join(SNAPSHOT_FILE), &cfg.snapshot())?;
    let ids: Vec<String> = train_set.iter().map(|x| x.id.clone()).collect();
    write_file(&out.join(SPLIT_FILE), &assignment.render(&ids))?;

    let mut log = String::new();
    let log_path = out.join(RUN_LOG);
    let result = fit::<f32>(&routed, &val, tc, |stats, state| {
        log.push_str(&stats.to_kv());
        log.push('\n');
        write_file(&log_path, &log)?;
        state
            .checkpoint()
            .save(out.join(format!("epoch_{}.fvit", stats.epoch)))?;
        let _ = writeln!(stdout, "{}", stats.to_kv());
        Ok(())
    });
    let fitted = match result {
        Ok(f) => f,
        Err(e) => {
            log.push_str(&format!("error={e}\n"));
            write_file(&log_path, &log)?;
            return Err(e.into());
        }
    };
    fitted.state.checkpoint().save(out.join(MODEL_FILE))?;
    Ok(())
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))
}
