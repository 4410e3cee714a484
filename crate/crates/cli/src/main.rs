//! `grft`: pretrain, fine-tune, inspect masks and run ablations on the
//! synthetic transfer task.
//!
//! Exit codes: 0 success, 1 I/O or internal failure, 2 bad config or input,
//! 3 numeric failure (non-finite loss or gradient, failed oracle check).

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grft_core::data::gen_task;
use grft_core::harness::{
    ablate, evaluate, finetune, finetune_start, plan_masks, pretrain, AblationAxis, FineTuneVariant,
};
use grft_core::masking::{
    brute_force_best_cols, brute_force_best_rows, mask_objective, retained_energy, storage_comparison, LayerMask,
    MaskVariant, Selection, BRUTE_FORCE_MAX_ROWS,
};
use grft_core::model::{checkpoint_to_json, load_checkpoint};
use grft_core::{Dataset, GrftError, Matrix, ModelParams};
use serde_json::json;

use crate::config::RunConfig;

/// Why a command failed, mapped onto the exit code.
#[derive(Debug)]
pub enum Failure {
    User(String),
    Numeric(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::User(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::User(m) | Failure::Numeric(m) | Failure::Io(m) => m,
        }
    }
}

impl From<GrftError> for Failure {
    fn from(e: GrftError) -> Self {
        match e {
            GrftError::Numeric(_) => Failure::Numeric(e.to_string()),
            e if e.is_user_error() => Failure::User(e.to_string()),
            e => Failure::Io(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "grft", version, about = "Gradient-selected row/column fine-tuning on synthetic transfer tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (JSON). Defaults to the built-in reference experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the stage being run.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the source task and write a checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked, regularized fine-tuning of a checkpoint on the target task.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute masks for a checkpoint and print per-layer storage and
    /// gradient-energy figures.
    MaskReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Mask data as CSV (`y,x0,x1,...`) instead of the config's target task.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides `finetune.k`.
        #[arg(long)]
        k: Option<usize>,
        /// Overrides `finetune.variant` (row, col or sparse).
        #[arg(long)]
        variant: Option<FineTuneVariant>,
        /// Compare every small enough layer against exhaustive search.
        #[arg(long)]
        verify_oracle: bool,
        /// Directory for `masks.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune once per value of one hyperparameter, everything else fixed.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// k, lambda, regular_blocks, subsets_n, variant or norm.
        #[arg(long)]
        axis: AblationAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain { common, out } => run_pretrain(&common, &out),
        Command::Finetune { common, checkpoint, out } => run_finetune(&common, &checkpoint, &out),
        Command::MaskReport { common, checkpoint, data, k, variant, verify_oracle, out } => {
            run_mask_report(&common, &checkpoint, data.as_deref(), k, variant, verify_oracle, out.as_deref())
        }
        Command::Ablate { common, checkpoint, axis, values, out } => {
            run_ablate(&common, &checkpoint, axis, &values, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.pretrain.seed = seed;
        cfg.finetune.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<ModelParams, Failure> {
    load_checkpoint(path).map_err(|e| match e {
        GrftError::Io(io) => Failure::User(format!("cannot read checkpoint {}: {io}", path.display())),
        other => Failure::User(format!("checkpoint {}: {other}", path.display())),
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn out_dir(path: &Path) -> CmdResult {
    fs::create_dir_all(path).map_err(|e| Failure::Io(format!("cannot create {}: {e}", path.display())))
}

fn to_json(value: &impl serde::Serialize) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))
}

fn run_pretrain(common: &Common, out: &Path) -> CmdResult {
    let cfg = load_config(common)?;
    let task = gen_task::<f64>(&cfg.task)?;
    let model = pretrain(&task, &cfg.pretrain)?;
    let source_accuracy = evaluate(&model, &task.source)?;
    out_dir(out)?;
    write(&out.join("checkpoint.json"), checkpoint_to_json(&model)?)?;
    for (name, data) in [("source", &task.source), ("target_train", &task.target_train), ("target_test", &task.target_test)] {
        data.write_csv(out.join(format!("{name}.csv")))?;
    }
    let report = json!({ "config": cfg, "source_accuracy": source_accuracy });
    write(&out.join("pretrain_report.json"), to_json(&report)?)?;
    println!("source accuracy {source_accuracy:.4}; checkpoint written to {}", out.join("checkpoint.json").display());
    Ok(())
}

fn run_finetune(common: &Common, checkpoint: &Path, out: &Path) -> CmdResult {
    let cfg = load_config(common)?;
    let pre = load_model(checkpoint)?;
    let task = gen_task::<f64>(&cfg.task)?;
    let outcome = finetune(&pre, &task, &cfg.finetune)?;
    let mut report = outcome.report;
    report.config = json!({ "run": cfg, "checkpoint": checkpoint.display().to_string() });
    out_dir(out)?;
    write(&out.join("report.json"), to_json(&report)?)?;
    write(&out.join("epochs.csv"), report.epochs_csv())?;
    write(&out.join("masks.json"), outcome.masks.to_json()?)?;
    write(&out.join("checkpoint.json"), checkpoint_to_json(&outcome.model)?)?;
    println!(
        "{:?}: test accuracy {:.4}, {:.2}% trainable, {} mask bits",
        cfg.finetune.variant,
        report.final_accuracy,
        100.0 * report.trainable_fraction,
        report.storage_bits
    );
    Ok(())
}

fn run_mask_report(
    common: &Common,
    checkpoint: &Path,
    data: Option<&Path>,
    k: Option<usize>,
    variant: Option<FineTuneVariant>,
    verify_oracle: bool,
    out: Option<&Path>,
) -> CmdResult {
    let mut cfg = load_config(common)?;
    cfg.finetune.k = k.unwrap_or(cfg.finetune.k);
    cfg.finetune.variant = variant.unwrap_or(cfg.finetune.variant);
    cfg.validate()?;
    let Some(mask_variant) = cfg.finetune.variant.mask_variant() else {
        return Err(Failure::User("config field finetune.variant: mask-report needs row, col or sparse".into()));
    };
    let pre = load_model(checkpoint)?;
    let train: Dataset = match data {
        Some(path) => Dataset::read_csv(path, None)
            .map_err(|e| Failure::User(format!("mask data {}: {e}", path.display())))?,
        None => gen_task::<f64>(&cfg.task)?.target_train,
    };
    if train.dim() != pre.input_dim() {
        return Err(Failure::User(format!(
            "mask data has {} features but the checkpoint expects {}",
            train.dim(),
            pre.input_dim()
        )));
    }
    let start = finetune_start(&pre, train.num_classes, cfg.finetune.seed)?;
    let plan = plan_masks(&start, &train, &cfg.finetune)?;
    let grads = plan.grads.expect("masked variants carry their gradients");
    let k = cfg.finetune.k;

    let mut table = String::new();
    writeln!(
        table,
        "{:>5}  {:<9}  {:>9}  {:<6}  {:>12}  {:>12}  {:>12}  {:>14}  {:>14}",
        "layer", "role", "shape", "mask", "storage_bits", "sparse_bits", "dense_bits", "objective", "retained"
    )
    .unwrap();
    let mut oracle_lines = Vec::new();
    let mut oracle_failed = false;
    for (i, (layer, mask)) in start.layers().iter().zip(&plan.masks.layers).enumerate() {
        let (rows, cols) = layer.weight.shape();
        let h = &grads.layers[i].weight;
        let objective = mask_objective(h, mask)?;
        let (sparse_bits, dense_bits) = if matches!(mask.selection(), Selection::Full) {
            ("-".to_string(), "-".to_string())
        } else {
            let (_, sparse, dense) = storage_comparison(rows, cols, k.min(cols));
            (sparse.to_string(), dense.to_string())
        };
        writeln!(
            table,
            "{:>5}  {:<9}  {:>9}  {:<6}  {:>12}  {:>12}  {:>12}  {:>14.6e}  {:>14.6e}",
            i,
            format!("{:?}", layer.role).to_lowercase(),
            format!("{rows}x{cols}"),
            mask.variant_name(),
            mask.storage_bits(),
            sparse_bits,
            dense_bits,
            objective,
            retained_energy(h, mask)?
        )
        .unwrap();
        if verify_oracle && !matches!(mask.selection(), Selection::Full) {
            match oracle_objective(h, k, mask_variant) {
                Some(best) => {
                    let gap = objective - best?;
                    oracle_failed |= gap.abs() > 1e-12 * objective.abs().max(1.0);
                    oracle_lines.push(format!("layer {i}: greedy {objective:.6e}, exhaustive {:.6e}, gap {gap:.3e}", objective - gap));
                }
                None => oracle_lines.push(format!("layer {i}: skipped, larger than the {BRUTE_FORCE_MAX_ROWS}-way enumeration limit")),
            }
        }
    }
    print!("{table}");
    println!("total storage_bits {}", plan.masks.storage_bits());
    if let Some(subset) = &plan.subset {
        println!("mask subset {} of {}", subset.index, subset.losses.len());
    }
    for line in &oracle_lines {
        println!("oracle {line}");
    }
    if let Some(out) = out {
        out_dir(out)?;
        write(&out.join("masks.json"), plan.masks.to_json()?)?;
    }
    if oracle_failed {
        return Err(Failure::Numeric("greedy selection missed the exhaustive optimum".into()));
    }
    Ok(())
}

/// Best objective over all admissible masks, or `None` when the layer is
/// too large to enumerate.
fn oracle_objective(h: &Matrix, k: usize, variant: MaskVariant) -> Option<Result<f64, Failure>> {
    let (rows, cols) = h.shape();
    let exhaustive = |selection: grft_core::Result<Selection>| -> Result<f64, Failure> {
        let mask = LayerMask::new(h.shape(), selection?)?;
        Ok(mask_objective(h, &mask)?)
    };
    match variant {
        MaskVariant::Row if rows <= BRUTE_FORCE_MAX_ROWS => {
            Some(exhaustive(brute_force_best_rows(h, k).map(Selection::Rows)))
        }
        MaskVariant::Col if cols <= BRUTE_FORCE_MAX_ROWS => {
            Some(exhaustive(brute_force_best_cols(h, k).map(Selection::Cols)))
        }
        // per-neuron selection decomposes into one column search per row
        MaskVariant::Sparse if cols <= BRUTE_FORCE_MAX_ROWS => {
            let per_row = (0..rows)
                .map(|i| brute_force_best_cols(&Matrix::new(1, cols, h.row(i).to_vec())?, k))
                .collect::<grft_core::Result<Vec<_>>>();
            Some(exhaustive(per_row.map(Selection::SparsePerNeuron)))
        }
        _ => None,
    }
}

fn run_ablate(common: &Common, checkpoint: &Path, axis: AblationAxis, values: &[String], out: &Path) -> CmdResult {
    let cfg = load_config(common)?;
    let pre = load_model(checkpoint)?;
    let task = gen_task::<f64>(&cfg.task)?;
    let reports = ablate(&pre, &task, &cfg.finetune, axis, values)
        .map_err(|e| match e {
            GrftError::Config(m) => Failure::User(format!("ablation axis {axis:?}: {m}")),
            other => other.into(),
        })?;
    out_dir(out)?;
    let mut summary = String::from("value,final_accuracy,trainable_fraction,storage_bits,wall_clock_seconds\n");
    for (value, report) in values.iter().zip(&reports) {
        let dir = out.join(format!("{}={value}", axis_name(axis)));
        out_dir(&dir)?;
        let mut report = report.clone();
        report.config = json!({ "run": cfg, "checkpoint": checkpoint.display().to_string(), "axis": axis, "value": value, "finetune": report.config });
        write(&dir.join("report.json"), to_json(&report)?)?;
        write(&dir.join("epochs.csv"), report.epochs_csv())?;
        writeln!(
            summary,
            "{value},{},{},{},{}",
            report.final_accuracy, report.trainable_fraction, report.storage_bits, report.wall_clock_seconds
        )
        .unwrap();
        println!("{}={value}: accuracy {:.4}, {:.2}% trainable", axis_name(axis), report.final_accuracy, 100.0 * report.trainable_fraction);
    }
    write(&out.join("summary.csv"), summary)
}

fn axis_name(axis: AblationAxis) -> String {
    serde_json::to_value(axis).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}
