//! The three evaluation commands. Each loads a checkpoint, runs one task,
//! prints a text table, and writes the same table plus a JSON report with
//! the resolved configuration embedded.

use std::path::{Path, PathBuf};

use clap::Args;
use defsent::data::{filter_oov, load_classification_file, load_dictionary, load_sts_file};
use defsent::eval::report::{compact4, text_table};
use defsent::eval::{eval_sts, eval_word_prediction, probe_classifier, ProbeReport, RankReport, STSReport};
use defsent::rng::sub_seed;
use defsent::train::{load_checkpoint, Checkpoint};
use defsent::{EncoderModel, PoolingStrategy};
use serde::Serialize;

use crate::config::{load_run_config, RunConfig};
use crate::error::CliError;
use crate::files::{ensure_dir, write_json, write_text};

/// Flags every evaluation command shares.
#[derive(Debug, Args)]
pub struct EvalCommonArgs {
    /// TOML run-configuration file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Pooling strategy: cls, mean, or max; the checkpoint's own when absent.
    #[arg(long)]
    pub pooling: Option<PoolingStrategy>,
    /// Directory that receives the report files.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

struct EvalContext {
    config: RunConfig,
    checkpoint: Checkpoint,
    model: EncoderModel,
    pooling: PoolingStrategy,
    out_dir: PathBuf,
}

/// Loads config and checkpoint and settles the pooling strategy: an
/// explicit flag wins, then the config file, then the checkpoint's own
/// provenance.
fn prepare(common: &EvalCommonArgs) -> Result<EvalContext, CliError> {
    let mut config = load_run_config(common.config.as_deref())?;
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    let checkpoint = load_checkpoint(&common.checkpoint)?;
    let pooling = common
        .pooling
        .or(config.pooling)
        .unwrap_or(checkpoint.provenance.pooling);
    config.pooling = Some(pooling);
    config.train.pooling = pooling;
    if config.seeds.is_none() {
        config.seeds = Some(vec![config.train.seed]);
    }
    config.validate()?;
    let model = checkpoint.to_model()?;
    let out_dir = config.output_dir.clone();
    ensure_dir(&out_dir)?;
    Ok(EvalContext {
        config,
        checkpoint,
        model,
        pooling,
        out_dir,
    })
}

/// Flags for the word-prediction ranking evaluation.
#[derive(Debug, Args)]
pub struct EvalWordpredArgs {
    #[command(flatten)]
    pub common: EvalCommonArgs,
    /// Dictionary to evaluate on; `data.dictionary` from the config when absent.
    #[arg(long, value_name = "FILE")]
    pub dict: Option<PathBuf>,
}

#[derive(Serialize)]
struct WordpredDocument<'a> {
    config: &'a RunConfig,
    checkpoint: &'a Path,
    dictionary: &'a Path,
    pooling: PoolingStrategy,
    dropped_oov: usize,
    report: &'a RankReport,
}

/// Ranks every definition's headword against the whole vocabulary and
/// reports MRR and top-k hit rates.
pub fn run_wordpred(args: EvalWordpredArgs) -> Result<(), CliError> {
    let mut ctx = prepare(&args.common)?;
    if let Some(dict) = args.dict {
        ctx.config.data.dictionary = Some(dict);
    }
    let dict_path = ctx
        .config
        .data
        .dictionary
        .clone()
        .ok_or_else(|| CliError::Config {
            detail: "no dictionary given: pass --dict or set data.dictionary".to_string(),
        })?;
    let entries = load_dictionary(&dict_path)?;
    let kept = filter_oov(&entries, &ctx.checkpoint.vocab);
    let dropped = entries.len() - kept.len();
    if dropped > 0 {
        eprintln!(
            "warning: dropped {dropped} of {} entries whose headword is not one vocabulary word",
            entries.len()
        );
    }
    let report = eval_word_prediction(&ctx.model, &kept, &ctx.checkpoint.vocab, ctx.pooling)?;

    let rows = vec![
        vec!["mrr".to_string(), compact4(report.mrr)],
        vec!["top1".to_string(), compact4(report.top1)],
        vec!["top3".to_string(), compact4(report.top3)],
        vec!["top10".to_string(), compact4(report.top10)],
        vec!["examples".to_string(), report.n_examples.to_string()],
    ];
    let table = text_table(&["metric", "value"], &rows);
    print!("{table}");
    write_text(&ctx.out_dir.join("wordpred_report.txt"), &table)?;
    write_json(
        &ctx.out_dir.join("wordpred_report.json"),
        &WordpredDocument {
            config: &ctx.config,
            checkpoint: &args.common.checkpoint,
            dictionary: &dict_path,
            pooling: ctx.pooling,
            dropped_oov: dropped,
            report: &report,
        },
    )?;
    Ok(())
}

/// Flags for the sentence-pair similarity evaluation.
#[derive(Debug, Args)]
pub struct EvalStsArgs {
    #[command(flatten)]
    pub common: EvalCommonArgs,
    /// Sentence pairs with gold scores: `a<TAB>b<TAB>score` rows.
    #[arg(long, value_name = "FILE")]
    pub task: PathBuf,
}

#[derive(Serialize)]
struct StsDocument<'a> {
    config: &'a RunConfig,
    checkpoint: &'a Path,
    task: &'a Path,
    pooling: PoolingStrategy,
    report: &'a STSReport,
}

/// Correlates embedding cosine similarity with the gold scores.
pub fn run_sts(args: EvalStsArgs) -> Result<(), CliError> {
    let ctx = prepare(&args.common)?;
    let pairs = load_sts_file(&args.task)?;
    let report = eval_sts(&ctx.model, &pairs, &ctx.checkpoint.vocab, ctx.pooling)?;

    let rows = vec![
        vec!["spearman_rho".to_string(), compact4(report.rho)],
        vec!["pairs".to_string(), report.n_pairs.to_string()],
    ];
    let table = text_table(&["metric", "value"], &rows);
    print!("{table}");
    write_text(&ctx.out_dir.join("sts_report.txt"), &table)?;
    write_json(
        &ctx.out_dir.join("sts_report.json"),
        &StsDocument {
            config: &ctx.config,
            checkpoint: &args.common.checkpoint,
            task: &args.task,
            pooling: ctx.pooling,
            report: &report,
        },
    )?;
    Ok(())
}

/// Flags for the classification probe evaluation.
#[derive(Debug, Args)]
pub struct EvalClsArgs {
    #[command(flatten)]
    pub common: EvalCommonArgs,
    /// Labeled sentences: `label<TAB>sentence` rows.
    #[arg(long, value_name = "FILE")]
    pub task: PathBuf,
    /// Cross-validation fold count.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Seed for the fold shuffle; `train.seed` from the config when absent.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct ClsDocument<'a> {
    config: &'a RunConfig,
    checkpoint: &'a Path,
    task: &'a Path,
    pooling: PoolingStrategy,
    folds: usize,
    seed: u64,
    report: &'a ProbeReport,
}

/// Embeds every labeled sentence and cross-validates a linear classifier
/// on the frozen embeddings.
pub fn run_cls(args: EvalClsArgs) -> Result<(), CliError> {
    let ctx = prepare(&args.common)?;
    if args.folds < 2 {
        return Err(CliError::Config {
            detail: format!("--folds must be at least 2, got {}", args.folds),
        });
    }
    let samples = load_classification_file(&args.task)?;
    let mut embeddings = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for sample in &samples {
        embeddings.push(ctx.model.embed_sentence(
            &ctx.checkpoint.vocab,
            &sample.sentence,
            ctx.pooling,
        )?);
        labels.push(sample.label);
    }
    let seed = args.seed.unwrap_or(ctx.config.train.seed);
    let report = probe_classifier(&embeddings, &labels, args.folds, sub_seed(seed, "folds"))?;

    let folds = report
        .fold_accuracies
        .iter()
        .map(|value| compact4(*value))
        .collect::<Vec<_>>()
        .join(" ");
    let rows = vec![
        vec!["mean_accuracy".to_string(), compact4(report.mean_accuracy)],
        vec!["folds".to_string(), report.k.to_string()],
        vec!["per_fold".to_string(), folds],
    ];
    let table = text_table(&["metric", "value"], &rows);
    print!("{table}");
    write_text(&ctx.out_dir.join("cls_report.txt"), &table)?;
    write_json(
        &ctx.out_dir.join("cls_report.json"),
        &ClsDocument {
            config: &ctx.config,
            checkpoint: &args.common.checkpoint,
            task: &args.task,
            pooling: ctx.pooling,
            folds: args.folds,
            seed,
            report: &report,
        },
    )?;
    Ok(())
}
