//! The two training commands: masked-token pretraining and definition
//! fine-tuning with optional learning-rate grid search.
//!
//! Both commands parallelize only across independent runs (grid candidates,
//! seeds); each individual run executes sequentially so it stays bitwise
//! reproducible from its seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use defsent::data::{build_vocab, filter_oov, load_dictionary, split_by_word};
use defsent::eval::eval_word_prediction;
use defsent::eval::report::{compact4, format_mean_std, summarize_metrics, text_table};
use defsent::rng::sub_seed;
use defsent::train::{
    finetune_defsent, load_checkpoint, lr_grid_search, pretrain_mlm, save_checkpoint,
    GridSearchResult, MultiSeedReport, TrainError, GRID_EXPONENTS,
};
use defsent::{PoolingStrategy, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{load_run_config, RunConfig, SeedList};
use crate::error::CliError;
use crate::files::{ensure_dir, read_sentences, write_json, write_jsonl, write_text};

/// Flags for the pretrain command.
#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// TOML run-configuration file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Pretraining corpus, one sentence per line.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Directory that receives the checkpoint, log, and report.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for initialization, shuffling, and masking.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Passes over the corpus.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Sentences per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate after warmup.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Vocabulary size budget when building the vocabulary from the corpus.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Per-position masking probability.
    #[arg(long)]
    pub mask_prob: Option<f64>,
}

#[derive(Serialize)]
struct PretrainDocument<'a> {
    config: &'a RunConfig,
    corpus: &'a Path,
    sentences: usize,
    vocab_size: usize,
    total_steps: usize,
    warmup_steps: usize,
    logged_steps: usize,
    epoch_mean_loss: &'a [f64],
    data_fingerprint: &'a str,
    checkpoint: &'a Path,
}

/// Builds a vocabulary from the corpus, pretrains a fresh encoder on it,
/// and writes `pretrained.dfs1`, a step log, and a JSON report.
pub fn pretrain(args: PretrainArgs) -> Result<(), CliError> {
    let mut config = load_run_config(args.config.as_deref())?;
    if let Some(corpus) = args.corpus {
        config.data.corpus = Some(corpus);
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    if let Some(seed) = args.seed {
        config.train.seed = seed;
        config.seeds = Some(vec![seed]);
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
    }
    if let Some(batch_size) = args.batch_size {
        config.train.batch_size = batch_size;
    }
    if let Some(lr) = args.lr {
        config.train.base_lr = lr;
    }
    if let Some(vocab_size) = args.vocab_size {
        config.model.vocab_size = vocab_size;
    }
    if let Some(mask_prob) = args.mask_prob {
        config.train.mlm_mask_prob = mask_prob;
    }
    config.resolve();
    config.validate()?;
    let corpus_path = config.data.corpus.clone().ok_or_else(|| CliError::Config {
        detail: "no corpus given: pass --corpus or set data.corpus".to_string(),
    })?;

    let sentences = read_sentences(&corpus_path)?;
    let vocab = build_vocab(&sentences, config.model.vocab_size)?;
    config.model.vocab_size = vocab.size();
    let (checkpoint, report) = pretrain_mlm(&sentences, &vocab, &config.model, &config.train)?;

    ensure_dir(&config.output_dir)?;
    let checkpoint_path = config.output_dir.join("pretrained.dfs1");
    save_checkpoint(&checkpoint, &checkpoint_path)?;
    write_jsonl(&config.output_dir.join("pretrain_log.jsonl"), &report.steps)?;
    write_json(
        &config.output_dir.join("pretrain_report.json"),
        &PretrainDocument {
            config: &config,
            corpus: &corpus_path,
            sentences: sentences.len(),
            vocab_size: vocab.size(),
            total_steps: report.total_steps,
            warmup_steps: report.warmup_steps,
            logged_steps: report.steps.len(),
            epoch_mean_loss: &report.epoch_mean_loss,
            data_fingerprint: &checkpoint.provenance.data_fingerprint,
            checkpoint: &checkpoint_path,
        },
    )?;

    println!(
        "pretrained on {} sentences with a vocabulary of {} tokens",
        sentences.len(),
        vocab.size()
    );
    println!(
        "{} optimizer steps ({} warmup)",
        report.total_steps, report.warmup_steps
    );
    if let (Some(first), Some(last)) = (
        report.epoch_mean_loss.first(),
        report.epoch_mean_loss.last(),
    ) {
        println!(
            "epoch mean loss went {} to {}",
            compact4(*first),
            compact4(*last)
        );
    }
    println!("checkpoint: {}", checkpoint_path.display());
    Ok(())
}

/// Flags for the finetune command.
#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// TOML run-configuration file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Pretrained checkpoint to start from.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Word/definition dictionary, tab-separated or JSON lines.
    #[arg(long, value_name = "FILE")]
    pub dict: Option<PathBuf>,
    /// Directory that receives checkpoints, logs, and reports.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Pooling strategy: cls, mean, or max.
    #[arg(long)]
    pub pooling: Option<PoolingStrategy>,
    /// Fixed learning rate for every seed.
    #[arg(long, conflicts_with = "grid")]
    pub lr: Option<f64>,
    /// Search the learning-rate grid on dev MRR and fine-tune with the winner.
    #[arg(long)]
    pub grid: bool,
    /// Base learning rate the grid exponents scale.
    #[arg(long, value_name = "LR", default_value_t = 1e-4, requires = "grid")]
    pub grid_base: f64,
    /// Seeds to fine-tune: `7`, a list `1,2,3`, or an inclusive range `1..10`.
    #[arg(long, value_name = "LIST")]
    pub seeds: Option<SeedList>,
    /// Passes over the dictionary.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Definitions per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Serialize)]
struct SplitSizes {
    train: usize,
    dev: usize,
    test: usize,
}

#[derive(Serialize)]
struct GridDocument<'a> {
    config: &'a RunConfig,
    grid: &'a GridSearchResult,
}

#[derive(Serialize)]
struct FinetuneDocument<'a> {
    config: &'a RunConfig,
    checkpoint: &'a Path,
    dictionary: &'a Path,
    entries: usize,
    dropped_oov: usize,
    split_sizes: SplitSizes,
    selected_lr: f64,
    grid: Option<&'a GridSearchResult>,
    report: &'a MultiSeedReport,
    checkpoints: &'a [PathBuf],
}

/// Filters the dictionary to the checkpoint vocabulary, splits it by
/// headword, optionally grid-searches the learning rate, fine-tunes one
/// model per seed, and writes checkpoints plus a dev-MRR table.
pub fn finetune(args: FinetuneArgs) -> Result<(), CliError> {
    let mut config = load_run_config(args.config.as_deref())?;
    if let Some(dict) = args.dict {
        config.data.dictionary = Some(dict);
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    if let Some(pooling) = args.pooling {
        config.pooling = Some(pooling);
    }
    if let Some(lr) = args.lr {
        config.train.base_lr = lr;
    }
    if let Some(SeedList(seeds)) = args.seeds {
        config.seeds = Some(seeds);
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
    }
    if let Some(batch_size) = args.batch_size {
        config.train.batch_size = batch_size;
    }
    config.resolve();
    config.validate()?;
    let dict_path = config.data.dictionary.clone().ok_or_else(|| CliError::Config {
        detail: "no dictionary given: pass --dict or set data.dictionary".to_string(),
    })?;

    let pretrained = load_checkpoint(&args.checkpoint)?;
    let entries = load_dictionary(&dict_path)?;
    let kept = filter_oov(&entries, &pretrained.vocab);
    let dropped = entries.len() - kept.len();
    if dropped > 0 {
        eprintln!(
            "warning: dropped {dropped} of {} entries whose headword is not one vocabulary word",
            entries.len()
        );
    }
    let seeds = config.effective_seeds();
    let pooling = config.effective_pooling();
    let corpus = split_by_word(&kept, config.data.split, sub_seed(seeds[0], "split"))?;
    if corpus.dev.is_empty() {
        return Err(CliError::Train(TrainError::EmptyDevSplit));
    }

    ensure_dir(&config.output_dir)?;
    let grid = if args.grid {
        let template = TrainConfig {
            seed: seeds[0],
            pooling,
            ..config.train.clone()
        };
        let result = lr_grid_search(&pretrained, &corpus, &template, &GRID_EXPONENTS, args.grid_base)?;
        println!(
            "grid searched {} learning rates; best dev MRR at {:.3e}",
            result.candidates.len(),
            result.selected_lr
        );
        config.train.base_lr = result.selected_lr;
        Some(result)
    } else {
        None
    };
    let lr = config.train.base_lr;

    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let run_config = TrainConfig {
                seed,
                base_lr: lr,
                pooling,
                ..config.train.clone()
            };
            let (tuned, report) = finetune_defsent(&pretrained, &corpus.train, &run_config)?;
            let model = tuned.to_model()?;
            let dev = eval_word_prediction(&model, &corpus.dev, &tuned.vocab, pooling)?;
            Ok((seed, tuned, report, dev))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;

    let mut checkpoint_paths = Vec::new();
    let mut per_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (seed, tuned, report, dev) in &runs {
        let path = config.output_dir.join(format!("finetuned_seed{seed}.dfs1"));
        save_checkpoint(tuned, &path)?;
        write_jsonl(
            &config.output_dir.join(format!("finetune_seed{seed}_log.jsonl")),
            &report.steps,
        )?;
        checkpoint_paths.push(path);
        for (name, value) in [
            ("dev_mrr", dev.mrr),
            ("dev_top1", dev.top1),
            ("dev_top3", dev.top3),
            ("dev_top10", dev.top10),
        ] {
            per_metric.entry(name.to_string()).or_default().push(value);
        }
    }
    let report = MultiSeedReport {
        seeds: seeds.clone(),
        metrics: summarize_metrics(&per_metric),
    };

    let rows: Vec<Vec<String>> = report
        .metrics
        .iter()
        .map(|(name, summary)| {
            let per_seed = summary
                .per_seed
                .iter()
                .map(|value| compact4(*value))
                .collect::<Vec<_>>()
                .join(" ");
            vec![
                name.clone(),
                format_mean_std(summary.mean, summary.std),
                per_seed,
            ]
        })
        .collect();
    let table = text_table(&["metric", "mean±std", "per seed"], &rows);
    print!("{table}");
    write_text(&config.output_dir.join("finetune_table.txt"), &table)?;
    if let Some(result) = &grid {
        write_json(
            &config.output_dir.join("grid_search.json"),
            &GridDocument {
                config: &config,
                grid: result,
            },
        )?;
    }
    write_json(
        &config.output_dir.join("finetune_report.json"),
        &FinetuneDocument {
            config: &config,
            checkpoint: &args.checkpoint,
            dictionary: &dict_path,
            entries: entries.len(),
            dropped_oov: dropped,
            split_sizes: SplitSizes {
                train: corpus.train.len(),
                dev: corpus.dev.len(),
                test: corpus.test.len(),
            },
            selected_lr: lr,
            grid: grid.as_ref(),
            report: &report,
            checkpoints: &checkpoint_paths,
        },
    )?;

    println!(
        "fine-tuned {} seed(s) at learning rate {lr:.3e} with {} pooling",
        seeds.len(),
        pooling
    );
    for path in &checkpoint_paths {
        println!("checkpoint: {}", path.display());
    }
    Ok(())
}
