use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lifelong_qg::encoding::TruncationStats;
use lifelong_qg::harness::{
    encode_records, evaluate, gen_synthetic_suite, load_dataset, report, run_sequence, summarize, summary_csv,
    write_suite, ReportStyle, SynthParams,
};
use lifelong_qg::metrics::METRIC_NAMES;
use lifelong_qg::model::checkpoint;
use lifelong_qg::strider::{select_difficult, select_random};
use lifelong_qg::{rng, ExperimentConfig, ReplayMemory, RunRecord, Strategy, Vocab};

#[derive(Parser)]
#[command(name = "lqg", version, about = "Lifelong question generation with difficulty replay and adaptive EWC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task sequence and a config that points at it.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON file with generator parameters; flags below override it.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        num_tasks: Option<usize>,
        /// Comma-separated overlap per transition.
        #[arg(long, value_delimiter = ',')]
        overlap: Option<Vec<f64>>,
        #[arg(long)]
        train_size: Option<usize>,
        #[arg(long)]
        test_size: Option<usize>,
    },
    /// Tokenize a JSONL dataset into model-ready ids.
    Encode {
        #[arg(long)]
        input: PathBuf,
        /// Vocabulary file; built from the input when it does not exist.
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = lifelong_qg::encoding::DEFAULT_MAX_INPUT_LEN)]
        max_len: usize,
    },
    /// Train through the configured task sequence.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the strategy named in the config.
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Overrides the seed named in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a JSONL dataset with greedy decoding.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        #[arg(long, default_value_t = lifelong_qg::encoding::DEFAULT_MAX_INPUT_LEN)]
        max_input_len: usize,
    },
    /// Select replay examples from a dataset with a trained checkpoint.
    SelectReplay {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        task_id: usize,
        /// Uniform selection instead of highest difficulty.
        #[arg(long)]
        random: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = lifelong_qg::encoding::DEFAULT_MAX_INPUT_LEN)]
        max_input_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one or more run records.
    Report {
        /// record.json files; several are summarized across seeds.
        #[arg(required = true)]
        records: Vec<PathBuf>,
        /// matrix, aggregate or table (single record only).
        #[arg(long, default_value = "aggregate")]
        style: ReportStyle,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenSynth {
            out,
            seed,
            params,
            num_tasks,
            overlap,
            train_size,
            test_size,
        } => {
            let mut p = match params {
                Some(path) => serde_json::from_str(&fs::read_to_string(&path)?)
                    .with_context(|| format!("reading {}", path.display()))?,
                None => SynthParams::default(),
            };
            if let Some(n) = num_tasks {
                p.num_tasks = n;
            }
            if let Some(o) = overlap {
                p.overlaps = o;
            }
            if let Some(n) = train_size {
                p.train_size = n;
            }
            if let Some(n) = test_size {
                p.test_size = n;
            }
            let suite = gen_synthetic_suite(&p, seed)?;
            write_suite(&suite, &out)?;
            let relative = serde_json::from_str(&fs::read_to_string(out.join("suite.json"))?)?;
            let config = ExperimentConfig {
                tasks: relative,
                seed,
                ..Default::default()
            };
            config.save(&out.join("config.json"))?;
            println!("wrote {} tasks to {}", suite.tasks.len(), out.display());
        }
        Command::Encode {
            input,
            vocab,
            out,
            max_len,
        } => {
            let records = load_dataset(&input, None)?;
            let vocab = if vocab.exists() {
                Vocab::load(&vocab)?
            } else {
                let mut corpus = Vec::new();
                for r in &records {
                    corpus.push(r.instance.unify()?);
                    corpus.push(r.instance.question.clone());
                }
                let v = Vocab::build(corpus, 1, usize::MAX)?;
                v.save(&vocab)?;
                v
            };
            let mut stats = TruncationStats::default();
            let (examples, _) = encode_records(&records, &vocab, max_len, &mut stats)?;
            let mut w = BufWriter::new(fs::File::create(&out)?);
            for ex in &examples {
                serde_json::to_writer(&mut w, ex)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            eprintln!(
                "encoded {} examples, {} truncated, {} tokens dropped",
                examples.len(),
                stats.truncated,
                stats.dropped_tokens
            );
        }
        Command::Train {
            config,
            strategy,
            seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            if let Some(s) = strategy {
                cfg.strategy = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let record = run_sequence(&cfg, Some(&out))?;
            for (log, t) in record.logs.iter().zip(&record.timings) {
                eprintln!(
                    "task {}: pool {} lambda {:?} best epoch {} steps {} train {:.1}s eval {:.1}s",
                    log.task_id, log.pool_size, log.lambda_eff, log.best_epoch, log.steps, t.train_secs, t.eval_secs
                );
            }
            print!("{}", report(&record, ReportStyle::Table)?);
        }
        Command::Evaluate {
            checkpoint: ckpt,
            vocab,
            data,
            max_len,
            max_input_len,
        } => {
            let (model, vocab) = load_model(&ckpt, &vocab)?;
            let records = load_dataset(&data, None)?;
            let mut stats = TruncationStats::default();
            let (examples, refs) = encode_records(&records, &vocab, max_input_len, &mut stats)?;
            let eval = evaluate(&model, &vocab, &examples, &refs, max_len)?;
            let scores: serde_json::Map<String, serde_json::Value> = METRIC_NAMES
                .iter()
                .zip(eval.scores)
                .map(|(k, v)| (k.to_string(), v.into()))
                .collect();
            println!("{}", serde_json::to_string_pretty(&scores)?);
        }
        Command::SelectReplay {
            checkpoint: ckpt,
            vocab,
            data,
            n,
            task_id,
            random,
            seed,
            max_input_len,
            out,
        } => {
            let (model, vocab) = load_model(&ckpt, &vocab)?;
            let records = load_dataset(&data, None)?;
            let mut stats = TruncationStats::default();
            let (examples, _) = encode_records(&records, &vocab, max_input_len, &mut stats)?;
            let selected = if random {
                let mut r = rng::stream(seed, &[rng::SELECT, task_id as u64]);
                select_random(&examples, &model, n, task_id, &mut r)?
            } else {
                select_difficult(&examples, &model, n, task_id)?
            };
            let mut memory = ReplayMemory::new(n)?;
            memory.push(task_id, selected)?;
            memory.save_jsonl(&out)?;
            println!("selected {} of {} examples", memory.len(), examples.len());
        }
        Command::Report { records, style } => {
            let loaded = records
                .iter()
                .map(|p| RunRecord::load(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            if loaded.len() == 1 {
                print!("{}", report(&loaded[0], style)?);
            } else {
                if style != ReportStyle::Aggregate {
                    bail!("several records can only be summarized with --style aggregate");
                }
                print!("{}", summary_csv(&summarize(&loaded)?));
            }
        }
    }
    Ok(())
}

fn load_model(ckpt: &Path, vocab: &Path) -> Result<(lifelong_qg::ModelState, Vocab)> {
    let c = checkpoint::load(ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
    let v = Vocab::load(vocab)?;
    if v.len() != c.model.config().vocab_size {
        bail!(
            "vocabulary has {} entries but the checkpoint expects {}",
            v.len(),
            c.model.config().vocab_size
        );
    }
    Ok((c.model, v))
}
