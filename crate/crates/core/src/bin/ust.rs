use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use ust::data::synth::{self, SynthConfig};
use ust::data::{few_shot_split, load_corpus, FeaturizedCorpus, Featurizer};
use ust::experiment::{emit_report, run_plan, Cell, ExperimentPlan, RunReport, RESULTS_FILE};
use ust::self_train::RunDir;
use ust::uncertainty::{estimate_batch, write_dump};
use ust::Mlp;

#[derive(Parser)]
#[command(
    name = "ust",
    version,
    about = "Self-training with Monte-Carlo dropout uncertainty for text classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment plan and write results, table and curves.
    Run {
        /// TOML plan file; without one the ablation grid runs on the synthetic corpus.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Corpus file or directory (overrides the plan).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Comma-separated cells, e.g. `base,classic_st,ust_easy-conf,ust_hard-class`.
        #[arg(long, value_delimiter = ',')]
        cells: Option<Vec<Cell>>,
        /// Labeled examples per class; comma-separated for a sweep.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Monte-Carlo dropout passes per unlabeled example.
        #[arg(long)]
        passes: Option<usize>,
        /// Unlabeled examples scored per round.
        #[arg(long)]
        unlabeled_sample: Option<usize>,
        /// Pseudo-labeled examples selected per round.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Generate a synthetic labeled corpus (train.tsv, test.tsv).
    GenData {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 1000)]
        test: usize,
        /// Probability that a cue word comes from another class's vocabulary.
        #[arg(long)]
        overlap: Option<f64>,
        #[arg(long, default_value_t = 2020)]
        seed: u64,
    },
    /// Rebuild table.txt and curves from a results.jsonl.
    Report {
        /// Results file or the run directory containing it.
        input: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Print the selection trace of a run directory, or with `--model` dump
    /// per-example dropout statistics of a checkpoint on a split's unlabeled pool.
    Inspect {
        /// A `runs/<cell>/K<k>/seed<s>` directory.
        run: Option<PathBuf>,
        /// Only rows of this round.
        #[arg(long)]
        round: Option<usize>,
        #[arg(long, requires = "corpus")]
        model: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        passes: usize,
        #[arg(long, default_value_t = 100)]
        limit: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run {
            plan,
            corpus,
            cells,
            k,
            seeds,
            passes,
            unlabeled_sample,
            budget,
            iterations,
            out,
        } => {
            let mut plan = match plan {
                Some(p) => ExperimentPlan::load(&p)
                    .with_context(|| format!("reading plan {}", p.display()))?,
                None => ExperimentPlan::default(),
            };
            if let Some(c) = corpus {
                plan.corpus = c;
            }
            if let Some(c) = cells {
                plan.cells = c;
            }
            if let Some(k) = k {
                plan.k = k;
            }
            if let Some(s) = seeds {
                plan.seeds = s;
            }
            let cfg = &mut plan.config;
            cfg.passes = passes.unwrap_or(cfg.passes);
            cfg.unlabeled_sample = unlabeled_sample.unwrap_or(cfg.unlabeled_sample);
            cfg.policy.budget = budget.unwrap_or(cfg.policy.budget);
            cfg.iterations = iterations.unwrap_or(cfg.iterations);

            fs::create_dir_all(&out)?;
            fs::write(out.join("plan.toml"), plan.to_toml()?)?;
            let report = run_plan(&plan, Some(&out))?;
            emit_report(&report, &out)?;
            print!("{}", report.table());
            if !report.audit_passed() {
                bail!("test set accessed more often than once per selected model");
            }
            Ok(!report.any_failed())
        }
        Command::GenData {
            out,
            classes,
            train,
            test,
            overlap,
            seed,
        } => {
            let defaults = SynthConfig::default();
            let cfg = SynthConfig {
                classes,
                train_size: train,
                test_size: test,
                overlap: overlap.unwrap_or(defaults.overlap),
                seed,
                ..defaults
            };
            let corpus = synth::generate(&cfg)?;
            corpus.write_dir(&out)?;
            println!(
                "wrote {} train and {} test examples to {}",
                corpus.train.len(),
                corpus.test.len(),
                out.display()
            );
            Ok(true)
        }
        Command::Report { input, out } => {
            let file = if input.is_dir() {
                input.join(RESULTS_FILE)
            } else {
                input.clone()
            };
            let text =
                fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let report = RunReport::from_results_jsonl(&text)?;
            if let Some(out) = out {
                emit_report(&report, &out)?;
            }
            print!("{}", report.table());
            Ok(true)
        }
        Command::Inspect {
            run,
            round,
            model,
            corpus,
            k,
            seed,
            passes,
            limit,
        } => {
            if let (Some(model), Some(corpus)) = (model, corpus) {
                let model = Mlp::load(&model)?;
                let (corpus, _) = load_corpus(&corpus, None)?;
                let featurized = FeaturizedCorpus::new(&corpus, Featurizer::new(model.input_dim()));
                let split = few_shot_split(&featurized, k, seed)?;
                let pool: Vec<_> = split
                    .unlabeled
                    .iter()
                    .take(limit)
                    .map(|u| (u.id, &u.features))
                    .collect();
                let estimates = estimate_batch(&model, &pool, passes, seed)?;
                let rows: Vec<_> = pool.iter().map(|p| p.0).zip(&estimates).collect();
                write_dump(std::io::stdout().lock(), &rows)?;
                return Ok(true);
            }
            let Some(run) = run else {
                bail!("give a run directory, or --model with --corpus");
            };
            let path = run.join(RunDir::TRACE);
            let text =
                fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            for (i, line) in text.lines().enumerate() {
                let keep = i == 0
                    || round
                        .is_none_or(|r| line.split('\t').next() == Some(r.to_string().as_str()));
                if keep {
                    println!("{line}");
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more cells failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
