//! `ssr`: data generation, pretraining, self-critical fine-tuning,
//! decoding, evaluation and reporting for the micro-world benchmark.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{CommandFactory, Parser, Subcommand};

use ssr_core::decoding::beam_search;
use ssr_core::gradsuite::{self, TOLERANCE};
use ssr_core::trainer::{
    evaluate_corpus, make_dataset, render_table, report, run_experiment, run_mode, run_pretrain, run_train_lm,
    run_train_vse, ComparisonRow, ExperimentConfig, Mode, RunDir,
};

const OUT_ENV: &str = "SSR_OUT_DIR";
const DEFAULT_OUT: &str = "ssr-run";

#[derive(Parser, Debug)]
#[command(name = "ssr", version, about = "Self-supervised rewarding for cross-lingual captioning on a synthetic micro-world")]
struct Cli {
    /// TOML experiment config; omitted keys take their default values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base configuration when no config file is given: desk or published
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory [env: SSR_OUT_DIR, default: ssr-run]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Beam size for test decoding
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// Probability of one disfluency op per pseudo caption
    #[arg(long, global = true)]
    disfluency: Option<f64>,
    /// Probability of one concept substitution per pseudo caption
    #[arg(long, global = true)]
    irrelevancy: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the world, pseudo pairs, monolingual corpus and vocabularies
    MakeDataset,
    /// Pretrain the target-language model on the monolingual corpus
    TrainLm,
    /// Pretrain the sentence- and concept-level matching models
    TrainVse,
    /// Pretrain the captioner on pseudo pairs (the baseline)
    Pretrain,
    /// Fine-tune from the pretrained captioner and evaluate on test
    TrainSsr {
        /// Comma-separated modes; defaults to the config's list
        #[arg(long, value_delimiter = ',')]
        mode: Vec<Mode>,
    },
    /// Print one caption for an image
    Generate {
        #[arg(long)]
        image_id: u64,
        #[arg(long, default_value = "ssr")]
        mode: Mode,
    },
    /// Evaluate a trained captioner on the test split
    Evaluate {
        #[arg(long, default_value = "ssr")]
        mode: Mode,
    },
    /// Finite-difference check of every op and loss
    Gradcheck {
        #[arg(long, default_value_t = gradsuite::DEFAULT_TRIALS)]
        trials: usize,
    },
    /// Rebuild the comparison table from per-mode reports
    Report {
        #[arg(long, value_delimiter = ',')]
        mode: Vec<Mode>,
    },
    /// Every phase in order, then the comparison table
    Run,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ssr_core::Error> for Failure {
    fn from(e: ssr_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = std::result::Result<ExitCode, Failure>;

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Config file, else the run directory's saved config (for later phases),
/// else the preset; then flags on top.
fn resolve_config(cli: &Cli, run: &RunDir, fresh: bool) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = if let Some(path) = &cli.config {
        if !path.is_file() {
            return Err(Failure::Usage(format!("config file not found: {}", path.display())));
        }
        ExperimentConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?
    } else if let (false, Some(saved)) = (fresh || cli.preset.is_some(), run.load_config()?) {
        saved
    } else {
        ExperimentConfig::preset(cli.preset.as_deref().unwrap_or("desk")).map_err(|e| Failure::Usage(e.to_string()))?
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = cli.beam {
        cfg.beam_size = b;
    }
    if let Some(d) = cli.disfluency {
        cfg.disfluency_rate = d;
    }
    if let Some(i) = cli.irrelevancy {
        cfg.irrelevancy_rate = i;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn log(t0: Instant, msg: &str) {
    eprintln!("[{:7.1}s] {msg}", t0.elapsed().as_secs_f64());
}

fn print_rows(rows: &[ComparisonRow]) {
    println!("{}", render_table(rows));
}

fn execute(cli: &Cli) -> Outcome {
    let run = RunDir::new(out_dir(cli));
    let t0 = Instant::now();
    match &cli.command {
        Command::Gradcheck { trials } => {
            let checks = gradsuite::run_suite(cli.seed.unwrap_or(0), *trials)?;
            let mut ok = true;
            for c in &checks {
                println!("{:<28} {:.3e} {}", c.name, c.max_rel_err, if c.passed() { "ok" } else { "FAIL" });
                ok &= c.passed();
            }
            println!("{} ops, tolerance {TOLERANCE:e}, {}", checks.len(), if ok { "all passed" } else { "FAILED" });
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::MakeDataset => {
            let cfg = resolve_config(cli, &run, true)?;
            let corpus = make_dataset(&cfg, &run)?;
            let d = &corpus.dataset;
            println!(
                "{}: {} train, {} val, {} test pairs; {} monolingual sentences; vocab {}; {} concepts",
                run.root.display(),
                d.train.len(),
                d.val.len(),
                d.test.len(),
                corpus.mono.len(),
                corpus.vocab.len(),
                corpus.concepts.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainLm => {
            let cfg = resolve_config(cli, &run, false)?;
            let corpus = run.load_corpus()?;
            let (_, h) = run_train_lm(&cfg, &run, &corpus)?;
            println!("language model: best epoch {}, held-out loss {:.4}", h.best_epoch + 1, h.heldout_loss[h.best_epoch]);
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainVse => {
            let cfg = resolve_config(cli, &run, false)?;
            let corpus = run.load_corpus()?;
            run_train_vse(&cfg, &run, &corpus)?;
            println!("matching models saved to {}", run.root.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Pretrain => {
            let cfg = resolve_config(cli, &run, false)?;
            let corpus = run.load_corpus()?;
            run_pretrain(&cfg, &run, &corpus)?;
            println!("captioner saved to {}", run.captioner().display());
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainSsr { mode } => {
            let cfg = resolve_config(cli, &run, false)?;
            let modes = if mode.is_empty() { cfg.modes.clone() } else { mode.clone() };
            let corpus = run.load_corpus()?;
            let frozen = run.load_frozen(&cfg, &corpus)?;
            let init = run.load_captioner(&run.captioner(), &cfg, &corpus.vocab)?;
            let mut rows = Vec::new();
            for m in modes {
                log(t0, &format!("mode {m}"));
                let r = run_mode(&cfg, &run, &corpus, &frozen, &init, m)?;
                rows.push(ComparisonRow::of(m, &r));
            }
            print_rows(&rows);
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate { image_id, mode } => {
            let cfg = resolve_config(cli, &run, false)?;
            let corpus = run.load_corpus()?;
            let model = run.load_captioner(&run.captioner_for(*mode), &cfg, &corpus.vocab)?;
            let d = &corpus.dataset;
            let pair = d
                .train
                .iter()
                .chain(&d.val)
                .chain(&d.test)
                .find(|p| p.image.image_id == *image_id)
                .ok_or_else(|| Failure::Usage(format!("no image with id {image_id}")))?;
            let out = beam_search(&model, Some(&pair.image.features), cfg.beam_size, cfg.max_decode_len)?;
            println!("{}", corpus.vocab.decode(out.caption.ids()).join(" "));
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { mode } => {
            let cfg = resolve_config(cli, &run, false)?;
            let corpus = run.load_corpus()?;
            let model = run.load_captioner(&run.captioner_for(*mode), &cfg, &corpus.vocab)?;
            let frozen = run.load_frozen(&cfg, &corpus)?;
            let rewards = frozen.reward_models(&corpus, cfg.lambda)?;
            let r = evaluate_corpus(
                &model,
                &corpus.dataset.test,
                &corpus.vocab,
                Some(&rewards),
                cfg.beam_size,
                cfg.max_decode_len,
            )?;
            let dir = run.mode_dir(*mode);
            std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
            r.write(&dir)?;
            print!("{}", r.to_text());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { mode } => {
            let modes = (!mode.is_empty()).then_some(mode.as_slice());
            println!("{}", report(&run, modes)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run => {
            let cfg = resolve_config(cli, &run, true)?;
            let results = run_experiment(&cfg, &run.root, &mut |m| log(t0, m))?;
            let rows: Vec<ComparisonRow> = results.iter().map(|(m, r)| ComparisonRow::of(*m, r)).collect();
            print_rows(&rows);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            let _ = Cli::command().write_help(&mut std::io::stderr());
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
