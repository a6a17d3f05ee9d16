use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{ExperimentConfig, Mode};
use super::eval::{evaluate_corpus, EvalReport};
use super::pipeline::{pretrain_captioner, pretrain_lm, pretrain_vse, train_ssr, Corpus, Frozen, RlHistory};
use crate::checkpoint;
use crate::data::{Dataset, MicroWorld};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::seq::{Captioner, LanguageModel, Vocabulary};
use crate::vse::{ConceptVocabulary, ConceptVse, SentenceVse, TrainHistory};

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn world(&self) -> PathBuf {
        self.dataset().join("world.json")
    }
    pub fn mono(&self) -> PathBuf {
        self.dataset().join("mono.txt")
    }
    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }
    pub fn concepts(&self) -> PathBuf {
        self.root.join("concepts.txt")
    }
    pub fn lm(&self) -> PathBuf {
        self.root.join("lm.ckpt")
    }
    pub fn sentence_vse(&self) -> PathBuf {
        self.root.join("sentence_vse.ckpt")
    }
    pub fn concept_vse(&self) -> PathBuf {
        self.root.join("concept_vse.ckpt")
    }
    pub fn captioner(&self) -> PathBuf {
        self.root.join("captioner.ckpt")
    }
    pub fn log(&self) -> PathBuf {
        self.root.join("run_log.jsonl")
    }
    pub fn mode_dir(&self, mode: Mode) -> PathBuf {
        self.root.join("modes").join(mode.name())
    }
    pub fn mode_captioner(&self, mode: Mode) -> PathBuf {
        self.mode_dir(mode).join("captioner.ckpt")
    }

    fn require(&self, paths: &[PathBuf]) -> Result<()> {
        let missing: Vec<String> = paths
            .iter()
            .filter(|p| !p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Missing(format!("missing run artifacts: {}", missing.join(", "))))
        }
    }

    pub fn save_corpus(&self, corpus: &Corpus) -> Result<()> {
        corpus.dataset.save(&self.dataset())?;
        corpus.world.save(&self.world())?;
        let mono: String = corpus.mono.iter().map(|s| s.join(" ") + "\n").collect();
        std::fs::write(self.mono(), mono).map_err(|e| Error::io(self.mono(), e))?;
        corpus.vocab.save(&self.vocab())?;
        corpus.concepts.save(&self.concepts())
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        self.require(&[self.world(), self.mono(), self.vocab(), self.concepts()])?;
        let text = std::fs::read_to_string(self.mono()).map_err(|e| Error::io(self.mono(), e))?;
        Ok(Corpus {
            world: MicroWorld::load(&self.world())?,
            dataset: Dataset::load(&self.dataset())?,
            mono: text
                .lines()
                .map(|l| l.split_whitespace().map(str::to_string).collect())
                .collect(),
            vocab: Vocabulary::load(&self.vocab())?,
            concepts: ConceptVocabulary::load(&self.concepts())?,
        })
    }

    /// The saved config, or `None` when the directory has none yet.
    pub fn load_config(&self) -> Result<Option<ExperimentConfig>> {
        let p = self.config();
        if p.exists() {
            ExperimentConfig::load(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn load_frozen(&self, cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Frozen> {
        self.require(&[self.lm(), self.sentence_vse(), self.concept_vse()])?;
        let mut rng = stream(0, &[0]);
        let mut lm = LanguageModel::init(corpus.vocab.len(), cfg.lm_embed_dim, cfg.lm_hidden_dim, &mut rng);
        load_into(&self.lm(), &mut lm)?;
        let vcfg = cfg.vse();
        let mut sentence = SentenceVse::init_with(cfg.feature_dim, corpus.vocab.len(), &vcfg);
        load_into(&self.sentence_vse(), &mut sentence)?;
        let mut concept = ConceptVse::init_with(cfg.feature_dim, corpus.concepts.len(), &vcfg);
        load_into(&self.concept_vse(), &mut concept)?;
        Ok(Frozen { lm, sentence, concept })
    }

    pub fn load_captioner(&self, path: &Path, cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<Captioner<f32>> {
        self.require(&[path.to_path_buf()])?;
        let mut rng = stream(0, &[0]);
        let mut cap = Captioner::init(cfg.captioner_dims(vocab.len()), &mut rng);
        load_into(path, &mut cap)?;
        Ok(cap)
    }

    /// Captioner checkpoint for a mode; Baseline is the pretrained one.
    pub fn captioner_for(&self, mode: Mode) -> PathBuf {
        if mode == Mode::Baseline {
            self.captioner()
        } else {
            self.mode_captioner(mode)
        }
    }

    pub fn append_log(&self, lines: &[serde_json::Value]) -> Result<()> {
        use std::io::Write;
        let path = self.log();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        for l in lines {
            writeln!(f, "{l}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn load_into<M: crate::autodiff::Parameters<f32>>(path: &Path, model: &mut M) -> Result<()> {
    let entries = checkpoint::read(path)?;
    checkpoint::assign(model, &entries).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn phase_lines(phase: &str, h: &TrainHistory) -> Vec<serde_json::Value> {
    h.train_loss
        .iter()
        .zip(&h.heldout_loss)
        .enumerate()
        .map(|(e, (t, v))| json!({"phase": phase, "epoch": e + 1, "train_loss": t, "heldout_loss": v, "best": e == h.best_epoch}))
        .collect()
}

fn rl_lines(h: &RlHistory) -> Vec<serde_json::Value> {
    h.epochs
        .iter()
        .map(|e| {
            let mut v = serde_json::to_value(e).expect("plain struct");
            v["phase"] = json!("rl");
            v["best"] = json!(e.epoch == h.best_epoch);
            v
        })
        .collect()
}

/// Generates and saves the world, dataset and vocabularies.
pub fn make_dataset(cfg: &ExperimentConfig, run: &RunDir) -> Result<Corpus> {
    std::fs::create_dir_all(&run.root).map_err(|e| Error::io(&run.root, e))?;
    cfg.save(&run.config())?;
    let corpus = Corpus::generate(cfg)?;
    run.save_corpus(&corpus)?;
    Ok(corpus)
}

pub fn run_train_lm(cfg: &ExperimentConfig, run: &RunDir, corpus: &Corpus) -> Result<(LanguageModel<f32>, TrainHistory)> {
    let (lm, h) = pretrain_lm(cfg, corpus)?;
    checkpoint::save(&run.lm(), &lm)?;
    run.append_log(&phase_lines("lm", &h))?;
    Ok((lm, h))
}

pub fn run_train_vse(cfg: &ExperimentConfig, run: &RunDir, corpus: &Corpus) -> Result<(SentenceVse<f32>, ConceptVse<f32>)> {
    let (s, c, sh, ch) = pretrain_vse(cfg, corpus)?;
    checkpoint::save(&run.sentence_vse(), &s)?;
    checkpoint::save(&run.concept_vse(), &c)?;
    run.append_log(&phase_lines("sentence_vse", &sh))?;
    run.append_log(&phase_lines("concept_vse", &ch))?;
    Ok((s, c))
}

pub fn run_pretrain(cfg: &ExperimentConfig, run: &RunDir, corpus: &Corpus) -> Result<Captioner<f32>> {
    let (cap, h) = pretrain_captioner(cfg, corpus)?;
    checkpoint::save(&run.captioner(), &cap)?;
    run.append_log(&phase_lines("captioner", &h))?;
    Ok(cap)
}

/// Trains (unless Baseline), saves and evaluates one mode on the test split.
pub fn run_mode(
    cfg: &ExperimentConfig,
    run: &RunDir,
    corpus: &Corpus,
    frozen: &Frozen,
    init: &Captioner<f32>,
    mode: Mode,
) -> Result<EvalReport> {
    let (model, hist) = train_ssr(cfg, mode, init, corpus, frozen)?;
    let dir = run.mode_dir(mode);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    if mode.trains() {
        checkpoint::save(&run.mode_captioner(mode), &model)?;
        run.append_log(&rl_lines(&hist))?;
    }
    let rewards = frozen.reward_models(corpus, cfg.lambda)?;
    let report = evaluate_corpus(
        &model,
        &corpus.dataset.test,
        &corpus.vocab,
        Some(&rewards),
        cfg.beam_size,
        cfg.max_decode_len,
    )?;
    report.write(&dir)?;
    run.append_log(&[json!({"phase": "test", "mode": mode, "report": &report})])?;
    Ok(report)
}

/// The whole pipeline: data, the three pretraining phases, every requested
/// mode from the same pretrained captioner, and the comparison table.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<Vec<(Mode, EvalReport)>> {
    cfg.validate()?;
    let run = RunDir::new(out);
    if run.log().exists() {
        std::fs::remove_file(run.log()).map_err(|e| Error::io(run.log(), e))?;
    }
    progress("generating data");
    let corpus = make_dataset(cfg, &run)?;
    progress("training language model");
    let (lm, _) = run_train_lm(cfg, &run, &corpus)?;
    progress("training matching models");
    let (sentence, concept) = run_train_vse(cfg, &run, &corpus)?;
    progress("pretraining captioner");
    let init = run_pretrain(cfg, &run, &corpus)?;
    let frozen = Frozen { lm, sentence, concept };
    let mut out = Vec::new();
    for &mode in &cfg.modes {
        progress(&format!("mode {mode}"));
        out.push((mode, run_mode(cfg, &run, &corpus, &frozen, &init, mode)?));
    }
    write_comparison(&run, &out)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub mode: Mode,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub cider: f64,
    pub r_flc: f64,
    pub r_srlv: f64,
}

impl ComparisonRow {
    pub fn of(mode: Mode, r: &EvalReport) -> Self {
        Self {
            mode,
            bleu1: r.bleu[0],
            bleu2: r.bleu[1],
            bleu3: r.bleu[2],
            bleu4: r.bleu[3],
            cider: r.cider,
            r_flc: r.r_flc,
            r_srlv: r.r_srlv,
        }
    }
}

/// Aligned text table, one row per mode.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "mode", "B@1", "B@2", "B@3", "B@4", "CIDEr", "r_flc", "r_srlv"
    )
    .expect("string write");
    for r in rows {
        writeln!(
            s,
            "{:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.mode.name(),
            r.bleu1,
            r.bleu2,
            r.bleu3,
            r.bleu4,
            r.cider,
            r.r_flc,
            r.r_srlv
        )
        .expect("string write");
    }
    s
}

fn write_comparison(run: &RunDir, reports: &[(Mode, EvalReport)]) -> Result<String> {
    let rows: Vec<ComparisonRow> = reports.iter().map(|(m, r)| ComparisonRow::of(*m, r)).collect();
    let table = render_table(&rows);
    let txt = run.root.join("comparison.txt");
    std::fs::write(&txt, &table).map_err(|e| Error::io(&txt, e))?;
    let jl = run.root.join("comparison.jsonl");
    let lines: String = rows
        .iter()
        .map(|r| serde_json::to_string(r).expect("plain struct") + "\n")
        .collect();
    std::fs::write(&jl, lines).map_err(|e| Error::io(&jl, e))?;
    Ok(table)
}

/// Rebuilds the comparison files from the per-mode reports on disk. Modes
/// listed in the run config but without a report are named in the error.
pub fn report(run: &RunDir, modes: Option<&[Mode]>) -> Result<String> {
    let from_cfg;
    let modes = match modes {
        Some(m) => m,
        None => {
            from_cfg = run
                .load_config()?
                .ok_or_else(|| Error::Missing(format!("{}: no config.toml", run.root.display())))?
                .modes;
            &from_cfg
        }
    };
    let missing: Vec<&str> = modes
        .iter()
        .filter(|m| !run.mode_dir(**m).join("report.txt").exists())
        .map(|m| m.name())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing(format!("no report for modes: {}", missing.join(", "))));
    }
    let reports: Vec<(Mode, EvalReport)> = modes
        .iter()
        .map(|&m| Ok((m, EvalReport::read(&run.mode_dir(m))?)))
        .collect::<Result<_>>()?;
    write_comparison(run, &reports)
}
