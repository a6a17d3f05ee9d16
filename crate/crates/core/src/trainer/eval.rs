use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PseudoPair;
use crate::decoding::{beam_search, greedy_batch};
use crate::error::{Error, Result};
use crate::metrics::{corpus_stats, CiderScorer};
use crate::rewards::{fluency_rewards, sentence_relevancy_rewards, RewardModels};
use crate::seq::{feature_batch, Caption, Captioner, LanguageModel, Vocabulary};

const CHUNK: usize = 256;

/// Per-image outcome of an evaluation decode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub image_id: u64,
    pub hypothesis: String,
    pub cider: f64,
    pub r_flc: Option<f64>,
    pub r_srlv: Option<f64>,
    pub disfluent: bool,
    pub irrelevant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub name: String,
    pub count: usize,
    pub cider: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: usize,
    pub bleu: [f64; 4],
    pub cider: f64,
    /// Mean fluency and sentence rewards of the decodes (0 when no scorers
    /// were supplied).
    pub r_flc: f64,
    pub r_srlv: f64,
    /// CIDEr broken down by the noise flags of each image's pseudo caption.
    pub groups: Vec<GroupScore>,
    #[serde(skip)]
    pub per_item: Vec<ItemScore>,
}

fn group_name(disfluent: bool, irrelevant: bool) -> &'static str {
    match (disfluent, irrelevant) {
        (false, false) => "clean",
        (true, false) => "disfluent",
        (false, true) => "irrelevant",
        (true, true) => "both",
    }
}

/// Decodes every image (greedy when `beam == 1`, beam search otherwise) and
/// scores the decodes against the clean references.
pub fn evaluate_corpus(
    model: &Captioner<f32>,
    pairs: &[PseudoPair],
    vocab: &Vocabulary,
    rewards: Option<&RewardModels<'_, f32, LanguageModel<f32>>>,
    beam: usize,
    max_len: usize,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    if let Some(p) = pairs.iter().find(|p| p.refs.is_empty()) {
        return Err(Error::Missing(format!("image {} has no references", p.image.image_id)));
    }
    let mut decoded: Vec<Caption> = Vec::with_capacity(pairs.len());
    if beam <= 1 {
        for chunk in pairs.chunks(CHUNK) {
            let feats: Vec<&[f32]> = chunk.iter().map(|p| p.image.features.as_slice()).collect();
            let fb = feature_batch(&feats)?;
            decoded.extend(greedy_batch(model, Some(&fb), chunk.len(), max_len)?.into_iter().map(|d| d.caption));
        }
    } else {
        for p in pairs {
            decoded.push(beam_search(model, Some(&p.image.features), beam, max_len)?.caption);
        }
    }

    let hyps: Vec<Vec<String>> = decoded.iter().map(|c| vocab.decode(c.ids())).collect();
    let refs: Vec<Vec<Vec<String>>> = pairs.iter().map(|p| p.refs.clone()).collect();
    let stats = corpus_stats(&hyps, &refs)?;
    let scorer = CiderScorer::fit(&refs)?;
    let ciders = scorer.score_corpus(&hyps, &refs)?;

    let (mut flc, mut srlv) = (None, None);
    if let Some(r) = rewards {
        let (mut f, mut s) = (Vec::new(), Vec::new());
        for (caps, ps) in decoded.chunks(CHUNK).zip(pairs.chunks(CHUNK)) {
            let cr: Vec<&Caption> = caps.iter().collect();
            let feats: Vec<&[f32]> = ps.iter().map(|p| p.image.features.as_slice()).collect();
            f.extend(fluency_rewards(r.lm, &cr)?);
            s.extend(sentence_relevancy_rewards(r.sentence, &feats, &cr)?);
        }
        flc = Some(f);
        srlv = Some(s);
    }

    let per_item: Vec<ItemScore> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| ItemScore {
            image_id: p.image.image_id,
            hypothesis: hyps[i].join(" "),
            cider: ciders[i],
            r_flc: flc.as_ref().map(|v| v[i]),
            r_srlv: srlv.as_ref().map(|v| v[i]),
            disfluent: p.flags.disfluent,
            irrelevant: p.flags.irrelevant,
        })
        .collect();
    let mut groups: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for it in &per_item {
        let g = groups.entry(group_name(it.disfluent, it.irrelevant)).or_default();
        g.0 += 1;
        g.1 += it.cider;
    }
    let n = pairs.len() as f64;
    let avg = |v: &Option<Vec<f64>>| v.as_ref().map_or(0.0, |v| v.iter().sum::<f64>() / n);
    Ok(EvalReport {
        items: pairs.len(),
        bleu: [stats.bleu(1), stats.bleu(2), stats.bleu(3), stats.bleu(4)],
        cider: ciders.iter().sum::<f64>() / n,
        r_flc: avg(&flc),
        r_srlv: avg(&srlv),
        groups: ["clean", "disfluent", "irrelevant", "both"]
            .iter()
            .filter_map(|&name| {
                groups.get(name).map(|&(count, sum)| GroupScore {
                    name: name.to_string(),
                    count,
                    cider: sum / count as f64,
                })
            })
            .collect(),
        per_item,
    })
}

impl EvalReport {
    /// `key: value` lines; numbers use the shortest exact rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "items: {}", self.items).expect("string write");
        for (k, b) in self.bleu.iter().enumerate() {
            writeln!(s, "bleu{}: {}", k + 1, b).expect("string write");
        }
        writeln!(s, "cider: {}", self.cider).expect("string write");
        writeln!(s, "r_flc: {}", self.r_flc).expect("string write");
        writeln!(s, "r_srlv: {}", self.r_srlv).expect("string write");
        for g in &self.groups {
            writeln!(s, "group.{}.count: {}", g.name, g.count).expect("string write");
            writeln!(s, "group.{}.cider: {}", g.name, g.cider).expect("string write");
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(": ").ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected `key: value`".into(),
            })?;
            kv.insert(k, v);
        }
        let get = |k: &str| -> Result<f64> {
            kv.get(k)
                .ok_or_else(|| Error::Missing(format!("{}: missing key {k}", path.display())))?
                .parse::<f64>()
                .map_err(|e| Error::Missing(format!("{}: key {k}: {e}", path.display())))
        };
        let mut groups = Vec::new();
        for name in ["clean", "disfluent", "irrelevant", "both"] {
            let ck = format!("group.{name}.count");
            if kv.contains_key(ck.as_str()) {
                groups.push(GroupScore {
                    name: name.to_string(),
                    count: get(&ck)? as usize,
                    cider: get(&format!("group.{name}.cider"))?,
                });
            }
        }
        Ok(Self {
            items: get("items")? as usize,
            bleu: [get("bleu1")?, get("bleu2")?, get("bleu3")?, get("bleu4")?],
            cider: get("cider")?,
            r_flc: get("r_flc")?,
            r_srlv: get("r_srlv")?,
            groups,
            per_item: Vec::new(),
        })
    }

    /// Writes `report.txt` and `items.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report = dir.join("report.txt");
        std::fs::write(&report, self.to_text()).map_err(|e| Error::io(&report, e))?;
        let items = dir.join("items.jsonl");
        let mut out = Vec::new();
        for it in &self.per_item {
            serde_json::to_writer(&mut out, it).map_err(|e| Error::io(&items, e.into()))?;
            out.write_all(b"\n").map_err(|e| Error::io(&items, e))?;
        }
        std::fs::write(&items, out).map_err(|e| Error::io(&items, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("report.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_text(&text, &path)
    }
}
