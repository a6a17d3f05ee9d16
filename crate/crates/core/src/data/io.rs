use std::fmt::Write as _;
use std::path::Path;

use super::dataset::{PseudoPair, Split};
use crate::error::{Error, Result};

/// One JSON record per line. Features are written in shortest round-trip
/// decimal form, so reading restores them bit for bit.
pub fn write_split(path: &Path, pairs: &[PseudoPair]) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        let line = serde_json::to_string(p).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(out, "{line}").expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path, expect: Split) -> Result<Vec<PseudoPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_split(&text, path, expect)
}

pub fn parse_split(text: &str, path: &Path, expect: Split) -> Result<Vec<PseudoPair>> {
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.into(),
        line,
        msg,
    };
    let mut out: Vec<PseudoPair> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let p: PseudoPair = serde_json::from_str(line).map_err(|e| bad(n, e.to_string()))?;
        if p.split != expect {
            return Err(bad(n, format!("record belongs to split {:?}", p.split)));
        }
        if p.target.is_empty() {
            return Err(bad(n, "empty target caption".into()));
        }
        if p.image.features.is_empty() || p.image.features.iter().any(|x| !x.is_finite()) {
            return Err(bad(n, "features must be non-empty and finite".into()));
        }
        if let Some(first) = out.first() {
            if first.image.features.len() != p.image.features.len() {
                return Err(bad(
                    n,
                    format!(
                        "feature dimension {} differs from {}",
                        p.image.features.len(),
                        first.image.features.len()
                    ),
                ));
            }
        }
        out.push(p);
    }
    Ok(out)
}
