//! Binary container of named f32 arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SSRCKPT1"                          8-byte magic
//! u32 entry count
//! per entry:
//!   u32 name length, name bytes (UTF-8)
//!   u32 rank, u32 extent × rank
//!   f32 × product(extents)
//! u32 CRC-32 (IEEE) of every preceding byte
//! ```

use std::path::Path;

use crate::autodiff::{Parameters, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SSRCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &e.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<Entry>, String> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..8] != MAGIC {
        return Err("bad magic".into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err("checksum mismatch".into());
    }
    let mut r = Reader { buf: body, pos: 8 };
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| format!("entry name: {e}"))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or("entry too large")?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.push(Entry { name, shape, data });
    }
    if r.pos != body.len() {
        return Err(format!("{} trailing bytes", body.len() - r.pos));
    }
    Ok(entries)
}

pub fn entries_of<M: Parameters<f32> + ?Sized>(model: &M) -> Vec<Entry> {
    let mut out = Vec::new();
    model.visit("", &mut |name, t| {
        out.push(Entry {
            name,
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
    });
    out
}

pub fn write(path: &Path, entries: &[Entry]) -> Result<()> {
    std::fs::write(path, encode(entries)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<Entry>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::Checkpoint {
        path: path.into(),
        msg,
    })
}

pub fn save<M: Parameters<f32> + ?Sized>(path: &Path, model: &M) -> Result<()> {
    write(path, &entries_of(model))
}

/// Overwrites every parameter of `model` from `entries`; names and shapes must
/// match one-to-one.
pub fn assign<M: Parameters<f32> + ?Sized>(model: &mut M, entries: &[Entry]) -> Result<()> {
    let mut idx = 0;
    let mut problem: Option<String> = None;
    model.visit_mut("", &mut |name, t: &mut Tensor<f32>| {
        if problem.is_some() {
            return;
        }
        match entries.get(idx) {
            Some(e) if e.name == name && e.shape == t.shape() => {
                t.data_mut().copy_from_slice(&e.data);
                t.zero_grad();
            }
            Some(e) => {
                problem = Some(format!(
                    "entry {idx}: expected {name} {:?}, found {} {:?}",
                    t.shape(),
                    e.name,
                    e.shape
                ))
            }
            None => problem = Some(format!("missing entry {name}")),
        }
        idx += 1;
    });
    if let Some(msg) = problem {
        return Err(Error::Invalid(msg));
    }
    if idx != entries.len() {
        return Err(Error::Invalid(format!(
            "checkpoint has {} entries, model has {idx}",
            entries.len()
        )));
    }
    Ok(())
}

pub fn shape_of<'a>(entries: &'a [Entry], name: &str) -> Result<&'a [usize]> {
    entries
        .iter()
        .find(|e| e.name == name)
        .map(|e| e.shape.as_slice())
        .ok_or_else(|| Error::Missing(format!("checkpoint entry {name}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::{Captioner, CaptionerDims};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn model_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = CaptionerDims { feature: 3, embed: 4, hidden: 5, vocab: 9 };
        let m = Captioner::<f32>::init(dims, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&p, &m).unwrap();
        let mut other = Captioner::<f32>::init(dims, &mut rng);
        assign(&mut other, &read(&p).unwrap()).unwrap();
        assert_eq!(entries_of(&m), entries_of(&other));
        assert_eq!(std::fs::read(&p).unwrap(), encode(&entries_of(&other)));
    }

    #[test]
    fn corruption_detected() {
        let e = vec![Entry { name: "w".into(), shape: vec![2], data: vec![1.0, 2.0] }];
        let mut b = encode(&e);
        assert_eq!(&b[..8], MAGIC);
        b[20] ^= 1;
        assert_eq!(decode(&b).unwrap_err(), "checksum mismatch");
        assert!(decode(b"SSRCKPT0\0\0\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Captioner::<f32>::init(CaptionerDims { feature: 3, embed: 4, hidden: 5, vocab: 9 }, &mut rng);
        let mut b = Captioner::<f32>::init(CaptionerDims { feature: 3, embed: 4, hidden: 6, vocab: 9 }, &mut rng);
        assert!(assign(&mut b, &entries_of(&a)).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_entries_round_trip(
            raw in proptest::collection::vec(("[a-z.é]{0,12}", proptest::collection::vec(1usize..4, 1..3), any::<u32>()), 0..5)
        ) {
            let entries: Vec<Entry> = raw.into_iter().map(|(name, shape, seed)| {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32))).collect();
                Entry { name, shape, data }
            }).collect();
            let back = decode(&encode(&entries)).unwrap();
            prop_assert_eq!(back.len(), entries.len());
            for (a, b) in back.iter().zip(&entries) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.shape, &b.shape);
                let ab: Vec<u32> = a.data.iter().map(|x| x.to_bits()).collect();
                let bb: Vec<u32> = b.data.iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }
}
