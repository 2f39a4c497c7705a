//! On-disk dataset layout.
//!
//! A dataset directory holds three files:
//!
//! - `features.bin`: magic `IVRF`, then little-endian `u32` version (1),
//!   `u32` N, `u32` D, then N×D little-endian `f32` values, row-major.
//! - `manifest.json`: `attrs`, `objs`, `seen_pairs`, `unseen_pairs`
//!   (pairs as `[attr_idx, obj_idx]`).
//! - `labels.csv`: header `index,attr,obj,partition`, one row per feature row.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureDataset, Pair, PairSplit, Partition, SampleLabel, Vocab};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURES_MAGIC: &[u8; 4] = b"IVRF";
pub const FEATURES_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Serialize, Deserialize)]
struct Manifest {
    attrs: Vec<String>,
    objs: Vec<String>,
    seen_pairs: Vec<Pair>,
    unseen_pairs: Vec<Pair>,
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    index: usize,
    attr: usize,
    obj: usize,
    partition: Partition,
}

pub fn write_dataset(ds: &FeatureDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let feats = ds.features();
    let mut bytes = Vec::with_capacity(HEADER_LEN + feats.len() * 4);
    bytes.extend_from_slice(FEATURES_MAGIC);
    bytes.extend_from_slice(&FEATURES_VERSION.to_le_bytes());
    bytes.extend_from_slice(&to_u32(feats.rows(), "N")?.to_le_bytes());
    bytes.extend_from_slice(&to_u32(feats.cols(), "D")?.to_le_bytes());
    for &x in feats.as_slice() {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    let path = dir.join("features.bin");
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;

    let manifest = Manifest {
        attrs: ds.vocab().attrs.clone(),
        objs: ds.vocab().objs.clone(),
        seen_pairs: ds.split().seen.clone(),
        unseen_pairs: ds.split().unseen.clone(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

    let path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    for (index, l) in ds.labels().iter().enumerate() {
        w.serialize(LabelRow {
            index,
            attr: l.pair.attr,
            obj: l.pair.obj,
            partition: l.partition,
        })
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<FeatureDataset> {
    let dir = dir.as_ref();

    let path = dir.join("features.bin");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let features = parse_features(&path, &bytes)?;

    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let vocab = Vocab {
        attrs: manifest.attrs,
        objs: manifest.objs,
    };
    let split = PairSplit {
        seen: manifest.seen_pairs,
        unseen: manifest.unseen_pairs,
    };

    let path = dir.join("labels.csv");
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let headers = r.headers().map_err(|e| csv_err(&path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["index", "attr", "obj", "partition"] {
        return Err(Error::format(
            &path,
            format!("expected header index,attr,obj,partition, found {headers:?}"),
        ));
    }
    let mut labels = Vec::new();
    for (row, rec) in r.deserialize::<LabelRow>().enumerate() {
        let rec = rec.map_err(|e| Error::format(&path, e.to_string()))?;
        if rec.index != row {
            return Err(Error::Validation(format!(
                "labels.csv row {row} has index {}",
                rec.index
            )));
        }
        labels.push(SampleLabel {
            pair: Pair::new(rec.attr, rec.obj),
            partition: rec.partition,
        });
    }
    if labels.len() != features.rows() {
        return Err(Error::Validation(format!(
            "labels.csv has {} rows but features.bin has {} samples",
            labels.len(),
            features.rows()
        )));
    }

    FeatureDataset::new(vocab, split, features, labels)
}

fn parse_features(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[..4] != FEATURES_MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic {:?}, expected IVRF", &bytes[..4]),
        ));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURES_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}, expected {FEATURES_VERSION}"),
        ));
    }
    let (n, d) = (word(8) as usize, word(12) as usize);
    let expected = HEADER_LEN + n * d * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} bytes for N={n}, D={d}, found {}",
                bytes.len()
            ),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::from_vec(n, d, data)
}

fn to_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Validation(format!("{what}={x} exceeds u32")))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e.to_string())
    }
}
