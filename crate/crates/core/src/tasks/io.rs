use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Algorithm, Dataset, Feature, GraphInstance, Split};
use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    seed: u64,
    split: Split,
    algorithm: Algorithm,
    count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EdgeRecord {
    Plain(usize, usize),
    Weighted(usize, usize, f64),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    algorithm: Algorithm,
    n: usize,
    edges: Vec<EdgeRecord>,
    features: BTreeMap<String, Feature>,
}

/// Writes one header line followed by one instance per line. Edge weights
/// are inlined into `edges` and also kept in the `weight` feature.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        version: DATASET_VERSION,
        seed: ds.seed,
        split: ds.split,
        algorithm: ds.algorithm,
        count: ds.instances.len(),
    };
    let mut emit = |line: String| -> Result<()> {
        w.write_all(line.as_bytes())
            .and_then(|()| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    emit(to_json(&header)?)?;
    for inst in &ds.instances {
        let weights = inst.features.get("weight").map(|f| &f.values);
        let edges = inst
            .edges
            .iter()
            .enumerate()
            .map(|(i, &(s, d))| match weights {
                Some(w) => EdgeRecord::Weighted(s, d, w[i]),
                None => EdgeRecord::Plain(s, d),
            })
            .collect();
        emit(to_json(&InstanceRecord {
            algorithm: inst.algorithm,
            n: inst.n,
            edges,
            features: inst.features.clone(),
        })?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::contract(format!("serialization failed: {e}")))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
    let header: Header = match lines.next() {
        None => return Err(parse_err(1, "missing header line".into())),
        Some((_, l)) => {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| parse_err(1, e.to_string()))?
        }
    };
    if header.version != DATASET_VERSION {
        return Err(parse_err(1, format!("unsupported version {}", header.version)));
    }
    let mut instances = Vec::with_capacity(header.count);
    for (idx, l) in lines {
        let line_no = idx + 1;
        let l = l.map_err(|e| Error::io(path, e))?;
        if l.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord =
            serde_json::from_str(&l).map_err(|e| parse_err(line_no, e.to_string()))?;
        if rec.algorithm != header.algorithm {
            return Err(parse_err(
                line_no,
                format!("instance is {}, header says {}", rec.algorithm, header.algorithm),
            ));
        }
        let edges = rec
            .edges
            .iter()
            .map(|e| match *e {
                EdgeRecord::Plain(s, d) | EdgeRecord::Weighted(s, d, _) => (s, d),
            })
            .collect();
        let inst = GraphInstance {
            algorithm: rec.algorithm,
            n: rec.n,
            edges,
            features: rec.features,
            cgp: None,
        };
        inst.validate()
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        instances.push(inst);
    }
    if instances.len() != header.count {
        return Err(parse_err(
            instances.len() + 2,
            format!(
                "header announces {} instances, file holds {}",
                header.count,
                instances.len()
            ),
        ));
    }
    Ok(Dataset {
        algorithm: header.algorithm,
        split: header.split,
        seed: header.seed,
        instances,
    })
}
