//! `ALNF` checkpoint files.
//!
//! Layout (little-endian): magic `ALNF`, format version `u32`, then records
//! `{name_len u32, name utf-8, rank u32, dims u64[rank], payload f32[...]}`
//! until end of file. The model hyperparameters travel in a record named
//! [`CONFIG_RECORD`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, Transformer};
use crate::error::{bail, Result};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"ALNF";
pub const FORMAT_VERSION: u32 = 1;
pub const CONFIG_RECORD: &str = "__config__";

/// One named tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u64>,
    pub payload: Vec<f32>,
}

pub fn write_records<W: Write>(mut w: W, records: &[Record]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for r in records {
        let count: u64 = r.dims.iter().product();
        if count as usize != r.payload.len() {
            bail!(Format, "record '{}' dims {:?} disagree with {} values", r.name, r.dims, r.payload.len());
        }
        w.write_all(&(r.name.len() as u32).to_le_bytes())?;
        w.write_all(r.name.as_bytes())?;
        w.write_all(&(r.dims.len() as u32).to_le_bytes())?;
        for d in &r.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &r.payload {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => crate::Error::Format(format!("truncated checkpoint while reading {what}")),
        _ => e.into(),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<Record>> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        bail!(Format, "not an ALNF checkpoint (magic {magic:?})");
    }
    let version = read_u32(&mut r, "version")?;
    if version != FORMAT_VERSION {
        bail!(Format, "unsupported checkpoint version {version}");
    }
    let mut records = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match r.read(&mut len[..1])? {
            0 => break,
            _ => read_exact_or(&mut r, &mut len[1..], "record header")?,
        }
        let name_len = u32::from_le_bytes(len) as usize;
        let mut name = vec![0u8; name_len];
        read_exact_or(&mut r, &mut name, "record name")?;
        let name = String::from_utf8(name).map_err(|_| crate::Error::Format("record name is not UTF-8".into()))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            read_exact_or(&mut r, &mut b, "dims")?;
            dims.push(u64::from_le_bytes(b));
        }
        let count: u64 = dims.iter().product();
        let mut bytes = vec![0u8; count as usize * 4];
        read_exact_or(&mut r, &mut bytes, "payload")?;
        let payload = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        records.push(Record { name, dims, payload });
    }
    Ok(records)
}

fn config_record(c: &ModelConfig) -> Record {
    let payload = vec![
        c.vocab_size as f32,
        c.d_emb as f32,
        c.n_layers as f32,
        c.n_heads as f32,
        c.d_ff as f32,
        c.dropout as f32,
        if c.shared_embeddings { 1.0 } else { 0.0 },
        c.max_positions as f32,
    ];
    Record { name: CONFIG_RECORD.to_string(), dims: vec![payload.len() as u64], payload }
}

fn config_from_record(r: &Record) -> Result<ModelConfig> {
    if r.payload.len() != 8 {
        bail!(Format, "config record has {} fields, expected 8", r.payload.len());
    }
    let p = &r.payload;
    Ok(ModelConfig {
        vocab_size: p[0] as usize,
        d_emb: p[1] as usize,
        n_layers: p[2] as usize,
        n_heads: p[3] as usize,
        d_ff: p[4] as usize,
        // Shortest decimal form, so 0.1 comes back as 0.1 rather than its f32 widening.
        dropout: p[5].to_string().parse().unwrap_or(p[5] as f64),
        shared_embeddings: p[6] != 0.0,
        max_positions: p[7] as usize,
    })
}

pub fn model_records(model: &Transformer<f32>) -> Vec<Record> {
    let mut out = vec![config_record(model.config())];
    for (_, p) in model.params().iter() {
        out.push(Record {
            name: p.name.clone(),
            dims: p.value.shape().iter().map(|&d| d as u64).collect(),
            payload: p.value.data().to_vec(),
        });
    }
    out
}

pub fn model_from_records(records: Vec<Record>) -> Result<Transformer<f32>> {
    let mut config = None;
    let mut store = ParamStore::new();
    for r in records {
        if r.name == CONFIG_RECORD {
            config = Some(config_from_record(&r)?);
            continue;
        }
        let shape = r.dims.iter().map(|&d| d as usize).collect();
        let t = Tensor::new(shape, r.payload).map_err(|e| crate::Error::Format(format!("record '{}': {e}", r.name)))?;
        store.add(r.name, t).map_err(|e| crate::Error::Format(e.to_string()))?;
    }
    let Some(config) = config else {
        bail!(Format, "checkpoint has no {CONFIG_RECORD} record");
    };
    Transformer::from_params(config, store).map_err(|e| match e {
        crate::Error::Parameter(m) => crate::Error::Format(m),
        other => other,
    })
}

/// Writes atomically through a temporary sibling file.
pub fn save_checkpoint(path: &Path, model: &Transformer<f32>) -> Result<()> {
    crate::data::write_atomic(path, |w| write_records(w, &model_records(model)))
}

pub fn load_checkpoint(path: &Path) -> Result<Transformer<f32>> {
    let file = File::open(path)?;
    model_from_records(read_records(BufReader::new(file))?)
}

/// Convenience for in-memory round trips.
pub fn checkpoint_bytes(model: &Transformer<f32>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_records(BufWriter::new(&mut buf), &model_records(model))?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::ModelConfig;
    use rand::SeedableRng;

    fn tiny() -> Transformer<f32> {
        let config = ModelConfig { vocab_size: 6, d_emb: 4, n_layers: 1, n_heads: 2, d_ff: 4, ..ModelConfig::default() };
        Transformer::new(config, &mut crate::SeededRng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn records_round_trip() {
        let records = model_records(&tiny());
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn missing_config_is_a_format_error() {
        let records: Vec<Record> = model_records(&tiny()).into_iter().filter(|r| r.name != CONFIG_RECORD).collect();
        assert!(matches!(model_from_records(records), Err(crate::Error::Format(_))));
    }

    #[test]
    fn missing_parameter_is_a_format_error() {
        let mut records = model_records(&tiny());
        records.pop();
        assert!(model_from_records(records).is_err());
    }
}
