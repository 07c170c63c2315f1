//! Checkpoint file format.
//!
//! A checkpoint is one line of compact JSON (the header) terminated by `\n`, followed
//! by the raw little-endian `f64` payload: every parameter in header order, then, if an
//! optimizer is present, all first moments and all second moments in the same order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adamw::{AdamW, AdamWConfig};
use super::array::DenseArray;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "sols-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerEntry {
    config: AdamWConfig,
    step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerEntry>,
    meta: serde_json::Value,
    payload_bytes: u64,
    payload_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub optimizer: Option<AdamW>,
    pub meta: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode(params: &ParamStore, optimizer: Option<&AdamW>, meta: &serde_json::Value) -> Vec<u8> {
    let mut payload = Vec::with_capacity(8 * params.num_values() * 3);
    let mut push = |a: &DenseArray| {
        for x in a.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    };
    params.iter().for_each(|p| push(&p.value));
    if let Some(opt) = optimizer {
        opt.first_moment.iter().for_each(&mut push);
        opt.second_moment.iter().for_each(&mut push);
    }
    let header = Header {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        tensors: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        optimizer: optimizer.map(|o| OptimizerEntry {
            config: o.config,
            step: o.step,
        }),
        meta: meta.clone(),
        payload_bytes: payload.len() as u64,
        payload_sha256: sha256_hex(&payload),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    if header.format != FORMAT_NAME {
        return Err(Error::Format(format!("not a checkpoint: {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {} unsupported (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    let payload = &bytes[split + 1..];
    if payload.len() as u64 != header.payload_bytes {
        return Err(Error::Format(format!(
            "payload is {} bytes, header says {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    if sha256_hex(payload) != header.payload_sha256 {
        return Err(Error::Format("payload checksum mismatch".into()));
    }
    let per_copy: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    let copies = if header.optimizer.is_some() { 3 } else { 1 };
    if payload.len() != per_copy * copies * 8 {
        return Err(Error::Format("payload size does not match tensor shapes".into()));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut read_copy = || -> Result<Vec<DenseArray>> {
        header
            .tensors
            .iter()
            .map(|t| {
                let n = t.shape.iter().product();
                DenseArray::from_vec(&t.shape, values.by_ref().take(n).collect())
            })
            .collect()
    };
    let mut params = ParamStore::new();
    for (t, v) in header.tensors.iter().zip(read_copy()?) {
        params.insert(&t.name, v)?;
    }
    let optimizer = match &header.optimizer {
        Some(o) => {
            let first_moment = read_copy()?;
            let second_moment = read_copy()?;
            Some(AdamW {
                config: o.config,
                first_moment,
                second_moment,
                step: o.step,
            })
        }
        None => None,
    };
    Ok(Checkpoint {
        params,
        optimizer,
        meta: header.meta,
    })
}

pub fn save(
    path: &Path,
    params: &ParamStore,
    optimizer: Option<&AdamW>,
    meta: &serde_json::Value,
) -> Result<()> {
    fs::write(path, encode(params, optimizer, meta))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> (ParamStore, AdamW) {
        let mut p = ParamStore::new();
        p.insert("w", DenseArray::from_vec(&[2, 2], vec![1.0, -2.0, 0.5, 1e-300]).unwrap())
            .unwrap();
        p.insert("b", DenseArray::vector(vec![f64::MIN_POSITIVE, 3.25])).unwrap();
        for q in p.iter_mut() {
            q.grad.fill(0.1);
        }
        let mut opt = AdamW::new(AdamWConfig::new(1e-3, 0.01), &p);
        opt.step(&mut p).unwrap();
        (p, opt)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (p, opt) = sample();
        let bytes = encode(&p, Some(&opt), &json!({"kind": "test"}));
        let ck = decode(&bytes).unwrap();
        for (a, b) in ck.params.iter().zip(p.iter()) {
            assert_eq!(a.name, b.name);
            let bits = |x: &DenseArray| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert_eq!(ck.optimizer.as_ref(), Some(&opt));
        assert_eq!(ck.meta, json!({"kind": "test"}));
        assert_eq!(encode(&ck.params, ck.optimizer.as_ref(), &ck.meta), bytes);
    }

    #[test]
    fn corrupt_payload_is_rejected() {
        let (p, opt) = sample();
        let mut bytes = encode(&p, Some(&opt), &json!(null));
        let last = bytes.len() - 3;
        bytes[last] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_is_a_format_error() {
        let (p, _) = sample();
        let bytes = encode(&p, None, &json!(null));
        let text = String::from_utf8_lossy(&bytes).replace("\"version\":1", "\"version\":9");
        let err = decode(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }
}
