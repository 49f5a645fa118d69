//! Single-file model checkpoints.
//!
//! Layout (UTF-8 text, LF line endings):
//!
//! ```text
//! DUALTRAIN1
//! {"model":"<tag>","version":<u32>}
//! <model state as one JSON document>
//! ```
//!
//! Model tags: `ngram_copy` (state: config, vocabulary, bigram counts),
//! `bm25` (state: k1/b only; the index is rebuilt from the pool) and
//! `dual_encoder` (state: config plus the trained embedding rows keyed by token;
//! rows never touched by training are regenerated from the token hash).

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &str = "DUALTRAIN1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub model: String,
    pub version: u32,
}

pub fn encode<T: Serialize>(model: &str, state: &T) -> Result<String> {
    let header = Header {
        model: model.to_string(),
        version: VERSION,
    };
    Ok(format!(
        "{MAGIC}\n{}\n{}\n",
        serde_json::to_string(&header)?,
        serde_json::to_string(state)?
    ))
}

pub fn save<T: Serialize>(path: &Path, model: &str, state: &T) -> Result<()> {
    fs::write(path, encode(model, state)?).map_err(|e| Error::io(path, e))
}

fn split(raw: &str) -> Result<(Header, &str)> {
    let mut parts = raw.splitn(3, '\n');
    if parts.next() != Some(MAGIC) {
        return Err(Error::Checkpoint("missing DUALTRAIN1 magic header".into()));
    }
    let header: Header = serde_json::from_str(
        parts
            .next()
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?,
    )?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let body = parts
        .next()
        .ok_or_else(|| Error::Checkpoint("missing state".into()))?;
    Ok((header, body))
}

pub fn read_header(path: &Path) -> Result<Header> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(split(&raw)?.0)
}

pub fn decode<T: DeserializeOwned>(raw: &str, expected_model: &str) -> Result<T> {
    let (header, body) = split(raw)?;
    if header.model != expected_model {
        return Err(Error::Checkpoint(format!(
            "expected a {expected_model} checkpoint, found {}",
            header.model
        )));
    }
    Ok(serde_json::from_str(body.trim_end())?)
}

pub fn load<T: DeserializeOwned>(path: &Path, expected_model: &str) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode(&raw, expected_model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_foreign_files() {
        assert!(decode::<u32>("HELLO\n{}\n1\n", "x").is_err());
        let ok = encode("x", &7u32).unwrap();
        assert!(ok.starts_with("DUALTRAIN1\n"));
        assert_eq!(decode::<u32>(&ok, "x").unwrap(), 7);
        assert!(decode::<u32>(&ok, "y").is_err());
    }
}
