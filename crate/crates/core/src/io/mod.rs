//! On-disk formats: binary pair and checkpoint containers, run manifests,
//! JSONL training logs and ASCII PLY export.

mod container;
mod manifest;
mod ply;

pub use container::{
    decode_checkpoint, decode_pair, encode_checkpoint, encode_pair, read_checkpoint, read_pair, write_checkpoint,
    write_pair, FORMAT_VERSION, MAGIC,
};
pub use manifest::{read_manifest, write_manifest, Manifest, PairEntry};
pub use ply::write_ply;

use crate::error::Result;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| crate::Error::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
