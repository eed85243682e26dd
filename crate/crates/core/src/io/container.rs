//! Little-endian section container.
//!
//! Layout: magic `GSF1`, `u16` version, then sections of
//! `[tag: 4 bytes][count: u64][payload]`. Pair files carry `PTS1`, `PTS2`,
//! `FLOW` (f32 x3 per element), and `LBL1`/`LBL2` (u32 per point, `u32::MAX`
//! for unlabeled). Checkpoints carry `META` (u64: dim, candidate_k), `EMBD`
//! and `LTMP` (f64).

use crate::error::{Error, Result};
use crate::estimator::EstimatorParams;
use crate::geom::{EntityId, FlowField, PointCloud, Vec3};
use crate::synth::AnnotatedPair;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"GSF1";
pub const FORMAT_VERSION: u16 = 1;
const NO_LABEL: u32 = u32::MAX;

fn element_size(tag: &[u8; 4]) -> Option<usize> {
    match tag {
        b"PTS1" | b"PTS2" | b"FLOW" => Some(12),
        b"LBL1" | b"LBL2" => Some(4),
        b"META" | b"EMBD" | b"LTMP" => Some(8),
        _ => None,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn new() -> Self {
        let mut buf = MAGIC.to_vec();
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Self(buf)
    }

    fn header(&mut self, tag: &[u8; 4], count: usize) {
        self.0.extend_from_slice(tag);
        self.0.extend_from_slice(&(count as u64).to_le_bytes());
    }

    fn vectors(&mut self, tag: &[u8; 4], vs: &[Vec3]) {
        self.header(tag, vs.len());
        for v in vs {
            for c in v.iter() {
                self.0.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
    }

    fn labels(&mut self, tag: &[u8; 4], labels: &[Option<EntityId>]) {
        self.header(tag, labels.len());
        for l in labels {
            self.0.extend_from_slice(&l.unwrap_or(NO_LABEL).to_le_bytes());
        }
    }
}

struct Section<'a> {
    tag: [u8; 4],
    count: usize,
    payload: &'a [u8],
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Format("truncated container".into()));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

fn parse(bytes: &[u8]) -> Result<Vec<Section<'_>>> {
    let mut buf = bytes;
    if take(&mut buf, 4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(&mut buf, 2)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut sections: Vec<Section> = Vec::new();
    while !buf.is_empty() {
        let tag: [u8; 4] = take(&mut buf, 4)?.try_into().unwrap();
        let size = element_size(&tag)
            .ok_or_else(|| Error::Format(format!("unknown section {:?}", String::from_utf8_lossy(&tag))))?;
        let count = u64::from_le_bytes(take(&mut buf, 8)?.try_into().unwrap());
        let len = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(size))
            .ok_or_else(|| Error::Format("section too large".into()))?;
        let payload = take(&mut buf, len)?;
        if sections.iter().any(|s| s.tag == tag) {
            return Err(Error::Format(format!("duplicate section {}", String::from_utf8_lossy(&tag))));
        }
        sections.push(Section {
            tag,
            count: count as usize,
            payload,
        });
    }
    Ok(sections)
}

fn find<'a>(sections: &'a [Section<'a>], tag: &[u8; 4]) -> Option<&'a Section<'a>> {
    sections.iter().find(|s| &s.tag == tag)
}

fn require<'a>(sections: &'a [Section<'a>], tag: &[u8; 4]) -> Result<&'a Section<'a>> {
    find(sections, tag).ok_or_else(|| Error::Format(format!("missing section {}", String::from_utf8_lossy(tag))))
}

fn f32s(payload: &[u8]) -> impl Iterator<Item = f64> + '_ {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
}

fn read_vectors(s: &Section) -> Vec<Vec3> {
    let vals: Vec<f64> = f32s(s.payload).collect();
    vals.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn read_labels(s: &Section) -> Vec<Option<EntityId>> {
    s.payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .map(|v| (v != NO_LABEL).then_some(v))
        .collect()
}

fn cloud(points: Vec<Vec3>, labels: Option<&Section>) -> Result<PointCloud> {
    match labels {
        None => PointCloud::new(points),
        Some(l) => {
            if l.count != points.len() {
                return Err(Error::Format("label count differs from point count".into()));
            }
            PointCloud::with_labels(points, read_labels(l))
        }
    }
}

pub fn encode_pair(pair: &AnnotatedPair) -> Vec<u8> {
    let mut w = Writer::new();
    w.vectors(b"PTS1", pair.first.points());
    w.vectors(b"PTS2", pair.second.points());
    w.vectors(b"FLOW", pair.flow.vectors());
    if let Some(l) = pair.first.labels() {
        w.labels(b"LBL1", l);
    }
    if let Some(l) = pair.second.labels() {
        w.labels(b"LBL2", l);
    }
    w.0
}

pub fn decode_pair(bytes: &[u8]) -> Result<AnnotatedPair> {
    let sections = parse(bytes)?;
    let pts1 = require(&sections, b"PTS1")?;
    let flow = require(&sections, b"FLOW")?;
    if pts1.count != flow.count {
        return Err(Error::Format("PTS1 and FLOW counts differ".into()));
    }
    let first = cloud(read_vectors(pts1), find(&sections, b"LBL1"))?;
    let second = cloud(read_vectors(require(&sections, b"PTS2")?), find(&sections, b"LBL2"))?;
    Ok(AnnotatedPair {
        first,
        second,
        flow: FlowField::new(read_vectors(flow))?,
    })
}

pub fn write_pair(path: &Path, pair: &AnnotatedPair) -> Result<()> {
    Ok(std::fs::write(path, encode_pair(pair))?)
}

pub fn read_pair(path: &Path) -> Result<AnnotatedPair> {
    decode_pair(&std::fs::read(path)?)
}

pub fn encode_checkpoint(params: &EstimatorParams) -> Vec<u8> {
    let mut w = Writer::new();
    w.header(b"META", 2);
    w.0.extend_from_slice(&(params.dim() as u64).to_le_bytes());
    w.0.extend_from_slice(&(params.candidate_k() as u64).to_le_bytes());
    w.header(b"EMBD", params.embedding().len());
    for v in params.embedding() {
        w.0.extend_from_slice(&v.to_le_bytes());
    }
    w.header(b"LTMP", 1);
    w.0.extend_from_slice(&params.log_temperature().to_le_bytes());
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EstimatorParams> {
    let sections = parse(bytes)?;
    let u64s = |s: &Section| -> Vec<u64> {
        s.payload
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let f64s = |s: &Section| -> Vec<f64> {
        s.payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let meta = u64s(require(&sections, b"META")?);
    let ltmp = f64s(require(&sections, b"LTMP")?);
    if meta.len() != 2 || ltmp.len() != 1 {
        return Err(Error::Format("malformed checkpoint header".into()));
    }
    let embedding = f64s(require(&sections, b"EMBD")?);
    EstimatorParams::new(meta[0] as usize, embedding, ltmp[0], meta[1] as usize)
        .map_err(|e| Error::Format(format!("invalid checkpoint: {e}")))
}

pub fn write_checkpoint(path: &Path, params: &EstimatorParams) -> Result<()> {
    Ok(std::fs::write(path, encode_checkpoint(params))?)
}

pub fn read_checkpoint(path: &Path) -> Result<EstimatorParams> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::EstimatorConfig;

    fn pair() -> AnnotatedPair {
        let first = PointCloud::with_labels(
            vec![Vec3::new(1.1, -2.2, 3.3), Vec3::new(0.1, 0.2, 0.3)],
            vec![Some(9), None],
        )
        .unwrap();
        let second = PointCloud::new(vec![Vec3::new(4.0, 5.0, 6.0)]).unwrap();
        let flow = FlowField::new(vec![Vec3::new(0.5, 0.0, -0.25), Vec3::zeros()]).unwrap();
        AnnotatedPair { first, second, flow }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_pair(&pair());
        assert_eq!(&bytes[..4], b"GSF1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(&bytes[6..10], b"PTS1");
        assert_eq!(u64::from_le_bytes(bytes[10..18].try_into().unwrap()), 2);
    }

    #[test]
    fn round_trip_is_bit_exact_in_f32() {
        let bytes = encode_pair(&pair());
        let back = decode_pair(&bytes).unwrap();
        assert_eq!(encode_pair(&back), bytes);
        assert_eq!(back.first.labels().unwrap(), &[Some(9), None]);
        assert!(back.second.labels().is_none());
        assert_eq!(back.first.points()[0].x, 1.1f32 as f64);
    }

    #[test]
    fn rejects_malformed_files() {
        let bytes = encode_pair(&pair());
        assert!(decode_pair(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_pair(&bad).is_err());
        let mut w = Writer::new();
        w.vectors(b"PTS1", &[Vec3::zeros()]);
        w.vectors(b"PTS2", &[Vec3::zeros()]);
        w.vectors(b"FLOW", &[]);
        assert!(matches!(decode_pair(&w.0), Err(Error::Format(_))));
        assert!(decode_checkpoint(&bytes).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut p = EstimatorParams::init(&EstimatorConfig::default());
        p.set_scalar(4, 0.123456789012345);
        p.set_scalar(p.num_scalars() - 1, -1.0 / 3.0);
        let back = decode_checkpoint(&encode_checkpoint(&p)).unwrap();
        assert_eq!(back, p);
        assert!(decode_pair(&encode_checkpoint(&p)).is_err());
    }
}
