use std::path::Path;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"POSEEMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub identity: u32,
    pub yaw: f64,
    pub values: Vec<f64>,
}

/// Magic, u32 count, u32 dim, then per record u32 identity, f64 yaw and
/// `dim` f64 values.
pub fn encode_embeddings(records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    let dim = records.first().map_or(0, |r| r.values.len());
    if let Some(bad) = records.iter().position(|r| r.values.len() != dim) {
        return Err(Error::Shape(format!("record {bad} has dim {}, expected {dim}", records[bad].values.len())));
    }
    let mut w = ByteWriter::new();
    w.bytes(EMBEDDING_MAGIC);
    w.len_u32(records.len())?;
    w.len_u32(dim)?;
    for r in records {
        w.u32(r.identity).f64(r.yaw).f64s(&r.values);
    }
    Ok(w.finish())
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Vec<EmbeddingRecord>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(EMBEDDING_MAGIC)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let need = count.saturating_mul(12 + 8 * dim);
    if r.remaining() < need {
        return Err(Error::format(
            r.offset(),
            format!("{count} records of dim {dim} need {need} bytes, {} left", r.remaining()),
        ));
    }
    let records = (0..count)
        .map(|_| {
            Ok(EmbeddingRecord {
                identity: r.u32()?,
                yaw: r.f64()?,
                values: r.f64s(dim)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(records)
}

pub fn write_embeddings(records: &[EmbeddingRecord], path: &Path) -> Result<()> {
    std::fs::write(path, encode_embeddings(records)?)?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode_embeddings(&std::fs::read(path)?)
}

/// One verification pair; the ids index records of an embedding file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRecord {
    pub a: usize,
    pub b: usize,
    pub genuine: bool,
}

pub fn format_pairs(pairs: &[PairRecord]) -> String {
    pairs
        .iter()
        .map(|p| format!("{},{},{}\n", p.a, p.b, if p.genuine { "genuine" } else { "impostor" }))
        .collect()
}

/// Lines `idA,idB,genuine|impostor`; blank lines are skipped. Errors carry
/// the byte offset of the offending line.
pub fn parse_pairs(text: &str) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len() as u64;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [a, b, kind] = fields[..] else {
            return Err(Error::format(at, format!("expected 3 fields, got {}", fields.len())));
        };
        let id = |s: &str| s.parse::<usize>().map_err(|_| Error::format(at, format!("bad id {s:?}")));
        let genuine = match kind {
            "genuine" => true,
            "impostor" => false,
            other => return Err(Error::format(at, format!("bad pair kind {other:?}"))),
        };
        out.push(PairRecord {
            a: id(a)?,
            b: id(b)?,
            genuine,
        });
    }
    Ok(out)
}
