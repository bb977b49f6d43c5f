//! Android binary XML (AXML) chunk walking.
//!
//! A binary XML file is a tree of chunks, each fronted by an 8-byte header:
//! `type: u16, header_size: u16, chunk_size: u32`. The document chunk
//! (0x0003) nests the rest. Only chunk framing is interpreted here; payload
//! semantics stay opaque.

use thiserror::Error;

pub const CHUNK_STRING_POOL: u16 = 0x0001;
pub const CHUNK_XML_DOCUMENT: u16 = 0x0003;
pub const CHUNK_START_ELEMENT: u16 = 0x0102;
pub const CHUNK_END_ELEMENT: u16 = 0x0103;

#[derive(Debug, Error)]
pub enum AxmlError {
    #[error("chunk at offset {0} runs past the buffer")]
    ChunkOverrun(usize),
    #[error("chunk at offset {offset} has header_size {header_size} > chunk_size {chunk_size}")]
    BadChunkHeader {
        offset: usize,
        header_size: u16,
        chunk_size: u32,
    },
}

/// Walk all chunks (descending into document chunks) and return the payload
/// byte range of every string-pool, start-element and end-element chunk, in
/// file order. The payload is everything after the declared header.
pub fn collect_payload_ranges(bytes: &[u8]) -> Result<Vec<(u16, std::ops::Range<usize>)>, AxmlError> {
    let mut out = Vec::new();
    walk(bytes, 0, bytes.len(), &mut out)?;
    Ok(out)
}

fn walk(
    bytes: &[u8],
    mut pos: usize,
    end: usize,
    out: &mut Vec<(u16, std::ops::Range<usize>)>,
) -> Result<(), AxmlError> {
    while pos < end {
        if pos + 8 > end {
            return Err(AxmlError::ChunkOverrun(pos));
        }
        let kind = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]);
        let header_size = u16::from_le_bytes([bytes[pos + 2], bytes[pos + 3]]);
        let chunk_size = u32::from_le_bytes([
            bytes[pos + 4],
            bytes[pos + 5],
            bytes[pos + 6],
            bytes[pos + 7],
        ]);
        if (header_size as u32) > chunk_size || header_size < 8 {
            return Err(AxmlError::BadChunkHeader {
                offset: pos,
                header_size,
                chunk_size,
            });
        }
        let chunk_end = pos + chunk_size as usize;
        if chunk_size < 8 || chunk_end > end {
            return Err(AxmlError::ChunkOverrun(pos));
        }
        let payload = pos + header_size as usize..chunk_end;
        match kind {
            CHUNK_XML_DOCUMENT => walk(bytes, payload.start, payload.end, out)?,
            CHUNK_STRING_POOL | CHUNK_START_ELEMENT | CHUNK_END_ELEMENT => {
                out.push((kind, payload))
            }
            _ => {}
        }
        pos = chunk_end;
    }
    Ok(())
}

/// Build one chunk with the given declared header size; header bytes past
/// the first 8 are zero filler.
pub fn chunk(kind: u16, header_size: u16, payload: &[u8]) -> Vec<u8> {
    assert!(header_size >= 8);
    let chunk_size = header_size as u32 + payload.len() as u32;
    let mut out = Vec::with_capacity(chunk_size as usize);
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&header_size.to_le_bytes());
    out.extend_from_slice(&chunk_size.to_le_bytes());
    out.resize(header_size as usize, 0);
    out.extend_from_slice(payload);
    out
}

/// A document chunk wrapping the given children.
pub fn document(children: &[Vec<u8>]) -> Vec<u8> {
    let body: Vec<u8> = children.iter().flatten().copied().collect();
    chunk(CHUNK_XML_DOCUMENT, 8, &body)
}
