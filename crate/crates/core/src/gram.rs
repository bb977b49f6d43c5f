//! Opcode-gram view: instruction streams reduced to an 8-symbol alphabet,
//! then slid over with a length-`w` window into a one-hot matrix of shape
//! `[len - w + 1, 8 * w]`.

use thiserror::Error;

use crate::dex::{CodeItem, DexFile, MethodRef};
use crate::scalar::Scalar;

pub const CATEGORY_COUNT: usize = 8;
pub const DEFAULT_WINDOW_LENGTH: usize = 4;
pub const DEFAULT_ROW_CAP: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpcodeCategory {
    Move,
    Get,
    Put,
    If,
    Goto,
    Invoke,
    Return,
    /// Inserted between consecutive non-empty method bodies.
    Separator,
}

impl OpcodeCategory {
    pub fn one_hot_index(self) -> usize {
        match self {
            OpcodeCategory::Move => 0,
            OpcodeCategory::Get => 1,
            OpcodeCategory::Put => 2,
            OpcodeCategory::If => 3,
            OpcodeCategory::Goto => 4,
            OpcodeCategory::Invoke => 5,
            OpcodeCategory::Return => 6,
            OpcodeCategory::Separator => 7,
        }
    }
}

/// Family match on the mnemonic; anything outside the seven families is
/// dropped from the stream.
pub fn categorize_mnemonic(mnemonic: &str) -> Option<OpcodeCategory> {
    if mnemonic.starts_with("move") {
        Some(OpcodeCategory::Move)
    } else if mnemonic.starts_with("if") {
        Some(OpcodeCategory::If)
    } else if mnemonic.starts_with("goto") {
        Some(OpcodeCategory::Goto)
    } else if mnemonic.starts_with("invoke") {
        Some(OpcodeCategory::Invoke)
    } else if mnemonic.starts_with("return") {
        Some(OpcodeCategory::Return)
    } else if mnemonic.contains("get") {
        Some(OpcodeCategory::Get)
    } else if mnemonic.contains("put") {
        Some(OpcodeCategory::Put)
    } else {
        None
    }
}

/// Concatenate per-method category streams over all files, methods sorted by
/// (class descriptor, name, proto), a single separator between consecutive
/// non-empty bodies. Bodies with no categorizable instruction contribute
/// nothing, separators included.
pub fn categorize_stream(dexes: &[DexFile]) -> Vec<OpcodeCategory> {
    let mut methods: Vec<(&MethodRef, &CodeItem)> = dexes
        .iter()
        .flat_map(|d| d.code_items.iter())
        .collect();
    methods.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = Vec::new();
    for (_, code) in methods {
        let body: Vec<OpcodeCategory> = code
            .instructions
            .iter()
            .filter_map(|i| categorize_mnemonic(i.mnemonic()))
            .collect();
        if body.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(OpcodeCategory::Separator);
        }
        out.extend(body);
    }
    out
}

/// One-hot sliding-window matrix. `data` holds `rows * 8 * window_length`
/// 0/1 entries, row-major; each row is `window_length` consecutive one-hot
/// blocks of width 8.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpcodeGramMatrix {
    pub rows: usize,
    pub window_length: usize,
    pub data: Vec<u8>,
    pub truncated: bool,
}

impl OpcodeGramMatrix {
    pub fn cols(&self) -> usize {
        CATEGORY_COUNT * self.window_length
    }

    /// True when the input sequence was shorter than the window.
    pub fn is_degenerate(&self) -> bool {
        self.rows == 0
    }

    pub fn dense<T: Scalar>(&self) -> Vec<T> {
        self.data.iter().map(|&b| T::from_usize(b as usize)).collect()
    }
}

/// Slide a window of `window_length` with unit step over the sequence.
/// Sequences shorter than the window give a zero-row matrix; rows beyond
/// `row_cap` are dropped from the end and the truncation recorded.
pub fn build_gram_matrix(
    seq: &[OpcodeCategory],
    window_length: usize,
    step: usize,
    row_cap: usize,
) -> OpcodeGramMatrix {
    assert!(window_length >= 1, "window_length must be at least 1");
    assert_eq!(step, 1, "only unit step is supported");
    let full_rows = seq.len().saturating_sub(window_length - 1);
    let rows = full_rows.min(row_cap);
    let cols = CATEGORY_COUNT * window_length;
    let mut data = vec![0u8; rows * cols];
    for r in 0..rows {
        for (slot, cat) in seq[r..r + window_length].iter().enumerate() {
            data[r * cols + slot * CATEGORY_COUNT + cat.one_hot_index()] = 1;
        }
    }
    OpcodeGramMatrix {
        rows,
        window_length,
        data,
        truncated: full_rows > row_cap,
    }
}

const CACHE_MAGIC: &[u8; 4] = b"OGM1";

#[derive(Debug, Error)]
pub enum GramCacheError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated cache: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
}

impl OpcodeGramMatrix {
    /// Bit-packed cache form: magic, u32 rows, u16 window, u8 truncated
    /// flag, u8 pad, then rows of `window_length` bytes (8 bits per
    /// category slot, MSB first).
    pub fn to_cache_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.rows * self.window_length);
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.window_length as u16).to_le_bytes());
        out.push(self.truncated as u8);
        out.push(0);
        let cols = self.cols();
        for r in 0..self.rows {
            for byte in 0..self.window_length {
                let mut packed = 0u8;
                for bit in 0..8 {
                    let v = self.data[r * cols + byte * 8 + bit];
                    packed |= v << (7 - bit);
                }
                out.push(packed);
            }
        }
        out
    }

    pub fn from_cache_bytes(bytes: &[u8]) -> Result<OpcodeGramMatrix, GramCacheError> {
        if bytes.len() < 12 || &bytes[..4] != CACHE_MAGIC {
            return Err(GramCacheError::BadMagic);
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let window_length = u16::from_le_bytes(bytes[8..10].try_into().unwrap()) as usize;
        let truncated = bytes[10] != 0;
        let expected = 12 + rows * window_length;
        if bytes.len() != expected {
            return Err(GramCacheError::Truncated {
                expected,
                got: bytes.len(),
            });
        }
        let cols = CATEGORY_COUNT * window_length;
        let mut data = vec![0u8; rows * cols];
        for r in 0..rows {
            for byte in 0..window_length {
                let packed = bytes[12 + r * window_length + byte];
                for bit in 0..8 {
                    data[r * cols + byte * 8 + bit] = (packed >> (7 - bit)) & 1;
                }
            }
        }
        Ok(OpcodeGramMatrix {
            rows,
            window_length,
            data,
            truncated,
        })
    }
}
