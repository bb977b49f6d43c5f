//! DEX container parsing: string/type/proto/method tables, class data and
//! decoded instruction streams.

pub mod builder;
mod opcodes;

pub use opcodes::{is_method_invoke, OpcodeInfo, OPCODES};

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DexError {
    #[error("bad magic: expected `dex\\n<ver>\\0`, found {found:02x?}")]
    BadMagic { found: Vec<u8> },
    #[error("truncated file reading {what}: need {need} bytes at offset {offset}, have {have}")]
    TruncatedFile {
        what: &'static str,
        offset: usize,
        need: usize,
        have: usize,
    },
    #[error("{table} index {index} out of range (table has {len} entries)")]
    IndexOutOfRange {
        table: &'static str,
        index: u32,
        len: usize,
    },
    #[error("malformed dex: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone)]
pub struct DexHeader {
    pub magic: [u8; 8],
    pub checksum: u32,
    pub signature: [u8; 20],
    pub file_size: u32,
    pub header_size: u32,
    pub endian_tag: u32,
    pub link_size: u32,
    pub link_off: u32,
    pub map_off: u32,
    pub string_ids_size: u32,
    pub string_ids_off: u32,
    pub type_ids_size: u32,
    pub type_ids_off: u32,
    pub proto_ids_size: u32,
    pub proto_ids_off: u32,
    pub field_ids_size: u32,
    pub field_ids_off: u32,
    pub method_ids_size: u32,
    pub method_ids_off: u32,
    pub class_defs_size: u32,
    pub class_defs_off: u32,
    pub data_size: u32,
    pub data_off: u32,
}

/// A row of the method table, resolved to strings.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MethodRef {
    pub class_descriptor: String,
    pub name: String,
    pub proto: String,
    pub is_local: bool,
}

/// One decoded instruction: the opcode byte plus every remaining byte of the
/// instruction (including the high byte of the first code unit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insn {
    pub opcode: u8,
    pub operands: Vec<u8>,
}

impl Insn {
    pub fn mnemonic(&self) -> &'static str {
        OPCODES[self.opcode as usize].mnemonic
    }

    /// Method-table index targeted by an `invoke-*` instruction.
    pub fn invoke_target(&self) -> Option<u16> {
        if is_method_invoke(self.opcode) && self.operands.len() >= 3 {
            Some(u16::from_le_bytes([self.operands[1], self.operands[2]]))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeItem {
    pub registers: u16,
    pub instructions: Vec<Insn>,
}

/// Raw numeric index tables, kept verbatim for re-serialization.
#[derive(Debug, Clone, Default)]
struct RawTables {
    string_data_offs: Vec<u32>,
    type_desc_idx: Vec<u32>,
    protos: Vec<(u32, u32, u32)>,
    fields: Vec<(u16, u16, u32)>,
    methods: Vec<(u16, u16, u32)>,
    class_defs: Vec<[u32; 8]>,
}

#[derive(Debug, Clone)]
pub struct DexFile {
    pub header: DexHeader,
    pub strings: Vec<String>,
    pub types: Vec<String>,
    pub methods: Vec<MethodRef>,
    pub code_items: BTreeMap<MethodRef, CodeItem>,
    raw: RawTables,
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn need(&self, what: &'static str, offset: usize, need: usize) -> Result<(), DexError> {
        if offset.checked_add(need).is_none_or(|end| end > self.bytes.len()) {
            return Err(DexError::TruncatedFile {
                what,
                offset,
                need,
                have: self.bytes.len().saturating_sub(offset.min(self.bytes.len())),
            });
        }
        Ok(())
    }

    fn u16_at(&self, what: &'static str, offset: usize) -> Result<u16, DexError> {
        self.need(what, offset, 2)?;
        Ok(u16::from_le_bytes([self.bytes[offset], self.bytes[offset + 1]]))
    }

    fn u32_at(&self, what: &'static str, offset: usize) -> Result<u32, DexError> {
        self.need(what, offset, 4)?;
        Ok(u32::from_le_bytes([
            self.bytes[offset],
            self.bytes[offset + 1],
            self.bytes[offset + 2],
            self.bytes[offset + 3],
        ]))
    }

    /// Unsigned LEB128; returns (value, bytes consumed).
    fn uleb_at(&self, what: &'static str, offset: usize) -> Result<(u32, usize), DexError> {
        let mut value: u32 = 0;
        let mut shift = 0;
        for i in 0..5 {
            self.need(what, offset + i, 1)?;
            let b = self.bytes[offset + i];
            value |= ((b & 0x7f) as u32) << shift;
            if b & 0x80 == 0 {
                return Ok((value, i + 1));
            }
            shift += 7;
        }
        Err(DexError::Malformed(format!(
            "uleb128 for {what} at offset {offset} exceeds 5 bytes"
        )))
    }
}

/// Decode modified UTF-8 (the DEX string encoding) up to the NUL terminator.
fn decode_mutf8(bytes: &[u8]) -> Result<(String, usize), DexError> {
    let mut units: Vec<u16> = Vec::new();
    let mut i = 0;
    loop {
        if i >= bytes.len() {
            return Err(DexError::TruncatedFile {
                what: "string data",
                offset: i,
                need: 1,
                have: 0,
            });
        }
        let b = bytes[i];
        if b == 0 {
            return Ok((String::from_utf16_lossy(&units), i + 1));
        }
        if b < 0x80 {
            units.push(b as u16);
            i += 1;
        } else if b & 0xe0 == 0xc0 && i + 1 < bytes.len() {
            units.push((((b & 0x1f) as u16) << 6) | (bytes[i + 1] & 0x3f) as u16);
            i += 2;
        } else if b & 0xf0 == 0xe0 && i + 2 < bytes.len() {
            units.push(
                (((b & 0x0f) as u16) << 12)
                    | (((bytes[i + 1] & 0x3f) as u16) << 6)
                    | (bytes[i + 2] & 0x3f) as u16,
            );
            i += 3;
        } else {
            units.push(0xfffd);
            i += 1;
        }
    }
}

fn check_index(table: &'static str, index: u32, len: usize) -> Result<usize, DexError> {
    if (index as usize) < len {
        Ok(index as usize)
    } else {
        Err(DexError::IndexOutOfRange { table, index, len })
    }
}

pub const NO_INDEX: u32 = 0xffff_ffff;

/// Parse and validate just the 0x70-byte header.
pub fn parse_header(bytes: &[u8]) -> Result<DexHeader, DexError> {
    if bytes.len() < 8
        || &bytes[0..4] != b"dex\n"
        || !bytes[4..7].iter().all(u8::is_ascii_digit)
        || bytes[7] != 0
    {
        return Err(DexError::BadMagic {
            found: bytes[..bytes.len().min(8)].to_vec(),
        });
    }
    let r = Reader { bytes };
    r.need("header", 0, 0x70)?;

    let mut magic = [0u8; 8];
    magic.copy_from_slice(&bytes[0..8]);
    let mut signature = [0u8; 20];
    signature.copy_from_slice(&bytes[0x0c..0x20]);
    let header = DexHeader {
        magic,
        checksum: r.u32_at("header", 0x08)?,
        signature,
        file_size: r.u32_at("header", 0x20)?,
        header_size: r.u32_at("header", 0x24)?,
        endian_tag: r.u32_at("header", 0x28)?,
        link_size: r.u32_at("header", 0x2c)?,
        link_off: r.u32_at("header", 0x30)?,
        map_off: r.u32_at("header", 0x34)?,
        string_ids_size: r.u32_at("header", 0x38)?,
        string_ids_off: r.u32_at("header", 0x3c)?,
        type_ids_size: r.u32_at("header", 0x40)?,
        type_ids_off: r.u32_at("header", 0x44)?,
        proto_ids_size: r.u32_at("header", 0x48)?,
        proto_ids_off: r.u32_at("header", 0x4c)?,
        field_ids_size: r.u32_at("header", 0x50)?,
        field_ids_off: r.u32_at("header", 0x54)?,
        method_ids_size: r.u32_at("header", 0x58)?,
        method_ids_off: r.u32_at("header", 0x5c)?,
        class_defs_size: r.u32_at("header", 0x60)?,
        class_defs_off: r.u32_at("header", 0x64)?,
        data_size: r.u32_at("header", 0x68)?,
        data_off: r.u32_at("header", 0x6c)?,
    };
    if header.endian_tag != 0x1234_5678 {
        return Err(DexError::Malformed(format!(
            "unsupported endian tag {:#010x}",
            header.endian_tag
        )));
    }
    if (header.data_off as u64) + (header.data_size as u64) > bytes.len() as u64 {
        return Err(DexError::TruncatedFile {
            what: "data area",
            offset: header.data_off as usize,
            need: header.data_size as usize,
            have: bytes.len().saturating_sub(header.data_off as usize),
        });
    }
    Ok(header)
}

impl DexFile {
    pub fn parse(bytes: &[u8]) -> Result<DexFile, DexError> {
        let header = parse_header(bytes)?;
        let r = Reader { bytes };
        let mut raw = RawTables::default();

        let mut strings = Vec::with_capacity(header.string_ids_size as usize);
        for i in 0..header.string_ids_size as usize {
            let off = r.u32_at("string_ids", header.string_ids_off as usize + 4 * i)?;
            raw.string_data_offs.push(off);
            let (_, len_len) = r.uleb_at("string utf16 length", off as usize)?;
            let data_start = off as usize + len_len;
            r.need("string data", data_start, 1)?;
            let (s, _) = decode_mutf8(&bytes[data_start..])?;
            strings.push(s);
        }

        let mut types = Vec::with_capacity(header.type_ids_size as usize);
        for i in 0..header.type_ids_size as usize {
            let idx = r.u32_at("type_ids", header.type_ids_off as usize + 4 * i)?;
            raw.type_desc_idx.push(idx);
            types.push(strings[check_index("string_ids", idx, strings.len())?].clone());
        }

        let mut protos: Vec<String> = Vec::with_capacity(header.proto_ids_size as usize);
        for i in 0..header.proto_ids_size as usize {
            let base = header.proto_ids_off as usize + 12 * i;
            let shorty_idx = r.u32_at("proto_ids", base)?;
            let return_idx = r.u32_at("proto_ids", base + 4)?;
            let params_off = r.u32_at("proto_ids", base + 8)?;
            raw.protos.push((shorty_idx, return_idx, params_off));
            check_index("string_ids", shorty_idx, strings.len())?;
            let ret = &types[check_index("type_ids", return_idx, types.len())?];
            let mut sig = String::from("(");
            if params_off != 0 {
                let count = r.u32_at("type_list", params_off as usize)?;
                for p in 0..count as usize {
                    let t_idx = r.u16_at("type_list", params_off as usize + 4 + 2 * p)?;
                    sig.push_str(&types[check_index("type_ids", t_idx as u32, types.len())?]);
                }
            }
            sig.push(')');
            sig.push_str(ret);
            protos.push(sig);
        }

        for i in 0..header.field_ids_size as usize {
            let base = header.field_ids_off as usize + 8 * i;
            let class_idx = r.u16_at("field_ids", base)?;
            let type_idx = r.u16_at("field_ids", base + 2)?;
            let name_idx = r.u32_at("field_ids", base + 4)?;
            check_index("type_ids", class_idx as u32, types.len())?;
            check_index("type_ids", type_idx as u32, types.len())?;
            check_index("string_ids", name_idx, strings.len())?;
            raw.fields.push((class_idx, type_idx, name_idx));
        }

        let mut methods = Vec::with_capacity(header.method_ids_size as usize);
        for i in 0..header.method_ids_size as usize {
            let base = header.method_ids_off as usize + 8 * i;
            let class_idx = r.u16_at("method_ids", base)?;
            let proto_idx = r.u16_at("method_ids", base + 2)?;
            let name_idx = r.u32_at("method_ids", base + 4)?;
            raw.methods.push((class_idx, proto_idx, name_idx));
            methods.push(MethodRef {
                class_descriptor: types
                    [check_index("type_ids", class_idx as u32, types.len())?]
                .clone(),
                name: strings[check_index("string_ids", name_idx, strings.len())?].clone(),
                proto: protos[check_index("proto_ids", proto_idx as u32, protos.len())?].clone(),
                is_local: false,
            });
        }

        let mut code_by_method: BTreeMap<usize, CodeItem> = BTreeMap::new();
        for i in 0..header.class_defs_size as usize {
            let base = header.class_defs_off as usize + 32 * i;
            let mut def = [0u32; 8];
            for (j, slot) in def.iter_mut().enumerate() {
                *slot = r.u32_at("class_defs", base + 4 * j)?;
            }
            raw.class_defs.push(def);
            check_index("type_ids", def[0], types.len())?;
            let class_data_off = def[6];
            if class_data_off == 0 {
                continue;
            }
            parse_class_data(&r, class_data_off as usize, methods.len(), &mut code_by_method)?;
        }

        for &idx in code_by_method.keys() {
            methods[idx].is_local = true;
        }
        // Invoke targets must resolve against the method table.
        for code in code_by_method.values() {
            for insn in &code.instructions {
                if let Some(t) = insn.invoke_target() {
                    check_index("method_ids", t as u32, methods.len())?;
                }
            }
        }
        let code_items = code_by_method
            .into_iter()
            .map(|(idx, code)| (methods[idx].clone(), code))
            .collect();

        Ok(DexFile {
            header,
            strings,
            types,
            methods,
            code_items,
            raw,
        })
    }

    /// Re-serialize the six index sections exactly as stored, as
    /// `(section name, file offset, bytes)` triples.
    pub fn index_sections(&self) -> Vec<(&'static str, usize, Vec<u8>)> {
        let mut out = Vec::new();
        let mut string_ids = Vec::new();
        for &off in &self.raw.string_data_offs {
            string_ids.extend_from_slice(&off.to_le_bytes());
        }
        out.push(("string_ids", self.header.string_ids_off as usize, string_ids));

        let mut type_ids = Vec::new();
        for &idx in &self.raw.type_desc_idx {
            type_ids.extend_from_slice(&idx.to_le_bytes());
        }
        out.push(("type_ids", self.header.type_ids_off as usize, type_ids));

        let mut proto_ids = Vec::new();
        for &(shorty, ret, params) in &self.raw.protos {
            proto_ids.extend_from_slice(&shorty.to_le_bytes());
            proto_ids.extend_from_slice(&ret.to_le_bytes());
            proto_ids.extend_from_slice(&params.to_le_bytes());
        }
        out.push(("proto_ids", self.header.proto_ids_off as usize, proto_ids));

        let mut field_ids = Vec::new();
        for &(class, ty, name) in &self.raw.fields {
            field_ids.extend_from_slice(&class.to_le_bytes());
            field_ids.extend_from_slice(&ty.to_le_bytes());
            field_ids.extend_from_slice(&name.to_le_bytes());
        }
        out.push(("field_ids", self.header.field_ids_off as usize, field_ids));

        let mut method_ids = Vec::new();
        for &(class, proto, name) in &self.raw.methods {
            method_ids.extend_from_slice(&class.to_le_bytes());
            method_ids.extend_from_slice(&proto.to_le_bytes());
            method_ids.extend_from_slice(&name.to_le_bytes());
        }
        out.push(("method_ids", self.header.method_ids_off as usize, method_ids));

        let mut class_defs = Vec::new();
        for def in &self.raw.class_defs {
            for word in def {
                class_defs.extend_from_slice(&word.to_le_bytes());
            }
        }
        out.push(("class_defs", self.header.class_defs_off as usize, class_defs));
        out
    }
}

fn parse_class_data(
    r: &Reader<'_>,
    off: usize,
    method_count: usize,
    code_by_method: &mut BTreeMap<usize, CodeItem>,
) -> Result<(), DexError> {
    let mut pos = off;
    let mut read = |what| -> Result<u32, DexError> {
        let (v, n) = r.uleb_at(what, pos)?;
        pos += n;
        Ok(v)
    };
    let static_fields = read("class_data sizes")?;
    let instance_fields = read("class_data sizes")?;
    let direct_methods = read("class_data sizes")?;
    let virtual_methods = read("class_data sizes")?;
    for _ in 0..(static_fields + instance_fields) {
        read("encoded_field")?;
        read("encoded_field")?;
    }
    for group in [direct_methods, virtual_methods] {
        let mut method_idx = 0u32;
        for _ in 0..group {
            let diff = read("encoded_method")?;
            read("encoded_method access_flags")?;
            let code_off = read("encoded_method code_off")?;
            method_idx = method_idx.wrapping_add(diff);
            let idx = check_index("method_ids", method_idx, method_count)?;
            if code_off != 0 {
                let code = parse_code_item(r, code_off as usize)?;
                code_by_method.insert(idx, code);
            }
        }
    }
    Ok(())
}

fn parse_code_item(r: &Reader<'_>, off: usize) -> Result<CodeItem, DexError> {
    let registers = r.u16_at("code_item", off)?;
    let insns_size = r.u32_at("code_item", off + 12)? as usize;
    let insns_off = off + 16;
    r.need("insns", insns_off, insns_size * 2)?;

    let mut instructions = Vec::new();
    let mut pos = 0usize;
    while pos < insns_size {
        let unit0 = r.u16_at("insn", insns_off + 2 * pos)?;
        let opcode = (unit0 & 0xff) as u8;
        let ident = unit0 >> 8;
        let width = if opcode == 0x00 && (1..=3).contains(&ident) {
            match ident {
                1 => {
                    let size = r.u16_at("packed-switch payload", insns_off + 2 * (pos + 1))?;
                    size as usize * 2 + 4
                }
                2 => {
                    let size = r.u16_at("sparse-switch payload", insns_off + 2 * (pos + 1))?;
                    size as usize * 4 + 2
                }
                _ => {
                    let elem_width =
                        r.u16_at("fill-array payload", insns_off + 2 * (pos + 1))? as usize;
                    let size = r.u32_at("fill-array payload", insns_off + 2 * (pos + 2))? as usize;
                    (size * elem_width + 1) / 2 + 4
                }
            }
        } else {
            OPCODES[opcode as usize].units as usize
        };
        if pos + width > insns_size {
            return Err(DexError::TruncatedFile {
                what: "instruction crosses insns end",
                offset: insns_off + 2 * pos,
                need: width * 2,
                have: (insns_size - pos) * 2,
            });
        }
        let start = insns_off + 2 * pos;
        let operands = r.bytes[start + 1..start + 2 * width].to_vec();
        instructions.push(Insn { opcode, operands });
        pos += width;
    }
    Ok(CodeItem {
        registers,
        instructions,
    })
}

/// Parse each span of a concatenated dex stream into its own [`DexFile`].
pub fn parse_dex(stream: &[u8], spans: &[(usize, usize)]) -> Result<Vec<DexFile>, DexError> {
    spans
        .iter()
        .map(|&(off, len)| {
            if off + len > stream.len() {
                return Err(DexError::TruncatedFile {
                    what: "dex span",
                    offset: off,
                    need: len,
                    have: stream.len().saturating_sub(off),
                });
            }
            DexFile::parse(&stream[off..off + len])
        })
        .collect()
}

/// All syntactic call edges of one DEX: one per distinct (caller, callee)
/// pair over the decoded `invoke-*` instructions, in sorted order.
pub fn invoke_edges(dex: &DexFile) -> Vec<(MethodRef, MethodRef)> {
    let mut edges = std::collections::BTreeSet::new();
    for (caller, code) in &dex.code_items {
        for insn in &code.instructions {
            if let Some(t) = insn.invoke_target() {
                edges.insert((caller.clone(), dex.methods[t as usize].clone()));
            }
        }
    }
    edges.into_iter().collect()
}
