//! Little-endian ELF section table parsing, 32- and 64-bit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ElfError {
    #[error("not an ELF file")]
    BadMagic,
    #[error("unsupported ELF class {0}")]
    UnsupportedClass(u8),
    #[error("big-endian ELF is not supported")]
    BigEndian,
    #[error("{what} at offset {offset} runs past the buffer")]
    Overrun { what: &'static str, offset: usize },
}

/// One section: its name and the file range of its contents. `SHT_NOBITS`
/// sections (e.g. `.bss`) occupy no file bytes and have an empty range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub range: std::ops::Range<usize>,
}

const SHT_NOBITS: u32 = 8;

fn u16_at(bytes: &[u8], off: usize, what: &'static str) -> Result<u16, ElfError> {
    bytes
        .get(off..off + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or(ElfError::Overrun { what, offset: off })
}

fn u32_at(bytes: &[u8], off: usize, what: &'static str) -> Result<u32, ElfError> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(ElfError::Overrun { what, offset: off })
}

fn u64_at(bytes: &[u8], off: usize, what: &'static str) -> Result<u64, ElfError> {
    bytes
        .get(off..off + 8)
        .map(|b| u64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
        .ok_or(ElfError::Overrun { what, offset: off })
}

/// Parse the section table, resolving names through the section-name string
/// table. Returns sections in header-table order, excluding index 0.
pub fn sections(bytes: &[u8]) -> Result<Vec<Section>, ElfError> {
    if bytes.len() < 0x40 || &bytes[0..4] != b"\x7fELF" {
        return Err(ElfError::BadMagic);
    }
    let class = bytes[4];
    if bytes[5] == 2 {
        return Err(ElfError::BigEndian);
    }
    let (shoff, shentsize, shnum, shstrndx) = match class {
        1 => (
            u32_at(bytes, 0x20, "e_shoff")? as u64,
            u16_at(bytes, 0x2e, "e_shentsize")?,
            u16_at(bytes, 0x30, "e_shnum")?,
            u16_at(bytes, 0x32, "e_shstrndx")?,
        ),
        2 => (
            u64_at(bytes, 0x28, "e_shoff")?,
            u16_at(bytes, 0x3a, "e_shentsize")?,
            u16_at(bytes, 0x3c, "e_shnum")?,
            u16_at(bytes, 0x3e, "e_shstrndx")?,
        ),
        other => return Err(ElfError::UnsupportedClass(other)),
    };
    let min_entsize = if class == 1 { 40 } else { 64 };
    if shentsize < min_entsize || shnum == 0 || shstrndx >= shnum {
        return Err(ElfError::Overrun {
            what: "section header table",
            offset: shoff as usize,
        });
    }

    let header = |idx: u16| -> Result<(u32, u32, usize, usize), ElfError> {
        let base = shoff as usize + idx as usize * shentsize as usize;
        let name_off = u32_at(bytes, base, "sh_name")?;
        let sh_type = u32_at(bytes, base + 4, "sh_type")?;
        let (offset, size) = if class == 1 {
            (
                u32_at(bytes, base + 16, "sh_offset")? as usize,
                u32_at(bytes, base + 20, "sh_size")? as usize,
            )
        } else {
            (
                u64_at(bytes, base + 24, "sh_offset")? as usize,
                u64_at(bytes, base + 32, "sh_size")? as usize,
            )
        };
        Ok((name_off, sh_type, offset, size))
    };

    let (_, _, str_off, str_size) = header(shstrndx)?;
    let strtab = bytes
        .get(str_off..str_off + str_size)
        .ok_or(ElfError::Overrun {
            what: "section name table",
            offset: str_off,
        })?;
    let name_at = |off: u32| -> Result<String, ElfError> {
        let start = off as usize;
        let rest = strtab.get(start..).ok_or(ElfError::Overrun {
            what: "section name",
            offset: str_off + start,
        })?;
        let end = rest.iter().position(|&b| b == 0).ok_or(ElfError::Overrun {
            what: "section name terminator",
            offset: str_off + start,
        })?;
        Ok(String::from_utf8_lossy(&rest[..end]).into_owned())
    };

    let mut out = Vec::new();
    for idx in 1..shnum {
        let (name_off, sh_type, offset, size) = header(idx)?;
        let range = if sh_type == SHT_NOBITS {
            0..0
        } else {
            if offset + size > bytes.len() {
                return Err(ElfError::Overrun {
                    what: "section contents",
                    offset,
                });
            }
            offset..offset + size
        };
        out.push(Section {
            name: name_at(name_off)?,
            range,
        });
    }
    Ok(out)
}

/// Build a minimal 64-bit little-endian shared object holding the given
/// named sections with the given contents.
pub fn build_elf(section_contents: &[(&str, &[u8])]) -> Vec<u8> {
    let mut strtab: Vec<u8> = vec![0];
    let mut name_offs = Vec::new();
    for (name, _) in section_contents {
        name_offs.push(strtab.len() as u32);
        strtab.extend_from_slice(name.as_bytes());
        strtab.push(0);
    }
    let shstrtab_name_off = strtab.len() as u32;
    strtab.extend_from_slice(b".shstrtab");
    strtab.push(0);

    let ehsize = 0x40usize;
    let mut body: Vec<u8> = Vec::new();
    let mut ranges = Vec::new();
    for (_, contents) in section_contents {
        let start = ehsize + body.len();
        body.extend_from_slice(contents);
        ranges.push((start, contents.len()));
    }
    let strtab_off = ehsize + body.len();
    body.extend_from_slice(&strtab);
    while (ehsize + body.len()) % 8 != 0 {
        body.push(0);
    }
    let shoff = ehsize + body.len();
    let shnum = section_contents.len() + 2; // null + sections + shstrtab

    let mut out = Vec::new();
    out.extend_from_slice(b"\x7fELF");
    out.push(2); // 64-bit
    out.push(1); // little-endian
    out.push(1); // version
    out.resize(16, 0);
    out.extend_from_slice(&3u16.to_le_bytes()); // ET_DYN
    out.extend_from_slice(&0xb7u16.to_le_bytes()); // EM_AARCH64
    out.extend_from_slice(&1u32.to_le_bytes()); // e_version
    out.extend_from_slice(&0u64.to_le_bytes()); // e_entry
    out.extend_from_slice(&0u64.to_le_bytes()); // e_phoff
    out.extend_from_slice(&(shoff as u64).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes()); // e_flags
    out.extend_from_slice(&(ehsize as u16).to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes()); // e_phentsize
    out.extend_from_slice(&0u16.to_le_bytes()); // e_phnum
    out.extend_from_slice(&64u16.to_le_bytes()); // e_shentsize
    out.extend_from_slice(&(shnum as u16).to_le_bytes());
    out.extend_from_slice(&((shnum - 1) as u16).to_le_bytes()); // e_shstrndx
    debug_assert_eq!(out.len(), ehsize);
    out.extend_from_slice(&body);
    debug_assert_eq!(out.len(), shoff);

    let mut push_sh = |name_off: u32, sh_type: u32, offset: usize, size: usize| {
        out.extend_from_slice(&name_off.to_le_bytes());
        out.extend_from_slice(&sh_type.to_le_bytes());
        out.extend_from_slice(&0u64.to_le_bytes()); // sh_flags
        out.extend_from_slice(&0u64.to_le_bytes()); // sh_addr
        out.extend_from_slice(&(offset as u64).to_le_bytes());
        out.extend_from_slice(&(size as u64).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes()); // sh_link
        out.extend_from_slice(&0u32.to_le_bytes()); // sh_info
        out.extend_from_slice(&0u64.to_le_bytes()); // sh_addralign
        out.extend_from_slice(&0u64.to_le_bytes()); // sh_entsize
    };
    push_sh(0, 0, 0, 0); // SHT_NULL
    for (i, (start, len)) in ranges.iter().enumerate() {
        push_sh(name_offs[i], 1, *start, *len); // SHT_PROGBITS
    }
    push_sh(shstrtab_name_off, 3, strtab_off, strtab.len()); // SHT_STRTAB
    out
}
