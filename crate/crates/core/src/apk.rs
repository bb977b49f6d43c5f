//! APK container handling: opens the ZIP, pulls out `.dex`/`.xml`/`.so`
//! entries, and concatenates each type into one stream with a per-file index.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use thiserror::Error;
use zip::ZipArchive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArtifactKind {
    Dex,
    Xml,
    So,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 3] = [ArtifactKind::Dex, ArtifactKind::Xml, ArtifactKind::So];

    pub fn tag(self) -> &'static str {
        match self {
            ArtifactKind::Dex => "dex",
            ArtifactKind::Xml => "xml",
            ArtifactKind::So => "so",
        }
    }

    fn matches(self, entry_name: &str) -> bool {
        let suffix = match self {
            ArtifactKind::Dex => ".dex",
            ArtifactKind::Xml => ".xml",
            ArtifactKind::So => ".so",
        };
        entry_name.ends_with(suffix)
    }
}

/// Placement of one archive entry inside a concatenated stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileSpan {
    pub path: String,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Stream {
    pub bytes: Vec<u8>,
    pub index: Vec<FileSpan>,
}

impl Stream {
    /// (offset, length) pairs, the shape the DEX multi-file parser takes.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        self.index.iter().map(|s| (s.offset, s.length)).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ApkArtifacts {
    pub dex: Stream,
    pub xml: Stream,
    pub so: Stream,
}

impl ApkArtifacts {
    pub fn stream(&self, kind: ArtifactKind) -> &Stream {
        match kind {
            ArtifactKind::Dex => &self.dex,
            ArtifactKind::Xml => &self.xml,
            ArtifactKind::So => &self.so,
        }
    }

    fn stream_mut(&mut self, kind: ArtifactKind) -> &mut Stream {
        match kind {
            ArtifactKind::Dex => &mut self.dex,
            ArtifactKind::Xml => &mut self.xml,
            ArtifactKind::So => &mut self.so,
        }
    }
}

#[derive(Debug, Error)]
pub enum ApkError {
    #[error("not a zip container: {0}")]
    NotAZip(String),
    #[error("corrupt archive entry `{name}`: {reason}")]
    CorruptEntry { name: String, reason: String },
    #[error("no .dex entry in archive")]
    NoDexFound,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Extract and concatenate the three artifact streams from an APK on disk.
/// Entries of each type are concatenated in lexicographic path order; all
/// other entries are ignored.
pub fn extract_artifacts(path: &Path) -> Result<ApkArtifacts, ApkError> {
    let bytes = std::fs::read(path)?;
    extract_artifacts_from_bytes(&bytes)
}

pub fn extract_artifacts_from_bytes(bytes: &[u8]) -> Result<ApkArtifacts, ApkError> {
    let mut archive =
        ZipArchive::new(Cursor::new(bytes)).map_err(|e| ApkError::NotAZip(e.to_string()))?;
    let mut names: Vec<String> = archive.file_names().map(str::to_owned).collect();
    names.sort();

    let mut artifacts = ApkArtifacts::default();
    for name in &names {
        let Some(kind) = ArtifactKind::ALL.iter().copied().find(|k| k.matches(name)) else {
            continue;
        };
        let mut entry = archive
            .by_name(name)
            .map_err(|e| ApkError::CorruptEntry {
                name: name.clone(),
                reason: e.to_string(),
            })?;
        let mut contents = Vec::with_capacity(entry.size() as usize);
        entry
            .read_to_end(&mut contents)
            .map_err(|e| ApkError::CorruptEntry {
                name: name.clone(),
                reason: e.to_string(),
            })?;
        let stream = artifacts.stream_mut(kind);
        stream.index.push(FileSpan {
            path: name.clone(),
            offset: stream.bytes.len(),
            length: contents.len(),
        });
        stream.bytes.extend_from_slice(&contents);
    }
    if artifacts.dex.bytes.is_empty() {
        return Err(ApkError::NoDexFound);
    }
    Ok(artifacts)
}

/// Write the three streams to `<dir>/<sample_id>.<type>.bin` plus a
/// `path<TAB>offset<TAB>length` sidecar per type.
pub fn write_cache(dir: &Path, sample_id: &str, artifacts: &ApkArtifacts) -> std::io::Result<()> {
    for kind in ArtifactKind::ALL {
        let stream = artifacts.stream(kind);
        std::fs::write(
            dir.join(format!("{sample_id}.{}.bin", kind.tag())),
            &stream.bytes,
        )?;
        let mut sidecar = std::fs::File::create(dir.join(format!("{sample_id}.{}.idx", kind.tag())))?;
        for span in &stream.index {
            writeln!(sidecar, "{}\t{}\t{}", span.path, span.offset, span.length)?;
        }
    }
    Ok(())
}

/// Load a previously cached extraction; `None` when any piece is missing or
/// the sidecar does not match the stream.
pub fn read_cache(dir: &Path, sample_id: &str) -> Option<ApkArtifacts> {
    let mut artifacts = ApkArtifacts::default();
    for kind in ArtifactKind::ALL {
        let bytes = std::fs::read(dir.join(format!("{sample_id}.{}.bin", kind.tag()))).ok()?;
        let sidecar =
            std::fs::read_to_string(dir.join(format!("{sample_id}.{}.idx", kind.tag()))).ok()?;
        let mut index = Vec::new();
        let mut covered = 0usize;
        for line in sidecar.lines() {
            let mut parts = line.split('\t');
            let path = parts.next()?.to_string();
            let offset: usize = parts.next()?.parse().ok()?;
            let length: usize = parts.next()?.parse().ok()?;
            if offset != covered {
                return None;
            }
            covered += length;
            index.push(FileSpan {
                path,
                offset,
                length,
            });
        }
        if covered != bytes.len() {
            return None;
        }
        *artifacts.stream_mut(kind) = Stream { bytes, index };
    }
    Some(artifacts)
}

/// Build an in-memory ZIP (stored, no compression) from named entries.
pub fn build_zip(entries: &[(&str, &[u8])]) -> Vec<u8> {
    use zip::write::SimpleFileOptions;
    let mut writer = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let options =
        SimpleFileOptions::default().compression_method(zip::CompressionMethod::Stored);
    for (name, contents) in entries {
        writer.start_file(*name, options).unwrap();
        writer.write_all(contents).unwrap();
    }
    writer.finish().unwrap().into_inner()
}
