//! Labeled sample manifest: `sample_id,apk_path,label,year` CSV.

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Malicious,
    Benign,
}

impl Label {
    /// Class index used by the classifier head: malicious 0, benign 1.
    pub fn class_index(self) -> usize {
        match self {
            Label::Malicious => 0,
            Label::Benign => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Malicious => "malicious",
            Label::Benign => "benign",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleManifestEntry {
    pub sample_id: String,
    pub apk_path: PathBuf,
    pub label: Label,
    pub year: u16,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: label `{value}` is neither `malicious` nor `benign`")]
    BadLabel { row: usize, value: String },
    #[error("row {row}: year `{value}` is not a year >= 2008")]
    BadYear { row: usize, value: String },
    #[error("cannot read manifest: {0}")]
    UnreadableFile(#[from] csv::Error),
}

pub fn load_manifest(path: &Path) -> Result<Vec<SampleManifestEntry>, ManifestError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &'static str| -> Result<usize, ManifestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(ManifestError::MissingColumn(name))
    };
    let id_col = col("sample_id")?;
    let path_col = col("apk_path")?;
    let label_col = col("label")?;
    let year_col = col("year")?;

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2; // 1-based, after the header line
        let field = |idx: usize| record.get(idx).unwrap_or("").to_string();
        let label_raw = field(label_col);
        let label = match label_raw.to_ascii_lowercase().as_str() {
            "malicious" => Label::Malicious,
            "benign" => Label::Benign,
            _ => {
                return Err(ManifestError::BadLabel {
                    row,
                    value: label_raw,
                })
            }
        };
        let year_raw = field(year_col);
        let year: u16 = year_raw
            .trim()
            .parse()
            .ok()
            .filter(|&y| y >= 2008)
            .ok_or(ManifestError::BadYear {
                row,
                value: year_raw,
            })?;
        out.push(SampleManifestEntry {
            sample_id: field(id_col),
            apk_path: PathBuf::from(field(path_col)),
            label,
            year,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_manifest(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_rows_in_order() {
        let f = write_manifest(
            "sample_id,apk_path,label,year\ns1,/a.apk,malicious,2019\ns2,/b.apk,Benign,2020\n",
        );
        let entries = load_manifest(f.path()).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].sample_id, "s1");
        assert_eq!(entries[0].label, Label::Malicious);
        assert_eq!(entries[0].year, 2019);
        assert_eq!(entries[1].label, Label::Benign);
    }

    #[test]
    fn header_only_gives_empty_list() {
        let f = write_manifest("sample_id,apk_path,label,year\n");
        assert!(load_manifest(f.path()).unwrap().is_empty());
    }

    #[test]
    fn unknown_label_is_rejected() {
        let f = write_manifest("sample_id,apk_path,label,year\ns1,/a.apk,unknown,2019\n");
        let err = load_manifest(f.path()).unwrap_err();
        assert!(matches!(err, ManifestError::BadLabel { .. }), "{err}");
    }

    #[test]
    fn missing_column_is_rejected() {
        let f = write_manifest("sample_id,apk_path,label\ns1,/a.apk,malicious\n");
        let err = load_manifest(f.path()).unwrap_err();
        assert!(matches!(err, ManifestError::MissingColumn("year")), "{err}");
    }

    #[test]
    fn pre_android_year_is_rejected() {
        let f = write_manifest("sample_id,apk_path,label,year\ns1,/a.apk,benign,2007\n");
        let err = load_manifest(f.path()).unwrap_err();
        assert!(matches!(err, ManifestError::BadYear { .. }), "{err}");
    }

    #[test]
    fn missing_file_is_unreadable() {
        let err = load_manifest(Path::new("/nonexistent/manifest.csv")).unwrap_err();
        assert!(matches!(err, ManifestError::UnreadableFile(_)), "{err}");
    }
}
