//! Byte-image view: format-aware denoising of the three artifact streams,
//! byte-to-pixel planes, 3-channel assembly, and bilinear resizing.

use std::path::Path;

use thiserror::Error;

use crate::apk::{ArtifactKind, Stream};
use crate::{axml, dex, elf};

pub const PLANE_WIDTH: usize = 256;
pub const DEFAULT_TARGET: (usize, usize) = (224, 224);
pub const DEFAULT_ELF_SECTIONS: [&str; 3] = [".text", ".data", ".rodata"];

/// Denoised bytes plus a flag set when any contained file failed to parse
/// and was passed through whole.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiseOutcome {
    pub bytes: Vec<u8>,
    pub passthrough_files: usize,
}

impl DenoiseOutcome {
    pub fn warned(&self) -> bool {
        self.passthrough_files > 0
    }
}

/// Apply the per-format noise filter to every file in the stream and
/// concatenate what survives, in stream order. A file that does not parse
/// under its format is kept whole and counted in `passthrough_files`.
pub fn denoise(stream: &Stream, kind: ArtifactKind, elf_sections: &[&str]) -> DenoiseOutcome {
    let mut out = Vec::new();
    let mut passthrough_files = 0;
    for (offset, length) in stream.spans() {
        let file = &stream.bytes[offset..offset + length];
        match denoise_file(file, kind, elf_sections) {
            Some(kept) => out.extend_from_slice(&kept),
            None => {
                out.extend_from_slice(file);
                passthrough_files += 1;
            }
        }
    }
    DenoiseOutcome {
        bytes: out,
        passthrough_files,
    }
}

fn denoise_file(file: &[u8], kind: ArtifactKind, elf_sections: &[&str]) -> Option<Vec<u8>> {
    match kind {
        ArtifactKind::Dex => {
            let header = dex::parse_header(file).ok()?;
            let start = header.data_off as usize;
            let end = start.checked_add(header.data_size as usize)?;
            if end > file.len() {
                return None;
            }
            Some(file[start..end].to_vec())
        }
        ArtifactKind::Xml => {
            let ranges = axml::collect_payload_ranges(file).ok()?;
            let mut kept = Vec::new();
            for (chunk_kind, range) in ranges {
                if chunk_kind == axml::CHUNK_STRING_POOL
                    || chunk_kind == axml::CHUNK_START_ELEMENT
                    || chunk_kind == axml::CHUNK_END_ELEMENT
                {
                    kept.extend_from_slice(&file[range]);
                }
            }
            Some(kept)
        }
        ArtifactKind::So => {
            let sections = elf::sections(file).ok()?;
            let mut kept = Vec::new();
            for section in sections {
                if elf_sections.contains(&section.name.as_str()) {
                    kept.extend_from_slice(&file[section.range]);
                }
            }
            Some(kept)
        }
    }
}

/// One 8-bit channel plane, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Reshape bytes into rows of `width` pixels, zero-padding the final
/// partial row. Empty input gives a single all-zero row.
pub fn bytes_to_plane(bytes: &[u8], width: usize) -> Plane {
    assert!(width >= 1, "plane width must be at least 1");
    let height = bytes.len().div_ceil(width).max(1);
    let mut data = vec![0u8; height * width];
    data[..bytes.len()].copy_from_slice(bytes);
    Plane {
        width,
        height,
        data,
    }
}

/// Bilinear resampling with the align-corners=false convention: source
/// coordinate for output index i is (i + 0.5) * (src/dst) - 0.5, clamped to
/// the valid range.
pub fn bilinear_resize(
    src: &[f32],
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f32> {
    assert_eq!(src.len(), src_h * src_w, "source buffer does not match its shape");
    assert!(src_h >= 1 && src_w >= 1 && dst_h >= 1 && dst_w >= 1);
    let scale_y = src_h as f32 / dst_h as f32;
    let scale_x = src_w as f32 / dst_w as f32;
    let mut out = Vec::with_capacity(dst_h * dst_w);
    for i in 0..dst_h {
        let sy = ((i as f32 + 0.5) * scale_y - 0.5).clamp(0.0, (src_h - 1) as f32);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let fy = sy - y0 as f32;
        for j in 0..dst_w {
            let sx = ((j as f32 + 0.5) * scale_x - 0.5).clamp(0.0, (src_w - 1) as f32);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let fx = sx - x0 as f32;
            let top = src[y0 * src_w + x0] * (1.0 - fx) + src[y0 * src_w + x1] * fx;
            let bot = src[y1 * src_w + x0] * (1.0 - fx) + src[y1 * src_w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

fn resize_plane(plane: &Plane, dst_h: usize, dst_w: usize) -> Vec<u8> {
    let src: Vec<f32> = plane.data.iter().map(|&b| b as f32).collect();
    bilinear_resize(&src, plane.height, plane.width, dst_h, dst_w)
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Fixed-size 3-channel image; R holds the dex plane, G the xml plane, B
/// the so plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewImage {
    pub width: usize,
    pub height: usize,
    pub channels: [Vec<u8>; 3],
}

/// Resample each plane to the target independently and stack them R/G/B.
pub fn assemble_and_resize(planes: &[Plane; 3], target: (usize, usize)) -> ViewImage {
    let (height, width) = target;
    ViewImage {
        width,
        height,
        channels: [
            resize_plane(&planes[0], height, width),
            resize_plane(&planes[1], height, width),
            resize_plane(&planes[2], height, width),
        ],
    }
}

impl ViewImage {
    /// Channel-major [3, H, W] values scaled to [0, 1] for the encoder.
    pub fn to_input<T: crate::Scalar>(&self) -> Vec<T> {
        let inv = T::from_f64(1.0 / 255.0);
        self.channels
            .iter()
            .flat_map(|c| c.iter().map(|&b| T::from_usize(b as usize) * inv))
            .collect()
    }

    pub fn write_png(&self, path: &Path) -> Result<(), image::ImageError> {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                img.put_pixel(
                    x as u32,
                    y as u32,
                    image::Rgb([
                        self.channels[0][i],
                        self.channels[1][i],
                        self.channels[2][i],
                    ]),
                );
            }
        }
        img.save(path)
    }
}

const CACHE_MAGIC: &[u8; 4] = b"VIM1";

#[derive(Debug, Error)]
pub enum ImageCacheError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated cache: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
}

impl ViewImage {
    /// Cache form: magic, u16 width, u16 height, then the three planes raw.
    pub fn to_cache_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 3 * self.width * self.height);
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        for channel in &self.channels {
            out.extend_from_slice(channel);
        }
        out
    }

    pub fn from_cache_bytes(bytes: &[u8]) -> Result<ViewImage, ImageCacheError> {
        if bytes.len() < 8 || &bytes[..4] != CACHE_MAGIC {
            return Err(ImageCacheError::BadMagic);
        }
        let width = u16::from_le_bytes(bytes[4..6].try_into().unwrap()) as usize;
        let height = u16::from_le_bytes(bytes[6..8].try_into().unwrap()) as usize;
        let plane = width * height;
        let expected = 8 + 3 * plane;
        if bytes.len() != expected {
            return Err(ImageCacheError::Truncated {
                expected,
                got: bytes.len(),
            });
        }
        Ok(ViewImage {
            width,
            height,
            channels: [
                bytes[8..8 + plane].to_vec(),
                bytes[8 + plane..8 + 2 * plane].to_vec(),
                bytes[8 + 2 * plane..].to_vec(),
            ],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apk::FileSpan;
    use crate::axml;
    use crate::dex::builder::{single_class, BodyOp};
    use crate::elf::build_elf;

    fn stream_of(files: &[(&str, &[u8])]) -> Stream {
        let mut bytes = Vec::new();
        let mut index = Vec::new();
        for (path, content) in files {
            index.push(FileSpan {
                path: path.to_string(),
                offset: bytes.len(),
                length: content.len(),
            });
            bytes.extend_from_slice(*content);
        }
        Stream { bytes, index }
    }

    #[test]
    fn dex_denoise_keeps_exactly_the_data_section() {
        let dex = single_class("Lt/T;", &[vec![BodyOp::Plain(0x0e)]]);
        let header = dex::parse_header(&dex).unwrap();
        let stream = stream_of(&[("classes.dex", &dex)]);
        let outcome = denoise(&stream, ArtifactKind::Dex, &DEFAULT_ELF_SECTIONS);
        assert!(!outcome.warned());
        assert_eq!(outcome.bytes.len(), header.data_size as usize);
        let start = header.data_off as usize;
        assert_eq!(outcome.bytes, dex[start..start + header.data_size as usize]);
    }

    #[test]
    fn malformed_file_passes_through_whole() {
        let junk = vec![0xabu8; 40];
        let stream = stream_of(&[("classes.dex", &junk)]);
        let outcome = denoise(&stream, ArtifactKind::Dex, &DEFAULT_ELF_SECTIONS);
        assert_eq!(outcome.passthrough_files, 1);
        assert_eq!(outcome.bytes, junk);
    }

    #[test]
    fn xml_denoise_concatenates_chunk_payloads() {
        let pool = axml::chunk(axml::CHUNK_STRING_POOL, 8, &[1u8; 24]);
        let elem = axml::chunk(axml::CHUNK_START_ELEMENT, 16, &[2u8; 36]);
        let doc = axml::document(&[pool, elem]);
        let stream = stream_of(&[("AndroidManifest.xml", &doc)]);
        let outcome = denoise(&stream, ArtifactKind::Xml, &DEFAULT_ELF_SECTIONS);
        assert!(!outcome.warned());
        assert_eq!(outcome.bytes.len(), 60);
        assert_eq!(&outcome.bytes[..24], &[1u8; 24]);
        assert_eq!(&outcome.bytes[24..], &[2u8; 36]);
    }

    #[test]
    fn elf_denoise_keeps_whitelisted_sections() {
        let so = build_elf(&[(".text", &[7u8; 10]), (".comment", &[9u8; 5])]);
        let stream = stream_of(&[("lib/arm64/libx.so", &so)]);
        let outcome = denoise(&stream, ArtifactKind::So, &DEFAULT_ELF_SECTIONS);
        assert!(!outcome.warned());
        assert_eq!(outcome.bytes, vec![7u8; 10]);
    }

    #[test]
    fn plane_reshapes_and_pads() {
        let p = bytes_to_plane(&[0, 255, 1], 3);
        assert_eq!((p.height, p.width), (1, 3));
        assert_eq!(p.data, vec![0, 255, 1]);

        let p = bytes_to_plane(&[1, 2, 3, 4, 5], 2);
        assert_eq!((p.height, p.width), (3, 2));
        assert_eq!(p.data, vec![1, 2, 3, 4, 5, 0]);

        let p = bytes_to_plane(&[], 4);
        assert_eq!((p.height, p.width), (1, 4));
        assert_eq!(p.data, vec![0; 4]);
    }

    #[test]
    fn ramp_reshapes_exactly() {
        let ramp: Vec<u8> = (0..=255).collect();
        let p = bytes_to_plane(&ramp, 16);
        assert_eq!((p.height, p.width), (16, 16));
        assert_eq!(p.data, ramp);
    }

    #[test]
    fn constant_plane_resizes_to_constant() {
        let src = vec![42.0f32; 3 * 5];
        for &(h, w) in &[(1, 1), (2, 9), (7, 7), (10, 3)] {
            let out = bilinear_resize(&src, 3, 5, h, w);
            assert!(out.iter().all(|&v| (v - 42.0).abs() < 1e-5));
        }
    }

    #[test]
    fn two_column_gradient_is_monotone_per_row() {
        let src = [0.0f32, 255.0, 0.0, 255.0];
        let out = bilinear_resize(&src, 2, 2, 2, 6);
        for row in out.chunks(6) {
            for pair in row.windows(2) {
                assert!(pair[0] <= pair[1], "{row:?}");
            }
            assert_eq!(row[0], 0.0);
            assert_eq!(row[5], 255.0);
        }
    }

    #[test]
    fn resize_respects_input_bounds() {
        let src: Vec<f32> = (0..12).map(|i| (i * 17 % 251) as f32).collect();
        let lo = src.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = src.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let out = bilinear_resize(&src, 3, 4, 9, 13);
        for &v in &out {
            assert!(v >= lo - 1e-4 && v <= hi + 1e-4);
        }
    }

    #[test]
    fn assemble_stacks_three_channels() {
        let planes = [
            bytes_to_plane(&[10; 8], 4),
            bytes_to_plane(&[20; 8], 4),
            bytes_to_plane(&[], 4),
        ];
        let img = assemble_and_resize(&planes, (3, 3));
        assert_eq!((img.height, img.width), (3, 3));
        assert!(img.channels[0].iter().all(|&v| v == 10));
        assert!(img.channels[1].iter().all(|&v| v == 20));
        assert!(img.channels[2].iter().all(|&v| v == 0));
    }

    #[test]
    fn cache_round_trips() {
        let planes = [
            bytes_to_plane(&[1, 2, 3, 4, 5], 2),
            bytes_to_plane(&[9; 3], 2),
            bytes_to_plane(&[], 2),
        ];
        let img = assemble_and_resize(&planes, (4, 5));
        let bytes = img.to_cache_bytes();
        let back = ViewImage::from_cache_bytes(&bytes).unwrap();
        assert_eq!(back, img);
        assert!(matches!(
            ViewImage::from_cache_bytes(&bytes[..bytes.len() - 2]),
            Err(ImageCacheError::Truncated { .. })
        ));
    }

    #[test]
    fn png_export_writes_a_decodable_file() {
        let planes = [
            bytes_to_plane(&[0, 64, 128, 255], 2),
            bytes_to_plane(&[255; 4], 2),
            bytes_to_plane(&[], 2),
        ];
        let img = assemble_and_resize(&planes, (2, 2));
        let dir = std::env::temp_dir().join("triview-png-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("view.png");
        img.write_png(&path).unwrap();
        let decoded = image::open(&path).unwrap().to_rgb8();
        assert_eq!(decoded.dimensions(), (2, 2));
        assert_eq!(decoded.get_pixel(0, 0).0[1], 255);
        std::fs::remove_dir_all(&dir).ok();
    }
}
