//! Dataset manifests: one JSON header line followed by one JSON record per
//! sample. Images are stored inline (lossless f64) or referenced as portable
//! pixmap files relative to the manifest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    name: String,
    height: usize,
    width: usize,
    channels: usize,
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    closure_tag: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    branch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chain: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_path: Option<String>,
}

const MANIFEST_KIND: &str = "gps-dataset";

/// Write a dataset with inline pixel data.
pub fn save_manifest(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Argument("cannot write an empty dataset manifest".into()));
    }
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    let header = Header {
        kind: MANIFEST_KIND.to_string(),
        name: ds.name().to_string(),
        height: ds.height(),
        width: ds.width(),
        channels: ds.channels(),
        count: ds.len(),
        closure_tag: ds.closure_tag().map(str::to_string),
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| Error::Format(e.to_string()))?;
    out.write_all(b"\n")?;
    for s in ds.samples() {
        let rec = Record {
            id: s.id,
            branch: s.branch_label,
            chain: s.chain_label,
            image: Some(s.image.pixels().to_vec()),
            image_path: None,
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a manifest; `image_path` records are resolved against the manifest's
/// directory and decoded as portable pixmaps.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Format("manifest is empty".into()))?;
    let header: Header =
        serde_json::from_str(header_line).map_err(|e| Error::Format(format!("header: {e}")))?;
    if header.kind != MANIFEST_KIND {
        return Err(Error::Format(format!("unknown manifest kind {:?}", header.kind)));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let rec: Record =
            serde_json::from_str(line).map_err(|e| Error::Format(format!("record {i}: {e}")))?;
        if rec.id != i {
            return Err(Error::Format(format!("record {i} carries id {}", rec.id)));
        }
        let image = match (rec.image, rec.image_path) {
            (Some(pixels), None) => {
                Image::new(header.height, header.width, header.channels, pixels)
                    .map_err(|e| Error::Format(format!("record {i}: {e}")))?
            }
            (None, Some(rel)) => {
                let img = read_ppm(base.join(&rel))?;
                if img.height() != header.height
                    || img.width() != header.width
                    || img.channels() != header.channels
                {
                    return Err(Error::Format(format!("record {i}: {rel} shape mismatch")));
                }
                img
            }
            _ => {
                return Err(Error::Format(format!(
                    "record {i} must carry exactly one of image or image_path"
                )))
            }
        };
        samples.push(Sample { id: i, image, branch_label: rec.branch, chain_label: rec.chain });
    }
    if samples.len() != header.count {
        return Err(Error::Format(format!(
            "header declares {} samples, found {}",
            header.count,
            samples.len()
        )));
    }
    Dataset::new(header.name, samples, header.closure_tag)
}

/// Minimal binary portable pixmap reader: P6 (RGB) and P5 (grayscale), 8-bit.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path.as_ref())?;
    let mut pos = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated pixmap header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token(&bytes)?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(Error::Format(format!("unsupported pixmap magic {other:?}"))),
    };
    let w: usize = token(&bytes)?.parse().map_err(|_| Error::Format("bad width".into()))?;
    let h: usize = token(&bytes)?.parse().map_err(|_| Error::Format("bad height".into()))?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| Error::Format("bad maxval".into()))?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates header from payload
    pos += 1;
    let expected = h * w * channels;
    let payload = bytes.get(pos..).unwrap_or_default();
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "pixmap payload length {}, expected {expected}",
            payload.len()
        )));
    }
    let data = payload.iter().map(|&b| b as f64 / maxval as f64).collect();
    Image::new(h, w, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    #[test]
    fn manifest_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let ds = generate_synthetic(2, 2, 2, 8, 0.1, true, 3).unwrap();
        save_manifest(&path, &ds).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn manifest_bytes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let ds = generate_synthetic(1, 2, 2, 8, 0.2, false, 7).unwrap();
        save_manifest(&a, &ds).unwrap();
        save_manifest(&b, &ds).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn ppm_p6_reads_and_links_from_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let ppm = dir.path().join("img.ppm");
        // 2x1 RGB: black pixel then full-red pixel
        fs::write(&ppm, b"P6\n2 1\n255\n\x00\x00\x00\xFF\x00\x00").unwrap();
        let img = read_ppm(&ppm).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (1, 2, 3));
        assert_eq!(img.get(0, 1, 0), 1.0);
        assert_eq!(img.get(0, 1, 1), 0.0);

        let manifest = dir.path().join("ds.jsonl");
        let text = concat!(
            "{\"kind\":\"gps-dataset\",\"name\":\"ppm\",\"height\":1,\"width\":2,\"channels\":3,\"count\":1}\n",
            "{\"id\":0,\"branch\":0,\"chain\":0,\"image_path\":\"img.ppm\"}\n"
        );
        fs::write(&manifest, text).unwrap();
        let ds = load_manifest(&manifest).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.sample(0).image.get(0, 1, 0), 1.0);
    }

    #[test]
    fn malformed_manifest_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"kind\":\"something-else\"}\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Format(_))));
    }
}
