//! Portable labelled-image file.
//!
//! Layout, all integers little-endian:
//! `"SCTD"` | version u32 | header length u32 | JSON header | records, each
//! `identity u32 | domain u16 | camera u16 | is_synthetic u8 | pixels f32 × C·H·W`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::persist::write_atomic;
use crate::reid::ImageSample;

pub const DATASET_MAGIC: &[u8; 4] = b"SCTD";
pub const DATASET_VERSION: u32 = 1;
const RECORD_FIELDS: [&str; 5] = ["identity:u32", "domain:u16", "camera:u16", "is_synthetic:u8", "pixels:f32"];

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    records: u64,
    image_shape: [usize; 3],
    fields: Vec<String>,
}

pub fn encode_dataset(samples: &[ImageSample], image_shape: [usize; 3]) -> Result<Vec<u8>> {
    let header = Header {
        records: samples.len() as u64,
        image_shape,
        fields: RECORD_FIELDS.iter().map(|s| s.to_string()).collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let pixels: usize = image_shape.iter().product();
    let mut out = Vec::with_capacity(12 + header.len() + samples.len() * (9 + 4 * pixels));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for s in samples {
        if s.image.shape() != image_shape {
            return Err(Error::shape("encode_dataset", format!("{:?} in a {image_shape:?} dataset", s.image.shape())));
        }
        out.extend_from_slice(&s.identity.to_le_bytes());
        out.extend_from_slice(&s.domain.to_le_bytes());
        out.extend_from_slice(&s.camera.to_le_bytes());
        out.push(s.is_synthetic as u8);
        for &v in s.image.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }
}

/// Returns the image shape and the samples.
pub fn decode_dataset(bytes: &[u8]) -> Result<([usize; 3], Vec<ImageSample>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != DATASET_MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic, expected SCTD".into() });
    }
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::Version { found: version, expected: DATASET_VERSION });
    }
    let len = r.u32("header length")? as usize;
    let at = r.pos as u64;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| Error::Format { offset: at, message: format!("header: {e}") })?;
    if header.fields != RECORD_FIELDS {
        return Err(Error::Format { offset: at, message: format!("unsupported record fields {:?}", header.fields) });
    }
    let pixels: usize = header.image_shape.iter().product();
    if pixels == 0 {
        return Err(Error::Format { offset: at, message: "empty image shape".into() });
    }
    let mut samples = Vec::new();
    for k in 0..header.records {
        let what = format!("record {k}");
        let identity = r.u32(&what)?;
        let domain = r.u16(&what)?;
        let camera = r.u16(&what)?;
        let flag_at = r.pos as u64;
        let is_synthetic = match r.take(1, &what)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Format { offset: flag_at, message: format!("synthetic flag {b}") }),
        };
        let data = r
            .take(4 * pixels, &what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let image = Tensor::new(header.image_shape.to_vec(), data)?;
        samples.push(ImageSample { image, identity, domain, camera, is_synthetic });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format { offset: r.pos as u64, message: "trailing bytes after last record".into() });
    }
    Ok((header.image_shape, samples))
}

pub fn save_dataset(path: &Path, samples: &[ImageSample], image_shape: [usize; 3]) -> Result<()> {
    write_atomic(path, &encode_dataset(samples, image_shape)?)
}

pub fn load_dataset(path: &Path) -> Result<([usize; 3], Vec<ImageSample>)> {
    decode_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, CorpusConfig};

    #[test]
    fn corpus_round_trip() {
        let c = generate_corpus(&CorpusConfig::default()).unwrap();
        let mut all = c.samples();
        all[3].is_synthetic = true;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.sctd");
        save_dataset(&path, &all, [3, 16, 16]).unwrap();
        let (shape, back) = load_dataset(&path).unwrap();
        assert_eq!(shape, [3, 16, 16]);
        assert_eq!(back.len(), 240);
        for (a, b) in all.iter().zip(&back) {
            assert_eq!((a.identity, a.domain, a.camera, a.is_synthetic), (b.identity, b.domain, b.camera, b.is_synthetic));
            assert!(a.image.max_abs_diff(&b.image) <= 1e-6);
        }
    }

    #[test]
    fn empty_dataset_is_valid() {
        let bytes = encode_dataset(&[], [3, 8, 8]).unwrap();
        let (shape, back) = decode_dataset(&bytes).unwrap();
        assert_eq!(shape, [3, 8, 8]);
        assert!(back.is_empty());
    }

    #[test]
    fn corruption_is_reported_with_offsets() {
        let c = generate_corpus(&CorpusConfig { n_identities: 3, n_domains: 2, images_per_id_per_domain: 2, ..Default::default() }).unwrap();
        let bytes = encode_dataset(&c.samples(), [3, 16, 16]).unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(Error::Format { offset: 0, .. })));
        let truncated = &bytes[..bytes.len() - 10];
        match decode_dataset(truncated) {
            Err(Error::Format { offset, message }) => {
                assert!(offset > 12 && message.contains("record 11"), "{offset} {message}");
            }
            other => panic!("{other:?}"),
        }
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(matches!(decode_dataset(&wrong), Err(Error::Version { found: 9, .. })));
    }
}
