//! IDX reader (the MNIST container format): big-endian header, `u8` payload.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, IdxSpec, Splits};
use crate::encoder::Image;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: format!(
                "truncated header: expected {} bytes, found {}",
                offset + 4,
                bytes.len()
            ),
        })
}

fn check_magic(bytes: &[u8], want: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != want {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic 0x{magic:08x}, expected 0x{want:08x}"),
        });
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    let expected = header + len;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: header as u64,
            message: format!("expected {expected} bytes in total, found {}", bytes.len()),
        });
    }
    Ok(&bytes[header..])
}

/// Parses an image file (`0x00000803`, dims count x rows x cols) into
/// single-channel images scaled to `[0, 1]`.
pub fn parse_images(bytes: &[u8]) -> Result<Vec<Image>> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let data = payload(bytes, 16, count * rows * cols)?;
    Ok(data
        .chunks_exact(rows * cols)
        .take(count)
        .map(|px| Image {
            height: rows,
            width: cols,
            channels: 1,
            data: px.iter().map(|&v| f64::from(v) / 255.0).collect(),
        })
        .collect())
}

/// Parses a label file (`0x00000801`, one dimension).
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, count)?.iter().map(|&v| v as usize).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn load_pair(images: &Path, labels: &Path) -> Result<(Vec<Image>, Vec<usize>)> {
    Ok((parse_images(&read(images)?)?, parse_labels(&read(labels)?)?))
}

pub fn load_splits(spec: &IdxSpec) -> Result<Splits> {
    let (images, labels) = load_pair(&spec.images, &spec.labels)?;
    let (train, eval) = match (&spec.eval_images, &spec.eval_labels) {
        (Some(ei), Some(el)) => ((images, labels), load_pair(ei, el)?),
        (None, None) => {
            if !(0.0..1.0).contains(&spec.eval_fraction) {
                return Err(Error::Config(format!(
                    "eval_fraction {} outside [0, 1)",
                    spec.eval_fraction
                )));
            }
            let n_eval = (images.len() as f64 * spec.eval_fraction).round() as usize;
            let cut = images.len() - n_eval;
            let (ti, ei) = images.split_at(cut);
            let (tl, el) = labels.split_at(cut);
            ((ti.to_vec(), tl.to_vec()), (ei.to_vec(), el.to_vec()))
        }
        _ => {
            return Err(Error::Config(
                "eval_images and eval_labels must be given together".into(),
            ))
        }
    };
    let classes = spec.classes.unwrap_or_else(|| {
        train.1.iter().chain(&eval.1).max().map_or(1, |m| m + 1)
    });
    Ok(Splits {
        train: Dataset::new(train.0, train.1, classes)?,
        eval: Dataset::new(eval.0, eval.1, classes)?,
    })
}

/// Serializes images (rounded to `u8`) in IDX form.
pub fn encode_images(images: &[Image]) -> Vec<u8> {
    let (rows, cols) = images.first().map_or((0, 0), |i| (i.height, i.width));
    let mut out = Vec::new();
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [images.len(), rows, cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for img in images {
        out.extend(img.data.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    out
}

pub fn encode_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b
    }

    #[test]
    fn two_four_by_four_images() {
        let mut b = header(0x803, &[2, 4, 4]);
        b.extend((0..32).map(|v| v as u8));
        let imgs = parse_images(&b).unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[1].data.len(), 16);
        assert_eq!(imgs[1].data[0], 16.0 / 255.0);
    }

    #[test]
    fn bad_magic_reports_offset() {
        let b = header(0x801, &[2, 4, 4]);
        let err = parse_images(&b).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncated_payload_names_lengths() {
        let mut b = header(0x803, &[2, 4, 4]);
        b.extend([0u8; 20]);
        let msg = parse_images(&b).unwrap_err().to_string();
        assert!(msg.contains("expected 48") && msg.contains("found 36"), "{msg}");
    }

    #[test]
    fn labels_round_trip() {
        let l = vec![3, 1, 4, 1, 5];
        assert_eq!(parse_labels(&encode_labels(&l)).unwrap(), l);
    }
}
