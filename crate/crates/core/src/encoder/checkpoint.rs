//! Binary checkpoint format.
//!
//! ```text
//! "EVOT"                      4 bytes
//! version                     u32 (currently 1)
//! image_side, patch_side, channels_in, embed_dim,
//! heads, depth, ffn_hidden, num_classes      8 x u32
//! blob count                  u32
//! per blob:
//!   name length               u16
//!   name                      UTF-8 bytes
//!   rows, cols                2 x u32
//!   values                    rows * cols x f64, row-major
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::encoder::{EncoderConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamSet, RngState};

pub const MAGIC: &[u8; 4] = b"EVOT";
pub const VERSION: u32 = 1;

pub fn encode(cfg: &EncoderConfig, params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in header_fields(cfg) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let ps = params.params();
    out.extend_from_slice(&(ps.len() as u32).to_le_bytes());
    for p in ps {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn header_fields(cfg: &EncoderConfig) -> [u32; 8] {
    [
        cfg.image_side as u32,
        cfg.patch_side as u32,
        cfg.channels_in as u32,
        cfg.embed_dim as u32,
        cfg.heads as u32,
        cfg.depth as u32,
        cfg.hidden() as u32,
        cfg.num_classes as u32,
    ]
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated {what}: expected {n} bytes, found {available}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Reads only the header, returning the stored encoder config.
pub fn decode_config(bytes: &[u8]) -> Result<EncoderConfig> {
    let mut r = Reader { bytes, pos: 0 };
    read_header(&mut r)
}

fn read_header(r: &mut Reader<'_>) -> Result<EncoderConfig> {
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected \"EVOT\""),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let mut f = [0usize; 8];
    for v in &mut f {
        *v = r.u32("config header")? as usize;
    }
    let [image_side, patch_side, channels_in, embed_dim, heads, depth, hidden, num_classes] = f;
    let cfg = EncoderConfig {
        image_side,
        patch_side,
        channels_in,
        embed_dim,
        heads,
        depth,
        ffn_hidden: (hidden != 4 * embed_dim).then_some(hidden),
        num_classes,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn decode(bytes: &[u8]) -> Result<(EncoderConfig, ModelParams)> {
    let mut r = Reader { bytes, pos: 0 };
    let cfg = read_header(&mut r)?;
    let mut params = ModelParams::init(&cfg, &mut RngState::new(0))?;
    let count = r.u32("blob count")? as usize;
    let expected = params.params().len();
    if count != expected {
        return Err(Error::Format {
            offset: (r.pos - 4) as u64,
            message: format!("{count} parameter blobs, config implies {expected}"),
        });
    }
    for p in params.params_mut() {
        let at = r.pos as u64;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| Error::Format {
            offset: at,
            message: "parameter name is not UTF-8".into(),
        })?;
        if name != p.name {
            return Err(Error::Format {
                offset: at,
                message: format!("found parameter {name}, expected {}", p.name),
            });
        }
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        if (rows, cols) != p.value.shape() {
            return Err(Error::Format {
                offset: at,
                message: format!(
                    "{name} stored as {rows}x{cols}, config expects {}x{}",
                    p.value.rows(),
                    p.value.cols()
                ),
            });
        }
        let raw = r.take(rows * cols * 8, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        p.value = Matrix::from_vec(rows, cols, data)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            message: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok((cfg, params))
}

pub fn save(path: &Path, cfg: &EncoderConfig, params: &ModelParams) -> Result<()> {
    fs::write(path, encode(cfg, params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(EncoderConfig, ModelParams)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (EncoderConfig, ModelParams) {
        let cfg = EncoderConfig::new(8, 4, 2, 8, 2, 2, 3);
        let p = ModelParams::init(&cfg, &mut RngState::new(9)).unwrap();
        (cfg, p)
    }

    #[test]
    fn bit_exact_round_trip() {
        let (cfg, p) = sample();
        let bytes = encode(&cfg, &p);
        assert_eq!(&bytes[..4], b"EVOT");
        let (cfg2, p2) = decode(&bytes).unwrap();
        assert_eq!(cfg, cfg2);
        for (a, b) in p.params().iter().zip(p2.params()) {
            let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert_eq!(encode(&cfg2, &p2), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let (cfg, p) = sample();
        let mut bytes = encode(&cfg, &p);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format { offset: 0, .. })));
        bytes.truncate(bytes.len() - 3);
        let err = decode(&bytes).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn header_only() {
        let (cfg, p) = sample();
        assert_eq!(decode_config(&encode(&cfg, &p)).unwrap(), cfg);
    }
}
