use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// An `height x width x channels` image, channel-last, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Config(format!(
                "image buffer of {} values does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// Patch tokens plus CLS, shape `(1 + N, C)` with row 0 the CLS token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub tokens: Matrix,
    pub n_patches: usize,
}

impl TokenSequence {
    pub fn new(tokens: Matrix, n_patches: usize) -> Result<Self> {
        let seq = TokenSequence { tokens, n_patches };
        seq.check()?;
        Ok(seq)
    }

    /// Asserts the `1 + N` row invariant and finiteness.
    pub fn check(&self) -> Result<()> {
        if self.tokens.rows() != self.n_patches + 1 {
            return Err(Error::State(format!(
                "token sequence has {} rows, expected 1 + {}",
                self.tokens.rows(),
                self.n_patches
            )));
        }
        if !self.tokens.all_finite() {
            return Err(Error::Numeric("non-finite token features".into()));
        }
        Ok(())
    }

    pub fn cls(&self) -> &[f64] {
        self.tokens.row(0)
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        self.tokens.row(i + 1)
    }
}

/// Splits an image into non-overlapping patches.
///
/// Patches are enumerated row-major over the grid (top-left first). Inside a
/// patch, pixels are row-major and each pixel contributes its channels in
/// order, so a patch vector is `[(0,0,c0), (0,0,c1), .., (0,1,c0), ..]`.
pub fn patchify(image: &Image, cfg: &EncoderConfig) -> Result<Matrix> {
    cfg.validate()?;
    if image.height != cfg.image_side
        || image.width != cfg.image_side
        || image.channels != cfg.channels_in
    {
        return Err(Error::Config(format!(
            "image {}x{}x{} does not match configured {}x{}x{}",
            image.height,
            image.width,
            image.channels,
            cfg.image_side,
            cfg.image_side,
            cfg.channels_in
        )));
    }
    let p = cfg.patch_side;
    let grid = cfg.grid_side();
    let mut out = Matrix::zeros(cfg.n_patches(), cfg.patch_dim());
    for gy in 0..grid {
        for gx in 0..grid {
            let row = out.row_mut(gy * grid + gx);
            let mut i = 0;
            for py in 0..p {
                for px in 0..p {
                    for c in 0..image.channels {
                        row[i] = image.at(gy * p + py, gx * p + px, c);
                        i += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_by_four_gray() {
        let cfg = EncoderConfig::new(4, 2, 1, 4, 1, 1, 2);
        let img = Image::new(4, 4, 1, (0..16).map(f64::from).collect()).unwrap();
        let p = patchify(&img, &cfg).unwrap();
        assert_eq!(p.shape(), (4, 4));
        // pixels (0,0),(0,1),(1,0),(1,1)
        assert_eq!(p.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(p.row(1), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(p.row(3), &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn single_patch_is_flattened_image() {
        let cfg = EncoderConfig::new(2, 2, 3, 4, 1, 1, 2);
        let data: Vec<f64> = (0..12).map(f64::from).collect();
        let img = Image::new(2, 2, 3, data.clone()).unwrap();
        let p = patchify(&img, &cfg).unwrap();
        assert_eq!(p.shape(), (1, 12));
        assert_eq!(p.row(0), data.as_slice());
    }

    #[test]
    fn indivisible_is_config_error() {
        let cfg = EncoderConfig::new(3, 2, 1, 4, 1, 1, 2);
        let img = Image::zeros(3, 3, 1);
        assert!(matches!(patchify(&img, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn wrong_resolution_is_config_error() {
        let cfg = EncoderConfig::new(4, 2, 1, 4, 1, 1, 2);
        assert!(matches!(
            patchify(&Image::zeros(8, 8, 1), &cfg),
            Err(Error::Config(_))
        ));
    }
}
