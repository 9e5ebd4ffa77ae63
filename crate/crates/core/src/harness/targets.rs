//! Mixture mean sources: constants, inline vectors, PNG images and
//! built-in procedural patterns.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Disc,
    Ring,
    Stripes,
    Checker,
    Gradient,
}

impl Pattern {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "disc" => Self::Disc,
            "ring" => Self::Ring,
            "stripes" => Self::Stripes,
            "checker" => Self::Checker,
            "gradient" => Self::Gradient,
            other => return Err(Error::Config(format!("unknown pattern '{other}'"))),
        })
    }

    /// RGB in [0, 1] at normalized coordinates `(u, v)` in [0, 1)^2.
    fn color(&self, u: f64, v: f64) -> [f64; 3] {
        const BG: [f64; 3] = [0.1, 0.1, 0.1];
        let r = (u - 0.5).hypot(v - 0.5);
        match self {
            Self::Disc => {
                if r < 0.3 {
                    [0.9, 0.3, 0.2]
                } else {
                    BG
                }
            }
            Self::Ring => {
                if (0.2..0.38).contains(&r) {
                    [0.2, 0.6, 0.9]
                } else {
                    BG
                }
            }
            Self::Stripes => {
                if (u * 4.0).floor() as i64 % 2 == 0 {
                    [0.9, 0.9, 0.2]
                } else {
                    BG
                }
            }
            Self::Checker => {
                if ((u * 4.0).floor() as i64 + (v * 4.0).floor() as i64) % 2 == 0 {
                    [0.8, 0.8, 0.8]
                } else {
                    BG
                }
            }
            Self::Gradient => [u, 0.5, 1.0 - u],
        }
    }

    /// Channel-last RGB image, row-major, sampled at pixel centers.
    pub fn render(&self, width: usize, height: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * width * height);
        for row in 0..height {
            for col in 0..width {
                let u = (col as f64 + 0.5) / width as f64;
                let v = (row as f64 + 0.5) / height as f64;
                out.extend(self.color(u, v));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeanSource {
    /// Every entry equal to the value.
    Const(f64),
    Inline(Vec<f64>),
    Image(PathBuf),
    Pattern(Pattern),
}

impl MeanSource {
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("expected const:|inline:|image:|pattern:, got '{s}'")))?;
        match kind {
            "const" => rest
                .trim()
                .parse()
                .map(Self::Const)
                .map_err(|_| Error::Config(format!("bad constant in '{s}'"))),
            "inline" => rest
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Self::Inline)
                .map_err(|_| Error::Config(format!("bad number in '{s}'"))),
            "image" => Ok(Self::Image(PathBuf::from(rest.trim()))),
            "pattern" => Pattern::parse(rest.trim()).map(Self::Pattern),
            other => Err(Error::Config(format!("unknown mean source '{other}'"))),
        }
    }

    /// Materializes the mean as a `dim`-vector. Image-like sources produce
    /// `width x height` RGB, followed by a constant depth plane when
    /// `depth_fill` is given.
    pub fn resolve(&self, dim: usize, width: usize, height: usize, depth_fill: Option<f64>) -> Result<Vec<f64>> {
        let mut v = match self {
            Self::Const(c) => return Ok(vec![*c; dim]),
            Self::Inline(v) => {
                if v.len() != dim {
                    return Err(Error::Shape {
                        expected: dim,
                        got: v.len(),
                    });
                }
                return Ok(v.clone());
            }
            Self::Pattern(p) => p.render(width, height),
            Self::Image(path) => load_rgb(path, width, height)?,
        };
        if let Some(d) = depth_fill {
            v.extend(std::iter::repeat_n(d, width * height));
        }
        if v.len() != dim {
            return Err(Error::Shape {
                expected: dim,
                got: v.len(),
            });
        }
        Ok(v)
    }
}

/// Loads a PNG as channel-last RGB in [0, 1], resized to `width x height`.
pub fn load_rgb(path: &Path, width: usize, height: usize) -> Result<Vec<f64>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = image::imageops::resize(
        &img.to_rgb8(),
        width as u32,
        height as u32,
        image::imageops::FilterType::Triangle,
    );
    Ok(rgb.as_raw().iter().map(|&b| b as f64 / 255.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sources() {
        assert_eq!(MeanSource::parse("const:0.5").unwrap(), MeanSource::Const(0.5));
        assert_eq!(MeanSource::parse("inline:1, 2").unwrap(), MeanSource::Inline(vec![1.0, 2.0]));
        assert_eq!(MeanSource::parse("pattern:ring").unwrap(), MeanSource::Pattern(Pattern::Ring));
        assert!(MeanSource::parse("pattern:blob").is_err());
        assert!(MeanSource::parse("inline:1,x").is_err());
        assert!(MeanSource::parse("0.5").is_err());
    }

    #[test]
    fn resolves_shapes() {
        assert_eq!(MeanSource::Const(2.0).resolve(3, 1, 1, None).unwrap(), vec![2.0; 3]);
        assert!(MeanSource::Inline(vec![1.0]).resolve(2, 1, 1, None).is_err());
        let p = MeanSource::Pattern(Pattern::Disc).resolve(4 * 8 * 8, 8, 8, Some(1.0)).unwrap();
        assert_eq!(&p[3 * 64..], &[1.0; 64]);
        // center pixel is inside the disc, corner is background
        let c = 3 * (4 * 8 + 4);
        assert_eq!(&p[c..c + 3], &[0.9, 0.3, 0.2]);
        assert_eq!(&p[0..3], &[0.1, 0.1, 0.1]);
        assert!(MeanSource::Pattern(Pattern::Disc).resolve(10, 8, 8, None).is_err());
    }

    #[test]
    fn image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = image::RgbImage::from_fn(4, 2, |x, _| image::Rgb([x as u8 * 60, 0, 255]));
        img.save(&path).unwrap();
        let v = load_rgb(&path, 4, 2).unwrap();
        assert_eq!(v.len(), 24);
        assert!((v[3] - 60.0 / 255.0).abs() < 1e-12);
        assert_eq!(v[2], 1.0);
        assert!(load_rgb(&dir.path().join("missing.png"), 4, 2).is_err());
    }
}
