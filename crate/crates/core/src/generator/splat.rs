//! Parametric 2D splat scene and its plain-text record format.
//!
//! One splat per line, whitespace separated:
//! `px py sx sy rot r g b opacity z`. Lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    /// Center in image units (pixel `(col, row)` covers `[col, col+1) x [row, row+1)`).
    pub pos: [f64; 2],
    /// Standard deviations along the splat's local axes.
    pub scale: [f64; 2],
    /// Rotation of the local axes, radians.
    pub rot: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Compositing depth; smaller is in front.
    pub z: f64,
}

impl Splat {
    pub fn max_scale(&self) -> f64 {
        self.scale[0].max(self.scale[1])
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.pos.iter().chain(&self.scale).chain(&self.color).all(|v| v.is_finite())
            && self.rot.is_finite()
            && self.z.is_finite();
        if !finite {
            return Err(Error::NonFinite("splat parameter".into()));
        }
        if self.scale.iter().any(|s| *s <= 0.0) {
            return Err(Error::Parameter(format!("splat scales must be positive: {:?}", self.scale)));
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return Err(Error::Parameter(format!(
                "splat opacity must lie in (0, 1), got {}",
                self.opacity
            )));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Parameter(format!("splat colors must lie in [0, 1]: {:?}", self.color)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplatScene {
    pub splats: Vec<Splat>,
}

impl SplatScene {
    pub fn new(splats: Vec<Splat>) -> Result<Self> {
        let scene = Self { splats };
        scene.validate()?;
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.splats.iter().try_for_each(Splat::validate)
    }

    /// `count` random splats scattered over a `width x height` image.
    pub fn random<R: Rng>(rng: &mut R, count: usize, width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let base = (w.min(h) / (count as f64).sqrt()).max(1.0) * 0.5;
        let splats = (0..count)
            .map(|_| Splat {
                pos: [rng.random_range(0.15 * w..0.85 * w), rng.random_range(0.15 * h..0.85 * h)],
                scale: [
                    base * rng.random_range(0.6..1.4),
                    base * rng.random_range(0.6..1.4),
                ],
                rot: rng.random_range(-1.5..1.5),
                color: [
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.1..0.9),
                ],
                opacity: rng.random_range(0.3..0.8),
                z: rng.random_range(0.5..2.0),
            })
            .collect();
        Self { splats }
    }

    /// `cols x rows` lattice of identical gray splats covering the image.
    pub fn grid(cols: usize, rows: usize, width: usize, height: usize, z: f64) -> Self {
        let (cw, ch) = (width as f64 / cols as f64, height as f64 / rows as f64);
        let mut splats = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                splats.push(Splat {
                    pos: [(c as f64 + 0.5) * cw, (r as f64 + 0.5) * ch],
                    scale: [0.6 * cw, 0.6 * ch],
                    rot: 0.0,
                    color: [0.5, 0.5, 0.5],
                    opacity: 0.5,
                    z: z + 0.01 * (r * cols + c) as f64,
                });
            }
        }
        Self { splats }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# px py sx sy rot r g b opacity z\n");
        for s in &self.splats {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {} {} {}",
                s.pos[0],
                s.pos[1],
                s.scale[0],
                s.scale[1],
                s.rot,
                s.color[0],
                s.color[1],
                s.color[2],
                s.opacity,
                s.z
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut splats = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("scene line {}: {e}", lineno + 1)))?;
            if vals.len() != 10 {
                return Err(Error::Config(format!(
                    "scene line {}: expected 10 fields, got {}",
                    lineno + 1,
                    vals.len()
                )));
            }
            splats.push(Splat {
                pos: [vals[0], vals[1]],
                scale: [vals[2], vals[3]],
                rot: vals[4],
                color: [vals[5], vals[6], vals[7]],
                opacity: vals[8],
                z: vals[9],
            });
        }
        Self::new(splats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    proptest! {
        #[test]
        fn text_round_trip(seed in any::<u64>(), n in 1usize..12) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let scene = SplatScene::random(&mut rng, n, 24, 16);
            let back = SplatScene::from_text(&scene.to_text()).unwrap();
            prop_assert_eq!(back, scene);
        }
    }

    #[test]
    fn rejects_bad_records() {
        assert!(SplatScene::from_text("1 2 3").is_err());
        assert!(SplatScene::from_text("1 1 1 1 0 .5 .5 .5 1.0 0").is_err());
        assert!(SplatScene::from_text("1 1 0 1 0 .5 .5 .5 0.5 0").is_err());
        assert!(SplatScene::from_text("1 1 1 1 0 1.5 .5 .5 0.5 0").is_err());
        assert!(SplatScene::from_text("# header only\n").unwrap().is_empty());
    }
}
