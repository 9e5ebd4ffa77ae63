//! PNG / 16-bit PGM / CSV / summary emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::ExtendedColorType;

use crate::error::{Error, Result};

use super::config::{GeneratorKind, RunConfig};
use super::distill::{MetricsRecord, Params, RunResult, Snapshot, METRICS_HEADER};

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// 8-bit RGB PNG from a channel-last image in [0, 1] (values are clamped).
pub fn write_png(path: &Path, rgb: &[f64], width: usize, height: usize) -> Result<()> {
    if rgb.len() != 3 * width * height {
        return Err(Error::Shape {
            expected: 3 * width * height,
            got: rgb.len(),
        });
    }
    create_parent(path)?;
    let bytes: Vec<u8> = rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::save_buffer(path, &bytes, width as u32, height as u32, ExtendedColorType::Rgb8)
        .map_err(|e| image_err(path, e))
}

/// 16-bit binary PGM, linearly mapping `[min, max]` to `[0, 65535]`, plus a
/// `<name>.range.txt` sidecar recording `min` and `max`. Returns `(min, max)`.
pub fn write_pgm16(path: &Path, map: &[f64], width: usize, height: usize) -> Result<(f64, f64)> {
    if map.len() != width * height {
        return Err(Error::Shape {
            expected: width * height,
            got: map.len(),
        });
    }
    create_parent(path)?;
    let min = map.iter().copied().fold(f64::INFINITY, f64::min);
    let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    // binary PGM: ASCII header, then big-endian 16-bit samples
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in map {
        let q = if span > 0.0 { ((v - min) / span * 65535.0).round() as u16 } else { 0 };
        bytes.extend(q.to_be_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_text(&sidecar_path(path), &format!("min={min}\nmax={max}\n"))?;
    Ok((min, max))
}

pub fn sidecar_path(pgm: &Path) -> PathBuf {
    let stem = pgm.file_stem().and_then(|s| s.to_str()).unwrap_or("depth");
    pgm.with_file_name(format!("{stem}.range.txt"))
}

/// Generic CSV writer.
pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<S>>) -> Result<()> {
    create_parent(path)?;
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(AsRef::as_ref)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_csv(path, &METRICS_HEADER, records.iter().map(MetricsRecord::fields))
}

/// Writes the color (and depth, if any) of an image-shaped snapshot.
/// Identity latents that are not image-shaped are skipped.
pub fn write_snapshot_images(out: &Path, cfg: &RunConfig, snap: &Snapshot, name: &str) -> Result<bool> {
    let g = &cfg.generator;
    let n = g.pixels();
    let png = out.join("images").join(format!("{name}.png"));
    let pgm = out.join("depth").join(format!("{name}.pgm"));
    match &snap.render {
        Some(r) => {
            write_png(&png, &r.color, r.width, r.height)?;
            write_pgm16(&pgm, &r.depth, r.width, r.height)?;
            Ok(true)
        }
        None if snap.latent.len() == 3 * n || snap.latent.len() == 4 * n => {
            write_png(&png, &snap.latent[..3 * n], g.width, g.height)?;
            if snap.latent.len() == 4 * n {
                write_pgm16(&pgm, &snap.latent[3 * n..], g.width, g.height)?;
            }
            Ok(true)
        }
        None => Ok(false),
    }
}

/// Side-by-side grid of the color renders of `snaps`, one row.
pub fn write_grid(path: &Path, cfg: &RunConfig, snaps: &[&Snapshot]) -> Result<bool> {
    let g = &cfg.generator;
    let (w, h) = (g.width, g.height);
    let n = w * h;
    let gap = 1;
    if snaps.is_empty() {
        return Ok(false);
    }
    let total_w = snaps.len() * (w + gap) - gap;
    let mut grid = vec![1.0; 3 * total_w * h];
    for (k, s) in snaps.iter().enumerate() {
        let color = match &s.render {
            Some(r) => &r.color[..],
            None if s.latent.len() >= 3 * n && s.latent.len() <= 4 * n => &s.latent[..3 * n],
            None => return Ok(false),
        };
        for row in 0..h {
            for col in 0..w {
                let dst = 3 * (row * total_w + k * (w + gap) + col);
                let src = 3 * (row * w + col);
                grid[dst..dst + 3].copy_from_slice(&color[src..src + 3]);
            }
        }
    }
    write_png(path, &grid, total_w, h)?;
    Ok(true)
}

/// `key=value` run summary.
pub fn summary_text(cfg: &RunConfig, res: &RunResult, tail: usize) -> String {
    let mut s = String::new();
    let last = res.records.last();
    let _ = writeln!(s, "estimator={}", cfg.estimator.name());
    let _ = writeln!(s, "gamma={}", cfg.estimator_cfg.gamma);
    let _ = writeln!(s, "mode={}", cfg.estimator_cfg.mode.name());
    let _ = writeln!(s, "seed={}", cfg.seed);
    let _ = writeln!(s, "init_seed={}", cfg.init_seed);
    let _ = writeln!(s, "iterations={}", cfg.optim.iterations);
    let _ = writeln!(s, "initial_distance={}", res.initial_distance);
    let _ = writeln!(s, "final_distance={}", res.final_distance());
    let _ = writeln!(s, "final_loss_proxy={}", last.map_or(f64::NAN, |r| r.loss_proxy));
    let _ = writeln!(s, "tail_grad_norm={}", res.tail_grad_norm(tail));
    if let Params::Splats(scene) = &res.params {
        let _ = writeln!(s, "splat_count={}", scene.len());
        let _ = writeln!(s, "clones={}", res.totals.clones);
        let _ = writeln!(s, "splits={}", res.totals.splits);
        let _ = writeln!(s, "prunes={}", res.totals.prunes);
        let _ = writeln!(s, "final_depth_tv={}", last.map_or(f64::NAN, |r| r.depth_tv));
    }
    s
}

/// Everything `run-distill` emits: metrics.csv, checkpoint images, depth
/// maps, final parameters and summary.txt.
pub fn write_run(out: &Path, cfg: &RunConfig, res: &RunResult) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_metrics(&out.join("metrics.csv"), &res.records)?;
    for snap in &res.snapshots {
        write_snapshot_images(out, cfg, snap, &format!("iter_{:05}", snap.iter))?;
    }
    write_snapshot_images(out, cfg, res.final_snapshot(), "final")?;
    match (&res.params, cfg.generator.kind) {
        (Params::Splats(scene), _) => scene.save(&out.join("scene.txt"))?,
        (Params::Identity(theta), GeneratorKind::Identity) => {
            let text: String = theta.iter().map(|v| format!("{v}\n")).collect();
            write_text(&out.join("theta.txt"), &text)?;
        }
        _ => {}
    }
    write_text(&out.join("summary.txt"), &summary_text(cfg, res, cfg.suite.tail))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_is_16_bit_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pgm");
        let (lo, hi) = write_pgm16(&p, &[0.5, 1.0, 1.5, 2.5], 2, 2).unwrap();
        assert_eq!((lo, hi), (0.5, 2.5));
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5"));
        let header_end = bytes.len() - 8;
        assert_eq!(&bytes[..header_end], b"P5\n2 2\n65535\n");
        let px: Vec<u16> = bytes[header_end..]
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, [0, 16384, 32768, 65535]);
        let side = std::fs::read_to_string(dir.path().join("d.range.txt")).unwrap();
        assert_eq!(side, "min=0.5\nmax=2.5\n");
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.png");
        write_png(&p, &[0.0, 0.5, 1.0, 2.0, -1.0, 0.25], 2, 1).unwrap();
        let img = image::open(&p).unwrap().into_rgb8();
        assert_eq!(img.get_pixel(0, 0).0, [0, 128, 255]);
        assert_eq!(img.get_pixel(1, 0).0, [255, 0, 64]);
        assert!(write_png(&p, &[0.0; 5], 2, 1).is_err());
    }

    #[test]
    fn csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_csv(&p, &["a", "b"], vec![vec!["1", "2"]]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a,b\n1,2\n");
    }
}
