//! Front-to-back alpha compositing of anisotropic 2D Gaussians and its
//! analytic reverse pass.
//!
//! For pixel `p` and splats sorted by `z`, `alpha_k(p) = opacity_k * K(q_k(p))`
//! where `q_k` is the squared Mahalanobis distance under the view-space
//! covariance. Outputs are `sum_k f_k alpha_k T_k` with transmittance
//! `T_k = prod_{j<k} (1 - alpha_j)` and `f` in {color, z, 1}.
//!
//! The footprint `K` is a Gaussian with support cut at 3 sigma (`q < 9`).
//! To keep the cut continuous with a continuous first derivative, its
//! first-order Taylor expansion at the cut is subtracted and the result is
//! renormalized to peak at 1.

use super::splat::SplatScene;
use super::view::{Mat2, ViewParam};
use crate::error::{Error, Result};

/// Squared Mahalanobis radius of the footprint support (3 sigma).
pub const CUTOFF_Q: f64 = 9.0;

fn tail() -> f64 {
    (-0.5 * CUTOFF_Q).exp()
}

fn kernel_norm() -> f64 {
    1.0 - tail() * (1.0 + 0.5 * CUTOFF_Q)
}

/// Footprint weight at squared radius `q`; 1 at the center, 0 for `q >= 9`.
pub fn footprint(q: f64) -> f64 {
    if q >= CUTOFF_Q {
        return 0.0;
    }
    let e = tail();
    ((-0.5 * q).exp() - e * (1.0 + 0.5 * (CUTOFF_Q - q))) / kernel_norm()
}

/// `d footprint / d q`.
pub fn footprint_deriv(q: f64) -> f64 {
    if q >= CUTOFF_Q {
        return 0.0;
    }
    0.5 * (tail() - (-0.5 * q).exp()) / kernel_norm()
}

/// Images are row-major; color is channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl RenderOutput {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![0.0; 3 * n],
            depth: vec![0.0; n],
            alpha: vec![0.0; n],
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    fn check_shape(&self, width: usize, height: usize) -> Result<()> {
        let n = width * height;
        for (len, want) in [
            (self.color.len(), 3 * n),
            (self.depth.len(), n),
            (self.alpha.len(), n),
        ] {
            if len != want {
                return Err(Error::Shape {
                    expected: want,
                    got: len,
                });
            }
        }
        if self.width != width || self.height != height {
            return Err(Error::Shape {
                expected: n,
                got: self.width * self.height,
            });
        }
        Ok(())
    }
}

/// Gradient of a scalar loss with respect to one splat.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplatGrad {
    pub pos: [f64; 2],
    pub scale: [f64; 2],
    pub rot: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    pub z: f64,
    /// Norm of the gradient with respect to the view-space center; this is
    /// what densification thresholds.
    pub view_pos_norm: f64,
}

struct Prepared {
    index: usize,
    mean: [f64; 2],
    conic: Mat2,
    cols: (usize, usize),
    rows: (usize, usize),
}

fn covariance(scale: [f64; 2], rot: f64) -> (Mat2, Mat2) {
    let r = Mat2::rotation(rot);
    let d = Mat2::diag(scale[0] * scale[0], scale[1] * scale[1]);
    (r.mul(&d).mul(&r.transpose()), r)
}

fn pixel_range(center: f64, extent: f64, n: usize) -> Option<(usize, usize)> {
    let lo = (center - extent - 0.5).ceil().max(0.0);
    let hi = (center + extent - 0.5).floor().min(n as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}

fn prepare(scene: &SplatScene, view: &ViewParam, width: usize, height: usize) -> Result<Vec<Prepared>> {
    view.validate()?;
    scene.validate()?;
    if scene.is_empty() {
        return Err(Error::Parameter("cannot render an empty scene".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::Parameter(format!("image size must be positive, got {width}x{height}")));
    }
    let a = view.linear();
    let mut order: Vec<usize> = (0..scene.len()).collect();
    order.sort_by(|&i, &j| {
        scene.splats[i]
            .z
            .total_cmp(&scene.splats[j].z)
            .then(i.cmp(&j))
    });
    let mut out = Vec::with_capacity(order.len());
    for index in order {
        let s = &scene.splats[index];
        let (cov, _) = covariance(s.scale, s.rot);
        let mut cov_view = a.mul(&cov).mul(&a.transpose());
        let off = 0.5 * (cov_view.0[0][1] + cov_view.0[1][0]);
        cov_view.0[0][1] = off;
        cov_view.0[1][0] = off;
        let Some(conic) = cov_view.inverse() else {
            continue;
        };
        let mean = view.apply(s.pos);
        let ext_x = (CUTOFF_Q * cov_view.0[0][0]).sqrt();
        let ext_y = (CUTOFF_Q * cov_view.0[1][1]).sqrt();
        let (Some(cols), Some(rows)) = (
            pixel_range(mean[0], ext_x, width),
            pixel_range(mean[1], ext_y, height),
        ) else {
            continue;
        };
        out.push(Prepared {
            index,
            mean,
            conic,
            cols,
            rows,
        });
    }
    Ok(out)
}

struct Contribution {
    /// Position in the prepared list.
    slot: usize,
    alpha: f64,
    weight: f64,
    q: f64,
    d: [f64; 2],
    transmittance: f64,
}

fn gather(prepared: &[Prepared], scene: &SplatScene, col: usize, row: usize, out: &mut Vec<Contribution>) {
    out.clear();
    let p = [col as f64 + 0.5, row as f64 + 0.5];
    let mut trans = 1.0;
    for (slot, sp) in prepared.iter().enumerate() {
        if col < sp.cols.0 || col > sp.cols.1 || row < sp.rows.0 || row > sp.rows.1 {
            continue;
        }
        let d = [p[0] - sp.mean[0], p[1] - sp.mean[1]];
        let c = &sp.conic.0;
        let q = c[0][0] * d[0] * d[0] + (c[0][1] + c[1][0]) * d[0] * d[1] + c[1][1] * d[1] * d[1];
        if q >= CUTOFF_Q {
            continue;
        }
        let weight = footprint(q);
        let alpha = scene.splats[sp.index].opacity * weight;
        out.push(Contribution {
            slot,
            alpha,
            weight,
            q,
            d,
            transmittance: trans,
        });
        trans *= 1.0 - alpha;
    }
}

pub fn render(scene: &SplatScene, view: &ViewParam, width: usize, height: usize) -> Result<RenderOutput> {
    let prepared = prepare(scene, view, width, height)?;
    let mut out = RenderOutput::zeros(width, height);
    let mut contribs = Vec::new();
    for row in 0..height {
        for col in 0..width {
            gather(&prepared, scene, col, row, &mut contribs);
            let px = row * width + col;
            for c in &contribs {
                let s = &scene.splats[prepared[c.slot].index];
                let w = c.alpha * c.transmittance;
                for ch in 0..3 {
                    out.color[3 * px + ch] += w * s.color[ch];
                }
                out.depth[px] += w * s.z;
                out.alpha[px] += w;
            }
        }
    }
    Ok(out)
}

/// Per-pixel alpha-weighted mean of the contributing splats' largest scale;
/// `fallback` where nothing contributes.
pub fn pixel_scale_map(
    scene: &SplatScene,
    view: &ViewParam,
    width: usize,
    height: usize,
    fallback: f64,
) -> Result<Vec<f64>> {
    let prepared = prepare(scene, view, width, height)?;
    let mut out = vec![fallback; width * height];
    let mut contribs = Vec::new();
    for row in 0..height {
        for col in 0..width {
            gather(&prepared, scene, col, row, &mut contribs);
            let (mut num, mut den) = (0.0, 0.0);
            for c in &contribs {
                let w = c.alpha * c.transmittance;
                num += w * scene.splats[prepared[c.slot].index].max_scale();
                den += w;
            }
            if den > 1e-12 {
                out[row * width + col] = num / den;
            }
        }
    }
    Ok(out)
}

/// Gradients of `L = <grad_out, render(scene, view)>` with respect to every
/// splat parameter, in scene order.
pub fn backward(
    scene: &SplatScene,
    view: &ViewParam,
    grad_out: &RenderOutput,
) -> Result<Vec<SplatGrad>> {
    let (width, height) = (grad_out.width, grad_out.height);
    let prepared = prepare(scene, view, width, height)?;
    grad_out.check_shape(width, height)?;
    if grad_out
        .color
        .iter()
        .chain(&grad_out.depth)
        .chain(&grad_out.alpha)
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("render gradient".into()));
    }

    let n = prepared.len();
    let mut d_mean = vec![[0.0f64; 2]; n];
    let mut d_conic = vec![Mat2([[0.0; 2]; 2]); n];
    let mut grads = vec![SplatGrad::default(); scene.len()];
    let mut contribs = Vec::new();

    for row in 0..height {
        for col in 0..width {
            let px = row * width + col;
            let gc = [
                grad_out.color[3 * px],
                grad_out.color[3 * px + 1],
                grad_out.color[3 * px + 2],
            ];
            let (gd, ga) = (grad_out.depth[px], grad_out.alpha[px]);
            if gc == [0.0; 3] && gd == 0.0 && ga == 0.0 {
                continue;
            }
            gather(&prepared, scene, col, row, &mut contribs);
            // suffix of the composite behind the current splat
            let mut behind = 0.0;
            for c in contribs.iter().rev() {
                let sp = &prepared[c.slot];
                let s = &scene.splats[sp.index];
                let g = &mut grads[sp.index];
                let f = gc[0] * s.color[0] + gc[1] * s.color[1] + gc[2] * s.color[2] + gd * s.z + ga;
                let w = c.alpha * c.transmittance;
                for ch in 0..3 {
                    g.color[ch] += gc[ch] * w;
                }
                g.z += gd * w;
                let d_alpha = c.transmittance * (f - behind);
                behind = f * c.alpha + (1.0 - c.alpha) * behind;

                g.opacity += d_alpha * c.weight;
                let d_q = d_alpha * s.opacity * footprint_deriv(c.q);
                if d_q == 0.0 {
                    continue;
                }
                let cd = sp.conic.apply(c.d);
                d_mean[c.slot][0] -= 2.0 * d_q * cd[0];
                d_mean[c.slot][1] -= 2.0 * d_q * cd[1];
                let outer = Mat2([
                    [c.d[0] * c.d[0], c.d[0] * c.d[1]],
                    [c.d[1] * c.d[0], c.d[1] * c.d[1]],
                ]);
                d_conic[c.slot] = d_conic[c.slot].add(&outer.scale(d_q));
            }
        }
    }

    let a = view.linear();
    let at = a.transpose();
    for (slot, sp) in prepared.iter().enumerate() {
        let s = &scene.splats[sp.index];
        let g = &mut grads[sp.index];
        let dm = d_mean[slot];
        g.view_pos_norm = dm[0].hypot(dm[1]);
        g.pos = at.apply(dm);

        // conic = cov_view^-1  =>  dL/dcov_view = -conic^T G conic^T
        let ct = sp.conic.transpose();
        let d_cov_view = ct.mul(&d_conic[slot]).mul(&ct).scale(-1.0);
        let d_cov = at.mul(&d_cov_view).mul(a);

        let (_, r) = covariance(s.scale, s.rot);
        let local = r.transpose().mul(&d_cov).mul(&r);
        g.scale = [
            2.0 * s.scale[0] * local.0[0][0],
            2.0 * s.scale[1] * local.0[1][1],
        ];
        let (sn, cs) = s.rot.sin_cos();
        let dr = Mat2([[-sn, -cs], [cs, -sn]]);
        let d = Mat2::diag(s.scale[0] * s.scale[0], s.scale[1] * s.scale[1]);
        let d_sigma_d_rot = dr.mul(&d).mul(&r.transpose()).add(&r.mul(&d).mul(&dr.transpose()));
        g.rot = d_cov.dot(&d_sigma_d_rot);
    }
    Ok(grads)
}
