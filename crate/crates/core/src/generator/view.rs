use rand::Rng;

use crate::error::{Error, Result};

/// Row-major 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Mat2([[c, -s], [s, c]])
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Mat2([[a, 0.0], [0.0, b]])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Mat2([
            [m[1][1] / d, -m[0][1] / d],
            [-m[1][0] / d, m[0][0] / d],
        ]))
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn mul(&self, o: &Mat2) -> Self {
        let (a, b) = (&self.0, &o.0);
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(out)
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1],
            m[1][0] * v[0] + m[1][1] * v[1],
        ]
    }

    /// Frobenius inner product `sum_ij a_ij b_ij`.
    pub fn dot(&self, o: &Mat2) -> f64 {
        let (a, b) = (&self.0, &o.0);
        a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
    }

    pub fn add(&self, o: &Mat2) -> Self {
        let (a, b) = (&self.0, &o.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }

    pub fn scale(&self, k: f64) -> Self {
        let a = &self.0;
        Mat2([[k * a[0][0], k * a[0][1]], [k * a[1][0], k * a[1][1]]])
    }
}

/// A 2D affine view `p -> linear * p + offset` applied to splat positions
/// (and their covariances) before rasterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewParam {
    linear: Mat2,
    offset: [f64; 2],
}

impl ViewParam {
    pub fn new(linear: Mat2, offset: [f64; 2]) -> Result<Self> {
        let det = linear.det();
        if !(det.abs() > 1e-9) || !det.is_finite() || offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::View { det });
        }
        Ok(Self { linear, offset })
    }

    pub fn identity() -> Self {
        Self {
            linear: Mat2::IDENTITY,
            offset: [0.0, 0.0],
        }
    }

    /// Random small similarity transform about the image center. `amount`
    /// is the maximum translation in pixels; rotation and zoom scale with it.
    pub fn jitter<R: Rng>(rng: &mut R, width: usize, height: usize, amount: f64) -> Self {
        if amount <= 0.0 {
            return Self::identity();
        }
        let angle = rng.random_range(-1.0..1.0) * 0.02 * amount;
        let zoom = 1.0 + rng.random_range(-1.0..1.0) * 0.01 * amount;
        let shift = [
            rng.random_range(-amount..amount),
            rng.random_range(-amount..amount),
        ];
        let linear = Mat2::rotation(angle).scale(zoom);
        let c = [width as f64 / 2.0, height as f64 / 2.0];
        let lc = linear.apply(c);
        let offset = [c[0] - lc[0] + shift[0], c[1] - lc[1] + shift[1]];
        Self::new(linear, offset).expect("jitter keeps the view non-degenerate")
    }

    pub fn linear(&self) -> &Mat2 {
        &self.linear
    }

    pub fn offset(&self) -> [f64; 2] {
        self.offset
    }

    pub fn is_identity(&self) -> bool {
        self.linear == Mat2::IDENTITY && self.offset == [0.0, 0.0]
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let q = self.linear.apply(p);
        [q[0] + self.offset[0], q[1] + self.offset[1]]
    }

    pub(crate) fn validate(&self) -> Result<()> {
        Self::new(self.linear, self.offset).map(|_| ())
    }
}
