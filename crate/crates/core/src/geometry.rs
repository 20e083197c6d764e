//! Rasters, keypoints and the affine machinery that keeps them aligned.
//!
//! Pixel `(x, y)` has its center at integer coordinates, `x` grows to the
//! right and `y` grows downwards. A raster of side `n` has its geometric
//! center at `((n - 1) / 2, (n - 1) / 2)`.

use crate::error::{invalid_arg, Error, Result};

/// Row-major image with `channels` interleaved per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return invalid_arg(format!(
                "raster data has {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid_arg("raster contains non-finite values");
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Location `(y, x)` of the largest value of channel `c`; ties go to the
    /// lowest row-major index.
    pub fn argmax(&self, c: usize) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(y, x, c);
                if v > best_v {
                    best_v = v;
                    best = (y, x);
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, visible: true }
    }

    pub fn hidden(x: f64, y: f64) -> Self {
        Self { x, y, visible: false }
    }
}

/// 2x3 matrix taking input pixel coordinates to output pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    m: [[f64; 3]; 2],
}

impl AffineMap {
    pub fn new(m: [[f64; 3]; 2]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return invalid_arg("affine map has non-finite entries");
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 2] {
        self.m
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::InvalidArgument("affine map is singular".into()));
        }
        let m = &self.m;
        let a = m[1][1] / det;
        let b = -m[0][1] / det;
        let c = -m[1][0] / det;
        let d = m[0][0] / det;
        Ok(Self {
            m: [[a, b, -(a * m[0][2] + b * m[1][2])], [c, d, -(c * m[0][2] + d * m[1][2])]],
        })
    }

    /// The map that applies `self` first and `next` second.
    pub fn then(&self, next: &AffineMap) -> AffineMap {
        let a = &next.m;
        let b = &self.m;
        let mut m = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                m[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
            m[r][2] += a[r][2];
        }
        AffineMap { m }
    }
}

/// Center of an `n`-pixel side under the integer pixel-center convention.
pub fn side_center(n: usize) -> f64 {
    (n as f64 - 1.0) / 2.0
}

/// Scale by `scale` and rotate counter-clockwise (as seen on screen) by
/// `rot_deg` about `center`, placing `center` at the middle of an
/// `out_size` square.
pub fn make_affine(scale: f64, rot_deg: f64, center: (f64, f64), out_size: usize) -> Result<AffineMap> {
    if !scale.is_finite() || scale <= 0.0 {
        return invalid_arg(format!("scale must be positive and finite, got {scale}"));
    }
    if !rot_deg.is_finite() || !center.0.is_finite() || !center.1.is_finite() {
        return invalid_arg("rotation and center must be finite");
    }
    if out_size < 8 {
        return invalid_arg(format!("output size must be at least 8, got {out_size}"));
    }
    let (sin, cos) = rot_deg.to_radians().sin_cos();
    let a = scale * cos;
    let b = scale * sin;
    let o = side_center(out_size);
    // y points down, so a visually counter-clockwise turn is (x, y) -> (x cos + y sin, -x sin + y cos).
    AffineMap::new([
        [a, b, o - (a * center.0 + b * center.1)],
        [-b, a, o - (-b * center.0 + a * center.1)],
    ])
}

/// Bilinear sample of channel `c` at a real-valued location; neighbours
/// outside the raster contribute zero.
#[inline]
pub fn bilinear_sample(img: &Raster, x: f64, y: f64, c: usize) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (x0 as i64, y0 as i64);
    let pix = |yy: i64, xx: i64| -> f64 {
        if yy < 0 || xx < 0 || yy >= img.height as i64 || xx >= img.width as i64 {
            0.0
        } else {
            img.get(yy as usize, xx as usize, c)
        }
    };
    (1.0 - fx) * (1.0 - fy) * pix(yi, xi)
        + fx * (1.0 - fy) * pix(yi, xi + 1)
        + (1.0 - fx) * fy * pix(yi + 1, xi)
        + fx * fy * pix(yi + 1, xi + 1)
}

/// Resample `img` through `map` into an `out_size` square.
pub fn warp_image(img: &Raster, map: &AffineMap, out_size: usize) -> Result<Raster> {
    let inv = map.inverse()?;
    let mut out = Raster::zeros(out_size, out_size, img.channels);
    for v in 0..out_size {
        for u in 0..out_size {
            let (x, y) = inv.apply(u as f64, v as f64);
            for c in 0..img.channels {
                out.set(v, u, c, bilinear_sample(img, x, y, c));
            }
        }
    }
    Ok(out)
}

pub fn transform_keypoints(kps: &[Keypoint], map: &AffineMap, out_size: usize) -> Vec<Keypoint> {
    let side = out_size as f64;
    kps.iter()
        .map(|kp| {
            let (x, y) = map.apply(kp.x, kp.y);
            let inside = (0.0..side).contains(&x) && (0.0..side).contains(&y);
            Keypoint {
                x,
                y,
                visible: kp.visible && inside,
            }
        })
        .collect()
}

/// Mirror left-right and exchange the labels listed in `swap_pairs`.
pub fn flip_horizontal(img: &Raster, kps: &[Keypoint], swap_pairs: &[(usize, usize)]) -> Result<(Raster, Vec<Keypoint>)> {
    let mut seen = vec![false; kps.len()];
    for &(a, b) in swap_pairs {
        if a >= kps.len() || b >= kps.len() {
            return invalid_arg(format!("swap pair ({a}, {b}) out of range for {} joints", kps.len()));
        }
        if a == b || seen[a] || seen[b] {
            return invalid_arg(format!("swap pair ({a}, {b}) overlaps another pair"));
        }
        seen[a] = true;
        seen[b] = true;
    }

    let mut out = Raster::zeros(img.height, img.width, img.channels);
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                out.set(y, img.width - 1 - x, c, img.get(y, x, c));
            }
        }
    }

    let far = img.width as f64 - 1.0;
    let mut flipped: Vec<Keypoint> = kps.iter().map(|kp| Keypoint { x: far - kp.x, ..*kp }).collect();
    for &(a, b) in swap_pairs {
        flipped.swap(a, b);
    }
    Ok((out, flipped))
}

/// One heatmap channel per joint, each `height x width`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmaps {
    joints: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Heatmaps {
    pub fn new(joints: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != joints * height * width {
            return invalid_arg("heatmap data length does not match its shape");
        }
        Ok(Self {
            joints,
            height,
            width,
            data,
        })
    }

    pub fn zeros(joints: usize, height: usize, width: usize) -> Self {
        Self {
            joints,
            height,
            width,
            data: vec![0.0; joints * height * width],
        }
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, j: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[j * n..(j + 1) * n]
    }

    pub fn same_shape(&self, other: &Heatmaps) -> bool {
        self.joints == other.joints && self.height == other.height && self.width == other.width
    }
}

/// Unnormalized Gaussian bumps truncated at three sigma. Keypoints are given
/// in heatmap pixel coordinates.
pub fn render_heatmaps(kps: &[Keypoint], res: usize, sigma: f64) -> Result<Heatmaps> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return invalid_arg(format!("sigma must be positive, got {sigma}"));
    }
    let mut hm = Heatmaps::zeros(kps.len(), res, res);
    let cutoff = 3.0 * sigma;
    let denom = 2.0 * sigma * sigma;
    let n = res * res;
    for (j, kp) in kps.iter().enumerate() {
        if !kp.visible {
            continue;
        }
        let chan = &mut hm.data[j * n..(j + 1) * n];
        let y_lo = (kp.y - cutoff).floor().max(0.0) as usize;
        let y_hi = ((kp.y + cutoff).ceil().max(-1.0) + 1.0).min(res as f64) as usize;
        let x_lo = (kp.x - cutoff).floor().max(0.0) as usize;
        let x_hi = ((kp.x + cutoff).ceil().max(-1.0) + 1.0).min(res as f64) as usize;
        for v in y_lo..y_hi {
            for u in x_lo..x_hi {
                let d2 = (u as f64 - kp.x).powi(2) + (v as f64 - kp.y).powi(2);
                if d2 <= cutoff * cutoff {
                    chan[v * res + u] = (-d2 / denom).exp();
                }
            }
        }
    }
    Ok(hm)
}

/// A raster together with its keypoint annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image: Raster,
    pub keypoints: Vec<Keypoint>,
}

/// One concrete scale/rotation/flip augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    pub rot_deg: f64,
    pub flip: bool,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        scale: 1.0,
        rot_deg: 0.0,
        flip: false,
    };
}

impl AnnotatedImage {
    /// The map that realises `params` on this (square) image.
    pub fn affine_for(&self, scale: f64, rot_deg: f64) -> Result<AffineMap> {
        let side = self.image.width();
        make_affine(scale, rot_deg, (side_center(side), side_center(side)), side)
    }

    /// Warp about the image center, then optionally mirror. Raster and
    /// keypoints go through the same map.
    pub fn augmented(&self, params: AugmentParams, swap_pairs: &[(usize, usize)]) -> Result<AnnotatedImage> {
        let side = self.image.width();
        let map = self.affine_for(params.scale, params.rot_deg)?;
        let image = warp_image(&self.image, &map, side)?;
        let keypoints = transform_keypoints(&self.keypoints, &map, side);
        if params.flip {
            let (image, keypoints) = flip_horizontal(&image, &keypoints, swap_pairs)?;
            Ok(AnnotatedImage { image, keypoints })
        } else {
            Ok(AnnotatedImage { image, keypoints })
        }
    }
}
