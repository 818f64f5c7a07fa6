//! View-dependent noise functions `eps(c)` for 3D distillation.
//!
//! The world-map function keeps two fixed standard-normal tensors: a
//! `D x H x W` map covering the sphere of view directions and a
//! `D x h x w` background. A view reads the `h x w` window of the map centered
//! at `(row, col) = (H theta / pi, W phi / 2 pi)` for foreground pixels and the
//! background tensor elsewhere, then blends with fresh noise as
//! `sqrt(beta) * deterministic + sqrt(1 - beta) * fresh`.
//!
//! Window centers are rounded to whole map cells and both map axes wrap.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

pub use crate::camera::{Camera, CameraSampler};
use crate::error::{Error, Result};
use crate::rng::{Stream, StreamId};

/// Binary foreground mask over an `h x w` image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<bool>,
}

impl QueryMask {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// `M = [opacity > threshold]`; `opacity` is `h x w` row-major.
    pub fn from_opacity(opacity: &crate::scene::Opacity, threshold: f64) -> Self {
        Self {
            height: opacity.height,
            width: opacity.width,
            values: opacity.values.iter().map(|&a| a > threshold).collect(),
        }
    }

    /// Centered disc of the given radius in pixels.
    pub fn disc(height: usize, width: usize, radius: f64) -> Self {
        let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
        let values = (0..height * width)
            .map(|i| {
                let (r, c) = ((i / width) as f64 + 0.5, (i % width) as f64 + 0.5);
                (r - cy).powi(2) + (c - cx).powi(2) <= radius * radius
            })
            .collect();
        Self {
            height,
            width,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldMapNoise {
    channels: usize,
    patch_h: usize,
    patch_w: usize,
    map_h: usize,
    map_w: usize,
    theta_extent: f64,
    blend: f64,
    seed: u64,
    map: Vec<f64>,
    background: Vec<f64>,
}

impl WorldMapNoise {
    /// Draws the map and background from the seed's world-map stream.
    ///
    /// `theta_extent` is the angle (radians) spanned by one window, which fixes
    /// the map size at `H = round(h pi / extent)`, `W = round(w 2 pi / extent)`.
    pub fn new(
        channels: usize,
        patch_h: usize,
        patch_w: usize,
        theta_extent: f64,
        blend: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(theta_extent > 0.0 && theta_extent.is_finite()) {
            return Err(Error::Config(format!(
                "world-map angular extent must be > 0, got {theta_extent}"
            )));
        }
        if !(0.0..=1.0).contains(&blend) {
            return Err(Error::Config(format!("blend factor {blend} outside [0, 1]")));
        }
        if channels == 0 || patch_h == 0 || patch_w == 0 {
            return Err(Error::Config("world-map patch dimensions must be positive".into()));
        }
        let pi = std::f64::consts::PI;
        let map_h = ((patch_h as f64 * pi / theta_extent).round() as usize).max(1);
        let map_w = ((patch_w as f64 * 2.0 * pi / theta_extent).round() as usize).max(1);
        let mut rng = Stream::new(seed, StreamId::WorldMap);
        let map = rng.normal_vec(channels * map_h * map_w);
        let background = rng.normal_vec(channels * patch_h * patch_w);
        Ok(Self {
            channels,
            patch_h,
            patch_w,
            map_h,
            map_w,
            theta_extent,
            blend,
            seed,
            map,
            background,
        })
    }

    /// Same geometry, independent tensors drawn from `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self::new(
            self.channels,
            self.patch_h,
            self.patch_w,
            self.theta_extent,
            self.blend,
            seed,
        )
        .expect("geometry already validated")
    }

    pub fn with_blend(&self, blend: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&blend) {
            return Err(Error::Config(format!("blend factor {blend} outside [0, 1]")));
        }
        Ok(Self {
            blend,
            ..self.clone()
        })
    }

    pub fn map_dims(&self) -> (usize, usize, usize) {
        (self.channels, self.map_h, self.map_w)
    }

    pub fn patch_dims(&self) -> (usize, usize, usize) {
        (self.channels, self.patch_h, self.patch_w)
    }

    pub fn theta_extent(&self) -> f64 {
        self.theta_extent
    }

    pub fn blend(&self) -> f64 {
        self.blend
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn map(&self) -> &[f64] {
        &self.map
    }

    pub fn background(&self) -> &[f64] {
        &self.background
    }

    /// Continuous window center `(row, col)` on the map.
    pub fn window_center(&self, camera: &Camera) -> (f64, f64) {
        let pi = std::f64::consts::PI;
        (
            self.map_h as f64 * camera.theta / pi,
            self.map_w as f64 * camera.phi / (2.0 * pi),
        )
    }

    /// Top-left map cell of the window (before wrapping).
    pub fn window_origin(&self, camera: &Camera) -> (i64, i64) {
        let (r, c) = self.window_center(camera);
        (
            r.round() as i64 - (self.patch_h / 2) as i64,
            c.round() as i64 - (self.patch_w / 2) as i64,
        )
    }

    /// Map cell `(row, col)` read by window pixel `(i, j)`.
    pub fn window_cell(&self, camera: &Camera, i: usize, j: usize) -> (usize, usize) {
        let (r0, c0) = self.window_origin(camera);
        (
            (r0 + i as i64).rem_euclid(self.map_h as i64) as usize,
            (c0 + j as i64).rem_euclid(self.map_w as i64) as usize,
        )
    }

    /// The `D x h x w` window of the map for this camera.
    pub fn window(&self, camera: &Camera) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.channels * self.patch_h * self.patch_w);
        for ch in 0..self.channels {
            for i in 0..self.patch_h {
                for j in 0..self.patch_w {
                    let (r, c) = self.window_cell(camera, i, j);
                    out.push(self.map[(ch * self.map_h + r) * self.map_w + c]);
                }
            }
        }
        out
    }

    fn check_mask(&self, mask: &QueryMask) -> Result<()> {
        if mask.height != self.patch_h || mask.width != self.patch_w {
            return Err(Error::Config(format!(
                "mask is {}x{}, world-map patch is {}x{}",
                mask.height, mask.width, self.patch_h, self.patch_w
            )));
        }
        Ok(())
    }

    /// `sqrt(beta) ((1 - M) eps_b + M W(eps_p)) + sqrt(1 - beta) eps`.
    ///
    /// Fresh noise is only drawn from `rng` when `beta < 1`.
    pub fn query(&self, camera: &Camera, mask: &QueryMask, rng: &mut Stream) -> Result<Vec<f64>> {
        self.check_mask(mask)?;
        let plane = self.patch_h * self.patch_w;
        let det_scale = self.blend.sqrt();
        let fresh_scale = (1.0 - self.blend).sqrt();
        let window = if self.blend > 0.0 {
            self.window(camera)
        } else {
            Vec::new()
        };
        let out = (0..self.channels * plane)
            .map(|k| {
                let mut v = 0.0;
                if self.blend > 0.0 {
                    let det = if mask.values[k % plane] {
                        window[k]
                    } else {
                        self.background[k]
                    };
                    v += det_scale * det;
                }
                if self.blend < 1.0 {
                    v += fresh_scale * rng.normal();
                }
                v
            })
            .collect();
        Ok(out)
    }
}

/// The vanilla `eps(c) = eps` baseline: one fixed tensor for every view.
pub fn constant_noise_query(
    fixed: &[f64],
    _camera: &Camera,
    _mask: &QueryMask,
    _rng: &mut Stream,
) -> Vec<f64> {
    fixed.to_vec()
}

/// A deterministic view-noise function usable by the 3D distillation loop.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseField {
    WorldMap(WorldMapNoise),
    Constant {
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    },
}

impl NoiseField {
    pub fn constant(channels: usize, height: usize, width: usize, seed: u64) -> Self {
        let values =
            Stream::new(seed, StreamId::InitialNoise).normal_vec(channels * height * width);
        NoiseField::Constant {
            channels,
            height,
            width,
            values,
        }
    }

    /// Values produced per query.
    pub fn len(&self) -> usize {
        match self {
            NoiseField::WorldMap(w) => w.channels * w.patch_h * w.patch_w,
            NoiseField::Constant { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_patch(&self, height: usize, width: usize) -> Result<()> {
        let (h, w) = match self {
            NoiseField::WorldMap(m) => (m.patch_h, m.patch_w),
            NoiseField::Constant { height, width, .. } => (*height, *width),
        };
        if (h, w) != (height, width) {
            return Err(Error::Config(format!(
                "noise patch is {h}x{w}, image is {height}x{width}"
            )));
        }
        Ok(())
    }

    pub fn query(&self, camera: &Camera, mask: &QueryMask, rng: &mut Stream) -> Result<Vec<f64>> {
        match self {
            NoiseField::WorldMap(w) => w.query(camera, mask, rng),
            NoiseField::Constant { values, .. } => {
                Ok(constant_noise_query(values, camera, mask, rng))
            }
        }
    }
}

/// Radii of the fastest-converging points for nearby views that differ in
/// polar angle (`r_theta`) or azimuth (`r_phi`).
pub fn r_plus(camera: &Camera, theta_extent: f64) -> Result<(f64, f64)> {
    if theta_extent.is_nan() || theta_extent <= 0.0 {
        return Err(Error::Config(format!(
            "angular extent must be > 0, got {theta_extent}"
        )));
    }
    let span = 2.0 * (0.5 * camera.fov).tan();
    let r_theta = span / (span + theta_extent) * camera.radius;
    let r_phi = span / (span + theta_extent * camera.theta.sin()) * camera.radius;
    Ok((r_theta, r_phi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewAxis {
    Theta,
    Phi,
}

/// Geometric counterpart of [`r_plus`]: the radius along the viewing axis at
/// which a 3D point moves across the image by exactly as many pixels as the
/// world-map window moves when the camera turns by `delta` about `axis`.
pub fn alignment_radius(
    field: &WorldMapNoise,
    camera: &Camera,
    axis: ViewAxis,
    delta: f64,
) -> Result<f64> {
    camera.validate()?;
    let pi = std::f64::consts::PI;
    let moved = match axis {
        ViewAxis::Theta => Camera {
            theta: camera.theta + delta,
            ..*camera
        },
        ViewAxis::Phi => Camera {
            phi: (camera.phi + delta).rem_euclid(2.0 * pi),
            ..*camera
        },
    };
    let window_shift = match axis {
        ViewAxis::Theta => field.map_h as f64 * delta / pi,
        ViewAxis::Phi => field.map_w as f64 * delta / (2.0 * pi),
    };
    let (h, w) = (field.patch_h, field.patch_w);
    let dir = {
        let p = camera.position();
        [p[0] / camera.radius, p[1] / camera.radius, p[2] / camera.radius]
    };
    let image_shift = |r: f64| -> f64 {
        let p = [r * dir[0], r * dir[1], r * dir[2]];
        let (r0, c0) = camera.project(p, h, w).expect("point in front of camera");
        let (r1, c1) = moved.project(p, h, w).expect("point in front of camera");
        match axis {
            ViewAxis::Theta => (r1 - r0).abs(),
            ViewAxis::Phi => (c1 - c0).abs(),
        }
    };
    let (mut lo, mut hi) = (0.0, camera.radius * (1.0 - 1e-6));
    if image_shift(hi) < window_shift {
        return Err(Error::NumericDegenerate(
            "no radius matches the window displacement".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if image_shift(mid) < window_shift {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Whether the probe reuses one field for every view or draws an
/// independent field per view (the distribution of `eps(c)` given `c`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldDraw {
    Shared,
    PerView,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalStats {
    pub n_views: usize,
    pub blend: f64,
    pub field_draw: FieldDraw,
    pub per_pixel_mean: Vec<f64>,
    pub per_pixel_variance: Vec<f64>,
    pub max_abs_mean: f64,
    pub min_variance: f64,
    pub max_variance: f64,
    /// Pooled correlation of horizontally adjacent pixels within a query.
    pub adjacent_correlation: f64,
}

pub fn marginal_stats_probe(
    field: &WorldMapNoise,
    cameras: &CameraSampler,
    mask: &QueryMask,
    n_views: usize,
    draw: FieldDraw,
    seed: u64,
) -> Result<MarginalStats> {
    if n_views < 100 {
        return Err(Error::Config(format!(
            "marginal statistics need at least 100 views, got {n_views}"
        )));
    }
    field.check_mask(mask)?;
    let len = field.channels * field.patch_h * field.patch_w;
    let mut sum = vec![0.0; len];
    let mut sum_sq = vec![0.0; len];
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    let mut cam_rng = Stream::new(seed, StreamId::Cameras);
    let mut blend_rng = Stream::new(seed, StreamId::BlendNoise);
    let w = field.patch_w;
    for k in 0..n_views {
        let camera = cameras.sample(&mut cam_rng);
        let q = match draw {
            FieldDraw::Shared => field.query(&camera, mask, &mut blend_rng)?,
            FieldDraw::PerView => {
                let sub_seed = Stream::child(seed, StreamId::WorldMap, k as u64).next_u64();
                field.reseeded(sub_seed).query(&camera, mask, &mut blend_rng)?
            }
        };
        for (i, v) in q.iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
            if (i % w) + 1 < w {
                let u = q[i + 1];
                sxy += v * u;
                sxx += v * v;
                syy += u * u;
            }
        }
    }
    let n = n_views as f64;
    let per_pixel_mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let per_pixel_variance: Vec<f64> = sum_sq
        .iter()
        .zip(&per_pixel_mean)
        .map(|(ss, m)| (ss / n - m * m) * n / (n - 1.0))
        .collect();
    let fold = |it: &mut dyn Iterator<Item = f64>, init: f64, f: fn(f64, f64) -> f64| {
        it.fold(init, f)
    };
    Ok(MarginalStats {
        n_views,
        blend: field.blend,
        field_draw: draw,
        max_abs_mean: fold(&mut per_pixel_mean.iter().map(|m| m.abs()), 0.0, f64::max),
        min_variance: fold(&mut per_pixel_variance.iter().copied(), f64::INFINITY, f64::min),
        max_variance: fold(&mut per_pixel_variance.iter().copied(), 0.0, f64::max),
        adjacent_correlation: sxy / (sxx * syy).sqrt(),
        per_pixel_mean,
        per_pixel_variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapReport {
    /// Fraction of window A's map cells also read by window B.
    pub overlap_fraction: f64,
    /// Uncentered correlation of the two queries laid out on the map over the
    /// union of both windows (entries outside a window count as zero).
    pub correlation: f64,
}

/// Compares the map windows two cameras read (full-foreground queries).
pub fn overlap_alignment_probe(
    field: &WorldMapNoise,
    a: &Camera,
    b: &Camera,
    seed: u64,
) -> Result<OverlapReport> {
    let mask = QueryMask::filled(field.patch_h, field.patch_w, true);
    let mut rng = Stream::new(seed, StreamId::Probe);
    let qa = field.query(a, &mask, &mut rng)?;
    let qb = field.query(b, &mask, &mut rng)?;
    let plane = field.patch_h * field.patch_w;
    let layout = |cam: &Camera, q: &[f64]| -> BTreeMap<(usize, usize, usize), f64> {
        let mut m = BTreeMap::new();
        for ch in 0..field.channels {
            for i in 0..field.patch_h {
                for j in 0..field.patch_w {
                    let (r, c) = field.window_cell(cam, i, j);
                    m.insert((ch, r, c), q[ch * plane + i * field.patch_w + j]);
                }
            }
        }
        m
    };
    let la = layout(a, &qa);
    let lb = layout(b, &qb);
    let cells_a: BTreeSet<_> = la.keys().map(|k| (k.1, k.2)).collect();
    let cells_b: BTreeSet<_> = lb.keys().map(|k| (k.1, k.2)).collect();
    let overlap_fraction =
        cells_a.intersection(&cells_b).count() as f64 / cells_a.len() as f64;
    let cross: f64 = la
        .iter()
        .filter_map(|(k, va)| lb.get(k).map(|vb| va * vb))
        .sum();
    let na: f64 = la.values().map(|v| v * v).sum();
    let nb: f64 = lb.values().map(|v| v * v).sum();
    Ok(OverlapReport {
        overlap_fraction,
        correlation: cross / (na * nb).sqrt() + 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn field(blend: f64) -> WorldMapNoise {
        WorldMapNoise::new(3, 8, 8, FRAC_PI_2, blend, 42).unwrap()
    }

    fn cam(theta: f64, phi: f64) -> Camera {
        Camera::new(40f64.to_radians(), 2.5, theta, phi).unwrap()
    }

    #[test]
    fn map_size_follows_extent() {
        assert_eq!(field(1.0).map_dims(), (3, 16, 32));
        let wide = WorldMapNoise::new(3, 8, 8, 2.0 * PI, 1.0, 0).unwrap();
        assert_eq!(wide.map_dims(), (3, 4, 8));
    }

    #[test]
    fn non_positive_extent_is_rejected() {
        assert!(matches!(
            WorldMapNoise::new(3, 8, 8, 0.0, 1.0, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn background_branch_when_mask_empty() {
        let f = field(1.0);
        let mut rng = Stream::new(0, StreamId::BlendNoise);
        let q = f
            .query(&cam(1.0, 2.0), &QueryMask::filled(8, 8, false), &mut rng)
            .unwrap();
        assert_eq!(q, f.background());
    }

    #[test]
    fn equator_window_indices() {
        let f = field(1.0);
        let mut rng = Stream::new(0, StreamId::BlendNoise);
        let q = f
            .query(&cam(FRAC_PI_2, PI), &QueryMask::filled(8, 8, true), &mut rng)
            .unwrap();
        let (_, h, w) = f.map_dims();
        for ch in 0..3 {
            for i in 0..8 {
                for j in 0..8 {
                    let want = f.map()[(ch * h + 4 + i) * w + 12 + j];
                    assert_eq!(q[ch * 64 + i * 8 + j], want);
                }
            }
        }
    }

    #[test]
    fn pure_random_limit_differs_between_queries() {
        let f = field(0.0);
        let mut rng = Stream::new(0, StreamId::BlendNoise);
        let m = QueryMask::filled(8, 8, true);
        let a = f.query(&cam(1.0, 1.0), &m, &mut rng).unwrap();
        let b = f.query(&cam(1.0, 1.0), &m, &mut rng).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn deterministic_when_fully_blended() {
        let m = QueryMask::disc(8, 8, 3.0);
        let a = field(1.0)
            .query(&cam(1.2, 0.4), &m, &mut Stream::new(1, StreamId::BlendNoise))
            .unwrap();
        let b = field(1.0)
            .query(&cam(1.2, 0.4), &m, &mut Stream::new(2, StreamId::BlendNoise))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_field_ignores_camera() {
        let f = NoiseField::constant(3, 8, 8, 5);
        let m = QueryMask::filled(8, 8, true);
        let mut rng = Stream::new(0, StreamId::BlendNoise);
        let a = f.query(&cam(1.0, 0.1), &m, &mut rng).unwrap();
        let b = f.query(&cam(2.0, 4.0), &m, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn r_plus_special_cases() {
        let theta_extent = 1.3;
        let fov = 2.0 * (theta_extent / 2.0f64).atan();
        let c = Camera::new(fov, 3.0, FRAC_PI_2, 0.0).unwrap();
        let (rt, rp) = r_plus(&c, theta_extent).unwrap();
        assert!((rt - 1.5).abs() < 1e-12);
        assert!((rp - rt).abs() < 1e-12);

        let c = Camera::new(40f64.to_radians(), 1.0, FRAC_PI_2, 0.0).unwrap();
        let (rt, _) = r_plus(&c, FRAC_PI_2).unwrap();
        // 2 tan 20 deg = 0.72794; 0.72794 / (0.72794 + 1.57080)
        assert!((rt - 0.316_68).abs() < 1e-4, "{rt}");
    }

    #[test]
    fn identical_and_disjoint_windows() {
        let f = field(1.0);
        let a = cam(FRAC_PI_2, 1.0);
        let same = overlap_alignment_probe(&f, &a, &a, 0).unwrap();
        assert_eq!(same.overlap_fraction, 1.0);
        assert!((same.correlation - 1.0).abs() < 1e-12);
        let far = cam(FRAC_PI_2, 1.0 + FRAC_PI_2 + 0.05);
        let apart = overlap_alignment_probe(&f, &a, &far, 0).unwrap();
        assert_eq!(apart.overlap_fraction, 0.0);
        assert_eq!(apart.correlation, 0.0);
    }

    #[test]
    fn half_window_shift() {
        let f = field(1.0);
        // phi = pi puts the center exactly on column 16; half a window is pi / 4.
        let a = cam(FRAC_PI_2, PI);
        let b = cam(FRAC_PI_2, PI + FRAC_PI_2 / 2.0);
        let r = overlap_alignment_probe(&f, &a, &b, 0).unwrap();
        assert_eq!(r.overlap_fraction, 0.5);
        assert!((r.correlation - 0.5).abs() < 0.2, "{}", r.correlation);
    }

    #[test]
    fn probe_requires_enough_views() {
        let f = field(1.0);
        let m = QueryMask::filled(8, 8, true);
        assert!(marginal_stats_probe(&f, &CameraSampler::default(), &m, 10, FieldDraw::Shared, 0)
            .is_err());
    }
}
