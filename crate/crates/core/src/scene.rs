//! Density + color voxel grid on `[-1, 1]^3` with an alpha-compositing
//! pinhole renderer and its exact vector-Jacobian product.
//!
//! Grid values live on the `n^3` lattice nodes spanning the cube (node 0 at
//! -1, node `n - 1` at +1) and are trilinearly interpolated after activation.
//! Densities are `softplus(pre)`, colors `sigmoid(pre)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{dot3, Camera, Vec3};
use crate::error::{Error, Result};
use crate::io;
use crate::noise_field::QueryMask;
use crate::rng::{Stream, StreamId};

pub const CHANNELS: usize = 3;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelScene {
    resolution: usize,
    /// `n^3` density pre-activations followed by `3 n^3` color
    /// pre-activations (channel-major), x fastest within a channel.
    params: Vec<f64>,
    background: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub resolution: usize,
    pub extent: f64,
    pub background: [f64; 3],
    pub dtype: String,
    pub shape: Vec<usize>,
}

impl VoxelScene {
    /// Uniform scene with the given pre-activations.
    pub fn filled(
        resolution: usize,
        density_pre: f64,
        color_pre: f64,
        background: [f64; 3],
    ) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::Config(format!(
                "voxel resolution must be >= 2, got {resolution}"
            )));
        }
        if background.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config("background color must lie in [0, 1]".into()));
        }
        let n3 = resolution.pow(3);
        let mut params = vec![density_pre; n3];
        params.resize(4 * n3, color_pre);
        Ok(Self {
            resolution,
            params,
            background,
        })
    }

    /// Uniform scene plus independent `N(0, jitter^2)` perturbations on every
    /// pre-activation, drawn from the seed's scene stream.
    pub fn jittered(
        resolution: usize,
        density_pre: f64,
        color_pre: f64,
        jitter: f64,
        background: [f64; 3],
        seed: u64,
    ) -> Result<Self> {
        let mut s = Self::filled(resolution, density_pre, color_pre, background)?;
        let mut rng = Stream::new(seed, StreamId::Scene);
        for p in &mut s.params {
            *p += jitter * rng.normal();
        }
        Ok(s)
    }

    pub fn from_params(resolution: usize, params: Vec<f64>, background: [f64; 3]) -> Result<Self> {
        let mut s = Self::filled(resolution, 0.0, 0.0, background)?;
        Error::check_dim(s.params.len(), params.len())?;
        s.params = params;
        Ok(s)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn background(&self) -> [f64; 3] {
        self.background
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn apply_increment(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.params.len());
        self.params.iter_mut().zip(delta).for_each(|(p, d)| *p += d);
    }

    fn n3(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn density(&self, node: usize) -> f64 {
        softplus(self.params[node])
    }

    pub fn color(&self, channel: usize, node: usize) -> f64 {
        sigmoid(self.params[(1 + channel) * self.n3() + node])
    }

    /// Writes pre-activations as an f32 blob at `path` and the descriptor
    /// next to it with a `.json` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let n = self.resolution;
        io::write_f32_blob(path, &self.params)?;
        let desc = SceneDescriptor {
            resolution: n,
            extent: 1.0,
            background: self.background,
            dtype: "f32le".into(),
            shape: vec![4, n, n, n],
        };
        io::write_json(&path.with_extension("json"), &desc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let desc: SceneDescriptor = io::read_json(&path.with_extension("json"))?;
        if desc.extent != 1.0 {
            return Err(Error::Config(format!(
                "only unit-extent scenes are supported, got {}",
                desc.extent
            )));
        }
        let params = io::read_f32_blob(path)?;
        Self::from_params(desc.resolution, params, desc.background)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub height: usize,
    pub width: usize,
    pub samples_per_ray: usize,
    /// Foreground threshold on opacity.
    pub alpha_threshold: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            height: 8,
            width: 8,
            samples_per_ray: 32,
            alpha_threshold: 0.5,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if self.samples_per_ray < 8 {
            return Err(Error::Config(format!(
                "need at least 8 samples per ray, got {}",
                self.samples_per_ray
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha_threshold) {
            return Err(Error::Config(format!(
                "alpha threshold {} outside [0, 1]",
                self.alpha_threshold
            )));
        }
        Ok(())
    }

    pub fn image_len(&self) -> usize {
        CHANNELS * self.height * self.width
    }
}

/// Per-pixel opacity, `h x w` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Opacity {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// `3 x h x w`, channel-major.
    pub image: Vec<f64>,
    pub opacity: Opacity,
    pub mask: QueryMask,
}

/// Eight lattice nodes and weights around a point inside the cube.
fn trilinear(p: Vec3, n: usize) -> [(usize, f64); 8] {
    let scale = (n - 1) as f64;
    let mut base = [0usize; 3];
    let mut frac = [0f64; 3];
    for a in 0..3 {
        let u = ((p[a] + 1.0) * 0.5 * scale).clamp(0.0, scale);
        let i = (u.floor() as usize).min(n - 2);
        base[a] = i;
        frac[a] = u - i as f64;
    }
    let mut out = [(0usize, 0f64); 8];
    for (k, slot) in out.iter_mut().enumerate() {
        let (dx, dy, dz) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
        let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
            * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
            * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
        let idx = ((base[2] + dz) * n + base[1] + dy) * n + base[0] + dx;
        *slot = (idx, w);
    }
    out
}

/// Entry and exit distances of a ray through `[-1, 1]^3`.
fn cube_hit(o: Vec3, d: Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a].abs() > 1.0 {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((-1.0 - o[a]) / d[a], (1.0 - o[a]) / d[a]);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t1 > t0).then_some((t0, t1))
}

/// Samples along one ray: interpolation stencils and the step length.
struct RaySamples {
    step: f64,
    stencils: Vec<[(usize, f64); 8]>,
}

fn ray_samples(o: Vec3, d: Vec3, n: usize, count: usize) -> Option<RaySamples> {
    let (t0, t1) = cube_hit(o, d)?;
    let step = (t1 - t0) / count as f64;
    let stencils = (0..count)
        .map(|j| {
            let t = t0 + (j as f64 + 0.5) * step;
            trilinear([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]], n)
        })
        .collect();
    Some(RaySamples { step, stencils })
}

/// Activated density and color at each sample.
fn shade(scene: &VoxelScene, rs: &RaySamples) -> (Vec<f64>, Vec<[f64; 3]>) {
    let mut sig = Vec::with_capacity(rs.stencils.len());
    let mut col = Vec::with_capacity(rs.stencils.len());
    for st in &rs.stencils {
        let mut s = 0.0;
        let mut c = [0.0; 3];
        for &(idx, w) in st {
            s += w * scene.density(idx);
            for (ch, cv) in c.iter_mut().enumerate() {
                *cv += w * scene.color(ch, idx);
            }
        }
        sig.push(s);
        col.push(c);
    }
    (sig, col)
}

fn check_camera(camera: &Camera) -> Result<()> {
    camera.validate()?;
    let p = camera.position();
    if p.iter().all(|v| v.abs() <= 1.0) {
        return Err(Error::Config("camera lies inside the scene cube".into()));
    }
    Ok(())
}

fn unit(v: Vec3) -> Vec3 {
    let n = dot3(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

pub fn render(scene: &VoxelScene, camera: &Camera, opts: &RenderOptions) -> Result<RenderOutput> {
    opts.validate()?;
    check_camera(camera)?;
    let (h, w) = (opts.height, opts.width);
    let plane = h * w;
    let frame = camera.frame();
    let mut image = vec![0.0; CHANNELS * plane];
    let mut opacity = vec![0.0; plane];
    for row in 0..h {
        for colx in 0..w {
            let px = row * w + colx;
            let d = unit(camera.ray_direction(&frame, row, colx, h, w));
            let mut trans = 1.0;
            let mut acc = [0.0; 3];
            if let Some(rs) = ray_samples(frame.origin, d, scene.resolution, opts.samples_per_ray)
            {
                let (sig, col) = shade(scene, &rs);
                for (s, c) in sig.iter().zip(&col) {
                    let a = -(-s * rs.step).exp_m1();
                    for ch in 0..3 {
                        acc[ch] += trans * a * c[ch];
                    }
                    trans *= 1.0 - a;
                }
            }
            for ch in 0..3 {
                image[ch * plane + px] = acc[ch] + trans * scene.background[ch];
            }
            opacity[px] = 1.0 - trans;
        }
    }
    let opacity = Opacity {
        height: h,
        width: w,
        values: opacity,
    };
    let mask = QueryMask::from_opacity(&opacity, opts.alpha_threshold);
    Ok(RenderOutput {
        image,
        opacity,
        mask,
    })
}

/// Gradient of `<residual, render(scene)>` with respect to the scene's
/// pre-activations.
pub fn render_vjp(
    scene: &VoxelScene,
    camera: &Camera,
    opts: &RenderOptions,
    residual: &[f64],
) -> Result<Vec<f64>> {
    opts.validate()?;
    check_camera(camera)?;
    Error::check_dim(opts.image_len(), residual.len())?;
    let (h, w) = (opts.height, opts.width);
    let plane = h * w;
    let n3 = scene.n3();
    let frame = camera.frame();
    // Gradients with respect to activated node values.
    let mut g_sigma = vec![0.0; n3];
    let mut g_color = vec![0.0; 3 * n3];
    for row in 0..h {
        for colx in 0..w {
            let px = row * w + colx;
            let r = [residual[px], residual[plane + px], residual[2 * plane + px]];
            if r == [0.0; 3] {
                continue;
            }
            let d = unit(camera.ray_direction(&frame, row, colx, h, w));
            let Some(rs) = ray_samples(frame.origin, d, scene.resolution, opts.samples_per_ray)
            else {
                continue;
            };
            let (sig, col) = shade(scene, &rs);
            let m = sig.len();
            let mut trans = Vec::with_capacity(m + 1);
            let mut weight = Vec::with_capacity(m);
            let mut t = 1.0;
            trans.push(t);
            for s in &sig {
                let a = -(-s * rs.step).exp_m1();
                weight.push(t * a);
                t *= 1.0 - a;
                trans.push(t);
            }
            // Contracted tail radiance S_j = sum_{k>j} w_k c_k + T_N bg.
            let mut tail: f64 = (0..3).map(|ch| r[ch] * scene.background[ch]).sum::<f64>() * t;
            for j in (0..m).rev() {
                let rc: f64 = (0..3).map(|ch| r[ch] * col[j][ch]).sum();
                let d_sigma = rs.step * (trans[j + 1] * rc - tail);
                for &(idx, wt) in &rs.stencils[j] {
                    g_sigma[idx] += wt * d_sigma;
                    for ch in 0..3 {
                        g_color[ch * n3 + idx] += wt * weight[j] * r[ch];
                    }
                }
                tail += weight[j] * rc;
            }
        }
    }
    let p = scene.params();
    let mut grad = Vec::with_capacity(4 * n3);
    grad.extend((0..n3).map(|i| g_sigma[i] * sigmoid(p[i])));
    grad.extend((0..3 * n3).map(|k| {
        let s = sigmoid(p[n3 + k]);
        g_color[k] * s * (1.0 - s)
    }));
    Ok(grad)
}
