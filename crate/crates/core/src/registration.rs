//! Rigid 6-DOF intensity registration and resampling.
//!
//! # Transform convention
//!
//! A [`RigidTransform`] maps points of the *fixed* space into the *moving*
//! space (pull resampling): for a fixed-space point `p` (mm),
//!
//! ```text
//! q = R (p - c) + c + t,    R = Rz(rz) * Ry(ry) * Rx(rx)
//! ```
//!
//! where `c` is the physical centre of the fixed grid. Resampling the moving
//! image at `q` for every fixed voxel centre `p` produces the moving image
//! aligned to the fixed one. So if the anatomy in the fixed scan sits
//! `+3 mm` along x relative to the moving scan, the recovered translation is
//! `tx = -3`.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Geometry, Volume};

/// Rotation (radians) about the fixed-grid centre, then translation (mm).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    #[serde(rename = "rotation_rad")]
    pub rotation: [f64; 3],
    #[serde(rename = "translation_mm")]
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform::default()
    }

    pub fn translation(t: [f64; 3]) -> Self {
        RigidTransform {
            rotation: [0.0; 3],
            translation: t,
        }
    }

    pub fn from_params(p: [f64; 6]) -> Self {
        RigidTransform {
            rotation: [p[0], p[1], p[2]],
            translation: [p[3], p[4], p[5]],
        }
    }

    pub fn params(&self) -> [f64; 6] {
        let [rx, ry, rz] = self.rotation;
        let [tx, ty, tz] = self.translation;
        [rx, ry, rz, tx, ty, tz]
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [rx, ry, rz] = self.rotation;
        *Rotation3::from_euler_angles(rx, ry, rz).matrix()
    }

    fn from_parts(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        let (rx, ry, rz) = Rotation3::from_matrix_unchecked(*r).euler_angles();
        RigidTransform {
            rotation: [rx, ry, rz],
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn apply(&self, p: [f64; 3], center: [f64; 3]) -> [f64; 3] {
        let c = Vector3::from(center);
        let q =
            self.rotation_matrix() * (Vector3::from(p) - c) + c + Vector3::from(self.translation);
        [q.x, q.y, q.z]
    }

    /// The transform mapping moving points back to fixed points, about the
    /// same centre.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation_matrix().transpose();
        let t = -(rt * Vector3::from(self.translation));
        RigidTransform::from_parts(&rt, t)
    }

    /// `then ∘ self`: apply `self` first.
    pub fn then(&self, then: &RigidTransform) -> Self {
        let r1 = self.rotation_matrix();
        let r2 = then.rotation_matrix();
        let t = r2 * Vector3::from(self.translation) + Vector3::from(then.translation);
        RigidTransform::from_parts(&(r2 * r1), t)
    }

    /// Largest rotation angle of the residual rotation, in radians.
    pub fn rotation_angle(&self) -> f64 {
        Rotation3::from_matrix_unchecked(self.rotation_matrix()).angle()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    Ncc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub metric: Metric,
    /// Downsample factors, coarse to fine.
    pub pyramid: Vec<usize>,
    pub max_iters: usize,
    /// Initial rotation step (rad) at every level.
    pub rotation_step: f64,
    /// Initial translation step in voxels of the current level.
    pub translation_step_voxels: f64,
    /// Stop a level when the joint step norm (rad + mm) falls below this.
    pub tolerance: f64,
    /// Gaussian pre-smoothing of both images at every level, in voxels of
    /// that level; 0 disables.
    pub smoothing_sigma_voxels: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            metric: Metric::Mse,
            pyramid: vec![4, 2, 1],
            max_iters: 200,
            rotation_step: 0.04,
            translation_step_voxels: 1.0,
            tolerance: 1e-3,
            smoothing_sigma_voxels: 1.0,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid.is_empty() || self.pyramid.contains(&0) {
            return Err(Error::invalid_spec("pyramid", "factors must be positive"));
        }
        if self.pyramid.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid_spec(
                "pyramid",
                "factors must be non-increasing",
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid_spec("max_iters", "must be at least 1"));
        }
        if !(self.tolerance > 0.0 && self.rotation_step > 0.0 && self.translation_step_voxels > 0.0)
        {
            return Err(Error::invalid_spec(
                "steps",
                "steps and tolerance must be positive",
            ));
        }
        if !(self.smoothing_sigma_voxels.is_finite() && self.smoothing_sigma_voxels >= 0.0) {
            return Err(Error::invalid_spec(
                "smoothing_sigma_voxels",
                "must be >= 0",
            ));
        }
        Ok(())
    }
}

/// A resampled image plus the voxels whose source position was inside the
/// moving grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Resampled {
    pub volume: Volume,
    pub support: Vec<bool>,
}

impl Resampled {
    pub fn full(volume: Volume) -> Self {
        let n = volume.data.len();
        Resampled {
            volume,
            support: vec![true; n],
        }
    }
}

const SNAP: f64 = 1e-9;

/// Target voxel index -> moving continuous index, as `A * idx + b`.
struct IndexMap {
    a: Matrix3<f64>,
    b: Vector3<f64>,
}

impl IndexMap {
    fn new(t: &RigidTransform, target: &Geometry, moving: &Geometry, center: [f64; 3]) -> Self {
        let r = t.rotation_matrix();
        let st = Matrix3::from_diagonal(&Vector3::from(target.spacing));
        let sm_inv = Matrix3::from_diagonal(&Vector3::from(moving.spacing.map(|s| 1.0 / s)));
        let c = Vector3::from(center);
        let a = sm_inv * r * st;
        let b = sm_inv
            * (r * (Vector3::from(target.origin) - c) + c + Vector3::from(t.translation)
                - Vector3::from(moving.origin));
        IndexMap { a, b }
    }

    #[inline]
    fn map(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let v = self.a * Vector3::new(i as f64, j as f64, k as f64) + self.b;
        [v.x, v.y, v.z]
    }
}

/// Split a continuous coordinate into a lower index and weight, or `None`
/// when outside `[0, n-1]`.
#[inline]
fn split(c: f64, n: usize) -> Option<(usize, f64)> {
    let r = c.round();
    let c = if (c - r).abs() < SNAP { r } else { c };
    if c < 0.0 || c > (n - 1) as f64 {
        return None;
    }
    let i0 = (c.floor() as usize).min(n.saturating_sub(2));
    let w = c - i0 as f64;
    Some((i0, w))
}

#[inline]
fn sample_trilinear(v: &Volume, c: [f64; 3]) -> Option<f64> {
    let d = v.geometry.dims;
    let (x0, wx) = split(c[0], d[0])?;
    let (y0, wy) = split(c[1], d[1])?;
    let (z0, wz) = split(c[2], d[2])?;
    let x1 = (x0 + 1).min(d[0] - 1);
    let y1 = (y0 + 1).min(d[1] - 1);
    let z1 = (z0 + 1).min(d[2] - 1);
    let at = |i, j, k| v.data[v.geometry.index(i, j, k)] as f64;
    let mut acc = 0.0;
    for (zi, wzv) in [(z0, 1.0 - wz), (z1, wz)] {
        if wzv == 0.0 {
            continue;
        }
        for (yi, wyv) in [(y0, 1.0 - wy), (y1, wy)] {
            if wyv == 0.0 {
                continue;
            }
            for (xi, wxv) in [(x0, 1.0 - wx), (x1, wx)] {
                if wxv == 0.0 {
                    continue;
                }
                acc += wzv * wyv * wxv * at(xi, yi, zi);
            }
        }
    }
    Some(acc)
}

#[inline]
fn nearest_index(g: &Geometry, c: [f64; 3]) -> Option<usize> {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = (c[a] + 0.5).floor();
        if r < 0.0 || r >= g.dims[a] as f64 {
            return None;
        }
        idx[a] = r as usize;
    }
    Some(g.index(idx[0], idx[1], idx[2]))
}

fn resample_about(
    moving: &Volume,
    t: &RigidTransform,
    target: &Geometry,
    center: [f64; 3],
    interpolation: Interpolation,
) -> Resampled {
    let map = IndexMap::new(t, target, &moving.geometry, center);
    let n = target.len();
    let mut data = vec![0f32; n];
    let mut support = vec![false; n];
    let [nx, ny, nz] = target.dims;
    let mut idx = 0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let c = map.map(i, j, k);
                let value = match interpolation {
                    Interpolation::Trilinear => sample_trilinear(moving, c),
                    Interpolation::Nearest => {
                        nearest_index(&moving.geometry, c).map(|s| moving.data[s] as f64)
                    }
                };
                if let Some(v) = value {
                    data[idx] = v as f32;
                    support[idx] = true;
                }
                idx += 1;
            }
        }
    }
    Resampled {
        volume: Volume {
            geometry: target.clone(),
            data,
        },
        support,
    }
}

/// Pull `moving` onto `target` through `t` (rotation about the target centre).
/// Out-of-grid samples are filled with 0 and excluded from `support`.
pub fn resample(
    moving: &Volume,
    t: &RigidTransform,
    target: &Geometry,
    interpolation: Interpolation,
) -> Resampled {
    resample_about(moving, t, target, target.center(), interpolation)
}

/// Nearest-neighbour propagation of a mask through `t`.
pub fn propagate_mask(prior: &BinaryMask, t: &RigidTransform, target: &Geometry) -> BinaryMask {
    let map = IndexMap::new(t, target, &prior.geometry, target.center());
    let mut out = BinaryMask::empty(target.clone());
    let [nx, ny, nz] = target.dims;
    let mut idx = 0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if let Some(s) = nearest_index(&prior.geometry, map.map(i, j, k)) {
                    out.data[idx] = prior.data[s];
                }
                idx += 1;
            }
        }
    }
    out
}

/// Streaming accumulator for both cost functions.
#[derive(Default)]
struct Moments {
    n: f64,
    sf: f64,
    sm: f64,
    sff: f64,
    smm: f64,
    sfm: f64,
    sse: f64,
}

impl Moments {
    #[inline]
    fn push(&mut self, f: f64, m: f64) {
        self.n += 1.0;
        self.sf += f;
        self.sm += m;
        self.sff += f * f;
        self.smm += m * m;
        self.sfm += f * m;
        let d = f - m;
        self.sse += d * d;
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn cost(&self, metric: Metric) -> Result<f64> {
        if self.n == 0.0 {
            return Err(Error::EmptyOverlap);
        }
        Ok(match metric {
            Metric::Mse => self.sse / self.n,
            Metric::Ncc => {
                let cov = self.sfm - self.sf * self.sm / self.n;
                let vf = self.sff - self.sf * self.sf / self.n;
                let vm = self.smm - self.sm * self.sm / self.n;
                let denom = (vf * vm).sqrt();
                if !(denom > 1e-12 * (1.0 + self.sff.abs() + self.smm.abs())) {
                    1.0
                } else {
                    1.0 - (cov / denom).clamp(-1.0, 1.0)
                }
            }
        })
    }
}

/// Cost between `fixed` and a resampled moving image over the resample's
/// support: mean squared difference, or `1 - ncc`. Lower is better.
pub fn similarity(fixed: &Volume, moving: &Resampled, metric: Metric) -> Result<f64> {
    fixed.geometry.ensure_same_dims(&moving.volume.geometry)?;
    let mut m = Moments::default();
    for ((&f, &v), &inside) in fixed
        .data
        .iter()
        .zip(&moving.volume.data)
        .zip(&moving.support)
    {
        if inside {
            m.push(f as f64, v as f64);
        }
    }
    m.cost(metric)
}

fn cost_at(
    fixed: &Volume,
    moving: &Volume,
    t: &RigidTransform,
    center: [f64; 3],
    metric: Metric,
) -> Result<f64> {
    let map = IndexMap::new(t, &fixed.geometry, &moving.geometry, center);
    let [nx, ny, nz] = fixed.geometry.dims;
    let mut m = Moments::default();
    let mut idx = 0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if let Some(v) = sample_trilinear(moving, map.map(i, j, k)) {
                    m.push(fixed.data[idx] as f64, v);
                }
                idx += 1;
            }
        }
    }
    m.cost(metric)
}

/// Block-average downsampling by `factor` (per axis, capped at the axis
/// length). The new voxel centres sit at the block centres.
pub fn downsample(v: &Volume, factor: usize) -> Volume {
    if factor <= 1 {
        return v.clone();
    }
    let g = &v.geometry;
    let f: [usize; 3] = std::array::from_fn(|a| factor.min(g.dims[a]).max(1));
    let dims: [usize; 3] = std::array::from_fn(|a| g.dims[a] / f[a]);
    let geometry = Geometry {
        dims,
        spacing: std::array::from_fn(|a| g.spacing[a] * f[a] as f64),
        origin: std::array::from_fn(|a| g.origin[a] + (f[a] as f64 - 1.0) / 2.0 * g.spacing[a]),
    };
    let mut data = vec![0f32; geometry.len()];
    let norm = (f[0] * f[1] * f[2]) as f64;
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let mut acc = 0.0f64;
                for kk in 0..f[2] {
                    for jj in 0..f[1] {
                        for ii in 0..f[0] {
                            acc += v.get(i * f[0] + ii, j * f[1] + jj, k * f[2] + kk) as f64;
                        }
                    }
                }
                data[geometry.index(i, j, k)] = (acc / norm) as f32;
            }
        }
    }
    Volume { geometry, data }
}

/// Separable Gaussian blur with the kernel truncated at 3 sigma and
/// renormalized where it overhangs the grid.
pub fn gaussian_smooth(v: &Volume, sigma_voxels: f64) -> Volume {
    if sigma_voxels <= 0.0 {
        return v.clone();
    }
    let radius = (3.0 * sigma_voxels).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma_voxels * sigma_voxels)).exp())
        .collect();
    let dims = v.geometry.dims;
    let mut cur: Vec<f64> = v.data.iter().map(|&x| x as f64).collect();
    let mut next = vec![0f64; cur.len()];
    for axis in 0..3 {
        let n = dims[axis] as i64;
        for (idx, out) in next.iter_mut().enumerate() {
            let at = v.geometry.coords(idx);
            let pos = at[axis] as i64;
            let stride = match axis {
                0 => 1,
                1 => dims[0] as i64,
                _ => (dims[0] * dims[1]) as i64,
            };
            let (mut acc, mut norm) = (0.0, 0.0);
            for (w, d) in kernel.iter().zip(-radius..=radius) {
                let q = pos + d;
                if q >= 0 && q < n {
                    acc += w * cur[(idx as i64 + d * stride) as usize];
                    norm += w;
                }
            }
            *out = acc / norm;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Volume {
        geometry: v.geometry.clone(),
        data: cur.into_iter().map(|x| x as f32).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub factor: usize,
    pub iterations: usize,
    /// Cost after each accepted step, starting with the level's initial cost.
    pub accepted_costs: Vec<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub transform: RigidTransform,
    /// Full-resolution cost of `transform`.
    pub final_cost: f64,
    pub metric: Metric,
    /// True when some level stopped on the iteration cap instead of the
    /// tolerance.
    pub iterations_exhausted: bool,
    pub levels: Vec<LevelTrace>,
}

#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN counts as degenerate
fn check_not_degenerate(v: &Volume, which: &str) -> Result<()> {
    let (lo, hi) = v.range();
    if !(hi > lo) {
        return Err(Error::DegenerateInput(format!(
            "{which} volume has constant intensity {lo}"
        )));
    }
    Ok(())
}

/// Find the transform aligning `moving` to `fixed` (see the module docs for the
/// convention) by coarse-to-fine coordinate descent.
///
/// At each level every parameter is probed at `x ± step`; the better side is
/// accepted if it lowers the cost, otherwise that parameter's step halves. A
/// level ends when the step vector norm drops below the tolerance or after
/// `max_iters` sweeps.
pub fn register_rigid(fixed: &Volume, moving: &Volume, config: &RegConfig) -> Result<Registration> {
    config.validate()?;
    check_not_degenerate(fixed, "fixed")?;
    check_not_degenerate(moving, "moving")?;
    let center = fixed.geometry.center();

    let mut x = [0f64; 6];
    let mut levels = Vec::with_capacity(config.pyramid.len());
    let mut exhausted = false;
    for &factor in &config.pyramid {
        let f = gaussian_smooth(&downsample(fixed, factor), config.smoothing_sigma_voxels);
        let m = gaussian_smooth(&downsample(moving, factor), config.smoothing_sigma_voxels);
        let voxel = f.geometry.spacing.iter().cloned().fold(0.0, f64::max);
        let trans_step = config.translation_step_voxels * voxel;
        let mut step = [
            config.rotation_step,
            config.rotation_step,
            config.rotation_step,
            trans_step,
            trans_step,
            trans_step,
        ];
        let eval = |p: &[f64; 6]| {
            cost_at(
                &f,
                &m,
                &RigidTransform::from_params(*p),
                center,
                config.metric,
            )
        };

        let mut current = eval(&x)?;
        let mut accepted = vec![current];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < config.max_iters {
            iterations += 1;
            for i in 0..6 {
                let mut plus = x;
                plus[i] += step[i];
                let mut minus = x;
                minus[i] -= step[i];
                // a probe that leaves all overlap is simply not an improvement
                let cp = eval(&plus).unwrap_or(f64::INFINITY);
                let cm = eval(&minus).unwrap_or(f64::INFINITY);
                let (cand, c) = if cp <= cm { (plus, cp) } else { (minus, cm) };
                if c < current {
                    x = cand;
                    current = c;
                    accepted.push(c);
                } else {
                    step[i] *= 0.5;
                }
            }
            let norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
            if norm < config.tolerance {
                converged = true;
                break;
            }
        }
        exhausted |= !converged;
        levels.push(LevelTrace {
            factor,
            iterations,
            accepted_costs: accepted,
            converged,
        });
    }

    let transform = RigidTransform::from_params(x);
    let final_cost = cost_at(fixed, moving, &transform, center, config.metric)?;
    Ok(Registration {
        transform,
        final_cost,
        metric: config.metric,
        iterations_exhausted: exhausted,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn ramp(g: &Geometry, grad: [f64; 3]) -> Volume {
        let data = (0..g.len())
            .map(|idx| {
                let p = g.world(g.coords(idx).map(|c| c as f64));
                (grad[0] * p[0] + grad[1] * p[1] + grad[2] * p[2]) as f32
            })
            .collect();
        Volume::new(g.clone(), data).unwrap()
    }

    /// Smooth blob + ramp so all six parameters are observable.
    fn blob(g: &Geometry, centre: [f64; 3]) -> Volume {
        let data = (0..g.len())
            .map(|idx| {
                let p = g.world(g.coords(idx).map(|c| c as f64));
                let r2: f64 = (0..3)
                    .map(|a| ((p[a] - centre[a]) / [5.0, 3.5, 4.0][a]).powi(2))
                    .sum();
                (100.0 * (-r2 / 2.0).exp() + 0.5 * p[0] + 0.3 * p[1] + 0.2 * p[2]) as f32
            })
            .collect();
        Volume::new(g.clone(), data).unwrap()
    }

    #[test]
    fn smoothing_keeps_constants_and_linear_interiors() {
        let g = Geometry::unit([9, 8, 7]);
        let flat = Volume::new(g.clone(), vec![3.5; g.len()]).unwrap();
        assert!(gaussian_smooth(&flat, 1.0)
            .data
            .iter()
            .all(|&v| (v - 3.5).abs() < 1e-5));
        let r = ramp(&g, [1.0, 2.0, -0.5]);
        let s = gaussian_smooth(&r, 1.0);
        // symmetric kernel: linear data is unchanged away from the edges
        assert!((s.get(4, 4, 3) - r.get(4, 4, 3)).abs() < 1e-4);
        assert_eq!(gaussian_smooth(&r, 0.0), r);
    }

    #[test]
    fn inverse_and_composition() {
        let t = RigidTransform {
            rotation: [0.1, -0.2, 0.3],
            translation: [1.0, -2.0, 0.5],
        };
        let c = [3.0, 4.0, 5.0];
        let round = t.then(&t.inverse());
        for p in [[0.0, 0.0, 0.0], [10.0, -3.0, 7.5], [-20.0, 11.0, 2.0]] {
            let q = t.inverse().apply(t.apply(p, c), c);
            let r = round.apply(p, c);
            for a in 0..3 {
                assert!((q[a] - p[a]).abs() < 1e-9);
                assert!((r[a] - p[a]).abs() < 1e-9);
            }
        }
        let u = RigidTransform {
            rotation: [-0.05, 0.02, 0.1],
            translation: [0.0, 3.0, -1.0],
        };
        let p = [1.0, 2.0, 3.0];
        let direct = u.apply(t.apply(p, c), c);
        let composed = t.then(&u).apply(p, c);
        for a in 0..3 {
            assert!((direct[a] - composed[a]).abs() < 1e-9);
        }
    }

    #[test]
    fn json_field_names() {
        let t = RigidTransform::translation([1.0, 2.0, 3.0]);
        let v = serde_json::to_value(t).unwrap();
        assert_eq!(v["translation_mm"], serde_json::json!([1.0, 2.0, 3.0]));
        assert_eq!(v["rotation_rad"], serde_json::json!([0.0, 0.0, 0.0]));
    }

    #[test]
    fn identity_resample_is_exact() {
        let g = Geometry::new([7, 5, 4], [0.3, 0.7, 1.1], [0.1, -2.3, 5.7]).unwrap();
        let mut rng = crate::rng::stream(5);
        let v = Volume::new(
            g.clone(),
            (0..g.len()).map(|_| rng.random::<f32>()).collect(),
        )
        .unwrap();
        for interp in [Interpolation::Trilinear, Interpolation::Nearest] {
            let r = resample(&v, &RigidTransform::identity(), &g, interp);
            assert_eq!(r.volume.data, v.data);
            assert!(r.support.iter().all(|&s| s));
        }
    }

    #[test]
    fn integer_shift_nearest() {
        let g = Geometry::unit([6, 5, 3]);
        let v = Volume::new(g.clone(), (0..g.len()).map(|i| i as f32 + 1.0).collect()).unwrap();
        // pull from x + 2: output(i) = input(i + 2), zero past the edge
        let r = resample(
            &v,
            &RigidTransform::translation([2.0, 0.0, 0.0]),
            &g,
            Interpolation::Nearest,
        );
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            let expected = if i + 2 < 6 { v.get(i + 2, j, k) } else { 0.0 };
            assert_eq!(r.volume.data[idx], expected);
            assert_eq!(r.support[idx], i + 2 < 6);
        }
    }

    #[test]
    fn half_voxel_shift_on_ramp() {
        let g = Geometry::new([10, 6, 4], [2.0, 1.0, 1.0], [0.0; 3]).unwrap();
        let v = ramp(&g, [1.5, -0.5, 2.0]);
        let r = resample(
            &v,
            &RigidTransform::translation([1.0, 0.0, 0.0]),
            &g,
            Interpolation::Trilinear,
        );
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            if i < 9 {
                let p = g.world([i as f64, j as f64, k as f64]);
                let expected = 1.5 * (p[0] + 1.0) - 0.5 * p[1] + 2.0 * p[2];
                assert!((r.volume.data[idx] as f64 - expected).abs() < 1e-4);
            } else {
                assert!(!r.support[idx]);
            }
        }
    }

    #[test]
    fn similarity_examples() {
        let g = Geometry::unit([8, 8, 8]);
        let v = blob(&g, [3.5, 3.5, 3.5]);
        assert_eq!(
            similarity(&v, &Resampled::full(v.clone()), Metric::Mse).unwrap(),
            0.0
        );
        let shifted = Volume::new(g.clone(), v.data.iter().map(|x| x + 1.0).collect()).unwrap();
        assert!(
            similarity(&v, &Resampled::full(shifted), Metric::Ncc)
                .unwrap()
                .abs()
                < 1e-9
        );

        let mut rng = crate::rng::stream(11);
        let mut noise = || {
            Volume::new(
                g.clone(),
                (0..g.len()).map(|_| rng.random::<f32>()).collect(),
            )
            .unwrap()
        };
        let a = noise();
        let b = noise();
        let c = similarity(&a, &Resampled::full(b), Metric::Ncc).unwrap();
        assert!((c - 1.0).abs() < 0.15, "ncc cost {c}");

        let none = Resampled {
            volume: v.clone(),
            support: vec![false; g.len()],
        };
        assert!(matches!(
            similarity(&v, &none, Metric::Mse),
            Err(Error::EmptyOverlap)
        ));
    }

    #[test]
    fn self_registration_is_identity() {
        let g = Geometry::unit([24, 24, 16]);
        let v = blob(&g, [12.0, 10.0, 8.0]);
        let reg = register_rigid(&v, &v, &RegConfig::default()).unwrap();
        let t = reg.transform;
        assert!(t.translation.iter().all(|x| x.abs() < 0.1), "{t:?}");
        assert!(t.rotation.iter().all(|x| x.abs() < 0.002), "{t:?}");
    }

    #[test]
    fn recovers_integer_translation() {
        let g = Geometry::unit([32, 32, 20]);
        let moving = blob(&g, [14.0, 15.0, 9.0]);
        let fixed = blob(&g, [17.0, 15.0, 9.0]);
        let reg = register_rigid(&fixed, &moving, &RegConfig::default()).unwrap();
        let t = reg.transform.translation;
        assert!((t[0] + 3.0).abs() < 0.5, "{t:?}");
        assert!(t[1].abs() < 0.5 && t[2].abs() < 0.5, "{t:?}");
        for level in &reg.levels {
            assert!(level.accepted_costs.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn constant_input_is_degenerate() {
        let g = Geometry::unit([8, 8, 8]);
        let flat = Volume::zeros(g.clone());
        let v = blob(&g, [4.0, 4.0, 4.0]);
        assert!(matches!(
            register_rigid(&v, &flat, &RegConfig::default()),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn mask_propagation_counts() {
        let g = Geometry::unit([10, 10, 4]);
        let voxels: Vec<_> = (2..6)
            .flat_map(|i| (3..5).map(move |j| [i, j, 1]))
            .collect();
        let m = BinaryMask::from_voxels(g.clone(), &voxels);
        assert_eq!(propagate_mask(&m, &RigidTransform::identity(), &g), m);

        let shifted = propagate_mask(&m, &RigidTransform::translation([-3.0, 0.0, 0.0]), &g);
        assert_eq!(shifted.count(), m.count());
        assert!(shifted.get(5, 3, 1) && shifted.get(8, 4, 1) && !shifted.get(4, 3, 1));

        // columns 2..6 pulled from x + 4: only source columns 4, 5 land in 0, 1
        let half = propagate_mask(&m, &RigidTransform::translation([4.0, 0.0, 0.0]), &g);
        assert_eq!(half.count(), m.count() / 2);
    }

    #[test]
    fn downsample_keeps_physical_centre() {
        let g = Geometry::new([16, 16, 8], [1.0, 1.0, 2.0], [3.0, -1.0, 0.0]).unwrap();
        let v = ramp(&g, [1.0, 0.0, 0.0]);
        let d = downsample(&v, 4);
        assert_eq!(d.geometry.dims, [4, 4, 2]);
        assert_eq!(d.geometry.center(), g.center());
        // the block mean of a linear ramp is the ramp at the block centre
        let p = d.geometry.world([1.0, 0.0, 0.0]);
        assert!((d.get(1, 0, 0) as f64 - p[0]).abs() < 1e-5);
    }

    #[test]
    fn config_validation() {
        let bad = RegConfig {
            pyramid: vec![1, 2],
            ..RegConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(RegConfig {
            max_iters: 0,
            ..RegConfig::default()
        }
        .validate()
        .is_err());
    }
}
