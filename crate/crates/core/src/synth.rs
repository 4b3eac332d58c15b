//! Deterministic synthetic indoor scenes for closed-loop verification.
//!
//! Scenes are boxes and rectangles inside a room volume. Views are ray cast
//! with a pinhole camera, shaded with a fixed directional light and a
//! position-hashed texture so colors agree across views. Depth can be
//! corrupted with a global scale bias, a smooth low-frequency warp and white
//! noise, which together mimic the spatially coherent errors of monocular
//! depth prediction.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{
    apply_transform, is_valid_depth, unproject, GeometryError, Intrinsics, Label, LabeledCloud,
    Raster, RigidTransform, View, UNLABELED,
};
use crate::registration::fuse;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid noise spec: {0}")]
    InvalidNoise(String),
    #[error("camera position {0:?} is outside the room")]
    PoseOutsideRoom([f64; 3]),
    #[error("view is empty: no ray hits any primitive")]
    EmptyView,
    #[error("need at least 2 poses, got {0}")]
    TooFewPoses(usize),
    #[error("insufficient view overlap (minimum {min}): {report}")]
    InsufficientOverlap { min: f64, report: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Axis-aligned box in the local frame, centered at the origin.
    Box { size: Vector3<f64> },
    /// Rectangle spanning local x/y, centered at the origin, normal local z.
    Rect { size: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    /// Local-to-world pose.
    pub pose: RigidTransform,
    pub label: Label,
    pub color: [f64; 3],
}

impl Primitive {
    pub fn cuboid(center: [f64; 3], size: [f64; 3], yaw_deg: f64, label: Label, color: [f64; 3]) -> Self {
        Self {
            shape: Shape::Box {
                size: Vector3::from(size),
            },
            // image y points down, so yaw turns about -y
            pose: RigidTransform::from_axis_angle(
                -Vector3::y(),
                yaw_deg.to_radians(),
                Vector3::from(center),
            ),
            label,
            color,
        }
    }

    /// Rectangle whose local frame is rotated by `rotvec_deg` (rotation
    /// vector, degrees).
    pub fn rect(center: [f64; 3], rotvec_deg: [f64; 3], size: [f64; 2], label: Label, color: [f64; 3]) -> Self {
        Self {
            shape: Shape::Rect { size },
            pose: RigidTransform::from_rotation_vector(
                Vector3::from(rotvec_deg).map(f64::to_radians),
                Vector3::from(center),
            ),
            label,
            color,
        }
    }

    /// Ray parameter and world-space normal of the first hit with `t > 0`.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        const EPS: f64 = 1e-9;
        let rt = self.pose.rotation.transpose();
        let o = rt * (origin - self.pose.translation);
        let d = rt * dir;
        match self.shape {
            Shape::Rect { size } => {
                if d.z.abs() < 1e-15 {
                    return None;
                }
                let t = -o.z / d.z;
                if t <= EPS {
                    return None;
                }
                let hit = o + d * t;
                if hit.x.abs() > size[0] / 2.0 || hit.y.abs() > size[1] / 2.0 {
                    return None;
                }
                Some((t, self.pose.rotation * Vector3::z()))
            }
            Shape::Box { size } => {
                let half = size / 2.0;
                let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut near_axis, mut far_axis) = (0, 0);
                for axis in 0..3 {
                    if d[axis].abs() < 1e-15 {
                        if o[axis].abs() > half[axis] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half[axis] - o[axis]) / d[axis];
                    let b = (half[axis] - o[axis]) / d[axis];
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    if lo > t_near {
                        t_near = lo;
                        near_axis = axis;
                    }
                    if hi < t_far {
                        t_far = hi;
                        far_axis = axis;
                    }
                }
                if t_near > t_far || t_far <= EPS {
                    return None;
                }
                let (t, axis) = if t_near > EPS { (t_near, near_axis) } else { (t_far, far_axis) };
                let mut n = Vector3::zeros();
                n[axis] = 1.0;
                Some((t, self.pose.rotation * n))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub room_min: Vector3<f64>,
    pub room_max: Vector3<f64>,
    pub primitives: Vec<Primitive>,
    /// Seeds the surface texture.
    pub seed: u64,
    /// Relative amplitude of the hashed texture, 0 for flat colors.
    pub texture: f64,
    /// World direction toward the light.
    pub light: Vector3<f64>,
}

impl SceneSpec {
    pub fn new(room_min: [f64; 3], room_max: [f64; 3], seed: u64) -> Self {
        Self {
            room_min: Vector3::from(room_min),
            room_max: Vector3::from(room_max),
            primitives: Vec::new(),
            seed,
            texture: 0.5,
            light: Vector3::new(0.3, -1.0, -0.4).normalize(),
        }
    }

    /// Adds floor (label 1), four walls (label 2) and ceiling (label 3)
    /// covering the room box. World y points down.
    pub fn with_room_shell(mut self) -> Self {
        let (lo, hi) = (self.room_min, self.room_max);
        let c = (lo + hi) / 2.0;
        let s = hi - lo;
        let floor = [0.55, 0.5, 0.45];
        let wall = [0.85, 0.82, 0.75];
        let ceiling = [0.95, 0.95, 0.95];
        self.primitives.extend([
            Primitive::rect([c.x, hi.y, c.z], [90.0, 0.0, 0.0], [s.x, s.z], 1, floor),
            Primitive::rect([c.x, lo.y, c.z], [90.0, 0.0, 0.0], [s.x, s.z], 3, ceiling),
            Primitive::rect([c.x, c.y, hi.z], [0.0; 3], [s.x, s.y], 2, wall),
            Primitive::rect([c.x, c.y, lo.z], [0.0; 3], [s.x, s.y], 2, wall),
            Primitive::rect([lo.x, c.y, c.z], [0.0, 90.0, 0.0], [s.z, s.y], 2, wall),
            Primitive::rect([hi.x, c.y, c.z], [0.0, 90.0, 0.0], [s.z, s.y], 2, wall),
        ]);
        self
    }

    /// A furnished 5 m × 2.7 m × 5.5 m room used by tests and examples.
    pub fn furnished_room(seed: u64) -> Self {
        let mut scene = Self::new([-2.5, -1.4, -1.5], [2.5, 1.3, 4.0], seed).with_room_shell();
        scene.primitives.extend([
            Primitive::cuboid([0.3, 0.95, 2.4], [1.2, 0.7, 0.8], 10.0, 4, [0.55, 0.35, 0.2]),
            Primitive::cuboid([-1.2, 1.0, 1.9], [0.5, 0.6, 0.5], -20.0, 5, [0.2, 0.3, 0.7]),
            Primitive::cuboid([-2.15, 0.5, 3.2], [0.6, 1.6, 0.8], 0.0, 6, [0.7, 0.7, 0.3]),
            Primitive::cuboid([0.5, 0.45, 2.3], [0.3, 0.3, 0.3], 30.0, 7, [0.8, 0.2, 0.2]),
            Primitive::cuboid([1.9, 0.95, 1.6], [0.8, 0.7, 1.8], 0.0, 8, [0.3, 0.6, 0.35]),
            Primitive::rect([-0.5, -0.3, 3.99], [0.0; 3], [1.0, 0.7], 9, [0.2, 0.5, 0.8]),
        ]);
        scene
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScene(m));
        if !(0..3).all(|a| self.room_min[a] < self.room_max[a]) {
            return bad("room minimum must be below maximum on every axis".into());
        }
        if !(self.light.norm() > 0.0) {
            return bad("light direction must be nonzero".into());
        }
        let slack = 1e-6;
        for (i, p) in self.primitives.iter().enumerate() {
            if p.label == UNLABELED {
                return bad(format!("primitive {i} uses the reserved unlabeled id"));
            }
            let c = p.pose.translation;
            if (0..3).any(|a| c[a] < self.room_min[a] - slack || c[a] > self.room_max[a] + slack) {
                return bad(format!("primitive {i} center {c:?} is outside the room"));
            }
            if !p.pose.is_proper() {
                return bad(format!("primitive {i} has an improper rotation"));
            }
        }
        Ok(())
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.room_min[a] && p[a] <= self.room_max[a])
    }

    /// Smooth multiplicative texture, one factor per color channel: a
    /// seeded sum of plane waves in world coordinates, so every view sees
    /// the same pattern on a surface.
    fn texture_at(&self, p: &Vector3<f64>, label: Label) -> [f64; 3] {
        if self.texture == 0.0 {
            return [1.0; 3];
        }
        let mut state = splitmix(self.seed ^ (label as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut unit = || {
            state = splitmix(state);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        std::array::from_fn(|_| {
            let mut acc = 0.0;
            for _ in 0..TEXTURE_WAVES {
                let dir = Vector3::new(unit() - 0.5, unit() - 0.5, unit() - 0.5);
                let wavelength = 0.1 + 0.2 * unit();
                let phase = std::f64::consts::TAU * unit();
                let k = dir.normalize() * (std::f64::consts::TAU / wavelength);
                acc += (k.dot(p) + phase).sin();
            }
            1.0 + self.texture * acc / TEXTURE_WAVES as f64
        })
    }
}

const TEXTURE_WAVES: usize = 4;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// First surface hit along `origin + t·dir`, `t > 0`: the ray parameter,
/// the surface normal and the primitive.
pub fn cast_ray<'a>(
    scene: &'a SceneSpec,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<(f64, Vector3<f64>, &'a Primitive)> {
    let mut hit: Option<(f64, Vector3<f64>, &Primitive)> = None;
    for prim in &scene.primitives {
        if let Some((t, n)) = prim.intersect(origin, dir) {
            if hit.is_none_or(|(best, _, _)| t < best) {
                hit = Some((t, n, prim));
            }
        }
    }
    hit
}

/// Ray casts `scene` from a camera with camera-to-world `pose`.
pub fn render_view(
    scene: &SceneSpec,
    pose: &RigidTransform,
    intr: &Intrinsics,
) -> Result<View, SynthError> {
    scene.validate()?;
    intr.validate()?;
    if !scene.contains(&pose.translation) {
        let t = pose.translation;
        return Err(SynthError::PoseOutsideRoom([t.x, t.y, t.z]));
    }
    let light = scene.light.normalize();
    let origin = pose.translation;
    let pixels: Vec<(f64, Label, [f64; 3])> = (0..intr.width * intr.height)
        .into_par_iter()
        .map(|i| {
            let (u, v) = (i % intr.width, i / intr.width);
            let ray = Vector3::new(
                (u as f64 - intr.cx) / intr.fx,
                (v as f64 - intr.cy) / intr.fy,
                1.0,
            );
            let dir = pose.rotation * ray;
            match cast_ray(scene, &origin, &dir) {
                None => (0.0, UNLABELED, [0.0; 3]),
                Some((t, n, prim)) => {
                    let n = if n.dot(&dir) > 0.0 { -n } else { n };
                    let shade = 0.35 + 0.65 * n.dot(&light).max(0.0);
                    let tex = scene.texture_at(&(origin + dir * t), prim.label);
                    let color = std::array::from_fn(|k| (prim.color[k] * shade * tex[k]).clamp(0.0, 1.0));
                    (t, prim.label, color)
                }
            }
        })
        .collect();
    if pixels.iter().all(|p| p.1 == UNLABELED) {
        return Err(SynthError::EmptyView);
    }
    let (w, h) = (intr.width, intr.height);
    let depth = Raster::from_vec(w, h, pixels.iter().map(|p| p.0).collect())?;
    let labels = Raster::from_vec(w, h, pixels.iter().map(|p| p.1).collect())?;
    let color = Raster::from_vec(w, h, pixels.iter().map(|p| p.2).collect())?;
    Ok(View::new(color, depth, labels, *intr)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Multiplicative depth bias.
    pub scale_bias: f64,
    /// Amplitude of the smooth additive warp, meters.
    pub warp_amp: f64,
    /// Warp control grid resolution (cells per image side).
    pub warp_cells: usize,
    /// White noise standard deviation, meters.
    pub pixel_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            scale_bias: 1.0,
            warp_amp: 0.0,
            warp_cells: 4,
            pixel_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.scale_bias.is_finite() && self.scale_bias > 0.0) {
            return Err(SynthError::InvalidNoise("scale_bias must be > 0".into()));
        }
        if !(self.warp_amp.is_finite() && self.warp_amp >= 0.0) {
            return Err(SynthError::InvalidNoise("warp_amp must be >= 0".into()));
        }
        if !(self.pixel_sigma.is_finite() && self.pixel_sigma >= 0.0) {
            return Err(SynthError::InvalidNoise("pixel_sigma must be >= 0".into()));
        }
        if self.warp_amp > 0.0 && self.warp_cells == 0 {
            return Err(SynthError::InvalidNoise("warp_cells must be >= 1".into()));
        }
        Ok(())
    }
}

/// Smooth scalar field over the image from a `(cells+1)²` control grid,
/// interpolated with Catmull-Rom splines (edge samples repeated).
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    cells: usize,
    /// Row-major `(cells+1) × (cells+1)` control values.
    pub control: Vec<f64>,
}

impl WarpField {
    /// Control values uniform in `[-amp, amp]`.
    pub fn random(cells: usize, amp: f64, rng: &mut impl Rng) -> Self {
        let n = (cells + 1) * (cells + 1);
        let control = if amp > 0.0 {
            (0..n).map(|_| rng.random_range(-amp..=amp)).collect()
        } else {
            vec![0.0; n]
        };
        Self { cells, control }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    fn at(&self, i: isize, j: isize) -> f64 {
        let m = self.cells as isize;
        let (i, j) = (i.clamp(0, m) as usize, j.clamp(0, m) as usize);
        self.control[j * (self.cells + 1) + i]
    }

    /// Field value at grid coordinates `(gx, gy)` in `[0, cells]`.
    pub fn sample(&self, gx: f64, gy: f64) -> f64 {
        let (ix, fx) = split(gx, self.cells);
        let (iy, fy) = split(gy, self.cells);
        let wx = catmull_rom_weights(fx);
        let wy = catmull_rom_weights(fy);
        let mut acc = 0.0;
        for (b, wyb) in wy.iter().enumerate() {
            let mut row = 0.0;
            for (a, wxa) in wx.iter().enumerate() {
                row += wxa * self.at(ix + a as isize - 1, iy + b as isize - 1);
            }
            acc += wyb * row;
        }
        acc
    }

    /// Field value at pixel `(u, v)` of a `width × height` image.
    pub fn at_pixel(&self, u: usize, v: usize, width: usize, height: usize) -> f64 {
        let g = |x: usize, n: usize| {
            if n > 1 {
                x as f64 / (n - 1) as f64 * self.cells as f64
            } else {
                0.0
            }
        };
        self.sample(g(u, width), g(v, height))
    }
}

fn split(g: f64, cells: usize) -> (isize, f64) {
    let i = (g.floor() as isize).clamp(0, cells.saturating_sub(1) as isize);
    (i, g - i as f64)
}

fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// The warp field `perturb_depth` draws for `noise`.
pub fn warp_field(noise: &NoiseSpec) -> WarpField {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    WarpField::random(noise.warp_cells, noise.warp_amp, &mut rng)
}

/// `depth ← scale_bias · (depth + warp(u, v)) + N(0, σ²)` on valid pixels;
/// colors and labels are untouched.
pub fn perturb_depth(view: &View, noise: &NoiseSpec) -> Result<View, SynthError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let field = WarpField::random(noise.warp_cells, noise.warp_amp, &mut rng);
    let gauss = Normal::new(0.0, noise.pixel_sigma).map_err(|e| SynthError::InvalidNoise(e.to_string()))?;
    let (w, h) = (view.intrinsics.width, view.intrinsics.height);
    let mut out = view.clone();
    for v in 0..h {
        for u in 0..w {
            let d = out.depth.get_mut(u, v);
            if !is_valid_depth(*d) {
                continue;
            }
            let warp = if noise.warp_amp > 0.0 {
                field.at_pixel(u, v, w, h)
            } else {
                0.0
            };
            let mut nd = noise.scale_bias * (*d + warp);
            if noise.pixel_sigma > 0.0 {
                nd += gauss.sample(&mut rng);
            }
            *d = nd;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseOptions {
    /// Each view must overlap some earlier view by at least this fraction.
    pub min_overlap: f64,
    /// Voxel pitch of the ground-truth fused cloud, meters.
    pub gt_voxel: f64,
}

impl Default for CaseOptions {
    fn default() -> Self {
        Self {
            min_overlap: 0.3,
            gt_voxel: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCase {
    /// Noisy views, in pose order.
    pub views: Vec<View>,
    pub clean_views: Vec<View>,
    /// Camera-i to camera-0 transforms; the first is the identity.
    pub gt_transforms: Vec<RigidTransform>,
    /// Clean points of all views in the camera-0 frame, voxel averaged.
    pub gt_cloud: LabeledCloud,
    /// `overlap[i][j]`: fraction of view j's pixels co-visible in view i.
    pub overlap: Vec<Vec<f64>>,
}

/// Fraction of `b`'s valid pixels that view `a` also sees unoccluded.
/// `b_to_a` maps camera-b coordinates into camera a.
pub fn covisible_fraction(a: &View, b: &View, b_to_a: &RigidTransform) -> f64 {
    let cloud = match unproject(b) {
        Ok(c) if !c.is_empty() => c,
        _ => return 0.0,
    };
    let intr = &a.intrinsics;
    let seen = cloud
        .points
        .iter()
        .filter(|p| {
            let q = b_to_a.apply(&p.position);
            let Some((u, v)) = intr.project(&q) else {
                return false;
            };
            let (u, v) = (u.round(), v.round());
            if u < 0.0 || v < 0.0 || u >= intr.width as f64 || v >= intr.height as f64 {
                return false;
            }
            let d = *a.depth.get(u as usize, v as usize);
            is_valid_depth(d) && (d - q.z).abs() <= 0.01 + 0.02 * q.z
        })
        .count();
    seen as f64 / cloud.len() as f64
}

/// Renders, perturbs and packages a multi-view case with ground truth.
/// View `i` uses noise seed `noise.seed + i`.
pub fn generate_case(
    scene: &SceneSpec,
    poses: &[RigidTransform],
    intr: &Intrinsics,
    noise: &NoiseSpec,
    options: &CaseOptions,
) -> Result<SynthCase, SynthError> {
    if poses.len() < 2 {
        return Err(SynthError::TooFewPoses(poses.len()));
    }
    noise.validate()?;
    let clean_views = poses
        .iter()
        .map(|p| render_view(scene, p, intr))
        .collect::<Result<Vec<_>, _>>()?;
    let first_inv = poses[0].inverse();
    let gt_transforms: Vec<RigidTransform> = poses.iter().map(|p| first_inv.compose(p)).collect();

    let n = poses.len();
    let mut overlap = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let j_to_i = poses[i].inverse().compose(&poses[j]);
                overlap[i][j] = covisible_fraction(&clean_views[i], &clean_views[j], &j_to_i);
            }
        }
    }
    let short = (1..n).any(|j| (0..j).map(|i| overlap[i][j]).fold(0.0, f64::max) < options.min_overlap);
    if short {
        let report = (1..n)
            .map(|j| {
                let parts: Vec<String> = (0..j).map(|i| format!("{i}->{j}: {:.3}", overlap[i][j])).collect();
                parts.join(", ")
            })
            .collect::<Vec<_>>()
            .join("; ");
        return Err(SynthError::InsufficientOverlap {
            min: options.min_overlap,
            report,
        });
    }

    let mut clouds = Vec::with_capacity(n);
    for (view, t) in clean_views.iter().zip(&gt_transforms) {
        clouds.push(apply_transform(&unproject(view)?, t));
    }
    let gt_cloud = fuse(&clouds, options.gt_voxel);

    let views = clean_views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            perturb_depth(
                v,
                &NoiseSpec {
                    seed: noise.seed.wrapping_add(i as u64),
                    ..*noise
                },
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(SynthCase {
        views,
        clean_views,
        gt_transforms,
        gt_cloud,
        overlap,
    })
}

/// Camera-to-world pose: position plus yaw (about world up, degrees) and
/// pitch (degrees, positive looks down).
pub fn camera_pose(position: [f64; 3], yaw_deg: f64, pitch_deg: f64) -> RigidTransform {
    let yaw = RigidTransform::from_axis_angle(-Vector3::y(), yaw_deg.to_radians(), Vector3::zeros());
    let pitch = RigidTransform::from_axis_angle(-Vector3::x(), pitch_deg.to_radians(), Vector3::zeros());
    let r = yaw.compose(&pitch);
    RigidTransform {
        rotation: r.rotation,
        translation: Vector3::from(position),
    }
}
