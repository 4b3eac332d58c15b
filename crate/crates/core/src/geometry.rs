//! Camera model, rasters, labeled point clouds and rigid transforms.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Unit, Vector3, SVD};
use thiserror::Error;

/// Semantic label id.
pub type Label = u16;

/// Reserved label id for pixels without a semantic class.
pub const UNLABELED: Label = u16::MAX;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("raster size mismatch: {what} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        what: &'static str,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("raster data length {len} does not match {width}x{height}")]
    RasterLength { len: usize, width: usize, height: usize },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("rotation is not a proper orthonormal matrix")]
    InvalidRotation,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Centered principal point with equal focal lengths.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidIntrinsics(msg));
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty raster {}x{}", self.width, self.height));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad(format!("cx={} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("cy={} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }

    /// Camera-frame point at pixel `(u, v)` with optical-axis depth `depth`.
    #[inline]
    pub fn unproject_pixel(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        )
    }

    /// Pixel coordinates of a camera-frame point; `None` behind the camera.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Row-major H×W raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self, GeometryError> {
        if data.len() != width * height {
            return Err(GeometryError::RasterLength {
                len: data.len(),
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[v * self.width + u]
    }

    #[inline]
    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut T {
        &mut self.data[v * self.width + u]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    fn check_dims(&self, what: &'static str, w: usize, h: usize) -> Result<(), GeometryError> {
        if self.width != w || self.height != h {
            return Err(GeometryError::DimensionMismatch {
                what,
                got_w: self.width,
                got_h: self.height,
                want_w: w,
                want_h: h,
            });
        }
        Ok(())
    }
}

/// Whether a depth sample counts as a measurement.
#[inline]
pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// One view: color in [0,1], depth in meters (non-positive or non-finite
/// marks a hole), labels, and the camera intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub color: Raster<[f64; 3]>,
    pub depth: Raster<f64>,
    pub labels: Raster<Label>,
    pub intrinsics: Intrinsics,
}

impl View {
    pub fn new(
        color: Raster<[f64; 3]>,
        depth: Raster<f64>,
        labels: Raster<Label>,
        intrinsics: Intrinsics,
    ) -> Result<Self, GeometryError> {
        let view = Self {
            color,
            depth,
            labels,
            intrinsics,
        };
        view.validate()?;
        Ok(view)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.intrinsics.validate()?;
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        self.color.check_dims("color", w, h)?;
        self.depth.check_dims("depth", w, h)?;
        self.labels.check_dims("labels", w, h)?;
        Ok(())
    }

    pub fn valid_pixel_count(&self) -> usize {
        self.depth
            .as_slice()
            .iter()
            .zip(self.labels.as_slice())
            .filter(|(&d, &l)| is_valid_depth(d) && l != UNLABELED)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: Vector3<f64>,
    pub color: [f64; 3],
    pub label: Label,
}

impl LabeledPoint {
    pub fn new(position: Vector3<f64>, color: [f64; 3], label: Label) -> Self {
        Self {
            position,
            color,
            label,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCloud {
    pub points: Vec<LabeledPoint>,
}

impl LabeledCloud {
    pub fn new(points: Vec<LabeledPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Points carrying `label`, in cloud order.
    pub fn with_label(&self, label: Label) -> LabeledCloud {
        LabeledCloud::new(
            self.points
                .iter()
                .filter(|p| p.label == label)
                .copied()
                .collect(),
        )
    }

    /// Sorted distinct labels.
    pub fn labels(&self) -> Vec<Label> {
        let mut labels: Vec<Label> = self.points.iter().map(|p| p.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    pub fn extend(&mut self, other: &LabeledCloud) {
        self.points.extend_from_slice(&other.points);
    }
}

impl FromIterator<LabeledPoint> for LabeledCloud {
    fn from_iter<I: IntoIterator<Item = LabeledPoint>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Checked constructor: `rotation` must be orthonormal with det +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let t = Self {
            rotation,
            translation,
        };
        if !t.is_proper() || !translation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(t)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Matrix3::identity()
        } else {
            Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
        };
        Self {
            rotation,
            translation,
        }
    }

    /// Rotation given as a rotation vector (axis times angle, radians).
    pub fn from_rotation_vector(rotvec: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::new(rotvec).into_inner(),
            translation,
        }
    }

    pub fn is_proper(&self) -> bool {
        let r = &self.rotation;
        if !r.iter().all(|x| x.is_finite()) {
            return false;
        }
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        ortho <= ORTHONORMAL_TOL && (r.determinant() - 1.0).abs() <= ORTHONORMAL_TOL
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians, in [0, π].
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        // acos loses precision near zero; use the skew part there.
        let r = &self.rotation;
        let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)])
            .norm()
            / 2.0;
        s.atan2(c)
    }

    /// Rotation angle and translation distance of `self⁻¹ ∘ other`.
    pub fn difference(&self, other: &RigidTransform) -> (f64, f64) {
        let rot = RigidTransform {
            rotation: self.rotation.transpose() * other.rotation,
            translation: Vector3::zeros(),
        };
        (rot.rotation_angle(), (self.translation - other.translation).norm())
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_matrix4(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }
}

/// Lifts every pixel with valid depth and a label into a camera-frame point.
pub fn unproject(view: &View) -> Result<LabeledCloud, GeometryError> {
    view.validate()?;
    let intr = &view.intrinsics;
    let mut points = Vec::with_capacity(view.valid_pixel_count());
    for v in 0..intr.height {
        for u in 0..intr.width {
            let d = *view.depth.get(u, v);
            let label = *view.labels.get(u, v);
            if !is_valid_depth(d) || label == UNLABELED {
                continue;
            }
            points.push(LabeledPoint {
                position: intr.unproject_pixel(u as f64, v as f64, d),
                color: *view.color.get(u, v),
                label,
            });
        }
    }
    Ok(LabeledCloud::new(points))
}

pub fn apply_transform(cloud: &LabeledCloud, t: &RigidTransform) -> LabeledCloud {
    cloud
        .points
        .iter()
        .map(|p| LabeledPoint {
            position: t.apply(&p.position),
            ..*p
        })
        .collect()
}

/// Least-squares rigid transform mapping `source[k]` onto `target[k]`.
///
/// Closed form: centroids, SVD of the cross-covariance, and a sign flip on
/// the weakest singular direction when the naive product is a reflection.
pub fn solve_rigid(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> Result<RigidTransform, GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::Degenerate(format!(
            "{} source points but {} target points",
            source.len(),
            target.len()
        )));
    }
    let n = source.len();
    if n < 3 {
        return Err(GeometryError::Degenerate(format!(
            "need at least 3 correspondences, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let src_centroid = source.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;
    let tgt_centroid = target.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;

    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    let mut magnitude = 0.0;
    for (p, q) in source.iter().zip(target) {
        let a = p - src_centroid;
        let b = q - tgt_centroid;
        scatter += a * a.transpose();
        cross += a * b.transpose();
        magnitude += p.norm_squared();
    }
    check_spread(&scatter, magnitude)?;

    let svd = SVD::new(cross, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::Degenerate("SVD did not converge".into())),
    };
    let v = v_t.transpose();
    let mut diag = Vector3::new(1.0, 1.0, 1.0);
    if (v * u.transpose()).determinant() < 0.0 {
        let weakest = svd.singular_values.imin();
        diag[weakest] = -1.0;
    }
    let rotation = v * Matrix3::from_diagonal(&diag) * u.transpose();
    let translation = tgt_centroid - rotation * src_centroid;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Rejects coincident or collinear source sets: the centered scatter needs
/// two non-negligible principal directions.
fn check_spread(scatter: &Matrix3<f64>, magnitude: f64) -> Result<(), GeometryError> {
    let mut eig = SymmetricEigen::new(*scatter).eigenvalues;
    eig.as_mut_slice()
        .sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let (largest, second) = (eig[0], eig[1]);
    if !(largest.is_finite() && largest > 1e-20 * magnitude.max(1e-300)) {
        return Err(GeometryError::Degenerate(
            "source points are coincident".into(),
        ));
    }
    if second <= 1e-10 * largest {
        return Err(GeometryError::Degenerate("source points are collinear".into()));
    }
    Ok(())
}

/// The least-squares objective `½ Σ ‖q − R p − t‖²`.
pub fn rigid_objective(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    t: &RigidTransform,
) -> f64 {
    0.5 * source
        .iter()
        .zip(target)
        .map(|(p, q)| (q - t.apply(p)).norm_squared())
        .sum::<f64>()
}
