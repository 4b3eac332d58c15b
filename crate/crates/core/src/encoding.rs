//! Geocentric (HHA) depth encoding: horizontal disparity, height above the
//! floor, and the angle between the surface normal and gravity.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{is_valid_depth, GeometryError, Raster, View};
use crate::spatial::KdTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("depth raster has no valid pixels")]
    NoValidDepth,
    #[error("gravity direction must be a finite unit vector, got {0:?}")]
    BadGravity([f64; 3]),
    #[error("normal radius must be positive, got {0}")]
    BadRadius(f64),
}

/// Camera-frame up for an upright camera (image y points down).
pub const CAMERA_UP: [f64; 3] = [0.0, -1.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HhaParams {
    /// Neighborhood radius for the normal plane fit, meters.
    pub normal_radius: f64,
    /// Quantile of gravity-axis heights taken as the floor level.
    pub floor_quantile: f64,
}

impl Default for HhaParams {
    fn default() -> Self {
        Self {
            normal_radius: 0.05,
            floor_quantile: 0.01,
        }
    }
}

/// Raw HHA channels; pixels without valid depth (or without a normal, for
/// the angle channel) hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct HhaRaster {
    /// Inverse depth, 1/m.
    pub disparity: Raster<f64>,
    /// Height above the floor level along gravity-up, meters, clamped at 0.
    pub height: Raster<f64>,
    /// Angle between the normal and gravity-up, radians in [0, π].
    pub angle: Raster<f64>,
    /// Gravity-axis coordinate taken as the floor.
    pub floor_level: f64,
    /// Per-channel (min, max) over finite values.
    pub ranges: [(f64, f64); 3],
}

impl HhaRaster {
    /// Channels min-max scaled to [0, 1]; NaN pixels become 0.
    pub fn normalized(&self) -> Raster<[f64; 3]> {
        let scale = |v: f64, (lo, hi): (f64, f64)| {
            if !v.is_finite() {
                0.0
            } else if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                0.0
            }
        };
        let data = (0..self.disparity.len())
            .map(|i| {
                [
                    scale(self.disparity.as_slice()[i], self.ranges[0]),
                    scale(self.height.as_slice()[i], self.ranges[1]),
                    scale(self.angle.as_slice()[i], self.ranges[2]),
                ]
            })
            .collect();
        Raster::from_vec(self.disparity.width(), self.disparity.height(), data)
            .expect("same dimensions")
    }
}

/// Camera-frame point for every pixel with valid depth (labels ignored).
pub fn pixel_points(view: &View) -> Result<Raster<Option<Vector3<f64>>>, GeometryError> {
    view.validate()?;
    let intr = &view.intrinsics;
    let data = (0..intr.height)
        .flat_map(|v| (0..intr.width).map(move |u| (u, v)))
        .map(|(u, v)| {
            let d = *view.depth.get(u, v);
            is_valid_depth(d).then(|| intr.unproject_pixel(u as f64, v as f64, d))
        })
        .collect();
    Raster::from_vec(intr.width, intr.height, data)
}

/// Per-pixel unit normals from a plane fit over all points within `radius`,
/// oriented toward the camera origin. `None` where the neighborhood has
/// fewer than 3 points or is collinear.
pub fn estimate_normals(
    points: &Raster<Option<Vector3<f64>>>,
    radius: f64,
) -> Result<Raster<Option<Vector3<f64>>>, EncodingError> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(EncodingError::BadRadius(radius));
    }
    let tree = KdTree::with_ids(
        points
            .as_slice()
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|p| (i, p))),
    );
    let data: Vec<Option<Vector3<f64>>> = points
        .as_slice()
        .par_iter()
        .map(|p| {
            let p = (*p)?;
            let neighbors = tree.within(&p, radius);
            let pts: Vec<Vector3<f64>> = neighbors
                .iter()
                .map(|&i| points.as_slice()[i].expect("indexed points are valid"))
                .collect();
            fit_normal(&pts).map(|n| if n.dot(&p) > 0.0 { -n } else { n })
        })
        .collect();
    Ok(Raster::from_vec(points.width(), points.height(), data)?)
}

/// Unit normal of the least-squares plane through `pts`.
pub fn fit_normal(pts: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    if pts.len() < 3 {
        return None;
    }
    let inv = 1.0 / pts.len() as f64;
    let centroid = pts.iter().fold(Vector3::zeros(), |a, p| a + p) * inv;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov * inv);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (smallest, middle, largest) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if !(largest > 0.0) || middle <= 1e-12 * largest || !smallest.is_finite() {
        return None;
    }
    let n = eig.eigenvectors.column(order[0]).into_owned();
    let len = n.norm();
    (len > 0.0).then(|| n / len)
}

fn check_up(up: &Vector3<f64>) -> Result<(), EncodingError> {
    if !up.iter().all(|x| x.is_finite()) || (up.norm() - 1.0).abs() > 1e-6 {
        return Err(EncodingError::BadGravity([up.x, up.y, up.z]));
    }
    Ok(())
}

/// HHA channels of a view. `gravity_up` is a unit vector in camera
/// coordinates; [`CAMERA_UP`] assumes an upright camera.
pub fn hha_encode(
    view: &View,
    gravity_up: &Vector3<f64>,
    params: &HhaParams,
) -> Result<HhaRaster, EncodingError> {
    hha_from_points(&pixel_points(view)?, gravity_up, params)
}

/// HHA channels from per-pixel camera-frame points.
pub fn hha_from_points(
    points: &Raster<Option<Vector3<f64>>>,
    gravity_up: &Vector3<f64>,
    params: &HhaParams,
) -> Result<HhaRaster, EncodingError> {
    check_up(gravity_up)?;
    let mut heights: Vec<f64> = points
        .as_slice()
        .iter()
        .flatten()
        .map(|p| p.dot(gravity_up))
        .collect();
    if heights.is_empty() {
        return Err(EncodingError::NoValidDepth);
    }
    heights.sort_by(f64::total_cmp);
    let q = params.floor_quantile.clamp(0.0, 1.0);
    let floor_level = heights[((heights.len() - 1) as f64 * q).floor() as usize];

    let normals = estimate_normals(points, params.normal_radius)?;
    let disparity = points.map(|p| p.map_or(f64::NAN, |p| 1.0 / p.z));
    let height = points.map(|p| p.map_or(f64::NAN, |p| (p.dot(gravity_up) - floor_level).max(0.0)));
    let angle = normals.map(|n| {
        n.map_or(f64::NAN, |n| n.dot(gravity_up).clamp(-1.0, 1.0).acos())
    });
    let ranges = [range(&disparity), range(&height), range(&angle)];
    Ok(HhaRaster {
        disparity,
        height,
        angle,
        floor_level,
        ranges,
    })
}

fn range(r: &Raster<f64>) -> (f64, f64) {
    r.as_slice()
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}
