//! Joint global and local registration of sparse views.
//!
//! Views are registered one after another against the fused cloud of all
//! previous views. Each step runs an ICP loop whose correspondence search
//! scores candidates by position, color and label, then refines every
//! semantic segment separately, and finally averages overlapping points on a
//! voxel grid.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{
    apply_transform, solve_rigid, unproject, GeometryError, Label, LabeledCloud, LabeledPoint,
    RigidTransform, View,
};
use crate::spatial::{Best, KdTree};

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("{0} cloud is empty")]
    EmptyCloud(&'static str),
    #[error(
        "alignment failed at iteration {iteration} with {correspondences} correspondences: {reason}"
    )]
    AlignmentFailed {
        iteration: usize,
        correspondences: usize,
        last_transform: Box<RigidTransform>,
        reason: String,
    },
    #[error("view {index}: {source}")]
    View {
        index: usize,
        #[source]
        source: GeometryError,
    },
    #[error("registration of view {view} failed: {source}")]
    Pipeline {
        view: usize,
        partial: Box<FusedScene>,
        #[source]
        source: Box<RegistrationError>,
    },
}

/// How the label term of the lifted cost compares two label ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SemanticDistance {
    /// 0 for equal labels, 1 otherwise.
    #[default]
    Categorical,
    /// Squared numeric difference of the ids.
    SquaredDifference,
}

impl SemanticDistance {
    #[inline]
    pub fn eval(self, a: Label, b: Label) -> f64 {
        match self {
            SemanticDistance::Categorical => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
            SemanticDistance::SquaredDifference => {
                let d = a as f64 - b as f64;
                d * d
            }
        }
    }
}

/// Stray-point removal before registration.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefilterParams {
    /// RANSAC inlier distance to a plane, meters.
    pub plane_tol: f64,
    /// Minimum plane support as a fraction of the cloud size.
    pub min_support_fraction: f64,
    /// A non-planar point with fewer neighbors than this is removed.
    pub isolation_neighbors: usize,
    /// Neighborhood radius for the isolation test, meters.
    pub isolation_radius: f64,
    pub ransac_iterations: usize,
    pub max_planes: usize,
    pub seed: u64,
}

impl Default for PrefilterParams {
    fn default() -> Self {
        Self {
            plane_tol: 0.03,
            min_support_fraction: 0.01,
            isolation_neighbors: 10,
            isolation_radius: 0.1,
            ransac_iterations: 200,
            max_planes: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationParams {
    /// Photometric weight.
    pub w1: f64,
    /// Semantic weight.
    pub w2: f64,
    pub semantic: SemanticDistance,
    /// Correspondences farther apart than this (meters, 3-D only) are dropped.
    pub reject_dist: f64,
    pub max_iters: usize,
    /// Convergence: translation of the incremental update, meters.
    pub trans_eps: f64,
    /// Convergence: rotation angle of the incremental update, radians.
    pub rot_eps: f64,
    /// Voxel pitch used when averaging overlaps, meters.
    pub fuse_voxel: f64,
    /// Segments smaller than this keep the global transform.
    pub min_label_points: usize,
    pub local_refine: bool,
    pub prefilter: PrefilterParams,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            w1: 0.1,
            w2: 10.0,
            semantic: SemanticDistance::Categorical,
            reject_dist: 0.05,
            max_iters: 50,
            trans_eps: 1e-4,
            rot_eps: 1e-4,
            fuse_voxel: 0.01,
            min_label_points: 50,
            local_refine: true,
            prefilter: PrefilterParams::default(),
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let fail = |m: &str| Err(RegistrationError::InvalidParams(m.to_string()));
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !(self.w1 >= 0.0 && self.w1.is_finite()) {
            return fail("w1 must be finite and >= 0");
        }
        if !(self.w2 >= 0.0 && self.w2.is_finite()) {
            return fail("w2 must be finite and >= 0");
        }
        if !pos(self.reject_dist) {
            return fail("reject_dist must be > 0");
        }
        if self.max_iters == 0 {
            return fail("max_iters must be >= 1");
        }
        if !(self.trans_eps >= 0.0 && self.rot_eps >= 0.0) {
            return fail("convergence thresholds must be >= 0");
        }
        if !pos(self.fuse_voxel) {
            return fail("fuse_voxel must be > 0");
        }
        let pf = &self.prefilter;
        if !pos(pf.plane_tol) || !pos(pf.isolation_radius) {
            return fail("prefilter tolerances must be > 0");
        }
        if !(0.0..=1.0).contains(&pf.min_support_fraction) {
            return fail("min_support_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    /// Lifted matching cost given the squared 3-D distance.
    #[inline]
    fn lifted_cost(&self, d2: f64, a: &LabeledPoint, b: &LabeledPoint) -> f64 {
        d2 + self.w1 * color_dist2(&a.color, &b.color) + self.w2 * self.semantic.eval(a.label, b.label)
    }
}

#[inline]
fn color_dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dr = a[0] - b[0];
    let dg = a[1] - b[1];
    let db = a[2] - b[2];
    dr * dr + dg * dg + db * db
}

// ---------------------------------------------------------------------------
// Plane pre-filter
// ---------------------------------------------------------------------------

/// Keep-mask for [`plane_prefilter`]: `false` marks a removed point.
pub fn plane_prefilter_mask(cloud: &LabeledCloud, params: &PrefilterParams) -> Vec<bool> {
    let n = cloud.len();
    let positions = cloud.positions();
    let min_support = ((params.min_support_fraction * n as f64).ceil() as usize).max(3);
    let mut planar = vec![false; n];
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    for _ in 0..params.max_planes {
        if remaining.len() < min_support {
            break;
        }
        let mut best: Option<(usize, Vector3<f64>, f64)> = None;
        for _ in 0..params.ransac_iterations {
            let pick = sample(&mut rng, remaining.len(), 3);
            let a = positions[remaining[pick.index(0)]];
            let b = positions[remaining[pick.index(1)]];
            let c = positions[remaining[pick.index(2)]];
            let normal = (b - a).cross(&(c - a));
            let len = normal.norm();
            if !(len > 1e-12) {
                continue;
            }
            let normal = normal / len;
            let offset = normal.dot(&a);
            let support = remaining
                .iter()
                .filter(|&&i| (normal.dot(&positions[i]) - offset).abs() <= params.plane_tol)
                .count();
            if best.is_none_or(|(s, _, _)| support > s) {
                best = Some((support, normal, offset));
            }
        }
        let Some((support, normal, offset)) = best else {
            break;
        };
        if support < min_support {
            break;
        }
        remaining.retain(|&i| {
            let inlier = (normal.dot(&positions[i]) - offset).abs() <= params.plane_tol;
            if inlier {
                planar[i] = true;
            }
            !inlier
        });
    }

    if remaining.is_empty() {
        return vec![true; n];
    }
    let tree = KdTree::new(&positions);
    let k = params.isolation_neighbors;
    let mut keep = vec![true; n];
    let isolated: Vec<(usize, bool)> = remaining
        .par_iter()
        .map(|&i| {
            let count = tree.count_within(&positions[i], params.isolation_radius, Some(i), k);
            (i, count < k)
        })
        .collect();
    for (i, iso) in isolated {
        if iso {
            keep[i] = false;
        }
    }
    keep
}

/// Drops points that belong to no supported plane and are also isolated.
/// Output preserves input order.
pub fn plane_prefilter(cloud: &LabeledCloud, params: &PrefilterParams) -> LabeledCloud {
    let keep = plane_prefilter_mask(cloud, params);
    cloud
        .points
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect()
}

// ---------------------------------------------------------------------------
// Correspondences
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub src_index: usize,
    pub tgt_index: usize,
    /// 3-D distance at match time, meters.
    pub geom_dist: f64,
    pub lifted_cost: f64,
}

/// Retained matches between two clouds. Source indices are unique and
/// ascending.
#[derive(Debug, Clone)]
pub struct CorrespondenceSet<'a> {
    pub pairs: Vec<Correspondence>,
    pub src: &'a LabeledCloud,
    pub tgt: &'a LabeledCloud,
}

impl<'a> CorrespondenceSet<'a> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn source_positions(&self) -> Vec<Vector3<f64>> {
        self.pairs.iter().map(|c| self.src.points[c.src_index].position).collect()
    }

    pub fn target_positions(&self) -> Vec<Vector3<f64>> {
        self.pairs.iter().map(|c| self.tgt.points[c.tgt_index].position).collect()
    }

    /// Closed-form rigid fit over the retained pairs.
    pub fn solve(&self) -> Result<RigidTransform, GeometryError> {
        solve_rigid(&self.source_positions(), &self.target_positions())
    }
}

/// Target cloud split into one k-d tree per label.
///
/// The label penalty is constant inside a group, so each group is searched
/// with branch-and-bound on `distance² + penalty` and the overall minimizer
/// of the lifted cost is exact.
pub struct LiftedIndex<'a> {
    tgt: &'a LabeledCloud,
    groups: Vec<(Label, KdTree)>,
}

impl<'a> LiftedIndex<'a> {
    pub fn new(tgt: &'a LabeledCloud) -> Self {
        let mut by_label: BTreeMap<Label, Vec<(usize, Vector3<f64>)>> = BTreeMap::new();
        for (i, p) in tgt.points.iter().enumerate() {
            by_label.entry(p.label).or_default().push((i, p.position));
        }
        let groups = by_label
            .into_iter()
            .map(|(label, items)| (label, KdTree::with_ids(items)))
            .collect();
        Self { tgt, groups }
    }

    /// Minimizer of the lifted cost over the whole target (ties: lowest index).
    pub fn best_match(&self, q: &LabeledPoint, params: &RegistrationParams) -> Option<Best> {
        let mut order: Vec<(f64, usize)> = self
            .groups
            .iter()
            .enumerate()
            .map(|(g, (label, _))| (params.w2 * params.semantic.eval(q.label, *label), g))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut best = Best::none();
        for (penalty, g) in order {
            if penalty > best.cost {
                break;
            }
            let tree = &self.groups[g].1;
            tree.best_by(&q.position, penalty, &mut best, |id, d2| {
                params.lifted_cost(d2, q, &self.tgt.points[id])
            });
        }
        best.is_some().then_some(best)
    }

    /// Matches every source point, keeping pairs within `reject_dist`.
    pub fn match_cloud(
        &self,
        src: &LabeledCloud,
        params: &RegistrationParams,
    ) -> Vec<Correspondence> {
        let reject = params.reject_dist;
        src.points
            .par_iter()
            .enumerate()
            .filter_map(|(k, p)| {
                let best = self.best_match(p, params)?;
                let geom_dist = best.dist2.sqrt();
                (geom_dist <= reject).then_some(Correspondence {
                    src_index: k,
                    tgt_index: best.index,
                    geom_dist,
                    lifted_cost: best.cost,
                })
            })
            .collect()
    }
}

/// For each source point, the target point minimizing
/// `‖Δxyz‖² + w1‖Δrgb‖² + w2·sem`, retained when its 3-D distance is within
/// `reject_dist`.
pub fn match_7d<'a>(
    src: &'a LabeledCloud,
    tgt: &'a LabeledCloud,
    params: &RegistrationParams,
) -> CorrespondenceSet<'a> {
    let pairs = LiftedIndex::new(tgt).match_cloud(src, params);
    CorrespondenceSet { pairs, src, tgt }
}

// ---------------------------------------------------------------------------
// Global and local alignment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GlobalAlignment<'a> {
    /// Maps source coordinates into the target frame.
    pub transform: RigidTransform,
    /// Pairs used by the last rigid solve (indices into the original clouds).
    pub correspondences: CorrespondenceSet<'a>,
    pub iterations: usize,
    pub converged: bool,
}

/// ICP from the identity: alternate lifted matching and the closed-form
/// rigid solve until the incremental update is below both thresholds or the
/// iteration cap is hit.
pub fn align_global<'a>(
    src: &'a LabeledCloud,
    tgt: &'a LabeledCloud,
    params: &RegistrationParams,
) -> Result<GlobalAlignment<'a>, RegistrationError> {
    params.validate()?;
    if src.is_empty() {
        return Err(RegistrationError::EmptyCloud("source"));
    }
    if tgt.is_empty() {
        return Err(RegistrationError::EmptyCloud("target"));
    }
    let index = LiftedIndex::new(tgt);
    let mut transform = RigidTransform::identity();
    let mut last_pairs = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 1..=params.max_iters {
        iterations = iteration;
        let moved = apply_transform(src, &transform);
        let pairs = index.match_cloud(&moved, params);
        let fail = |reason: String| RegistrationError::AlignmentFailed {
            iteration,
            correspondences: pairs.len(),
            last_transform: Box::new(transform),
            reason,
        };
        if pairs.len() < 3 {
            return Err(fail("fewer than 3 correspondences within the rejection radius".into()));
        }
        let from: Vec<_> = pairs.iter().map(|c| moved.points[c.src_index].position).collect();
        let to: Vec<_> = pairs.iter().map(|c| tgt.points[c.tgt_index].position).collect();
        let delta = solve_rigid(&from, &to).map_err(|e| fail(e.to_string()))?;
        transform = delta.compose(&transform);
        last_pairs = pairs;
        if delta.translation.norm() < params.trans_eps && delta.rotation_angle() < params.rot_eps {
            converged = true;
            break;
        }
    }

    Ok(GlobalAlignment {
        transform,
        correspondences: CorrespondenceSet {
            pairs: last_pairs,
            src,
            tgt,
        },
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefinementStatus {
    Refined { iterations: usize, converged: bool },
    /// Label absent from the target.
    UnmatchedLabel,
    TooFewPoints { source: usize, target: usize },
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRefinement {
    pub label: Label,
    pub transform: RigidTransform,
    pub status: RefinementStatus,
}

/// Per-label refinements, sorted by label. Every source label appears once.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalAlignment {
    pub refinements: Vec<LabelRefinement>,
}

impl LocalAlignment {
    pub fn transform_for(&self, label: Label) -> RigidTransform {
        self.refinements
            .iter()
            .find(|r| r.label == label)
            .map(|r| r.transform)
            .unwrap_or_default()
    }

    pub fn transforms(&self) -> impl Iterator<Item = (Label, RigidTransform)> + '_ {
        self.refinements.iter().map(|r| (r.label, r.transform))
    }

    /// Moves each point by its label's refinement.
    pub fn apply(&self, cloud: &LabeledCloud) -> LabeledCloud {
        let table: BTreeMap<Label, RigidTransform> = self.transforms().collect();
        cloud
            .points
            .iter()
            .map(|p| match table.get(&p.label) {
                Some(t) => LabeledPoint {
                    position: t.apply(&p.position),
                    ..*p
                },
                None => *p,
            })
            .collect()
    }
}

/// Splits `src` by label, in ascending label order. Parts are disjoint and
/// together hold every source point.
pub fn partition_by_label(cloud: &LabeledCloud) -> BTreeMap<Label, LabeledCloud> {
    let mut parts: BTreeMap<Label, LabeledCloud> = BTreeMap::new();
    for p in &cloud.points {
        parts.entry(p.label).or_default().points.push(*p);
    }
    parts
}

/// Registers each semantic segment of an already aligned source against the
/// target points of the same label.
pub fn align_local(
    src: &LabeledCloud,
    tgt: &LabeledCloud,
    params: &RegistrationParams,
) -> Result<LocalAlignment, RegistrationError> {
    params.validate()?;
    let src_parts = partition_by_label(src);
    let tgt_parts = partition_by_label(tgt);
    let mut refinements = Vec::with_capacity(src_parts.len());
    for (label, part) in &src_parts {
        let identity = |status| LabelRefinement {
            label: *label,
            transform: RigidTransform::identity(),
            status,
        };
        let Some(target) = tgt_parts.get(label) else {
            refinements.push(identity(RefinementStatus::UnmatchedLabel));
            continue;
        };
        if part.len() < params.min_label_points || target.len() < params.min_label_points {
            refinements.push(identity(RefinementStatus::TooFewPoints {
                source: part.len(),
                target: target.len(),
            }));
            continue;
        }
        match align_global(part, target, params) {
            Ok(g) => refinements.push(LabelRefinement {
                label: *label,
                transform: g.transform,
                status: RefinementStatus::Refined {
                    iterations: g.iterations,
                    converged: g.converged,
                },
            }),
            Err(e) => refinements.push(identity(RefinementStatus::Degenerate(e.to_string()))),
        }
    }
    Ok(LocalAlignment { refinements })
}

// ---------------------------------------------------------------------------
// Fusion and the sequential pipeline
// ---------------------------------------------------------------------------

/// Integer voxel coordinates of a position.
#[inline]
pub fn voxel_of(p: &Vector3<f64>, voxel: f64) -> (i64, i64, i64) {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

/// Averages same-label points sharing a voxel. Output is ordered by voxel
/// coordinates, then label.
pub fn fuse(clouds: &[LabeledCloud], voxel: f64) -> LabeledCloud {
    #[derive(Default)]
    struct Acc {
        pos: Vector3<f64>,
        color: [f64; 3],
        n: usize,
    }
    let mut cells: BTreeMap<((i64, i64, i64), Label), Acc> = BTreeMap::new();
    for p in clouds.iter().flat_map(|c| c.points.iter()) {
        let acc = cells.entry((voxel_of(&p.position, voxel), p.label)).or_default();
        acc.pos += p.position;
        for c in 0..3 {
            acc.color[c] += p.color[c];
        }
        acc.n += 1;
    }
    cells
        .into_iter()
        .map(|((_, label), acc)| {
            let inv = 1.0 / acc.n as f64;
            LabeledPoint {
                position: acc.pos * inv,
                color: acc.color.map(|c| c * inv),
                label,
            }
        })
        .collect()
}

/// Per-view bookkeeping from [`reconstruct`].
#[derive(Debug, Clone, PartialEq)]
pub struct ViewReport {
    pub input_points: usize,
    pub filtered_points: usize,
    pub iterations: usize,
    pub converged: bool,
    pub correspondences: usize,
    pub local: Option<LocalAlignment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedScene {
    pub cloud: LabeledCloud,
    /// Global transform of each view into the first view's frame.
    pub per_view_transforms: Vec<RigidTransform>,
    pub reports: Vec<ViewReport>,
}

/// Registers the views in order, each against the fusion of all previous
/// ones, and returns the fused cloud in the first view's camera frame.
pub fn reconstruct(
    views: &[View],
    params: &RegistrationParams,
) -> Result<FusedScene, RegistrationError> {
    params.validate()?;
    if views.is_empty() {
        return Err(RegistrationError::InvalidParams("no views given".into()));
    }
    let mut aligned: Vec<LabeledCloud> = Vec::with_capacity(views.len());
    let mut scene = FusedScene {
        cloud: LabeledCloud::default(),
        per_view_transforms: Vec::with_capacity(views.len()),
        reports: Vec::with_capacity(views.len()),
    };

    for (index, view) in views.iter().enumerate() {
        let cloud = unproject(view).map_err(|source| RegistrationError::View { index, source })?;
        let filtered = plane_prefilter(&cloud, &params.prefilter);
        let mut report = ViewReport {
            input_points: cloud.len(),
            filtered_points: filtered.len(),
            iterations: 0,
            converged: true,
            correspondences: 0,
            local: None,
        };

        let (placed, transform) = if index == 0 {
            (filtered, RigidTransform::identity())
        } else {
            let global = align_global(&filtered, &scene.cloud, params).map_err(|e| {
                RegistrationError::Pipeline {
                    view: index,
                    partial: Box::new(scene.clone()),
                    source: Box::new(e),
                }
            })?;
            report.iterations = global.iterations;
            report.converged = global.converged;
            report.correspondences = global.correspondences.len();
            let transform = global.transform;
            let mut moved = apply_transform(&filtered, &transform);
            if params.local_refine {
                let local = align_local(&moved, &scene.cloud, params)?;
                moved = local.apply(&moved);
                report.local = Some(local);
            }
            (moved, transform)
        };

        aligned.push(placed);
        scene.cloud = fuse(&aligned, params.fuse_voxel);
        scene.per_view_transforms.push(transform);
        scene.reports.push(report);
    }
    Ok(scene)
}
