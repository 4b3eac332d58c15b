use std::collections::HashMap;
use std::path::PathBuf;

use nalgebra::{Matrix3, Vector3};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::IntoPyObjectExt;

use semfuse::encoding::{hha_encode, HhaParams, CAMERA_UP};
use semfuse::io;
use semfuse::metrics::{self, DEFAULT_DELTA_THRESHOLDS};
use semfuse::synth::generate_case;
use semfuse::{Label, LabeledCloud, LabeledPoint, Raster, RegistrationParams, RigidTransform, SemanticDistance};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: io::IoError) -> PyErr {
    match e {
        io::IoError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "RigidTransform", module = "semfuse", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyRigidTransform(RigidTransform);

#[pymethods]
impl PyRigidTransform {
    #[new]
    #[pyo3(signature = (rotation=None, translation=None))]
    fn new(rotation: Option<[[f64; 3]; 3]>, translation: Option<[f64; 3]>) -> PyResult<Self> {
        let r = rotation.map_or_else(Matrix3::identity, |r| Matrix3::from_fn(|i, j| r[i][j]));
        let t = translation.map_or_else(Vector3::zeros, Vector3::from);
        RigidTransform::new(r, t).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn from_rotation_vector(rotvec: [f64; 3], translation: [f64; 3]) -> Self {
        Self(RigidTransform::from_rotation_vector(Vector3::from(rotvec), Vector3::from(translation)))
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let r = &self.0.rotation;
        [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]])
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        self.0.translation.into()
    }

    /// Row-major 4x4 homogeneous matrix.
    fn matrix(&self) -> [[f64; 4]; 4] {
        let (r, t) = (&self.0.rotation, &self.0.translation);
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[(i, j)];
            }
            m[i][3] = t[i];
        }
        m[3][3] = 1.0;
        m
    }

    fn apply(&self, points: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
        points.iter().map(|p| self.0.apply(&Vector3::from(*p)).into()).collect()
    }

    fn compose(&self, other: &Self) -> Self {
        Self(self.0.compose(&other.0))
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// Rotation angle in radians.
    fn rotation_angle(&self) -> f64 {
        self.0.rotation_angle()
    }

    /// `(rotation angle, translation distance)` between two transforms.
    fn difference(&self, other: &Self) -> (f64, f64) {
        self.0.difference(&other.0)
    }

    fn __repr__(&self) -> String {
        format!("RigidTransform({})", io::format_transform(&self.0))
    }
}

#[pyclass(name = "LabeledCloud", module = "semfuse", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLabeledCloud(LabeledCloud);

#[pymethods]
impl PyLabeledCloud {
    #[new]
    #[pyo3(signature = (positions, colors=None, labels=None))]
    fn new(positions: Vec<[f64; 3]>, colors: Option<Vec<[f64; 3]>>, labels: Option<Vec<Label>>) -> PyResult<Self> {
        let n = positions.len();
        if colors.as_ref().is_some_and(|c| c.len() != n) || labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(PyValueError::new_err("positions, colors and labels must have equal length"));
        }
        let points = (0..n)
            .map(|i| {
                LabeledPoint::new(
                    Vector3::from(positions[i]),
                    colors.as_ref().map_or([0.0; 3], |c| c[i]),
                    labels.as_ref().map_or(semfuse::UNLABELED, |l| l[i]),
                )
            })
            .collect();
        Ok(Self(LabeledCloud::new(points)))
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        io::read_ply(&path).map(Self).map_err(io_err)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_ply(&path, &self.0).map_err(io_err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn positions(&self) -> Vec<[f64; 3]> {
        self.0.points.iter().map(|p| p.position.into()).collect()
    }

    fn colors(&self) -> Vec<[f64; 3]> {
        self.0.points.iter().map(|p| p.color).collect()
    }

    fn labels(&self) -> Vec<Label> {
        self.0.labels()
    }

    fn transformed(&self, t: &PyRigidTransform) -> Self {
        Self(semfuse::apply_transform(&self.0, &t.0))
    }

    fn __repr__(&self) -> String {
        format!("LabeledCloud({} points)", self.0.len())
    }
}

#[pyclass(name = "RegistrationParams", module = "semfuse", skip_from_py_object)]
#[derive(Clone, Default)]
struct PyRegistrationParams(RegistrationParams);

macro_rules! params_fields {
    ($($name:ident : $ty:ty => $($path:ident).+),* $(,)?) => {
        #[pymethods]
        impl PyRegistrationParams {
            /// Defaults, overridden by keyword arguments.
            #[new]
            #[pyo3(signature = (**kwargs))]
            fn new(kwargs: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
                let mut p = Self::default();
                if let Some(kw) = kwargs {
                    for (k, v) in kw.iter() {
                        let key: String = k.extract()?;
                        match key.as_str() {
                            $(stringify!($name) => p.0.$($path).+ = v.extract()?,)*
                            "semantic_mode" => p.set_semantic_mode(v.extract()?)?,
                            "local_refine" => p.0.local_refine = v.extract()?,
                            _ => return Err(PyValueError::new_err(format!("unknown parameter {key:?}"))),
                        }
                    }
                }
                p.0.validate().map_err(value_err)?;
                Ok(p)
            }

            /// Registration parameters from a run config file.
            #[staticmethod]
            fn from_config(path: PathBuf) -> PyResult<Self> {
                io::read_run_config(&path).map(|c| Self(c.registration)).map_err(io_err)
            }

            #[getter]
            fn semantic_mode(&self) -> &'static str {
                match self.0.semantic {
                    SemanticDistance::Categorical => "categorical",
                    SemanticDistance::SquaredDifference => "squared",
                }
            }

            #[setter]
            fn set_semantic_mode(&mut self, mode: String) -> PyResult<()> {
                self.0.semantic = match mode.as_str() {
                    "categorical" => SemanticDistance::Categorical,
                    "squared" => SemanticDistance::SquaredDifference,
                    _ => return Err(PyValueError::new_err(format!("unknown semantic mode {mode:?}"))),
                };
                Ok(())
            }

            fn as_dict(&self) -> HashMap<&'static str, f64> {
                HashMap::from([$((stringify!($name), self.0.$($path).+ as f64)),*])
            }

            fn __repr__(&self) -> String {
                format!("{:?}", self.0)
            }

            fn __getattr__(&self, name: &str) -> PyResult<f64> {
                self.get(name)
                    .ok_or_else(|| pyo3::exceptions::PyAttributeError::new_err(name.to_string()))
            }

            #[getter]
            fn local_refine(&self) -> bool {
                self.0.local_refine
            }

            #[setter]
            fn set_local_refine(&mut self, on: bool) {
                self.0.local_refine = on;
            }
        }

        impl PyRegistrationParams {
            fn get(&self, name: &str) -> Option<f64> {
                match name {
                    $(stringify!($name) => Some(self.0.$($path).+ as f64),)*
                    _ => None,
                }
            }
        }
    };
}

params_fields! {
    w1: f64 => w1,
    w2: f64 => w2,
    reject_dist: f64 => reject_dist,
    max_iters: usize => max_iters,
    trans_eps: f64 => trans_eps,
    rot_eps: f64 => rot_eps,
    fuse_voxel: f64 => fuse_voxel,
    min_label_points: usize => min_label_points,
    plane_tol: f64 => prefilter.plane_tol,
    min_support_frac: f64 => prefilter.min_support_fraction,
    isolation_k: usize => prefilter.isolation_neighbors,
    isolation_radius: f64 => prefilter.isolation_radius,
    ransac_iters: usize => prefilter.ransac_iterations,
    max_planes: usize => prefilter.max_planes,
    seed: u64 => prefilter.seed,
}

/// Least-squares rigid transform taking `src` onto `tgt`.
#[pyfunction]
fn solve_rigid(src: Vec<[f64; 3]>, tgt: Vec<[f64; 3]>) -> PyResult<PyRigidTransform> {
    let a: Vec<_> = src.into_iter().map(Vector3::from).collect();
    let b: Vec<_> = tgt.into_iter().map(Vector3::from).collect();
    semfuse::solve_rigid(&a, &b).map(PyRigidTransform).map_err(value_err)
}

/// `(source index, target index, distance, lifted cost)` for every
/// retained correspondence.
#[pyfunction]
#[pyo3(signature = (src, tgt, params=None))]
fn match_7d(
    src: &PyLabeledCloud,
    tgt: &PyLabeledCloud,
    params: Option<&PyRegistrationParams>,
) -> PyResult<Vec<(usize, usize, f64, f64)>> {
    let params = params.map(|p| p.0.clone()).unwrap_or_default();
    params.validate().map_err(value_err)?;
    let set = semfuse::match_7d(&src.0, &tgt.0, &params);
    Ok(set
        .pairs
        .iter()
        .map(|c| (c.src_index, c.tgt_index, c.geom_dist, c.lifted_cost))
        .collect())
}

/// ICP from the identity. Returns `(transform, iterations, converged,
/// correspondences)`.
#[pyfunction]
#[pyo3(signature = (src, tgt, params=None))]
fn align_global(
    py: Python<'_>,
    src: &PyLabeledCloud,
    tgt: &PyLabeledCloud,
    params: Option<&PyRegistrationParams>,
) -> PyResult<(PyRigidTransform, usize, bool, usize)> {
    let params = params.map(|p| p.0.clone()).unwrap_or_default();
    let (src, tgt) = (&src.0, &tgt.0);
    py.detach(|| {
        semfuse::align_global(src, tgt, &params)
            .map(|g| (PyRigidTransform(g.transform), g.iterations, g.converged, g.correspondences.len()))
            .map_err(|e| e.to_string())
    })
    .map_err(PyValueError::new_err)
}

/// Voxel fusion of several clouds in a common frame.
#[pyfunction]
fn fuse(clouds: Vec<PyRef<'_, PyLabeledCloud>>, voxel: f64) -> PyResult<PyLabeledCloud> {
    if !(voxel.is_finite() && voxel > 0.0) {
        return Err(PyValueError::new_err("voxel must be > 0"));
    }
    let clouds: Vec<LabeledCloud> = clouds.iter().map(|c| c.0.clone()).collect();
    Ok(PyLabeledCloud(semfuse::fuse(&clouds, voxel)))
}

/// Registers and fuses the views of a manifest. Returns the fused cloud and
/// each view's transform into the first camera frame.
#[pyfunction]
#[pyo3(signature = (manifest, params=None))]
fn reconstruct(
    py: Python<'_>,
    manifest: PathBuf,
    params: Option<&PyRegistrationParams>,
) -> PyResult<(PyLabeledCloud, Vec<PyRigidTransform>)> {
    let views = io::load_views(&manifest).map_err(io_err)?;
    let params = params.map(|p| p.0.clone()).unwrap_or_default();
    let scene = py
        .detach(|| semfuse::reconstruct(&views, &params).map_err(|e| e.to_string()))
        .map_err(PyValueError::new_err)?;
    Ok((
        PyLabeledCloud(scene.cloud),
        scene.per_view_transforms.into_iter().map(PyRigidTransform).collect(),
    ))
}

fn raster<T>(data: Vec<T>, width: usize, height: usize) -> PyResult<Raster<T>> {
    Raster::from_vec(width, height, data).map_err(value_err)
}

/// Depth metrics over row-major rasters.
#[pyfunction]
#[pyo3(signature = (pred, gt, width, height, thresholds=None))]
fn depth_metrics(
    pred: Vec<f64>,
    gt: Vec<f64>,
    width: usize,
    height: usize,
    thresholds: Option<Vec<f64>>,
) -> PyResult<HashMap<String, f64>> {
    let thresholds = thresholds.unwrap_or_else(|| DEFAULT_DELTA_THRESHOLDS.to_vec());
    let m = metrics::depth_metrics(&raster(pred, width, height)?, &raster(gt, width, height)?, &thresholds)
        .map_err(value_err)?;
    let mut out = HashMap::from([
        ("rel".to_string(), m.rel),
        ("log10".to_string(), m.log10),
        ("rms".to_string(), m.rms),
        ("valid_pixels".to_string(), m.valid_pixels as f64),
    ]);
    for (t, acc) in m.delta_acc {
        out.insert(format!("delta_{t}"), acc);
    }
    Ok(out)
}

/// Segmentation metrics over row-major label rasters.
#[pyfunction]
fn seg_metrics(pred: Vec<Label>, gt: Vec<Label>, width: usize, height: usize, classes: usize) -> PyResult<HashMap<String, f64>> {
    let m = metrics::seg_metrics(&raster(pred, width, height)?, &raster(gt, width, height)?, classes)
        .map_err(value_err)?;
    let mut out = HashMap::from([
        ("pixel_acc".to_string(), m.pixel_acc),
        ("mean_acc".to_string(), m.mean_acc),
        ("mean_iou".to_string(), m.iou),
    ]);
    for c in m.per_class {
        out.insert(format!("class_{}.acc", c.label), c.accuracy);
        out.insert(format!("class_{}.iou", c.label), c.iou);
    }
    Ok(out)
}

/// `(accuracy, completeness)` of a reconstruction.
#[pyfunction]
#[pyo3(signature = (recon, gt, threshold=0.05))]
fn recon_metrics(recon: &PyLabeledCloud, gt: &PyLabeledCloud, threshold: f64) -> PyResult<(f64, f64)> {
    let m = metrics::recon_metrics(&recon.0, &gt.0, threshold).map_err(value_err)?;
    Ok((m.accuracy, m.completeness))
}

/// Raw HHA channels of one manifest view as row-major lists, plus the
/// image size and floor level.
#[pyfunction]
#[pyo3(signature = (manifest, view=0, radius=0.05, up=CAMERA_UP))]
fn hha(manifest: PathBuf, view: usize, radius: f64, up: [f64; 3]) -> PyResult<HashMap<String, Py<PyAny>>> {
    let entries = io::read_manifest(&manifest).map_err(io_err)?;
    let entry = entries
        .get(view)
        .ok_or_else(|| PyValueError::new_err(format!("view {view} out of range")))?;
    let v = io::load_view(entry).map_err(io_err)?;
    let params = HhaParams {
        normal_radius: radius,
        ..HhaParams::default()
    };
    let h = hha_encode(&v, &Vector3::from(up), &params).map_err(value_err)?;
    Python::attach(|py| {
        let mut out = HashMap::new();
        out.insert("width".into(), v.intrinsics.width.into_py_any(py)?);
        out.insert("height".into(), v.intrinsics.height.into_py_any(py)?);
        out.insert("floor_level".into(), h.floor_level.into_py_any(py)?);
        for (name, r) in [("disparity", h.disparity), ("height_above_floor", h.height), ("angle", h.angle)] {
            out.insert(name.into(), r.into_vec().into_py_any(py)?);
        }
        Ok(out)
    })
}

/// Renders the case described by a scene config into `out_dir`. Returns
/// the ground-truth transforms.
#[pyfunction]
fn synth(py: Python<'_>, config: PathBuf, out_dir: PathBuf) -> PyResult<Vec<PyRigidTransform>> {
    let cfg = io::read_synth_config(&config).map_err(io_err)?;
    let case = py
        .detach(|| generate_case(&cfg.scene, &cfg.poses, &cfg.intrinsics, &cfg.noise, &cfg.options).map_err(|e| e.to_string()))
        .map_err(PyValueError::new_err)?;
    io::write_case(&out_dir, &case).map_err(io_err)?;
    Ok(case.gt_transforms.into_iter().map(PyRigidTransform).collect())
}

#[pymodule(name = "semfuse")]
fn semfuse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRigidTransform>()?;
    m.add_class::<PyLabeledCloud>()?;
    m.add_class::<PyRegistrationParams>()?;
    m.add_function(wrap_pyfunction!(solve_rigid, m)?)?;
    m.add_function(wrap_pyfunction!(match_7d, m)?)?;
    m.add_function(wrap_pyfunction!(align_global, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(depth_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(seg_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(recon_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(hha, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add("UNLABELED", semfuse::UNLABELED)?;
    Ok(())
}
