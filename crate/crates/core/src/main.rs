use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::Vector3;

use semfuse::encoding::{hha_encode, HhaParams, CAMERA_UP};
use semfuse::io::{self, Report, RunConfig};
use semfuse::metrics::{depth_metrics, recon_metrics, seg_metrics};
use semfuse::registration::{reconstruct, RefinementStatus, RegistrationError};
use semfuse::synth::generate_case;

#[derive(Parser)]
#[command(name = "semfuse", version, about = "Semantic multi-view point cloud fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register and fuse the views listed in a manifest.
    Reconstruct {
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output point cloud (binary PLY).
        #[arg(long)]
        out: PathBuf,
        /// Also write the key-value report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Depth error metrics between two depth maps.
    EvalDepth {
        pred: PathBuf,
        gt: PathBuf,
        /// Comma-separated accuracy thresholds.
        #[arg(long)]
        thresholds: Option<String>,
        /// Meters per unit for integer (.pgm) depth.
        #[arg(long)]
        depth_scale: Option<f64>,
    },
    /// Segmentation metrics between two label maps.
    EvalSeg {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        classes: usize,
    },
    /// Accuracy and completeness of a reconstruction against ground truth.
    EvalRecon {
        recon: PathBuf,
        gt: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
    },
    /// Geocentric HHA encoding of one view, written as a 3-channel PFM.
    Hha {
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long)]
        out: PathBuf,
        /// Gravity up direction in camera coordinates, "x,y,z".
        #[arg(long)]
        up: Option<String>,
        /// Normal estimation radius, meters.
        #[arg(long)]
        radius: Option<f64>,
        /// Write unnormalized channels (NaN where undefined).
        #[arg(long)]
        raw: bool,
    },
    /// Render a synthetic multi-view case with ground truth.
    Synth {
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

type Res<T> = Result<T, Box<dyn Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(report) => {
            print!("{}", report.render());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                msg.push_str(&format!("\n  caused by: {s}"));
                source = s.source();
            }
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Res<Report> {
    match command {
        Command::Reconstruct {
            manifest,
            config,
            out,
            report,
        } => {
            let cfg = match config {
                Some(p) => io::read_run_config(&p)?,
                None => RunConfig::default(),
            };
            let r = cmd_reconstruct(&manifest, &cfg, &out)?;
            if let Some(path) = report {
                std::fs::write(&path, r.render()).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            Ok(r)
        }
        Command::EvalDepth {
            pred,
            gt,
            thresholds,
            depth_scale,
        } => {
            let thresholds = match thresholds {
                Some(s) => io::parse_thresholds(&s)?,
                None => semfuse::metrics::DEFAULT_DELTA_THRESHOLDS.to_vec(),
            };
            let p = io::read_depth(&pred, depth_scale)?;
            let g = io::read_depth(&gt, depth_scale)?;
            let m = depth_metrics(&p, &g, &thresholds)?;
            let mut r = Report::default();
            r.push("rel", m.rel);
            r.push("log10", m.log10);
            r.push("rms", m.rms);
            for (t, acc) in &m.delta_acc {
                r.push(&format!("delta_{t}"), acc);
            }
            r.push("valid_pixels", m.valid_pixels);
            Ok(r)
        }
        Command::EvalSeg { pred, gt, classes } => {
            let p = io::read_labels_pgm(&pred)?;
            let g = io::read_labels_pgm(&gt)?;
            let m = seg_metrics(&p, &g, classes)?;
            let mut r = Report::default();
            r.push("pixel_acc", m.pixel_acc);
            r.push("mean_acc", m.mean_acc);
            r.push("mean_iou", m.iou);
            for c in &m.per_class {
                r.push(&format!("class_{}.support", c.label), c.support);
                r.push(&format!("class_{}.acc", c.label), c.accuracy);
                r.push(&format!("class_{}.iou", c.label), c.iou);
            }
            Ok(r)
        }
        Command::EvalRecon {
            recon,
            gt,
            threshold,
        } => {
            let a = io::read_ply(&recon)?;
            let b = io::read_ply(&gt)?;
            let m = recon_metrics(&a, &b, threshold)?;
            let mut r = Report::default();
            r.push("threshold", m.threshold);
            r.push("accuracy", m.accuracy);
            r.push("completeness", m.completeness);
            r.push("recon_points", a.len());
            r.push("gt_points", b.len());
            Ok(r)
        }
        Command::Hha {
            manifest,
            view,
            out,
            up,
            radius,
            raw,
        } => {
            let entries = io::read_manifest(&manifest)?;
            let entry = entries.get(view).ok_or_else(|| {
                format!("view {view} out of range, manifest lists {}", entries.len())
            })?;
            let v = io::load_view(entry)?;
            let up = match up {
                Some(s) => parse_vec3(&s)?,
                None => Vector3::from(CAMERA_UP),
            };
            let mut params = HhaParams::default();
            if let Some(r) = radius {
                params.normal_radius = r;
            }
            let hha = hha_encode(&v, &up, &params)?;
            let image = if raw {
                let d = hha.disparity.as_slice();
                let h = hha.height.as_slice();
                let a = hha.angle.as_slice();
                let data = (0..d.len()).map(|i| [d[i], h[i], a[i]]).collect();
                semfuse::Raster::from_vec(d.len() / v.intrinsics.height, v.intrinsics.height, data)?
            } else {
                hha.normalized()
            };
            io::write_rgb_pfm(&out, &image)?;
            let mut r = Report::default();
            r.push("floor_level", hha.floor_level);
            for (name, (lo, hi)) in ["disparity", "height", "angle"].iter().zip(hha.ranges) {
                r.push(&format!("{name}.min"), lo);
                r.push(&format!("{name}.max"), hi);
            }
            Ok(r)
        }
        Command::Synth { config, out_dir } => {
            let cfg = io::read_synth_config(&config)?;
            let case = generate_case(&cfg.scene, &cfg.poses, &cfg.intrinsics, &cfg.noise, &cfg.options)?;
            io::write_case(&out_dir, &case)?;
            let mut r = Report::default();
            r.push("views", case.views.len());
            r.push("gt_points", case.gt_cloud.len());
            for j in 1..case.views.len() {
                for i in 0..j {
                    r.push(&format!("overlap_{i}_{j}"), case.overlap[i][j]);
                }
            }
            Ok(r)
        }
    }
}

fn parse_vec3(s: &str) -> Res<Vector3<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("invalid vector {s:?}, expected x,y,z"))?;
    match v.as_slice() {
        [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
        _ => Err(format!("invalid vector {s:?}, expected x,y,z").into()),
    }
}

fn cmd_reconstruct(manifest: &Path, cfg: &RunConfig, out: &Path) -> Res<Report> {
    let views = io::load_views(manifest)?;
    let params = &cfg.registration;
    let scene = match reconstruct(&views, params) {
        Ok(s) => s,
        Err(RegistrationError::Pipeline {
            view,
            partial,
            source,
        }) => {
            if cfg.verbosity > 0 {
                eprintln!(
                    "views 0..{view} fused into {} points before the failure",
                    partial.cloud.len()
                );
            }
            return Err(RegistrationError::Pipeline {
                view,
                partial,
                source,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    io::write_ply(out, &scene.cloud)?;

    let mut r = Report::default();
    r.push("views", views.len());
    r.push("points", scene.cloud.len());
    for (i, (t, rep)) in scene.per_view_transforms.iter().zip(&scene.reports).enumerate() {
        let k = |s: &str| format!("view_{i}.{s}");
        r.push(&k("input_points"), rep.input_points);
        r.push(&k("filtered_points"), rep.filtered_points);
        r.push(&k("iterations"), rep.iterations);
        r.push(&k("converged"), rep.converged);
        r.push(&k("correspondences"), rep.correspondences);
        r.push(&k("transform"), io::format_transform(t));
        if let Some(local) = &rep.local {
            for lr in &local.refinements {
                let status = match &lr.status {
                    RefinementStatus::Refined { iterations, converged } => {
                        format!("refined iterations={iterations} converged={converged}")
                    }
                    RefinementStatus::UnmatchedLabel => "unmatched".to_string(),
                    RefinementStatus::TooFewPoints { source, target } => {
                        format!("too_few_points source={source} target={target}")
                    }
                    RefinementStatus::Degenerate(why) => format!("degenerate {}", why.replace(' ', "_")),
                };
                r.push(&k(&format!("label_{}", lr.label)), status);
            }
        }
        if cfg.verbosity > 1 {
            eprintln!(
                "view {i}: {} -> {} points, {} iterations (converged: {}), {} pairs, rotation {:.4} deg, translation {:.4} m",
                rep.input_points,
                rep.filtered_points,
                rep.iterations,
                rep.converged,
                rep.correspondences,
                t.rotation_angle().to_degrees(),
                t.translation.norm()
            );
        }
    }
    if cfg.verbosity > 0 {
        eprintln!(
            "fused {} views into {} points -> {}",
            views.len(),
            scene.cloud.len(),
            out.display()
        );
    }
    Ok(r)
}
