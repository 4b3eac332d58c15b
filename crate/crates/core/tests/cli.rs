use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semfuse::io::{self, Report};

fn semfuse(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_semfuse"));
    for a in args {
        cmd.arg(a);
    }
    cmd.output().unwrap()
}

fn report(out: &Output) -> Report {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    Report::parse(&String::from_utf8_lossy(&out.stdout)).unwrap()
}

fn num(r: &Report, key: &str) -> f64 {
    r.get(key).unwrap_or_else(|| panic!("missing {key}")).parse().unwrap()
}

fn sample_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/room.cfg")
}

#[test]
fn synth_reconstruct_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let r = report(&semfuse(&[&"synth", &sample_config(), &"--out-dir", &d]));
    assert_eq!(r.get("views"), Some("3"));
    assert!(num(&r, "overlap_0_1") > 0.3);
    for f in ["manifest.txt", "gt_transforms.txt", "gt_cloud.ply", "view_0_depth.pfm", "view_2_labels.pgm", "view_1_color.ppm"] {
        assert!(d.join(f).exists(), "{f}");
    }

    let cfg = d.join("run.cfg");
    std::fs::write(&cfg, "# registration\nreject_dist 0.1\nmax_iters 60\nverbosity 0\n").unwrap();
    let out_ply = d.join("fused.ply");
    let report_path = d.join("report.txt");
    let out = semfuse(&[&"reconstruct", &d.join("manifest.txt"), &"--config", &cfg, &"--out", &out_ply, &"--report", &report_path]);
    let r = report(&out);
    assert!(out.stderr.is_empty(), "verbosity 0 should be quiet");
    assert_eq!(std::fs::read_to_string(&report_path).unwrap(), String::from_utf8_lossy(&out.stdout));
    assert_eq!(num(&r, "points") as usize, io::read_ply(&out_ply).unwrap().len());
    assert_eq!(r.get("view_0.transform"), Some(io::format_transform(&semfuse::RigidTransform::identity()).as_str()));

    // recovered transforms are close to the ground truth
    let gt_text = std::fs::read_to_string(d.join("gt_transforms.txt")).unwrap();
    let gt = Report::parse(&gt_text).unwrap();
    for i in 1..3 {
        let est = io::parse_transform(r.get(&format!("view_{i}.transform")).unwrap()).unwrap();
        let truth = io::parse_transform(gt.get(&format!("view_{i}.transform")).unwrap()).unwrap();
        let (angle, shift) = est.difference(&truth);
        assert!(angle.to_degrees() < 0.5 && shift < 0.02, "view {i}: {angle} rad, {shift} m");
    }

    let r = report(&semfuse(&[&"eval-recon", &out_ply, &d.join("gt_cloud.ply"), &"--threshold", &"0.05"]));
    assert!(num(&r, "completeness") > 0.95);
    assert!(num(&r, "accuracy") < 0.02);

    let depth = d.join("view_0_depth.pfm");
    let r = report(&semfuse(&[&"eval-depth", &depth, &depth, &"--thresholds", &"1.1,1.25"]));
    assert_eq!(num(&r, "rel"), 0.0);
    assert_eq!(num(&r, "delta_1.1"), 1.0);

    let labels = d.join("view_0_labels.pgm");
    let r = report(&semfuse(&[&"eval-seg", &labels, &labels, &"--classes", &"10"]));
    assert_eq!(num(&r, "pixel_acc"), 1.0);

    let hha = d.join("hha.pfm");
    let r = report(&semfuse(&[&"hha", &d.join("manifest.txt"), &"--view", &"1", &"--out", &hha, &"--radius", &"0.1"]));
    assert!(r.get("floor_level").is_some());
    let img = io::read_pfm(&hha).unwrap();
    assert_eq!((img.width, img.height, img.channels), (160, 120, 3));
}

#[test]
fn failures_exit_nonzero_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = semfuse(&[&"eval-recon", &d.join("missing.ply"), &d.join("missing.ply")]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: ") && err.contains("missing.ply"), "{err}");
    assert!(out.stdout.is_empty());

    let cfg = d.join("bad.cfg");
    std::fs::write(&cfg, "w1 0.1\nw1 0.2\n").unwrap();
    let manifest = d.join("m.txt");
    std::fs::write(&manifest, "view\ncolor c.ppm\ndepth d.pfm\nlabels l.pgm\nintrinsics 1 1 0 0 2 2\n").unwrap();
    let out = semfuse(&[&"reconstruct", &manifest, &"--config", &cfg, &"--out", &d.join("o.ply")]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.cfg:2"), "{err}");

    let out = semfuse(&[&"reconstruct", &manifest, &"--out", &d.join("o.ply")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("c.ppm"));

    let out = semfuse(&[&"eval-depth", &d.join("a.pfm"), &d.join("b.pfm"), &"--thresholds", &"1.25,abc"]);
    assert_eq!(out.status.code(), Some(1));

    let out = semfuse(&[&"frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "room 0 0 0 1 1 1\ncamera 10 10 4.5 4.5 10 10\nbox 1 0.5 0.5 0.5 0.5 0.5 0.5 0 0.2 0.2\n").unwrap();
    let out = semfuse(&[&"synth", &cfg, &"--out-dir", &dir.path()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("s.cfg:3"), "{err}");
}
