#![allow(dead_code)]

use semfuse::synth::{camera_pose, Primitive, SceneSpec};
use semfuse::{Intrinsics, LabeledCloud, RigidTransform};

/// The furnished room with three nearby cameras.
pub fn room_case_setup() -> (SceneSpec, Vec<RigidTransform>, Intrinsics) {
    let scene = SceneSpec::furnished_room(7);
    let poses = vec![
        camera_pose([0.0, 0.0, 0.0], 0.0, 10.0),
        camera_pose([0.03, 0.0, 0.03], 3.0, 10.0),
        camera_pose([-0.03, 0.01, 0.02], -3.0, 12.0),
    ];
    let intr = Intrinsics::centered(200.0, 320, 240).unwrap();
    (scene, poses, intr)
}

/// Two identical boxes with different labels, point symmetric about the
/// vertical axis through the origin. No floor, so geometry alone cannot
/// tell them apart.
pub fn symmetric_boxes_scene() -> SceneSpec {
    let mut scene = SceneSpec::new([-3.0, -1.0, -3.0], [3.0, 3.0, 3.0], 3);
    scene.texture = 0.0;
    let color = [0.6, 0.6, 0.6];
    scene.primitives.push(Primitive::cuboid([-0.5, 2.0, 0.1], [0.5, 0.4, 0.25], 25.0, 1, color));
    scene.primitives.push(Primitive::cuboid([0.5, 2.0, -0.1], [0.5, 0.4, 0.25], 25.0, 2, color));
    scene
}

/// Camera above the boxes looking straight down, rolled about its optical
/// axis by `roll_deg`.
pub fn top_down_pose(position: [f64; 3], roll_deg: f64) -> RigidTransform {
    let down = camera_pose(position, 0.0, 90.0);
    let roll = RigidTransform::from_axis_angle(nalgebra::Vector3::z(), roll_deg.to_radians(), nalgebra::Vector3::zeros());
    down.compose(&roll)
}

/// Mean displacement between two transforms over a cloud.
pub fn mean_displacement(cloud: &LabeledCloud, a: &RigidTransform, b: &RigidTransform) -> f64 {
    cloud
        .points
        .iter()
        .map(|p| (a.apply(&p.position) - b.apply(&p.position)).norm())
        .sum::<f64>()
        / cloud.len() as f64
}

/// Malformed raster and PLY files: `(name, bytes)`. Every one must be
/// rejected by the matching reader.
pub fn malformed_corpus() -> Vec<(&'static str, Vec<u8>)> {
    let mut v: Vec<(&'static str, Vec<u8>)> = Vec::new();
    let pfm_ok = {
        let mut b = b"Pf\n2 2\n-1.0\n".to_vec();
        for x in [1.0f32, 2.0, 3.0, 4.0] {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b
    };
    let pgm_ok = b"P5\n2 2\n255\n\x01\x02\x03\x04".to_vec();
    let ppm_ok = {
        let mut b = b"P6\n2 1\n255\n".to_vec();
        b.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        b
    };
    let ply_ok = {
        let mut b = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty ushort label\nend_header\n".to_vec();
        for _ in 0..2 {
            for x in [1.0f32, 2.0, 3.0] {
                b.extend_from_slice(&x.to_le_bytes());
            }
            b.extend_from_slice(&7u16.to_le_bytes());
        }
        b
    };

    // PFM
    v.push(("pfm_empty.pfm", Vec::new()));
    v.push(("pfm_bad_magic.pfm", [b"PX".as_slice(), &pfm_ok[2..]].concat()));
    v.push(("pfm_truncated.pfm", pfm_ok[..pfm_ok.len() - 3].to_vec()));
    v.push(("pfm_trailing.pfm", [pfm_ok.as_slice(), b"xx"].concat()));
    v.push(("pfm_dimension_lie.pfm", [b"Pf\n3 2\n-1.0\n".as_slice(), &pfm_ok[12..]].concat()));
    v.push(("pfm_zero_width.pfm", b"Pf\n0 2\n-1.0\n".to_vec()));
    v.push(("pfm_negative_height.pfm", b"Pf\n2 -2\n-1.0\n".to_vec()));
    v.push(("pfm_zero_scale.pfm", [b"Pf\n2 2\n0.0\n".as_slice(), &pfm_ok[12..]].concat()));
    v.push(("pfm_header_only.pfm", b"Pf\n2 2\n".to_vec()));
    v.push(("pfm_huge.pfm", b"Pf\n100000 100000\n-1.0\n".to_vec()));
    v.push(("pfm_text_dims.pfm", b"Pf\ntwo 2\n-1.0\n".to_vec()));
    // PGM / PPM
    v.push(("pgm_bad_magic.pgm", [b"P2".as_slice(), &pgm_ok[2..]].concat()));
    v.push(("pgm_truncated.pgm", pgm_ok[..pgm_ok.len() - 1].to_vec()));
    v.push(("pgm_trailing.pgm", [pgm_ok.as_slice(), b"\x00"].concat()));
    v.push(("pgm_dimension_lie.pgm", b"P5\n3 3\n255\n\x01\x02\x03\x04".to_vec()));
    v.push(("pgm_maxval_zero.pgm", b"P5\n2 2\n0\n\x00\x00\x00\x00".to_vec()));
    v.push(("pgm_maxval_big.pgm", b"P5\n2 2\n70000\n\x00\x00\x00\x00\x00\x00\x00\x00".to_vec()));
    v.push(("pgm_sample_over_maxval.pgm", b"P5\n2 2\n3\n\x01\x02\x03\x04".to_vec()));
    v.push(("pgm_16bit_truncated.pgm", b"P5\n2 2\n65535\n\x00\x01\x00\x02\x00".to_vec()));
    v.push(("pgm_no_separator.pgm", b"P5\n2 2\n255".to_vec()));
    v.push(("ppm_truncated.ppm", ppm_ok[..ppm_ok.len() - 2].to_vec()));
    v.push(("ppm_is_pgm.ppm", pgm_ok.clone()));
    v.push(("ppm_dimension_lie.ppm", [b"P6\n3 1\n255\n".as_slice(), &ppm_ok[11..]].concat()));
    // PLY
    v.push(("ply_bad_magic.ply", [b"plx".as_slice(), &ply_ok[3..]].concat()));
    v.push(("ply_truncated.ply", ply_ok[..ply_ok.len() - 5].to_vec()));
    v.push(("ply_trailing.ply", [ply_ok.as_slice(), b"\x00\x00"].concat()));
    v.push(("ply_count_lie.ply", String::from_utf8_lossy(&ply_ok).replace("vertex 2", "vertex 3").into_bytes()));
    v.push(("ply_no_end_header.ply", b"ply\nformat binary_little_endian 1.0\nelement vertex 0\n".to_vec()));
    v.push(("ply_big_endian.ply", String::from_utf8_lossy(&ply_ok[..ply_ok.len() - 28]).replace("binary_little_endian", "binary_big_endian").into_bytes()));
    v.push(("ply_missing_z.ply", b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n".to_vec()));
    v.push(("ply_ascii_short_row.ply", b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2\n".to_vec()));
    v.push(("ply_ascii_nan.ply", b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 nan 2\n".to_vec()));
    v.push(("ply_bad_type.ply", b"ply\nformat ascii 1.0\nelement vertex 1\nproperty quad x\nend_header\n1\n".to_vec()));
    v.push(("ply_faces.ply", b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 0 0\n".to_vec()));
    v
}

/// Which reader a corpus file goes through, by extension.
pub fn read_any(path: &std::path::Path) -> Result<(), semfuse::io::IoError> {
    use semfuse::io;
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => io::read_depth_pfm(path).map(drop),
        Some("pgm") => io::read_labels_pgm(path).map(drop),
        Some("ppm") => io::read_color_ppm(path).map(drop),
        Some("ply") => io::read_ply(path).map(drop),
        _ => panic!("unexpected corpus file {}", path.display()),
    }
}
