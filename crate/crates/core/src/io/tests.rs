use proptest::prelude::*;

use super::*;
use crate::tasks::{make_synthetic_dataset, CLASS_NAMES};

#[test]
fn xyz_basic_and_comments() {
    let c = parse_xyz("0 0 0\n1 0 0\n").unwrap();
    assert_eq!(c.coords(), &[[0.0; 3], [1.0, 0.0, 0.0]]);
    let c = parse_xyz("# header\n\n1 2 3 # trailing\n  4 5 6 7\n").unwrap();
    assert_eq!(c.coords(), &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
}

#[test]
fn xyz_errors_carry_lines() {
    match parse_xyz("# a\n# b\n") {
        Err(Error::Parse { message, .. }) => assert_eq!(message, "empty cloud"),
        other => panic!("{other:?}"),
    }
    match parse_xyz("0 0 0\n1 x 0\n") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    match parse_xyz("0 0 0\n\n1 0\n") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    assert!(parse_xyz("nan 0 0\n").is_err());
}

const PLY: &str = "ply
format ascii 1.0
comment hand made
element vertex 3
property float y
property float x
property uchar red
property float z
element face 1
property list uchar int vertex_indices
end_header
1 0 255 0.5
0 1 0 -2
3.5 2 10 1e-3
3 0 1 2
";

#[test]
fn ply_fixture() {
    let c = parse_ply(PLY).unwrap();
    assert_eq!(c.coords(), &[[0.0, 1.0, 0.5], [1.0, 0.0, -2.0], [2.0, 3.5, 1e-3]]);
}

#[test]
fn ply_skips_elements_before_vertices() {
    let text = "ply\nformat ascii 1.0\nelement camera 2\nproperty float f\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n9\n8\n1 2 3\n";
    assert_eq!(parse_ply(text).unwrap().coords(), &[[1.0, 2.0, 3.0]]);
}

#[test]
fn ply_errors() {
    let short = PLY.replace("element vertex 3", "element vertex 5");
    assert!(matches!(parse_ply(&short), Err(Error::Parse { .. })));
    let binary = PLY.replace("format ascii 1.0", "format binary_little_endian 1.0");
    match parse_ply(&binary) {
        Err(Error::Parse { line, message }) => {
            assert_eq!(line, 2);
            assert!(message.contains("binary_little_endian"));
        }
        other => panic!("{other:?}"),
    }
    assert!(parse_ply("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n").is_err());
    assert!(parse_ply("xyz\n").is_err());
    let bad_row = PLY.replace("0 1 0 -2", "0 1 0");
    match parse_ply(&bad_row) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 13),
        other => panic!("{other:?}"),
    }
}

#[test]
fn formats_from_extension() {
    assert_eq!(CloudFormat::from_path(Path::new("a.XYZ")).unwrap(), CloudFormat::Xyz);
    assert_eq!(CloudFormat::from_path(Path::new("a.ply")).unwrap(), CloudFormat::PlyAscii);
    assert!(CloudFormat::from_path(Path::new("a.obj")).is_err());
}

#[test]
fn coordinate_printing() {
    assert_eq!(format_coord(0.1), "0.1");
    assert_eq!(format_coord(-0.0), "0");
    assert_eq!(format_coord(1.0 / 3.0), "0.333333333");
    assert_eq!(format_coord(123456789012.0), "123456789000");
    assert_eq!(format_coord(2.0), "2");
}

fn cloud_strategy() -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::array::uniform3(-1e4f64..1e4), 1..20)
        .prop_map(|pts| PointCloud::new(pts).unwrap())
}

proptest! {
    #[test]
    fn round_trip_is_stable(cloud in cloud_strategy()) {
        for fmt in [CloudFormat::Xyz, CloudFormat::PlyAscii] {
            let once = cloud_to_string(&cloud, fmt);
            let back = parse_cloud_str(&once, fmt).unwrap();
            prop_assert_eq!(back.len(), cloud.len());
            for (a, b) in cloud.coords().iter().zip(back.coords()) {
                for k in 0..3 {
                    let tol = a[k].abs().max(1e-300) * 1e-8;
                    prop_assert!((a[k] - b[k]).abs() <= tol);
                }
            }
            prop_assert_eq!(cloud_to_string(&back, fmt), once);
        }
    }
}

#[test]
fn score_csv_has_one_row_per_point() {
    let cloud = parse_xyz("0 0 0\n1 0 0\n").unwrap();
    let t = ScoreTable {
        point_score: vec![0.0, 1.0],
        shape_score: vec![0.5, 0.5],
        total: vec![0.1, 0.9],
        alpha: 0.8,
    };
    let csv = score_csv(&cloud, &t).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], SCORE_HEADER);
    assert_eq!(lines[2], "1,1,0,0,1,0.5,0.9");
    assert_eq!(lines.len(), 3);
}

#[test]
fn report_tables() {
    let rows = vec![
        EvalRow { sampler: "fps".into(), m: 32, accuracy: 0.5 },
        EvalRow { sampler: "fps".into(), m: 64, accuracy: 0.75 },
    ];
    assert_eq!(eval_csv(&rows), "sampler,M,accuracy\nfps,32,0.5\nfps,64,0.75\n");
    let s = eval_summary(&rows);
    assert_eq!(s["by_sampler"]["fps"]["64"], 0.75);
    assert_eq!(s["rows"][0]["M"], 32);
    let ab = vec![AblationRow { sweep: "k".into(), k: 8, alpha: 0.8, accuracy: 1.0 }];
    assert_eq!(ablation_csv(&ab), "sweep,k,alpha,accuracy\nk,8,0.8,1\n");
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let clouds = make_synthetic_dataset(2, 16, 3).unwrap();
    let data = Dataset { clouds, classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect() };
    write_dataset_dir(dir.path(), "train", &data).unwrap();
    let back = load_dataset_dir(dir.path(), "train").unwrap();
    // Directory order is alphabetical: cone, cube, cylinder, sphere.
    assert_eq!(back.classes, vec!["cone", "cube", "cylinder", "sphere"]);
    assert_eq!(back.clouds.len(), 8);
    assert_eq!(back.clouds[0].label, 0);
    assert_eq!(back.clouds[0].cloud.len(), 16);
    assert!(load_dataset_dir(dir.path(), "test").is_err());
}

#[test]
fn saved_models_reload_exactly() {
    use crate::tasks::{ClassifierConfig, PointNetClassifier, RepsClassifier};
    let dir = tempfile::tempdir().unwrap();
    let classes: Vec<String> = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    let reps = RepsClassifier::new(ClassifierConfig { k: 4, ..ClassifierConfig::desk() }, 7).unwrap();
    let path = dir.path().join("r.bin");
    save_model(&path, &SavedModel::Reps(reps.clone()), &classes).unwrap();
    let (back, names) = load_model(&path).unwrap();
    assert_eq!(names, classes);
    assert_eq!(back.kind(), "reps");
    assert_eq!(back.store().checksum(), reps.store.checksum());

    let pn = PointNetClassifier::new(4, 3).unwrap();
    let path = dir.path().join("p.bin");
    save_model(&path, &SavedModel::PointNet(pn.clone()), &classes).unwrap();
    let (back, _) = load_model(&path).unwrap();
    assert_eq!(back.store().checksum(), pn.store.checksum());

    std::fs::write(&path, b"REPS\x01\x00\x00\x00").unwrap();
    assert!(load_model(&path).is_err());
}
