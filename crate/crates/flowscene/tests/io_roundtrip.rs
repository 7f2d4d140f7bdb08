//! Round trips of every on-disk format, and rejection of damaged files.

use flowscene::fsgr::{self, Tensor};
use flowscene::kittiio::{self, LearningMap};
use flowscene::pgm::{self, GrayImage};
use flowscene::{flo, ply};
use flowscene_core::{FlowField, GridSpec, SemanticVoxelGrid};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f32> {
    prop_oneof![-1e6f32..1e6, Just(0.0), Just(-0.0), Just(f32::MIN_POSITIVE)]
}

fn tensor() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..5, 0..4).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        prop::collection::vec(finite(), n).prop_map(move |data| Tensor::new(dims.clone(), data).unwrap())
    })
}

fn flow() -> impl Strategy<Value = FlowField> {
    (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
        (prop::collection::vec(finite(), h * w), prop::collection::vec(finite(), h * w))
            .prop_map(move |(dx, dy)| FlowField::new(h, w, dx, dy).unwrap())
    })
}

fn same_bits(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

proptest! {
    #[test]
    fn fsgr_roundtrip(t in tensor()) {
        let back = fsgr::decode(&fsgr::encode(&t)).unwrap();
        prop_assert_eq!(&back.dims, &t.dims);
        prop_assert!(same_bits(&back.data, &t.data));
    }

    #[test]
    fn fsgr_truncation_detected(t in tensor(), cut in 1usize..8) {
        let bytes = fsgr::encode(&t);
        let cut = cut.min(bytes.len());
        prop_assert!(fsgr::decode(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn flo_roundtrip(f in flow()) {
        let back = flo::decode(&flo::encode(&f)).unwrap();
        prop_assert_eq!((back.height(), back.width()), (f.height(), f.width()));
        prop_assert!(same_bits(back.dx(), f.dx()));
        prop_assert!(same_bits(back.dy(), f.dy()));
    }

    #[test]
    fn label_roundtrip(labels in prop::collection::vec(any::<u16>(), 2 * 3 * 4)) {
        let back = kittiio::decode_labels(&kittiio::encode_labels(&labels), [2, 3, 4]).unwrap();
        prop_assert_eq!(back, labels);
    }

    #[test]
    fn bitmask_roundtrip(bits in prop::collection::vec(any::<bool>(), 4 * 4 * 8)) {
        let bytes = kittiio::encode_bitmask(&bits).unwrap();
        prop_assert_eq!(bytes.len(), bits.len() / 8);
        prop_assert_eq!(kittiio::decode_bitmask(&bytes, [4, 4, 8]).unwrap(), bits);
    }

    #[test]
    fn pgm_roundtrip(w in 1usize..9, h in 1usize..9, maxval in 1u8..=255, seed in any::<u64>()) {
        let data = (0..w * h).map(|i| ((seed >> (i % 64)) as u8) % maxval).collect();
        let img = GrayImage::new(w, h, maxval, data).unwrap();
        prop_assert_eq!(pgm::decode(&pgm::encode(&img)).unwrap(), img);
    }

    #[test]
    fn ply_roundtrip(labels in prop::collection::vec(0u16..4, 3 * 2 * 2)) {
        let spec = GridSpec::new([3, 2, 2], 0.4, [0.0, -0.4, -0.4]).unwrap();
        let grid = SemanticVoxelGrid::fully_valid(spec, 4, labels.clone()).unwrap();
        let mesh = ply::voxel_mesh(&grid, &ply::default_palette(4)).unwrap();
        let occupied = labels.iter().filter(|&&l| l != 0).count();
        prop_assert_eq!(mesh.voxel_count(), Some(occupied));
        prop_assert_eq!(mesh.vertices.len(), 8 * occupied);
        prop_assert_eq!(mesh.faces.len(), 6 * occupied);
        let back = ply::decode(&ply::encode(&mesh).unwrap()).unwrap();
        prop_assert_eq!(back, mesh);
    }
}

#[test]
fn files_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);

    let t = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, -0.0, 7.25]).unwrap();
    fsgr::write(&t, &p("t.fsgr")).unwrap();
    assert_eq!(fsgr::read(&p("t.fsgr")).unwrap(), t);

    let f = FlowField::constant(2, 3, 1.5, -0.5);
    flo::write_flo(&f, &p("f.flo")).unwrap();
    assert_eq!(flo::read_flo(&p("f.flo")).unwrap(), f);

    let labels: Vec<u16> = (0..16).collect();
    kittiio::write_labels(&labels, &p("x.label")).unwrap();
    assert_eq!(kittiio::read_labels(&p("x.label"), [2, 2, 4]).unwrap(), labels);
    assert!(kittiio::read_labels(&p("x.label"), [2, 2, 2]).is_err());
}

#[test]
fn semantic_kitti_learning_map_document() {
    let yaml = "labels:\n  0: unlabeled\n  10: car\nlearning_map:\n  0: 0\n  10: 1\n  252: 1\n";
    let m = LearningMap::parse(yaml).unwrap();
    assert_eq!(m.get(252), Some(1));
    assert_eq!(m.get(11), None);
    assert_eq!(m.num_classes(), 2);
}

#[test]
fn real_kitti_calibration() {
    let text = "P0: 7.188560000000e+02 0.000000000000e+00 6.071928000000e+02 0.000000000000e+00 0.000000000000e+00 7.188560000000e+02 1.852157000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P2: 7.188560000000e+02 0.000000000000e+00 6.071928000000e+02 4.538225000000e+01 0.000000000000e+00 7.188560000000e+02 1.852157000000e+02 -1.130887000000e-01 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 3.779761000000e-03
Tr: 4.276802385584e-04 -9.999672484946e-01 -8.084491683471e-03 -1.198459927713e-02 -7.210626507497e-03 8.081198471645e-03 -9.999413164504e-01 -5.403984729748e-02 9.999738645903e-01 4.859485810390e-04 -7.206933692422e-03 -2.921968648686e-01
";
    let cam = kittiio::parse_calib(text).unwrap();
    assert_eq!((cam.fx, cam.cx, cam.cy), (718.856, 607.1928, 185.2157));
    // the camera looks down ego +X: the optical axis maps to roughly (1, 0, 0)
    let fwd = cam.cam_to_ego([0.0, 0.0, 10.0]);
    let origin = cam.cam_to_ego([0.0, 0.0, 0.0]);
    assert!((fwd[0] - origin[0] - 10.0).abs() < 0.01, "{fwd:?}");
    let back = kittiio::parse_calib(&kittiio::format_calib(&cam)).unwrap();
    for (a, b) in back.rotation.iter().flatten().zip(cam.rotation.iter().flatten()) {
        assert!((a - b).abs() < 1e-6);
    }
}
