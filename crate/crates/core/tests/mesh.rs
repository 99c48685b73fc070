//! Surface meshes and the binary matrix container.

use magres::container::{read_matrix, read_matrix_file, write_matrix, write_matrix_file, ContainerError};
use magres::linalg::CMatrix;
use magres::mesh::{dist, MeshError, ShapeTag, SurfaceMesh};
use num_complex::Complex64;
use proptest::prelude::*;
use serde_json::json;
use std::f64::consts::PI;

fn tetrahedron() -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let v = vec![[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
    // Outward orientation.
    let t = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    (v, t)
}

#[test]
fn icosphere_panel_count_and_exact_area() {
    for m in 1..=6 {
        let mesh = SurfaceMesh::icosphere([0.5, -0.2, 1.0], 1.7, m).unwrap();
        assert_eq!(mesh.n_panels(), 20 * m * m);
        let area = 4.0 * PI * 1.7 * 1.7;
        assert!((mesh.total_area() - area).abs() < 1e-11 * area, "m={m}");
    }
}

#[test]
fn icosphere_normals_point_outward() {
    let c = [0.3, 0.1, -0.4];
    let mesh = SurfaceMesh::icosphere(c, 2.0, 4).unwrap();
    for p in &mesh.panels {
        let r = [p.centroid[0] - c[0], p.centroid[1] - c[1], p.centroid[2] - c[2]];
        let rn = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        assert!((rn - 2.0).abs() < 1e-12, "collocation point lies on the sphere");
        let cosang = (r[0] * p.normal[0] + r[1] * p.normal[1] + r[2] * p.normal[2]) / rn;
        assert!(cosang > 1.0 - 1e-12);
    }
    assert!(mesh.signed_volume() > 0.0);
}

#[test]
fn flat_volume_converges_to_ball_volume() {
    let exact = 4.0 / 3.0 * PI;
    let errs: Vec<f64> = [2, 4, 8].iter().map(|&m| (SurfaceMesh::icosphere([0.0; 3], 1.0, m).unwrap().signed_volume() - exact).abs()).collect();
    assert!(errs[1] < 0.3 * errs[0] && errs[2] < 0.3 * errs[1], "{errs:?}");
}

#[test]
fn ellipsoid_mesh_is_valid_and_converges() {
    let (a, b, c) = (1.5, 1.0, 0.6);
    let exact = 4.0 / 3.0 * PI * a * b * c;
    let v4 = SurfaceMesh::ellipsoid([0.0; 3], [a, b, c], 4).unwrap().signed_volume();
    let v8 = SurfaceMesh::ellipsoid([0.0; 3], [a, b, c], 8).unwrap().signed_volume();
    assert!(v4 > 0.0 && v8 > v4 && v8 < exact);
    assert!((exact - v8) < 0.3 * (exact - v4));
    let (lo, hi) = SurfaceMesh::ellipsoid([0.0; 3], [a, b, c], 4).unwrap().bounding_box();
    assert!((hi[0] - a).abs() < 1e-12 && (lo[2] + c).abs() < 1e-12);
}

#[test]
fn invalid_meshes_are_rejected() {
    let (v, mut t) = tetrahedron();
    assert!(SurfaceMesh::new(v.clone(), t.clone(), ShapeTag::General).is_ok());
    // Flip one face: inconsistent orientation.
    t[0] = [0, 2, 1];
    assert!(matches!(SurfaceMesh::new(v.clone(), t, ShapeTag::General), Err(MeshError::Invalid(_))));
    // Drop a face: open surface.
    let (_, t) = tetrahedron();
    assert!(SurfaceMesh::new(v.clone(), t[..3].to_vec(), ShapeTag::General).is_err());
    // Out-of-range index.
    let (_, mut t) = tetrahedron();
    t[3] = [1, 3, 9];
    assert!(SurfaceMesh::new(v, t, ShapeTag::General).is_err());
    assert!(SurfaceMesh::icosphere([0.0; 3], 1.0, 0).is_err());
    assert!(SurfaceMesh::icosphere([0.0; 3], -1.0, 2).is_err());
    assert!(SurfaceMesh::ellipsoid([0.0; 3], [1.0, 0.0, 1.0], 2).is_err());
}

#[test]
fn inward_oriented_mesh_is_rejected() {
    let (v, t) = tetrahedron();
    let flipped: Vec<[usize; 3]> = t.iter().map(|t| [t[0], t[2], t[1]]).collect();
    assert!(SurfaceMesh::new(v, flipped, ShapeTag::General).is_err());
}

#[test]
fn ascii_round_trip_preserves_content_hash() {
    let mesh = SurfaceMesh::icosphere([0.0; 3], 1.0, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sphere.tri");
    mesh.write_file(&path).unwrap();
    let back = SurfaceMesh::read_file(&path, mesh.shape.clone()).unwrap();
    assert_eq!(back.vertices, mesh.vertices);
    assert_eq!(back.triangles, mesh.triangles);
    assert_eq!(back.content_hash(), mesh.content_hash());
    assert_eq!(mesh.content_hash().len(), 64);
}

#[test]
fn ascii_parser_reports_malformed_input() {
    for bad in ["", "3", "1 1\n0 0 0\n0 0", "4 1\n0 0 0\n1 0 0\n0 1 0\n0 0 x\n0 1 2", "1 0\n0 0 0\nextra"] {
        assert!(matches!(SurfaceMesh::from_ascii(bad, ShapeTag::General, "test"), Err(MeshError::Parse { .. })), "{bad:?}");
    }
}

#[test]
fn panel_quadrature_integrates_area() {
    let mesh = SurfaceMesh::ellipsoid([0.0; 3], [1.0, 2.0, 0.5], 3).unwrap();
    let rule = magres::quad::TriangleRule::degree5();
    for j in [0, 17, 100] {
        let w: f64 = mesh.panel_nodes(j, &rule).iter().map(|n| n.weight).sum();
        assert!((w - mesh.panels[j].area).abs() < 1e-13);
    }
    assert!(dist(&[0.0, 0.0, 0.0], &[3.0, 4.0, 0.0]) == 5.0);
}

#[test]
fn container_round_trip_is_exact() {
    let m = CMatrix::from_fn(5, 3, |i, j| Complex64::new((i as f64 + 0.1).sin() * 1e-300, (j as f64 - 7.3).exp()));
    let header = json!({ "kind": "test", "b": 1.5 });
    let mut buf = Vec::new();
    write_matrix(&mut buf, &header, &m).unwrap();
    let (h, back) = read_matrix(buf.as_slice()).unwrap();
    assert_eq!(back, m);
    assert_eq!(h["kind"], "test");
    assert_eq!(h["rows"], 5);
    assert_eq!(h["cols"], 3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    write_matrix_file(&path, &header, &m).unwrap();
    let (_, back) = read_matrix_file(&path).unwrap();
    assert_eq!(back, m);
}

#[test]
fn container_rejects_malformed_data() {
    let m = CMatrix::from_element(2, 2, Complex64::new(1.0, -1.0));
    let mut buf = Vec::new();
    write_matrix(&mut buf, &json!({}), &m).unwrap();
    buf.truncate(buf.len() - 3);
    assert!(matches!(read_matrix(buf.as_slice()), Err(ContainerError::Format(_))));
    assert!(write_matrix(Vec::new(), &json!([1, 2]), &m).is_err());
    let mut bad = (4u64).to_le_bytes().to_vec();
    bad.extend_from_slice(b"{}  ");
    assert!(read_matrix(bad.as_slice()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn container_round_trips_arbitrary_entries(entries in proptest::collection::vec((any::<f64>(), any::<f64>()), 1..40), rows in 1usize..5) {
        let cols = entries.len() / rows;
        prop_assume!(cols > 0);
        let m = CMatrix::from_fn(rows, cols, |i, j| {
            let (re, im) = entries[i + rows * j];
            Complex64::new(re, im)
        });
        let mut buf = Vec::new();
        write_matrix(&mut buf, &json!({"note": "p"}), &m).unwrap();
        let (_, back) = read_matrix(buf.as_slice()).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
            prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn icosphere_area_is_scale_covariant(r in 0.1f64..5.0, m in 1usize..5) {
        let mesh = SurfaceMesh::icosphere([0.0; 3], r, m).unwrap();
        prop_assert!((mesh.total_area() - 4.0 * PI * r * r).abs() < 1e-11 * r * r);
        prop_assert!((mesh.max_diameter() / r - SurfaceMesh::icosphere([0.0; 3], 1.0, m).unwrap().max_diameter()).abs() < 1e-12);
    }
}
