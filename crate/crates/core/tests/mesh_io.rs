use std::path::PathBuf;

use joule_fem::mesh::{read_mesh, unit_square_mesh, write_mesh};

fn seed(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus/read_mesh")
        .join(name);
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn corpus_seeds_parse_as_intended() {
    for good in ["square_1.mesh", "square_3.mesh", "commented.mesh"] {
        let mesh = read_mesh(&seed(good)).unwrap_or_else(|e| panic!("{good}: {e}"));
        assert!((mesh.total_area() - 1.0).abs() < 1e-14);
    }
    assert_eq!(
        read_mesh(&seed("commented.mesh")).unwrap().boundary_nodes(),
        vec![0, 1, 2, 3]
    );
    for bad in ["clockwise.mesh", "overlap.mesh", "truncated.mesh"] {
        assert!(read_mesh(&seed(bad)).is_err(), "{bad}");
    }
}

#[test]
fn written_square_matches_seed() {
    assert_eq!(
        write_mesh(&unit_square_mesh(3).unwrap()),
        seed("square_3.mesh")
    );
}
