#![no_main]

use joule_fem::mesh::{read_mesh, write_mesh};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(mesh) = read_mesh(text) {
        // Anything accepted must survive a write/read round trip.
        let again = read_mesh(&write_mesh(&mesh)).expect("written mesh parses");
        assert_eq!(mesh, again);
        assert!(mesh.check_conformity().is_ok());
    }
});
