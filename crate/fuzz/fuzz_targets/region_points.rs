#![no_main]

use ccnf::regions::read_points_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&dim, body)) = data.split_first() else { return };
    let label_dim = 1 + (dim % 8) as usize;
    if let Ok(points) = read_points_csv(body, label_dim) {
        assert!(points.iter().all(|p| p.coords.len() == label_dim));
    }
});
