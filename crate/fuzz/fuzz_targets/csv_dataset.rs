#![no_main]

use ccnf::data::{parse_csv, write_csv, DatasetSchema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // First byte picks the expected shape; the rest is the file.
    let Some((&shape, body)) = data.split_first() else { return };
    let schema = DatasetSchema {
        n: 1 + (shape & 0x3) as usize,
        context_len: 1 + ((shape >> 2) & 0x3) as usize,
        horizon: 1 + ((shape >> 4) & 0x1) as usize,
        dim: 1 + ((shape >> 5) & 0x3) as usize,
    };
    if let Ok(ds) = parse_csv(body, schema) {
        let mut out = Vec::new();
        write_csv(&ds, &mut out).unwrap();
        let again = parse_csv(out.as_slice(), schema).unwrap();
        assert_eq!(again.series, ds.series);
    }
});
