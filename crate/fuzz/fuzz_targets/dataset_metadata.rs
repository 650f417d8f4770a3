#![no_main]

use ccnf::data::DatasetMetadata;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(meta) = DatasetMetadata::from_json_str(text) {
        let again = DatasetMetadata::from_json_str(&meta.to_json_string()).unwrap();
        assert_eq!(again, meta);
    }
});
