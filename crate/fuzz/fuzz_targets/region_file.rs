#![no_main]

use ccnf::regions::RegionFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = RegionFile::from_json_str(text) {
        assert_eq!(file.region.component_sizes().len(), file.region.n_components);
        let again = RegionFile::from_json_str(&file.to_json_string()).unwrap();
        assert_eq!(again, file);
    }
});
