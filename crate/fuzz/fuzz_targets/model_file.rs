#![no_main]

use ccnf::flow::ModelFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = ModelFile::from_json_str(text) {
        assert_eq!(file.model_hash, file.model.hash());
        let again = ModelFile::from_json_str(&file.to_json_string()).unwrap();
        assert_eq!(again, file);
    }
});
