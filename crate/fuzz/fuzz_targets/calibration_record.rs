#![no_main]

use ccnf::conformal::RecordFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = RecordFile::from_json_str(text) {
        assert!(file.record.scores.windows(2).all(|w| w[0] <= w[1]));
        let again = RecordFile::from_json_str(&file.to_json_string()).unwrap();
        assert_eq!(again, file);
    }
});
