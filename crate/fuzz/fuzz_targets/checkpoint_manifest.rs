#![no_main]

use faultdg_core::params::CheckpointManifest;
use libfuzzer_sys::fuzz_target;

// Input is the manifest JSON, a NUL byte, then the binary payload.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let (json, payload) = (&data[..split], data.get(split + 1..).unwrap_or(&[]));
    if let Ok(m) = CheckpointManifest::from_json_bytes(json) {
        if let Ok(params) = m.decode(payload) {
            assert_eq!(params.total_len(), m.total_len);
        }
    }
});
