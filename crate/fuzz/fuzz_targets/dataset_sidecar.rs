#![no_main]

use faultdg_core::signal::DatasetSidecar;
use libfuzzer_sys::fuzz_target;

// Input is the sidecar JSON, a NUL byte, then the binary payload.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let (json, payload) = (&data[..split], data.get(split + 1..).unwrap_or(&[]));
    if let Ok(side) = DatasetSidecar::from_json_bytes(json) {
        if let Ok(ds) = side.decode(payload) {
            assert_eq!(ds.len(), side.shape[0]);
        }
    }
});
