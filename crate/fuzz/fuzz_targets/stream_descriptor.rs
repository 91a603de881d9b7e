#![no_main]

use faultdg_core::stream::StreamDescriptor;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(desc) = StreamDescriptor::from_json_bytes(data) {
        let _ = desc.scenario.len();
        let _ = desc.to_json();
    }
});
