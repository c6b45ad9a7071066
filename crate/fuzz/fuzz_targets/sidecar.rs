#![no_main]
use libfuzzer_sys::fuzz_target;
use seqdiff::dataset::parse_sidecar;

fuzz_target!(|data: &[u8]| {
    if let Ok(sidecar) = parse_sidecar(data) {
        if let Some(scaler) = sidecar.scaler {
            for f in 0..scaler.dims() {
                let y = scaler.forward_value(f, scaler.max[f]);
                assert!(y.is_finite());
                assert!(scaler.inverse_value(f, y).is_finite());
            }
        }
    }
});
