#![no_main]
use libfuzzer_sys::fuzz_target;
use seqdiff::checkpoint::decode;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = decode(data) {
        let stored: usize = ckpt.values.iter().map(|(_, _, v)| v.len()).sum();
        assert_eq!(ckpt.values.len(), ckpt.header.tensors.len());
        assert!(stored <= data.len());
    }
});
