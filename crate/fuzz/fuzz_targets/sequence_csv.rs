#![no_main]
use libfuzzer_sys::fuzz_target;
use seqdiff::dataset::{read_sequences_csv, write_sequences_csv};

// Anything the reader accepts must survive a write/read round trip.
fuzz_target!(|data: &[u8]| {
    if let Ok(batch) = read_sequences_csv(data) {
        let mut out = Vec::new();
        write_sequences_csv(&mut out, &batch).expect("accepted batches can be written");
        let again = read_sequences_csv(out.as_slice()).expect("written output parses");
        assert_eq!(batch.values(), again.values());
    }
});
