#![no_main]
use libfuzzer_sys::fuzz_target;
use seqdiff::dataset::{parse_csv_table, window_table, CsvOptions, WindowSpec};

fuzz_target!(|data: &[u8]| {
    let columns = vec!["a".to_string(), "b".to_string()];
    let options = CsvOptions { missing_sentinels: vec![-200.0], ..CsvOptions::default() };
    if let Ok(table) = parse_csv_table(data, &columns, &options) {
        assert_eq!(table.rows.ncols(), 2);
        assert!(table.rows.iter().all(|v| v.is_finite()));
        let window = WindowSpec { len: 3, stride: 2, heldout_fraction: 0.25 };
        if let Ok(corpus) = window_table(&table, &window) {
            assert_eq!(corpus.train.seq_len(), 3);
            assert!(corpus.train.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
});
