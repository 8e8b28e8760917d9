#![no_main]
use hepnas::oracle::{read_rows_csv, OracleConfig, OracleTable};
use hepnas::searchspace::{CellSpec, OpKind, Region};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let spec = CellSpec::new(4, 8, 2, 5, vec![OpKind::Zero, OpKind::Skip, OpKind::AffineRelu]).unwrap();
    let Ok(rows) = read_rows_csv(data, &spec) else { return };
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.test_acc)));
    let _ = OracleTable::from_rows(Region::full(&spec), rows, OracleConfig::default());
});
