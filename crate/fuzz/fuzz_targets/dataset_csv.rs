#![no_main]
use hepnas::dataset::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(ds) = Dataset::read_csv(data) else { return };
    let mut out = Vec::new();
    ds.write_csv(&mut out).unwrap();
    let back = Dataset::read_csv(out.as_slice()).unwrap();
    assert_eq!(back.inputs(), ds.inputs());
    assert_eq!(back.labels(), ds.labels());
    let _ = ds.class_counts();
});
