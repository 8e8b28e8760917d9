#![no_main]
use hepnas::cli::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_json(text) {
        let _ = cfg.validate();
        // Canonical form must parse back to the same config.
        let again = RunConfig::from_json(&cfg.canonical_json()).unwrap();
        assert_eq!(again.sha256(), cfg.sha256());
    }
});
