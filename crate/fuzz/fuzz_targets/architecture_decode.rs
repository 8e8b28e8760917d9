#![no_main]
use hepnas::searchspace::{Architecture, CellSpec, OpKind, Region};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&selector, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let nodes = 2 + (selector as usize & 3);
    let palette: Vec<OpKind> = OpKind::ALL
        .iter()
        .enumerate()
        .filter(|(i, _)| selector >> 3 & (1 << i) != 0 || *i == 0)
        .map(|(_, &op)| op)
        .collect();
    let spec = CellSpec::new(nodes, 4, 2, 3, palette).unwrap();

    if let Ok(arch) = Architecture::decode(text, &spec) {
        assert_eq!(Architecture::decode(&arch.encode(), &spec).unwrap(), arch);
        assert!(Region::full(&spec).contains(&arch));
    }
    if let Ok(region) = Region::decode(text, &spec) {
        assert_eq!(Region::decode(&region.encode(), &spec).unwrap(), region);
        if let Some(first) = region.arch_at(0) {
            assert_eq!(region.index_of(&first), Some(0));
        }
    }
});
