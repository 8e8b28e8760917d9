#![no_main]
use hepnas::numerics::Tensor;
use hepnas::supernet::Supernet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(net) = Supernet::from_json(text) else { return };
    let back = Supernet::from_json(&net.to_json().unwrap()).unwrap();
    assert_eq!(back.digest(), net.digest());
    let spec = net.spec();
    if spec.width() * spec.width() <= 1 << 16 && spec.input_dim() <= 1 << 10 {
        let x = Tensor::zeros(&[2, spec.input_dim()]);
        let _ = net.forward(&x);
    }
});
