mod common;

use hepnas::dataset::{gen_blobs, gen_spirals};

#[test]
fn noiseless_spirals_need_hidden_layers() {
    let data = gen_spirals(0, 600, 3, 0.0).unwrap();
    let linear = common::train_mlp(&data, &[], 400, 0.05, 1);
    let deep = common::train_mlp(&data, &[32, 32], 1500, 0.01, 1);
    eprintln!("spirals linear {linear} deep {deep}");
    assert!(linear < 0.6, "linear {linear}");
    assert!(deep > 0.9, "deep {deep}");
}

#[test]
fn collapsed_blobs_are_linearly_separable() {
    for seed in 0..3 {
        let data = gen_blobs(seed, 300, 4, 5, 1e-6).unwrap();
        let acc = common::train_mlp(&data, &[], 300, 0.05, seed);
        assert_eq!(acc, 1.0, "seed {seed}");
    }
}

#[test]
fn blobs_example_shape() {
    let data = gen_blobs(1, 400, 8, 4, 0.3).unwrap();
    assert_eq!(data.len(), 400);
    assert_eq!(data.dim(), 8);
    let counts = data.class_counts();
    assert_eq!(counts.len(), 4);
    assert!(counts.iter().all(|&c| c.abs_diff(100) <= 1));
    assert_eq!(data, gen_blobs(1, 400, 8, 4, 0.3).unwrap());
}
