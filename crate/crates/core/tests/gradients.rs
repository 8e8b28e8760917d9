mod common;

use common::{graph_probes, op_gradient_probes, supernet_probes, GraphCase, Probe};
use hepnas::numerics::{Tape, Tensor};
use proptest::prelude::*;

fn assert_all(probes: &[Probe]) {
    for p in probes {
        assert!(p.ok(), "{}: analytic {} vs numeric {}", p.label, p.analytic, p.numeric);
    }
    let live = probes.iter().filter(|p| p.analytic.abs() > 1e-6).count();
    assert!(2 * live > probes.len(), "only {live} of {} probes saw a nonzero gradient", probes.len());
}

#[test]
fn five_parameter_affine_relu_graph_matches_central_differences() {
    let x = Tensor::from_rows(&[vec![0.7, -1.2], vec![-0.3, 0.4], vec![1.5, 0.9]]).unwrap();
    let labels = [1, 0, 1];
    let params = [
        Tensor::new(vec![2, 1], vec![0.8, -0.5]).unwrap(),
        Tensor::vector(vec![0.1]),
        Tensor::new(vec![1, 2], vec![1.3, -0.7]).unwrap(),
    ];
    let loss = |p: &[Tensor]| {
        let mut t = Tape::new();
        let ids: Vec<_> = p.iter().map(|v| t.param(v.clone())).collect();
        let xi = t.constant(x.clone());
        let zero_bias = t.constant(Tensor::zeros(&[2]));
        let h = t.affine(xi, ids[0], ids[1]).unwrap();
        let h = t.relu(h);
        let logits = t.affine(h, ids[2], zero_bias).unwrap();
        let l = t.cross_entropy(logits, &labels).unwrap();
        let g = t.backward(l).unwrap();
        let grads: Vec<Tensor> = ids.iter().map(|&i| g.get(i).unwrap().clone()).collect();
        (t.value(l).data()[0], grads)
    };
    let (_, grads) = loss(&params);
    let eps = 1e-5;
    let mut checked = 0;
    for (which, p) in params.iter().enumerate() {
        for i in 0..p.len() {
            let mut plus = params.to_vec();
            plus[which].data_mut()[i] += eps;
            let mut minus = params.to_vec();
            minus[which].data_mut()[i] -= eps;
            let numeric = (loss(&plus).0 - loss(&minus).0) / (2.0 * eps);
            assert!(common::fd_agrees(grads[which].data()[i], numeric), "{which}[{i}]");
            checked += 1;
        }
    }
    assert_eq!(checked, 5);
}

#[test]
fn random_graphs_match_central_differences() {
    assert_all(&graph_probes(11, 60));
}

#[test]
fn supernet_weight_gradients_match_central_differences() {
    assert_all(&supernet_probes(12, 45));
}

#[test]
fn grouping_gradients_match_central_differences() {
    assert_all(&op_gradient_probes(13, 30));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn every_graph_parameter_agrees(seed in any::<u64>()) {
        let case = GraphCase::random(seed);
        let (_, grads) = case.loss_and_grads(&case.params);
        let eps = 1e-6;
        for (which, p) in case.params.iter().enumerate() {
            for i in 0..p.len() {
                let mut plus = case.params.clone();
                plus[which].data_mut()[i] += eps;
                let mut minus = case.params.clone();
                minus[which].data_mut()[i] -= eps;
                let numeric = (case.loss_and_grads(&plus).0 - case.loss_and_grads(&minus).0) / (2.0 * eps);
                prop_assert!(common::fd_agrees(grads[which].data()[i], numeric), "{}[{}]", which, i);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_kl_is_nonnegative(
        rows in proptest::collection::vec(proptest::collection::vec(-30.0f64..30.0, 4), 1..6),
        other in proptest::collection::vec(proptest::collection::vec(-30.0f64..30.0, 4), 6),
    ) {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&rows).unwrap());
        let b = t.constant(Tensor::from_rows(&other[..rows.len()]).unwrap());
        let p = t.softmax(a);
        let q = t.softmax(b);
        for r in 0..rows.len() {
            prop_assert!((t.value(p).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let logq = t.log_softmax(b);
        let kl = t.kl_div_logits(a, logq).unwrap();
        prop_assert!(t.value(kl).data()[0] >= -1e-12);
        if t.value(q).data().iter().all(|&v| v > 0.0) {
            let kl2 = t.kl_div(p, q).unwrap();
            prop_assert!(t.value(kl2).data()[0] >= -1e-12);
        }
    }
}
