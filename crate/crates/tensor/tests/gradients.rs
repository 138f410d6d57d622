use proptest::prelude::*;
use traphic_tensor::finite_diff::{self, op_suite};
use traphic_tensor::{ParamStore, Tape, Tensor};

#[test]
fn every_op_matches_central_differences() {
    let reports = op_suite(2024, 100).unwrap();
    for r in &reports {
        assert_eq!(r.configs, 100);
        assert!(r.max_rel_error < 1e-4, "{}: {:e}", r.op, r.max_rel_error);
    }
    assert!(reports.len() >= 15);
}

fn bits(store: &ParamStore) -> Vec<u64> {
    store
        .iter()
        .flat_map(|p| {
            p.value
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        })
        .collect()
}

proptest! {
    #[test]
    fn concat_then_slice_is_identity(a in prop::collection::vec(-10.0f64..10.0, 1..6),
                                     b in prop::collection::vec(-10.0f64..10.0, 1..6),
                                     w in prop::collection::vec(-1.0f64..1.0, 12)) {
        let mut store = ParamStore::new();
        let ia = store.insert("a", Tensor::vector(a.clone())).unwrap();
        let ib = store.insert("b", Tensor::vector(b.clone())).unwrap();
        let mut t = Tape::new();
        let av = t.param(&store, ia).unwrap();
        let bv = t.param(&store, ib).unwrap();
        let c = t.concat(&[av, bv]).unwrap();
        let sa = t.slice(c, 0, a.len()).unwrap();
        let sb = t.slice(c, a.len(), b.len()).unwrap();
        prop_assert_eq!(t.value(sa).data(), &a[..]);
        prop_assert_eq!(t.value(sb).data(), &b[..]);
        // gradients pass through unchanged
        let wa = t.constant(Tensor::vector(w[..a.len()].to_vec())).unwrap();
        let wb = t.constant(Tensor::vector(w[6..6 + b.len()].to_vec())).unwrap();
        let pa = t.mul(sa, wa).unwrap();
        let pb = t.mul(sb, wb).unwrap();
        let joined = t.concat(&[pa, pb]).unwrap();
        let loss = t.sum(joined).unwrap();
        t.backward(loss, &mut store).unwrap();
        prop_assert_eq!(store.get(ia).grad.data(), &w[..a.len()]);
        prop_assert_eq!(store.get(ib).grad.data(), &w[6..6 + b.len()]);
    }

    #[test]
    fn forward_is_deterministic(x in prop::collection::vec(-3.0f64..3.0, 2..8), seed in 0u64..1000) {
        let run = || {
            let mut rng = traphic_tensor::rng::seeded(seed);
            let mut store = ParamStore::new();
            let n = x.len();
            let w = store.insert_uniform("w", &[3, n], n, &mut rng).unwrap();
            let b = store.insert_zeros("b", &[3]).unwrap();
            let mut t = Tape::new();
            let xv = t.constant(Tensor::vector(x.clone())).unwrap();
            let wv = t.param(&store, w).unwrap();
            let bv = t.param(&store, b).unwrap();
            let y = t.linear(xv, wv, bv).unwrap();
            let y = t.elu(y).unwrap();
            t.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn zero_lr_adam_keeps_params_bit_identical(vals in prop::collection::vec(-5.0f64..5.0, 1..10),
                                               grads in prop::collection::vec(-5.0f64..5.0, 10)) {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::vector(vals.clone())).unwrap();
        store.get_mut(id).grad = Tensor::vector(grads[..vals.len()].to_vec());
        let before = bits(&store);
        let mut adam = traphic_tensor::AdamState::new(&store, traphic_tensor::AdamConfig { lr: 0.0, ..Default::default() });
        adam.step(&mut store).unwrap();
        prop_assert_eq!(before, bits(&store));
    }
}

#[test]
fn relative_error_floor() {
    assert_eq!(finite_diff::relative_error(1.0, 1.0), 0.0);
    assert!(finite_diff::relative_error(1e-9, 2e-9) < 1e-5);
    assert!((finite_diff::relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
}
