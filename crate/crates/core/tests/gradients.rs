mod common;

use common::{sweep, OpCase, OpKind, SUBSTRATE_OPS, WARP_OPS};
use proptest::prelude::*;
use spac_core::substrate::{GradCheckOptions, Graph, Tensor};

#[test]
fn substrate_ops_match_finite_differences() {
    for kind in SUBSTRATE_OPS {
        let r = sweep(kind, 20, &GradCheckOptions::default());
        assert!(r.passed(), "{kind:?}: {r:?}");
    }
}

#[test]
fn warp_ops_match_finite_differences() {
    for kind in WARP_OPS {
        let r = sweep(kind, 20, &GradCheckOptions::default());
        assert!(r.passed(), "{kind:?}: {r:?}");
    }
}

#[test]
fn single_precision_gradients_are_within_loose_tolerance() {
    for kind in [OpKind::Conv2d, OpKind::Linear, OpKind::Tanh, OpKind::GridSample, OpKind::Tv] {
        let r = sweep(kind, 5, &GradCheckOptions::f32_mode());
        assert!(r.passed(), "{kind:?}: {r:?}");
    }
}

fn tensor_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.0f64..2.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backward_is_linear_in_the_loss(
        x in tensor_strategy(12),
        w in tensor_strategy(12),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let x = Tensor::new(&[3, 2, 2], x).unwrap().with_grad();
        let w = Tensor::new(&[3, 2, 2], w).unwrap();
        let grad_of = |ca: f64, cb: f64| {
            let mut g = Graph::new();
            let xv = g.input(&x);
            let wv = g.input(&w);
            let t = g.tanh(xv);
            let tw = g.mul(t, wv).unwrap();
            let f = g.sum(tw);
            let sq = g.square(xv);
            let gg = g.mean(sq);
            let fa = g.scale(f, ca);
            let gb = g.scale(gg, cb);
            let loss = g.add(fa, gb).unwrap();
            g.backward(loss).unwrap().get(xv).unwrap().to_vec()
        };
        let combined = grad_of(a, b);
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        for i in 0..combined.len() {
            prop_assert!((combined[i] - (a * gf[i] + b * gg[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_output_shape_follows_formula(
        c in 1usize..4,
        h in 1usize..12,
        w in 1usize..12,
        co in 1usize..4,
        half in 0usize..3,
        stride in 1usize..4,
        padding in 0usize..3,
    ) {
        let k = 2 * half + 1;
        prop_assume!(h + 2 * padding >= k && w + 2 * padding >= k);
        let x = Tensor::<f32>::zeros(&[c, h, w]);
        let kern = Tensor::zeros(&[co, c, k, k]);
        let bias = Tensor::zeros(&[co]);
        let mut g = Graph::new();
        let (xv, kv, bv) = (g.input(&x), g.input(&kern), g.input(&bias));
        let y = g.conv2d(xv, kv, bv, stride, padding).unwrap();
        let expect = [co, (h + 2 * padding - k) / stride + 1, (w + 2 * padding - k) / stride + 1];
        prop_assert_eq!(g.shape(y), &expect);
    }

    #[test]
    fn upsample_output_shape_follows_formula(c in 1usize..4, h in 1usize..8, w in 1usize..8, f in 1usize..4) {
        let x = Tensor::<f32>::zeros(&[c, h, w]);
        let mut g = Graph::new();
        let xv = g.input(&x);
        let y = g.upsample_nearest(xv, f).unwrap();
        prop_assert_eq!(g.shape(y), &[c, f * h, f * w]);
    }

    #[test]
    fn forward_and_backward_are_bitwise_deterministic(seed in 0u64..1000) {
        let (case, inputs) = OpCase::random(OpKind::Conv2d, seed);
        let run = || {
            let x: Vec<Tensor<f32>> = inputs.iter().map(|t| t.cast::<f32>().with_grad()).collect();
            let mut g = Graph::new();
            let vars: Vec<_> = x.iter().map(|t| g.input(t)).collect();
            let out = spac_core::substrate::ScalarFn::eval(&case, &mut g, &vars).unwrap();
            let grads = g.backward(out).unwrap();
            let mut bits = vec![g.scalar(out).to_bits()];
            for v in &vars {
                bits.extend(grads.get(*v).unwrap().iter().map(|x| x.to_bits()));
            }
            bits
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn networks_match_finite_differences_through_every_loss() {
    for loss in common::nets::NET_LOSSES {
        let r = common::nets::net_sweep(loss, 20, 12);
        println!(
            "{loss:?}: max rel error {:.3e} over {} coords ({} at kinks)",
            r.max_rel_error, r.checked, r.skipped
        );
        assert!(r.passed(), "{loss:?}: {r:?}");
    }
}
