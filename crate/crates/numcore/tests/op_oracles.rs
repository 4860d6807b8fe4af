//! Independent loop oracles for the layer primitives, plus property tests
//! for the simplex and determinism invariants.

use numcore::rng::rng_for;
use numcore::{Graph, Tensor};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Six-nested-loop reference convolution, written independently of the
/// graph implementation.
#[allow(clippy::too_many_arguments)]
fn conv2d_reference(
    x: &[f64],
    (h, w, c_in): (usize, usize, usize),
    k: &[f64],
    (kk, c_out): (usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let h_out = (h + 2 * pad - kk) / stride + 1;
    let w_out = (w + 2 * pad - kk) / stride + 1;
    let mut y = vec![0.0; h_out * w_out * c_out];
    for oh in 0..h_out {
        for ow in 0..w_out {
            for co in 0..c_out {
                let mut acc = 0.0;
                for kh in 0..kk {
                    for kw in 0..kk {
                        for ci in 0..c_in {
                            let ih = (oh * stride + kh) as isize - pad as isize;
                            let iw = (ow * stride + kw) as isize - pad as isize;
                            if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                continue;
                            }
                            let xv = x[((ih as usize * w) + iw as usize) * c_in + ci];
                            let kv = k[((kh * kk + kw) * c_in + ci) * c_out + co];
                            acc += xv * kv;
                        }
                    }
                }
                y[(oh * w_out + ow) * c_out + co] = acc;
            }
        }
    }
    y
}

#[test]
fn conv2d_matches_loop_oracle() {
    for seed in 0..5 {
        let mut rng = rng_for(seed, "conv-oracle");
        let x = rand_vec(8 * 8 * 3, &mut rng);
        let k = rand_vec(3 * 3 * 3 * 4, &mut rng);
        for (stride, pad) in [(1, 0), (1, 1), (2, 0), (2, 1)] {
            let expected = conv2d_reference(&x, (8, 8, 3), &k, (3, 4), stride, pad);
            let mut g = Graph::new();
            let xt = g.input(Tensor::new(vec![8, 8, 3], x.clone()).unwrap());
            let kt = g.input(Tensor::new(vec![3, 3, 3, 4], k.clone()).unwrap());
            let y = g.conv2d(xt, kt, stride, pad).unwrap();
            assert_eq!(g.value(y).numel(), expected.len());
            for (a, b) in g.value(y).data().iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-12, "seed {seed} s{stride} p{pad}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn dense_matches_loop_oracle() {
    for seed in 0..5 {
        let mut rng = rng_for(seed, "dense-oracle");
        let (d_in, d_out) = (rng.gen_range(2..=7), rng.gen_range(2..=7));
        let x = rand_vec(d_in, &mut rng);
        let w = rand_vec(d_out * d_in, &mut rng);
        let b = rand_vec(d_out, &mut rng);
        let mut expected = vec![0.0; d_out];
        for o in 0..d_out {
            for i in 0..d_in {
                expected[o] += w[o * d_in + i] * x[i];
            }
            expected[o] += b[o];
        }
        let mut g = Graph::new();
        let xt = g.input(Tensor::new(vec![d_in], x).unwrap());
        let wt = g.input(Tensor::new(vec![d_out, d_in], w).unwrap());
        let bt = g.input(Tensor::new(vec![d_out], b).unwrap());
        let y = g.dense(xt, wt, Some(bt)).unwrap();
        for (a, b) in g.value(y).data().iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn global_avg_pool_matches_loop_oracle() {
    let mut rng = rng_for(0, "gap-oracle");
    let (h, w, c) = (5, 7, 3);
    let x = rand_vec(h * w * c, &mut rng);
    let mut expected = vec![0.0; c];
    for ch in 0..c {
        let mut acc = 0.0;
        for i in 0..h {
            for j in 0..w {
                acc += x[(i * w + j) * c + ch];
            }
        }
        expected[ch] = acc / (h * w) as f64;
    }
    let mut g = Graph::new();
    let xt = g.input(Tensor::new(vec![h, w, c], x).unwrap());
    let y = g.global_avg_pool(xt).unwrap();
    for (a, b) in g.value(y).data().iter().zip(&expected) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn global_avg_pool_constant_channel() {
    let mut g = Graph::new();
    let x = g.input(Tensor::full(vec![4, 6, 2], 3.25).unwrap());
    let y = g.global_avg_pool(x).unwrap();
    assert_eq!(g.value(y).data(), &[3.25, 3.25]);
}

#[test]
fn ops_are_deterministic_for_identical_inputs() {
    let run = || {
        let mut rng = rng_for(11, "det");
        let x = rand_vec(6 * 6 * 2, &mut rng);
        let k = rand_vec(3 * 3 * 2 * 2, &mut rng);
        let mut g = Graph::new();
        let xt = g.input(Tensor::new(vec![6, 6, 2], x).unwrap());
        let kt = g.input(Tensor::new(vec![3, 3, 2, 2], k).unwrap());
        let c = g.conv2d(xt, kt, 1, 1).unwrap();
        let p = g.global_avg_pool(c).unwrap();
        let s = g.softmax(p).unwrap();
        g.value(s).data().to_vec()
    };
    let a = run();
    let b = run();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

proptest! {
    #[test]
    fn softmax_lies_on_the_simplex(xs in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let n = xs.len();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![n], xs).unwrap());
        let y = g.softmax(x).unwrap();
        let v = g.value(y).data();
        prop_assert!(v.iter().all(|p| *p >= 0.0));
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn conv_identity_kernel_preserves_input(
        xs in prop::collection::vec(-10.0f64..10.0, 9..=9)
    ) {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![3, 3, 1], xs.clone()).unwrap());
        let k = g.input(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let y = g.conv2d(x, k, 1, 0).unwrap();
        prop_assert_eq!(g.value(y).data(), xs.as_slice());
    }
}
