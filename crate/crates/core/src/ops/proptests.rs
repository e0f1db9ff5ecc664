use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::one_hot;
use crate::tensor::{Matrix, Tensor3};

fn matrix(max_r: usize, max_c: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_r, 1..=max_c).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c)
            .prop_map(move |v| Matrix::from_col_major(r, c, v))
    })
}

fn tensor(max_side: usize, max_ch: usize) -> impl Strategy<Value = Tensor3> {
    (1..=max_side, 1..=max_side, 1..=max_ch).prop_flat_map(|(r, c, ch)| {
        prop::collection::vec(-3.0f64..3.0, r * c * ch)
            .prop_map(move |v| Tensor3::from_vec(r, c, ch, v))
    })
}

/// Quadruple loop straight from the definition of strided valid correlation.
fn conv_oracle(z: &Tensor3, k: &Tensor3, s: usize) -> Matrix {
    let (zr, zc, ch) = z.shape();
    let kr = k.rows();
    let (or, oc) = ((zr - kr) / s + 1, (zc - kr) / s + 1);
    Matrix::from_fn(or, oc, |a, b| {
        let mut acc = 0.0;
        for c in 0..ch {
            for u in 0..kr {
                for v in 0..kr {
                    acc += z[(a * s + u, b * s + v, c)] * k[(u, v, c)];
                }
            }
        }
        acc
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gate_contracts_by_a_sixteenth(z in prop::collection::vec(-30.0f64..30.0, 1..12), cols in 1usize..5, fill in -4.0f64..4.0) {
        let m = Matrix::from_fn(z.len(), cols, |r, c| fill + (r * 7 + c) as f64 * 0.1);
        let g = sigmoid_gate(&z).mul_matrix(&m);
        prop_assert!(g.frobenius_sq() <= m.frobenius_sq() / 16.0 * (1.0 + 1e-12));
    }

    #[test]
    fn curvature_is_small(z in prop::collection::vec(-30.0f64..30.0, 1..10), cols in 1usize..4) {
        let q = sigmoid_curvature(&z);
        prop_assert!(q.nonzeros().all(|(_, _, v)| v.abs() <= 8.0 / 81.0));
        let m = Matrix::from_fn(z.len(), cols, |r, c| 1.0 + r as f64 - c as f64);
        let qm = q.mul_matrix(&m);
        prop_assert!(qm.frobenius_sq() <= 64.0 / 6561.0 * m.frobenius_sq() * (1.0 + 1e-12));
    }

    #[test]
    fn upsample_scales_norm_exactly(m in tensor(6, 3), p in 1usize..4) {
        let up = upsample(&m, p);
        let expect = m.frobenius_sq() / (p * p) as f64;
        prop_assert!((up.frobenius_sq() - expect).abs() <= 1e-12 * expect.max(1.0));
    }

    #[test]
    fn dilated_correlation_bound(delta in matrix(5, 5), k in 1usize..6, s_raw in 1usize..6, w in prop::collection::vec(-2.0f64..2.0, 25)) {
        let s = 1 + (s_raw - 1) % k;
        let n = dilate_and_pad(&delta, s, k);
        let kernel = Tensor3::from_vec(k, k, 1, w[..k * k].to_vec());
        let out = conv_valid(&n.to_tensor(), &kernel, 1).unwrap();
        let ks = (k - s + 1) as f64;
        let bound = ks * ks * kernel.frobenius_sq() * n.frobenius_sq();
        prop_assert!(out.frobenius_sq() <= bound * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn softmax_residual_at_most_two(u in prop::collection::vec(-50.0f64..50.0, 1..8), class in 0usize..8) {
        let v = softmax(&u);
        let y = one_hot(v.len(), class % v.len());
        let r: f64 = v.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        prop_assert!((0.0..=2.0).contains(&r));
    }

    #[test]
    fn conv_matches_loop_oracle(z in tensor(8, 3), k_raw in 1usize..9, s_raw in 1usize..9, seed in any::<u64>()) {
        let k = 1 + (k_raw - 1) % z.rows().min(z.cols());
        let s = 1 + (s_raw - 1) % k;
        let fit = |e: usize| k + s * ((e - k) / s);
        let z = Tensor3::from_fn(fit(z.rows()), fit(z.cols()), z.channels(), |r, c, ch| z[(r, c, ch)]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernel = Tensor3::from_fn(k, k, z.channels(), |_, _, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let fast = conv_valid(&z, &kernel, s).unwrap();
        let slow = conv_oracle(&z, &kernel, s);
        prop_assert_eq!(fast.rows(), slow.rows());
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert_eq!(conv_valid(&z, &kernel, s).unwrap(), fast);
    }
}
