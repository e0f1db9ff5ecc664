use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::Network;
use crate::ops::dilate_and_pad;
use crate::tensor::Matrix;

pub(crate) fn arch_from_seed(seed: u64) -> Architecture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_architecture(&mut rng, 3).expect("generator finds a valid architecture")
}

/// `r(m1+m2+1)` summed over every factorized weight matrix.
fn factorization_count(arch: &Architecture) -> usize {
    let dims = validate(arch).unwrap();
    let conv: usize = arch
        .layers
        .iter()
        .zip(&dims.layers)
        .map(|(l, d)| l.rank * (l.kernel * l.kernel * d.in_channels + l.out_channels + 1))
        .sum();
    let last = dims.layers.last().unwrap();
    let feat = last.pooled_rows * last.pooled_cols * last.out_channels;
    conv + arch.output.rank * (arch.output.dim + feat + 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn validate_is_total(rows in 0usize..40, cols in 0usize..40, ch in 0usize..4, p in 0usize..4,
                         k in 0usize..7, s in 0usize..7, d in 0usize..4, b in -1.0f64..3.0, rank in 0usize..10,
                         out in 0usize..5, out_rank in 0usize..6) {
        let text = format!(r#"{{"input":{{"rows":{rows},"cols":{cols},"channels":{ch}}},"pool_size":{p},
            "layers":[{{"kernel":{k},"stride":{s},"out_channels":{d},"b":{b},"rank":{rank}}}],
            "output":{{"dim":{out},"b":1.0,"rank":{out_rank}}}}}"#);
        let parsed = parse_arch(&text);
        if let Ok(a) = &parsed {
            prop_assert!(validate(a).is_ok());
        }
    }

    #[test]
    fn backward_size_identities(seed in any::<u64>()) {
        let arch = arch_from_seed(seed);
        let dims = validate(&arch).unwrap();
        for (l, d) in arch.layers.iter().zip(&dims.layers) {
            prop_assert!(size_identities_hold(d, l));
            let delta = Matrix::zeros(d.conv_rows, d.conv_cols);
            prop_assert_eq!(dilate_and_pad(&delta, l.stride, l.kernel).rows(), d.in_rows + l.kernel - 1);
            prop_assert_eq!(dilate_and_pad(&delta, l.stride, 1).rows(), d.in_rows - l.kernel + 1);
        }
    }

    #[test]
    fn counts_match_oracles(seed in any::<u64>()) {
        let arch = arch_from_seed(seed);
        let net = Network::new(arch.clone()).unwrap();
        prop_assert_eq!(param_count(&arch).unwrap(), net.zeros().len());
        prop_assert_eq!(freedom_degree(&arch, ThetaVariant::Main).unwrap(), factorization_count(&arch));
    }

    #[test]
    fn theta_variants_differ_by_closed_form(seed in any::<u64>()) {
        let arch = arch_from_seed(seed);
        let dims = validate(&arch).unwrap();
        let main = freedom_degree(&arch, ThetaVariant::Main).unwrap() as i64;
        let supp = freedom_degree(&arch, ThetaVariant::Supplement).unwrap() as i64;
        let a = arch.output.rank as i64;
        let conv: i64 = arch.layers.iter().zip(&dims.layers).map(|(l, d)| {
            let (ai, k2) = (l.rank as i64, (l.kernel * l.kernel) as i64);
            ai * ((k2 - 1) * (d.in_channels as i64 - l.out_channels as i64) + 2 * ai)
        }).sum();
        prop_assert_eq!(main - supp, 2 * a * a + conv);
        if dims.layers.iter().all(|d| d.out_channels <= d.in_channels) {
            prop_assert!(main >= supp);
        }
    }

    #[test]
    fn factored_count_never_exceeds_dense(seed in any::<u64>()) {
        let mut arch = arch_from_seed(seed);
        let dims = validate(&arch).unwrap();
        for (l, d) in arch.layers.iter_mut().zip(&dims.layers) {
            l.rank = d.in_channels.min(d.out_channels);
        }
        arch.output.rank = arch.output.dim.min(dims.feature_len());
        let d = param_count(&arch).unwrap();
        prop_assert!(freedom_degree(&arch, ThetaVariant::Supplement).unwrap() <= d);
    }
}
