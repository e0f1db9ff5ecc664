use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::model::{one_hot, Network, ParamSet};
use crate::ops::Activation;
use crate::tensor::Tensor3;

const TEACHER_SALT: u64 = 0x5eed_7eac_4e12_0001;

/// One labelled example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Tensor3,
    pub label: Vec<f64>,
    pub class: usize,
}

/// Synthetic distribution: inputs with i.i.d. uniform `[0, 1]` entries,
/// labelled one-hot at the argmax of a fixed teacher network's softmax output.
///
/// Sample `index` is a pure function of `(seed, index)`.
#[derive(Debug, Clone)]
pub struct DataModel {
    net: Network,
    teacher: ParamSet,
    seed: u64,
}

impl DataModel {
    /// Teacher weights are drawn at full norm from `seed`.
    pub fn new(net: Network, seed: u64) -> Result<Self> {
        let teacher = net.init_weights(seed ^ TEACHER_SALT, 1.0)?;
        Ok(Self { net, teacher, seed })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn teacher(&self) -> &ParamSet {
        &self.teacher
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sample(&self, index: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let (r, c, ch) = self.net.input_shape();
        let input = Tensor3::from_fn(r, c, ch, |_, _, _| rng.gen_range(0.0..=1.0));
        let trace = self
            .net
            .forward(&self.teacher, &input, Activation::Softmax)
            .expect("generated input has the declared shape and range");
        let class = argmax(&trace.output);
        Sample {
            input,
            label: one_hot(self.net.output_dim(), class),
            class,
        }
    }

    /// Samples `range.start .. range.end`, in index order.
    pub fn samples(&self, range: Range<u64>) -> Vec<Sample> {
        range.into_par_iter().map(|i| self.sample(i)).collect()
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}
