use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Independent seed for sub-stream `stream` of `base` (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
///
/// For a weight of shape `(out, in, k...)` the receptive-field size
/// `prod(k...)` multiplies both fans, as for convolution kernels.
pub fn xavier_bound(shape: &[usize]) -> Result<f64> {
    if shape.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "xavier init needs at least 2 dimensions, got {shape:?}"
        )));
    }
    let receptive: usize = shape[2..].iter().product();
    let fan_in = shape[1] * receptive;
    let fan_out = shape[0] * receptive;
    Ok((6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// Weight tensor drawn uniformly in `±xavier_bound(shape)`.
///
/// Values are drawn in single precision so they survive a float32 checkpoint
/// round trip unchanged.
pub fn xavier_init(shape: &[usize], seed: u64) -> Result<Tensor> {
    if shape.is_empty() {
        return Err(Error::InvalidArgument("xavier init of an empty shape".into()));
    }
    let bound = xavier_bound(shape)? as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.gen_range(-bound..=bound) as f64)
        .collect();
    Tensor::new(shape.to_vec(), data)
}
