//! Central-difference check of the network gradients.

use fdia_core::nn::{gradients, Architecture, Network};
use fdia_core::numerics::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
pub const FLOOR: f64 = 1e-6;

fn batch(arch: &Architecture, n: usize, seed: u64) -> (Vec<Matrix>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let windows = (0..n)
        .map(|_| {
            Matrix::from_vec(
                arch.window_len,
                arch.input_dim,
                (0..arch.window_len * arch.input_dim)
                    .map(|_| rng.random_range(-1.5..1.5))
                    .collect(),
            )
        })
        .collect();
    let labels = (0..n).map(|i| (i % 2) as u8).collect();
    (windows, labels)
}

/// Worst relative error over every parameter, with the offending tensor.
pub fn worst_error(arch: Architecture, dropout_seed: Option<u64>) -> (f64, &'static str) {
    let net = Network::init(arch, 21).unwrap();
    let (windows, labels) = batch(&arch, 3, 4);
    let refs: Vec<&Matrix> = windows.iter().collect();
    let (analytic, _) = gradients(&net, &refs, &labels, dropout_seed).unwrap();
    let loss = |n: &Network| gradients(n, &refs, &labels, dropout_seed).unwrap().1;

    let mut worst = (0.0, "");
    for (t, name) in Network::TENSOR_NAMES.iter().enumerate() {
        let len = net.tensors()[t].len();
        for i in 0..len {
            let mut plus = net.clone();
            plus.tensors_mut()[t][i] += STEP;
            let mut minus = net.clone();
            minus.tensors_mut()[t][i] -= STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            let exact = analytic.tensors()[t][i];
            let err = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(FLOOR);
            if err > worst.0 {
                worst = (err, name);
            }
        }
    }
    worst
}
