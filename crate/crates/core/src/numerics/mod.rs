//! Reverse-mode differentiation core: tensors, the recorded graph, layer
//! operations, the weighted loss and the Adam optimizer.

mod adam;
mod graph;
mod kernels;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{sigmoid_scalar, softplus, Graph, Var};
pub use tensor::{Scalar, Tensor};

use rand::Rng;
use rand_distr::StandardNormal;

/// Normal weights with standard deviation `sqrt(2 / fan_in)`.
pub fn he_normal<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::from_f64_lossy(z * std)
        })
        .collect();
    Tensor::new(shape.to_vec(), values).expect("shape product")
}
