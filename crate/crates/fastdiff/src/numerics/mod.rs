//! Dense tensors, reverse-mode autodiff, a seeded Gaussian source, and Adam.

mod adam;
mod graph;
pub mod io;
pub mod kernels;
mod rng;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, NodeId};
pub use rng::RandomSource;
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::error::Result;

    /// Central finite-difference gradient check.
    ///
    /// `build` constructs a scalar loss from leaves inserted in input order;
    /// analytic gradients of inputs flagged in `check` are compared against
    /// (f(x+h) - f(x-h)) / 2h with h = 1e-5 in double precision. An entry
    /// passes when |a - n| <= tol * max(|a|, |n|, 0.1).
    pub fn gradcheck<F>(inputs: &[Tensor<f64>], build: F, check: &[bool], tol: f64)
    where
        F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
    {
        let h = 1e-5;
        let eval = |ins: &[Tensor<f64>]| -> f64 {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = ins.iter().map(|t| g.leaf(t.clone(), false)).collect();
            let loss = build(&mut g, &ids).expect("gradcheck build failed");
            g.value(loss).data()[0]
        };

        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs
            .iter()
            .zip(check)
            .map(|(t, &c)| g.leaf(t.clone(), c))
            .collect();
        let loss = build(&mut g, &ids).expect("gradcheck build failed");
        g.backward(loss).expect("gradcheck backward failed");

        for (idx, (&flag, input)) in check.iter().zip(inputs).enumerate() {
            if !flag {
                continue;
            }
            let analytic = g
                .grad(ids[idx])
                .unwrap_or_else(|| panic!("no gradient for input {idx}"))
                .clone();
            for e in 0..input.numel() {
                let mut plus = inputs.to_vec();
                plus[idx].data_mut()[e] += h;
                let mut minus = inputs.to_vec();
                minus[idx].data_mut()[e] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[e];
                let denom = a.abs().max(numeric.abs()).max(0.1);
                assert!(
                    (a - numeric).abs() <= tol * denom,
                    "input {idx} elem {e}: analytic {a}, numeric {numeric}"
                );
            }
        }
    }
}
