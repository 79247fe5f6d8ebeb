//! Dense linear algebra kernels, activations, cosine similarity, and the
//! deterministic seeded random source used by every other module. All
//! kernels are pure functions; [`RandomSource`] is single-owner.

mod real;
mod rng;
pub mod tensor;

pub use real::Real;
pub use rng::{seeded_permutation, RandomSource};
pub use tensor::{
    add, affine, axpy, cosine, dot, elementwise, hadamard, l1_norm, matvec, matvec_transpose,
    norm2, scale, softmax, sub, sum_sq, Activation, Tensor,
};

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn small_vec() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, 1..12)
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_shift_invariant(data in small_vec(), shift in -50.0f64..50.0) {
            let v = Tensor::vector(data.clone());
            let p = softmax(&v);
            let total: f64 = p.as_slice().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.as_slice().iter().all(|&x| x >= 0.0));

            let shifted = Tensor::vector(data.iter().map(|x| x + shift).collect());
            let q = softmax(&shifted);
            for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn cosine_self_symmetry_and_bounds(
            (a, b) in (1usize..12).prop_flat_map(|n| (
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(-5.0f64..5.0, n),
            ))
        ) {
            let u = Tensor::vector(a);
            let v = Tensor::vector(b);
            prop_assume!(norm2(&u) > 1e-9 && norm2(&v) > 1e-9);
            let cu = cosine(&u, &u).unwrap();
            prop_assert!((cu - 1.0).abs() < 1e-12);
            let uv = cosine(&u, &v).unwrap();
            let vu = cosine(&v, &u).unwrap();
            prop_assert!((uv - vu).abs() < 1e-12);
            prop_assert!(uv.abs() <= 1.0 + 1e-12);
        }
    }
}
