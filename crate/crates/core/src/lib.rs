//! A desk-scale laboratory for minimax-entropy semi-supervised domain
//! adaptation: a reverse-mode autodiff tape with a gradient-reversal
//! operator, an ℓ2-normalized prototype classifier, the adversarial entropy
//! objective and its baselines, synthetic domain-shift tasks, an annealed
//! SGD training loop, and divergence / spectrum diagnostics.

pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod trainer;
