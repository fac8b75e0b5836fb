//! Joint Gaussian + Salt & Pepper denoising with a TV regulariser and an
//! infimal-convolution `L1 + L2` data fidelity, plus bilevel learning of the
//! two fidelity weights `(lambda1, lambda2)` from a single training pair.
//!
//! The lower-level problem minimises, over the joint pair `(u, v)`,
//!
//! ```text
//! eps/2 (|u|_H1^2 + |v|^2) + |grad u|_{gamma,L1}
//!     + lambda1 |v|_{gamma,L1} + lambda2/2 |f - u - v|^2
//! ```
//!
//! where `|.|_{gamma,L1}` is a C^1 Huber-type smoothing of the L1 norm. The
//! auxiliary variable `v` absorbs the sparse (impulsive) noise component while
//! `f - u - v` carries the distributed (Gaussian) part. Eliminating `v`
//! pointwise shows the fidelity equals a classical Huber penalty of `f - u`
//! with threshold `lambda1/lambda2`, which is what the [`fidelity`] module
//! implements in closed form.
//!
//! Modules:
//! - [`grid`]: scalar fields on a uniform mesh and the discrete gradient /
//!   divergence pair (exact adjoints of each other).
//! - [`fidelity`]: Huber functions, the smoothed `h_gamma`, its Jacobian and
//!   antiderivative, and the proximal map of the smoothed L1 norm.
//! - [`denoise`]: damped Newton solver for the lower-level problem.
//! - [`exact1d`]: closed-form minimisers for 1D step data and a numerical
//!   verifier of the nonsmooth optimality conditions.
//! - [`bilevel`]: linearised-state and adjoint solves, the reduced gradient,
//!   and projected BFGS for learning `(lambda1, lambda2)`.
//! - [`experiment`]: noise synthesis, PSNR/SSIM, and the asymptotic and
//!   noise-mixture sweep drivers.
//!
//! With the default `parallel` feature the pixel kernels run on rayon;
//! without it every kernel falls back to the identical sequential loop, so
//! results are bit-for-bit reproducible across both builds.

pub mod bilevel;
pub mod denoise;
pub mod error;
pub mod exact1d;
pub mod experiment;
pub mod fidelity;
pub mod grid;
pub mod linsolve;
mod parallel;

pub use error::TvicError;
pub use grid::{ImageGrid, VectorField};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, TvicError>;
