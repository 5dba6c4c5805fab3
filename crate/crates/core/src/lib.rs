//! Lyapunov Learning: differentiable finite-time Lyapunov exponents of a
//! feed-forward network viewed as a discrete dynamical system.
//!
//! * [`diffcore`] scalar reverse-mode tape and the [`Arith`] abstraction
//! * [`net`] tanh MLP with an analytic, differentiable input Jacobian
//! * [`lyap`] QR-based spectrum, single-vector largest exponent, chaos test
//! * [`dynsys`] Lorenz RK4, regime-shift data, oracle maps
//! * [`experiments`] online regime-shift training, loss ratios, benchmarks,
//!   attractor synthesis

pub mod diffcore;
pub mod dynsys;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod lyap;
pub mod mat;
pub mod net;
pub mod rng;

pub use diffcore::{Arith, Plain, Tape, Var};
pub use error::{Error, Result};
pub use exec::ExecMode;
pub use mat::Mat;
pub use net::{Network, NetworkParams};
