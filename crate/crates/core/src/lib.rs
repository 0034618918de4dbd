//! Numerical laboratory for the directed polymer in a random environment.
//!
//! * [`env`]: environment laws, their log-moment generating functions and tails.
//! * [`polymer`]: exact transfer-matrix evaluation of the normalised partition
//!   function `W_n`, its pinned version `W_{n,x}`, the endpoint measure,
//!   stopping times and the two-replica second moment.
//! * [`conditions`]: checkers for the conditional-moment overshoot conditions
//!   and the tail criteria that imply them.
//! * [`overshoot`]: Monte Carlo experiments on exceedance counts, convex
//!   combinations of weights, and the overshoot of `W` at its hitting times.

pub mod cone;
pub mod conditions;
pub mod env;
pub mod error;
pub mod overshoot;
pub mod polymer;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod stats;

pub use env::{EnvironmentSpec, Family};
pub use error::{LabError, Result};
