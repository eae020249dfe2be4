//! Compile histogram distributions into quantized ReLU networks that transport the uniform
//! distribution on `[0,1]` onto them.
//!
//! The pipeline:
//!
//! 1. [`histogram`] — validated 1-D and `d`-dimensional histograms, their marginals and
//!    conditionals, and quantized conditional tables.
//! 2. [`pwl`] — continuous piecewise-linear functions as ramp sums, sawtooth maps, the
//!    shaping functions and the symbolic space-filling transport map with its T-intervals.
//! 3. [`relunet`] — explicit ReLU networks, network calculus (composition, parallelization),
//!    the transport network builder, the weight-quantization audit and the bit-length count.
//! 4. [`quantizer`] — prefix-mass ledgers of an input distribution and their quantization
//!    onto a rational grid with denominator `δ^{-1}`.
//! 5. [`wasserstein`] — exact 1-D and discrete Wasserstein distances and certificates for the
//!    construction.
//!
//! ```
//! use spacefill::histogram::HistogramD;
//! use spacefill::pwl::TransportSpec;
//! use spacefill::relunet::build_transport_net;
//!
//! let p = HistogramD::new(2, 2, vec![0.5, 1.5, 1.0, 1.0]).unwrap();
//! let spec = TransportSpec::new(&p, 3).unwrap();
//! let net = build_transport_net(&spec).unwrap();
//! let y = net.forward(&[0.3]).unwrap();
//! let z = spec.transport_eval(0.3).unwrap();
//! assert!((y[0] - z[0]).abs() < 1e-9 && (y[1] - z[1]).abs() < 1e-9);
//! ```

pub mod error;
pub mod histogram;
pub mod pwl;
pub mod quantizer;
pub mod relunet;
pub mod wasserstein;

pub use error::{Error, Result};
