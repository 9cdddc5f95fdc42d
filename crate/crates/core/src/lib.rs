//! Stationary analysis of M/G/c/c state-dependent road sections.
//!
//! A road section holding at most `c` cars is modelled as a finite queue
//! whose service rate depends on occupancy through a fundamental diagram.
//! The crate covers
//!
//! - [`diagram`]: section parameters, speed and flow laws, demand and supply;
//! - [`section`]: stationary law and performance of a single section;
//! - [`tandem`]: two sections in tandem coupled through a scalar fixed point;
//! - [`oracle`]: exact Markov-chain solves used as independent checks;
//! - [`cli`]: the `mgcc` command-line front end.
//!
//! ```
//! use mgcc::diagram::{FundamentalDiagram, SectionParams};
//! use mgcc::tandem::{SolverOptions, Tandem, TandemConfig};
//!
//! let upstream = FundamentalDiagram::linear(SectionParams::new(0.1, 100.0, 180.0)?);
//! let downstream = FundamentalDiagram::linear(SectionParams::new(0.1, 50.0, 180.0)?);
//! let cfg = TandemConfig::new(upstream, downstream, 1000.0)?;
//! let opts = SolverOptions::for_config(&cfg);
//! let solution = Tandem::new(cfg).solve_bisection(opts.tol)?;
//! assert!((solution.theta - 1000.0).abs() < 10.0);
//! # Ok::<(), mgcc::Error>(())
//! ```

pub mod cli;
pub mod diagram;
pub mod error;
pub mod format;
pub mod oracle;
pub mod section;
pub mod tandem;

pub use error::{Error, Result};
