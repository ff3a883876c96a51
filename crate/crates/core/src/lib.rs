// SPDX-License-Identifier: Apache-2.0
//! A software runtime for command-queue driven compute overlays.
//!
//! Applications enqueue commands on the queues of an [`overlay::Overlay`] and
//! declare dependences between task kinds. The runtime turns the commands and
//! rules into a task graph, checks that every pair of tasks touching the same
//! data is ordered, and executes the graph over a pool of workers while
//! emitting a reproducible trace.
//!
//! ```
//! use overlay_sim::apps::{lu_decompose, LuProblem};
//!
//! let problem = LuProblem::<f64>::generate(3, 4, 42).unwrap();
//! let trace = lu_decompose(&problem, 2).unwrap();
//! assert_eq!(trace.records.len(), 9);
//! ```

pub mod apps;
pub mod cli;
pub mod element;
pub mod error;
pub mod kernels;
pub mod oracle;
pub mod overlay;
pub mod par;
pub mod runtime;
pub mod tensor;

pub use element::{Element, Precision};
pub use error::{Error, Result};
