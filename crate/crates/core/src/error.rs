// SPDX-License-Identifier: Apache-2.0
use thiserror::Error;

use crate::runtime::TaskId;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("invalid shape {0:?}: every extent must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("extent {extent} is not divisible by block size {block}")]
    BlockMisalignment { extent: usize, block: usize },
    #[error("invalid crop: {0}")]
    InvalidCrop(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("tensor-text parse error at token {token}: {msg}")]
    Parse { token: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("singular pivot at index {index} (|{value}| below epsilon)")]
    SingularPivot { index: usize, value: f64 },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("aliasing error: {0}")]
    Aliasing(String),
    #[error("feature buffer is empty")]
    EmptyFeatureBuffer,
}

#[derive(Debug, Error)]
pub enum OverlayError {
    #[error("overlay configuration error: {0}")]
    Config(String),
    #[error("invocation error: {0}")]
    Invocation(String),
    #[error("malformed manifest: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("rule error: {0}")]
    Rule(String),
    #[error("cyclic dependence: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{count} unordered conflicting task pair(s); refusing to run without override:\n{report}")]
    Unsafe { count: usize, report: String },
    #[error("task {task} ({kind}) failed: {source}")]
    Kernel {
        task: TaskId,
        kind: String,
        #[source]
        source: KernelError,
    },
    #[error("scheduler worker panicked")]
    WorkerPanic,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("oracle hit singular pivot at index {0}")]
    SingularPivot(usize),
    #[error("oracle shape error: {0}")]
    Shape(String),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
