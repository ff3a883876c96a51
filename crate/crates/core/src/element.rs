// SPDX-License-Identifier: Apache-2.0
//! Scalar element types a [`TensorBuffer`](crate::tensor::TensorBuffer) can hold.
//!
//! Elements live in relaxed atomic cells so that several tasks may hold views
//! of one buffer and touch disjoint regions concurrently without locks. On the
//! targets we care about, relaxed loads and stores compile to plain moves.

use std::fmt::{Debug, Display};
use std::str::FromStr;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use num_traits::Float;
use serde::{Deserialize, Serialize};

pub trait Element:
    Float + Default + Debug + Display + FromStr + Send + Sync + 'static
{
    type Cell: Send + Sync;

    const PRECISION: Precision;

    fn cell(value: Self) -> Self::Cell;
    fn load(cell: &Self::Cell) -> Self;
    fn store(cell: &Self::Cell, value: Self);

    /// Smallest pivot magnitude accepted by the LU kernels.
    fn pivot_epsilon() -> Self;

    fn from_f64(value: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f64 {
    type Cell = AtomicU64;
    const PRECISION: Precision = Precision::F64;

    #[inline]
    fn cell(value: Self) -> AtomicU64 {
        AtomicU64::new(value.to_bits())
    }
    #[inline]
    fn load(cell: &AtomicU64) -> Self {
        f64::from_bits(cell.load(Ordering::Relaxed))
    }
    #[inline]
    fn store(cell: &AtomicU64, value: Self) {
        cell.store(value.to_bits(), Ordering::Relaxed)
    }
    fn pivot_epsilon() -> Self {
        1e-12
    }
    #[inline]
    fn from_f64(value: f64) -> Self {
        value
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Element for f32 {
    type Cell = AtomicU32;
    const PRECISION: Precision = Precision::F32;

    #[inline]
    fn cell(value: Self) -> AtomicU32 {
        AtomicU32::new(value.to_bits())
    }
    #[inline]
    fn load(cell: &AtomicU32) -> Self {
        f32::from_bits(cell.load(Ordering::Relaxed))
    }
    #[inline]
    fn store(cell: &AtomicU32, value: Self) {
        cell.store(value.to_bits(), Ordering::Relaxed)
    }
    fn pivot_epsilon() -> Self {
        1e-6
    }
    #[inline]
    fn from_f64(value: f64) -> Self {
        value as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::F32 => f.write_str("f32"),
            Precision::F64 => f.write_str("f64"),
        }
    }
}
