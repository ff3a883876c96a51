// SPDX-License-Identifier: Apache-2.0
//! Compute bodies of the IPs the two overlays are built from.
//!
//! Dense linear algebra: [`lu_factor_block`], [`transform_row_panel`],
//! [`transform_column_panel`] and [`gemm`] update their operands in place and
//! never write outside the view they were given. CNN: [`convolution`] and
//! [`maxpool`] exchange intermediate maps through a [`FeatureBuffer`].

mod cnn;
mod gemm;
mod lu;

pub use cnn::{convolution, maxpool, ConvControlFlags, FeatureBuffer};
pub use gemm::{gemm, GemmCoefficients};
pub use lu::{lu_factor_block, transform_column_panel, transform_row_panel};

use crate::element::Element;
use crate::error::KernelError;
use crate::tensor::{BlockView, MatrixRef};

pub(crate) fn as_matrix<'a, T: Element>(
    view: &'a BlockView<T>,
    what: &str,
) -> Result<MatrixRef<'a, T>, KernelError> {
    view.matrix().ok_or_else(|| {
        KernelError::Shape(format!("{what} must be a matrix view, got shape {:?}", view.shape()))
    })
}
