// SPDX-License-Identifier: Apache-2.0
use crate::element::Element;
use crate::error::KernelError;
use crate::par;
use crate::tensor::BlockView;

use super::as_matrix;

/// Doolittle factorization of a square block without pivoting. Afterwards the
/// strict lower triangle holds L (unit diagonal implied) and the upper
/// triangle, diagonal included, holds U.
pub fn lu_factor_block<T: Element>(a: &BlockView<T>) -> Result<(), KernelError> {
    let mat = as_matrix(a, "LU block")?;
    if mat.rows != mat.cols {
        return Err(KernelError::Shape(format!(
            "LU block must be square, got {}x{}",
            mat.rows, mat.cols
        )));
    }
    let n = mat.rows;
    for k in 0..n {
        let pivot = mat.at(k, k);
        if pivot.is_nan() || pivot.abs() < T::pivot_epsilon() {
            return Err(KernelError::SingularPivot {
                index: k,
                value: pivot.as_f64(),
            });
        }
        par::for_each_index(n - k - 1, |offset| {
            let i = k + 1 + offset;
            let l = mat.at(i, k) / pivot;
            mat.put(i, k, l);
            for j in k + 1..n {
                mat.put(i, j, mat.at(i, j) - l * mat.at(k, j));
            }
        });
    }
    Ok(())
}

/// Replace blocks `1..k` of an `m × (k·m)` row panel with `L⁻¹·block`, where
/// L is the unit lower triangle stored in the first block.
pub fn transform_row_panel<T: Element>(panel: &BlockView<T>) -> Result<(), KernelError> {
    let mat = as_matrix(panel, "row panel")?;
    let m = mat.rows;
    if mat.cols % m != 0 || mat.cols / m < 2 {
        return Err(KernelError::Shape(format!(
            "row panel must be m x (k*m) with k >= 2, got {}x{}",
            mat.rows, mat.cols
        )));
    }
    par::for_each_index(mat.cols - m, |offset| {
        let c = m + offset;
        for r in 1..m {
            let mut s = mat.at(r, c);
            for q in 0..r {
                s = s - mat.at(r, q) * mat.at(q, c);
            }
            mat.put(r, c, s);
        }
    });
    Ok(())
}

/// Replace blocks `1..k` of a `(k·m) × m` column panel with `block·U⁻¹`, where
/// U is the upper triangle stored in the first block.
pub fn transform_column_panel<T: Element>(panel: &BlockView<T>) -> Result<(), KernelError> {
    let mat = as_matrix(panel, "column panel")?;
    let m = mat.cols;
    if mat.rows % m != 0 || mat.rows / m < 2 {
        return Err(KernelError::Shape(format!(
            "column panel must be (k*m) x m with k >= 2, got {}x{}",
            mat.rows, mat.cols
        )));
    }
    for d in 0..m {
        let u = mat.at(d, d);
        if u.is_nan() || u.abs() < T::pivot_epsilon() {
            return Err(KernelError::SingularPivot {
                index: d,
                value: u.as_f64(),
            });
        }
    }
    par::for_each_index(mat.rows - m, |offset| {
        let r = m + offset;
        for c in 0..m {
            let mut s = mat.at(r, c);
            for q in 0..c {
                s = s - mat.at(r, q) * mat.at(q, c);
            }
            mat.put(r, c, s / mat.at(c, c));
        }
    });
    Ok(())
}
