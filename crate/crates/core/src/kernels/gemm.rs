// SPDX-License-Identifier: Apache-2.0
use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::KernelError;
use crate::par;
use crate::tensor::BlockView;

use super::as_matrix;

/// Coefficients of `C = alpha·C + beta·A·(gamma·B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GemmCoefficients<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

impl<T: Element> GemmCoefficients<T> {
    pub fn new(alpha: T, beta: T, gamma: T) -> Self {
        GemmCoefficients { alpha, beta, gamma }
    }

    /// `C -= A·B`, the trailing update of blocked LU.
    pub fn trailing_update() -> Self {
        Self::new(T::one(), -T::one(), T::one())
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite() && self.gamma.is_finite()
    }
}

pub fn gemm<T: Element>(
    c: &BlockView<T>,
    a: &BlockView<T>,
    b: &BlockView<T>,
    co: GemmCoefficients<T>,
) -> Result<(), KernelError> {
    if !co.is_finite() {
        return Err(KernelError::Shape(format!("non-finite GEMM coefficients {co:?}")));
    }
    let (cm, am, bm) = (as_matrix(c, "C")?, as_matrix(a, "A")?, as_matrix(b, "B")?);
    if am.cols != bm.rows || cm.rows != am.rows || cm.cols != bm.cols {
        return Err(KernelError::Shape(format!(
            "C {}x{} != A {}x{} * B {}x{}",
            cm.rows, cm.cols, am.rows, am.cols, bm.rows, bm.cols
        )));
    }
    if c.overlaps(a) || c.overlaps(b) {
        return Err(KernelError::Aliasing(format!(
            "C {:?} overlaps an input operand",
            c.ranges()
        )));
    }
    let inner = am.cols;
    let GemmCoefficients { alpha, beta, gamma } = co;
    par::for_each_index(cm.rows, |i| {
        for j in 0..cm.cols {
            let mut acc = T::zero();
            for q in 0..inner {
                acc = acc + am.at(i, q) * (gamma * bm.at(q, j));
            }
            cm.put(i, j, alpha * cm.at(i, j) + beta * acc);
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::testutil::{guard_intact, guarded};
    use crate::oracle;
    use crate::tensor::{Fill, TensorBuffer};
    use proptest::prelude::*;

    fn mat(rows: usize, cols: usize, values: &[f64]) -> TensorBuffer<f64> {
        TensorBuffer::from_vec(&[rows, cols], values.to_vec()).unwrap()
    }

    #[test]
    fn zero_beta_leaves_c() {
        let c = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let a = mat(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        gemm(&c.view(), &a.view(), &a.deep_copy().view(), GemmCoefficients::new(1.0, 0.0, 1.0)).unwrap();
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn hand_product() {
        let c = TensorBuffer::<f64>::identity(2).unwrap();
        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = TensorBuffer::<f64>::identity(2).unwrap();
        gemm(&c.view(), &a.view(), &b.view(), GemmCoefficients::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(c.to_vec(), vec![2.0, 2.0, 3.0, 5.0]);
    }

    #[test]
    fn trailing_update_subtracts_product() {
        let co = GemmCoefficients::<f64>::trailing_update();
        assert_eq!((co.alpha, co.beta, co.gamma), (1.0, -1.0, 1.0));
        let (r, k, s) = (3, 4, 5);
        let cv = TensorBuffer::<f64>::new(&[r, s], Fill::Uniform { lo: -1.0, hi: 1.0, seed: 1 }).unwrap().to_vec();
        let av = TensorBuffer::<f64>::new(&[r, k], Fill::Uniform { lo: -1.0, hi: 1.0, seed: 2 }).unwrap().to_vec();
        let bv = TensorBuffer::<f64>::new(&[k, s], Fill::Uniform { lo: -1.0, hi: 1.0, seed: 3 }).unwrap().to_vec();
        let (cbuf, cview) = guarded(r, s, 1, &cv);
        gemm(&cview, &mat(r, k, &av).view(), &mat(k, s, &bv).view(), co).unwrap();
        assert!(guard_intact(&cbuf, &cview));
        let ab = oracle::matmul(r, k, s, &av, &bv);
        let expected: Vec<f64> = cv.iter().zip(&ab).map(|(c, p)| c - p).collect();
        assert!(oracle::rel_fro(&expected, &cview.to_vec()) <= 1e-12);
    }

    #[test]
    fn shape_and_alias_errors() {
        let c = TensorBuffer::<f64>::zeros(&[2, 3]).unwrap();
        let a = TensorBuffer::<f64>::zeros(&[2, 2]).unwrap();
        assert!(matches!(
            gemm(&c.view(), &a.view(), &a.view(), GemmCoefficients::new(1.0, 1.0, 1.0)),
            Err(KernelError::Shape(_))
        ));
        let big = TensorBuffer::<f64>::zeros(&[4, 4]).unwrap();
        let cc = big.bcropped(2, 1, 1, 1, 1).unwrap();
        let aa = big.bcropped(2, 1, 1, 0, 0).unwrap();
        let bb = big.bcropped(2, 0, 0, 1, 1).unwrap();
        gemm(&cc, &aa, &bb, GemmCoefficients::trailing_update()).unwrap();
        assert!(matches!(
            gemm(&cc, &cc, &bb, GemmCoefficients::trailing_update()),
            Err(KernelError::Aliasing(_))
        ));
    }

    proptest! {
        #[test]
        fn coefficient_bilinearity(seed in 0u64..1000, b in -2.0f64..2.0, g in -2.0f64..2.0) {
            let c0 = TensorBuffer::<f64>::new(&[3, 3], Fill::Uniform { lo: -1.0, hi: 1.0, seed }).unwrap();
            let a = TensorBuffer::<f64>::new(&[3, 4], Fill::Uniform { lo: -1.0, hi: 1.0, seed: seed + 1 }).unwrap();
            let bm = TensorBuffer::<f64>::new(&[4, 3], Fill::Uniform { lo: -1.0, hi: 1.0, seed: seed + 2 }).unwrap();
            let c1 = c0.deep_copy();
            gemm(&c0.view(), &a.view(), &bm.view(), GemmCoefficients::new(1.0, b, g)).unwrap();
            gemm(&c1.view(), &a.view(), &bm.view(), GemmCoefficients::new(1.0, b * g, 1.0)).unwrap();
            let report = oracle::compare(&c1.to_vec(), &c0.to_vec(), 1e-12).unwrap();
            prop_assert!(report.max_abs_err <= 1e-12, "{report:?}");
        }
    }
}
