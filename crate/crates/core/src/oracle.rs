// SPDX-License-Identifier: Apache-2.0
//! Brute-force references for acceptance checking.
//!
//! Everything here works on plain `f64` slices in row-major order and shares
//! no code with [`crate::kernels`] or the runtime's conflict checker. Speed is
//! not a goal.

use std::collections::{BTreeSet, HashMap};

use crate::apps::{VggConfig, VggWeights};
use crate::element::Element;
use crate::error::OracleError;
use crate::runtime::{TaskGraph, TaskId};
use crate::tensor::{BufferId, TensorBuffer};

/// Unblocked Doolittle LU without pivoting; returns the packed `L\U` form.
pub fn oracle_lu(n: usize, a: &[f64]) -> Result<Vec<f64>, OracleError> {
    if a.len() != n * n {
        return Err(OracleError::Shape(format!("{} values for a {n}x{n} matrix", a.len())));
    }
    let mut l = vec![0.0; n * n];
    let mut u = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..i).map(|k| l[i * n + k] * u[k * n + j]).sum();
            u[i * n + j] = a[i * n + j] - s;
        }
        let pivot = u[i * n + i];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(OracleError::SingularPivot(i));
        }
        l[i * n + i] = 1.0;
        for j in i + 1..n {
            let s: f64 = (0..i).map(|k| l[j * n + k] * u[k * n + i]).sum();
            l[j * n + i] = (a[j * n + i] - s) / pivot;
        }
    }
    Ok((0..n * n)
        .map(|idx| if idx % n < idx / n { l[idx] } else { u[idx] })
        .collect())
}

/// Split a packed `L\U` matrix into unit-lower `L` and upper `U`.
pub fn unpack_lu(n: usize, packed: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut l = vec![0.0; n * n];
    let mut u = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let v = packed[r * n + c];
            match c.cmp(&r) {
                std::cmp::Ordering::Less => l[r * n + c] = v,
                std::cmp::Ordering::Equal => {
                    l[r * n + c] = 1.0;
                    u[r * n + c] = v;
                }
                std::cmp::Ordering::Greater => u[r * n + c] = v,
            }
        }
    }
    (l, u)
}

/// `(r × k) · (k × s)`.
pub fn matmul(r: usize, k: usize, s: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; r * s];
    for i in 0..r {
        for j in 0..s {
            out[i * s + j] = (0..k).map(|p| a[i * k + p] * b[p * s + j]).sum();
        }
    }
    out
}

pub fn transpose(r: usize, c: usize, a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// Solve `A X = B` for `n × n` A and `n × k` B by Gaussian elimination with
/// partial pivoting.
pub fn dense_solve(n: usize, k: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>, OracleError> {
    if a.len() != n * n || b.len() != n * k {
        return Err(OracleError::Shape("dense_solve operand sizes".into()));
    }
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[p * n + col] == 0.0 {
            return Err(OracleError::SingularPivot(col));
        }
        if p != col {
            for j in 0..n {
                a.swap(p * n + j, col * n + j);
            }
            for j in 0..k {
                x.swap(p * k + j, col * k + j);
            }
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
            for j in 0..k {
                x[r * k + j] -= f * x[col * k + j];
            }
        }
    }
    for col in (0..n).rev() {
        for j in 0..k {
            let s: f64 = (col + 1..n).map(|p| a[col * n + p] * x[p * k + j]).sum();
            x[col * k + j] = (x[col * k + j] - s) / a[col * n + col];
        }
    }
    Ok(x)
}

fn fro(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖expected − actual‖_F / ‖expected‖_F`, or the absolute norm of the
/// difference when `expected` is all zeros.
pub fn rel_fro(expected: &[f64], actual: &[f64]) -> f64 {
    let diff = fro(expected.iter().zip(actual).map(|(e, a)| e - a));
    let norm = fro(expected.iter().copied());
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonReport {
    pub max_abs_err: f64,
    pub rel_fro_err: f64,
    pub tolerance: f64,
    /// `rel_fro_err <= tolerance`.
    pub pass: bool,
}

pub fn compare(expected: &[f64], actual: &[f64], tolerance: f64) -> Result<ComparisonReport, OracleError> {
    if expected.len() != actual.len() {
        return Err(OracleError::Shape(format!(
            "comparing {} expected values against {} actual",
            expected.len(),
            actual.len()
        )));
    }
    let max_abs_err = expected
        .iter()
        .zip(actual)
        .map(|(e, a)| (e - a).abs())
        .fold(0.0, f64::max);
    let rel_fro_err = rel_fro(expected, actual);
    Ok(ComparisonReport {
        max_abs_err,
        rel_fro_err,
        tolerance,
        pass: rel_fro_err <= tolerance,
    })
}

/// `‖A − L·U‖_F / ‖A‖_F` for a packed factorization of `a`.
pub fn lu_reconstruction_error(n: usize, a: &[f64], packed: &[f64]) -> f64 {
    let (l, u) = unpack_lu(n, packed);
    rel_fro(a, &matmul(n, n, n, &l, &u))
}

/// Same-padded, stride-1 cross-correlation of an `h × w × cin` map with
/// `kh × kw × cin × cout` weights.
#[allow(clippy::too_many_arguments)]
pub fn direct_conv2d(
    h: usize,
    w: usize,
    cin: usize,
    x: &[f64],
    kh: usize,
    kw: usize,
    cout: usize,
    weights: &[f64],
    relu: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; h * w * cout];
    for oy in 0..h as isize {
        for ox in 0..w as isize {
            for co in 0..cout {
                let mut acc = 0.0;
                for ky in 0..kh as isize {
                    for kx in 0..kw as isize {
                        let iy = oy + ky - kh as isize / 2;
                        let ix = ox + kx - kw as isize / 2;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            let xv = x[(iy as usize * w + ix as usize) * cin + ci];
                            let wv = weights[((ky as usize * kw + kx as usize) * cin + ci) * cout + co];
                            acc += xv * wv;
                        }
                    }
                }
                out[(oy as usize * w + ox as usize) * cout + co] = if relu { acc.max(0.0) } else { acc };
            }
        }
    }
    out
}

/// 2×2 stride-2 max pooling of an `h × w × c` map.
pub fn direct_maxpool(h: usize, w: usize, c: usize, x: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    for y in 0..oh * 2 {
        for xx in 0..ow * 2 {
            for ch in 0..c {
                let o = &mut out[((y / 2) * ow + xx / 2) * c + ch];
                *o = o.max(x[(y * w + xx) * c + ch]);
            }
        }
    }
    out
}

/// `x · W` for an `n_in × n_out` weight matrix.
pub fn direct_fc(x: &[f64], n_out: usize, weights: &[f64], relu: bool) -> Vec<f64> {
    (0..n_out)
        .map(|o| {
            let acc: f64 = x.iter().enumerate().map(|(j, v)| v * weights[j * n_out + o]).sum();
            if relu {
                acc.max(0.0)
            } else {
                acc
            }
        })
        .collect()
}

/// Monolithic VGG forward pass over an `H × W × C × n` input. Returns one
/// vector of final FC outputs per input map.
pub fn oracle_cnn_forward<T: Element>(
    config: &VggConfig,
    x: &TensorBuffer<T>,
    weights: &VggWeights<T>,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let (h0, w0, c0, n) = (config.height, config.width, config.channels, config.batch);
    if x.shape() != [h0, w0, c0, n] {
        return Err(OracleError::Shape(format!(
            "input shape {:?}, expected {:?}",
            x.shape(),
            [h0, w0, c0, n]
        )));
    }
    let conv_weights = |layer: usize, cin: usize, cout: usize| -> Vec<f64> {
        let (stage, l) = config.conv_position(layer);
        let buf = &weights.conv[stage];
        let mut v = Vec::with_capacity(9 * cin * cout);
        for ky in 0..3 {
            for kx in 0..3 {
                for ci in 0..cin {
                    for co in 0..cout {
                        v.push(buf.get(&[ky, kx, ci, co, l]).as_f64());
                    }
                }
            }
        }
        v
    };
    let layers = config.conv_layers();
    let mut outputs = Vec::with_capacity(n);
    for map in 0..n {
        let (mut h, mut w, mut c) = (h0, w0, c0);
        let mut act: Vec<f64> = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for xx in 0..w {
                for ch in 0..c {
                    act.push(x.get(&[y, xx, ch, map]).as_f64());
                }
            }
        }
        let mut layer = 0;
        for &count in &VggConfig::STAGE_LAYERS {
            for _ in 0..count {
                let (cin, cout) = layers[layer];
                if cin != c {
                    return Err(OracleError::Shape(format!("layer {layer} expects {cin} channels, map has {c}")));
                }
                act = direct_conv2d(h, w, c, &act, 3, 3, cout, &conv_weights(layer, cin, cout), true);
                c = cout;
                layer += 1;
            }
            act = direct_maxpool(h, w, c, &act);
            h /= 2;
            w /= 2;
        }
        for fc in &weights.fc {
            let [n_in, n_out] = [fc.shape()[0], fc.shape()[1]];
            if act.len() != n_in {
                return Err(OracleError::Shape(format!("FC expects {n_in} inputs, got {}", act.len())));
            }
            act = direct_fc(&act, n_out, &fc.to_f64_vec(), true);
        }
        outputs.push(act);
    }
    Ok(outputs)
}

/// Element-level race detection: enumerate every element each task touches,
/// compute happens-before as the transitive closure of the graph's edges,
/// and report unordered task pairs that touch a common element with at least
/// one write.
type ElementKey = (BufferId, Vec<usize>);

pub fn element_race_check<T: Element>(graph: &TaskGraph<T>) -> BTreeSet<(TaskId, TaskId)> {
    let n = graph.len();
    let mut hb = vec![vec![false; n]; n];
    for (a, b) in graph.edge_pairs() {
        hb[a.0][b.0] = true;
    }
    for k in 0..n {
        let through = hb[k].clone();
        for row in hb.iter_mut().filter(|row| row[k]) {
            for (cell, &via) in row.iter_mut().zip(&through) {
                *cell |= via;
            }
        }
    }

    // element -> (task, writes?) for every touch
    let mut touches: HashMap<ElementKey, Vec<(usize, bool)>> = HashMap::new();
    for task in graph.tasks() {
        for set in &task.access_sets {
            let mut index: Vec<usize> = set.ranges.iter().map(|r| r.start).collect();
            'elements: loop {
                touches
                    .entry((set.buffer, index.clone()))
                    .or_default()
                    .push((task.id.0, set.mode.writes()));
                for axis in (0..index.len()).rev() {
                    index[axis] += 1;
                    if index[axis] < set.ranges[axis].end {
                        continue 'elements;
                    }
                    index[axis] = set.ranges[axis].start;
                }
                break;
            }
        }
    }

    let mut races = BTreeSet::new();
    for users in touches.values() {
        for (x, &(a, wa)) in users.iter().enumerate() {
            for &(b, wb) in &users[x + 1..] {
                if a != b && (wa || wb) && !hb[a][b] && !hb[b][a] {
                    races.insert((TaskId(a.min(b)), TaskId(a.max(b))));
                }
            }
        }
    }
    races
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_of_identity_and_hand_example() {
        let id: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
        assert_eq!(oracle_lu(3, &id).unwrap(), id);
        assert_eq!(oracle_lu(2, &[4.0, 3.0, 6.0, 3.0]).unwrap(), vec![4.0, 3.0, 1.5, -1.5]);
        assert_eq!(oracle_lu(2, &[0.0, 1.0, 1.0, 0.0]), Err(OracleError::SingularPivot(0)));
    }

    #[test]
    fn lu_reconstructs_dominant_matrix() {
        let n = 8;
        let a: Vec<f64> = (0..n * n)
            .map(|i| if i % (n + 1) == 0 { 10.0 } else { ((i * 37 % 11) as f64 - 5.0) / 7.0 })
            .collect();
        let packed = oracle_lu(n, &a).unwrap();
        assert!(lu_reconstruction_error(n, &a, &packed) <= 1e-12);
    }

    #[test]
    fn dense_solve_needs_pivoting() {
        let a = [0.0, 2.0, 3.0, 1.0];
        let x = dense_solve(2, 1, &a, &[4.0, 5.0]).unwrap();
        assert!(rel_fro(&[1.0, 2.0], &x) < 1e-15);
    }

    #[test]
    fn compare_cases() {
        let r = compare(&[1.0, 2.0], &[1.0, 2.0], 0.0).unwrap();
        assert_eq!((r.max_abs_err, r.rel_fro_err, r.pass), (0.0, 0.0, true));
        assert!(compare(&[1.0], &[1.0 + 1e-7], 1e-6).unwrap().pass);
        let r = compare(&[0.0, 0.0], &[1.0, 1.0], 1e-6).unwrap();
        assert!(!r.pass);
        assert_eq!(r.max_abs_err, 1.0);
        assert!(compare(&[0.0], &[0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let (h, w, c) = (3, 4, 2);
        let x: Vec<f64> = (0..h * w * c).map(|v| v as f64).collect();
        let mut k = vec![0.0; 9 * c * c];
        for ch in 0..c {
            k[((4) * c + ch) * c + ch] = 1.0;
        }
        assert_eq!(direct_conv2d(h, w, c, &x, 3, 3, c, &k, true), x);
        let ones = vec![1.0; 9];
        // corner sums a 2x2 neighbourhood, centre a full 3x3 one
        let out = direct_conv2d(3, 3, 1, &[1.0; 9], 3, 3, 1, &ones, false);
        assert_eq!(out, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn maxpool_and_fc() {
        let x = [1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 8.0, 7.0];
        // 2x4 map with one channel
        assert_eq!(direct_maxpool(2, 4, 1, &x), vec![5.0, 8.0]);
        assert_eq!(direct_fc(&[1.0, -2.0], 2, &[1.0, 2.0, 3.0, 4.0], false), vec![-5.0, -6.0]);
        assert_eq!(direct_fc(&[1.0, -2.0], 2, &[1.0, 2.0, 3.0, 4.0], true), vec![0.0, 0.0]);
    }
}
