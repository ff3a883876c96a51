// SPDX-License-Identifier: Apache-2.0
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::KernelError;
use crate::par;
use crate::tensor::{AccessMode, AccessSet, BlockView, BufferId, TensorBuffer};

/// Control signals that reconfigure the Convolution IP per task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ConvControlFlags {
    pub read_input_from_buffer: bool,
    pub store_output_to_buffer: bool,
    pub with_relu: bool,
    pub is_fc_layer: bool,
}

impl ConvControlFlags {
    pub const fn new(
        read_input_from_buffer: bool,
        store_output_to_buffer: bool,
        with_relu: bool,
        is_fc_layer: bool,
    ) -> Self {
        ConvControlFlags {
            read_input_from_buffer,
            store_output_to_buffer,
            with_relu,
            is_fc_layer,
        }
    }

    pub fn as_array(&self) -> [bool; 4] {
        [
            self.read_input_from_buffer,
            self.store_output_to_buffer,
            self.with_relu,
            self.is_fc_layer,
        ]
    }
}

impl fmt::Display for ConvControlFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let yn = |b: bool| if b { "YES" } else { "NO" };
        let [a, b, c, d] = self.as_array();
        write!(f, "({}, {}, {}, {})", yn(a), yn(b), yn(c), yn(d))
    }
}

/// Single on-chip slot carrying the map between consecutive layers.
///
/// The slot is a rank-3 `H × W × C` buffer. Storing a map of a different shape
/// reallocates it.
pub struct FeatureBuffer<T: Element = f64> {
    id: BufferId,
    slot: Mutex<Option<TensorBuffer<T>>>,
}

impl<T: Element> Default for FeatureBuffer<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> fmt::Debug for FeatureBuffer<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureBuffer")
            .field("id", &self.id)
            .field("slot", &self.snapshot().map(|b| b.shape().to_vec()))
            .finish()
    }
}

impl<T: Element> FeatureBuffer<T> {
    pub fn new() -> Self {
        FeatureBuffer {
            id: BufferId::fresh(),
            slot: Mutex::new(None),
        }
    }

    pub fn id(&self) -> BufferId {
        self.id
    }

    pub fn is_valid(&self) -> bool {
        self.slot.lock().unwrap_or_else(|e| e.into_inner()).is_some()
    }

    /// Handle to the current map, if any.
    pub fn snapshot(&self) -> Option<TensorBuffer<T>> {
        self.slot.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn store(&self, shape: [usize; 3], values: &[T]) -> Result<(), KernelError> {
        let mut slot = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        match slot.as_ref() {
            Some(buf) if buf.shape() == shape => {
                for (i, &v) in values.iter().enumerate() {
                    buf.set_flat(i, v);
                }
            }
            _ => {
                let buf = TensorBuffer::from_vec(&shape, values.to_vec())
                    .map_err(|e| KernelError::Shape(e.to_string()))?;
                *slot = Some(buf);
            }
        }
        Ok(())
    }

    pub fn clear(&self) {
        *self.slot.lock().unwrap_or_else(|e| e.into_inner()) = None;
    }

    /// Footprint of a task touching the slot. The slot is modeled as a single
    /// cell so any two writers, or a reader and a writer, conflict.
    pub fn access_set(&self, mode: AccessMode) -> AccessSet {
        AccessSet {
            buffer: self.id,
            ranges: std::iter::once(0..1).collect(),
            mode,
        }
    }

    fn load(&self) -> Result<([usize; 3], Vec<T>), KernelError> {
        let buf = self.snapshot().ok_or(KernelError::EmptyFeatureBuffer)?;
        let dims = dims_padded::<3>(buf.shape(), "feature buffer")?;
        Ok((dims, buf.to_vec()))
    }
}

/// Drop trailing unit axes, then pad back with unit axes to rank `N`.
fn dims_padded<const N: usize>(shape: &[usize], what: &str) -> Result<[usize; N], KernelError> {
    let mut squeezed = shape.to_vec();
    while squeezed.len() > 1 && squeezed.last() == Some(&1) {
        squeezed.pop();
    }
    if squeezed.len() > N {
        return Err(KernelError::Shape(format!(
            "{what} has shape {shape:?}, expected at most {N} non-unit leading axes"
        )));
    }
    let mut dims = [1; N];
    dims[..squeezed.len()].copy_from_slice(&squeezed);
    Ok(dims)
}

fn relu<T: Element>(v: T, enabled: bool) -> T {
    if enabled && (v.is_nan() || v <= T::zero()) {
        T::zero()
    } else {
        v
    }
}

/// Convolution IP. Convolutional layers compute a same-padded, stride-1
/// cross-correlation of an `H × W × Cin` map with `Kh × Kw × Cin × Cout`
/// weights. FC layers flatten the input and multiply by an `In × Out` matrix.
/// When a flag routes input or output through `fb`, the matching `x` or `y`
/// view is not touched.
///
/// Outputs written to DDR fill the first elements of `y` in row-major order;
/// FC inputs read from DDR take the first `In` elements of `x`.
///
/// Returns the extents of the produced map.
pub fn convolution<T: Element>(
    x: &BlockView<T>,
    y: &BlockView<T>,
    w: &BlockView<T>,
    flags: ConvControlFlags,
    fb: &FeatureBuffer<T>,
) -> Result<Vec<usize>, KernelError> {
    let (out_dims, out) = if flags.is_fc_layer {
        fully_connected(x, w, flags, fb)?
    } else {
        conv2d(x, w, flags, fb)?
    };
    if flags.store_output_to_buffer {
        fb.store(out_dims, &out)?;
    } else {
        y.write_prefix(&out).map_err(|_| {
            KernelError::Shape(format!(
                "output of {} elements does not fit view of shape {:?}",
                out.len(),
                y.shape()
            ))
        })?;
    }
    Ok(out_dims.to_vec())
}

fn conv2d<T: Element>(
    x: &BlockView<T>,
    w: &BlockView<T>,
    flags: ConvControlFlags,
    fb: &FeatureBuffer<T>,
) -> Result<([usize; 3], Vec<T>), KernelError> {
    let ([h, wd, cin], input) = if flags.read_input_from_buffer {
        fb.load()?
    } else {
        (dims_padded::<3>(&x.shape(), "convolution input")?, x.to_vec())
    };
    let [kh, kw, wcin, cout] = dims_padded::<4>(&w.shape(), "convolution weights")?;
    if wcin != cin {
        return Err(KernelError::Shape(format!(
            "weights expect {wcin} input channels, map has {cin}"
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(KernelError::Shape(format!("kernel {kh}x{kw} must have odd extents")));
    }
    let weights = w.to_vec();
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![T::zero(); h * wd * cout];
    par::for_each_chunk_mut(&mut out, wd * cout, |row, chunk| {
        for col in 0..wd {
            for co in 0..cout {
                let mut acc = T::zero();
                for ky in 0..kh {
                    let Some(iy) = (row + ky).checked_sub(ph).filter(|&v| v < h) else {
                        continue;
                    };
                    for kx in 0..kw {
                        let Some(ix) = (col + kx).checked_sub(pw).filter(|&v| v < wd) else {
                            continue;
                        };
                        let in_base = (iy * wd + ix) * cin;
                        let w_base = (ky * kw + kx) * cin;
                        for ci in 0..cin {
                            acc = acc + input[in_base + ci] * weights[(w_base + ci) * cout + co];
                        }
                    }
                }
                chunk[col * cout + co] = relu(acc, flags.with_relu);
            }
        }
    });
    Ok(([h, wd, cout], out))
}

fn fully_connected<T: Element>(
    x: &BlockView<T>,
    w: &BlockView<T>,
    flags: ConvControlFlags,
    fb: &FeatureBuffer<T>,
) -> Result<([usize; 3], Vec<T>), KernelError> {
    let [n_in, n_out] = dims_padded::<2>(&w.shape(), "FC weights")?;
    let input = if flags.read_input_from_buffer {
        let (_, v) = fb.load()?;
        if v.len() != n_in {
            return Err(KernelError::Shape(format!(
                "FC expects {n_in} inputs, feature buffer holds {}",
                v.len()
            )));
        }
        v
    } else {
        if x.len() < n_in {
            return Err(KernelError::Shape(format!(
                "FC expects {n_in} inputs, view holds {}",
                x.len()
            )));
        }
        let mut v = x.to_vec();
        v.truncate(n_in);
        v
    };
    let weights = w.to_vec();
    let out = par::map_indices(n_out, |o| {
        let mut acc = T::zero();
        for (j, &v) in input.iter().enumerate() {
            acc = acc + v * weights[j * n_out + o];
        }
        relu(acc, flags.with_relu)
    });
    Ok(([1, 1, n_out], out))
}

/// Maxpool IP: 2×2 windows, stride 2, per channel. Always reads the feature
/// buffer; writes back to it or to the prefix of `y`.
pub fn maxpool<T: Element>(
    y: &BlockView<T>,
    store_output_to_buffer: bool,
    fb: &FeatureBuffer<T>,
) -> Result<Vec<usize>, KernelError> {
    let ([h, w, c], input) = fb.load()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(KernelError::Shape(format!("maxpool needs even extents, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); oh * ow * c];
    par::for_each_chunk_mut(&mut out, ow * c, |oy, chunk| {
        for ox in 0..ow {
            for ch in 0..c {
                let at = |dy: usize, dx: usize| input[((2 * oy + dy) * w + 2 * ox + dx) * c + ch];
                chunk[ox * c + ch] = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
            }
        }
    });
    let dims = [oh, ow, c];
    if store_output_to_buffer {
        fb.store(dims, &out)?;
    } else {
        y.write_prefix(&out).map_err(|_| {
            KernelError::Shape(format!(
                "pooled map of {} elements does not fit view of shape {:?}",
                out.len(),
                y.shape()
            ))
        })?;
    }
    Ok(dims.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::tensor::Fill;

    const TO_FB: ConvControlFlags = ConvControlFlags::new(false, true, false, false);

    fn buf(shape: &[usize], v: Vec<f64>) -> TensorBuffer<f64> {
        TensorBuffer::from_vec(shape, v).unwrap()
    }

    fn dummy() -> TensorBuffer<f64> {
        TensorBuffer::zeros(&[1]).unwrap()
    }

    #[test]
    fn degenerate_convolution() {
        let fb = FeatureBuffer::new();
        let x = buf(&[1, 1, 1], vec![3.0]);
        let w = buf(&[1, 1, 1, 1], vec![-2.0]);
        let y = buf(&[1], vec![0.0]);
        let flags = ConvControlFlags::new(false, false, false, false);
        convolution(&x.view(), &y.view(), &w.view(), flags, &fb).unwrap();
        assert_eq!(y.to_vec(), vec![-6.0]);
        assert!(!fb.is_valid());
    }

    #[test]
    fn relu_kills_negative_field() {
        let fb = FeatureBuffer::new();
        let x = TensorBuffer::<f64>::new(&[5, 5, 2], Fill::Constant(-1.0)).unwrap();
        let w = TensorBuffer::<f64>::new(&[3, 3, 2, 3], Fill::Uniform { lo: 0.0, hi: 1.0, seed: 4 }).unwrap();
        let flags = ConvControlFlags::new(false, true, true, false);
        let dims = convolution(&x.view(), &dummy().view(), &w.view(), flags, &fb).unwrap();
        assert_eq!(dims, vec![5, 5, 3]);
        assert!(fb.snapshot().unwrap().to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn averaging_kernel_matches_direct_loops() {
        let fb = FeatureBuffer::new();
        let xv = TensorBuffer::<f64>::new(&[4, 4, 1], Fill::Uniform { lo: -1.0, hi: 1.0, seed: 9 }).unwrap().to_vec();
        let x = buf(&[4, 4, 1], xv.clone());
        let w = TensorBuffer::<f64>::new(&[3, 3, 1, 1], Fill::Constant(1.0 / 9.0)).unwrap();
        convolution(&x.view(), &dummy().view(), &w.view(), TO_FB, &fb).unwrap();
        let expected = oracle::direct_conv2d(4, 4, 1, &xv, 3, 3, 1, &w.to_vec(), false);
        let report = oracle::compare(&expected, &fb.snapshot().unwrap().to_vec(), 1e-12).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn multi_channel_conv_matches_direct_loops() {
        let (h, w, cin, cout) = (6, 5, 3, 4);
        let xv = TensorBuffer::<f64>::new(&[h, w, cin], Fill::Uniform { lo: -1.0, hi: 1.0, seed: 1 }).unwrap().to_vec();
        let wv = TensorBuffer::<f64>::new(&[3, 3, cin, cout], Fill::Uniform { lo: -1.0, hi: 1.0, seed: 2 }).unwrap().to_vec();
        let fb = FeatureBuffer::new();
        fb.store([h, w, cin], &xv).unwrap();
        let flags = ConvControlFlags::new(true, true, true, false);
        convolution(&dummy().view(), &dummy().view(), &buf(&[3, 3, cin, cout], wv.clone()).view(), flags, &fb).unwrap();
        let expected = oracle::direct_conv2d(h, w, cin, &xv, 3, 3, cout, &wv, true);
        let report = oracle::compare(&expected, &fb.snapshot().unwrap().to_vec(), 1e-12).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn conv_errors() {
        let fb = FeatureBuffer::<f64>::new();
        let w = TensorBuffer::<f64>::zeros(&[3, 3, 2, 1]).unwrap();
        let read_fb = ConvControlFlags::new(true, true, true, false);
        assert_eq!(
            convolution(&dummy().view(), &dummy().view(), &w.view(), read_fb, &fb),
            Err(KernelError::EmptyFeatureBuffer)
        );
        let x = TensorBuffer::<f64>::zeros(&[4, 4, 3]).unwrap();
        assert!(matches!(
            convolution(&x.view(), &dummy().view(), &w.view(), TO_FB, &fb),
            Err(KernelError::Shape(_))
        ));
        let even = TensorBuffer::<f64>::zeros(&[2, 2, 3, 1]).unwrap();
        assert!(matches!(
            convolution(&x.view(), &dummy().view(), &even.view(), TO_FB, &fb),
            Err(KernelError::Shape(_))
        ));
    }

    #[test]
    fn relu_is_idempotent_with_identity_weights() {
        let c = 3;
        let mut ident = vec![0.0; c * c];
        for i in 0..c {
            ident[i * c + i] = 1.0;
        }
        let w = buf(&[1, 1, c, c], ident);
        let x = TensorBuffer::<f64>::new(&[4, 4, c], Fill::Uniform { lo: -1.0, hi: 1.0, seed: 3 }).unwrap();
        let fb = FeatureBuffer::new();
        let first = ConvControlFlags::new(false, true, true, false);
        convolution(&x.view(), &dummy().view(), &w.view(), first, &fb).unwrap();
        let once = fb.snapshot().unwrap().to_vec();
        let again = ConvControlFlags::new(true, true, true, false);
        convolution(&dummy().view(), &dummy().view(), &w.view(), again, &fb).unwrap();
        assert_eq!(fb.snapshot().unwrap().to_vec(), once);
        let expected: Vec<f64> = x.to_vec().iter().map(|v| v.max(0.0)).collect();
        assert_eq!(once, expected);
    }

    #[test]
    fn fully_connected_layer_in_place_on_ddr() {
        let fb = FeatureBuffer::new();
        // y holds [1, 2] followed by stale data; FC reads the first two
        let y = buf(&[4, 1], vec![1.0, 2.0, 9.0, 9.0]);
        let w = buf(&[2, 3], vec![1.0, 0.0, -1.0, 0.0, 1.0, -1.0]);
        let flags = ConvControlFlags::new(false, false, true, true);
        let dims = convolution(&y.view(), &y.view(), &w.view(), flags, &fb).unwrap();
        assert_eq!(dims, vec![1, 1, 3]);
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 0.0, 9.0]);
        let too_wide = buf(&[5, 1], vec![0.0; 5]);
        assert!(convolution(&y.view(), &y.view(), &too_wide.view(), flags, &fb).is_err());
    }

    #[test]
    fn maxpool_basic_cases() {
        let fb = FeatureBuffer::new();
        fb.store([2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        maxpool(&dummy().view(), true, &fb).unwrap();
        assert_eq!(fb.snapshot().unwrap().to_vec(), vec![4.0]);
        assert_eq!(fb.snapshot().unwrap().shape(), &[1, 1, 1]);

        fb.store([4, 6, 2], &[2.5; 48]).unwrap();
        let y = TensorBuffer::<f64>::zeros(&[12]).unwrap();
        assert_eq!(maxpool(&y.view(), false, &fb).unwrap(), vec![2, 3, 2]);
        assert_eq!(y.to_vec(), vec![2.5; 12]);
    }

    #[test]
    fn maxpool_matches_windowed_oracle() {
        let fb = FeatureBuffer::new();
        let v = TensorBuffer::<f64>::new(&[8, 8, 3], Fill::Uniform { lo: -5.0, hi: 5.0, seed: 8 }).unwrap().to_vec();
        fb.store([8, 8, 3], &v).unwrap();
        maxpool(&dummy().view(), true, &fb).unwrap();
        assert_eq!(fb.snapshot().unwrap().to_vec(), oracle::direct_maxpool(8, 8, 3, &v));
    }

    #[test]
    fn maxpool_errors() {
        let fb = FeatureBuffer::<f64>::new();
        assert_eq!(maxpool(&dummy().view(), true, &fb), Err(KernelError::EmptyFeatureBuffer));
        fb.store([3, 2, 1], &[0.0; 6]).unwrap();
        assert!(matches!(maxpool(&dummy().view(), true, &fb), Err(KernelError::Shape(_))));
        fb.store([4, 4, 1], &[0.0; 16]).unwrap();
        let small = TensorBuffer::<f64>::zeros(&[3]).unwrap();
        assert!(matches!(maxpool(&small.view(), false, &fb), Err(KernelError::Shape(_))));
    }

    #[test]
    fn store_reuses_slot_of_same_shape() {
        let fb = FeatureBuffer::<f64>::new();
        fb.store([1, 1, 2], &[1.0, 2.0]).unwrap();
        let first = fb.snapshot().unwrap();
        fb.store([1, 1, 2], &[3.0, 4.0]).unwrap();
        assert!(first.same_storage(&fb.snapshot().unwrap()));
        assert_eq!(first.to_vec(), vec![3.0, 4.0]);
        fb.store([1, 1, 1], &[5.0]).unwrap();
        assert!(!first.same_storage(&fb.snapshot().unwrap()));
        fb.clear();
        assert!(!fb.is_valid());
    }
}
