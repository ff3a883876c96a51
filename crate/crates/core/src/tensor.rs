// SPDX-License-Identifier: Apache-2.0
//! Dense buffers and in-place cropped views.
//!
//! A [`TensorBuffer`] is a shared handle to row-major storage (last axis
//! fastest). A [`BlockView`] is a rectangular window into one buffer: it
//! records per-axis element ranges and never copies. Every view can report
//! the exact element footprint it exposes as an [`AccessSet`], which is what
//! the runtime's aliasing checks work on.

use std::fmt;
use std::io::{BufReader, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::TensorError;

static NEXT_BUFFER_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BufferId(pub u64);

impl BufferId {
    pub(crate) fn fresh() -> Self {
        BufferId(NEXT_BUFFER_ID.fetch_add(1, Ordering::Relaxed))
    }
}

impl fmt::Display for BufferId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// How a freshly allocated buffer is initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum Fill<T> {
    Zeros,
    Constant(T),
    /// Uniform samples in `[lo, hi)` from a ChaCha8 stream seeded with `seed`.
    Uniform { lo: f64, hi: f64, seed: u64 },
    /// Tensor-text file; its declared shape must equal the requested one.
    File(PathBuf),
}

struct Inner<T: Element> {
    id: BufferId,
    shape: Vec<usize>,
    strides: Vec<usize>,
    cells: Box<[T::Cell]>,
}

/// Owned dense N-dimensional storage. Cloning clones the handle, not the data.
pub struct TensorBuffer<T: Element = f64> {
    inner: Arc<Inner<T>>,
}

impl<T: Element> Clone for TensorBuffer<T> {
    fn clone(&self) -> Self {
        TensorBuffer {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for TensorBuffer<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TensorBuffer")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .finish()
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for axis in (0..shape.len().saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * shape[axis + 1];
    }
    strides
}

fn check_shape(shape: &[usize]) -> Result<(), TensorError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(())
}

impl<T: Element> TensorBuffer<T> {
    pub fn new(shape: &[usize], fill: Fill<T>) -> Result<Self, TensorError> {
        check_shape(shape)?;
        let len: usize = shape.iter().product();
        let values: Vec<T> = match fill {
            Fill::Zeros => vec![T::zero(); len],
            Fill::Constant(c) => vec![c; len],
            Fill::Uniform { lo, hi, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..len)
                    .map(|_| T::from_f64(lo + (hi - lo) * rng.gen::<f64>()))
                    .collect()
            }
            Fill::File(path) => {
                let loaded = Self::load_text(&path)?;
                if loaded.shape() != shape {
                    return Err(TensorError::ShapeMismatch {
                        expected: shape.to_vec(),
                        actual: loaded.shape().to_vec(),
                    });
                }
                loaded.to_vec()
            }
        };
        Ok(Self::from_parts(shape.to_vec(), values))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape, Fill::Zeros)
    }

    pub fn from_vec(shape: &[usize], values: Vec<T>) -> Result<Self, TensorError> {
        check_shape(shape)?;
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(TensorError::ShapeMismatch {
                expected: shape.to_vec(),
                actual: vec![values.len()],
            });
        }
        Ok(Self::from_parts(shape.to_vec(), values))
    }

    fn from_parts(shape: Vec<usize>, values: Vec<T>) -> Self {
        let strides = row_major_strides(&shape);
        let cells = values.into_iter().map(T::cell).collect();
        TensorBuffer {
            inner: Arc::new(Inner {
                id: BufferId::fresh(),
                shape,
                strides,
                cells,
            }),
        }
    }

    /// Square identity matrix.
    pub fn identity(n: usize) -> Result<Self, TensorError> {
        let buf = Self::zeros(&[n, n])?;
        for i in 0..n {
            buf.set(&[i, i], T::one());
        }
        Ok(buf)
    }

    pub fn id(&self) -> BufferId {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.inner.strides
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.cells.is_empty()
    }

    pub(crate) fn cells(&self) -> &[T::Cell] {
        &self.inner.cells
    }

    /// True when both handles refer to the same storage.
    pub fn same_storage(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        index
            .iter()
            .zip(self.shape())
            .zip(self.strides())
            .map(|((&i, &e), &s)| {
                assert!(i < e, "index {index:?} out of bounds for shape {:?}", self.shape());
                i * s
            })
            .sum()
    }

    pub fn get(&self, index: &[usize]) -> T {
        T::load(&self.inner.cells[self.offset(index)])
    }

    pub fn set(&self, index: &[usize], value: T) {
        T::store(&self.inner.cells[self.offset(index)], value)
    }

    pub fn get_flat(&self, i: usize) -> T {
        T::load(&self.inner.cells[i])
    }

    pub fn set_flat(&self, i: usize, value: T) {
        T::store(&self.inner.cells[i], value)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.cells.iter().map(T::load).collect()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.cells.iter().map(|c| T::load(c).as_f64()).collect()
    }

    /// Copy into fresh storage with a new id.
    pub fn deep_copy(&self) -> Self {
        Self::from_parts(self.shape().to_vec(), self.to_vec())
    }

    /// Bitwise equality of shape and contents.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && self
                .inner
                .cells
                .iter()
                .zip(other.inner.cells.iter())
                .all(|(a, b)| T::load(a).as_f64().to_bits() == T::load(b).as_f64().to_bits())
    }

    /// View of the whole buffer.
    pub fn view(&self) -> BlockView<T> {
        BlockView {
            buffer: self.clone(),
            ranges: self.shape().iter().map(|&e| 0..e).collect(),
            origin: ViewOrigin::Whole,
        }
    }

    /// Crop in blocks of `block × block`; the row and column block indices are
    /// inclusive on both ends.
    pub fn bcropped(
        &self,
        block: usize,
        start_row: usize,
        end_row: usize,
        start_col: usize,
        end_col: usize,
    ) -> Result<BlockView<T>, TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::InvalidCrop(format!(
                "block crop needs a rank-2 buffer, got shape {:?}",
                self.shape()
            )));
        }
        if block == 0 {
            return Err(TensorError::InvalidCrop("block size must be at least 1".into()));
        }
        for &extent in self.shape() {
            if extent % block != 0 {
                return Err(TensorError::BlockMisalignment { extent, block });
            }
        }
        let (block_rows, block_cols) = (self.shape()[0] / block, self.shape()[1] / block);
        if start_row > end_row || start_col > end_col {
            return Err(TensorError::InvalidCrop(format!(
                "empty block range rows {start_row}..={end_row}, cols {start_col}..={end_col}"
            )));
        }
        if end_row >= block_rows || end_col >= block_cols {
            return Err(TensorError::InvalidCrop(format!(
                "block range rows {start_row}..={end_row}, cols {start_col}..={end_col} exceeds {block_rows}x{block_cols} blocks"
            )));
        }
        Ok(BlockView {
            buffer: self.clone(),
            ranges: vec![
                start_row * block..(end_row + 1) * block,
                start_col * block..(end_col + 1) * block,
            ],
            origin: ViewOrigin::BlockCrop {
                block,
                start_row,
                end_row,
                start_col,
                end_col,
            },
        })
    }

    /// Restrict one axis to `[start, start + extent)`; other axes stay full.
    pub fn cropped(&self, axis: usize, start: usize, extent: usize) -> Result<BlockView<T>, TensorError> {
        self.view().crop(axis, start, extent)
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "dims {}", self.rank())?;
        for e in self.shape() {
            write!(out, " {e}")?;
        }
        writeln!(out)?;
        let row = *self.shape().last().expect("rank >= 1");
        for chunk in self.to_vec().chunks(row) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<(), TensorError> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_text(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_text<R: Read>(input: R) -> Result<Self, TensorError> {
        let mut text = String::new();
        BufReader::new(input).read_to_string(&mut text)?;
        let mut tokens = text.split_whitespace().enumerate();
        let parse_err = |token: usize, msg: String| TensorError::Parse { token, msg };

        match tokens.next() {
            Some((_, "dims")) => {}
            Some((i, t)) => return Err(parse_err(i, format!("expected `dims`, found `{t}`"))),
            None => return Err(parse_err(0, "empty input".into())),
        }
        let mut next_usize = |what: &str| -> Result<usize, TensorError> {
            let (i, t) = tokens
                .next()
                .ok_or_else(|| parse_err(usize::MAX, format!("missing {what}")))?;
            t.parse::<usize>()
                .map_err(|e| parse_err(i, format!("bad {what} `{t}`: {e}")))
        };
        let rank = next_usize("rank")?;
        let shape = (0..rank)
            .map(|_| next_usize("extent"))
            .collect::<Result<Vec<_>, _>>()?;
        check_shape(&shape)?;
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for (i, t) in tokens {
            if values.len() == len {
                return Err(parse_err(i, format!("trailing data `{t}` after {len} elements")));
            }
            let v = t
                .parse::<T>()
                .map_err(|_| parse_err(i, format!("bad element `{t}`")))?;
            values.push(v);
        }
        if values.len() != len {
            return Err(parse_err(
                usize::MAX,
                format!("expected {len} elements, found {}", values.len()),
            ));
        }
        Self::from_vec(&shape, values)
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self, TensorError> {
        let file = std::fs::File::open(path)?;
        Self::read_text(file)
    }
}

/// How a view was formed. Used for diagnostics only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViewOrigin {
    Whole,
    BlockCrop {
        block: usize,
        start_row: usize,
        end_row: usize,
        start_col: usize,
        end_col: usize,
    },
    AxisCrop {
        axis: usize,
        start: usize,
        extent: usize,
    },
}

/// In-place rectangular window into a [`TensorBuffer`].
pub struct BlockView<T: Element = f64> {
    buffer: TensorBuffer<T>,
    ranges: Vec<Range<usize>>,
    origin: ViewOrigin,
}

impl<T: Element> Clone for BlockView<T> {
    fn clone(&self) -> Self {
        BlockView {
            buffer: self.buffer.clone(),
            ranges: self.ranges.clone(),
            origin: self.origin.clone(),
        }
    }
}

impl<T: Element> fmt::Debug for BlockView<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlockView")
            .field("buffer", &self.buffer.id())
            .field("ranges", &self.ranges)
            .field("origin", &self.origin)
            .finish()
    }
}

impl<T: Element> BlockView<T> {
    pub fn buffer(&self) -> &TensorBuffer<T> {
        &self.buffer
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn origin(&self) -> &ViewOrigin {
        &self.origin
    }

    pub fn shape(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }

    /// Shape with trailing unit axes removed (at least one axis is kept).
    pub fn squeezed_shape(&self) -> Vec<usize> {
        let mut shape = self.shape();
        while shape.len() > 1 && shape.last() == Some(&1) {
            shape.pop();
        }
        shape
    }

    pub fn rank(&self) -> usize {
        self.ranges.len()
    }

    pub fn len(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Buffer offset of a view coordinate.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        index
            .iter()
            .zip(&self.ranges)
            .zip(self.buffer.strides())
            .map(|((&i, r), &s)| {
                assert!(i < r.len(), "view index {index:?} out of bounds for {:?}", self.shape());
                (r.start + i) * s
            })
            .sum()
    }

    pub fn get(&self, index: &[usize]) -> T {
        T::load(&self.buffer.cells()[self.offset(index)])
    }

    pub fn set(&self, index: &[usize], value: T) {
        T::store(&self.buffer.cells()[self.offset(index)], value)
    }

    /// Buffer offsets of every element in view row-major order.
    pub fn offsets(&self) -> ViewOffsets<'_> {
        ViewOffsets {
            ranges: &self.ranges,
            strides: self.buffer.strides(),
            cursor: self.ranges.iter().map(|r| r.start).collect(),
            remaining: self.len(),
        }
    }

    pub fn to_vec(&self) -> Vec<T> {
        let cells = self.buffer.cells();
        self.offsets().map(|o| T::load(&cells[o])).collect()
    }

    /// Write `values` over the first `values.len()` elements of the view in
    /// row-major order.
    pub fn write_prefix(&self, values: &[T]) -> Result<(), TensorError> {
        if values.len() > self.len() {
            return Err(TensorError::ShapeMismatch {
                expected: self.shape(),
                actual: vec![values.len()],
            });
        }
        let cells = self.buffer.cells();
        for (o, &v) in self.offsets().zip(values) {
            T::store(&cells[o], v);
        }
        Ok(())
    }

    pub fn fill(&self, value: T) {
        let cells = self.buffer.cells();
        for o in self.offsets() {
            T::store(&cells[o], value);
        }
    }

    /// Further restrict one axis, in view coordinates.
    pub fn crop(&self, axis: usize, start: usize, extent: usize) -> Result<BlockView<T>, TensorError> {
        if axis >= self.rank() {
            return Err(TensorError::InvalidCrop(format!(
                "axis {axis} out of range for rank {}",
                self.rank()
            )));
        }
        let range = &self.ranges[axis];
        if extent == 0 || start >= range.len() || start + extent > range.len() {
            return Err(TensorError::InvalidCrop(format!(
                "[{start}, {}) outside axis {axis} of extent {}",
                start + extent,
                range.len()
            )));
        }
        let mut ranges = self.ranges.clone();
        ranges[axis] = range.start + start..range.start + start + extent;
        Ok(BlockView {
            buffer: self.buffer.clone(),
            ranges,
            origin: ViewOrigin::AxisCrop {
                axis,
                start,
                extent,
            },
        })
    }

    /// Rank-2 accessor. Fails unless the squeezed view is a matrix.
    pub fn matrix(&self) -> Option<MatrixRef<'_, T>> {
        if self.rank() != 2 {
            return None;
        }
        let strides = self.buffer.strides();
        Some(MatrixRef {
            cells: self.buffer.cells(),
            base: self.ranges[0].start * strides[0] + self.ranges[1].start * strides[1],
            row_stride: strides[0],
            rows: self.ranges[0].len(),
            cols: self.ranges[1].len(),
        })
    }

    pub fn access_set(&self, mode: AccessMode) -> AccessSet {
        AccessSet {
            buffer: self.buffer.id(),
            ranges: self.ranges.clone(),
            mode,
        }
    }

    /// True when both views share storage and intersect on every axis.
    pub fn overlaps(&self, other: &BlockView<T>) -> bool {
        self.buffer.same_storage(&other.buffer)
            && ranges_intersect(&self.ranges, &other.ranges).is_some()
    }
}

/// Row-major iterator over the buffer offsets a view covers.
pub struct ViewOffsets<'a> {
    ranges: &'a [Range<usize>],
    strides: &'a [usize],
    cursor: Vec<usize>,
    remaining: usize,
}

impl Iterator for ViewOffsets<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let offset = self.cursor.iter().zip(self.strides).map(|(i, s)| i * s).sum();
        for axis in (0..self.cursor.len()).rev() {
            self.cursor[axis] += 1;
            if self.cursor[axis] < self.ranges[axis].end {
                break;
            }
            self.cursor[axis] = self.ranges[axis].start;
        }
        Some(offset)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for ViewOffsets<'_> {}

/// Strided matrix window used by the dense kernels.
#[derive(Clone, Copy)]
pub struct MatrixRef<'a, T: Element> {
    cells: &'a [T::Cell],
    base: usize,
    row_stride: usize,
    pub rows: usize,
    pub cols: usize,
}

impl<T: Element> MatrixRef<'_, T> {
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        debug_assert!(r < self.rows && c < self.cols);
        T::load(&self.cells[self.base + r * self.row_stride + c])
    }

    #[inline]
    pub fn put(&self, r: usize, c: usize, value: T) {
        debug_assert!(r < self.rows && c < self.cols);
        T::store(&self.cells[self.base + r * self.row_stride + c], value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccessMode {
    Read,
    Write,
    ReadWrite,
}

impl AccessMode {
    pub fn reads(self) -> bool {
        matches!(self, AccessMode::Read | AccessMode::ReadWrite)
    }

    pub fn writes(self) -> bool {
        matches!(self, AccessMode::Write | AccessMode::ReadWrite)
    }
}

impl fmt::Display for AccessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessMode::Read => "read",
            AccessMode::Write => "write",
            AccessMode::ReadWrite => "read-write",
        })
    }
}

/// Element footprint of one operand of a task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessSet {
    pub buffer: BufferId,
    pub ranges: Vec<Range<usize>>,
    pub mode: AccessMode,
}

impl AccessSet {
    /// Intersection of the two footprints, if they share a buffer and overlap
    /// on every axis.
    pub fn overlap(&self, other: &AccessSet) -> Option<Vec<Range<usize>>> {
        if self.buffer != other.buffer {
            return None;
        }
        ranges_intersect(&self.ranges, &other.ranges)
    }

    /// Same buffer, overlapping on every axis, and at least one side writes.
    pub fn conflicts_with(&self, other: &AccessSet) -> bool {
        (self.mode.writes() || other.mode.writes()) && self.overlap(other).is_some()
    }

    pub fn contains(&self, index: &[usize]) -> bool {
        index.len() == self.ranges.len() && index.iter().zip(&self.ranges).all(|(i, r)| r.contains(i))
    }
}

impl fmt::Display for AccessSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{} {}", self.buffer, fmt_ranges(&self.ranges), self.mode)
    }
}

pub fn fmt_ranges(ranges: &[Range<usize>]) -> String {
    let parts: Vec<String> = ranges.iter().map(|r| format!("{}..{}", r.start, r.end)).collect();
    format!("[{}]", parts.join(", "))
}

fn ranges_intersect(a: &[Range<usize>], b: &[Range<usize>]) -> Option<Vec<Range<usize>>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let lo = x.start.max(y.start);
            let hi = x.end.min(y.end);
            (lo < hi).then_some(lo..hi)
        })
        .collect()
}
