//! A small convolutional network with hand-derived backward passes.
//!
//! The feature extractor is three `conv3x3 -> ReLU -> maxpool2x2` blocks
//! (16/32/64 channels) followed by global average pooling, giving a
//! 64-dimensional feature per image. A [`Model`] owns one extractor (single
//! channel) or two (original + augmented), merges their features by
//! concatenation or summation and classifies with a fully connected head.
//!
//! Everything is generic over [`Real`] so the gradient checker can re-run the
//! forward pass in `f64`.

pub mod checkpoint;
mod extractor;
pub mod gradcheck;
mod layers;
mod loss;
mod model;
mod optim;
mod tensor;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

pub use extractor::{Extractor, ExtractorCache, FEATURE_DIM, WIDTHS};
pub use layers::{Conv2d, Linear};
pub use loss::{cross_entropy_loss, softmax_rows, top_k_hits};
pub use model::{merge_features, split_merged_grad, Gradients, Merge, Model, ModelCache, Trainable};
pub use optim::{lr_schedule, sgd_step, sgd_update};
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("{0}")]
    Config(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

/// Floating-point element type of tensors and parameters.
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + 'static {
    /// `c = a · b + beta · c` for strided matrices.
    ///
    /// # Safety
    /// Strides and dimensions must address memory inside the given slices;
    /// the safe wrapper [`gemm`] checks this.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> Mat<'a, T> {
    /// Row-major `rows x cols` view.
    pub(crate) fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub(crate) fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn fits(&self) -> bool {
        self.rows == 0 || self.cols == 0 || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len()
    }
}

/// `c (row-major, a.rows x b.cols) = a · b + beta · c`.
pub(crate) fn gemm<T: Real>(a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert!(a.fits() && b.fits(), "operand view out of bounds");
    assert_eq!(c.len(), a.rows * b.cols, "output buffer size");
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    // SAFETY: the views were bounds-checked above and `c` is exclusively
    // borrowed with exactly `m * n` elements.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}
