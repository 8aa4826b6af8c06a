//! Numeric element type and the strided matrix products the model needs.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

pub trait Scalar: Float + FromPrimitive + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a·b + beta * c` over strided views.
    ///
    /// # Safety
    /// Every index reachable through the dimensions and strides must lie
    /// inside the corresponding buffer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
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

    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A strided matrix view: `rows x cols` starting at `off` in `data`.
#[derive(Clone, Copy)]
pub struct View<'a, T> {
    pub data: &'a [T],
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> View<'a, T> {
    /// Row-major `rows x cols`.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        View { data, off: 0, rows, cols, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        View { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    /// Columns `[c0, c0 + width)`.
    pub fn cols(self, c0: usize, width: usize) -> Self {
        View { off: self.off + c0 * self.cs, cols: width, ..self }
    }

    /// Rows `[r0, r0 + height)`.
    pub fn rows(self, r0: usize, height: usize) -> Self {
        View { off: self.off + r0 * self.rs, rows: height, ..self }
    }

    fn last(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            self.off
        } else {
            self.off + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

pub struct ViewMut<'a, T> {
    pub data: &'a mut [T],
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> ViewMut<'a, T> {
    pub fn new(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        ViewMut { data, off: 0, rows, cols, rs: cols, cs: 1 }
    }

    pub fn cols(self, c0: usize, width: usize) -> Self {
        ViewMut { off: self.off + c0 * self.cs, cols: width, ..self }
    }

    pub fn rows(self, r0: usize, height: usize) -> Self {
        ViewMut { off: self.off + r0 * self.rs, rows: height, ..self }
    }
}

/// `c = alpha * a·b + beta * c`, bounds-checked.
pub fn gemm<T: Scalar>(alpha: T, a: View<'_, T>, b: View<'_, T>, beta: T, c: ViewMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape");
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.cols == 0 {
        // Nothing to multiply; scale c by beta.
        for i in 0..c.rows {
            for j in 0..c.cols {
                let x = &mut c.data[c.off + i * c.rs + j * c.cs];
                *x = if beta == T::zero() { T::zero() } else { *x * beta };
            }
        }
        return;
    }
    assert!(a.last() < a.data.len() && b.last() < b.data.len(), "operand view out of bounds");
    let c_last = c.off + (c.rows - 1) * c.rs + (c.cols - 1) * c.cs;
    assert!(c_last < c.data.len(), "output view out of bounds");
    // SAFETY: every reachable index was checked against its buffer above.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.off),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.off),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.off),
            c.rs as isize,
            c.cs as isize,
        )
    }
}

/// Row-major `[m,k] x [k,n] -> [m,n]` (overwrites `out`).
pub fn matmul<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    gemm(T::one(), View::new(a, m, k), View::new(b, k, n), T::zero(), ViewMut::new(out, m, n));
}

/// Tanh-form GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::c((2.0 / std::f64::consts::PI).sqrt());
    let inner = c * (x + T::c(0.044715) * x * x * x);
    T::c(0.5) * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::c((2.0 / std::f64::consts::PI).sqrt());
    let inner = c * (x + T::c(0.044715) * x * x * x);
    let th = inner.tanh();
    let dinner = c * (T::one() + T::c(3.0 * 0.044715) * x * x);
    T::c(0.5) * (T::one() + th) + T::c(0.5) * x * (T::one() - th * th) * dinner
}

/// In-place log-softmax of one row; returns nothing, row becomes log-probs.
pub fn log_softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for &x in row.iter() {
        sum += (x - max).exp();
    }
    let lse = max + sum.ln();
    for x in row.iter_mut() {
        *x -= lse;
    }
}
