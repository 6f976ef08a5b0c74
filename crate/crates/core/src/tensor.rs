//! Dense rank-4 tensors in `(batch, channels, height, width)` row-major layout.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Storage precision tag, written into checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Scalar element type. Implemented for `f32` (training) and `f64` (verification).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const DTYPE: DType;

    /// `c = alpha * a·b + beta * c` for an `m×k` by `k×n` product with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

fn extent(rows: usize, cols: usize, (rs, cs): (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_real {
    ($t:ty, $dtype:expr, $gemm:path) => {
        impl Real for $t {
            const DTYPE: DType = $dtype;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                assert!(a.len() >= extent(m, k, a_strides), "gemm: lhs too short");
                assert!(b.len() >= extent(k, n, b_strides), "gemm: rhs too short");
                assert!(c.len() >= extent(m, n, c_strides), "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above guarantee every strided access stays in bounds,
                // and `c` is uniquely borrowed so it cannot alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_real!(f32, DType::F32, matrixmultiply::sgemm);
impl_real!(f64, DType::F64, matrixmultiply::dgemm);

/// `(batch, channels, height, width)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Elements in one spatial plane.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    /// Elements in one batch sample.
    pub fn sample(&self) -> usize {
        self.c() * self.plane()
    }

    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c() + c) * self.h() + h) * self.w() + w
    }
}

impl Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n},{c},{h},{w})")
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape} needs {} elements, got {}",
                    shape.numel(),
                    data.len()
                ),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n() {
            for c in 0..shape.c() {
                for h in 0..shape.h() {
                    for w in 0..shape.w() {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![v],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.offset(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.shape.offset(n, c, h, w);
        self.data[i] = v;
    }

    /// Contiguous `(c,h,w)` block of one batch sample.
    pub fn sample(&self, n: usize) -> &[T] {
        let s = self.shape.sample();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = self.shape.offset(n, c, 0, 0);
        &self.data[start..start + p]
    }

    /// The single value of a `(1,1,1,1)` tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {}", self.shape);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Adds `other` into `self` elementwise.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    /// I.i.d. uniform samples in `[lo, hi)`.
    pub fn random_uniform<R: rand::Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| T::lit(rng.gen_range(lo..hi)))
            .collect();
        Tensor { shape, data }
    }

    /// Stacks single-sample tensors along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Invalid("stack of zero tensors".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.c() != s.c() || t.shape.h() != s.h() || t.shape.w() != s.w() {
                return Err(Error::shape(
                    "stack",
                    format!("expected (*,{},{},{}), got {}", s.c(), s.h(), s.w(), t.shape),
                ));
            }
            n += t.shape.n();
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape::new(n, s.c(), s.h(), s.w()),
            data,
        })
    }

    /// Sample `n` as a batch-of-one tensor.
    pub fn batch_item(&self, n: usize) -> Tensor<T> {
        let s = self.shape;
        Tensor {
            shape: Shape::new(1, s.c(), s.h(), s.w()),
            data: self.sample(n).to_vec(),
        }
    }
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{} ", self.shape)?;
        if self.data.len() <= 16 {
            f.debug_list().entries(&self.data).finish()
        } else {
            write!(f, "[{} elements]", self.data.len())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_row_major() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.offset(0, 0, 0, 1), 1);
        assert_eq!(s.offset(0, 0, 1, 0), 5);
        assert_eq!(s.offset(0, 1, 0, 0), 20);
        assert_eq!(s.offset(1, 0, 0, 0), 60);
        assert_eq!(s.numel(), 120);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 4]).is_ok());
    }

    #[test]
    fn gemm_with_transposed_operand() {
        // a = [[1,2],[3,4]], b^T read from row-major [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, 1.0, &a, (2, 1), &b, (1, 2), 0.0, &mut c, (2, 1));
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn stack_and_split() {
        let a = Tensor::<f32>::full(Shape::new(1, 2, 1, 1), 1.0);
        let b = Tensor::<f32>::full(Shape::new(1, 2, 1, 1), 2.0);
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 1, 1));
        assert_eq!(s.batch_item(1), b);
    }
}
