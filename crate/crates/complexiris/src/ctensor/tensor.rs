use num_complex::Complex;

use super::Shape;
use crate::error::{Error, Result};
use crate::real::Real;

/// Dense N-dimensional array of complex values in split-plane storage.
///
/// `re` and `im` always have identical length equal to the shape's
/// element count. All arithmetic is pure: operations build new tensors
/// and never mutate their inputs, so shared read-only access across
/// threads is safe.
#[derive(Clone, PartialEq, Debug)]
pub struct ComplexTensor<F> {
    shape: Shape,
    re: Vec<F>,
    im: Vec<F>,
}

impl<F: Real> ComplexTensor<F> {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        let n = shape.len();
        ComplexTensor {
            shape,
            re: vec![F::zero(); n],
            im: vec![F::zero(); n],
        }
    }

    pub fn filled(shape: impl Into<Shape>, value: Complex<F>) -> Self {
        let shape = shape.into();
        let n = shape.len();
        ComplexTensor {
            shape,
            re: vec![value.re; n],
            im: vec![value.im; n],
        }
    }

    /// Build from existing planes; both must match the shape's length.
    pub fn from_planes(shape: impl Into<Shape>, re: Vec<F>, im: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        if re.len() != shape.len() || im.len() != shape.len() {
            return Err(Error::invalid(format!(
                "plane lengths {}/{} do not match shape {} ({} elements)",
                re.len(),
                im.len(),
                shape,
                shape.len()
            )));
        }
        Ok(ComplexTensor { shape, re, im })
    }

    /// Lift a real plane into the complex domain (zero imaginary part).
    pub fn from_re(shape: impl Into<Shape>, re: Vec<F>) -> Result<Self> {
        let n = re.len();
        Self::from_planes(shape, re, vec![F::zero(); n])
    }

    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(usize) -> Complex<F>) -> Self {
        let shape = shape.into();
        let n = shape.len();
        let mut re = Vec::with_capacity(n);
        let mut im = Vec::with_capacity(n);
        for i in 0..n {
            let z = f(i);
            re.push(z.re);
            im.push(z.im);
        }
        ComplexTensor { shape, re, im }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[F] {
        &self.re
    }

    pub fn im(&self) -> &[F] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [F] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [F] {
        &mut self.im
    }

    pub fn planes_mut(&mut self) -> (&mut [F], &mut [F]) {
        (&mut self.re, &mut self.im)
    }

    pub fn get(&self, i: usize) -> Complex<F> {
        Complex::new(self.re[i], self.im[i])
    }

    pub fn set(&mut self, i: usize, z: Complex<F>) {
        self.re[i] = z.re;
        self.im[i] = z.im;
    }

    pub fn at(&self, idx: &[usize]) -> Complex<F> {
        self.get(self.shape.offset(idx))
    }

    pub fn set_at(&mut self, idx: &[usize], z: Complex<F>) {
        self.set(self.shape.offset(idx), z)
    }

    /// Reinterpret the same elements under a new shape of equal length.
    pub fn reshaped(mut self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if shape.len() != self.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.to_string(),
                right: shape.to_string(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.to_string(),
                right: other.shape.to_string(),
            });
        }
        Ok(())
    }

    fn binary(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(Complex<F>, Complex<F>) -> Complex<F>,
    ) -> Result<Self> {
        // A length-1 right operand broadcasts as a scalar.
        if other.len() == 1 && self.len() != 1 {
            let s = other.get(0);
            return Ok(self.map(|z| f(z, s)));
        }
        self.check_same_shape(other, op)?;
        Ok(Self::from_fn(self.shape.clone(), |i| {
            f(self.get(i), other.get(i))
        }))
    }

    /// Elementwise complex addition (`other` may be a one-element scalar).
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.binary(other, "c_add", |a, b| a + b)
    }

    /// Elementwise complex subtraction.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.binary(other, "c_sub", |a, b| a - b)
    }

    /// Elementwise complex product:
    /// `(x1+iy1)(x2+iy2) = (x1x2-y1y2) + i(x1y2+y1x2)`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.binary(other, "c_mul", |a, b| a * b)
    }

    /// Multiply every element by a complex scalar.
    pub fn scale(&self, s: Complex<F>) -> Self {
        self.map(|z| z * s)
    }

    pub fn map(&self, f: impl Fn(Complex<F>) -> Complex<F>) -> Self {
        Self::from_fn(self.shape.clone(), |i| f(self.get(i)))
    }

    /// In-place elementwise accumulation; shapes must already agree.
    pub fn acc(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.re.iter_mut().zip(&other.re) {
            *a += *b;
        }
        for (a, b) in self.im.iter_mut().zip(&other.im) {
            *a += *b;
        }
    }

    /// Elementwise modulus `|z| = sqrt(re^2 + im^2)`.
    pub fn abs(&self) -> RealTensor<F> {
        RealTensor {
            shape: self.shape.clone(),
            data: (0..self.len()).map(|i| self.get(i).norm()).collect(),
        }
    }

    /// Elementwise phase `atan2(im, re)` in `(-pi, pi]`, 0 at the origin.
    pub fn arg(&self) -> RealTensor<F> {
        RealTensor {
            shape: self.shape.clone(),
            data: (0..self.len())
                .map(|i| {
                    let z = self.get(i);
                    if z.re.is_zero() && z.im.is_zero() {
                        F::zero()
                    } else {
                        z.im.atan2(z.re)
                    }
                })
                .collect(),
        }
    }

    /// Sum of squared moduli over all elements.
    pub fn sum_abs_sq(&self) -> F {
        let mut acc = F::zero();
        for i in 0..self.len() {
            acc += self.re[i] * self.re[i] + self.im[i] * self.im[i];
        }
        acc
    }

    /// Lossy precision cast through `f64`.
    pub fn cast<G: Real>(&self) -> ComplexTensor<G> {
        ComplexTensor {
            shape: self.shape.clone(),
            re: self.re.iter().map(|v| G::of(v.to_f64_())).collect(),
            im: self.im.iter().map(|v| G::of(v.to_f64_())).collect(),
        }
    }

    /// True if any element is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.re.iter().chain(self.im.iter()).any(|v| !v.is_finite())
    }
}

/// Dense real-valued tensor; the output type of modulus/phase maps and
/// the carrier for normalized iris strips.
#[derive(Clone, PartialEq, Debug)]
pub struct RealTensor<F> {
    shape: Shape,
    data: Vec<F>,
}

impl<F: Real> RealTensor<F> {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        let n = shape.len();
        RealTensor {
            shape,
            data: vec![F::zero(); n],
        }
    }

    pub fn from_data(shape: impl Into<Shape>, data: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match shape {}",
                data.len(),
                shape
            )));
        }
        Ok(RealTensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn get(&self, i: usize) -> F {
        self.data[i]
    }

    pub fn at(&self, idx: &[usize]) -> F {
        self.data[self.shape.offset(idx)]
    }
}
