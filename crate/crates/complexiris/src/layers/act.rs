//! Complex activation.

use num_complex::Complex;

use crate::ctensor::ComplexTensor;
use crate::real::Real;

/// Pass `z` through unchanged when `arg(z)` lies in `[0, pi/2]`
/// (equivalently `re >= 0` and `im >= 0`), emit 0 otherwise. Boundary
/// points count as inside the quadrant, which also fixes the
/// subgradient used in the backward pass.
pub fn zrelu<F: Real>(input: &ComplexTensor<F>) -> ComplexTensor<F> {
    input.map(|z| {
        if z.re >= F::zero() && z.im >= F::zero() {
            z
        } else {
            Complex::new(F::zero(), F::zero())
        }
    })
}

/// Backward: the gradient passes exactly where the forward did.
pub fn zrelu_backward<F: Real>(
    grad_out: &ComplexTensor<F>,
    input: &ComplexTensor<F>,
) -> ComplexTensor<F> {
    debug_assert_eq!(grad_out.shape(), input.shape());
    ComplexTensor::from_fn(input.shape().clone(), |i| {
        let z = input.get(i);
        if z.re >= F::zero() && z.im >= F::zero() {
            grad_out.get(i)
        } else {
            Complex::new(F::zero(), F::zero())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctensor::Shape;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn quadrant_gating() {
        let t = ComplexTensor::from_fn(Shape::new(&[3]), |i| {
            [c(1.0, 1.0), c(-1.0, 1.0), c(1.0, -0.5)][i]
        });
        let out = zrelu(&t);
        assert_eq!(out.get(0), c(1.0, 1.0)); // arg = pi/4
        assert_eq!(out.get(1), c(0.0, 0.0)); // arg = 3pi/4
        assert_eq!(out.get(2), c(0.0, 0.0)); // arg < 0
    }

    #[test]
    fn boundary_passes_through() {
        let t = ComplexTensor::from_fn(Shape::new(&[2]), |i| [c(2.0, 0.0), c(0.0, 3.0)][i]);
        let out = zrelu(&t);
        assert_eq!(out.get(0), c(2.0, 0.0));
        assert_eq!(out.get(1), c(0.0, 3.0));
    }

    #[test]
    fn idempotent_and_first_quadrant_output() {
        let t = ComplexTensor::from_fn(Shape::new(&[100]), |i| {
            let x = (i as f64 * 0.7).sin();
            let y = (i as f64 * 1.3).cos();
            c(x, y)
        });
        let once = zrelu(&t);
        let twice = zrelu(&once);
        assert_eq!(once, twice);
        for i in 0..once.len() {
            let z = once.get(i);
            assert!(z.re >= 0.0 && z.im >= 0.0);
        }
    }
}
