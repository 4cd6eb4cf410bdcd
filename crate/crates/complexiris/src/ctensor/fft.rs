//! 2-D FFT over the spatial axes of a complex tensor.
//!
//! Forward is unnormalized; the inverse carries the `1/(H*W)` factor.
//! Arbitrary extents are supported (the planner falls back to Bluestein
//! for awkward prime factors), so transition-block feature sizes never
//! constrain the architecture.

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use super::{ComplexTensor, Shape};
use crate::error::{Error, Result};
use crate::real::Real;

/// Spatial layout of a tensor whose shape is `(H,W)`, `(H,W,C)` or
/// `(N,H,W,C)`.
struct Planes {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
}

impl Planes {
    fn of(shape: &Shape) -> Result<Planes> {
        let d = shape.dims();
        let (n, h, w, c) = match d.len() {
            2 => (1, d[0], d[1], 1),
            3 => (1, d[0], d[1], d[2]),
            4 => (d[0], d[1], d[2], d[3]),
            _ => {
                return Err(Error::invalid(format!(
                    "fft2 expects (H,W), (H,W,C) or (N,H,W,C), got {shape}"
                )))
            }
        };
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::invalid(format!("fft2 on zero-sized axis: {shape}")));
        }
        Ok(Planes { n, h, w, c })
    }

    #[inline]
    fn offset(&self, plane: usize, h: usize, w: usize) -> usize {
        let (ni, ci) = (plane / self.c, plane % self.c);
        ((ni * self.h + h) * self.w + w) * self.c + ci
    }
}

fn transform<F: Real>(a: &ComplexTensor<F>, inverse: bool) -> Result<ComplexTensor<F>> {
    let p = Planes::of(a.shape())?;
    let mut planner = FftPlanner::<F>::new();
    let (row_fft, col_fft): (Arc<dyn Fft<F>>, Arc<dyn Fft<F>>) = if inverse {
        (planner.plan_fft_inverse(p.w), planner.plan_fft_inverse(p.h))
    } else {
        (planner.plan_fft_forward(p.w), planner.plan_fft_forward(p.h))
    };
    let norm = if inverse {
        F::one() / F::from_usize_(p.h * p.w)
    } else {
        F::one()
    };

    let n_planes = p.n * p.c;
    let plane_len = p.h * p.w;
    // Each plane is independent, so parallel execution is deterministic.
    let planes: Vec<Vec<Complex<F>>> = (0..n_planes)
        .into_par_iter()
        .map(|pl| {
            let mut buf: Vec<Complex<F>> = Vec::with_capacity(plane_len);
            for h in 0..p.h {
                for w in 0..p.w {
                    buf.push(a.get(p.offset(pl, h, w)));
                }
            }
            let mut scratch =
                vec![Complex::new(F::zero(), F::zero()); row_fft.get_inplace_scratch_len()];
            for row in buf.chunks_exact_mut(p.w) {
                row_fft.process_with_scratch(row, &mut scratch);
            }
            let mut col = vec![Complex::new(F::zero(), F::zero()); p.h];
            let mut col_scratch =
                vec![Complex::new(F::zero(), F::zero()); col_fft.get_inplace_scratch_len()];
            for w in 0..p.w {
                for h in 0..p.h {
                    col[h] = buf[h * p.w + w];
                }
                col_fft.process_with_scratch(&mut col, &mut col_scratch);
                for h in 0..p.h {
                    buf[h * p.w + w] = col[h];
                }
            }
            if !norm.is_one() {
                for z in buf.iter_mut() {
                    *z = Complex::new(z.re * norm, z.im * norm);
                }
            }
            buf
        })
        .collect();

    let mut out = ComplexTensor::zeros(a.shape().clone());
    for (pl, buf) in planes.iter().enumerate() {
        for h in 0..p.h {
            for w in 0..p.w {
                out.set(p.offset(pl, h, w), buf[h * p.w + w]);
            }
        }
    }
    Ok(out)
}

/// Unnormalized forward 2-D FFT per channel.
pub fn fft2<F: Real>(a: &ComplexTensor<F>) -> Result<ComplexTensor<F>> {
    transform(a, false)
}

/// Inverse 2-D FFT per channel, scaled by `1/(H*W)`.
pub fn ifft2<F: Real>(a: &ComplexTensor<F>) -> Result<ComplexTensor<F>> {
    transform(a, true)
}
