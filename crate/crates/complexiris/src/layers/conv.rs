//! Complex-valued 2-D convolution.
//!
//! A complex feature map `W = A + iB` convolved with a complex kernel
//! `k = x + iy` distributes over the planes:
//! `W*k = (A*x - B*y) + i(B*x + A*y)`,
//! where `*` is the standard real multi-channel cross-correlation with
//! stride and zero padding. Forward and both backward passes fuse the
//! four real correlations into one traversal.

use rayon::prelude::*;

use crate::ctensor::{ComplexTensor, Shape};
use crate::error::{Error, Result};
use crate::real::Real;

/// Kernel plus stride/padding. Kernel shape is `(kH, kW, Cin, Cout)`;
/// stride and padding are `(row, col)` pairs.
#[derive(Clone, Debug)]
pub struct ConvSpec<F> {
    pub kernel: ComplexTensor<F>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl<F: Real> ConvSpec<F> {
    pub fn new(
        kernel: ComplexTensor<F>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        if kernel.shape().ndim() != 4 {
            return Err(Error::invalid(format!(
                "conv kernel must be (kH,kW,Cin,Cout), got {}",
                kernel.shape()
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid("conv stride must be positive"));
        }
        Ok(ConvSpec {
            kernel,
            stride,
            padding,
        })
    }

    /// `same`-padding stride-1 spec for an odd kernel.
    pub fn same(kernel: ComplexTensor<F>) -> Result<Self> {
        let d = kernel.shape().dims().to_vec();
        let pad = ((d[0] - 1) / 2, (d[1] - 1) / 2);
        Self::new(kernel, (1, 1), pad)
    }
}

/// `floor((extent + 2*pad - k)/stride) + 1`, the output extent contract.
pub fn conv_out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = extent + 2 * pad;
    if k > padded {
        return Err(Error::invalid(format!(
            "kernel extent {k} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    h2: usize,
    w2: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

fn geometry<F: Real>(input: &Shape, spec: &ConvSpec<F>) -> Result<Geometry> {
    let d = input.dims();
    let (n, h, w, cin) = match d.len() {
        3 => (1, d[0], d[1], d[2]),
        4 => (d[0], d[1], d[2], d[3]),
        _ => {
            return Err(Error::invalid(format!(
                "conv input must be (H,W,C) or (N,H,W,C), got {input}"
            )))
        }
    };
    let k = spec.kernel.shape().dims();
    if k[2] != cin {
        return Err(Error::ShapeMismatch {
            op: "complex_conv2d (input channels vs kernel Cin)",
            left: input.to_string(),
            right: spec.kernel.shape().to_string(),
        });
    }
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    Ok(Geometry {
        n,
        h,
        w,
        cin,
        kh: k[0],
        kw: k[1],
        cout: k[3],
        h2: conv_out_extent(h, k[0], sh, ph)?,
        w2: conv_out_extent(w, k[1], sw, pw)?,
        sh,
        sw,
        ph,
        pw,
    })
}

/// Kernel repacked as `[co][ky][kx][ci]` so the channel dot product is
/// contiguous on both sides.
fn pack_kernel<F: Real>(kernel: &ComplexTensor<F>) -> (Vec<F>, Vec<F>) {
    let d = kernel.shape().dims();
    let (kh, kw, cin, cout) = (d[0], d[1], d[2], d[3]);
    let mut pre = vec![F::zero(); kernel.len()];
    let mut pim = vec![F::zero(); kernel.len()];
    let (kre, kim) = (kernel.re(), kernel.im());
    for ky in 0..kh {
        for kx in 0..kw {
            for ci in 0..cin {
                let src = ((ky * kw + kx) * cin + ci) * cout;
                for co in 0..cout {
                    let dst = ((co * kh + ky) * kw + kx) * cin + ci;
                    pre[dst] = kre[src + co];
                    pim[dst] = kim[src + co];
                }
            }
        }
    }
    (pre, pim)
}

/// Forward complex convolution. Accepts `(H,W,C)` or batched
/// `(N,H,W,C)` input and returns the matching rank.
pub fn complex_conv2d<F: Real>(
    input: &ComplexTensor<F>,
    spec: &ConvSpec<F>,
) -> Result<ComplexTensor<F>> {
    let g = geometry(input.shape(), spec)?;
    let (pk_re, pk_im) = pack_kernel(&spec.kernel);
    let (in_re, in_im) = (input.re(), input.im());

    let row_len = g.w2 * g.cout;
    // One output row per task keeps the parallel result order-independent.
    let rows: Vec<(Vec<F>, Vec<F>)> = (0..g.n * g.h2)
        .into_par_iter()
        .map(|task| {
            let (n, y2) = (task / g.h2, task % g.h2);
            let mut row_re = vec![F::zero(); row_len];
            let mut row_im = vec![F::zero(); row_len];
            for x2 in 0..g.w2 {
                for ky in 0..g.kh {
                    let iy = (y2 * g.sh + ky) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (x2 * g.sw + kx) as isize - g.pw as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let base = ((n * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        let a = &in_re[base..base + g.cin];
                        let b = &in_im[base..base + g.cin];
                        for co in 0..g.cout {
                            let kbase = ((co * g.kh + ky) * g.kw + kx) * g.cin;
                            let kr = &pk_re[kbase..kbase + g.cin];
                            let ki = &pk_im[kbase..kbase + g.cin];
                            let mut sr = F::zero();
                            let mut si = F::zero();
                            for i in 0..g.cin {
                                sr += a[i] * kr[i] - b[i] * ki[i];
                                si += b[i] * kr[i] + a[i] * ki[i];
                            }
                            row_re[x2 * g.cout + co] += sr;
                            row_im[x2 * g.cout + co] += si;
                        }
                    }
                }
            }
            (row_re, row_im)
        })
        .collect();

    let mut re = Vec::with_capacity(g.n * g.h2 * row_len);
    let mut im = Vec::with_capacity(g.n * g.h2 * row_len);
    for (r, i) in rows {
        re.extend_from_slice(&r);
        im.extend_from_slice(&i);
    }
    let out_shape = if input.shape().ndim() == 3 {
        Shape::new(&[g.h2, g.w2, g.cout])
    } else {
        Shape::new(&[g.n, g.h2, g.w2, g.cout])
    };
    ComplexTensor::from_planes(out_shape, re, im)
}

/// Gradient of the loss w.r.t. the convolution input.
///
/// With the gradient convention `g = dC/dRe + i*dC/dIm`, the input
/// gradient accumulates `conj(k) * g` over every window that touched
/// each input element.
pub fn conv_grad_input<F: Real>(
    grad_out: &ComplexTensor<F>,
    input_shape: &Shape,
    spec: &ConvSpec<F>,
) -> Result<ComplexTensor<F>> {
    let g = geometry(input_shape, spec)?;
    let (pk_re, pk_im) = pack_kernel(&spec.kernel);
    let (go_re, go_im) = (grad_out.re(), grad_out.im());
    let plane = g.h * g.w * g.cin;

    // Scatter per sample; samples are independent.
    let grads: Vec<(Vec<F>, Vec<F>)> = (0..g.n)
        .into_par_iter()
        .map(|n| {
            let mut gin_re = vec![F::zero(); plane];
            let mut gin_im = vec![F::zero(); plane];
            for y2 in 0..g.h2 {
                for x2 in 0..g.w2 {
                    let obase = ((n * g.h2 + y2) * g.w2 + x2) * g.cout;
                    for ky in 0..g.kh {
                        let iy = (y2 * g.sh + ky) as isize - g.ph as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.kw {
                            let ix = (x2 * g.sw + kx) as isize - g.pw as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            let ibase = ((iy as usize) * g.w + ix as usize) * g.cin;
                            for co in 0..g.cout {
                                let gr = go_re[obase + co];
                                let gi = go_im[obase + co];
                                let kbase = ((co * g.kh + ky) * g.kw + kx) * g.cin;
                                let kr = &pk_re[kbase..kbase + g.cin];
                                let ki = &pk_im[kbase..kbase + g.cin];
                                for ci in 0..g.cin {
                                    gin_re[ibase + ci] += gr * kr[ci] + gi * ki[ci];
                                    gin_im[ibase + ci] += gi * kr[ci] - gr * ki[ci];
                                }
                            }
                        }
                    }
                }
            }
            (gin_re, gin_im)
        })
        .collect();

    let mut re = Vec::with_capacity(g.n * plane);
    let mut im = Vec::with_capacity(g.n * plane);
    for (r, i) in grads {
        re.extend_from_slice(&r);
        im.extend_from_slice(&i);
    }
    ComplexTensor::from_planes(input_shape.clone(), re, im)
}

/// Gradient of the loss w.r.t. the kernel: `conj(input) * g` summed
/// over batch and output positions, per kernel tap.
pub fn conv_grad_kernel<F: Real>(
    grad_out: &ComplexTensor<F>,
    input: &ComplexTensor<F>,
    spec: &ConvSpec<F>,
) -> Result<ComplexTensor<F>> {
    let g = geometry(input.shape(), spec)?;
    let (in_re, in_im) = (input.re(), input.im());
    let (go_re, go_im) = (grad_out.re(), grad_out.im());
    let tap = g.kh * g.kw * g.cin;

    // Each output channel owns a disjoint slice of the kernel gradient.
    let per_co: Vec<(Vec<F>, Vec<F>)> = (0..g.cout)
        .into_par_iter()
        .map(|co| {
            let mut gk_re = vec![F::zero(); tap];
            let mut gk_im = vec![F::zero(); tap];
            for n in 0..g.n {
                for y2 in 0..g.h2 {
                    for x2 in 0..g.w2 {
                        let o = ((n * g.h2 + y2) * g.w2 + x2) * g.cout + co;
                        let gr = go_re[o];
                        let gi = go_im[o];
                        for ky in 0..g.kh {
                            let iy = (y2 * g.sh + ky) as isize - g.ph as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for kx in 0..g.kw {
                                let ix = (x2 * g.sw + kx) as isize - g.pw as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                let ibase =
                                    ((n * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                                let kb = (ky * g.kw + kx) * g.cin;
                                for ci in 0..g.cin {
                                    let a = in_re[ibase + ci];
                                    let b = in_im[ibase + ci];
                                    gk_re[kb + ci] += gr * a + gi * b;
                                    gk_im[kb + ci] += gi * a - gr * b;
                                }
                            }
                        }
                    }
                }
            }
            (gk_re, gk_im)
        })
        .collect();

    let mut out = ComplexTensor::zeros(spec.kernel.shape().clone());
    {
        let (re, im) = out.planes_mut();
        for (co, (gk_re, gk_im)) in per_co.iter().enumerate() {
            for t in 0..tap {
                re[t * g.cout + co] = gk_re[t];
                im[t * g.cout + co] = gk_im[t];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn one_by_one(v: Complex<f64>) -> ConvSpec<f64> {
        ConvSpec::new(
            ComplexTensor::filled(Shape::new(&[1, 1, 1, 1]), v),
            (1, 1),
            (0, 0),
        )
        .unwrap()
    }

    fn rng_tensor(shape: &[usize], seed: u64) -> ComplexTensor<f64> {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        ComplexTensor::from_fn(Shape::new(shape), |_| c(next(), next()))
    }

    /// Scalar sliding-window oracle: per-element complex products
    /// accumulated with plain loops. Independent of the fused kernels.
    fn conv_oracle(
        input: &ComplexTensor<f64>,
        spec: &ConvSpec<f64>,
    ) -> ComplexTensor<f64> {
        let d = input.shape().dims();
        let (h, w, cin) = (d[0], d[1], d[2]);
        let k = spec.kernel.shape().dims();
        let (kh, kw, cout) = (k[0], k[1], k[3]);
        let (sh, sw) = spec.stride;
        let (ph, pw) = spec.padding;
        let h2 = (h + 2 * ph - kh) / sh + 1;
        let w2 = (w + 2 * pw - kw) / sw + 1;
        let mut out = ComplexTensor::zeros(Shape::new(&[h2, w2, cout]));
        for y2 in 0..h2 {
            for x2 in 0..w2 {
                for co in 0..cout {
                    let mut acc = c(0.0, 0.0);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (y2 * sh + ky) as isize - ph as isize;
                            let ix = (x2 * sw + kx) as isize - pw as isize;
                            if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let z = input.at(&[iy as usize, ix as usize, ci]);
                                let kv = spec.kernel.at(&[ky, kx, ci, co]);
                                acc += z * kv;
                            }
                        }
                    }
                    out.set_at(&[y2, x2, co], acc);
                }
            }
        }
        out
    }

    #[test]
    fn unit_kernel_is_identity() {
        let input = rng_tensor(&[4, 5, 1], 10);
        let out = complex_conv2d(&input, &one_by_one(c(1.0, 0.0))).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn i_kernel_rotates_planes() {
        let input = rng_tensor(&[3, 3, 1], 11);
        let out = complex_conv2d(&input, &one_by_one(c(0.0, 1.0))).unwrap();
        for i in 0..input.len() {
            let z = input.get(i);
            assert!((out.get(i) - c(-z.im, z.re)).norm() < 1e-15);
        }
    }

    #[test]
    fn matches_sliding_window_oracle() {
        let input = rng_tensor(&[5, 5, 2], 12);
        let kernel = rng_tensor(&[3, 3, 2, 3], 13);
        let spec = ConvSpec::new(kernel, (1, 1), (1, 1)).unwrap();
        let got = complex_conv2d(&input, &spec).unwrap();
        let want = conv_oracle(&input, &spec);
        assert_eq!(got.shape(), want.shape());
        for i in 0..got.len() {
            assert!(
                (got.get(i) - want.get(i)).norm() < 1e-10,
                "element {i}: {:?} vs {:?}",
                got.get(i),
                want.get(i)
            );
        }
    }

    #[test]
    fn strided_output_extents_follow_contract() {
        let input = rng_tensor(&[7, 9, 1], 14);
        let kernel = rng_tensor(&[3, 3, 1, 2], 15);
        let spec = ConvSpec::new(kernel, (2, 3), (1, 0)).unwrap();
        let out = complex_conv2d(&input, &spec).unwrap();
        // H2 = floor((7 + 2 - 3)/2) + 1 = 4, W2 = floor((9 - 3)/3) + 1 = 3
        assert_eq!(out.shape().dims(), &[4, 3, 2]);
        let want = conv_oracle(&input, &spec);
        for i in 0..out.len() {
            assert!((out.get(i) - want.get(i)).norm() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let input = rng_tensor(&[4, 4, 2], 16);
        let kernel = rng_tensor(&[3, 3, 3, 1], 17);
        let spec = ConvSpec::new(kernel, (1, 1), (0, 0)).unwrap();
        assert!(complex_conv2d(&input, &spec).is_err());
    }

    #[test]
    fn oversized_kernel_is_an_error() {
        let input = rng_tensor(&[4, 4, 1], 18);
        let kernel = rng_tensor(&[7, 7, 1, 1], 19);
        let spec = ConvSpec::new(kernel, (1, 1), (1, 1)).unwrap();
        assert!(complex_conv2d(&input, &spec).is_err());
    }

    #[test]
    fn linearity_in_the_input() {
        let a = rng_tensor(&[5, 6, 2], 20);
        let b = rng_tensor(&[5, 6, 2], 21);
        let kernel = rng_tensor(&[3, 3, 2, 2], 22);
        let spec = ConvSpec::new(kernel, (1, 1), (1, 1)).unwrap();
        let (alpha, beta) = (c(0.4, -0.9), c(-1.2, 0.3));
        let lhs =
            complex_conv2d(&a.scale(alpha).add(&b.scale(beta)).unwrap(), &spec).unwrap();
        let rhs = complex_conv2d(&a, &spec)
            .unwrap()
            .scale(alpha)
            .add(&complex_conv2d(&b, &spec).unwrap().scale(beta))
            .unwrap();
        for i in 0..lhs.len() {
            assert!((lhs.get(i) - rhs.get(i)).norm() < 1e-10);
        }
    }

    #[test]
    fn batched_equals_per_sample() {
        let s0 = rng_tensor(&[4, 4, 2], 23);
        let s1 = rng_tensor(&[4, 4, 2], 24);
        let kernel = rng_tensor(&[3, 3, 2, 2], 25);
        let spec = ConvSpec::new(kernel, (1, 1), (1, 1)).unwrap();
        let mut batch = ComplexTensor::zeros(Shape::new(&[2, 4, 4, 2]));
        for i in 0..s0.len() {
            batch.set(i, s0.get(i));
            batch.set(s0.len() + i, s1.get(i));
        }
        let out = complex_conv2d(&batch, &spec).unwrap();
        let o0 = complex_conv2d(&s0, &spec).unwrap();
        let o1 = complex_conv2d(&s1, &spec).unwrap();
        for i in 0..o0.len() {
            assert!((out.get(i) - o0.get(i)).norm() < 1e-14);
            assert!((out.get(o0.len() + i) - o1.get(i)).norm() < 1e-14);
        }
    }
}
