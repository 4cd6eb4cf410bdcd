//! Spectral pooling: downsampling by truncating the centered 2-D
//! Fourier spectrum and inverse-transforming.
//!
//! The kept window is centered on DC after fftshift; when the output
//! extent is even the extra bin sits on the negative-frequency side.
//! Output is scaled by `(outH*outW)/(H*W)` so a constant input maps to
//! the same constant.

use crate::ctensor::{fft2, ifft2, ComplexTensor, Shape};
use crate::error::{Error, Result};
use crate::real::Real;

/// For each output frequency index (unshifted), the input frequency
/// index (unshifted) it is copied from.
fn freq_map(input_ext: usize, out_ext: usize) -> Vec<usize> {
    let ic = input_ext / 2;
    let oc = out_ext / 2;
    let start = ic - oc;
    (0..out_ext)
        .map(|jo| {
            let j = (jo + oc) % out_ext; // fftshift position in the window
            let hs = start + j; // shifted position on the input grid
            (hs + input_ext - ic) % input_ext // undo the input fftshift
        })
        .collect()
}

struct PoolGeom {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
}

fn pool_geom(shape: &Shape, out_h: usize, out_w: usize) -> Result<PoolGeom> {
    let d = shape.dims();
    let (n, h, w, c) = match d.len() {
        3 => (1, d[0], d[1], d[2]),
        4 => (d[0], d[1], d[2], d[3]),
        _ => {
            return Err(Error::invalid(format!(
                "spectral_pool expects (H,W,C) or (N,H,W,C), got {shape}"
            )))
        }
    };
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(Error::invalid(format!(
            "spectral_pool output {out_h}x{out_w} must satisfy 1 <= out <= input ({h}x{w})"
        )));
    }
    Ok(PoolGeom { n, h, w, c })
}

fn out_shape(shape: &Shape, g: &PoolGeom, h: usize, w: usize) -> Shape {
    if shape.ndim() == 3 {
        Shape::new(&[h, w, g.c])
    } else {
        Shape::new(&[g.n, h, w, g.c])
    }
}

/// Copy spectrum bins through the per-axis frequency maps. `forward`
/// selects (big -> small); otherwise it zero-pad embeds (small -> big).
fn remap_spectrum<F: Real>(
    src: &ComplexTensor<F>,
    dst: &mut ComplexTensor<F>,
    map_h: &[usize],
    map_w: &[usize],
    g: &PoolGeom,
    small_h: usize,
    small_w: usize,
    forward: bool,
) {
    let (big_h, big_w) = (g.h, g.w);
    let _ = big_h;
    for n in 0..g.n {
        for jo in 0..small_h {
            for jw in 0..small_w {
                let (hh, ww) = (map_h[jo], map_w[jw]);
                for c in 0..g.c {
                    if forward {
                        let v = src.get(((n * g.h + hh) * big_w + ww) * g.c + c);
                        dst.set(((n * small_h + jo) * small_w + jw) * g.c + c, v);
                    } else {
                        let v = src.get(((n * small_h + jo) * small_w + jw) * g.c + c);
                        dst.set(((n * g.h + hh) * big_w + ww) * g.c + c, v);
                    }
                }
            }
        }
    }
}

/// Truncate each channel's spectrum to the centered `out_h x out_w`
/// block and inverse-transform. `real_mode` projects input and output
/// onto the real plane (used by the pure-real network variant, whose
/// feature maps must stay real under an asymmetric even-extent window).
pub fn spectral_pool<F: Real>(
    input: &ComplexTensor<F>,
    out_h: usize,
    out_w: usize,
    real_mode: bool,
) -> Result<ComplexTensor<F>> {
    let g = pool_geom(input.shape(), out_h, out_w)?;
    let src = if real_mode {
        let mut t = input.clone();
        t.im_mut().iter_mut().for_each(|v| *v = F::zero());
        fft2(&t)?
    } else {
        fft2(input)?
    };
    let map_h = freq_map(g.h, out_h);
    let map_w = freq_map(g.w, out_w);
    let mut spec = ComplexTensor::zeros(out_shape(input.shape(), &g, out_h, out_w));
    remap_spectrum(&src, &mut spec, &map_h, &map_w, &g, out_h, out_w, true);
    let mut out = ifft2(&spec)?;
    let scale = F::from_usize_(out_h * out_w) / F::from_usize_(g.h * g.w);
    {
        let (re, im) = out.planes_mut();
        for v in re.iter_mut() {
            *v *= scale;
        }
        if real_mode {
            for v in im.iter_mut() {
                *v = F::zero();
            }
        } else {
            for v in im.iter_mut() {
                *v *= scale;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`spectral_pool`] for the gradient convention
/// `g = dC/dRe + i*dC/dIm`: transform the output gradient, zero-pad
/// embed it at the kept bins, inverse-transform on the input grid.
pub fn spectral_pool_backward<F: Real>(
    grad_out: &ComplexTensor<F>,
    input_shape: &Shape,
    out_h: usize,
    out_w: usize,
    real_mode: bool,
) -> Result<ComplexTensor<F>> {
    let g = pool_geom(input_shape, out_h, out_w)?;
    let gsrc = if real_mode {
        let mut t = grad_out.clone();
        t.im_mut().iter_mut().for_each(|v| *v = F::zero());
        fft2(&t)?
    } else {
        fft2(grad_out)?
    };
    let map_h = freq_map(g.h, out_h);
    let map_w = freq_map(g.w, out_w);
    let mut spec = ComplexTensor::zeros(input_shape.clone());
    remap_spectrum(&gsrc, &mut spec, &map_h, &map_w, &g, out_h, out_w, false);
    let mut grad_in = ifft2(&spec)?;
    if real_mode {
        grad_in.im_mut().iter_mut().for_each(|v| *v = F::zero());
    }
    Ok(grad_in)
}

/// Zero-pad spectrum upsampling (the right inverse of spectral
/// pooling on band-limited inputs): embed the small spectrum centered
/// on DC in a larger grid and inverse-transform, scaled so constants
/// are preserved.
pub fn spectral_upsample<F: Real>(
    input: &ComplexTensor<F>,
    out_h: usize,
    out_w: usize,
) -> Result<ComplexTensor<F>> {
    let d = input.shape().dims();
    let (small_h, small_w) = match d.len() {
        3 => (d[0], d[1]),
        4 => (d[1], d[2]),
        _ => {
            return Err(Error::invalid(format!(
                "spectral_upsample expects (H,W,C) or (N,H,W,C), got {}",
                input.shape()
            )))
        }
    };
    if out_h < small_h || out_w < small_w {
        return Err(Error::invalid(format!(
            "spectral_upsample target {out_h}x{out_w} smaller than input {small_h}x{small_w}"
        )));
    }
    // Reuse the pool geometry with roles swapped: the big grid is the output.
    let big_shape = if input.shape().ndim() == 3 {
        Shape::new(&[out_h, out_w, d[2]])
    } else {
        Shape::new(&[d[0], out_h, out_w, d[3]])
    };
    let g = pool_geom(&big_shape, small_h, small_w)?;
    let src = fft2(input)?;
    let map_h = freq_map(out_h, small_h);
    let map_w = freq_map(out_w, small_w);
    let mut spec = ComplexTensor::zeros(big_shape);
    remap_spectrum(&src, &mut spec, &map_h, &map_w, &g, small_h, small_w, false);
    let mut out = ifft2(&spec)?;
    let scale = F::from_usize_(out_h * out_w) / F::from_usize_(small_h * small_w);
    let (re, im) = out.planes_mut();
    for v in re.iter_mut() {
        *v *= scale;
    }
    for v in im.iter_mut() {
        *v *= scale;
    }
    Ok(out)
}
