//! Gabor wavelet kernels and the multi-scale/multi-orientation bank
//! that seeds the network's first convolution.

use num_complex::Complex;

use crate::ctensor::{ComplexTensor, Shape};
use crate::error::{Error, Result};
use crate::real::Real;

/// The five Gabor kernel parameters.
///
/// `g(x,y) = exp(-(x'^2 + gamma^2 y'^2)/(2 delta^2)) * exp(i(2 pi x'/lambda + psi))`
/// with `x' = x cos(theta) + y sin(theta)` and
/// `y' = -x sin(theta) + y cos(theta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaborParams {
    /// Wavelength of the sinusoidal factor, in pixels.
    pub lambda: f64,
    /// Orientation of the normal to the parallel stripes, radians in `[0, pi)`.
    pub theta: f64,
    /// Phase offset, radians.
    pub psi: f64,
    /// Standard deviation of the Gaussian envelope, in pixels.
    pub delta: f64,
    /// Spatial aspect ratio (ellipticity of the support).
    pub gamma: f64,
}

impl GaborParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 {
            return Err(Error::invalid(format!("gabor lambda must be > 0, got {}", self.lambda)));
        }
        if self.delta <= 0.0 {
            return Err(Error::invalid(format!("gabor delta must be > 0, got {}", self.delta)));
        }
        if self.gamma <= 0.0 {
            return Err(Error::invalid(format!("gabor gamma must be > 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Sample a (kH x kW) Gabor kernel on the centered integer grid.
/// `kH` and `kW` must be odd so the grid has an exact center.
pub fn gabor_kernel<F: Real>(p: &GaborParams, kh: usize, kw: usize) -> Result<ComplexTensor<F>> {
    p.validate()?;
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::invalid(format!(
            "gabor kernel extents must be odd for a centered grid, got {kh}x{kw}"
        )));
    }
    let (cy, cx) = ((kh / 2) as isize, (kw / 2) as isize);
    let (sin_t, cos_t) = p.theta.sin_cos();
    let out = ComplexTensor::from_fn(Shape::new(&[kh, kw]), |i| {
        let row = (i / kw) as isize - cy;
        let col = (i % kw) as isize - cx;
        let (x, y) = (col as f64, row as f64);
        let xp = x * cos_t + y * sin_t;
        let yp = -x * sin_t + y * cos_t;
        let envelope = (-(xp * xp + p.gamma * p.gamma * yp * yp) / (2.0 * p.delta * p.delta)).exp();
        let phase = 2.0 * std::f64::consts::PI * xp / p.lambda + p.psi;
        Complex::new(F::of(envelope * phase.cos()), F::of(envelope * phase.sin()))
    });
    Ok(out)
}

/// The deterministic parameter grid backing [`gabor_bank`].
///
/// Orientations are uniform in `[0, pi)` (up to 8 of them), wavelengths
/// grow in octaves from 4 px, the phase offset alternates between 0 and
/// pi/2 when `m` is even, `delta = 0.56 * lambda` (half-magnitude
/// bandwidth heuristic) and `gamma = 0.5`. `m` is factored as
/// orientations x wavelengths x phases; the orientation count is the
/// largest divisor of `m / phases` not exceeding 8.
pub fn gabor_grid(m: usize) -> Result<Vec<GaborParams>> {
    if m == 0 {
        return Err(Error::invalid("gabor bank needs at least one filter"));
    }
    let n_psi = if m > 1 && m % 2 == 0 { 2 } else { 1 };
    let rest = m / n_psi;
    let n_theta = (1..=8.min(rest)).rev().find(|d| rest % d == 0).unwrap_or(1);
    let n_lambda = rest / n_theta;
    let mut grid = Vec::with_capacity(m);
    for k in 0..n_theta {
        for j in 0..n_lambda {
            for l in 0..n_psi {
                let lambda = 4.0 * f64::powi(2.0, j as i32);
                grid.push(GaborParams {
                    lambda,
                    theta: k as f64 * std::f64::consts::PI / n_theta as f64,
                    psi: l as f64 * std::f64::consts::FRAC_PI_2,
                    delta: 0.56 * lambda,
                    gamma: 0.5,
                });
            }
        }
    }
    debug_assert_eq!(grid.len(), m);
    Ok(grid)
}

/// Bank of `m` L2-normalized Gabor kernels as a `(kH, kW, 1, m)`
/// convolution kernel, suitable for lifting a single-channel image
/// into `m` complex channels.
pub fn gabor_bank<F: Real>(kh: usize, kw: usize, m: usize) -> Result<ComplexTensor<F>> {
    let grid = gabor_grid(m)?;
    let mut bank = ComplexTensor::zeros(Shape::new(&[kh, kw, 1, m]));
    for (ch, params) in grid.iter().enumerate() {
        let k = gabor_kernel::<F>(params, kh, kw)?;
        let norm = k.sum_abs_sq().sqrt();
        let inv = if norm > F::zero() { F::one() / norm } else { F::one() };
        for i in 0..k.len() {
            let z = k.get(i);
            bank.set_at(&[i / kw, i % kw, 0, ch], Complex::new(z.re * inv, z.im * inv));
        }
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: GaborParams = GaborParams {
        lambda: 4.0,
        theta: 0.0,
        psi: 0.0,
        delta: 2.0,
        gamma: 1.0,
    };

    #[test]
    fn center_pixel_has_unit_envelope_and_phase_psi() {
        let k = gabor_kernel::<f64>(&P, 5, 5).unwrap();
        let center = k.at(&[2, 2]);
        assert!((center.re - 1.0).abs() < 1e-15);
        assert!(center.im.abs() < 1e-15);

        let mut quarter = P;
        quarter.psi = std::f64::consts::FRAC_PI_2;
        let k = gabor_kernel::<f64>(&quarter, 5, 5).unwrap();
        let center = k.at(&[2, 2]);
        assert!(center.re.abs() < 1e-15);
        assert!((center.im - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_offset() {
        // theta=0, lambda=4, delta=2, gamma=1, psi=0 at offset (x=1, y=0):
        // envelope exp(-1/8), carrier exp(i*pi/2) -> i * exp(-0.125)
        let k = gabor_kernel::<f64>(&P, 5, 5).unwrap();
        let v = k.at(&[2, 3]);
        assert!(v.re.abs() < 1e-15, "re = {}", v.re);
        assert!((v.im - (-0.125f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn magnitude_is_the_gaussian_envelope() {
        // |g| must not depend on lambda or psi.
        for (lambda, psi) in [(4.0, 0.0), (8.0, 1.0), (16.0, 2.5)] {
            let p = GaborParams {
                lambda,
                theta: 0.7,
                psi,
                delta: 1.8,
                gamma: 0.5,
            };
            let k = gabor_kernel::<f64>(&p, 7, 7).unwrap();
            let (sin_t, cos_t) = p.theta.sin_cos();
            for row in 0..7usize {
                for col in 0..7usize {
                    let (x, y) = (col as f64 - 3.0, row as f64 - 3.0);
                    let xp = x * cos_t + y * sin_t;
                    let yp = -x * sin_t + y * cos_t;
                    let env =
                        (-(xp * xp + p.gamma * p.gamma * yp * yp) / (2.0 * p.delta * p.delta)).exp();
                    assert!((k.at(&[row, col]).norm() - env).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_parameters_and_even_extents() {
        let mut bad = P;
        bad.lambda = 0.0;
        assert!(gabor_kernel::<f64>(&bad, 5, 5).is_err());
        bad = P;
        bad.delta = -1.0;
        assert!(gabor_kernel::<f64>(&bad, 5, 5).is_err());
        bad = P;
        bad.gamma = 0.0;
        assert!(gabor_kernel::<f64>(&bad, 5, 5).is_err());
        assert!(gabor_kernel::<f64>(&P, 4, 5).is_err());
    }

    #[test]
    fn bank_of_64_spans_the_documented_grid_with_distinct_kernels() {
        let grid = gabor_grid(64).unwrap();
        assert_eq!(grid.len(), 64);
        let thetas: std::collections::BTreeSet<u64> =
            grid.iter().map(|p| (p.theta * 1e9) as u64).collect();
        assert_eq!(thetas.len(), 8);
        let lambdas: std::collections::BTreeSet<u64> =
            grid.iter().map(|p| (p.lambda * 1e9) as u64).collect();
        assert_eq!(lambdas.len(), 4);
        assert!(grid.iter().all(|p| p.lambda >= 4.0 && p.lambda <= 32.0));
        assert!(grid.iter().all(|p| (p.delta - 0.56 * p.lambda).abs() < 1e-12));

        let bank = gabor_bank::<f64>(7, 7, 64).unwrap();
        assert_eq!(bank.shape().dims(), &[7, 7, 1, 64]);
        // pairwise distinctness
        for a in 0..64 {
            for b in (a + 1)..64 {
                let mut diff = 0.0;
                for row in 0..7 {
                    for col in 0..7 {
                        diff += (bank.at(&[row, col, 0, a]) - bank.at(&[row, col, 0, b])).norm_sqr();
                    }
                }
                assert!(diff > 1e-12, "kernels {a} and {b} coincide");
            }
        }
    }

    #[test]
    fn degenerate_bank_of_one() {
        let grid = gabor_grid(1).unwrap();
        assert_eq!(grid.len(), 1);
        assert_eq!(grid[0].theta, 0.0);
        assert_eq!(grid[0].lambda, 4.0);
        assert!(gabor_grid(0).is_err());
    }

    #[test]
    fn bank_kernels_are_l2_normalized() {
        let bank = gabor_bank::<f64>(7, 7, 16).unwrap();
        for ch in 0..16 {
            let mut e = 0.0;
            for row in 0..7 {
                for col in 0..7 {
                    e += bank.at(&[row, col, 0, ch]).norm_sqr();
                }
            }
            assert!((e - 1.0).abs() < 1e-12, "channel {ch} energy {e}");
        }
    }
}
