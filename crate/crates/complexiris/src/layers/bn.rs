//! Complex batch normalization.
//!
//! Each complex value is treated as the 2-vector `(re, im)`. Per
//! channel, the batch is whitened with the inverse square root of the
//! regularized 2x2 covariance, `(V + eps*I)^{-1/2} (z - E[z])`, then an
//! affine 2x2 `gamma` and complex shift `beta` are applied.
//!
//! `gamma` is stored as a `(2, C)` complex tensor whose rows are the
//! images of 1 and i under the per-channel matrix: `out = Re(zhat) *
//! gamma[0,c] + Im(zhat) * gamma[1,c] + beta[c]`. The statistics, the
//! whitening matrix, and the entire backward pass run in `f64`
//! regardless of the tensor precision.

use num_complex::Complex;
use rayon::prelude::*;

use crate::ctensor::{ComplexTensor, RealTensor, Shape};
use crate::error::{Error, Result};
use crate::real::Real;

/// Learnable and running state for one BN layer over `C` channels.
#[derive(Clone, Debug)]
pub struct BNState<F> {
    pub gamma: ComplexTensor<F>,
    pub beta: ComplexTensor<F>,
    pub running_mean: ComplexTensor<F>,
    /// `(3, C)`: rows are `vrr`, `vri`, `vii`.
    pub running_cov: RealTensor<F>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<F: Real> BNState<F> {
    /// Fresh state: `gamma = scale * I`, `beta = 0`, running mean 0,
    /// running covariance `I/2` (unit expected squared modulus).
    pub fn new(channels: usize, gamma_scale: f64) -> Self {
        let g = F::of(gamma_scale);
        let mut gamma = ComplexTensor::zeros(Shape::new(&[2, channels]));
        for c in 0..channels {
            gamma.set(c, Complex::new(g, F::zero()));
            gamma.set(channels + c, Complex::new(F::zero(), g));
        }
        let mut running_cov = RealTensor::zeros(Shape::new(&[3, channels]));
        for c in 0..channels {
            running_cov.data_mut()[c] = F::of(0.5);
            running_cov.data_mut()[2 * channels + c] = F::of(0.5);
        }
        BNState {
            gamma,
            beta: ComplexTensor::zeros(Shape::new(&[channels])),
            running_mean: ComplexTensor::zeros(Shape::new(&[channels])),
            running_cov,
            momentum: 0.9,
            epsilon: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.beta.len()
    }
}

/// Per-forward context needed by the backward pass and the running
/// statistics update.
#[derive(Clone, Debug)]
pub struct BnCtx {
    pub mu: Vec<[f64; 2]>,
    pub w: Vec<[[f64; 2]; 2]>,
    /// Batch covariance before regularization: `[vrr, vri, vii]`.
    pub batch_cov: Vec<[f64; 3]>,
    /// Elements per channel (N*H*W).
    pub m: usize,
}

fn channels_of(shape: &Shape) -> Result<usize> {
    let d = shape.dims();
    if d.len() < 2 {
        return Err(Error::invalid(format!(
            "batchnorm expects a channel-last tensor of rank >= 2, got {shape}"
        )));
    }
    Ok(d[d.len() - 1])
}

/// Closed-form inverse square root of the SPD matrix
/// `[[a11, a12], [a12, a22]]`.
fn inv_sqrt_2x2(a11: f64, a12: f64, a22: f64) -> [[f64; 2]; 2] {
    let det = a11 * a22 - a12 * a12;
    let s = det.sqrt();
    let t = (a11 + a22 + 2.0 * s).sqrt();
    let denom = s * t;
    [
        [(a22 + s) / denom, -a12 / denom],
        [-a12 / denom, (a11 + s) / denom],
    ]
}

fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

/// Solve `Q W + W Q = P` for symmetric positive-definite `W` via its
/// eigendecomposition.
fn solve_lyapunov(w: &[[f64; 2]; 2], p: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let (c, s) = if w[0][1].abs() < 1e-300 {
        (1.0, 0.0)
    } else {
        let theta = 0.5 * (2.0 * w[0][1]).atan2(w[0][0] - w[1][1]);
        (theta.cos(), theta.sin())
    };
    // U = [[c, -s], [s, c]]; columns are eigenvectors.
    let l1 = c * c * w[0][0] + 2.0 * c * s * w[0][1] + s * s * w[1][1];
    let l2 = s * s * w[0][0] - 2.0 * c * s * w[0][1] + c * c * w[1][1];
    let u = [[c, -s], [s, c]];
    let ut = [[c, s], [-s, c]];
    let pt = mat_mul(&ut, &mat_mul(p, &u));
    let qt = [
        [pt[0][0] / (2.0 * l1), pt[0][1] / (l1 + l2)],
        [pt[1][0] / (l1 + l2), pt[1][1] / (2.0 * l2)],
    ];
    mat_mul(&u, &mat_mul(&qt, &ut))
}

/// Single-pass per-channel sums in f64: `(sum_re, sum_im, sum_rr,
/// sum_ri, sum_ii)`.
fn channel_sums<F: Real>(input: &ComplexTensor<F>, c: usize) -> Vec<[f64; 5]> {
    let mut sums = vec![[0.0f64; 5]; c];
    let (re, im) = (input.re(), input.im());
    for (chunk_re, chunk_im) in re.chunks_exact(c).zip(im.chunks_exact(c)) {
        for ch in 0..c {
            let a = chunk_re[ch].to_f64_();
            let b = chunk_im[ch].to_f64_();
            let s = &mut sums[ch];
            s[0] += a;
            s[1] += b;
            s[2] += a * a;
            s[3] += a * b;
            s[4] += b * b;
        }
    }
    sums
}

struct ChannelParams<F> {
    mu_re: Vec<F>,
    mu_im: Vec<F>,
    w11: Vec<F>,
    w12: Vec<F>,
    w22: Vec<F>,
}

fn normalize_pass<F: Real>(
    input: &ComplexTensor<F>,
    gamma: &ComplexTensor<F>,
    beta: &ComplexTensor<F>,
    p: &ChannelParams<F>,
) -> ComplexTensor<F> {
    let c = p.mu_re.len();
    let mut out = ComplexTensor::zeros(input.shape().clone());
    let (in_re, in_im) = (input.re(), input.im());
    let (g_re, g_im) = (gamma.re(), gamma.im());
    let (b_re, b_im) = (beta.re(), beta.im());
    let (out_re, out_im) = out.planes_mut();
    out_re
        .par_chunks_mut(c)
        .zip(out_im.par_chunks_mut(c))
        .enumerate()
        .for_each(|(row, (ore, oim))| {
            let base = row * c;
            for ch in 0..c {
                let cre = in_re[base + ch] - p.mu_re[ch];
                let cim = in_im[base + ch] - p.mu_im[ch];
                let zre = p.w11[ch] * cre + p.w12[ch] * cim;
                let zim = p.w12[ch] * cre + p.w22[ch] * cim;
                // Gamma columns: [0,c] acts on Re(zhat), [1,c] on Im(zhat).
                ore[ch] = g_re[ch] * zre + g_re[c + ch] * zim + b_re[ch];
                oim[ch] = g_im[ch] * zre + g_im[c + ch] * zim + b_im[ch];
            }
        });
    out
}

/// Train-mode forward: whiten with batch statistics, returning the
/// context for the backward pass and the running update.
pub fn bn_train_forward<F: Real>(
    input: &ComplexTensor<F>,
    gamma: &ComplexTensor<F>,
    beta: &ComplexTensor<F>,
    epsilon: f64,
) -> Result<(ComplexTensor<F>, BnCtx)> {
    let c = channels_of(input.shape())?;
    if gamma.shape().dims() != [2, c] || beta.shape().dims() != [c] {
        return Err(Error::ShapeMismatch {
            op: "complex_batchnorm (gamma/beta vs channels)",
            left: gamma.shape().to_string(),
            right: format!("2x{c}"),
        });
    }
    let m = input.len() / c;
    if m < 2 {
        return Err(Error::invalid(format!(
            "batchnorm train mode needs at least 2 elements per channel, got {m}"
        )));
    }
    let sums = channel_sums(input, c);
    let mf = m as f64;
    let mut ctx = BnCtx {
        mu: Vec::with_capacity(c),
        w: Vec::with_capacity(c),
        batch_cov: Vec::with_capacity(c),
        m,
    };
    let mut params = ChannelParams {
        mu_re: Vec::with_capacity(c),
        mu_im: Vec::with_capacity(c),
        w11: Vec::with_capacity(c),
        w12: Vec::with_capacity(c),
        w22: Vec::with_capacity(c),
    };
    for s in &sums {
        let mu = [s[0] / mf, s[1] / mf];
        let vrr = s[2] / mf - mu[0] * mu[0];
        let vri = s[3] / mf - mu[0] * mu[1];
        let vii = s[4] / mf - mu[1] * mu[1];
        let w = inv_sqrt_2x2(vrr + epsilon, vri, vii + epsilon);
        ctx.mu.push(mu);
        ctx.w.push(w);
        ctx.batch_cov.push([vrr, vri, vii]);
        params.mu_re.push(F::of(mu[0]));
        params.mu_im.push(F::of(mu[1]));
        params.w11.push(F::of(w[0][0]));
        params.w12.push(F::of(w[0][1]));
        params.w22.push(F::of(w[1][1]));
    }
    Ok((normalize_pass(input, gamma, beta, &params), ctx))
}

/// Eval-mode forward: whiten with running statistics. Read-only.
pub fn bn_eval_forward<F: Real>(
    input: &ComplexTensor<F>,
    state: &BNState<F>,
) -> Result<ComplexTensor<F>> {
    let c = channels_of(input.shape())?;
    if state.channels() != c {
        return Err(Error::ShapeMismatch {
            op: "complex_batchnorm (state vs channels)",
            left: format!("{c} channels"),
            right: format!("{} channels", state.channels()),
        });
    }
    let cov = state.running_cov.data();
    let mut params = ChannelParams {
        mu_re: Vec::with_capacity(c),
        mu_im: Vec::with_capacity(c),
        w11: Vec::with_capacity(c),
        w12: Vec::with_capacity(c),
        w22: Vec::with_capacity(c),
    };
    for ch in 0..c {
        let mu = state.running_mean.get(ch);
        let w = inv_sqrt_2x2(
            cov[ch].to_f64_() + state.epsilon,
            cov[c + ch].to_f64_(),
            cov[2 * c + ch].to_f64_() + state.epsilon,
        );
        params.mu_re.push(mu.re);
        params.mu_im.push(mu.im);
        params.w11.push(F::of(w[0][0]));
        params.w12.push(F::of(w[0][1]));
        params.w22.push(F::of(w[1][1]));
    }
    Ok(normalize_pass(input, &state.gamma, &state.beta, &params))
}

/// Fold the batch statistics of one train-mode forward into the
/// running statistics: `running = momentum*running + (1-momentum)*batch`.
pub fn bn_update_running<F: Real>(state: &mut BNState<F>, ctx: &BnCtx) {
    let c = state.channels();
    let m = F::of(state.momentum);
    let k = F::of(1.0 - state.momentum);
    for ch in 0..c {
        let rm = state.running_mean.get(ch);
        state.running_mean.set(
            ch,
            Complex::new(
                m * rm.re + k * F::of(ctx.mu[ch][0]),
                m * rm.im + k * F::of(ctx.mu[ch][1]),
            ),
        );
        for (row, v) in ctx.batch_cov[ch].iter().enumerate() {
            let idx = row * c + ch;
            let old = state.running_cov.data()[idx];
            state.running_cov.data_mut()[idx] = m * old + k * F::of(*v);
        }
    }
}

/// Analytic backward through the train-mode forward (including the
/// dependence of the batch mean and covariance on every input).
///
/// Returns `(grad_input, grad_gamma, grad_beta)` in the convention
/// `g = dC/dRe + i*dC/dIm`.
pub fn bn_backward<F: Real>(
    grad_out: &ComplexTensor<F>,
    input: &ComplexTensor<F>,
    gamma: &ComplexTensor<F>,
    ctx: &BnCtx,
) -> Result<(ComplexTensor<F>, ComplexTensor<F>, ComplexTensor<F>)> {
    let c = channels_of(input.shape())?;
    let mf = ctx.m as f64;
    let (in_re, in_im) = (input.re(), input.im());
    let (go_re, go_im) = (grad_out.re(), grad_out.im());
    let (g_re, g_im) = (gamma.re(), gamma.im());

    // Accumulation pass: per channel sum of G, P = sum H c^T with
    // H = Gamma^T G, and dGamma = sum G zhat^T.
    let mut sum_g = vec![[0.0f64; 2]; c];
    let mut p_acc = vec![[[0.0f64; 2]; 2]; c];
    let mut dgamma = vec![[[0.0f64; 2]; 2]; c];
    for row in 0..ctx.m {
        let base = row * c;
        for ch in 0..c {
            let gv = [go_re[base + ch].to_f64_(), go_im[base + ch].to_f64_()];
            // Gamma = [[g00, g01], [g10, g11]] from the stored columns.
            let g00 = g_re[ch].to_f64_();
            let g10 = g_im[ch].to_f64_();
            let g01 = g_re[c + ch].to_f64_();
            let g11 = g_im[c + ch].to_f64_();
            let h = [g00 * gv[0] + g10 * gv[1], g01 * gv[0] + g11 * gv[1]];
            let cv = [
                in_re[base + ch].to_f64_() - ctx.mu[ch][0],
                in_im[base + ch].to_f64_() - ctx.mu[ch][1],
            ];
            let w = &ctx.w[ch];
            let zhat = [
                w[0][0] * cv[0] + w[0][1] * cv[1],
                w[1][0] * cv[0] + w[1][1] * cv[1],
            ];
            sum_g[ch][0] += gv[0];
            sum_g[ch][1] += gv[1];
            for a in 0..2 {
                for b in 0..2 {
                    p_acc[ch][a][b] += h[a] * cv[b];
                    dgamma[ch][a][b] += gv[a] * zhat[b];
                }
            }
        }
    }

    // Per-channel matrices for the element pass.
    let mut sv = vec![[[0.0f64; 2]; 2]; c]; // (dV + dV^T)/M
    let mut mc = vec![[0.0f64; 2]; c]; // mean-path correction
    for ch in 0..c {
        let w = &ctx.w[ch];
        let q = solve_lyapunov(w, &p_acc[ch]);
        let w2 = mat_mul(w, w); // A^{-1}
        let da = mat_mul(&w2, &mat_mul(&q, &w2)); // -dC/dA
        for a in 0..2 {
            for b in 0..2 {
                sv[ch][a][b] = -(da[a][b] + da[b][a]) / mf;
            }
        }
        // (1/M) * W * Gamma^T * sum_G
        let g00 = g_re[ch].to_f64_();
        let g10 = g_im[ch].to_f64_();
        let g01 = g_re[c + ch].to_f64_();
        let g11 = g_im[c + ch].to_f64_();
        let hsum = [
            g00 * sum_g[ch][0] + g10 * sum_g[ch][1],
            g01 * sum_g[ch][0] + g11 * sum_g[ch][1],
        ];
        mc[ch] = [
            (w[0][0] * hsum[0] + w[0][1] * hsum[1]) / mf,
            (w[1][0] * hsum[0] + w[1][1] * hsum[1]) / mf,
        ];
    }

    let mut grad_in = ComplexTensor::zeros(input.shape().clone());
    {
        let (gre, gim) = grad_in.planes_mut();
        gre.par_chunks_mut(c)
            .zip(gim.par_chunks_mut(c))
            .enumerate()
            .for_each(|(row, (ore, oim))| {
                let base = row * c;
                for ch in 0..c {
                    let gv = [go_re[base + ch].to_f64_(), go_im[base + ch].to_f64_()];
                    let g00 = g_re[ch].to_f64_();
                    let g10 = g_im[ch].to_f64_();
                    let g01 = g_re[c + ch].to_f64_();
                    let g11 = g_im[c + ch].to_f64_();
                    let h = [g00 * gv[0] + g10 * gv[1], g01 * gv[0] + g11 * gv[1]];
                    let w = &ctx.w[ch];
                    let cv = [
                        in_re[base + ch].to_f64_() - ctx.mu[ch][0],
                        in_im[base + ch].to_f64_() - ctx.mu[ch][1],
                    ];
                    let s = &sv[ch];
                    let re = w[0][0] * h[0] + w[0][1] * h[1] + s[0][0] * cv[0] + s[0][1] * cv[1]
                        - mc[ch][0];
                    let im = w[1][0] * h[0] + w[1][1] * h[1] + s[1][0] * cv[0] + s[1][1] * cv[1]
                        - mc[ch][1];
                    ore[ch] = F::of(re);
                    oim[ch] = F::of(im);
                }
            });
    }

    let mut grad_gamma = ComplexTensor::zeros(Shape::new(&[2, c]));
    let mut grad_beta = ComplexTensor::zeros(Shape::new(&[c]));
    for ch in 0..c {
        grad_gamma.set(
            ch,
            Complex::new(F::of(dgamma[ch][0][0]), F::of(dgamma[ch][1][0])),
        );
        grad_gamma.set(
            c + ch,
            Complex::new(F::of(dgamma[ch][0][1]), F::of(dgamma[ch][1][1])),
        );
        grad_beta.set(ch, Complex::new(F::of(sum_g[ch][0]), F::of(sum_g[ch][1])));
    }
    Ok((grad_in, grad_gamma, grad_beta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng_tensor(shape: &[usize], seed: u64) -> ComplexTensor<f64> {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        ComplexTensor::from_fn(Shape::new(shape), |_| {
            Complex::new(1.7 * next() + 0.3, 2.2 * next() - 0.1)
        })
    }

    fn identity_gamma(c: usize) -> ComplexTensor<f64> {
        BNState::<f64>::new(c, 1.0).gamma
    }

    fn batch_stats(t: &ComplexTensor<f64>, c: usize) -> Vec<([f64; 2], [f64; 3])> {
        let sums = channel_sums(t, c);
        let m = (t.len() / c) as f64;
        sums.iter()
            .map(|s| {
                let mu = [s[0] / m, s[1] / m];
                (
                    mu,
                    [
                        s[2] / m - mu[0] * mu[0],
                        s[3] / m - mu[0] * mu[1],
                        s[4] / m - mu[1] * mu[1],
                    ],
                )
            })
            .collect()
    }

    #[test]
    fn inv_sqrt_squares_to_the_inverse() {
        let (a11, a12, a22) = (2.0, 0.7, 1.3);
        let w = inv_sqrt_2x2(a11, a12, a22);
        let w2 = mat_mul(&w, &w);
        let a = [[a11, a12], [a12, a22]];
        let prod = mat_mul(&w2, &a);
        assert!((prod[0][0] - 1.0).abs() < 1e-12);
        assert!(prod[0][1].abs() < 1e-12);
        assert!(prod[1][0].abs() < 1e-12);
        assert!((prod[1][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_solution_satisfies_the_equation() {
        let w = inv_sqrt_2x2(1.9, -0.4, 0.8);
        let p = [[0.3, -1.2], [0.9, 0.4]];
        let q = solve_lyapunov(&w, &p);
        let lhs_a = mat_mul(&q, &w);
        let lhs_b = mat_mul(&w, &q);
        for a in 0..2 {
            for b in 0..2 {
                assert!((lhs_a[a][b] + lhs_b[a][b] - p[a][b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn train_mode_output_is_whitened() {
        // Unit-or-larger input variance keeps the epsilon bias of the
        // whitening (~eps/var) well under the 1e-5 covariance tolerance.
        let t = rng_tensor(&[4, 6, 8, 3], 77).scale(Complex::new(6.0, 0.0));
        let gamma = identity_gamma(3);
        let beta = ComplexTensor::zeros(Shape::new(&[3]));
        let (out, _) = bn_train_forward(&t, &gamma, &beta, 1e-5).unwrap();
        for (mu, cov) in batch_stats(&out, 3) {
            assert!(mu[0].abs() < 1e-6 && mu[1].abs() < 1e-6, "mean {mu:?}");
            assert!((cov[0] - 1.0).abs() < 1e-5, "vrr {}", cov[0]);
            assert!(cov[1].abs() < 1e-5, "vri {}", cov[1]);
            assert!((cov[2] - 1.0).abs() < 1e-5, "vii {}", cov[2]);
        }
    }

    #[test]
    fn already_white_input_passes_through() {
        // Build a whitened tensor, then re-normalize: output == input.
        let raw = rng_tensor(&[2, 5, 7, 2], 13);
        let gamma = identity_gamma(2);
        let beta = ComplexTensor::zeros(Shape::new(&[2]));
        let (white, _) = bn_train_forward(&raw, &gamma, &beta, 0.0).unwrap();
        let (again, _) = bn_train_forward(&white, &gamma, &beta, 0.0).unwrap();
        for i in 0..white.len() {
            assert!((again.get(i) - white.get(i)).norm() < 1e-9);
        }
    }

    #[test]
    fn constant_channel_collapses_to_beta() {
        let t = ComplexTensor::filled(Shape::new(&[2, 3, 4, 1]), Complex::new(2.5, -1.0));
        let gamma = identity_gamma(1);
        let mut beta = ComplexTensor::zeros(Shape::new(&[1]));
        beta.set(0, Complex::new(0.25, 0.125));
        let (out, _) = bn_train_forward(&t, &gamma, &beta, 1e-5).unwrap();
        for i in 0..out.len() {
            assert!((out.get(i) - Complex::new(0.25, 0.125)).norm() < 1e-12);
        }
    }

    #[test]
    fn eval_mode_uses_running_statistics_and_is_pure() {
        let mut state = BNState::<f64>::new(2, 1.0);
        let t = rng_tensor(&[3, 4, 4, 2], 5);
        let (_, ctx) = bn_train_forward(&t, &state.gamma, &state.beta, state.epsilon).unwrap();
        bn_update_running(&mut state, &ctx);
        let e1 = bn_eval_forward(&t, &state).unwrap();
        let e2 = bn_eval_forward(&t, &state).unwrap();
        assert_eq!(e1, e2);
        // Running stats moved toward the batch: momentum 0.9 on a 0/I/2 start.
        let got = state.running_mean.get(0);
        let want = ctx.mu[0];
        assert!((got.re - 0.1 * want[0]).abs() < 1e-12);
        assert!((got.im - 0.1 * want[1]).abs() < 1e-12);
    }

    #[test]
    fn train_mode_rejects_single_element_batches() {
        let t = rng_tensor(&[1, 1, 1, 2], 3);
        let gamma = identity_gamma(2);
        let beta = ComplexTensor::zeros(Shape::new(&[2]));
        assert!(bn_train_forward(&t, &gamma, &beta, 1e-5).is_err());
    }
}
