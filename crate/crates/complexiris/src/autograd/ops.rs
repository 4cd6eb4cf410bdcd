//! Differentiable wrappers around the layer operations.

use num_complex::Complex;

use super::tape::{GradFn, Tape, Var};
use crate::ctensor::{ComplexTensor, Shape};
use crate::error::{Error, Result};
use crate::layers::{
    bn_backward, bn_train_forward, complex_conv2d, conv_grad_input, conv_grad_kernel,
    spectral_pool, spectral_pool_backward, zrelu, zrelu_backward, BnCtx, ConvSpec,
};
use crate::real::Real;

struct ConvGrad {
    stride: (usize, usize),
    padding: (usize, usize),
}

impl<F: Real> GradFn<F> for ConvGrad {
    fn backward(
        &self,
        grad_out: &ComplexTensor<F>,
        parents: &[&ComplexTensor<F>],
        _output: &ComplexTensor<F>,
        needs: &[bool],
    ) -> Result<Vec<Option<ComplexTensor<F>>>> {
        let (input, kernel) = (parents[0], parents[1]);
        let spec = ConvSpec::new(kernel.clone(), self.stride, self.padding)?;
        let gi = if needs[0] {
            Some(conv_grad_input(grad_out, input.shape(), &spec)?)
        } else {
            None
        };
        let gk = if needs[1] {
            Some(conv_grad_kernel(grad_out, input, &spec)?)
        } else {
            None
        };
        Ok(vec![gi, gk])
    }

    fn name(&self) -> &'static str {
        "conv2d"
    }
}

struct ZreluGrad;

impl<F: Real> GradFn<F> for ZreluGrad {
    fn backward(
        &self,
        grad_out: &ComplexTensor<F>,
        parents: &[&ComplexTensor<F>],
        _output: &ComplexTensor<F>,
        _needs: &[bool],
    ) -> Result<Vec<Option<ComplexTensor<F>>>> {
        Ok(vec![Some(zrelu_backward(grad_out, parents[0]))])
    }

    fn name(&self) -> &'static str {
        "zrelu"
    }
}

struct BnGrad {
    ctx: BnCtx,
}

impl<F: Real> GradFn<F> for BnGrad {
    fn backward(
        &self,
        grad_out: &ComplexTensor<F>,
        parents: &[&ComplexTensor<F>],
        _output: &ComplexTensor<F>,
        _needs: &[bool],
    ) -> Result<Vec<Option<ComplexTensor<F>>>> {
        let (gi, gg, gb) = bn_backward(grad_out, parents[0], parents[1], &self.ctx)?;
        Ok(vec![Some(gi), Some(gg), Some(gb)])
    }

    fn name(&self) -> &'static str {
        "batchnorm"
    }
}

struct PoolGrad {
    out_h: usize,
    out_w: usize,
    real_mode: bool,
}

impl<F: Real> GradFn<F> for PoolGrad {
    fn backward(
        &self,
        grad_out: &ComplexTensor<F>,
        parents: &[&ComplexTensor<F>],
        _output: &ComplexTensor<F>,
        _needs: &[bool],
    ) -> Result<Vec<Option<ComplexTensor<F>>>> {
        Ok(vec![Some(spectral_pool_backward(
            grad_out,
            parents[0].shape(),
            self.out_h,
            self.out_w,
            self.real_mode,
        )?)])
    }

    fn name(&self) -> &'static str {
        "spectral_pool"
    }
}

struct ConcatGrad {
    /// Channel count of each parent, in order.
    channels: Vec<usize>,
}

impl<F: Real> GradFn<F> for ConcatGrad {
    fn backward(
        &self,
        grad_out: &ComplexTensor<F>,
        parents: &[&ComplexTensor<F>],
        _output: &ComplexTensor<F>,
        needs: &[bool],
    ) -> Result<Vec<Option<ComplexTensor<F>>>> {
        let total: usize = self.channels.iter().sum();
        let rows = grad_out.len() / total;
        let mut grads = Vec::with_capacity(parents.len());
        let mut offset = 0;
        for (k, &c) in self.channels.iter().enumerate() {
            if !needs[k] {
                offset += c;
                grads.push(None);
                continue;
            }
            let mut g = ComplexTensor::zeros(parents[k].shape().clone());
            for row in 0..rows {
                for ch in 0..c {
                    g.set(row * c + ch, grad_out.get(row * total + offset + ch));
                }
            }
            offset += c;
            grads.push(Some(g));
        }
        Ok(grads)
    }

    fn name(&self) -> &'static str {
        "concat_channels"
    }
}

struct SumAbsSqGrad;

impl<F: Real> GradFn<F> for SumAbsSqGrad {
    fn backward(
        &self,
        grad_out: &ComplexTensor<F>,
        parents: &[&ComplexTensor<F>],
        _output: &ComplexTensor<F>,
        _needs: &[bool],
    ) -> Result<Vec<Option<ComplexTensor<F>>>> {
        // d(sum |z|^2) = 2*Re(z) d(Re) + 2*Im(z) d(Im); only the real
        // component of the seed can matter for a real-valued output.
        let seed = grad_out.get(0).re;
        let two = F::of(2.0);
        Ok(vec![Some(parents[0].map(|z| {
            Complex::new(two * seed * z.re, two * seed * z.im)
        }))])
    }

    fn name(&self) -> &'static str {
        "sum_abs_sq"
    }
}

impl<F: Real> Tape<F> {
    /// Complex convolution of `input` with `kernel`.
    pub fn conv2d(
        &self,
        input: Var,
        kernel: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let spec = ConvSpec::new(self.value(kernel), stride, padding)?;
        let out = complex_conv2d(&self.value(input), &spec)?;
        Ok(self.record(out, vec![input, kernel], Box::new(ConvGrad { stride, padding })))
    }

    /// First-quadrant gate. Notes the smallest |re|/|im| of the input
    /// as a stability margin for gradient checks.
    pub fn zrelu(&self, input: Var) -> Var {
        let x = self.value(input);
        let mut margin = f64::INFINITY;
        for i in 0..x.len() {
            let z = x.get(i);
            margin = margin
                .min(z.re.abs().to_f64_())
                .min(z.im.abs().to_f64_());
        }
        self.note_margin(margin);
        let out = zrelu(&x);
        self.record(out, vec![input], Box::new(ZreluGrad))
    }

    /// Train-mode complex batch normalization; the returned context
    /// carries the batch statistics for the running-average update.
    pub fn batchnorm_train(
        &self,
        input: Var,
        gamma: Var,
        beta: Var,
        epsilon: f64,
    ) -> Result<(Var, BnCtx)> {
        let (out, ctx) =
            bn_train_forward(&self.value(input), &self.value(gamma), &self.value(beta), epsilon)?;
        let var = self.record(
            out,
            vec![input, gamma, beta],
            Box::new(BnGrad { ctx: ctx.clone() }),
        );
        Ok((var, ctx))
    }

    pub fn spectral_pool(
        &self,
        input: Var,
        out_h: usize,
        out_w: usize,
        real_mode: bool,
    ) -> Result<Var> {
        let out = spectral_pool(&self.value(input), out_h, out_w, real_mode)?;
        Ok(self.record(
            out,
            vec![input],
            Box::new(PoolGrad {
                out_h,
                out_w,
                real_mode,
            }),
        ))
    }

    /// Concatenate same-geometry feature maps along the channel axis.
    pub fn concat_channels(&self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::invalid("concat_channels needs at least one input"));
        }
        if inputs.len() == 1 {
            return Ok(inputs[0]);
        }
        let vals: Vec<ComplexTensor<F>> = inputs.iter().map(|&v| self.value(v)).collect();
        let lead = vals[0].shape().dims().to_vec();
        let mut channels = Vec::with_capacity(vals.len());
        for v in &vals {
            let d = v.shape().dims();
            if d.len() != lead.len() || d[..d.len() - 1] != lead[..lead.len() - 1] {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    left: Shape::new(&lead).to_string(),
                    right: v.shape().to_string(),
                });
            }
            channels.push(d[d.len() - 1]);
        }
        let total: usize = channels.iter().sum();
        let rows = vals[0].len() / channels[0];
        let mut dims = lead;
        *dims.last_mut().unwrap() = total;
        let mut out = ComplexTensor::zeros(Shape::new(&dims));
        for row in 0..rows {
            let mut offset = 0;
            for (v, &c) in vals.iter().zip(&channels) {
                for ch in 0..c {
                    out.set(row * total + offset + ch, v.get(row * c + ch));
                }
                offset += c;
            }
        }
        Ok(self.record(out, inputs.to_vec(), Box::new(ConcatGrad { channels })))
    }

    /// Total squared modulus as a real scalar node.
    pub fn sum_abs_sq(&self, input: Var) -> Var {
        let x = self.value(input);
        let out = ComplexTensor::from_planes(
            Shape::new(&[1]),
            vec![x.sum_abs_sq()],
            vec![F::zero()],
        )
        .expect("scalar");
        self.record(out, vec![input], Box::new(SumAbsSqGrad))
    }
}
