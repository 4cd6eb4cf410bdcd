//! Extended triplet loss with mask-aware fractional distance and
//! horizontal-shift minimization, plus triplet mining.
//!
//! The squared difference of two complex cells is the squared modulus
//! summed over channels, so the fractional distance stays real and
//! non-negative and reduces to the plain mean squared difference for
//! real features. Horizontal shifts are circular: the normalized iris
//! strip is angularly periodic, and masks roll together with features.

mod mining;

pub use mining::{mine_triplets, MiningStrategy, Triplet};

use num_complex::Complex;

use crate::autograd::{GradFn, Tape, Var};
use crate::ctensor::{ComplexTensor, Shape};
use crate::error::{Error, Result};
use crate::real::Real;

/// Complex feature map plus its binary spatial validity mask.
#[derive(Clone, Debug)]
pub struct FeatureMap<F> {
    /// `(h, w, c)` complex features.
    pub values: ComplexTensor<F>,
    /// `h*w` entries, 1 = valid.
    pub mask: Vec<u8>,
}

impl<F: Real> FeatureMap<F> {
    pub fn new(values: ComplexTensor<F>, mask: Vec<u8>) -> Result<Self> {
        let d = values.shape().dims();
        if d.len() != 3 {
            return Err(Error::invalid(format!(
                "feature map must be (h,w,c), got {}",
                values.shape()
            )));
        }
        if mask.len() != d[0] * d[1] {
            return Err(Error::invalid(format!(
                "mask length {} does not match {}x{} spatial grid",
                mask.len(),
                d[0],
                d[1]
            )));
        }
        Ok(FeatureMap { values, mask })
    }

    pub fn fully_valid(values: ComplexTensor<F>) -> Result<Self> {
        let n = match values.shape().dims() {
            [h, w, _] => h * w,
            _ => {
                return Err(Error::invalid(format!(
                    "feature map must be (h,w,c), got {}",
                    values.shape()
                )))
            }
        };
        Self::new(values, vec![1; n])
    }

    pub fn height(&self) -> usize {
        self.values.shape().dim(0)
    }

    pub fn width(&self) -> usize {
        self.values.shape().dim(1)
    }

    pub fn channels(&self) -> usize {
        self.values.shape().dim(2)
    }
}

fn check_same_geometry<F: Real>(f1: &FeatureMap<F>, f2: &FeatureMap<F>) -> Result<()> {
    if f1.values.shape() != f2.values.shape() {
        return Err(Error::ShapeMismatch {
            op: "fractional_distance",
            left: f1.values.shape().to_string(),
            right: f2.values.shape().to_string(),
        });
    }
    Ok(())
}

/// Circularly rolled column index: column `j` of the map shifted right
/// by `b` columns reads from source column `(j - b) mod w`.
#[inline]
fn src_col(j: usize, b: isize, w: usize) -> usize {
    (j as isize - b).rem_euclid(w as isize) as usize
}

/// Mask-normalized mean squared feature difference over jointly valid
/// cells, with `f1` circularly shifted by `b` columns (mask included).
fn fd_shifted<F: Real>(f1: &FeatureMap<F>, f2: &FeatureMap<F>, b: isize) -> Result<F> {
    check_same_geometry(f1, f2)?;
    let (h, w, c) = (f1.height(), f1.width(), f1.channels());
    let mut acc = F::zero();
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let sx = src_col(x, b, w);
            if f1.mask[y * w + sx] == 0 || f2.mask[y * w + x] == 0 {
                continue;
            }
            count += 1;
            let b1 = (y * w + sx) * c;
            let b2 = (y * w + x) * c;
            for ch in 0..c {
                let d = f1.values.get(b1 + ch) - f2.values.get(b2 + ch);
                acc += d.norm_sqr();
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(acc / F::from_usize_(count))
}

/// Fractional distance `FD(f1, f2)` over the joint mask.
pub fn fractional_distance<F: Real>(f1: &FeatureMap<F>, f2: &FeatureMap<F>) -> Result<F> {
    fd_shifted(f1, f2, 0)
}

/// Shift candidates in tie-break order: 0, -1, +1, -2, +2, ...
/// A strict minimum scan over this order makes the smallest |b| win
/// ties, with the negative shift preferred on |b| ties.
fn shift_order(b_max: usize) -> Vec<isize> {
    let mut order = vec![0isize];
    for b in 1..=b_max as isize {
        order.push(-b);
        order.push(b);
    }
    order
}

fn min_over_shifts<F: Real>(
    f1: &FeatureMap<F>,
    f2: &FeatureMap<F>,
    b_max: usize,
) -> Result<(F, isize, f64)> {
    let mut best: Option<(F, isize)> = None;
    let mut dists = Vec::with_capacity(2 * b_max + 1);
    for b in shift_order(b_max) {
        let d = fd_shifted(f1, f2, b)?;
        dists.push(d.to_f64_());
        match best {
            Some((bd, _)) if d >= bd => {}
            _ => best = Some((d, b)),
        }
    }
    let (d, b) = best.expect("shift set is never empty");
    let gap = if dists.len() < 2 {
        f64::INFINITY
    } else {
        let mut sorted = dists;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted[1] - sorted[0]
    };
    Ok((d, b, gap))
}

/// Minimum fractional distance over circular column shifts
/// `b in [-b_max, b_max]` of `f1`, with the minimizing shift.
pub fn shift_distance<F: Real>(
    f1: &FeatureMap<F>,
    f2: &FeatureMap<F>,
    b_max: usize,
) -> Result<(F, isize)> {
    min_over_shifts(f1, f2, b_max).map(|(d, b, _)| (d, b))
}

/// Hinged mean of `D(A,P) - D(A,N) + alpha` over a triplet batch.
pub fn extended_triplet_loss<F: Real>(
    features: &[FeatureMap<F>],
    triplets: &[Triplet],
    alpha: f64,
    b_max: usize,
) -> Result<F> {
    if triplets.is_empty() {
        return Err(Error::invalid("extended_triplet_loss needs a nonempty batch"));
    }
    if alpha <= 0.0 {
        return Err(Error::invalid("triplet margin alpha must be positive"));
    }
    let mut acc = F::zero();
    for t in triplets {
        let (d_ap, _) = shift_distance(&features[t.anchor], &features[t.positive], b_max)?;
        let (d_an, _) = shift_distance(&features[t.anchor], &features[t.negative], b_max)?;
        let v = d_ap - d_an + F::of(alpha);
        if v > F::zero() {
            acc += v;
        }
    }
    Ok(acc / F::from_usize_(triplets.len()))
}

// ---------------------------------------------------------------------------
// Differentiable tape operations
// ---------------------------------------------------------------------------

fn scalar_node<F: Real>(v: F) -> ComplexTensor<F> {
    ComplexTensor::from_planes(Shape::new(&[1]), vec![v], vec![F::zero()]).expect("scalar")
}

/// Accumulate the FD gradient of one (shifted) pair into `g1`/`g2`:
/// `2*(f1_b - f2)/|M|` on jointly valid cells, rolled back to `f1`'s
/// frame, weighted by `weight`.
fn accumulate_fd_grad<F: Real>(
    f1: &FeatureMap<F>,
    f2: &FeatureMap<F>,
    b: isize,
    weight: F,
    g1: &mut ComplexTensor<F>,
    g2: &mut ComplexTensor<F>,
) {
    let (h, w, c) = (f1.height(), f1.width(), f1.channels());
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let sx = src_col(x, b, w);
            if f1.mask[y * w + sx] != 0 && f2.mask[y * w + x] != 0 {
                count += 1;
            }
        }
    }
    debug_assert!(count > 0);
    let scale = weight * F::of(2.0) / F::from_usize_(count);
    for y in 0..h {
        for x in 0..w {
            let sx = src_col(x, b, w);
            if f1.mask[y * w + sx] == 0 || f2.mask[y * w + x] == 0 {
                continue;
            }
            let b1 = (y * w + sx) * c;
            let b2 = (y * w + x) * c;
            for ch in 0..c {
                let d = f1.values.get(b1 + ch) - f2.values.get(b2 + ch);
                let dd = Complex::new(d.re * scale, d.im * scale);
                g1.set(b1 + ch, g1.get(b1 + ch) + dd);
                g2.set(b2 + ch, g2.get(b2 + ch) - dd);
            }
        }
    }
}

struct PairDistanceGrad {
    mask1: Vec<u8>,
    mask2: Vec<u8>,
    shift: isize,
}

impl<F: Real> GradFn<F> for PairDistanceGrad {
    fn backward(
        &self,
        grad_out: &ComplexTensor<F>,
        parents: &[&ComplexTensor<F>],
        _output: &ComplexTensor<F>,
        _needs: &[bool],
    ) -> Result<Vec<Option<ComplexTensor<F>>>> {
        let f1 = FeatureMap::new(parents[0].clone(), self.mask1.clone())?;
        let f2 = FeatureMap::new(parents[1].clone(), self.mask2.clone())?;
        let mut g1 = ComplexTensor::zeros(parents[0].shape().clone());
        let mut g2 = ComplexTensor::zeros(parents[1].shape().clone());
        accumulate_fd_grad(&f1, &f2, self.shift, grad_out.get(0).re, &mut g1, &mut g2);
        Ok(vec![Some(g1), Some(g2)])
    }

    fn name(&self) -> &'static str {
        "shift_distance"
    }
}

/// Differentiable fractional distance between two `(h,w,c)` nodes.
pub fn fd_op<F: Real>(
    tape: &Tape<F>,
    f1: Var,
    mask1: &[u8],
    f2: Var,
    mask2: &[u8],
) -> Result<Var> {
    shift_distance_op(tape, f1, mask1, f2, mask2, 0).map(|(v, _)| v)
}

/// Differentiable shift distance; the argmin shift is fixed during the
/// forward pass and treated as locally constant by the gradient.
pub fn shift_distance_op<F: Real>(
    tape: &Tape<F>,
    f1: Var,
    mask1: &[u8],
    f2: Var,
    mask2: &[u8],
    b_max: usize,
) -> Result<(Var, isize)> {
    let m1 = FeatureMap::new(tape.value(f1), mask1.to_vec())?;
    let m2 = FeatureMap::new(tape.value(f2), mask2.to_vec())?;
    let (d, shift, gap) = min_over_shifts(&m1, &m2, b_max)?;
    tape.note_margin(gap);
    let var = tape.record(
        scalar_node(d),
        vec![f1, f2],
        Box::new(PairDistanceGrad {
            mask1: mask1.to_vec(),
            mask2: mask2.to_vec(),
            shift,
        }),
    );
    Ok((var, shift))
}

struct EtlGrad {
    masks: Vec<Vec<u8>>,
    /// Per hinge-active triplet: (anchor, positive, negative, b_ap, b_an).
    active: Vec<(usize, usize, usize, isize, isize)>,
    batch_size: usize,
}

fn sample_view<F: Real>(batch: &ComplexTensor<F>, idx: usize) -> Result<ComplexTensor<F>> {
    let d = batch.shape().dims();
    let (h, w, c) = (d[1], d[2], d[3]);
    let len = h * w * c;
    let re = batch.re()[idx * len..(idx + 1) * len].to_vec();
    let im = batch.im()[idx * len..(idx + 1) * len].to_vec();
    ComplexTensor::from_planes(Shape::new(&[h, w, c]), re, im)
}

impl<F: Real> GradFn<F> for EtlGrad {
    fn backward(
        &self,
        grad_out: &ComplexTensor<F>,
        parents: &[&ComplexTensor<F>],
        _output: &ComplexTensor<F>,
        _needs: &[bool],
    ) -> Result<Vec<Option<ComplexTensor<F>>>> {
        let batch = parents[0];
        let d = batch.shape().dims();
        let sample_len = d[1] * d[2] * d[3];
        let seed = grad_out.get(0).re / F::from_usize_(self.batch_size);
        let mut grad = ComplexTensor::zeros(batch.shape().clone());
        for &(a, p, n, b_ap, b_an) in &self.active {
            for (other, b, sign) in [(p, b_ap, F::one()), (n, b_an, -F::one())] {
                let fa = FeatureMap::new(sample_view(batch, a)?, self.masks[a].clone())?;
                let fo = FeatureMap::new(sample_view(batch, other)?, self.masks[other].clone())?;
                let mut ga = ComplexTensor::zeros(fa.values.shape().clone());
                let mut go = ComplexTensor::zeros(fo.values.shape().clone());
                accumulate_fd_grad(&fa, &fo, b, seed * sign, &mut ga, &mut go);
                for i in 0..sample_len {
                    grad.set(a * sample_len + i, grad.get(a * sample_len + i) + ga.get(i));
                    grad.set(
                        other * sample_len + i,
                        grad.get(other * sample_len + i) + go.get(i),
                    );
                }
            }
        }
        Ok(vec![Some(grad)])
    }

    fn name(&self) -> &'static str {
        "extended_triplet_loss"
    }
}

/// Differentiable extended triplet loss over a batched feature node
/// `(N, h, w, c)` with per-sample masks. The minimizing shifts and the
/// hinge activity are fixed during the forward pass.
pub fn etl_op<F: Real>(
    tape: &Tape<F>,
    features: Var,
    masks: &[Vec<u8>],
    triplets: &[Triplet],
    alpha: f64,
    b_max: usize,
) -> Result<Var> {
    if triplets.is_empty() {
        return Err(Error::invalid("extended_triplet_loss needs a nonempty batch"));
    }
    if alpha <= 0.0 {
        return Err(Error::invalid("triplet margin alpha must be positive"));
    }
    let batch = tape.value(features);
    let d = batch.shape().dims();
    if d.len() != 4 {
        return Err(Error::invalid(format!(
            "etl expects batched (N,h,w,c) features, got {}",
            batch.shape()
        )));
    }
    if masks.len() != d[0] {
        return Err(Error::invalid(format!(
            "etl got {} masks for a batch of {}",
            masks.len(),
            d[0]
        )));
    }
    let maps: Vec<FeatureMap<F>> = (0..d[0])
        .map(|i| FeatureMap::new(sample_view(&batch, i)?, masks[i].clone()))
        .collect::<Result<_>>()?;

    let mut acc = F::zero();
    let mut active = Vec::new();
    for t in triplets {
        let (d_ap, b_ap, gap_ap) = min_over_shifts(&maps[t.anchor], &maps[t.positive], b_max)?;
        let (d_an, b_an, gap_an) = min_over_shifts(&maps[t.anchor], &maps[t.negative], b_max)?;
        tape.note_margin(gap_ap);
        tape.note_margin(gap_an);
        let v = d_ap - d_an + F::of(alpha);
        tape.note_margin(v.to_f64_().abs()); // hinge boundary margin
        if v > F::zero() {
            acc += v;
            active.push((t.anchor, t.positive, t.negative, b_ap, b_an));
        }
    }
    let loss = acc / F::from_usize_(triplets.len());
    Ok(tape.record(
        scalar_node(loss),
        vec![features],
        Box::new(EtlGrad {
            masks: masks.to_vec(),
            active,
            batch_size: triplets.len(),
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn rng_map(shape: &[usize], seed: u64) -> FeatureMap<f64> {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        FeatureMap::fully_valid(ComplexTensor::from_fn(Shape::new(shape), |_| {
            c(next(), next())
        }))
        .unwrap()
    }

    fn roll_map(f: &FeatureMap<f64>, b: isize) -> FeatureMap<f64> {
        let (h, w, ch) = (f.height(), f.width(), f.channels());
        let mut values = ComplexTensor::zeros(f.values.shape().clone());
        let mut mask = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let sx = src_col(x, b, w);
                mask[y * w + x] = f.mask[y * w + sx];
                for cc in 0..ch {
                    values.set((y * w + x) * ch + cc, f.values.get((y * w + sx) * ch + cc));
                }
            }
        }
        FeatureMap::new(values, mask).unwrap()
    }

    #[test]
    fn fd_of_identical_maps_is_zero() {
        let f = rng_map(&[4, 8, 2], 1);
        assert_eq!(fractional_distance(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn fd_of_unit_offset_is_one() {
        let f1 = rng_map(&[4, 8, 1], 2);
        let shifted = FeatureMap::new(
            f1.values
                .add(&ComplexTensor::filled(Shape::new(&[1]), c(1.0, 0.0)))
                .unwrap(),
            f1.mask.clone(),
        )
        .unwrap();
        let d = fractional_distance(&shifted, &f1).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fd_matches_scalar_loop_oracle_under_masks() {
        let mut f1 = rng_map(&[4, 8, 2], 3);
        let mut f2 = rng_map(&[4, 8, 2], 4);
        for i in 0..16 {
            f1.mask[i] = 0;
        }
        for i in (0..32).step_by(3) {
            f2.mask[i] = 0;
        }
        let got = fractional_distance(&f1, &f2).unwrap();
        let mut acc = 0.0;
        let mut count = 0;
        for y in 0..4 {
            for x in 0..8 {
                if f1.mask[y * 8 + x] == 0 || f2.mask[y * 8 + x] == 0 {
                    continue;
                }
                count += 1;
                for ch in 0..2 {
                    let d = f1.values.at(&[y, x, ch]) - f2.values.at(&[y, x, ch]);
                    acc += d.norm_sqr();
                }
            }
        }
        let want = acc / count as f64;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn fd_is_symmetric_and_nonnegative() {
        let f1 = rng_map(&[3, 6, 2], 5);
        let f2 = rng_map(&[3, 6, 2], 6);
        let a = fractional_distance(&f1, &f2).unwrap();
        let b = fractional_distance(&f2, &f1).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(a >= 0.0);
    }

    #[test]
    fn empty_overlap_is_an_error() {
        let mut f1 = rng_map(&[2, 4, 1], 7);
        let f2 = rng_map(&[2, 4, 1], 8);
        f1.mask.iter_mut().for_each(|m| *m = 0);
        assert!(matches!(
            fractional_distance(&f1, &f2),
            Err(Error::EmptyOverlap)
        ));
    }

    #[test]
    fn shift_distance_recovers_circular_shifts() {
        let f1 = rng_map(&[4, 16, 2], 9);
        for shift in -4isize..=4 {
            let f2 = roll_map(&f1, shift);
            let (d, b) = shift_distance(&f1, &f2, 4).unwrap();
            assert_eq!(d, 0.0, "shift {shift}");
            assert_eq!(b, shift);
        }
    }

    #[test]
    fn zero_shift_budget_equals_fd() {
        let f1 = rng_map(&[4, 8, 2], 10);
        let f2 = rng_map(&[4, 8, 2], 11);
        let (d, b) = shift_distance(&f1, &f2, 0).unwrap();
        assert_eq!(b, 0);
        assert!((d - fractional_distance(&f1, &f2).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn shift_distance_is_the_minimum_of_explicit_fds() {
        let f1 = rng_map(&[4, 10, 2], 12);
        let f2 = rng_map(&[4, 10, 2], 13);
        let (d, _) = shift_distance(&f1, &f2, 4).unwrap();
        let mut want = f64::INFINITY;
        for b in -4isize..=4 {
            want = want.min(fd_shifted(&f1, &f2, b).unwrap());
        }
        assert!((d - want).abs() < 1e-15);
        assert!(d <= fractional_distance(&f1, &f2).unwrap() + 1e-15);
    }

    #[test]
    fn etl_hinge_floor_and_degenerate_triplet() {
        let a = rng_map(&[3, 8, 2], 14);
        let far = FeatureMap::new(
            a.values
                .add(&ComplexTensor::filled(Shape::new(&[1]), c(3.0, 0.0)))
                .unwrap(),
            a.mask.clone(),
        )
        .unwrap();
        let t = vec![Triplet {
            anchor: 0,
            positive: 1,
            negative: 2,
        }];
        // A == P and D(A,N) > alpha: hinge floor
        let feats = vec![a.clone(), a.clone(), far];
        assert_eq!(extended_triplet_loss(&feats, &t, 0.2, 2).unwrap(), 0.0);
        // A == P == N: both distances vanish, per-triplet loss is alpha
        let feats = vec![a.clone(), a.clone(), a.clone()];
        assert!((extended_triplet_loss(&feats, &t, 0.2, 2).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn etl_matches_reference_loops() {
        let feats: Vec<FeatureMap<f64>> = (0..5).map(|i| rng_map(&[3, 8, 2], 20 + i)).collect();
        let triplets = vec![
            Triplet { anchor: 0, positive: 1, negative: 2 },
            Triplet { anchor: 3, positive: 4, negative: 0 },
            Triplet { anchor: 2, positive: 0, negative: 4 },
        ];
        let alpha = 0.35;
        let got = extended_triplet_loss(&feats, &triplets, alpha, 3).unwrap();
        // reference: recompute every distance with plain loops
        let dist = |i: usize, j: usize| -> f64 {
            let mut best = f64::INFINITY;
            for b in -3isize..=3 {
                let mut s = 0.0;
                let mut cnt = 0usize;
                for y in 0..3usize {
                    for x in 0..8usize {
                        let sx = (x as isize - b).rem_euclid(8) as usize;
                        if feats[i].mask[y * 8 + sx] == 0 || feats[j].mask[y * 8 + x] == 0 {
                            continue;
                        }
                        cnt += 1;
                        for ch in 0..2usize {
                            let d = feats[i].values.at(&[y, sx, ch])
                                - feats[j].values.at(&[y, x, ch]);
                            s += d.norm_sqr();
                        }
                    }
                }
                best = best.min(s / cnt as f64);
            }
            best
        };
        let mut acc = 0.0;
        for t in &triplets {
            let v = dist(t.anchor, t.positive) - dist(t.anchor, t.negative) + alpha;
            acc += v.max(0.0);
        }
        let want = acc / triplets.len() as f64;
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn etl_zero_iff_every_triplet_separated() {
        let a = rng_map(&[2, 6, 1], 40);
        let near = FeatureMap::new(
            a.values
                .add(&ComplexTensor::filled(Shape::new(&[1]), c(0.01, 0.0)))
                .unwrap(),
            a.mask.clone(),
        )
        .unwrap();
        let far = FeatureMap::new(
            a.values
                .add(&ComplexTensor::filled(Shape::new(&[1]), c(5.0, 0.0)))
                .unwrap(),
            a.mask.clone(),
        )
        .unwrap();
        let feats = vec![a, near, far];
        let sep = vec![Triplet { anchor: 0, positive: 1, negative: 2 }];
        assert_eq!(extended_triplet_loss(&feats, &sep, 0.2, 1).unwrap(), 0.0);
        let violated = vec![Triplet { anchor: 0, positive: 2, negative: 1 }];
        assert!(extended_triplet_loss(&feats, &violated, 0.2, 1).unwrap() > 0.0);
    }
}
