//! Dense layers and activations with hand-derived backward passes.

use super::array::{mat_vec_acc, outer_acc, vec_mat_acc, DenseArray};
use crate::error::{Error, Result};

/// Inputs beyond this magnitude are clamped before the sigmoid exponentiates.
pub const SIGMOID_CLAMP: f64 = 30.0;

#[derive(Clone, Debug, PartialEq)]
pub struct AffineGrads {
    pub input: DenseArray,
    pub weight: DenseArray,
    pub bias: DenseArray,
}

fn affine_dims(input: &DenseArray, weight: &DenseArray, bias: &DenseArray) -> Result<(usize, usize, usize)> {
    let (rows, inner) = input.rows_cols()?;
    let (w_in, w_out) = match weight.shape() {
        [a, b] => (*a, *b),
        s => return Err(Error::Shape(format!("weight must be 2-D, got {s:?}"))),
    };
    if w_in != inner {
        return Err(Error::Shape(format!(
            "input has {inner} columns but weight has {w_in} rows"
        )));
    }
    if bias.shape() != [w_out] {
        return Err(Error::Shape(format!(
            "bias shape {:?} does not match output width {w_out}",
            bias.shape()
        )));
    }
    Ok((rows, inner, w_out))
}

/// `input . weight + bias`, where `input` is `[rows, in]` (or a single `[in]` row),
/// `weight` is `[in, out]` and `bias` is `[out]`.
pub fn affine(input: &DenseArray, weight: &DenseArray, bias: &DenseArray) -> Result<DenseArray> {
    let (rows, inner, out) = affine_dims(input, weight, bias)?;
    let mut data = Vec::with_capacity(rows * out);
    for r in 0..rows {
        let mut row = bias.data().to_vec();
        vec_mat_acc(&input.data()[r * inner..(r + 1) * inner], weight.data(), &mut row);
        data.extend_from_slice(&row);
    }
    let shape = if input.shape().len() == 1 { vec![out] } else { vec![rows, out] };
    DenseArray::from_vec(&shape, data)
}

/// Gradients of a scalar loss with respect to the three arguments of [`affine`],
/// given the upstream gradient `d_out` of the output.
pub fn affine_backward(
    input: &DenseArray,
    weight: &DenseArray,
    bias: &DenseArray,
    d_out: &DenseArray,
) -> Result<AffineGrads> {
    let (rows, inner, out) = affine_dims(input, weight, bias)?;
    if d_out.len() != rows * out {
        return Err(Error::Shape(format!(
            "upstream gradient has {} values, expected {}",
            d_out.len(),
            rows * out
        )));
    }
    let mut d_input = DenseArray::zeros(input.shape());
    let mut d_weight = DenseArray::zeros(weight.shape());
    let mut d_bias = DenseArray::zeros(bias.shape());
    for r in 0..rows {
        let x = &input.data()[r * inner..(r + 1) * inner];
        let dy = &d_out.data()[r * out..(r + 1) * out];
        mat_vec_acc(weight.data(), dy, &mut d_input.data_mut()[r * inner..(r + 1) * inner]);
        outer_acc(x, dy, d_weight.data_mut());
        for (b, d) in d_bias.data_mut().iter_mut().zip(dy) {
            *b += d;
        }
    }
    Ok(AffineGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    })
}

/// Max-subtracted softmax of a slice, in place.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!("axis {axis} out of range for {shape:?}")));
    }
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, n, inner))
}

/// Softmax along `axis`.
pub fn softmax(logits: &DenseArray, axis: usize) -> Result<DenseArray> {
    let (outer, n, inner) = axis_layout(logits.shape(), axis)?;
    let mut out = logits.clone();
    let mut buf = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = logits.data()[(o * n + k) * inner + i];
            }
            softmax_in_place(&mut buf);
            for (k, b) in buf.iter().enumerate() {
                out.data_mut()[(o * n + k) * inner + i] = *b;
            }
        }
    }
    Ok(out)
}

/// Gradient of a loss with respect to the logits, given the softmax output `probs`
/// and the upstream gradient `d_probs`.
pub fn softmax_backward(probs: &DenseArray, d_probs: &DenseArray, axis: usize) -> Result<DenseArray> {
    if probs.shape() != d_probs.shape() {
        return Err(Error::Shape("softmax output and gradient differ in shape".into()));
    }
    let (outer, n, inner) = axis_layout(probs.shape(), axis)?;
    let mut out = DenseArray::zeros(probs.shape());
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let dot: f64 = (0..n).map(|k| probs.data()[idx(k)] * d_probs.data()[idx(k)]).sum();
            for k in 0..n {
                out.data_mut()[idx(k)] = probs.data()[idx(k)] * (d_probs.data()[idx(k)] - dot);
            }
        }
    }
    Ok(out)
}

pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    1.0 / (1.0 + (-x).exp())
}

/// Derivative of [`sigmoid`] at `x`; zero where the clamp is active.
pub fn sigmoid_grad(x: f64) -> f64 {
    if x.abs() > SIGMOID_CLAMP {
        return 0.0;
    }
    let s = sigmoid(x);
    s * (1.0 - s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseArray {
        let n = shape.iter().product();
        DenseArray::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn identity_weight_passes_input_through() {
        let x = DenseArray::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
        let y = affine(&x, &DenseArray::identity(3), &DenseArray::zeros(&[3])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_yields_bias() {
        let x = DenseArray::zeros(&[2, 3]);
        let w = DenseArray::from_vec(&[3, 2], vec![1.0; 6]).unwrap();
        let b = DenseArray::vector(vec![0.25, -4.0]);
        let y = affine(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[0.25, -4.0, 0.25, -4.0]);
    }

    #[test]
    fn affine_rejects_mismatched_inner_dimension() {
        let x = DenseArray::zeros(&[2, 3]);
        let w = DenseArray::zeros(&[4, 2]);
        let b = DenseArray::zeros(&[2]);
        assert!(matches!(affine(&x, &w, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn affine_gradients_match_central_differences() {
        let h = 1e-5;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[3, 4], &mut rng);
            let w = random(&[4, 5], &mut rng);
            let b = random(&[5], &mut rng);
            let probe = random(&[3, 5], &mut rng);
            // loss = <probe, affine(x, w, b)>
            let loss = |x: &DenseArray, w: &DenseArray, b: &DenseArray| -> f64 {
                let y = affine(x, w, b).unwrap();
                y.data().iter().zip(probe.data()).map(|(a, p)| a * p).sum()
            };
            let g = affine_backward(&x, &w, &b, &probe).unwrap();
            let mut worst: f64 = 0.0;
            for (which, analytic) in [(0, &g.input), (1, &g.weight), (2, &g.bias)] {
                for i in 0..analytic.len() {
                    let (mut xp, mut wp, mut bp) = (x.clone(), w.clone(), b.clone());
                    let (mut xm, mut wm, mut bm) = (x.clone(), w.clone(), b.clone());
                    let target = |p: &mut DenseArray, m: &mut DenseArray| {
                        p.data_mut()[i] += h;
                        m.data_mut()[i] -= h;
                    };
                    match which {
                        0 => target(&mut xp, &mut xm),
                        1 => target(&mut wp, &mut wm),
                        _ => target(&mut bp, &mut bm),
                    }
                    let numeric = (loss(&xp, &wp, &bp) - loss(&xm, &wm, &bm)) / (2.0 * h);
                    worst = worst.max(rel_err(analytic.data()[i], numeric));
                }
            }
            assert!(worst < 1e-6, "seed {seed}: rel err {worst}");
        }
    }

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let p = softmax(&DenseArray::vector(vec![0.3; 4]), 0).unwrap();
        for x in p.data() {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&DenseArray::vector(vec![1000.0, 0.0]), 0).unwrap();
        assert!(p.all_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one_on_either_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[4, 6], &mut rng);
        let rows = softmax(&x, 1).unwrap();
        for r in 0..4 {
            let s: f64 = rows.data()[r * 6..(r + 1) * 6].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let cols = softmax(&x, 0).unwrap();
        for c in 0..6 {
            let s: f64 = (0..4).map(|r| cols.data()[r * 6 + c]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn softmax_gradient_matches_central_differences() {
        let h = 1e-5;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = random(&[2, 5], &mut rng);
            let probe = random(&[2, 5], &mut rng);
            let loss = |x: &DenseArray| -> f64 {
                let p = softmax(x, 1).unwrap();
                p.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
            };
            let p = softmax(&x, 1).unwrap();
            let g = softmax_backward(&p, &probe, 1).unwrap();
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.data_mut()[i] += h;
                xm.data_mut()[i] -= h;
                let numeric = (loss(&xp) - loss(&xm)) / (2.0 * h);
                let err = rel_err(g.data()[i], numeric);
                assert!(err < 1e-6, "seed {seed} coord {i}: {err}");
            }
        }
    }

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid(0.0), 0.5);
        let tiny = sigmoid(-1e6);
        assert!(tiny > 0.0 && tiny < 1e-12);
        assert!(sigmoid(1e6) < 1.0);
        let mut prev = 0.0;
        for i in -50..=50 {
            let s = sigmoid(i as f64);
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn sigmoid_gradient_matches_central_differences() {
        let h = 1e-4;
        for x in [-5.0, -1.3, 0.0, 0.7, 4.2, 12.0] {
            let numeric = (sigmoid(x + h) - sigmoid(x - h)) / (2.0 * h);
            assert!(rel_err(sigmoid_grad(x), numeric) < 1e-6, "x = {x}");
        }
    }
}
