//! Central finite-difference checks of reverse-mode gradients.

use super::{Graph, Tensor, Var};
use crate::error::Result;

const DROPOUT_SEED: u64 = 0x5eed;

/// Builds a scalar loss from leaf inputs.
pub type LossFn<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

/// Largest relative error `|g_rev - g_fd| / max(|g_rev|, |g_fd|)` over all
/// inputs, with norms taken per input tensor. `step` is the half-width of
/// the central difference. Graphs run in training mode with a pinned
/// dropout seed, so every evaluation draws the same masks.
pub fn max_relative_error(f: &LossFn<'_>, inputs: &[Tensor], step: f64) -> Result<f64> {
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::with_dropout_seed(DROPOUT_SEED);
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::with_dropout_seed(DROPOUT_SEED);
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v);
        let mut diff_sq = 0.0;
        let mut a_sq = 0.0;
        let mut n_sq = 0.0;
        for i in 0..xs[k].numel() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + step;
            let up = eval(&xs)?;
            xs[k].data_mut()[i] = orig - step;
            let down = eval(&xs)?;
            xs[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[i];
            diff_sq += (a - numeric).powi(2);
            a_sq += a * a;
            n_sq += numeric * numeric;
        }
        let scale = a_sq.sqrt().max(n_sq.sqrt());
        if scale > 1e-12 {
            worst = worst.max(diff_sq.sqrt() / scale);
        } else {
            worst = worst.max(diff_sq.sqrt());
        }
    }
    Ok(worst)
}

/// The primitive cases exercised by the gradient suite: name, loss builder
/// and input tensors. Each loss contracts its output with a fixed random
/// weight so every output element contributes a distinct gradient.
pub fn primitive_cases(seed: u64) -> Vec<(&'static str, Box<LossFn<'static>>, Vec<Tensor>)> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_t = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));

    // sum(y * w) with w a deterministic function of the output position.
    fn contract(g: &mut Graph, y: Var) -> Result<Var> {
        let w = Tensor::from_fn(g.shape(y), |k| ((k as f64) * 0.731 + 0.2).sin());
        let w = g.constant(w);
        let p = g.mul(y, w)?;
        Ok(g.sum_all(p))
    }

    let mut cases: Vec<(&'static str, Box<LossFn<'static>>, Vec<Tensor>)> = Vec::new();
    cases.push((
        "matmul",
        Box::new(|g, x| {
            let y = g.matmul(x[0], x[1])?;
            contract(g, y)
        }),
        vec![rand_t(&[2, 3, 4]), rand_t(&[2, 4, 2])],
    ));
    cases.push((
        "matmul_shared",
        Box::new(|g, x| {
            let y = g.matmul(x[0], x[1])?;
            contract(g, y)
        }),
        vec![rand_t(&[2, 3, 4]), rand_t(&[4, 5])],
    ));
    cases.push((
        "add",
        Box::new(|g, x| {
            let y = g.add(x[0], x[1])?;
            contract(g, y)
        }),
        vec![rand_t(&[3, 4]), rand_t(&[4])],
    ));
    cases.push((
        "mul",
        Box::new(|g, x| {
            let y = g.mul(x[0], x[1])?;
            contract(g, y)
        }),
        vec![rand_t(&[3, 4]), rand_t(&[3, 4])],
    ));
    cases.push((
        "scale",
        Box::new(|g, x| {
            let y = g.scale(x[0], -1.7);
            contract(g, y)
        }),
        vec![rand_t(&[5])],
    ));
    cases.push((
        "transpose",
        Box::new(|g, x| {
            let y = g.transpose(x[0])?;
            contract(g, y)
        }),
        vec![rand_t(&[2, 3, 4])],
    ));
    cases.push((
        "reshape",
        Box::new(|g, x| {
            let y = g.reshape(x[0], &[4, 3])?;
            contract(g, y)
        }),
        vec![rand_t(&[2, 6])],
    ));
    cases.push((
        "concat",
        Box::new(|g, x| {
            let y = g.concat(&[x[0], x[1]], 1)?;
            contract(g, y)
        }),
        vec![rand_t(&[2, 3, 2]), rand_t(&[2, 1, 2])],
    ));
    cases.push((
        "slice",
        Box::new(|g, x| {
            let y = g.slice(x[0], 2, 1, 2)?;
            contract(g, y)
        }),
        vec![rand_t(&[2, 3, 4])],
    ));
    cases.push((
        "mean_pool_axis",
        Box::new(|g, x| {
            let y = g.mean_axis(x[0], 1)?;
            contract(g, y)
        }),
        vec![rand_t(&[2, 5, 3])],
    ));
    cases.push((
        "softmax_lastaxis",
        Box::new(|g, x| {
            let y = g.softmax(x[0])?;
            contract(g, y)
        }),
        vec![rand_t(&[3, 5])],
    ));
    cases.push((
        "layer_norm",
        Box::new(|g, x| {
            let y = g.layer_norm(x[0], 1e-5)?;
            contract(g, y)
        }),
        vec![rand_t(&[3, 6])],
    ));
    cases.push((
        "relu",
        Box::new(|g, x| {
            let y = g.relu(x[0]);
            contract(g, y)
        }),
        vec![rand_t(&[12])],
    ));
    cases.push((
        "gelu",
        Box::new(|g, x| {
            let y = g.gelu(x[0]);
            contract(g, y)
        }),
        vec![rand_t(&[12])],
    ));
    cases.push((
        "dropout",
        Box::new(|g, x| {
            let y = g.dropout(x[0], 0.4)?;
            contract(g, y)
        }),
        vec![Tensor::from_fn(&[16], |k| 0.5 + k as f64 * 0.1)],
    ));
    cases.push((
        "conv1d",
        Box::new(|g, x| {
            let y = g.conv1d(x[0], x[1], x[2], 2)?;
            contract(g, y)
        }),
        vec![rand_t(&[2, 9]), rand_t(&[3, 4]), rand_t(&[4])],
    ));
    cases.push((
        "embedding_lookup",
        Box::new(|g, x| {
            let y = g.embedding(x[0], &[2, 0, 2, 1])?;
            contract(g, y)
        }),
        vec![rand_t(&[3, 4])],
    ));
    cases.push((
        "broadcast_to",
        Box::new(|g, x| {
            let y = g.broadcast_to(x[0], &[3, 2, 4])?;
            contract(g, y)
        }),
        vec![rand_t(&[2, 4])],
    ));
    let target = rand_t(&[3, 4]);
    cases.push((
        "mse_loss",
        Box::new(move |g, x| g.mse_loss(x[0], &target)),
        vec![rand_t(&[3, 4])],
    ));
    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes_finite_differences() {
        for seed in 0..3 {
            for (name, f, inputs) in primitive_cases(seed) {
                assert!(inputs.iter().all(|t| t.numel() <= 64), "{name}");
                let err = max_relative_error(f.as_ref(), &inputs, 1e-5).unwrap();
                assert!(err < 1e-4, "{name}: relative error {err:e}");
            }
        }
    }

    #[test]
    fn dropout_gradient_matches_mask() {
        let mut g = Graph::with_dropout_seed(3);
        let x = g.param(Tensor::full(&[32], 2.0));
        let y = g.dropout(x, 0.5).unwrap();
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        let gx = g.grad(x);
        for (gv, yv) in gx.data().iter().zip(g.value(y).data()) {
            assert_eq!(*gv, yv / 2.0);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[4, 7], |k| (k as f64 * 1.3).cos() * 5.0));
        let y = g.softmax(x).unwrap();
        for row in g.value(y).data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[3, 8], |k| (k as f64).powf(1.5)));
        let y = g.layer_norm(x, 1e-12).unwrap();
        for row in g.value(y).data().chunks(8) {
            let m = row.iter().sum::<f64>() / 8.0;
            let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sum_of_matmul_gradient() {
        // d/dA sum(A B) = row sums of B broadcast down the rows.
        let a = Tensor::from_fn(&[2, 3], |k| k as f64 * 0.3 - 0.5);
        let b = Tensor::from_fn(&[3, 2], |k| (k as f64).sqrt());
        let mut g = Graph::new();
        let va = g.param(a);
        let vb = g.constant(b.clone());
        let c = g.matmul(va, vb).unwrap();
        let s = g.sum_all(c);
        g.backward(s).unwrap();
        let ga = g.grad(va);
        for i in 0..2 {
            for j in 0..3 {
                let expect = b.at(&[j, 0]) + b.at(&[j, 1]);
                assert!((ga.at(&[i, j]) - expect).abs() < 1e-14);
            }
        }
    }
}
