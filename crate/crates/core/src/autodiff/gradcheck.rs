//! Central finite-difference checks of tape gradients, per op and for the
//! two full training losses.

use super::{Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::flow_loss_at;
use crate::nets::{Activation, CoderConfig, Parameterized, VelocityField, VelocityFieldConfig};
use crate::rng::SeededRng;
use crate::vae::SeqVae;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Names accepted by [`check_op`], one per differentiable op.
pub const OP_NAMES: &[&str] = &[
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "shift",
    "add_bias",
    "tanh",
    "relu",
    "sigmoid",
    "exp",
    "clamp",
    "softmax",
    "mean",
    "sum",
    "sum_sq",
    "concat",
    "slice",
    "embed_lookup",
    "cross_entropy",
];

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, and 0 when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Gradient of a scalar function of `inputs`, analytic against central
/// differences. `build` records the function given one leaf per input.
pub fn check<F>(inputs: &[Tensor], h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs.iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut analytic = Vec::new();
    for &v in &vars {
        grads.extend_into(v, &mut analytic);
    }

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = xs.iter().map(|t| tape.constant(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut xs = inputs.to_vec();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..xs.len() {
        for j in 0..xs[i].numel() {
            let x = xs[i].data()[j];
            xs[i].data_mut()[j] = x + h;
            let up = eval(&xs)?;
            xs[i].data_mut()[j] = x - h;
            let down = eval(&xs)?;
            xs[i].data_mut()[j] = x;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Central differences of `eval` with respect to every parameter of `model`.
pub fn numeric_param_grad<M: Parameterized>(model: &mut M, h: f64, eval: impl Fn(&M) -> Result<f64>) -> Result<Vec<f64>> {
    let sizes: Vec<usize> = model.params_mut().iter().map(|p| p.numel()).collect();
    let mut out = Vec::with_capacity(sizes.iter().sum());
    for (i, &n) in sizes.iter().enumerate() {
        for j in 0..n {
            let x = model.params_mut()[i].data()[j];
            model.params_mut()[i].data_mut()[j] = x + h;
            let up = eval(model)?;
            model.params_mut()[i].data_mut()[j] = x - h;
            let down = eval(model)?;
            model.params_mut()[i].data_mut()[j] = x;
            out.push((up - down) / (2.0 * h));
        }
    }
    Ok(out)
}

fn dims(rng: &mut SeededRng) -> usize {
    1 + rng.below(4)
}

fn random(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    rng.normal_tensor(shape)
}

/// Values kept at least `gap` away from every point in `kinks`.
fn away_from(rng: &mut SeededRng, shape: &[usize], kinks: &[f64], gap: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let x = 2.0 * rng.normal();
            if kinks.iter().all(|k| (x - k).abs() > gap) {
                break x;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Contracts an op's output against fixed random weights so every output
/// element contributes to the checked scalar.
fn contract(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone())?;
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

/// One random instance of the named op, checked with step `h`.
pub fn check_op(name: &str, rng: &mut SeededRng, h: f64) -> Result<f64> {
    let (m, n, k) = (dims(rng), dims(rng), dims(rng));
    let w_mn = random(rng, &[m, n]);
    let elementwise = |input: Tensor, f: fn(&mut Tape, Var) -> Result<Var>| {
        check(&[input], h, |tape, v| {
            let y = f(tape, v[0])?;
            contract(tape, y, &w_mn)
        })
    };
    match name {
        "matmul" => {
            let (a, b) = (random(rng, &[m, k]), random(rng, &[k, n]));
            check(&[a, b], h, |tape, v| {
                let y = tape.matmul(v[0], v[1])?;
                contract(tape, y, &w_mn)
            })
        }
        "add" | "sub" | "mul" => {
            // every other instance broadcasts a one-element operand
            let rhs = if rng.bernoulli(0.5) { random(rng, &[1]) } else { random(rng, &[m, n]) };
            let lhs = random(rng, &[m, n]);
            let op = name.to_string();
            check(&[lhs, rhs], h, move |tape, v| {
                let y = match op.as_str() {
                    "add" => tape.add(v[0], v[1])?,
                    "sub" => tape.sub(v[0], v[1])?,
                    _ => tape.mul(v[0], v[1])?,
                };
                contract(tape, y, &w_mn)
            })
        }
        "scale" | "shift" => {
            let c = rng.normal();
            let scale = name == "scale";
            check(&[random(rng, &[m, n])], h, move |tape, v| {
                let y = if scale { tape.scale(v[0], c)? } else { tape.shift(v[0], c)? };
                contract(tape, y, &w_mn)
            })
        }
        "add_bias" => check(&[random(rng, &[m, n]), random(rng, &[n])], h, |tape, v| {
            let y = tape.add_bias(v[0], v[1])?;
            contract(tape, y, &w_mn)
        }),
        "tanh" => elementwise(random(rng, &[m, n]), |t, v| t.tanh(v)),
        "sigmoid" => elementwise(random(rng, &[m, n]), |t, v| t.sigmoid(v)),
        "exp" => elementwise(random(rng, &[m, n]), |t, v| t.exp(v)),
        "relu" => elementwise(away_from(rng, &[m, n], &[0.0], 1e-2), |t, v| t.relu(v)),
        "clamp" => elementwise(away_from(rng, &[m, n], &[-1.0, 1.0], 1e-2), |t, v| t.clamp(v, -1.0, 1.0)),
        "softmax" => elementwise(random(rng, &[m, n]), |t, v| t.softmax(v)),
        "mean" => check(&[random(rng, &[m, n])], h, |tape, v| tape.mean(v[0])),
        "sum" => check(&[random(rng, &[m, n])], h, |tape, v| tape.sum(v[0])),
        "sum_sq" => check(&[random(rng, &[m, n])], h, |tape, v| tape.sum_sq(v[0])),
        "concat" => {
            let axis = if rng.bernoulli(0.5) { Axis::Rows } else { Axis::Cols };
            let parts = 2 + rng.below(2);
            let shapes: Vec<[usize; 2]> = (0..parts)
                .map(|_| match axis {
                    Axis::Rows => [dims(rng), n],
                    Axis::Cols => [m, dims(rng)],
                })
                .collect();
            let inputs: Vec<Tensor> = shapes.iter().map(|s| random(rng, s)).collect();
            let out_shape = match axis {
                Axis::Rows => [shapes.iter().map(|s| s[0]).sum(), n],
                Axis::Cols => [m, shapes.iter().map(|s| s[1]).sum()],
            };
            let w = random(rng, &out_shape);
            check(&inputs, h, |tape, v| {
                let y = tape.concat(v, axis)?;
                contract(tape, y, &w)
            })
        }
        "slice" => {
            let (axis, len) = if rng.bernoulli(0.5) { (Axis::Rows, m) } else { (Axis::Cols, n) };
            let start = rng.below(len);
            let end = start + 1 + rng.below(len - start);
            let out_shape = match axis {
                Axis::Rows => [end - start, n],
                Axis::Cols => [m, end - start],
            };
            let w = random(rng, &out_shape);
            check(&[random(rng, &[m, n])], h, |tape, v| {
                let y = tape.slice(v[0], axis, start, end)?;
                contract(tape, y, &w)
            })
        }
        "embed_lookup" => {
            let vocab = m + 1;
            let ids: Vec<usize> = (0..k + 2).map(|_| rng.below(vocab)).collect();
            let w = random(rng, &[ids.len(), n]);
            check(&[random(rng, &[vocab, n])], h, |tape, v| {
                let y = tape.embed_lookup(v[0], &ids)?;
                contract(tape, y, &w)
            })
        }
        "cross_entropy" => {
            let rows = m + 1;
            let vocab = n + 1;
            let mut targets: Vec<Option<usize>> =
                (0..rows).map(|_| if rng.bernoulli(0.8) { Some(rng.below(vocab)) } else { None }).collect();
            targets[0] = Some(rng.below(vocab));
            check(&[random(rng, &[rows, vocab])], h, |tape, v| tape.cross_entropy(v[0], &targets))
        }
        other => Err(Error::invalid("gradcheck", format!("unknown op {other:?}"))),
    }
}

/// A random small sequence VAE and batch; gradient of the full VAE loss with
/// respect to every parameter.
pub fn check_vae_loss(rng: &mut SeededRng, h: f64) -> Result<f64> {
    let vocab = 6 + rng.below(4);
    let config = CoderConfig { vocab_size: vocab, embed_dim: 3, hidden_dim: 4, latent_dim: 2, max_len: 8 };
    let mut vae = SeqVae::new(config, 0, 0.0, rng);
    vae.kl_weight_max = rng.uniform();
    let kl_weight = vae.kl_weight(0);
    let batch: Vec<Vec<usize>> = (0..3).map(|_| (0..1 + rng.below(4)).map(|_| 3 + rng.below(vocab - 3)).collect()).collect();
    let noise = rng.fork(0);

    let mut tape = Tape::new();
    let vars = vae.bind(&mut tape, true)?;
    let out = vars.vae_loss(&mut tape, &batch, &mut noise.clone(), kl_weight, true)?;
    let grads = tape.backward(out.loss)?;
    let mut analytic = Vec::new();
    for v in vars.vars() {
        grads.extend_into(v, &mut analytic);
    }
    drop(vars);

    let numeric = numeric_param_grad(&mut vae, h, |m| {
        m.loss_values(&batch, &mut noise.clone(), kl_weight).map(|(loss, _, _)| loss)
    })?;
    Ok(relative_error(&analytic, &numeric))
}

/// A random small velocity field; gradient of the flow-matching loss with
/// respect to its parameters and both endpoint batches.
pub fn check_flow_loss(rng: &mut SeededRng, h: f64) -> Result<f64> {
    let d = 1 + rng.below(3);
    let rows = 1 + rng.below(4);
    let config = VelocityFieldConfig { latent_dim: d, hidden_dims: vec![5, 4], time_embed_dim: 4, activation: Activation::Tanh };
    let mut field = VelocityField::new(config, rng);
    // the output layer starts at zero; move it off so every layer matters
    let out = field.layers_mut().last_mut().expect("output layer");
    out.weight = rng.normal_tensor(out.weight.shape());
    out.bias = rng.normal_tensor(out.bias.shape());
    let z0 = rng.normal_tensor(&[rows, d]);
    let z1 = rng.normal_tensor(&[rows, d]);
    let t: Vec<f64> = (0..rows).map(|_| rng.uniform()).collect();

    let mut tape = Tape::new();
    let bound = field.bind(&mut tape, true)?;
    let (a, b) = (tape.leaf(z0.clone())?, tape.leaf(z1.clone())?);
    let loss = flow_loss_at(&bound, &mut tape, a, b, &t)?;
    let grads = tape.backward(loss)?;
    let mut analytic = Vec::new();
    for v in bound.vars() {
        grads.extend_into(v, &mut analytic);
    }
    grads.extend_into(a, &mut analytic);
    grads.extend_into(b, &mut analytic);
    drop(bound);

    let eval = |f: &VelocityField, z0: &Tensor, z1: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = f.bind(&mut tape, false)?;
        let (a, b) = (tape.constant(z0.clone())?, tape.constant(z1.clone())?);
        let loss = flow_loss_at(&bound, &mut tape, a, b, &t)?;
        Ok(tape.value(loss).item())
    };
    let mut numeric = numeric_param_grad(&mut field, h, |f| eval(f, &z0, &z1))?;
    for which in 0..2 {
        let mut zs = [z0.clone(), z1.clone()];
        for j in 0..zs[which].numel() {
            let x = zs[which].data()[j];
            zs[which].data_mut()[j] = x + h;
            let up = eval(&field, &zs[0], &zs[1])?;
            zs[which].data_mut()[j] = x - h;
            let down = eval(&field, &zs[0], &zs[1])?;
            zs[which].data_mut()[j] = x;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}
