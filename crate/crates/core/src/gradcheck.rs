//! Finite-difference verification of the tape's backward rules.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relative error between an analytic and a numeric derivative, normalized so
/// tiny derivatives do not blow the ratio up: |a-n| / max(1, |a|, |n|).
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0_f64.max(analytic.abs()).max(numeric.abs())
}

/// Max relative error between backward-pass gradients of `f` and central
/// differences with step `h`, over every coordinate of every input.
///
/// `f` must build a scalar output on the given tape from the given leaves and
/// be deterministic in its inputs.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut xs = inputs.to_vec();
    let mut max_err: f64 = 0.0;
    for i in 0..xs.len() {
        for j in 0..xs[i].numel() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + h;
            let fp = eval(&xs)?;
            xs[i].data_mut()[j] = orig - h;
            let fm = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            max_err = max_err.max(rel_error(analytic[i][j], numeric));
        }
    }
    Ok(max_err)
}

/// One named gradient check; `run` returns the max relative error at step h.
pub struct GradCheckCase {
    pub name: &'static str,
    pub run: Box<dyn Fn(f64) -> Result<f64>>,
}

impl GradCheckCase {
    pub fn new<F: Fn(f64) -> Result<f64> + 'static>(name: &'static str, run: F) -> Self {
        GradCheckCase {
            name,
            run: Box::new(run),
        }
    }
}

/// Uniform random tensor in [lo, hi), deterministic in the rng state.
pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// Uniform random tensor with |x| in [margin, hi); keeps inputs away from the
/// kinks of non-smooth ops (abs at 0, leaky relu at 0).
pub fn signed_tensor(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.random_range(margin..hi);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// Scalarize an arbitrary output by a fixed random linear functional so that
/// every output coordinate influences the loss differently.
pub fn weighted_sum(tape: &mut Tape, out: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(uniform_tensor(rng, &shape, -1.0, 1.0));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

/// Gradient checks for every primitive tape op, on random inputs of at most
/// 64 elements, with kink avoidance built into the input ranges.
pub fn tape_op_checks() -> Vec<GradCheckCase> {
    let mut cases: Vec<GradCheckCase> = Vec::new();

    macro_rules! case {
        ($name:literal, $seed:expr, $inputs:expr, $build:expr) => {
            cases.push(GradCheckCase::new($name, move |h| {
                let mut rng = ChaCha8Rng::seed_from_u64($seed);
                let inputs: Vec<Tensor> = $inputs(&mut rng);
                gradcheck(
                    |tape, vars| {
                        let out = $build(tape, vars)?;
                        let mut wrng = ChaCha8Rng::seed_from_u64($seed ^ 0xabcd);
                        weighted_sum(tape, out, &mut wrng)
                    },
                    &inputs,
                    h,
                )
            }));
        };
    }

    case!("add", 11, |r: &mut ChaCha8Rng| vec![
        uniform_tensor(r, &[3, 4], -1.0, 1.0),
        uniform_tensor(r, &[3, 4], -1.0, 1.0)
    ], |t: &mut Tape, v: &[Var]| t.add(v[0], v[1]));

    case!("sub", 12, |r: &mut ChaCha8Rng| vec![
        uniform_tensor(r, &[3, 4], -1.0, 1.0),
        uniform_tensor(r, &[3, 4], -1.0, 1.0)
    ], |t: &mut Tape, v: &[Var]| t.sub(v[0], v[1]));

    case!("mul", 13, |r: &mut ChaCha8Rng| vec![
        uniform_tensor(r, &[3, 4], -1.0, 1.0),
        uniform_tensor(r, &[3, 4], -1.0, 1.0)
    ], |t: &mut Tape, v: &[Var]| t.mul(v[0], v[1]));

    case!("scale", 14, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[10], -1.0, 1.0)],
        |t: &mut Tape, v: &[Var]| -> Result<Var> { Ok(t.scale(v[0], -1.7)) });

    case!("add_scalar", 15, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[10], -1.0, 1.0)],
        |t: &mut Tape, v: &[Var]| -> Result<Var> { Ok(t.add_scalar(v[0], 0.37)) });

    case!("matmul", 16, |r: &mut ChaCha8Rng| vec![
        uniform_tensor(r, &[4, 5], -1.0, 1.0),
        uniform_tensor(r, &[5, 3], -1.0, 1.0)
    ], |t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1]));

    case!("transpose2", 17, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[3, 5], -1.0, 1.0)],
        |t: &mut Tape, v: &[Var]| t.transpose2(v[0]));

    case!("reshape", 18, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[2, 6], -1.0, 1.0)],
        |t: &mut Tape, v: &[Var]| t.reshape(v[0], &[3, 4]));

    case!("select0", 19, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[3, 4], -1.0, 1.0)],
        |t: &mut Tape, v: &[Var]| t.select0(v[0], 1));

    case!("narrow", 20, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[4, 6], -1.0, 1.0)],
        |t: &mut Tape, v: &[Var]| t.narrow(v[0], 1, 2, 3));

    case!("concat", 21, |r: &mut ChaCha8Rng| vec![
        uniform_tensor(r, &[2, 3], -1.0, 1.0),
        uniform_tensor(r, &[2, 2], -1.0, 1.0)
    ], |t: &mut Tape, v: &[Var]| t.concat(v, 1));

    case!("softmax", 22, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[4, 6], -2.0, 2.0)],
        |t: &mut Tape, v: &[Var]| t.softmax(v[0], 1));

    case!("leaky_relu", 23, |r: &mut ChaCha8Rng| vec![signed_tensor(r, &[4, 4], 0.1, 1.0)],
        |t: &mut Tape, v: &[Var]| -> Result<Var> { Ok(t.leaky_relu(v[0], 0.2)) });

    case!("sigmoid", 24, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[12], -2.0, 2.0)],
        |t: &mut Tape, v: &[Var]| -> Result<Var> { Ok(t.sigmoid(v[0])) });

    case!("tanh", 25, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[12], -2.0, 2.0)],
        |t: &mut Tape, v: &[Var]| -> Result<Var> { Ok(t.tanh(v[0])) });

    case!("log", 26, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[12], 0.5, 2.0)],
        |t: &mut Tape, v: &[Var]| -> Result<Var> { Ok(t.log(v[0])) });

    case!("abs", 27, |r: &mut ChaCha8Rng| vec![signed_tensor(r, &[12], 0.1, 1.0)],
        |t: &mut Tape, v: &[Var]| -> Result<Var> { Ok(t.abs(v[0])) });

    case!("clamp", 28, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[12], -0.8, 0.8)],
        |t: &mut Tape, v: &[Var]| -> Result<Var> { Ok(t.clamp(v[0], -0.9, 0.9)) });

    case!("sum", 29, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[3, 4], -1.0, 1.0)],
        |t: &mut Tape, v: &[Var]| -> Result<Var> { Ok(t.sum(v[0])) });

    case!("mean", 30, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[3, 4], -1.0, 1.0)],
        |t: &mut Tape, v: &[Var]| -> Result<Var> { Ok(t.mean(v[0])) });

    case!("add_row_bias", 31, |r: &mut ChaCha8Rng| vec![
        uniform_tensor(r, &[4, 3], -1.0, 1.0),
        uniform_tensor(r, &[3], -1.0, 1.0)
    ], |t: &mut Tape, v: &[Var]| t.add_row_bias(v[0], v[1]));

    case!("conv2d", 32, |r: &mut ChaCha8Rng| vec![
        uniform_tensor(r, &[1, 2, 4, 4], -1.0, 1.0),
        uniform_tensor(r, &[2, 2, 3, 3], -1.0, 1.0),
        uniform_tensor(r, &[2], -0.5, 0.5)
    ], |t: &mut Tape, v: &[Var]| t.conv2d(v[0], v[1], Some(v[2]), 1, 1));

    case!("conv2d_stride2", 33, |r: &mut ChaCha8Rng| vec![
        uniform_tensor(r, &[1, 2, 4, 4], -1.0, 1.0),
        uniform_tensor(r, &[2, 2, 3, 3], -1.0, 1.0)
    ], |t: &mut Tape, v: &[Var]| t.conv2d(v[0], v[1], None, 2, 1));

    case!("instance_norm", 34, |r: &mut ChaCha8Rng| vec![
        uniform_tensor(r, &[1, 2, 3, 3], -2.0, 2.0),
        uniform_tensor(r, &[2], 0.5, 1.5),
        uniform_tensor(r, &[2], -0.5, 0.5)
    ], |t: &mut Tape, v: &[Var]| t.instance_norm(v[0], v[1], v[2], 1e-6));

    case!("upsample2", 35, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[1, 2, 3, 3], -1.0, 1.0)],
        |t: &mut Tape, v: &[Var]| t.upsample2(v[0]));

    case!("avg_pool2", 36, |r: &mut ChaCha8Rng| vec![uniform_tensor(r, &[1, 2, 4, 4], -1.0, 1.0)],
        |t: &mut Tape, v: &[Var]| t.avg_pool2(v[0]));

    cases
}

/// Pass threshold and step shared by the whole gradient suite.
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-4;
