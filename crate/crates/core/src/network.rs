//! One-hidden-layer sigmoid network for the latent trace map, trained by
//! Levenberg-Marquardt on normalized data.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Per-feature affine map `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    /// Mean and population deviation per column; a constant column gets scale 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = v.sqrt();
                if s > 1e-12 * (1.0 + s) && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn inverse(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| v * s + m).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub hidden: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    /// Consecutive epochs without validation improvement before stopping.
    pub max_validation_failures: usize,
    pub mu_init: f64,
    pub mu_max: f64,
    /// Independent initializations on the same split; the lowest validation loss wins.
    #[serde(default = "one")]
    pub restarts: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            hidden: 10,
            seed: 7,
            max_epochs: 200,
            validation_fraction: 0.1,
            max_validation_failures: 6,
            mu_init: 1e-3,
            mu_max: 1e10,
            restarts: 1,
        }
    }
}

/// Trained network. Weights are packed as `W1` (hidden x input, row-major),
/// `b1`, `W2` (output x hidden, row-major), `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMap {
    pub dims: [usize; 3],
    pub activation: String,
    pub weights: Vec<f64>,
    pub normalizers: Normalizers,
    pub seed: u64,
    pub loss: LossRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub input: Normalizer,
    pub output: Normalizer,
}

/// Mean squared errors in normalized space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub history: Vec<f64>,
    pub train: f64,
    pub validation: f64,
    pub epochs: usize,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn param_count(dims: [usize; 3]) -> usize {
    let [ni, nh, no] = dims;
    nh * ni + nh + no * nh + no
}

/// Forward pass in normalized space; fills `hidden` and returns outputs.
fn forward(dims: [usize; 3], w: &[f64], x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
    let [ni, nh, no] = dims;
    let (w1, rest) = w.split_at(nh * ni);
    let (b1, rest) = rest.split_at(nh);
    let (w2, b2) = rest.split_at(no * nh);
    for j in 0..nh {
        let z: f64 = w1[j * ni..(j + 1) * ni].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[j];
        hidden[j] = sigmoid(z);
    }
    for k in 0..no {
        out[k] = w2[k * nh..(k + 1) * nh].iter().zip(hidden.iter()).map(|(a, b)| a * b).sum::<f64>() + b2[k];
    }
}

fn mse(dims: [usize; 3], w: &[f64], xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut h = vec![0.0; dims[1]];
    let mut o = vec![0.0; dims[2]];
    let mut s = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        forward(dims, w, x, &mut h, &mut o);
        s += o.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    s / (xs.len() * dims[2]) as f64
}

/// Jacobian of all outputs w.r.t. the weights, and the residuals.
fn jacobian(dims: [usize; 3], w: &[f64], xs: &[Vec<f64>], ys: &[Vec<f64>]) -> (DMatrix<f64>, DVector<f64>) {
    let [ni, nh, no] = dims;
    let p = param_count(dims);
    let rows = xs.len() * no;
    let mut jac = DMatrix::<f64>::zeros(rows, p);
    let mut res = DVector::<f64>::zeros(rows);
    let w2 = &w[nh * ni + nh..nh * ni + nh + no * nh];
    let (off_b1, off_w2, off_b2) = (nh * ni, nh * ni + nh, nh * ni + nh + no * nh);
    let mut h = vec![0.0; nh];
    let mut o = vec![0.0; no];
    for (s, (x, y)) in xs.iter().zip(ys).enumerate() {
        forward(dims, w, x, &mut h, &mut o);
        for k in 0..no {
            let r = s * no + k;
            res[r] = o[k] - y[k];
            for j in 0..nh {
                let dh = w2[k * nh + j] * h[j] * (1.0 - h[j]);
                for i in 0..ni {
                    jac[(r, j * ni + i)] = dh * x[i];
                }
                jac[(r, off_b1 + j)] = dh;
                jac[(r, off_w2 + k * nh + j)] = h[j];
            }
            jac[(r, off_b2 + k)] = 1.0;
        }
    }
    (jac, res)
}

/// Least-squares output weights for the fixed hidden layer of `w`.
fn refit_output_layer(dims: [usize; 3], w: &[f64], xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Option<Vec<f64>> {
    let [ni, nh, no] = dims;
    if xs.len() <= nh {
        return None;
    }
    let mut design = DMatrix::<f64>::zeros(xs.len(), nh + 1);
    let mut target = DMatrix::<f64>::zeros(xs.len(), no);
    let mut h = vec![0.0; nh];
    let mut o = vec![0.0; no];
    for (s, (x, y)) in xs.iter().zip(ys).enumerate() {
        forward(dims, w, x, &mut h, &mut o);
        for j in 0..nh {
            design[(s, j)] = h[j];
        }
        design[(s, nh)] = 1.0;
        for k in 0..no {
            target[(s, k)] = y[k];
        }
    }
    let sol = design.svd(true, true).solve(&target, 1e-12).ok()?;
    let mut out = w.to_vec();
    let (off_w2, off_b2) = (nh * ni + nh, nh * ni + nh + no * nh);
    for k in 0..no {
        for j in 0..nh {
            out[off_w2 + k * nh + j] = sol[(j, k)];
        }
        out[off_b2 + k] = sol[(nh, k)];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

struct Fit {
    weights: Vec<f64>,
    train: f64,
    validation: f64,
    history: Vec<f64>,
    epochs: usize,
}

type Rows<'a> = (&'a [Vec<f64>], &'a [Vec<f64>]);

fn levenberg_marquardt(dims: [usize; 3], mut w: Vec<f64>, train: Rows, val: Rows, settings: &TrainSettings) -> Result<Fit> {
    let p = param_count(dims);
    let (tx, ty) = train;
    let (vx, vy) = val;
    let mut loss = mse(dims, &w, tx, ty);
    let mut best = (if vx.is_empty() { loss } else { mse(dims, &w, vx, vy) }, w.clone(), loss);
    let mut history = vec![loss];
    let mut mu = settings.mu_init;
    let mut failures = 0;
    let mut epochs = 0;
    'outer: for _ in 0..settings.max_epochs {
        epochs += 1;
        let (jac, res) = jacobian(dims, &w, tx, ty);
        let jtj = jac.tr_mul(&jac);
        let g = jac.tr_mul(&res);
        if g.amax() < 1e-15 {
            break;
        }
        loop {
            let mut a = jtj.clone();
            for d in 0..p {
                a[(d, d)] += mu;
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    mu *= 10.0;
                    if mu > settings.mu_max {
                        break 'outer;
                    }
                    continue;
                }
            };
            let trial: Vec<f64> = w.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_loss = mse(dims, &trial, tx, ty);
            if !trial_loss.is_finite() {
                return Err(Error::Training("loss became non-finite".into()));
            }
            if trial_loss < loss {
                w = trial;
                loss = trial_loss;
                mu = (mu / 10.0).max(1e-20);
                break;
            }
            mu *= 10.0;
            if mu > settings.mu_max {
                break 'outer;
            }
        }
        history.push(loss);
        let val = if vx.is_empty() { loss } else { mse(dims, &w, vx, vy) };
        if val < best.0 {
            best = (val, w.clone(), loss);
            failures = 0;
        } else {
            failures += 1;
            if failures >= settings.max_validation_failures {
                break;
            }
        }
        if loss < 1e-14 {
            break;
        }
    }
    let (mut validation_loss, mut weights, mut train_loss) = best;
    if let Some(refit) = refit_output_layer(dims, &weights, tx, ty) {
        let v = if vx.is_empty() { mse(dims, &refit, tx, ty) } else { mse(dims, &refit, vx, vy) };
        if v <= validation_loss {
            validation_loss = v;
            train_loss = mse(dims, &refit, tx, ty);
            weights = refit;
            history.push(train_loss);
        }
    }
    if !train_loss.is_finite() || !validation_loss.is_finite() {
        return Err(Error::Training("non-finite final loss".into()));
    }
    Ok(Fit { weights, train: train_loss, validation: validation_loss, history, epochs })
}

pub fn train_latent_map(inputs: &[Vec<f64>], outputs: &[Vec<f64>], settings: &TrainSettings) -> Result<LatentMap> {
    if inputs.is_empty() {
        return Err(Error::Training("empty dataset".into()));
    }
    check_len(inputs.len(), outputs.len())?;
    if settings.hidden == 0 {
        return Err(Error::Training("the hidden layer needs at least one unit".into()));
    }
    let ni = inputs[0].len();
    let no = outputs[0].len();
    for (x, y) in inputs.iter().zip(outputs) {
        check_len(ni, x.len())?;
        check_len(no, y.len())?;
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Training("non-finite dataset entry".into()));
        }
    }
    let dims = [ni, settings.hidden, no];
    let input_norm = Normalizer::fit(inputs);
    let output_norm = Normalizer::fit(outputs);
    let xs: Vec<Vec<f64>> = inputs.iter().map(|x| input_norm.forward(x)).collect();
    let ys: Vec<Vec<f64>> = outputs.iter().map(|y| output_norm.forward(y)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((xs.len() as f64) * settings.validation_fraction).floor() as usize;
    let n_val = if xs.len() - n_val == 0 { 0 } else { n_val };
    let (val_idx, train_idx) = order.split_at(n_val);
    let pick = |idx: &[usize], v: &[Vec<f64>]| idx.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
    let (tx, ty) = (pick(train_idx, &xs), pick(train_idx, &ys));
    let (vx, vy) = (pick(val_idx, &xs), pick(val_idx, &ys));

    let p = param_count(dims);
    let mut best: Option<Fit> = None;
    for _ in 0..settings.restarts.max(1) {
        let w0: Vec<f64> = (0..p).map(|_| rng.random_range(-0.5..=0.5)).collect();
        let fit = levenberg_marquardt(dims, w0, (&tx, &ty), (&vx, &vy), settings)?;
        if best.as_ref().is_none_or(|b| fit.validation < b.validation) {
            best = Some(fit);
        }
    }
    let Fit { weights, train: train_loss, validation: validation_loss, history, epochs } =
        best.expect("at least one restart");
    Ok(LatentMap {
        dims,
        activation: "sigmoid".into(),
        weights,
        normalizers: Normalizers { input: input_norm, output: output_norm },
        seed: settings.seed,
        loss: LossRecord { history, train: train_loss, validation: validation_loss, epochs },
    })
}

impl LatentMap {
    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[2]
    }

    pub fn evaluate(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dims[0], input.len())?;
        let x = self.normalizers.input.forward(input);
        let mut h = vec![0.0; self.dims[1]];
        let mut o = vec![0.0; self.dims[2]];
        forward(self.dims, &self.weights, &x, &mut h, &mut o);
        Ok(self.normalizers.output.inverse(&o))
    }

    /// Floating-point operations of one evaluation, exponentials counted once.
    pub fn flops(&self) -> usize {
        let [ni, nh, no] = self.dims;
        2 * ni + nh * (2 * ni + 4) + no * (2 * nh) + 2 * no
    }
}
