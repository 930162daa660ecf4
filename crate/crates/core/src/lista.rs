//! Unfolded ISTA network.
//!
//! K cascaded layers, each holding two 5-tap filters and a sigmoid-gated
//! shrinkage with a learned threshold, followed by one 5-tap output filter
//! that maps the sparse code back to an RF line. Thresholds are stored as
//! unconstrained rho with lambda = softplus(rho), so they can never go
//! negative. Gradients are exact reverse-mode derivatives of the SMSLE loss
//! through the whole stack; training uses Adam with a plateau-decayed
//! learning rate and is bit-reproducible under a seed.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

pub const KERNEL_TAPS: usize = 5;
const KERNEL_RADIUS: i64 = (KERNEL_TAPS as i64 - 1) / 2;
const LOSS_EPSILON_DEFAULT: f64 = 1e-6;
const LR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ListaLayer {
    pub w_e: [f64; KERNEL_TAPS],
    pub w_t: [f64; KERNEL_TAPS],
    /// lambda = softplus(rho)
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListaModel {
    pub layers: Vec<ListaLayer>,
    pub output_filter: [f64; KERNEL_TAPS],
    pub input_len: usize,
    /// Internal feature channels. Only 1 is supported; the field is kept in
    /// the model file for forward compatibility.
    pub channels: usize,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ListaModel {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn lambda(&self, layer: usize) -> f64 {
        softplus(self.layers[layer].rho)
    }

    /// K * (5 + 5 + 1) + 5 scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.layers.len() * (2 * KERNEL_TAPS + 1) + KERNEL_TAPS
    }

    /// Glorot-uniform filters over fan (5, 1) and thresholds at 0.1.
    pub fn init(k_layers: usize, input_len: usize, seed: u64) -> Result<ListaModel> {
        if k_layers == 0 {
            return Err(Error::invalid("need at least one layer"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / (KERNEL_TAPS as f64 + 1.0)).sqrt();
        let filter = |rng: &mut ChaCha8Rng| -> [f64; KERNEL_TAPS] {
            let mut f = [0.0; KERNEL_TAPS];
            for v in f.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            f
        };
        // rho such that softplus(rho) = 0.1
        let rho0 = (0.1f64.exp() - 1.0).ln();
        let layers = (0..k_layers)
            .map(|_| ListaLayer {
                w_e: filter(&mut rng),
                w_t: filter(&mut rng),
                rho: rho0,
            })
            .collect();
        let output_filter = filter(&mut rng);
        Ok(ListaModel {
            layers,
            output_filter,
            input_len,
            channels: 1,
        })
    }
}

/// Same-length zero-padded 5-tap convolution.
fn conv5(x: &[f64], w: &[f64; KERNEL_TAPS]) -> Vec<f64> {
    let n = x.len() as i64;
    let mut out = vec![0.0; x.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &wj) in w.iter().enumerate() {
            let t = i as i64 + j as i64 - KERNEL_RADIUS;
            if t >= 0 && t < n {
                acc += wj * x[t as usize];
            }
        }
        *slot = acc;
    }
    out
}

/// Gradient of conv5 with respect to the taps: correlate input with the
/// output gradient.
fn conv5_grad_w(x: &[f64], gout: &[f64]) -> [f64; KERNEL_TAPS] {
    let n = x.len() as i64;
    let mut gw = [0.0; KERNEL_TAPS];
    for (j, slot) in gw.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &g) in gout.iter().enumerate() {
            let t = i as i64 + j as i64 - KERNEL_RADIUS;
            if t >= 0 && t < n {
                acc += g * x[t as usize];
            }
        }
        *slot = acc;
    }
    gw
}

/// Gradient of conv5 with respect to the input: convolve the output
/// gradient with the reversed kernel.
fn conv5_grad_x(w: &[f64; KERNEL_TAPS], gout: &[f64]) -> Vec<f64> {
    let n = gout.len() as i64;
    let mut gx = vec![0.0; gout.len()];
    for (t, slot) in gx.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &wj) in w.iter().enumerate() {
            let i = t as i64 - j as i64 + KERNEL_RADIUS;
            if i >= 0 && i < n {
                acc += wj * gout[i as usize];
            }
        }
        *slot = acc;
    }
    gx
}

/// Sigmoid-gated shrinkage S_lambda(x) = x / (1 + e^{-(|x| - lambda)}).
pub fn sigmoid_shrink(x: &[f64], lambda: f64) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v.abs() - lambda)).collect()
}

struct ForwardTrace {
    /// pre-activations per layer
    pre: Vec<Vec<f64>>,
    /// x^0 .. x^K (x^0 is all zeros)
    states: Vec<Vec<f64>>,
    phi_hat: Vec<f64>,
}

fn forward_trace(model: &ListaModel, phi: &[f64]) -> Result<ForwardTrace> {
    if phi.len() != model.input_len {
        return Err(Error::shape(format!(
            "input of {} samples for a model built with N = {}",
            phi.len(),
            model.input_len
        )));
    }
    if model.channels != 1 {
        return Err(Error::invalid(format!(
            "unsupported channel count {}",
            model.channels
        )));
    }
    let mut states = Vec::with_capacity(model.layers.len() + 1);
    let mut pre = Vec::with_capacity(model.layers.len());
    states.push(vec![0.0; phi.len()]);
    for (k, layer) in model.layers.iter().enumerate() {
        let mut p = conv5(phi, &layer.w_e);
        let pt = conv5(&states[k], &layer.w_t);
        for (a, b) in p.iter_mut().zip(pt.iter()) {
            *a += b;
        }
        let lambda = softplus(layer.rho);
        states.push(sigmoid_shrink(&p, lambda));
        pre.push(p);
    }
    let phi_hat = conv5(states.last().unwrap(), &model.output_filter);
    Ok(ForwardTrace {
        pre,
        states,
        phi_hat,
    })
}

/// Run the network: returns the recovered line and the final sparse code.
pub fn forward(model: &ListaModel, phi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let trace = forward_trace(model, phi)?;
    Ok((trace.phi_hat, trace.states.last().unwrap().clone()))
}

/// Signed mean-squared-logarithmic error between a prediction and a DAS
/// target: positive and negative parts are log-compared separately and the
/// two mean-square terms are halved and summed.
pub fn smsle_loss(phi_hat: &[f64], phi_das: &[f64], epsilon: f64) -> Result<f64> {
    if phi_hat.len() != phi_das.len() {
        return Err(Error::shape(format!(
            "prediction of {} samples vs target of {}",
            phi_hat.len(),
            phi_das.len()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let n = phi_hat.len() as f64;
    let mut pos = 0.0;
    let mut neg = 0.0;
    for (&a, &b) in phi_hat.iter().zip(phi_das.iter()) {
        let dp = (a.max(0.0) + epsilon).log10() - (b.max(0.0) + epsilon).log10();
        let dn = ((-a).max(0.0) + epsilon).log10() - ((-b).max(0.0) + epsilon).log10();
        pos += dp * dp;
        neg += dn * dn;
    }
    Ok(0.5 * pos / n + 0.5 * neg / n)
}

/// Per-parameter gradients, mirroring the model layout.
#[derive(Debug, Clone)]
pub struct ModelGrad {
    pub layers: Vec<ListaLayer>,
    pub output_filter: [f64; KERNEL_TAPS],
}

impl ModelGrad {
    fn zeros(k: usize) -> ModelGrad {
        ModelGrad {
            layers: vec![
                ListaLayer {
                    w_e: [0.0; KERNEL_TAPS],
                    w_t: [0.0; KERNEL_TAPS],
                    rho: 0.0,
                };
                k
            ],
            output_filter: [0.0; KERNEL_TAPS],
        }
    }

    fn add(&mut self, other: &ModelGrad) {
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            for i in 0..KERNEL_TAPS {
                a.w_e[i] += b.w_e[i];
                a.w_t[i] += b.w_t[i];
            }
            a.rho += b.rho;
        }
        for i in 0..KERNEL_TAPS {
            self.output_filter[i] += other.output_filter[i];
        }
    }

    fn scale(&mut self, s: f64) {
        for l in self.layers.iter_mut() {
            for i in 0..KERNEL_TAPS {
                l.w_e[i] *= s;
                l.w_t[i] *= s;
            }
            l.rho *= s;
        }
        for v in self.output_filter.iter_mut() {
            *v *= s;
        }
    }
}

/// Exact reverse-mode gradient of smsle_loss(forward(model, phi), phi_das)
/// with respect to every tap and every rho. Returns the loss alongside.
pub fn gradients(
    model: &ListaModel,
    phi: &[f64],
    phi_das: &[f64],
    epsilon: f64,
) -> Result<(ModelGrad, f64)> {
    let trace = forward_trace(model, phi)?;
    let loss = smsle_loss(&trace.phi_hat, phi_das, epsilon)?;
    let n = phi.len() as f64;
    let ln10 = std::f64::consts::LN_10;

    // dL / d phi_hat
    let g_out: Vec<f64> = trace
        .phi_hat
        .iter()
        .zip(phi_das.iter())
        .map(|(&a, &b)| {
            let mut g = 0.0;
            if a > 0.0 {
                let ap = a + epsilon;
                let dp = ap.log10() - (b.max(0.0) + epsilon).log10();
                g += dp / (ap * ln10) / n;
            }
            if a < 0.0 {
                let an = -a + epsilon;
                let dn = an.log10() - ((-b).max(0.0) + epsilon).log10();
                g -= dn / (an * ln10) / n;
            }
            g
        })
        .collect();

    let mut grad = ModelGrad::zeros(model.layers.len());
    let x_k = trace.states.last().unwrap();
    grad.output_filter = conv5_grad_w(x_k, &g_out);
    let mut g_state = conv5_grad_x(&model.output_filter, &g_out);

    for k in (0..model.layers.len()).rev() {
        let layer = &model.layers[k];
        let lambda = softplus(layer.rho);
        let pre = &trace.pre[k];
        // backprop through the shrinkage
        let mut g_pre = vec![0.0; pre.len()];
        let mut g_lambda = 0.0;
        for i in 0..pre.len() {
            let p = pre[i];
            let u = p.abs() - lambda;
            let s = sigmoid(u);
            let sp = s * (1.0 - s);
            let sign = if p > 0.0 {
                1.0
            } else if p < 0.0 {
                -1.0
            } else {
                0.0
            };
            g_pre[i] = g_state[i] * (s + p * sp * sign);
            g_lambda -= g_state[i] * p * sp;
        }
        grad.layers[k].rho = g_lambda * sigmoid(layer.rho);
        grad.layers[k].w_e = conv5_grad_w(phi, &g_pre);
        grad.layers[k].w_t = conv5_grad_w(&trace.states[k], &g_pre);
        g_state = conv5_grad_x(&layer.w_t, &g_pre);
    }
    Ok((grad, loss))
}

/// Training schedule knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub lr_init: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_max: 120,
            lr_init: 1e-3,
            plateau_patience: 5,
            plateau_factor: 0.5,
            batch_size: 16,
            seed: 0,
            loss_epsilon: LOSS_EPSILON_DEFAULT,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs_max == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs_max and batch_size must be >= 1"));
        }
        if !(self.lr_init > 0.0) || !(self.loss_epsilon > 0.0) {
            return Err(Error::invalid("lr_init and loss_epsilon must be positive"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::invalid("plateau_factor must be in (0, 1)"));
        }
        Ok(())
    }
}

struct AdamState {
    m: ModelGrad,
    v: ModelGrad,
    step: usize,
}

impl AdamState {
    fn new(k: usize) -> AdamState {
        AdamState {
            m: ModelGrad::zeros(k),
            v: ModelGrad::zeros(k),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut ListaModel, grad: &ModelGrad, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let bc1 = 1.0 - B1.powi(self.step as i32);
        let bc2 = 1.0 - B2.powi(self.step as i32);
        let upd = |m: &mut f64, v: &mut f64, g: f64, p: &mut f64| {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= lr * mh / (vh.sqrt() + EPS);
        };
        for (k, layer) in model.layers.iter_mut().enumerate() {
            for i in 0..KERNEL_TAPS {
                upd(
                    &mut self.m.layers[k].w_e[i],
                    &mut self.v.layers[k].w_e[i],
                    grad.layers[k].w_e[i],
                    &mut layer.w_e[i],
                );
                upd(
                    &mut self.m.layers[k].w_t[i],
                    &mut self.v.layers[k].w_t[i],
                    grad.layers[k].w_t[i],
                    &mut layer.w_t[i],
                );
            }
            upd(
                &mut self.m.layers[k].rho,
                &mut self.v.layers[k].rho,
                grad.layers[k].rho,
                &mut layer.rho,
            );
        }
        for i in 0..KERNEL_TAPS {
            upd(
                &mut self.m.output_filter[i],
                &mut self.v.output_filter[i],
                grad.output_filter[i],
                &mut model.output_filter[i],
            );
        }
    }
}

/// Scale a line to unit peak magnitude. Lines are normalized this way
/// before both the network input and the loss.
pub fn normalize_line(line: &[f64]) -> Vec<f64> {
    let max = line.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        line.iter().map(|v| v / max).collect()
    } else {
        line.to_vec()
    }
}

pub struct TrainOutcome {
    pub model: ListaModel,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Adam training against DAS targets with plateau-decayed learning rate.
///
/// Batch gradients are accumulated over samples in index order regardless
/// of worker count, so a fixed seed reproduces the final model bitwise.
pub fn train(
    dataset: &[(Vec<f64>, Vec<f64>)],
    model_init: &ListaModel,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    for (input, target) in dataset {
        if input.len() != model_init.input_len || target.len() != model_init.input_len {
            return Err(Error::shape(format!(
                "dataset lines must match the model length {}",
                model_init.input_len
            )));
        }
    }
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = dataset
        .iter()
        .map(|(i, t)| (normalize_line(i), normalize_line(t)))
        .collect();

    let mut model = model_init.clone();
    let mut adam = AdamState::new(model.layer_count());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut lr = config.lr_init;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut history = Vec::with_capacity(config.epochs_max);

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _epoch in 0..config.epochs_max {
        // Fisher-Yates driven by the run seed
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let per_sample: Vec<(ModelGrad, f64)> = crate::par_map_ordered(chunk, |&idx| {
                let (input, target) = &pairs[idx];
                gradients(&model, input, target, config.loss_epsilon)
                    .expect("shapes validated before training")
            });
            let mut batch = ModelGrad::zeros(model.layer_count());
            let mut batch_loss = 0.0;
            for (g, l) in &per_sample {
                batch.add(g);
                batch_loss += l;
            }
            batch.scale(1.0 / chunk.len() as f64);
            epoch_loss += batch_loss;
            adam.update(&mut model, &batch, lr);
        }
        epoch_loss /= pairs.len() as f64;
        history.push(epoch_loss);

        if epoch_loss < best - 1e-12 {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.plateau_patience {
                lr = (lr * config.plateau_factor).max(LR_FLOOR);
                stale = 0;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 8] = b"SNBLSTA\0";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    k: usize,
    kernel: usize,
    n: usize,
    c: usize,
    train_config_hash: String,
}

/// Serialize: magic, version, JSON header (length-prefixed), then the raw
/// f64 parameter block.
pub fn save_model(model: &ListaModel, path: &Path, train_config_hash: &str) -> Result<()> {
    let header = ModelHeader {
        version: MODEL_VERSION,
        k: model.layer_count(),
        kernel: KERNEL_TAPS,
        n: model.input_len,
        c: model.channels,
        train_config_hash: train_config_hash.to_string(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for layer in &model.layers {
        for v in layer.w_e.iter().chain(layer.w_t.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&layer.rho.to_le_bytes());
    }
    for v in model.output_filter.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a model file, validating magic, version and parameter count.
pub fn load_model(path: &Path) -> Result<ListaModel> {
    let as_str = path.display().to_string();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(as_str.clone(), e))?;
    let mut fixed = [0u8; 20];
    file.read_exact(&mut fixed)
        .map_err(|_| Error::format(as_str.clone(), "file truncated in header"))?;
    if &fixed[..8] != MODEL_MAGIC {
        return Err(Error::format(as_str, "bad magic"));
    }
    let version = u32::from_le_bytes(fixed[8..12].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::format(
            as_str,
            format!("model version {version} != {MODEL_VERSION}"),
        ));
    }
    let header_len = u64::from_le_bytes(fixed[12..20].try_into().unwrap()) as usize;
    let mut header_buf = vec![0u8; header_len];
    file.read_exact(&mut header_buf)
        .map_err(|_| Error::format(as_str.clone(), "file truncated in header"))?;
    let header: ModelHeader = serde_json::from_slice(&header_buf)
        .map_err(|e| Error::format(as_str.clone(), e.to_string()))?;
    if header.kernel != KERNEL_TAPS {
        return Err(Error::format(
            as_str,
            format!("kernel size {} unsupported", header.kernel),
        ));
    }
    if header.c != 1 {
        return Err(Error::format(
            as_str,
            format!("channel count {} unsupported", header.c),
        ));
    }
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)
        .map_err(|e| Error::io(as_str.clone(), e))?;
    let expected = (header.k * (2 * KERNEL_TAPS + 1) + KERNEL_TAPS) * 8;
    if payload.len() != expected {
        return Err(Error::format(
            as_str,
            format!("expected {expected} parameter bytes, found {}", payload.len()),
        ));
    }
    let mut vals = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let take_filter = |vals: &mut dyn Iterator<Item = f64>| {
        let mut f = [0.0; KERNEL_TAPS];
        for v in f.iter_mut() {
            *v = vals.next().unwrap();
        }
        f
    };
    let mut layers = Vec::with_capacity(header.k);
    for _ in 0..header.k {
        let w_e = take_filter(&mut vals);
        let w_t = take_filter(&mut vals);
        let rho = vals.next().unwrap();
        layers.push(ListaLayer { w_e, w_t, rho });
    }
    let output_filter = take_filter(&mut vals);
    Ok(ListaModel {
        layers,
        output_filter,
        input_len: header.n,
        channels: header.c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_model(k: usize, n: usize, seed: u64) -> ListaModel {
        ListaModel::init(k, n, seed).unwrap()
    }

    fn random_line(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn shrink_fixed_points() {
        let lambda = 0.7;
        let out = sigmoid_shrink(&[0.0], lambda);
        assert_eq!(out[0], 0.0);

        // x = lambda: the gate is exactly 1/2
        let out = sigmoid_shrink(&[lambda, -lambda], lambda);
        assert!((out[0] - lambda / 2.0).abs() < 1e-15);
        assert!((out[1] + lambda / 2.0).abs() < 1e-15);

        // far above the threshold the gate saturates: the relative gap is
        // e^-20 / (1 + e^-20), around 2e-9
        let big = lambda + 20.0;
        let out = sigmoid_shrink(&[big, -big], lambda);
        assert!((out[0] - big).abs() < 1e-8 * big);
        assert!((out[1] + big).abs() < 1e-8 * big);
    }

    #[test]
    fn forward_zero_model_outputs_zero() {
        let mut model = random_model(3, 64, 1);
        for l in model.layers.iter_mut() {
            l.w_e = [0.0; 5];
            l.w_t = [0.0; 5];
        }
        model.output_filter = [0.0; 5];
        let (phi_hat, code) = forward(&model, &random_line(64, 2)).unwrap();
        assert!(phi_hat.iter().all(|&v| v == 0.0));
        assert!(code.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_single_identity_layer_collapses() {
        let mut model = random_model(1, 64, 1);
        model.layers[0].w_e = [0.0, 0.0, 1.0, 0.0, 0.0];
        model.layers[0].w_t = [0.0; 5];
        // softplus(rho) = 0 is unreachable; drive lambda to ~1e-9
        model.layers[0].rho = -20.0;
        model.output_filter = [0.0, 0.0, 1.0, 0.0, 0.0];
        let phi = random_line(64, 3);
        let (phi_hat, _) = forward(&model, &phi).unwrap();
        let expect = sigmoid_shrink(&phi, softplus(-20.0));
        for (a, b) in phi_hat.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_straight_line_reference() {
        // Independent single-pass re-implementation with direct indexing.
        let model = random_model(4, 96, 7);
        let phi = random_line(96, 8);
        let (phi_hat, _) = forward(&model, &phi).unwrap();

        let n = phi.len();
        let conv = |x: &[f64], w: &[f64; 5]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut acc = 0.0;
                    for (j, &wj) in w.iter().enumerate() {
                        let t = i as i64 + j as i64 - 2;
                        if t >= 0 && (t as usize) < n {
                            acc += wj * x[t as usize];
                        }
                    }
                    acc
                })
                .collect()
        };
        let mut x = vec![0.0; n];
        for layer in &model.layers {
            let a = conv(&phi, &layer.w_e);
            let b = conv(&x, &layer.w_t);
            let lambda = softplus(layer.rho);
            x = (0..n)
                .map(|i| {
                    let p = a[i] + b[i];
                    p / (1.0 + (-(p.abs() - lambda)).exp())
                })
                .collect();
        }
        let reference = conv(&x, &model.output_filter);
        for (a, b) in phi_hat.iter().zip(reference.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_length_mismatch() {
        let model = random_model(2, 64, 1);
        assert!(forward(&model, &random_line(63, 2)).is_err());
    }

    #[test]
    fn loss_zero_iff_equal() {
        let a = random_line(50, 4);
        assert_eq!(smsle_loss(&a, &a, 1e-6).unwrap(), 0.0);
        let mut b = a.clone();
        b[3] += 0.25;
        assert!(smsle_loss(&a, &b, 1e-6).unwrap() > 0.0);
    }

    #[test]
    fn loss_sides_are_independent() {
        // predictions differing only where both are positive leave the
        // negative-side term at zero
        let target = vec![1.0, -1.0, 0.5];
        let pred = vec![2.0, -1.0, 0.25];
        let eps = 1e-6;
        let full = smsle_loss(&pred, &target, eps).unwrap();
        let n = 3.0;
        let mut pos = 0.0;
        for (a, b) in pred.iter().zip(target.iter()) {
            let d = (a.max(0.0) + eps).log10() - (b.max(0.0) + eps).log10();
            pos += d * d;
        }
        assert!((full - 0.5 * pos / n).abs() < 1e-15);
    }

    #[test]
    fn loss_hand_value() {
        // Hand evaluation of the formula for phi_hat = [10, -10] vs
        // phi_das = [1, -1], eps = 1e-6: each side's squared-difference
        // vector is [(log10(10.000001) - log10(1.000001))^2, 0], whose mean
        // is half of ~1, and the two halved sides sum to ~0.5.
        let eps = 1e-6;
        let d = (10.0f64 + eps).log10() - (1.0f64 + eps).log10();
        let expected = 0.5 * (d * d / 2.0) + 0.5 * (d * d / 2.0);
        let got = smsle_loss(&[10.0, -10.0], &[1.0, -1.0], eps).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.5).abs() < 1e-5);
    }

    fn flatten(model: &ListaModel) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &model.layers {
            v.extend_from_slice(&l.w_e);
            v.extend_from_slice(&l.w_t);
            v.push(l.rho);
        }
        v.extend_from_slice(&model.output_filter);
        v
    }

    fn unflatten(template: &ListaModel, vals: &[f64]) -> ListaModel {
        let mut model = template.clone();
        let mut it = vals.iter().copied();
        for l in model.layers.iter_mut() {
            for v in l.w_e.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in l.w_t.iter_mut() {
                *v = it.next().unwrap();
            }
            l.rho = it.next().unwrap();
        }
        for v in model.output_filter.iter_mut() {
            *v = it.next().unwrap();
        }
        model
    }

    fn flatten_grad(g: &ModelGrad) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &g.layers {
            v.extend_from_slice(&l.w_e);
            v.extend_from_slice(&l.w_t);
            v.push(l.rho);
        }
        v.extend_from_slice(&g.output_filter);
        v
    }

    #[test]
    fn gradients_match_finite_differences() {
        let n = 64;
        let model = random_model(3, n, 11);
        let phi = random_line(n, 12);
        let target = random_line(n, 13);
        let eps = 1e-6;
        let (grad, _) = gradients(&model, &phi, &target, eps).unwrap();
        let analytic = flatten_grad(&grad);
        let params = flatten(&model);
        let h = 1e-5;
        let mut max_rel = 0.0f64;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus[i] += h;
            let mut minus = params.clone();
            minus[i] -= h;
            let lp = {
                let m = unflatten(&model, &plus);
                let (out, _) = forward(&m, &phi).unwrap();
                smsle_loss(&out, &target, eps).unwrap()
            };
            let lm = {
                let m = unflatten(&model, &minus);
                let (out, _) = forward(&m, &phi).unwrap();
                smsle_loss(&out, &target, eps).unwrap()
            };
            let fd = (lp - lm) / (2.0 * h);
            let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max relative FD error {max_rel}");
    }

    #[test]
    fn zero_model_is_a_stationary_point_of_the_subgradient() {
        // An all-zero model produces phi_hat = 0 everywhere. With the
        // documented sign(0) = 0 subgradient convention on both |x| and
        // max(x, 0), the loss gradient at the kink is taken as 0, so every
        // parameter gradient is finite and exactly zero. Verified against
        // central finite differences, which agree because the loss is
        // locally symmetric around the all-zero prediction.
        let n = 48;
        let mut model = random_model(3, n, 14);
        for l in model.layers.iter_mut() {
            l.w_e = [0.0; 5];
            l.w_t = [0.0; 5];
        }
        model.output_filter = [0.0; 5];
        let phi = random_line(n, 15);
        let target = random_line(n, 16);
        let (grad, loss) = gradients(&model, &phi, &target, 1e-6).unwrap();
        assert!(loss.is_finite());
        assert!(flatten_grad(&grad).iter().all(|v| v.is_finite() && *v == 0.0));

        // Cutting every w_t path (and the early w_e filters) isolates the
        // flow: the last layer's w_e still receives gradient, deeper layers
        // get nothing because backprop into them multiplies the zero w_t.
        let mut model = random_model(3, n, 14);
        for l in model.layers.iter_mut() {
            l.w_t = [0.0; 5];
        }
        model.layers[0].w_e = [0.0; 5];
        model.layers[1].w_e = [0.0; 5];
        let (grad, _) = gradients(&model, &phi, &target, 1e-6).unwrap();
        assert!(grad.output_filter.iter().any(|&v| v != 0.0));
        let last = grad.layers.last().unwrap();
        assert!(last.w_e.iter().any(|&v| v != 0.0), "w_e path of layer K-1");
        for k in 0..2 {
            assert!(grad.layers[k].w_e.iter().all(|&v| v == 0.0));
            assert!(grad.layers[k].w_t.iter().all(|&v| v == 0.0));
            assert_eq!(grad.layers[k].rho, 0.0);
        }
    }

    #[test]
    fn duplicated_sample_doubles_summed_gradient() {
        let n = 32;
        let model = random_model(2, n, 17);
        let phi = random_line(n, 18);
        let target = random_line(n, 19);
        let (g1, _) = gradients(&model, &phi, &target, 1e-6).unwrap();
        let mut doubled = ModelGrad::zeros(2);
        doubled.add(&g1);
        doubled.add(&g1);
        let mut summed = ModelGrad::zeros(2);
        for _ in 0..2 {
            let (g, _) = gradients(&model, &phi, &target, 1e-6).unwrap();
            summed.add(&g);
        }
        for (a, b) in flatten_grad(&doubled).iter().zip(flatten_grad(&summed).iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn parameter_count_formula() {
        let model = random_model(30, 1920, 0);
        assert_eq!(model.parameter_count(), 30 * 11 + 5);
        assert_eq!(model.parameter_count(), 335);
    }

    #[test]
    fn lambda_stays_non_negative() {
        for rho in [-50.0, -3.0, 0.0, 2.0, 40.0] {
            assert!(softplus(rho) >= 0.0);
        }
    }

    #[test]
    fn training_overfits_single_pair() {
        let n = 128;
        // target: two pulse-like bumps; input: its blurred, noisy version
        let target: Vec<f64> = (0..n)
            .map(|i| {
                let a = (-((i as f64 - 40.0) / 6.0).powi(2)).exp()
                    * (0.5 * i as f64).sin();
                let b = 0.6 * (-((i as f64 - 90.0) / 5.0).powi(2)).exp() * (0.45 * i as f64).cos();
                a + b
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let input: Vec<f64> = target
            .iter()
            .map(|v| 0.8 * v + 0.1 * (rng.gen::<f64>() - 0.5))
            .collect();
        let model0 = random_model(6, n, 3);
        let config = TrainConfig {
            epochs_max: 500,
            batch_size: 1,
            seed: 5,
            ..TrainConfig::default()
        };
        let outcome = train(&[(input, target)], &model0, &config).unwrap();
        let first = outcome.loss_history[0];
        let last = *outcome.loss_history.last().unwrap();
        assert!(
            last <= 0.1 * first,
            "loss went {first} -> {last}, less than 90% decrease"
        );
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let n = 64;
        let data: Vec<(Vec<f64>, Vec<f64>)> = (0..6)
            .map(|i| (random_line(n, 100 + i), random_line(n, 200 + i)))
            .collect();
        let model0 = random_model(3, n, 9);
        let config = TrainConfig {
            epochs_max: 5,
            batch_size: 2,
            seed: 77,
            ..TrainConfig::default()
        };
        let a = train(&data, &model0, &config).unwrap();
        let b = train(&data, &model0, &config).unwrap();
        assert_eq!(flatten(&a.model), flatten(&b.model));
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn train_rejects_empty_dataset() {
        let model0 = random_model(2, 32, 1);
        assert!(train(&[], &model0, &TrainConfig::default()).is_err());
    }

    #[test]
    fn inference_is_pure() {
        let model = random_model(4, 80, 21);
        let phi = random_line(80, 22);
        let (a, _) = forward(&model, &phi).unwrap();
        let (b, _) = forward(&model, &phi).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_file_round_trip() {
        let model = random_model(5, 96, 33);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lista");
        save_model(&model, &path, "abc123").unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(flatten(&model), flatten(&loaded));
        assert_eq!(loaded.input_len, 96);

        // wrong input length at inference is an explicit shape error
        let err = forward(&loaded, &random_line(64, 1)).unwrap_err();
        assert!(err.to_string().contains("shape") || err.to_string().contains("N ="));

        // truncated file must not yield a partial model
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 11);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_model(&path).is_err());

        // corrupt magic
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_model(&path).is_err());
    }
}
