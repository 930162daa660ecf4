//! FRI / compressed-sensing recovery machinery.
//!
//! The beamformed line is a sum of pulse replicas, so a grid-quantized
//! amplitude vector explains the measured Fourier coefficients through the
//! diagonal-times-DFT operator A = H D. The module provides that operator
//! (plus a time-domain convolution form and a dense-matrix form for
//! benchmarking), the band-limited return to the time domain, and the ISTA
//! baseline solver.

use crate::das::BeamLine;
use crate::error::{Error, Result};
use crate::fdbf::FourierLine;
use crate::fft;
use crate::sim::Pulse;
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Grid-quantized reflector amplitudes; one entry per fs sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub values: Vec<f64>,
    pub grid_step_s: f64,
}

/// A real-input linear measurement operator with explicit adjoint.
/// Complex measurements are flattened to interleaved (re, im) pairs so the
/// solver works in real arithmetic throughout.
pub trait MeasurementOp: Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn forward(&self, x: &[f64]) -> Vec<f64>;
    fn adjoint(&self, y: &[f64]) -> Vec<f64>;
}

/// The FRI measurement operator in one of its application modes.
pub enum FriOperator {
    /// A = H D: pulse spectrum on the selected harmonics times the
    /// harmonic-selecting DFT. Measurements are interleaved (re, im).
    Frequency {
        spectrum: Vec<Complex64>,
        mu: Vec<usize>,
        n: usize,
    },
    /// Time-domain convolution with the sampled pulse (the G matrix),
    /// same-length with truncated boundaries.
    Time {
        pulse: Vec<f64>,
        center: usize,
        n: usize,
    },
}

/// Build the frequency-mode operator for a pulse and harmonic set.
pub fn build_operator(pulse: &Pulse, mu: &[usize], n: usize) -> Result<FriOperator> {
    if let Some(&bad) = mu.iter().find(|&&k| k > n / 2) {
        return Err(Error::band(format!("harmonic {bad} beyond Nyquist {}", n / 2)));
    }
    let full = pulse.series_spectrum(n)?;
    let spectrum = mu.iter().map(|&k| full[k]).collect();
    Ok(FriOperator::Frequency {
        spectrum,
        mu: mu.to_vec(),
        n,
    })
}

/// Time-mode operator: convolution with the sampled pulse.
pub fn time_operator(pulse: &Pulse, n: usize) -> FriOperator {
    FriOperator::Time {
        pulse: pulse.samples.clone(),
        center: pulse.center_index(),
        n,
    }
}

impl MeasurementOp for FriOperator {
    fn input_len(&self) -> usize {
        match self {
            FriOperator::Frequency { n, .. } => *n,
            FriOperator::Time { n, .. } => *n,
        }
    }

    fn output_len(&self) -> usize {
        match self {
            FriOperator::Frequency { mu, .. } => 2 * mu.len(),
            FriOperator::Time { n, .. } => *n,
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        match self {
            FriOperator::Frequency { spectrum, mu, n } => {
                debug_assert_eq!(x.len(), *n);
                let spec = fft::fft_real(x);
                let mut out = Vec::with_capacity(2 * mu.len());
                for (h, &k) in spectrum.iter().zip(mu.iter()) {
                    let v = h * spec[k];
                    out.push(v.re);
                    out.push(v.im);
                }
                out
            }
            FriOperator::Time { pulse, center, n } => {
                let mut out = vec![0.0; *n];
                for (j, &xv) in x.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let lo = j.saturating_sub(*center);
                    let hi = (j + pulse.len() - center).min(*n);
                    for (t, slot) in out.iter_mut().enumerate().take(hi).skip(lo) {
                        *slot += xv * pulse[t + center - j];
                    }
                }
                out
            }
        }
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        match self {
            FriOperator::Frequency { spectrum, mu, n } => {
                let mut buf = vec![Complex64::new(0.0, 0.0); *n];
                for ((h, &k), pair) in spectrum.iter().zip(mu.iter()).zip(y.chunks_exact(2)) {
                    buf[k] = h.conj() * Complex64::new(pair[0], pair[1]);
                }
                fft::ifft_inplace(&mut buf);
                let scale = *n as f64;
                buf.into_iter().map(|v| v.re * scale).collect()
            }
            FriOperator::Time { pulse, center, n } => {
                let mut out = vec![0.0; *n];
                for (j, slot) in out.iter_mut().enumerate() {
                    let lo = j.saturating_sub(*center);
                    let hi = (j + pulse.len() - center).min(*n);
                    let mut acc = 0.0;
                    for t in lo..hi {
                        acc += y[t] * pulse[t + center - j];
                    }
                    *slot = acc;
                }
                out
            }
        }
    }
}

/// Explicit dense operator; used to realize the quadratic-cost baseline.
pub struct DenseOperator {
    pub matrix: Array2<f64>,
}

impl DenseOperator {
    /// Materialize any operator's matrix column by column.
    pub fn materialize(op: &dyn MeasurementOp) -> DenseOperator {
        let n = op.input_len();
        let m = op.output_len();
        let mut matrix = Array2::zeros((m, n));
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = op.forward(&e);
            for (i, v) in col.into_iter().enumerate() {
                matrix[(i, j)] = v;
            }
            e[j] = 0.0;
        }
        DenseOperator { matrix }
    }
}

impl MeasurementOp for DenseOperator {
    fn input_len(&self) -> usize {
        self.matrix.ncols()
    }

    fn output_len(&self) -> usize {
        self.matrix.nrows()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(x.iter()).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.matrix.ncols()];
        for (i, row) in self.matrix.rows().into_iter().enumerate() {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            for (slot, a) in out.iter_mut().zip(row.iter()) {
                *slot += yi * a;
            }
        }
        out
    }
}

/// Return a real line from a sparse set of non-negative harmonics: mirror
/// the conjugates onto the negative side, zero-pad and inverse transform.
///
/// `n_target` controls the output grid; it must satisfy
/// 2 * max(mu) <= n_target so the doubled-sided band is representable.
pub fn preprocess_to_time(line: &FourierLine, n_target: usize) -> Result<Vec<f64>> {
    if let Some(&max) = line.indices().last() {
        if 2 * max > n_target {
            return Err(Error::band(format!(
                "harmonic {max} needs a grid of at least {} samples, got {n_target}",
                2 * max
            )));
        }
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n_target];
    for (&k, &v) in line.indices().iter().zip(line.values().iter()) {
        if k == 0 {
            buf[0] = Complex64::new(v.re, 0.0);
        } else if 2 * k == n_target {
            // Nyquist bin of an even grid appears once and must be real
            buf[k] = Complex64::new(v.re, 0.0);
        } else {
            buf[k] = v;
            buf[n_target - k] = v.conj();
        }
    }
    fft::ifft_inplace(&mut buf);
    let scale = n_target as f64;
    Ok(buf.into_iter().map(|v| v.re * scale).collect())
}

/// Elementwise soft threshold sign(x) * max(|x| - lambda, 0).
pub fn soft_threshold(x: &[f64], lambda: f64) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            if v > lambda {
                v - lambda
            } else if v < -lambda {
                v + lambda
            } else {
                0.0
            }
        })
        .collect()
}

const POWER_ITER_SEED: u64 = 0x5eed_cafe;

/// Largest squared singular value of the operator, by 50 fixed-seed power
/// iterations on A^T A.
pub fn spectral_norm_sq(op: &dyn MeasurementOp) -> f64 {
    let n = op.input_len();
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITER_SEED);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let mut lambda = 0.0;
    for _ in 0..50 {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for v in x.iter_mut() {
            *v /= norm;
        }
        let y = op.adjoint(&op.forward(&x));
        lambda = y.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
        x = y;
    }
    lambda.abs()
}

/// Scale-relative default for the l1 weight: 0.05 * ||A^T y||_inf.
pub fn default_lambda(op: &dyn MeasurementOp, y: &[f64]) -> f64 {
    let corr = op.adjoint(y);
    0.05 * corr.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Result of an ISTA run: final code plus the per-iteration objective
/// 0.5 ||y - A x||^2 + lambda ||x||_1.
pub struct IstaResult {
    pub code: SparseCode,
    pub objectives: Vec<f64>,
}

/// Proximal-gradient iterations x <- S_{lambda mu}(x + mu A^T (y - A x)),
/// from x = 0.
pub fn ista_solve(
    y: &[f64],
    op: &dyn MeasurementOp,
    lambda: f64,
    mu_step: f64,
    iters: usize,
    grid_step_s: f64,
) -> Result<IstaResult> {
    if !(mu_step > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {mu_step}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    if y.len() != op.output_len() {
        return Err(Error::shape(format!(
            "measurement length {} vs operator output {}",
            y.len(),
            op.output_len()
        )));
    }
    let mut x = vec![0.0; op.input_len()];
    let mut objectives = Vec::with_capacity(iters);
    for _ in 0..iters {
        let ax = op.forward(&x);
        let residual: Vec<f64> = ax.iter().zip(y.iter()).map(|(a, b)| a - b).collect();
        let grad = op.adjoint(&residual);
        let stepped: Vec<f64> = x
            .iter()
            .zip(grad.iter())
            .map(|(xv, gv)| xv - mu_step * gv)
            .collect();
        x = soft_threshold(&stepped, lambda * mu_step);

        let ax = op.forward(&x);
        let data: f64 = ax
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 2.0;
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        objectives.push(data + lambda * l1);
    }
    Ok(IstaResult {
        code: SparseCode {
            values: x,
            grid_step_s,
        },
        objectives,
    })
}

/// Rebuild the RF line from a sparse code: truncated linear convolution of
/// the code with the sampled pulse.
pub fn reconstruct_line(code: &SparseCode, pulse: &Pulse, theta_rad: f64) -> BeamLine {
    let n = code.values.len();
    let op = time_operator(pulse, n);
    BeamLine::new(theta_rad, op.forward(&code.values), 1.0 / code.grid_step_s)
}

/// Up to `count` strongest entries of |x| that keep a pairwise separation
/// of at least `radius` samples, strongest first. Coherent operators smear
/// a reflector over neighboring grid slots; peak picking reads the support
/// off the smeared code.
pub fn pick_peaks(x: &[f64], count: usize, radius: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
    order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()));
    let mut picked: Vec<usize> = Vec::with_capacity(count);
    for i in order {
        if picked.len() == count {
            break;
        }
        if picked.iter().all(|&p| p.abs_diff(i) > radius) {
            picked.push(i);
        }
    }
    picked
}

/// Least-squares amplitudes on a fixed support: solve the normal equations
/// of min_a ||y - A_S a|| over the support columns.
pub fn debias_on_support(
    op: &dyn MeasurementOp,
    y: &[f64],
    support: &[usize],
) -> Result<Vec<f64>> {
    let s = support.len();
    if s == 0 {
        return Err(Error::invalid("empty support"));
    }
    let n = op.input_len();
    let mut cols = Vec::with_capacity(s);
    let mut e = vec![0.0; n];
    for &idx in support {
        if idx >= n {
            return Err(Error::shape(format!("support index {idx} out of range")));
        }
        e[idx] = 1.0;
        cols.push(op.forward(&e));
        e[idx] = 0.0;
    }
    // Gram matrix and right-hand side
    let mut aug = vec![vec![0.0f64; s + 1]; s];
    for i in 0..s {
        for j in 0..s {
            aug[i][j] = cols[i].iter().zip(cols[j].iter()).map(|(a, b)| a * b).sum();
        }
        aug[i][s] = cols[i].iter().zip(y.iter()).map(|(a, b)| a * b).sum();
    }
    // Gaussian elimination with partial pivoting on the small system
    for col in 0..s {
        let pivot = (col..s)
            .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
            .unwrap();
        if aug[pivot][col].abs() < 1e-14 {
            return Err(Error::invalid("support columns are numerically dependent"));
        }
        aug.swap(col, pivot);
        for row in 0..s {
            if row == col {
                continue;
            }
            let f = aug[row][col] / aug[col][col];
            for k in col..=s {
                aug[row][k] -= f * aug[col][k];
            }
        }
    }
    Ok((0..s).map(|i| aug[i][s] / aug[i][i]).collect())
}

// temporary probe — appended as a test module
#[cfg(test)]
mod train_probe {
    use crate::lista::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probe() {
        let n = 128;
        let mut target: Vec<f64> = (0..n)
            .map(|i| {
                let a = (-((i as f64 - 40.0) / 6.0).powi(2)).exp() * (0.5 * i as f64).sin();
                let b = 0.6 * (-((i as f64 - 90.0) / 5.0).powi(2)).exp() * (0.45 * i as f64).cos();
                a + b
            })
            .collect();
        for v in target.iter_mut() {
            if v.abs() < 0.02 { *v = 0.0; }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let clean: Vec<f64> = target.iter().map(|v| 0.7 * v).collect();
        let noisy: Vec<f64> = target.iter().map(|v| 0.7 * v * (1.0 + 0.2 * (rng.gen::<f64>() - 0.5))).collect();
        for (name, input) in [("clean", clean), ("noisy", noisy)] {
            for (lr, patience, epochs) in [(3e-3, 50usize, 1500usize), (1e-2, 50, 1500)] {
                let model0 = ListaModel::init(6, n, 3).unwrap();
                let config = TrainConfig { epochs_max: epochs, batch_size: 1, seed: 5, lr_init: lr, plateau_patience: patience, ..TrainConfig::default() };
                let out = train(&[(input.clone(), target.clone())], &model0, &config).unwrap();
                let h = &out.loss_history;
                println!("{name} lr={lr}: start={:.3} e250={:.3} e500={:.4} e1000={:.4} end={:.4} ratio={:.4}",
                    h[0], h[249], h[499], h[999], h[epochs-1], h[epochs-1]/h[0]);
            }
        }
    }
}
