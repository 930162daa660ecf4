//! Thin FFT helpers shared across modules.
//!
//! Plans are cached per thread and per length; all transforms use the
//! unnormalized rustfft kernels with normalization applied explicitly at
//! the call sites that need it.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<PlanCache> = RefCell::new(PlanCache::default());
}

#[derive(Default)]
struct PlanCache {
    planner: Option<FftPlanner<f64>>,
    forward: HashMap<usize, Arc<dyn rustfft::Fft<f64>>>,
    inverse: HashMap<usize, Arc<dyn rustfft::Fft<f64>>>,
}

fn with_plan(len: usize, inverse: bool, buf: &mut [Complex64]) {
    PLANS.with(|cell| {
        let mut cache = cell.borrow_mut();
        let planner = cache.planner.get_or_insert_with(FftPlanner::new);
        let plan = if inverse {
            planner.plan_fft_inverse(len)
        } else {
            planner.plan_fft_forward(len)
        };
        let map = if inverse {
            &mut cache.inverse
        } else {
            &mut cache.forward
        };
        let plan = map.entry(len).or_insert(plan).clone();
        drop(cache);
        plan.process(buf);
    });
}

/// In-place unnormalized forward DFT.
pub fn fft_inplace(buf: &mut [Complex64]) {
    let len = buf.len();
    with_plan(len, false, buf);
}

/// In-place inverse DFT, normalized by 1/N (round trip is the identity).
pub fn ifft_inplace(buf: &mut [Complex64]) {
    let len = buf.len();
    with_plan(len, true, buf);
    let scale = 1.0 / len as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Unnormalized DFT of a real signal.
pub fn fft_real(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_inplace(&mut buf);
    buf
}

/// Discrete analytic signal: zero negative frequencies, double positives.
pub fn analytic(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut spec = fft_real(x);
    let half = n / 2;
    if n % 2 == 0 {
        for v in spec.iter_mut().take(half).skip(1) {
            *v *= 2.0;
        }
        // bins 0 and n/2 stay as-is
        for v in spec.iter_mut().skip(half + 1) {
            *v = Complex64::new(0.0, 0.0);
        }
    } else {
        for v in spec.iter_mut().take(half + 1).skip(1) {
            *v *= 2.0;
        }
        for v in spec.iter_mut().skip(half + 1) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    ifft_inplace(&mut spec);
    spec
}

/// Magnitude of the analytic signal.
pub fn envelope(x: &[f64]) -> Vec<f64> {
    analytic(x).iter().map(|v| v.norm()).collect()
}

/// Linear autoconvolution of a complex sequence via zero-padded FFT.
pub fn autoconvolve(x: &[Complex64]) -> Vec<Complex64> {
    if x.is_empty() {
        return Vec::new();
    }
    let out_len = 2 * x.len() - 1;
    let fft_len = out_len.next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
    buf[..x.len()].copy_from_slice(x);
    fft_inplace(&mut buf);
    for v in buf.iter_mut() {
        *v = *v * *v;
    }
    ifft_inplace(&mut buf);
    buf.truncate(out_len);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fft_round_trip() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_inplace(&mut buf);
        ifft_inplace(&mut buf);
        for (a, b) in x.iter().zip(buf.iter()) {
            assert_abs_diff_eq!(*a, b.re, epsilon = 1e-12);
            assert_abs_diff_eq!(0.0, b.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn envelope_of_tone_is_flat() {
        let n = 512;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 40.0 * i as f64 / n as f64).cos())
            .collect();
        let env = envelope(&x);
        for &e in &env[32..n - 32] {
            assert!((e - 1.0).abs() < 0.01, "envelope {e} deviates from 1");
        }
    }

    #[test]
    fn autoconvolve_matches_direct() {
        let x: Vec<Complex64> = (0..9)
            .map(|i| Complex64::new(i as f64 * 0.3 - 1.0, (i as f64 * 0.11).cos()))
            .collect();
        let fast = autoconvolve(&x);
        let mut slow = vec![Complex64::new(0.0, 0.0); 2 * x.len() - 1];
        for i in 0..x.len() {
            for j in 0..x.len() {
                slow[i + j] += x[i] * x[j];
            }
        }
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).norm() < 1e-10);
        }
    }
}
