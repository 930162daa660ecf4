//! Time-domain delay-and-sum beamforming.
//!
//! Dynamic receive focusing: the delay is recomputed for every output
//! sample, and fractional delays are read from the recorded traces with an
//! 8-tap windowed-sinc interpolator.

use crate::error::{Error, Result};
use crate::fft;
use crate::geometry::ArrayGeometry;
use crate::sim::ChannelFrame;
use ndarray::Array2;

/// One beamformed RF line.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamLine {
    pub theta_rad: f64,
    pub samples: Vec<f64>,
    pub fs_hz: f64,
}

impl BeamLine {
    pub fn new(theta_rad: f64, samples: Vec<f64>, fs_hz: f64) -> BeamLine {
        BeamLine {
            theta_rad,
            samples,
            fs_hz,
        }
    }
}

/// Dynamic-focusing delay: the time at which the echo that a beam sample at
/// time `t` (direction `theta`) represents arrives at an element offset
/// `delta_m` meters from the reference.
///
/// tau = (t + sqrt(t^2 - 4 (d/c) t sin(theta) + 4 (d/c)^2)) / 2.
pub fn delay_tau(t: f64, theta: f64, delta_m: f64, c: f64) -> f64 {
    let dc = delta_m / c;
    let disc = t * t - 4.0 * dc * t * theta.sin() + 4.0 * dc * dc;
    // The discriminant is non-negative for physical inputs; clamp the tiny
    // negatives produced by rounding.
    0.5 * (t + disc.max(0.0).sqrt())
}

const SINC_HALF_TAPS: i64 = 4; // 8-tap kernel

/// Windowed-sinc read of `trace` at fractional sample position `pos`.
/// Positions outside the recording contribute zero.
pub fn interp_sinc8(trace: &[f64], pos: f64) -> f64 {
    if !pos.is_finite() {
        return 0.0;
    }
    let n = trace.len() as i64;
    let base = pos.floor() as i64;
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for j in (base - SINC_HALF_TAPS + 1)..=(base + SINC_HALF_TAPS) {
        let x = pos - j as f64;
        // Hann window over the 8-tap span
        let w = 0.5 * (1.0 + (std::f64::consts::PI * x / SINC_HALF_TAPS as f64).cos());
        let s = if x == 0.0 {
            1.0
        } else {
            let px = std::f64::consts::PI * x;
            px.sin() / px
        };
        let tap = s * w;
        wsum += tap;
        if j >= 0 && j < n {
            acc += tap * trace[j as usize];
        }
    }
    if wsum.abs() > 1e-12 {
        acc / wsum
    } else {
        0.0
    }
}

/// Per-element dynamically delayed traces phi_hat_m(p) for the selected
/// aperture, sampled on an `oversample`-times denser output grid.
pub fn delayed_channels(
    frame: &ChannelFrame,
    array: &ArrayGeometry,
    oversample: usize,
) -> Result<Array2<f64>> {
    if array.element_count() == 0 {
        return Err(Error::invalid("empty array"));
    }
    array.require_within(frame.config.element_count)?;
    let n_out = frame.config.samples_per_line * oversample;
    let fs_out = frame.config.fs_hz * oversample as f64;
    let fs_in = frame.config.fs_hz;
    let c = frame.config.c_mps;
    let theta = frame.theta_rad;

    let rows: Vec<Vec<f64>> = crate::par_map_ordered(array.positions(), |&pos| {
        let delta = frame.config.element_x_m(pos);
        let trace: Vec<f64> = frame.traces.row(pos).to_vec();
        (0..n_out)
            .map(|p| {
                let t = p as f64 / fs_out;
                let tau = delay_tau(t, theta, delta, c);
                interp_sinc8(&trace, tau * fs_in)
            })
            .collect()
    });

    let mut out = Array2::zeros((array.element_count(), n_out));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Delay-and-sum: average the dynamically delayed traces of every element.
pub fn das_line(frame: &ChannelFrame) -> BeamLine {
    let all = ArrayGeometry::ula(frame.config.element_count, frame.config.pitch_m)
        .expect("config has >= 1 element");
    let delayed = delayed_channels(frame, &all, 1).expect("full aperture is valid");
    let m = delayed.nrows() as f64;
    let samples = (0..delayed.ncols())
        .map(|p| delayed.column(p).sum() / m)
        .collect();
    BeamLine::new(frame.theta_rad, samples, frame.config.fs_hz)
}

/// DAS restricted to a sparse aperture (still averaging over its elements).
pub fn das_line_sparse(frame: &ChannelFrame, array: &ArrayGeometry) -> Result<BeamLine> {
    let delayed = delayed_channels(frame, array, 1)?;
    let m = delayed.nrows() as f64;
    let samples = (0..delayed.ncols())
        .map(|p| delayed.column(p).sum() / m)
        .collect();
    Ok(BeamLine::new(frame.theta_rad, samples, frame.config.fs_hz))
}

/// Envelope detection followed by normalized log compression into [0, 1].
///
/// The envelope is the analytic-signal magnitude; the output is
/// 1 + 20 log10(env / max) / dynamic_range_db, clipped to [0, 1].
/// An all-zero line maps to all zeros.
pub fn envelope_log(line: &BeamLine, dynamic_range_db: f64) -> Result<Vec<f64>> {
    if !(dynamic_range_db > 0.0) {
        return Err(Error::invalid("dynamic range must be positive"));
    }
    Ok(envelope_log_samples(&line.samples, dynamic_range_db))
}

/// `envelope_log` on a bare sample vector.
pub fn envelope_log_samples(samples: &[f64], dynamic_range_db: f64) -> Vec<f64> {
    let env = fft::envelope(samples);
    let max = env.iter().fold(0.0f64, |m, &v| m.max(v));
    if max <= 0.0 {
        return vec![0.0; samples.len()];
    }
    env.iter()
        .map(|&v| {
            if v <= 0.0 {
                0.0
            } else {
                (1.0 + 20.0 * (v / max).log10() / dynamic_range_db).clamp(0.0, 1.0)
            }
        })
        .collect()
}
