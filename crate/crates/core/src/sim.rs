//! Synthetic pulse and point-scatterer phantom generator.
//!
//! Produces per-element RF channel data at the full rate `fs`, using a
//! single diverging transmit wave referenced at the aperture center. The
//! pulse has a closed form, so echoes are placed at continuous (sub-sample)
//! arrival times without quantization bias.

use crate::error::{Error, Result};
use crate::fft;
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::sync::Arc;

/// Closed-form transmit pulse kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PulseKernel {
    /// cos(2 pi f0 t) * exp(-t^2 / (2 sigma^2))
    GaussianCosine { f0: f64, sigma_t: f64 },
    /// The square of the above; the effective pulse of convolutional
    /// beamforming, centered at 2 f0.
    SquaredGaussianCosine { f0: f64, sigma_t: f64 },
}

impl PulseKernel {
    fn eval(&self, t: f64) -> f64 {
        match *self {
            PulseKernel::GaussianCosine { f0, sigma_t } => {
                (2.0 * std::f64::consts::PI * f0 * t).cos() * (-t * t / (2.0 * sigma_t * sigma_t)).exp()
            }
            PulseKernel::SquaredGaussianCosine { f0, sigma_t } => {
                let h = PulseKernel::GaussianCosine { f0, sigma_t }.eval(t);
                h * h
            }
        }
    }

    fn half_width(&self) -> f64 {
        match *self {
            PulseKernel::GaussianCosine { sigma_t, .. } => 4.0 * sigma_t,
            PulseKernel::SquaredGaussianCosine { sigma_t, .. } => 4.0 * sigma_t,
        }
    }
}

/// A transmit pulse: closed-form kernel plus its sampled realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Pulse {
    pub center_freq_hz: f64,
    pub fractional_bandwidth: f64,
    pub fs_hz: f64,
    /// Odd-length samples with the peak at the center index.
    pub samples: Vec<f64>,
    kernel: PulseKernel,
}

impl Pulse {
    fn from_kernel(kernel: PulseKernel, center_freq_hz: f64, bw: f64, fs_hz: f64) -> Pulse {
        let half = (kernel.half_width() * fs_hz).ceil() as usize;
        let samples = (0..2 * half + 1)
            .map(|i| kernel.eval((i as f64 - half as f64) / fs_hz))
            .collect();
        Pulse {
            center_freq_hz,
            fractional_bandwidth: bw,
            fs_hz,
            samples,
            kernel,
        }
    }

    /// Evaluate the continuous pulse at time `t` (seconds from the peak).
    pub fn eval(&self, t: f64) -> f64 {
        self.kernel.eval(t)
    }

    /// Half the support, in seconds; `eval` is negligible beyond it.
    pub fn half_width_s(&self) -> f64 {
        self.kernel.half_width()
    }

    pub fn center_index(&self) -> usize {
        self.samples.len() / 2
    }

    /// Fourier-series spectrum of the pulse on an `n`-sample grid: the DFT
    /// of the peak-at-origin (circularly wrapped) placement, scaled by 1/n.
    /// This matches the coefficient convention of `fdbf::fourier_coeffs`, so
    /// a spike convolved with the pulse has coefficients H[k] e^{-j2pi k s/n}.
    pub fn series_spectrum(&self, n: usize) -> Result<Vec<Complex64>> {
        if self.samples.len() > n {
            return Err(Error::invalid(format!(
                "pulse of {} samples does not fit a grid of {}",
                self.samples.len(),
                n
            )));
        }
        let half = self.center_index();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (i, &s) in self.samples.iter().enumerate() {
            let idx = (i + n - half) % n;
            buf[idx] += Complex64::new(s, 0.0);
        }
        fft::fft_inplace(&mut buf);
        let scale = 1.0 / n as f64;
        Ok(buf.into_iter().map(|v| v * scale).collect())
    }

    /// The squared pulse sampled at `fs_hz` (normally an oversampled rate,
    /// since squaring doubles the bandwidth).
    pub fn squared(&self, fs_hz: f64) -> Pulse {
        let (f0, sigma_t) = match self.kernel {
            PulseKernel::GaussianCosine { f0, sigma_t } => (f0, sigma_t),
            PulseKernel::SquaredGaussianCosine { f0, sigma_t } => (f0, sigma_t),
        };
        Pulse::from_kernel(
            PulseKernel::SquaredGaussianCosine { f0, sigma_t },
            2.0 * self.center_freq_hz,
            self.fractional_bandwidth,
            fs_hz,
        )
    }
}

/// Gaussian-windowed cosine pulse. The -6 dB spectral full width equals
/// `fractional_bandwidth * center_freq_hz`.
pub fn gaussian_pulse(center_freq_hz: f64, fractional_bandwidth: f64, fs_hz: f64) -> Result<Pulse> {
    if !(center_freq_hz > 0.0) || center_freq_hz >= fs_hz / 2.0 {
        return Err(Error::invalid(format!(
            "center frequency {center_freq_hz} Hz must lie in (0, fs/2) for fs = {fs_hz} Hz"
        )));
    }
    if !(fractional_bandwidth > 0.0 && fractional_bandwidth <= 1.0) {
        return Err(Error::invalid(format!(
            "fractional bandwidth {fractional_bandwidth} must be in (0, 1]"
        )));
    }
    let two_sqrt_2ln2 = 2.0 * (2.0f64.ln() * 2.0).sqrt();
    let sigma_f = fractional_bandwidth * center_freq_hz / two_sqrt_2ln2;
    let sigma_t = 1.0 / (2.0 * std::f64::consts::PI * sigma_f);
    Ok(Pulse::from_kernel(
        PulseKernel::GaussianCosine {
            f0: center_freq_hz,
            sigma_t,
        },
        center_freq_hz,
        fractional_bandwidth,
        fs_hz,
    ))
}

/// One point reflector at (x, z) with a signed amplitude.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scatterer {
    pub x_m: f64,
    pub z_m: f64,
    pub amplitude: f64,
}

/// Disk region altering scatterer density/amplitude, used for contrast tests.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CystRegion {
    pub x_m: f64,
    pub z_m: f64,
    pub radius_m: f64,
    /// Probability that a scatterer inside the region is kept (0 = anechoic).
    pub density_scale: f64,
    pub amplitude_scale: f64,
}

impl CystRegion {
    pub fn contains(&self, x: f64, z: f64) -> bool {
        let dx = x - self.x_m;
        let dz = z - self.z_m;
        dx * dx + dz * dz <= self.radius_m * self.radius_m
    }
}

/// Scatterer collection plus the cyst regions it was built with.
#[derive(Debug, Clone, Default)]
pub struct Phantom {
    pub scatterers: Vec<Scatterer>,
    pub cysts: Vec<CystRegion>,
}

impl Phantom {
    pub fn from_scatterers(scatterers: Vec<Scatterer>) -> Result<Phantom> {
        let ph = Phantom {
            scatterers,
            cysts: Vec::new(),
        };
        ph.validate()?;
        Ok(ph)
    }

    fn validate(&self) -> Result<()> {
        for s in &self.scatterers {
            if !(s.z_m > 0.0) {
                return Err(Error::invalid(format!(
                    "scatterer depth must be positive, got z = {}",
                    s.z_m
                )));
            }
            if !s.amplitude.is_finite() || !s.x_m.is_finite() {
                return Err(Error::invalid("scatterer fields must be finite"));
            }
        }
        Ok(())
    }

    /// Add `count` diffuse scatterers with N(0, amplitude_std) amplitudes,
    /// uniform over the rectangle; deterministic under `seed`.
    pub fn add_speckle(
        &mut self,
        x_range: (f64, f64),
        z_range: (f64, f64),
        count: usize,
        amplitude_std: f64,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, amplitude_std).expect("valid std");
        for _ in 0..count {
            let x = rng.gen_range(x_range.0..x_range.1);
            let z = rng.gen_range(z_range.0.max(1e-6)..z_range.1);
            let amplitude = normal.sample(&mut rng);
            self.scatterers.push(Scatterer {
                x_m: x,
                z_m: z,
                amplitude,
            });
        }
    }

    /// Apply a cyst region: thin scatterers inside it to `density_scale`
    /// (seeded decision) and scale surviving amplitudes.
    pub fn add_cyst(&mut self, cyst: CystRegion, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.scatterers.retain_mut(|s| {
            if !cyst.contains(s.x_m, s.z_m) {
                return true;
            }
            let keep: f64 = rng.gen();
            if keep >= cyst.density_scale {
                return false;
            }
            s.amplitude *= cyst.amplitude_scale;
            true
        });
        self.cysts.push(cyst);
    }

    /// Parse the line-oriented phantom description format:
    ///
    /// ```text
    /// # comment
    /// scatterer <x_m> <z_m> <amplitude>
    /// speckle <x_min> <x_max> <z_min> <z_max> <count> <amplitude_std> <seed>
    /// cyst <x_m> <z_m> <radius_m> <density_scale> <amplitude_scale> <seed>
    /// ```
    ///
    /// Directives are applied in file order; cysts affect only scatterers
    /// already defined above them.
    pub fn parse(text: &str) -> Result<Phantom> {
        let mut phantom = Phantom::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let keyword = parts.next().unwrap();
            let fields: Vec<&str> = parts.collect();
            let parse_f = |idx: usize| -> Result<f64> {
                fields
                    .get(idx)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::format(
                            "phantom",
                            format!("line {}: bad or missing field {}", lineno + 1, idx + 1),
                        )
                    })
            };
            match keyword {
                "scatterer" => {
                    if fields.len() != 3 {
                        return Err(Error::format(
                            "phantom",
                            format!("line {}: scatterer takes 3 fields", lineno + 1),
                        ));
                    }
                    phantom.scatterers.push(Scatterer {
                        x_m: parse_f(0)?,
                        z_m: parse_f(1)?,
                        amplitude: parse_f(2)?,
                    });
                }
                "speckle" => {
                    if fields.len() != 7 {
                        return Err(Error::format(
                            "phantom",
                            format!("line {}: speckle takes 7 fields", lineno + 1),
                        ));
                    }
                    phantom.add_speckle(
                        (parse_f(0)?, parse_f(1)?),
                        (parse_f(2)?, parse_f(3)?),
                        parse_f(4)? as usize,
                        parse_f(5)?,
                        parse_f(6)? as u64,
                    );
                }
                "cyst" => {
                    if fields.len() != 6 {
                        return Err(Error::format(
                            "phantom",
                            format!("line {}: cyst takes 6 fields", lineno + 1),
                        ));
                    }
                    let cyst = CystRegion {
                        x_m: parse_f(0)?,
                        z_m: parse_f(1)?,
                        radius_m: parse_f(2)?,
                        density_scale: parse_f(3)?,
                        amplitude_scale: parse_f(4)?,
                    };
                    phantom.add_cyst(cyst, parse_f(5)? as u64);
                }
                other => {
                    return Err(Error::format(
                        "phantom",
                        format!("line {}: unknown directive '{other}'", lineno + 1),
                    ));
                }
            }
        }
        phantom.validate()?;
        Ok(phantom)
    }
}

/// Geometry and sampling of one acquisition.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ImagingConfig {
    pub element_count: usize,
    pub pitch_m: f64,
    pub fs_hz: f64,
    pub c_mps: f64,
    pub samples_per_line: usize,
    pub angles_rad: Vec<f64>,
}

impl ImagingConfig {
    pub fn new(
        element_count: usize,
        pitch_m: f64,
        fs_hz: f64,
        c_mps: f64,
        samples_per_line: usize,
        angles_rad: Vec<f64>,
    ) -> Result<ImagingConfig> {
        if element_count == 0 {
            return Err(Error::invalid("element_count must be >= 1"));
        }
        if !(c_mps > 0.0) || !(fs_hz > 0.0) || !(pitch_m > 0.0) {
            return Err(Error::invalid("c, fs and pitch must be positive"));
        }
        if samples_per_line == 0 || angles_rad.is_empty() {
            return Err(Error::invalid("need at least one sample and one angle"));
        }
        Ok(ImagingConfig {
            element_count,
            pitch_m,
            fs_hz,
            c_mps,
            samples_per_line,
            angles_rad,
        })
    }

    /// Recording duration T = N / fs.
    pub fn depth_time_s(&self) -> f64 {
        self.samples_per_line as f64 / self.fs_hz
    }

    /// Maximum one-way depth c*T/2 that fits in the recording.
    pub fn max_depth_m(&self) -> f64 {
        self.c_mps * self.depth_time_s() / 2.0
    }

    /// Signed x-coordinate of a grid position; the transmit reference (and
    /// image origin) is the center of the full aperture.
    pub fn element_x_m(&self, grid_pos: usize) -> f64 {
        (grid_pos as f64 - (self.element_count as f64 - 1.0) / 2.0) * self.pitch_m
    }
}

/// Per-element RF traces for one insonified direction.
#[derive(Debug, Clone)]
pub struct ChannelFrame {
    pub theta_rad: f64,
    /// element-major [M, N] matrix of RF samples at fs.
    pub traces: Arc<Array2<f64>>,
    pub config: ImagingConfig,
}

impl ChannelFrame {
    /// Same traces tagged with a different beam direction. The diverging
    /// transmit model makes traces direction-independent, so frames for all
    /// angles share one simulation.
    pub fn with_theta(&self, theta_rad: f64) -> ChannelFrame {
        ChannelFrame {
            theta_rad,
            traces: Arc::clone(&self.traces),
            config: self.config.clone(),
        }
    }
}

/// Two-way arrival time of a scatterer at an element: diverging-wave
/// transmit from the origin plus the return path to the element.
pub fn arrival_time_s(config: &ImagingConfig, s: &Scatterer, grid_pos: usize) -> f64 {
    let xe = config.element_x_m(grid_pos);
    let r_tx = (s.x_m * s.x_m + s.z_m * s.z_m).sqrt();
    let dx = s.x_m - xe;
    let r_rx = (dx * dx + s.z_m * s.z_m).sqrt();
    (r_tx + r_rx) / config.c_mps
}

/// Simulate the RF traces for one direction. Scatterers deeper than
/// c*T/2 are skipped; the second return value counts them.
pub fn simulate_channels(
    phantom: &Phantom,
    config: &ImagingConfig,
    pulse: &Pulse,
    theta_rad: f64,
) -> (ChannelFrame, usize) {
    let m = config.element_count;
    let n = config.samples_per_line;
    let fs = config.fs_hz;
    let half_w = pulse.half_width_s();
    let max_depth = config.max_depth_m();

    let mut excluded = 0usize;
    let usable: Vec<&Scatterer> = phantom
        .scatterers
        .iter()
        .filter(|s| {
            let r = (s.x_m * s.x_m + s.z_m * s.z_m).sqrt();
            if r > max_depth {
                excluded += 1;
                false
            } else {
                true
            }
        })
        .collect();

    let rows: Vec<Vec<f64>> = crate::par_map_ordered(&(0..m).collect::<Vec<_>>(), |&elem| {
        let mut row = vec![0.0f64; n];
        for s in &usable {
            let t_arr = arrival_time_s(config, s, elem);
            let lo = ((t_arr - half_w) * fs).ceil().max(0.0) as usize;
            let hi = (((t_arr + half_w) * fs).floor() as usize).min(n.saturating_sub(1));
            for (i, slot) in row.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *slot += s.amplitude * pulse.eval(i as f64 / fs - t_arr);
            }
        }
        row
    });

    let mut traces = Array2::zeros((m, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            traces[(i, j)] = v;
        }
    }
    (
        ChannelFrame {
            theta_rad,
            traces: Arc::new(traces),
            config: config.clone(),
        },
        excluded,
    )
}

/// One shared simulation re-tagged for every configured angle.
pub fn simulate_all_angles(
    phantom: &Phantom,
    config: &ImagingConfig,
    pulse: &Pulse,
) -> (Vec<ChannelFrame>, usize) {
    let angles = config.angles_rad.clone();
    let (base, excluded) = simulate_channels(phantom, config, pulse, angles[0]);
    let frames = angles.iter().map(|&th| base.with_theta(th)).collect();
    (frames, excluded)
}

/// Add white Gaussian noise at the given empirical SNR. `f64::INFINITY`
/// leaves the frame untouched; identical seeds give identical output.
pub fn add_noise(frame: &ChannelFrame, snr_db: f64, seed: u64) -> Result<ChannelFrame> {
    if snr_db.is_nan() {
        return Err(Error::invalid("snr_db must not be NaN"));
    }
    if snr_db == f64::INFINITY {
        return Ok(frame.clone());
    }
    if snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid("snr_db must be finite or +inf"));
    }
    let n_total = frame.traces.len();
    let power: f64 = frame.traces.iter().map(|v| v * v).sum::<f64>() / n_total as f64;
    let sigma = (power * 10f64.powf(-snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut traces = (*frame.traces).clone();
    for v in traces.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(ChannelFrame {
        theta_rad: frame.theta_rad,
        traces: Arc::new(traces),
        config: frame.config.clone(),
    })
}
