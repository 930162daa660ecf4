//! Convolutional beamforming: time-domain COBA on sparse arrays and its
//! compressed frequency-domain form (CFCOBA).
//!
//! COBA replaces the DAS average with a lateral autoconvolution of
//! phase-preserving square-rooted channels, which realizes the beampattern
//! of the array's sum co-array. CFCOBA performs the equivalent product in
//! the frequency domain: a two-dimensional (temporal x spatial)
//! autoconvolution of the per-channel delayed Fourier coefficients. Squaring
//! doubles the band, so CFCOBA outputs live on a grid twice as dense as the
//! channel data.

use crate::das;
use crate::error::{Error, Result};
use crate::fdbf::{delay_channel_coeffs, DistortionTable, FourierLine};
use crate::fft;
use crate::geometry::{sum_coarray, ArrayGeometry};
use crate::sim::ChannelFrame;
use ndarray::Array2;
use num_complex::Complex64;

/// Channels after the order-preserving square root of Eq-style COBA
/// normalization: u = e^{j arg(phi)} sqrt(|phi|).
#[derive(Debug, Clone)]
pub struct NormalizedChannels {
    pub theta_rad: f64,
    pub u: Array2<Complex64>,
    pub positions: Vec<usize>,
}

/// Phase-preserving magnitude square root, elementwise. Zero maps to zero;
/// for real negatives the phase convention e^{j pi} keeps the result real
/// and negative.
pub fn normalize_u(delayed: &Array2<Complex64>) -> Array2<Complex64> {
    delayed.mapv(|v| {
        let mag = v.norm();
        if mag == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar(mag.sqrt(), v.arg())
        }
    })
}

/// Time-domain convolutional beamforming of one frame over a (possibly
/// sparse) aperture.
///
/// Channels are dynamically delayed, normalized, laterally autoconvolved on
/// the position grid, and the convolution outputs are summed; the real part
/// of the per-sample total is returned.
pub fn coba_line(frame: &ChannelFrame, array: &ArrayGeometry) -> Result<das::BeamLine> {
    let delayed_real = das::delayed_channels(frame, array, 1)?;
    let delayed = delayed_real.mapv(|v| Complex64::new(v, 0.0));
    let channels = NormalizedChannels {
        theta_rad: frame.theta_rad,
        u: normalize_u(&delayed),
        positions: array.positions().to_vec(),
    };

    let max_pos = *channels.positions.last().unwrap();
    let n = channels.u.ncols();
    let samples: Vec<f64> = (0..n)
        .map(|p| {
            // lateral autoconvolution s_n = sum_{i+j=n} u_i u_j on the
            // position grid, then the total over n
            let mut s = vec![Complex64::new(0.0, 0.0); 2 * max_pos + 1];
            for (a_idx, &pa) in channels.positions.iter().enumerate() {
                let ua = channels.u[(a_idx, p)];
                for (b_idx, &pb) in channels.positions.iter().enumerate() {
                    s[pa + pb] += ua * channels.u[(b_idx, p)];
                }
            }
            s.iter().sum::<Complex64>().re
        })
        .collect();
    Ok(das::BeamLine::new(
        frame.theta_rad,
        samples,
        frame.config.fs_hz,
    ))
}

/// Two-dimensional autoconvolution of a positions-by-harmonics coefficient
/// grid via padded FFTs.
fn autoconvolve_2d(grid: &Array2<Complex64>) -> Array2<Complex64> {
    let (rows, cols) = grid.dim();
    let out_rows = 2 * rows - 1;
    let out_cols = 2 * cols - 1;
    let rr = out_rows.next_power_of_two();
    let cc = out_cols.next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); rr * cc];
    for r in 0..rows {
        for c in 0..cols {
            buf[r * cc + c] = grid[(r, c)];
        }
    }
    for r in 0..rr {
        fft::fft_inplace(&mut buf[r * cc..(r + 1) * cc]);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); rr];
    for c in 0..cc {
        for r in 0..rr {
            col[r] = buf[r * cc + c];
        }
        fft::fft_inplace(&mut col);
        for r in 0..rr {
            buf[r * cc + c] = col[r] * col[r];
        }
    }
    for c in 0..cc {
        for r in 0..rr {
            col[r] = buf[r * cc + c];
        }
        fft::ifft_inplace(&mut col);
        for r in 0..rr {
            buf[r * cc + c] = col[r];
        }
    }
    let mut out = Array2::zeros((out_rows, out_cols));
    for r in 0..out_rows {
        let row = &mut buf[r * cc..(r + 1) * cc];
        fft::ifft_inplace(row);
        for c in 0..out_cols {
            out[(r, c)] = row[c];
        }
    }
    out
}

/// Compressed frequency-domain COBA.
///
/// Raw channel coefficients are delayed through the distortion table, the
/// delayed grid is autoconvolved in both the temporal and spatial
/// dimensions, rows on the sum co-array are accumulated and the result is
/// scaled by the sub-Nyquist sample count `n_sn`. The output band is the
/// doubled input band on a grid twice as long.
pub fn cfcoba_line(
    channel_coeffs: &[FourierLine],
    table: &DistortionTable,
    n_sn: usize,
) -> Result<FourierLine> {
    if channel_coeffs.is_empty() {
        return Err(Error::invalid("no channels"));
    }
    if channel_coeffs.len() != table.positions.len() {
        return Err(Error::shape(format!(
            "{} channels for a table of {} elements",
            channel_coeffs.len(),
            table.positions.len()
        )));
    }
    if n_sn == 0 {
        return Err(Error::invalid("n_sn must be positive"));
    }
    let first = &channel_coeffs[0];
    for line in channel_coeffs {
        if line.indices() != first.indices() || line.n_full != first.n_full {
            return Err(Error::band(
                "all channels must share the same harmonic set".to_string(),
            ));
        }
    }
    if first.n_full != table.n_full {
        return Err(Error::shape(format!(
            "channel grid {} vs table grid {}",
            first.n_full, table.n_full
        )));
    }
    let n_full_in = first.n_full;
    let out_n_full = 2 * n_full_in;
    if 2 * table.k_hi > out_n_full / 2 {
        return Err(Error::band(format!(
            "doubled band reaches harmonic {}, needs a padded grid of at least {} samples",
            2 * table.k_hi,
            4 * table.k_hi
        )));
    }

    let width = table.k_hi - table.k_lo + 1;
    let max_pos = *table.positions.last().unwrap();
    let mut grid = Array2::zeros((max_pos + 1, width));
    for (m_idx, line) in channel_coeffs.iter().enumerate() {
        let delayed = delay_channel_coeffs(line, table, m_idx)?;
        for (w, v) in delayed.values().iter().enumerate() {
            grid[(table.positions[m_idx], w)] = *v;
        }
    }

    let conv = autoconvolve_2d(&grid);
    let coarray = sum_coarray(
        &ArrayGeometry::new(table.positions.clone(), 1.0).expect("table positions valid"),
    );
    let mut values = vec![Complex64::new(0.0, 0.0); 2 * width - 1];
    for &l in coarray.positions() {
        for (w, slot) in values.iter_mut().enumerate() {
            *slot += conv[(l, w)];
        }
    }
    let scale = n_sn as f64;
    for v in values.iter_mut() {
        *v *= scale;
    }
    FourierLine::new(
        (2 * table.k_lo..=2 * table.k_hi).collect(),
        values,
        channel_coeffs[0].t_seconds,
        out_n_full,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdbf::distortion_table;
    use crate::sim::{gaussian_pulse, simulate_channels, ImagingConfig, Phantom, Scatterer};

    #[test]
    fn normalize_matches_hand_values() {
        let m = ndarray::arr2(&[[
            Complex64::new(0.0, 0.0),
            Complex64::new(4.0, 0.0),
            Complex64::new(-9.0, 0.0),
        ]]);
        let u = normalize_u(&m);
        assert_eq!(u[(0, 0)], Complex64::new(0.0, 0.0));
        assert!((u[(0, 1)] - Complex64::new(2.0, 0.0)).norm() < 1e-12);
        // arg(-9) = pi, so u = e^{j pi} * 3 = -3
        assert!((u[(0, 2)] - Complex64::new(-3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn normalize_preserves_magnitude_square() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let m = Array2::from_shape_fn((4, 16), |_| {
            Complex64::new(rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0)
        });
        let u = normalize_u(&m);
        for (a, b) in u.iter().zip(m.iter()) {
            assert!((a.norm_sqr() - b.norm()).abs() < 1e-12);
        }
    }

    fn small_frame(m: usize) -> ChannelFrame {
        let cfg = ImagingConfig::new(m, 2.83e-4, 10.8e6, 1540.0, 700, vec![0.0]).unwrap();
        let mut phantom = Phantom::from_scatterers(vec![Scatterer {
            x_m: 0.0,
            z_m: 0.025,
            amplitude: 1.0,
        }])
        .unwrap();
        phantom.add_speckle((-0.005, 0.005), (0.01, 0.04), 30, 0.4, 8);
        let pulse = gaussian_pulse(2.72e6, 0.67, cfg.fs_hz).unwrap();
        simulate_channels(&phantom, &cfg, &pulse, 0.0).0
    }

    #[test]
    fn single_element_coba_restores_magnitude() {
        let frame = small_frame(1);
        let array = ArrayGeometry::new(vec![0], frame.config.pitch_m).unwrap();
        let line = coba_line(&frame, &array).unwrap();
        let delayed = das::delayed_channels(&frame, &array, 1).unwrap();
        for (p, &v) in line.samples.iter().enumerate() {
            assert!((v.abs() - delayed[(0, p)].abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn coba_factors_as_square_of_channel_sum() {
        let frame = small_frame(8);
        let array = ArrayGeometry::new(vec![0, 1, 3, 4, 7], frame.config.pitch_m).unwrap();
        let line = coba_line(&frame, &array).unwrap();
        let delayed = das::delayed_channels(&frame, &array, 1)
            .unwrap()
            .mapv(|v| Complex64::new(v, 0.0));
        let u = normalize_u(&delayed);
        for p in 0..line.samples.len() {
            let total: Complex64 = (0..u.nrows()).map(|m| u[(m, p)]).sum();
            let expect = (total * total).re;
            assert!(
                (line.samples[p] - expect).abs() <= 1e-9 * expect.abs().max(1.0),
                "sample {p}"
            );
        }
    }

    #[test]
    fn coba_double_sum_oracle() {
        // Eq-(8)-style brute force: sum over every (i, j) pair directly.
        let frame = small_frame(8);
        let array = ArrayGeometry::ula(8, frame.config.pitch_m).unwrap();
        let line = coba_line(&frame, &array).unwrap();
        let delayed = das::delayed_channels(&frame, &array, 1)
            .unwrap()
            .mapv(|v| Complex64::new(v, 0.0));
        let u = normalize_u(&delayed);
        let scale = line.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for p in 0..line.samples.len() {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..8 {
                for j in 0..8 {
                    acc += u[(i, p)] * u[(j, p)];
                }
            }
            assert!((line.samples[p] - acc.re).abs() <= 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn two_element_expansion() {
        let frame = small_frame(2);
        let array = ArrayGeometry::ula(2, frame.config.pitch_m).unwrap();
        let line = coba_line(&frame, &array).unwrap();
        let delayed = das::delayed_channels(&frame, &array, 1)
            .unwrap()
            .mapv(|v| Complex64::new(v, 0.0));
        let u = normalize_u(&delayed);
        for p in 0..line.samples.len() {
            let (u0, u1) = (u[(0, p)], u[(1, p)]);
            let expect = (u0 * u0 + 2.0 * u0 * u1 + u1 * u1).re;
            assert!((line.samples[p] - expect).abs() < 1e-9 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn empty_aperture_rejected() {
        let frame = small_frame(2);
        assert!(ArrayGeometry::new(vec![], frame.config.pitch_m).is_err());
    }

    fn random_channel_lines(
        count: usize,
        mu: &[usize],
        t: f64,
        n_full: usize,
        seed: u64,
    ) -> Vec<FourierLine> {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let vals: Vec<Complex64> = mu
                    .iter()
                    .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                    .collect();
                FourierLine::new(mu.to_vec(), vals, t, n_full).unwrap()
            })
            .collect()
    }

    #[test]
    fn single_element_cfcoba_is_temporal_autoconvolution() {
        let cfg = ImagingConfig::new(1, 2.83e-4, 10.8e6, 1540.0, 256, vec![0.0]).unwrap();
        let array = ArrayGeometry::new(vec![0], cfg.pitch_m).unwrap();
        let table = distortion_table(&cfg, &array, 0.0, 20..=40, 2, 2).unwrap();
        let mu: Vec<usize> = (0..=128).collect();
        let chans = random_channel_lines(1, &mu, cfg.depth_time_s(), 256, 4);
        let out = cfcoba_line(&chans, &table, 3).unwrap();

        // oracle: delayed coefficients (identity here) convolved directly
        let delayed = delay_channel_coeffs(&chans[0], &table, 0).unwrap();
        let w = delayed.values().len();
        for (out_idx, k) in (40..=80usize).enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in 0..w {
                for q in 0..w {
                    if p + q == out_idx {
                        acc += delayed.values()[p] * delayed.values()[q];
                    }
                }
            }
            acc *= 3.0;
            assert!(
                (out.values()[out_idx] - acc).norm() < 1e-10,
                "harmonic {k}: {} vs {}",
                out.values()[out_idx],
                acc
            );
        }
        assert_eq!(out.indices().first(), Some(&40));
        assert_eq!(out.indices().last(), Some(&80));
        assert_eq!(out.n_full, 512);
    }

    #[test]
    fn cfcoba_scales_linearly_in_nsn_and_quadratically_in_input() {
        let cfg = ImagingConfig::new(4, 2.83e-4, 10.8e6, 1540.0, 256, vec![0.0]).unwrap();
        let array = ArrayGeometry::new(vec![0, 1, 3], cfg.pitch_m).unwrap();
        let table = distortion_table(&cfg, &array, 0.1, 20..=40, 2, 2).unwrap();
        let mu: Vec<usize> = (0..=128).collect();
        let chans = random_channel_lines(3, &mu, cfg.depth_time_s(), 256, 5);
        let base = cfcoba_line(&chans, &table, 2).unwrap();
        let double_nsn = cfcoba_line(&chans, &table, 4).unwrap();
        for (a, b) in base.values().iter().zip(double_nsn.values().iter()) {
            assert!((2.0 * a - b).norm() < 1e-12);
        }

        let scaled: Vec<FourierLine> = chans
            .iter()
            .map(|l| {
                FourierLine::new(
                    l.indices().to_vec(),
                    l.values().iter().map(|v| 3.0 * v).collect(),
                    l.t_seconds,
                    l.n_full,
                )
                .unwrap()
            })
            .collect();
        let scaled_out = cfcoba_line(&scaled, &table, 2).unwrap();
        for (a, b) in base.values().iter().zip(scaled_out.values().iter()) {
            assert!((9.0 * a - b).norm() < 1e-9 * (a.norm() * 9.0).max(1e-6));
        }
    }

    #[test]
    fn cfcoba_rejects_mismatched_inputs() {
        let cfg = ImagingConfig::new(2, 2.83e-4, 10.8e6, 1540.0, 128, vec![0.0]).unwrap();
        let array = ArrayGeometry::ula(2, cfg.pitch_m).unwrap();
        let table = distortion_table(&cfg, &array, 0.0, 20..=40, 2, 2).unwrap();
        let mu: Vec<usize> = (0..=64).collect();
        let chans = random_channel_lines(2, &mu, cfg.depth_time_s(), 128, 6);
        assert!(cfcoba_line(&chans[..1], &table, 1).is_err()); // one channel missing
        assert!(cfcoba_line(&chans, &table, 0).is_err()); // no samples

        // channels on a different grid than the table
        let wrong = random_channel_lines(2, &mu, cfg.depth_time_s(), 256, 6);
        assert!(cfcoba_line(&wrong, &table, 1).is_err());
    }
}
