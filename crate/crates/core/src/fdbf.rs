//! Frequency-domain beamforming.
//!
//! Delays are applied to Fourier-series coefficients through a distortion
//! table Q[k, m, n] that depends only on the imaging geometry. Tables are
//! expensive relative to everything downstream, so they are built once per
//! (geometry, angle, band) and can be cached to disk.

use crate::error::{Error, Result};
use crate::fft;
use crate::geometry::ArrayGeometry;
use crate::sim::{ImagingConfig, Pulse};
use ndarray::Array3;
use num_complex::Complex64;
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

/// Fourier-series coefficients of one line on the non-negative harmonics.
///
/// Negative harmonics of real signals are implied by conjugate symmetry and
/// never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierLine {
    indices: Vec<usize>,
    values: Vec<Complex64>,
    pub t_seconds: f64,
    pub n_full: usize,
}

impl FourierLine {
    pub fn new(
        indices: Vec<usize>,
        values: Vec<Complex64>,
        t_seconds: f64,
        n_full: usize,
    ) -> Result<FourierLine> {
        if indices.len() != values.len() {
            return Err(Error::shape(format!(
                "{} indices vs {} values",
                indices.len(),
                values.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("harmonic indices must strictly increase"));
        }
        if let Some(&max) = indices.last() {
            if max > n_full / 2 {
                return Err(Error::band(format!(
                    "harmonic {max} beyond Nyquist {} of an {n_full}-sample grid",
                    n_full / 2
                )));
            }
        }
        Ok(FourierLine {
            indices,
            values,
            t_seconds,
            n_full,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Signed-harmonic lookup; conjugate symmetry supplies k < 0 and
    /// anything outside the stored band reads as zero.
    pub fn coeff(&self, k: i64) -> Complex64 {
        let (idx, conj) = if k < 0 { (-k, true) } else { (k, false) };
        match self.indices.binary_search(&(idx as usize)) {
            Ok(pos) => {
                let v = self.values[pos];
                if conj {
                    v.conj()
                } else {
                    v
                }
            }
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }
}

/// Fourier-series coefficients c[k] = (1/N) sum_t x[t] e^{-j 2 pi k t / N}
/// of a real trace, for the requested harmonics.
pub fn fourier_coeffs(trace: &[f64], mu: &[usize], t_seconds: f64) -> Result<FourierLine> {
    let n = trace.len();
    if let Some(&bad) = mu.iter().find(|&&k| k > n / 2) {
        return Err(Error::band(format!(
            "harmonic {bad} beyond Nyquist {} of the {n}-sample trace",
            n / 2
        )));
    }
    let spec = fft::fft_real(trace);
    let scale = 1.0 / n as f64;
    let values = mu.iter().map(|&k| spec[k] * scale).collect();
    FourierLine::new(mu.to_vec(), values, t_seconds, n)
}

/// Geometry-only delay kernel in the frequency domain.
#[derive(Debug, Clone)]
pub struct DistortionTable {
    pub theta_rad: f64,
    pub k_lo: usize,
    pub k_hi: usize,
    pub n1: usize,
    pub n2: usize,
    /// Q indexed [k - k_lo, element, n + n1].
    pub q: Array3<Complex64>,
    /// Grid positions of the elements covered by this table.
    pub positions: Vec<usize>,
    pub t_seconds: f64,
    pub t_b_seconds: f64,
    pub fs_hz: f64,
    pub n_full: usize,
}

/// Supported beam time T_B(theta): the instant at which the farthest
/// element's dynamic delay reaches the end of the recording.
pub fn t_b(config: &ImagingConfig, theta_rad: f64) -> f64 {
    let t = config.depth_time_s();
    let sin = theta_rad.sin();
    let mut t_b = t;
    for pos in 0..config.element_count {
        let dc = config.element_x_m(pos) / config.c_mps;
        let denom = t - dc * sin;
        if denom <= 0.0 {
            continue;
        }
        let tm = (t * t - dc * dc) / denom;
        if tm < t_b {
            t_b = tm.max(0.0);
        }
    }
    t_b
}

/// Build the distortion table by quadrature of
/// Q[k, m, n] = (1/T) \int_0^T I_[0,T_B)(t) e^{j (2pi/T)[(k-n) tau_m(t) - k t]} dt
/// on the fs grid.
pub fn distortion_table(
    config: &ImagingConfig,
    array: &ArrayGeometry,
    theta_rad: f64,
    k_range: std::ops::RangeInclusive<usize>,
    n1: usize,
    n2: usize,
) -> Result<DistortionTable> {
    if n1 < 1 || n2 < 1 {
        return Err(Error::invalid("n-range must cover at least [-1, 1]"));
    }
    array.require_within(config.element_count)?;
    let (k_lo, k_hi) = (*k_range.start(), *k_range.end());
    if k_hi > config.samples_per_line / 2 {
        return Err(Error::band(format!(
            "k_hi {k_hi} beyond Nyquist {}",
            config.samples_per_line / 2
        )));
    }
    let n = config.samples_per_line;
    let t_total = config.depth_time_s();
    let t_b_s = t_b(config, theta_rad);
    let fs = config.fs_hz;
    let n_b = ((t_b_s * fs).ceil() as usize).min(n); // samples with t < T_B
    let k_count = k_hi - k_lo + 1;
    let n_count = n1 + n2 + 1;
    let two_pi_over_t = 2.0 * std::f64::consts::PI / t_total;

    let per_element: Vec<Vec<Complex64>> =
        crate::par_map_ordered(array.positions(), |&pos| {
            let delta = config.element_x_m(pos);
            // u_i = e^{j 2pi (tau_i - t_i)/T}, v_i = e^{-j 2pi tau_i / T};
            // the integrand factors as u_i^k v_i^n.
            let mut u = Vec::with_capacity(n_b);
            let mut cur = Vec::with_capacity(n_b);
            let mut vpow = Vec::with_capacity(n_b * n_count);
            for i in 0..n_b {
                let t = i as f64 / fs;
                let tau = crate::das::delay_tau(t, theta_rad, delta, config.c_mps);
                let ui = Complex64::from_polar(1.0, two_pi_over_t * (tau - t));
                u.push(ui);
                cur.push(Complex64::from_polar(1.0, two_pi_over_t * (tau - t) * k_lo as f64));
                let vi = Complex64::from_polar(1.0, -two_pi_over_t * tau);
                // powers v^(-n1) .. v^(n2)
                let mut p = vi.powi(-(n1 as i32));
                for _ in 0..n_count {
                    vpow.push(p);
                    p *= vi;
                }
            }
            let weight = 1.0 / n as f64; // dt / T
            let mut out = vec![Complex64::new(0.0, 0.0); k_count * n_count];
            for k_idx in 0..k_count {
                let acc = &mut out[k_idx * n_count..(k_idx + 1) * n_count];
                for i in 0..n_b {
                    let w = cur[i];
                    let vrow = &vpow[i * n_count..(i + 1) * n_count];
                    for (a, v) in acc.iter_mut().zip(vrow.iter()) {
                        *a += w * v;
                    }
                    cur[i] *= u[i];
                }
                for a in acc.iter_mut() {
                    *a *= weight;
                }
            }
            out
        });

    let mut q = Array3::zeros((k_count, array.element_count(), n_count));
    for (m_idx, block) in per_element.iter().enumerate() {
        for k_idx in 0..k_count {
            for n_idx in 0..n_count {
                q[(k_idx, m_idx, n_idx)] = block[k_idx * n_count + n_idx];
            }
        }
    }

    Ok(DistortionTable {
        theta_rad,
        k_lo,
        k_hi,
        n1,
        n2,
        q,
        positions: array.positions().to_vec(),
        t_seconds: t_total,
        t_b_seconds: t_b_s,
        fs_hz: fs,
        n_full: n,
    })
}

fn check_channels(channel_coeffs: &[FourierLine], table: &DistortionTable) -> Result<()> {
    if channel_coeffs.len() != table.positions.len() {
        return Err(Error::shape(format!(
            "{} channel lines for a table of {} elements",
            channel_coeffs.len(),
            table.positions.len()
        )));
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
    Ok(())
}

/// Delay one channel in the frequency domain:
/// chat_m[k] = sum_{n=-N1}^{N2} c_m[k-n] Q[k, m, n], for k in the table band.
pub fn delay_channel_coeffs(
    line: &FourierLine,
    table: &DistortionTable,
    m_idx: usize,
) -> Result<FourierLine> {
    if m_idx >= table.positions.len() {
        return Err(Error::shape(format!("element index {m_idx} out of range")));
    }
    let k_count = table.k_hi - table.k_lo + 1;
    let mut values = Vec::with_capacity(k_count);
    for k_idx in 0..k_count {
        let k = (table.k_lo + k_idx) as i64;
        let mut acc = Complex64::new(0.0, 0.0);
        for n_idx in 0..(table.n1 + table.n2 + 1) {
            let n = n_idx as i64 - table.n1 as i64;
            acc += line.coeff(k - n) * table.q[(k_idx, m_idx, n_idx)];
        }
        values.push(acc);
    }
    FourierLine::new(
        (table.k_lo..=table.k_hi).collect(),
        values,
        line.t_seconds,
        line.n_full,
    )
}

/// Frequency-domain beamforming: average the delayed channel coefficients,
/// c[k] = (1/M) sum_m sum_n c_m[k-n] Q[k, m, n].
pub fn fdbf_line(channel_coeffs: &[FourierLine], table: &DistortionTable) -> Result<FourierLine> {
    check_channels(channel_coeffs, table)?;
    let m = channel_coeffs.len();
    let k_count = table.k_hi - table.k_lo + 1;
    let n_count = table.n1 + table.n2 + 1;
    let mut values = vec![Complex64::new(0.0, 0.0); k_count];
    for (m_idx, line) in channel_coeffs.iter().enumerate() {
        for (k_idx, slot) in values.iter_mut().enumerate() {
            let k = (table.k_lo + k_idx) as i64;
            let mut acc = Complex64::new(0.0, 0.0);
            for n_idx in 0..n_count {
                let n = n_idx as i64 - table.n1 as i64;
                acc += line.coeff(k - n) * table.q[(k_idx, m_idx, n_idx)];
            }
            *slot += acc;
        }
    }
    let scale = 1.0 / m as f64;
    for v in values.iter_mut() {
        *v *= scale;
    }
    FourierLine::new(
        (table.k_lo..=table.k_hi).collect(),
        values,
        channel_coeffs[0].t_seconds,
        channel_coeffs[0].n_full,
    )
}

/// Harmonic selection strategy for sub-Nyquist acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsampleStrategy {
    /// Contiguous window of maximal pulse-spectrum energy.
    CentralBand,
    /// Uniform without replacement inside the pulse's -40 dB band.
    RandomInBand,
}

/// Choose `budget` harmonic indices out of the `n_full`-grid band.
pub fn select_subsample(
    pulse: &Pulse,
    n_full: usize,
    budget: usize,
    strategy: SubsampleStrategy,
    seed: u64,
) -> Result<Vec<usize>> {
    let spec = pulse.series_spectrum(n_full)?;
    let half = n_full / 2;
    let mags: Vec<f64> = spec[..=half].iter().map(|v| v.norm()).collect();
    match strategy {
        SubsampleStrategy::CentralBand => {
            if budget == 0 || budget > half + 1 {
                return Err(Error::band(format!(
                    "budget {budget} outside 1..={}",
                    half + 1
                )));
            }
            let mut best_start = 0usize;
            let mut best_sum = f64::NEG_INFINITY;
            let mut window: f64 = mags[..budget].iter().sum();
            best_sum = best_sum.max(window);
            for start in 1..=(half + 1 - budget) {
                window += mags[start + budget - 1] - mags[start - 1];
                if window > best_sum {
                    best_sum = window;
                    best_start = start;
                }
            }
            Ok((best_start..best_start + budget).collect())
        }
        SubsampleStrategy::RandomInBand => {
            let peak = mags.iter().fold(0.0f64, |m, &v| m.max(v));
            let floor = peak * 10f64.powf(-40.0 / 20.0);
            let band: Vec<usize> = (0..=half).filter(|&k| mags[k] >= floor).collect();
            if budget == 0 || budget > band.len() {
                return Err(Error::band(format!(
                    "budget {budget} exceeds the {}-harmonic band",
                    band.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut chosen: Vec<usize> = band
                .choose_multiple(&mut rng, budget)
                .copied()
                .collect();
            chosen.sort_unstable();
            Ok(chosen)
        }
    }
}

// ---------------------------------------------------------------------------
// Disk cache
// ---------------------------------------------------------------------------

const TABLE_MAGIC: &[u8; 8] = b"SNBQTBL\0";
const TABLE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TableSidecar {
    format_version: u32,
    config_hash: String,
    theta_rad: f64,
    k_lo: usize,
    k_hi: usize,
    n1: usize,
    n2: usize,
    positions: Vec<usize>,
    t_seconds: f64,
    t_b_seconds: f64,
    fs_hz: f64,
    n_full: usize,
}

/// Stable hash for a table's full identity (geometry + band).
pub fn table_cache_key(
    config: &ImagingConfig,
    array: &ArrayGeometry,
    theta_rad: f64,
    k_range: &std::ops::RangeInclusive<usize>,
    n1: usize,
    n2: usize,
) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    let key = serde_json::json!({
        "element_count": config.element_count,
        "pitch_m": config.pitch_m,
        "fs_hz": config.fs_hz,
        "c_mps": config.c_mps,
        "samples_per_line": config.samples_per_line,
        "positions": array.positions(),
        "theta_rad": theta_rad,
        "k_lo": *k_range.start(),
        "k_hi": *k_range.end(),
        "n1": n1,
        "n2": n2,
    });
    hasher.update(key.to_string().as_bytes());
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

/// Write the table tensor plus its JSON sidecar.
pub fn write_table_cache(path: &Path, table: &DistortionTable, config_hash: &str) -> Result<()> {
    let sidecar = TableSidecar {
        format_version: TABLE_VERSION,
        config_hash: config_hash.to_string(),
        theta_rad: table.theta_rad,
        k_lo: table.k_lo,
        k_hi: table.k_hi,
        n1: table.n1,
        n2: table.n2,
        positions: table.positions.clone(),
        t_seconds: table.t_seconds,
        t_b_seconds: table.t_b_seconds,
        fs_hz: table.fs_hz,
        n_full: table.n_full,
    };
    let as_str = |p: &Path| p.display().to_string();
    let mut buf = Vec::with_capacity(16 + table.q.len() * 16);
    buf.extend_from_slice(TABLE_MAGIC);
    buf.extend_from_slice(&TABLE_VERSION.to_le_bytes());
    for dim in table.q.shape() {
        buf.extend_from_slice(&(*dim as u64).to_le_bytes());
    }
    for v in table.q.iter() {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(as_str(path), e))?;
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::format(as_str(path), e.to_string()))?;
    std::fs::write(sidecar_path(path), json).map_err(|e| Error::io(as_str(path), e))?;
    Ok(())
}

/// Load a cached table, verifying magic, version and the config hash.
pub fn load_table_cache(path: &Path, expected_hash: &str) -> Result<DistortionTable> {
    let as_str = |p: &Path| p.display().to_string();
    let side_raw = std::fs::read_to_string(sidecar_path(path))
        .map_err(|e| Error::io(as_str(&sidecar_path(path)), e))?;
    let side: TableSidecar = serde_json::from_str(&side_raw)
        .map_err(|e| Error::format(as_str(path), format!("sidecar: {e}")))?;
    if side.format_version != TABLE_VERSION {
        return Err(Error::format(
            as_str(path),
            format!("version {} != {}", side.format_version, TABLE_VERSION),
        ));
    }
    if side.config_hash != expected_hash {
        return Err(Error::format(as_str(path), "config hash mismatch"));
    }

    let mut file = std::fs::File::open(path).map_err(|e| Error::io(as_str(path), e))?;
    let mut header = [0u8; 12];
    file.read_exact(&mut header)
        .map_err(|e| Error::io(as_str(path), e))?;
    if &header[..8] != TABLE_MAGIC {
        return Err(Error::format(as_str(path), "bad magic"));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != TABLE_VERSION {
        return Err(Error::format(as_str(path), "binary version mismatch"));
    }
    let mut dims = [0u8; 24];
    file.read_exact(&mut dims)
        .map_err(|e| Error::io(as_str(path), e))?;
    let shape: Vec<usize> = dims
        .chunks(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = shape.iter().product::<usize>();
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)
        .map_err(|e| Error::io(as_str(path), e))?;
    if payload.len() != count * 16 {
        return Err(Error::format(
            as_str(path),
            format!("expected {} bytes, found {}", count * 16, payload.len()),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(16) {
        let re = f64::from_le_bytes(chunk[..8].try_into().unwrap());
        let im = f64::from_le_bytes(chunk[8..].try_into().unwrap());
        data.push(Complex64::new(re, im));
    }
    let q = Array3::from_shape_vec((shape[0], shape[1], shape[2]), data)
        .map_err(|e| Error::format(as_str(path), e.to_string()))?;
    Ok(DistortionTable {
        theta_rad: side.theta_rad,
        k_lo: side.k_lo,
        k_hi: side.k_hi,
        n1: side.n1,
        n2: side.n2,
        q,
        positions: side.positions,
        t_seconds: side.t_seconds,
        t_b_seconds: side.t_b_seconds,
        fs_hz: side.fs_hz,
        n_full: side.n_full,
    })
}

/// Build the table or load it from `cache_dir` when a matching entry exists.
pub fn distortion_table_cached(
    config: &ImagingConfig,
    array: &ArrayGeometry,
    theta_rad: f64,
    k_range: std::ops::RangeInclusive<usize>,
    n1: usize,
    n2: usize,
    cache_dir: Option<&Path>,
) -> Result<DistortionTable> {
    let key = table_cache_key(config, array, theta_rad, &k_range, n1, n2);
    if let Some(dir) = cache_dir {
        let path = dir.join(format!("qtbl_{key}.bin"));
        if path.exists() {
            if let Ok(table) = load_table_cache(&path, &key) {
                return Ok(table);
            }
        }
        let table = distortion_table(config, array, theta_rad, k_range, n1, n2)?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        write_table_cache(&path, &table, &key)?;
        Ok(table)
    } else {
        distortion_table(config, array, theta_rad, k_range, n1, n2)
    }
}
