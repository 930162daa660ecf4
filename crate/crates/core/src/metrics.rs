//! Image quality metrics: FWHM resolution and contrast-to-noise ratio.

use crate::error::{Error, Result};

/// An envelope-detected, log-compressed image: one line per beam angle,
/// values in [0, 1].
#[derive(Debug, Clone)]
pub struct BModeImage {
    pub lines: Vec<Vec<f64>>,
    pub angles_rad: Vec<f64>,
    pub fs_hz: f64,
    pub c_mps: f64,
}

impl BModeImage {
    pub fn new(
        lines: Vec<Vec<f64>>,
        angles_rad: Vec<f64>,
        fs_hz: f64,
        c_mps: f64,
    ) -> Result<BModeImage> {
        if lines.is_empty() || lines.len() != angles_rad.len() {
            return Err(Error::shape(format!(
                "{} lines vs {} angles",
                lines.len(),
                angles_rad.len()
            )));
        }
        let n = lines[0].len();
        if lines.iter().any(|l| l.len() != n) {
            return Err(Error::shape("lines must share one length"));
        }
        if lines
            .iter()
            .flatten()
            .any(|&v| !(0.0..=1.0).contains(&v) || v.is_nan())
        {
            return Err(Error::invalid("image values must lie in [0, 1]"));
        }
        Ok(BModeImage {
            lines,
            angles_rad,
            fs_hz,
            c_mps,
        })
    }

    /// Axial sample spacing in meters.
    pub fn axial_spacing_m(&self) -> f64 {
        self.c_mps / (2.0 * self.fs_hz)
    }

    /// Depth of sample j in meters.
    pub fn depth_m(&self, sample: usize) -> f64 {
        sample as f64 * self.axial_spacing_m()
    }

    /// Pixel coordinates (x, z) of (line, sample).
    pub fn pixel_xz(&self, line: usize, sample: usize) -> (f64, f64) {
        let r = self.depth_m(sample);
        let th = self.angles_rad[line];
        (r * th.sin(), r * th.cos())
    }
}

/// Full width at half maximum of a linear-scale envelope cut, with
/// sub-sample crossings by linear interpolation.
pub fn fwhm(cut: &[f64], sample_spacing: f64) -> Result<f64> {
    if cut.len() < 3 {
        return Err(Error::invalid("cut too short"));
    }
    let (peak_idx, peak) = cut
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i, *v))
        .unwrap();
    if !(peak > 0.0) {
        return Err(Error::invalid("cut has no positive peak"));
    }
    let half = peak / 2.0;

    let mut left = None;
    for i in (0..peak_idx).rev() {
        if cut[i] < half {
            let frac = (half - cut[i]) / (cut[i + 1] - cut[i]);
            left = Some(i as f64 + frac);
            break;
        }
    }
    let mut right = None;
    for i in peak_idx + 1..cut.len() {
        if cut[i] < half {
            let frac = (cut[i - 1] - half) / (cut[i - 1] - cut[i]);
            right = Some((i - 1) as f64 + frac);
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Ok((r - l) * sample_spacing),
        _ => Err(Error::invalid(
            "no half-maximum crossing on one side (peak at boundary)",
        )),
    }
}

fn mask_stats(image: &BModeImage, mask: &[(usize, usize)]) -> Result<(f64, f64)> {
    if mask.is_empty() {
        return Err(Error::invalid("empty mask"));
    }
    let mut vals = Vec::with_capacity(mask.len());
    for &(line, sample) in mask {
        let v = image
            .lines
            .get(line)
            .and_then(|l| l.get(sample))
            .ok_or_else(|| Error::shape(format!("mask pixel ({line}, {sample}) out of image")))?;
        vals.push(*v);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Contrast-to-noise ratio between two disjoint pixel masks of a
/// log-compressed image: 20 log10(|mu_c - mu_b| / sqrt(sig_c^2 + sig_b^2)).
///
/// Identical means with zero spread is undefined (error); identical means
/// with spread returns -inf.
pub fn cnr(
    image: &BModeImage,
    cyst_mask: &[(usize, usize)],
    background_mask: &[(usize, usize)],
) -> Result<f64> {
    use std::collections::HashSet;
    let ca: HashSet<_> = cyst_mask.iter().collect();
    if background_mask.iter().any(|p| ca.contains(p)) {
        return Err(Error::invalid("cyst and background masks overlap"));
    }
    let (mu_c, sig_c) = mask_stats(image, cyst_mask)?;
    let (mu_b, sig_b) = mask_stats(image, background_mask)?;
    let spread = (sig_c * sig_c + sig_b * sig_b).sqrt();
    let contrast = (mu_c - mu_b).abs();
    if spread == 0.0 {
        if contrast == 0.0 {
            return Err(Error::invalid("undefined contrast: equal means, zero spread"));
        }
        return Ok(f64::INFINITY);
    }
    if contrast == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(20.0 * (contrast / spread).log10())
}

/// Pixels of the image within `radius_m` of (center_x, center_z).
pub fn disk_mask(
    image: &BModeImage,
    center_x_m: f64,
    center_z_m: f64,
    radius_m: f64,
) -> Vec<(usize, usize)> {
    let mut mask = Vec::new();
    let r2 = radius_m * radius_m;
    for (li, _) in image.angles_rad.iter().enumerate() {
        for si in 0..image.lines[li].len() {
            let (x, z) = image.pixel_xz(li, si);
            let dx = x - center_x_m;
            let dz = z - center_z_m;
            if dx * dx + dz * dz <= r2 {
                mask.push((li, si));
            }
        }
    }
    mask
}
