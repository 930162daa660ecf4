//! Array geometries, fractal sparse arrays, sum co-arrays and beampatterns.
//!
//! Element positions are non-negative integers on a common grid of pitch
//! `pitch_m`; the physical x-coordinate of grid index `p` is `p * pitch_m`
//! relative to whatever reference the caller chooses. Beampatterns re-center
//! the array on its own geometric aperture center so symmetric arrays yield
//! symmetric magnitude responses.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// A physical aperture: sorted element positions on a pitch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    positions: Vec<usize>,
    pitch_m: f64,
}

impl ArrayGeometry {
    /// Positions are sorted and deduplicated; empty sets and non-positive
    /// pitches are rejected.
    pub fn new(mut positions: Vec<usize>, pitch_m: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("array must contain at least one element"));
        }
        if !(pitch_m > 0.0) {
            return Err(Error::invalid(format!("pitch must be > 0, got {pitch_m}")));
        }
        positions.sort_unstable();
        positions.dedup();
        Ok(ArrayGeometry { positions, pitch_m })
    }

    /// Uniform linear array occupying grid indices `0..m`.
    pub fn ula(m: usize, pitch_m: f64) -> Result<Self> {
        ArrayGeometry::new((0..m).collect(), pitch_m)
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn pitch_m(&self) -> f64 {
        self.pitch_m
    }

    pub fn element_count(&self) -> usize {
        self.positions.len()
    }

    pub fn max_position(&self) -> usize {
        *self.positions.last().unwrap()
    }

    /// Geometric center of the aperture in grid units (may be half-integer).
    pub fn aperture_center(&self) -> f64 {
        (self.positions[0] + self.max_position()) as f64 / 2.0
    }

    /// Reject arrays whose extent exceeds the physical aperture of
    /// `m_full` grid slots; sparse arrays are never silently clipped.
    pub fn require_within(&self, m_full: usize) -> Result<()> {
        if self.max_position() >= m_full {
            return Err(Error::invalid(format!(
                "array position {} exceeds physical aperture of {} elements",
                self.max_position(),
                m_full
            )));
        }
        Ok(())
    }
}

/// Recursive fractal array specification: generator set and order.
#[derive(Debug, Clone, PartialEq)]
pub struct FractalSpec {
    generator: Vec<usize>,
    order: u32,
}

impl FractalSpec {
    /// The generator must contain 0 (fractal recursions are anchored there).
    pub fn new(mut generator: Vec<usize>, order: u32) -> Result<Self> {
        if generator.is_empty() {
            return Err(Error::invalid("fractal generator must be non-empty"));
        }
        generator.sort_unstable();
        generator.dedup();
        if generator[0] != 0 {
            return Err(Error::invalid("fractal generator must contain 0"));
        }
        Ok(FractalSpec { generator, order })
    }

    pub fn generator(&self) -> &[usize] {
        &self.generator
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    /// Translation factor L = 2 max(G) + 1.
    pub fn translation_factor(&self) -> usize {
        2 * self.generator.last().unwrap() + 1
    }
}

/// Expand the fractal recursion W_0 = {0}, W_{r+1} = U_{n in G} (W_r + n L^r).
///
/// The element count is |G|^r; arrays are returned on the given pitch grid.
pub fn fractal_array(spec: &FractalSpec, pitch_m: f64) -> Result<ArrayGeometry> {
    let l = spec.translation_factor();
    let mut w: Vec<usize> = vec![0];
    let mut scale: usize = 1; // L^r
    for _ in 0..spec.order() {
        let mut next = Vec::with_capacity(w.len() * spec.generator().len());
        for &n in spec.generator() {
            for &e in &w {
                next.push(e + n * scale);
            }
        }
        next.sort_unstable();
        next.dedup();
        w = next;
        scale *= l;
    }
    ArrayGeometry::new(w, pitch_m)
}

/// Sum co-array { i + j : i, j in positions }, on the same pitch grid.
pub fn sum_coarray(a: &ArrayGeometry) -> ArrayGeometry {
    let max = a.max_position();
    let mut present = vec![false; 2 * max + 1];
    for &i in a.positions() {
        for &j in a.positions() {
            present[i + j] = true;
        }
    }
    let positions: Vec<usize> = present
        .iter()
        .enumerate()
        .filter_map(|(idx, &p)| p.then_some(idx))
        .collect();
    ArrayGeometry::new(positions, a.pitch_m()).expect("co-array of a valid array is valid")
}

/// Complex array response evaluated on a grid of steering angles.
#[derive(Debug, Clone)]
pub struct Beampattern {
    pub angles_rad: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl Beampattern {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }
}

/// Default evaluation grid: `n` angles uniform in sin(theta) over [-1, 1].
pub fn uniform_sine_grid(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let s = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            s.clamp(-1.0, 1.0).asin()
        })
        .collect()
}

fn steering_sum(
    positions: &[usize],
    weights: Option<&[f64]>,
    center: f64,
    pitch_m: f64,
    angles: &[f64],
    omega0: f64,
    c: f64,
) -> Vec<Complex64> {
    angles
        .iter()
        .map(|&theta| {
            let phase_per_index = -omega0 * pitch_m * theta.sin() / c;
            let mut acc = Complex64::new(0.0, 0.0);
            for (idx, &p) in positions.iter().enumerate() {
                let w = weights.map_or(1.0, |ws| ws[idx]);
                let phase = phase_per_index * (p as f64 - center);
                acc += w * Complex64::from_polar(1.0, phase);
            }
            acc
        })
        .collect()
}

/// DAS beampattern H(theta) = sum_n exp(-j w0 d_n sin(theta) / c), with the
/// aperture re-centered on its geometric center.
pub fn das_beampattern(
    a: &ArrayGeometry,
    angles: &[f64],
    omega0: f64,
    c: f64,
) -> Result<Beampattern> {
    if !(omega0 > 0.0) || !(c > 0.0) {
        return Err(Error::invalid("omega0 and c must be positive"));
    }
    let values = steering_sum(
        a.positions(),
        None,
        a.aperture_center(),
        a.pitch_m(),
        angles,
        omega0,
        c,
    );
    Ok(Beampattern {
        angles_rad: angles.to_vec(),
        values,
    })
}

/// Intrinsic COBA apodization: the autoconvolution of the element indicator.
pub fn intrinsic_apodization(a: &ArrayGeometry) -> Vec<f64> {
    let max = a.max_position();
    let mut indicator = vec![0.0f64; max + 1];
    for &p in a.positions() {
        indicator[p] = 1.0;
    }
    let mut apod = vec![0.0f64; 2 * max + 1];
    for (i, &vi) in indicator.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (j, &vj) in indicator.iter().enumerate() {
            if vj != 0.0 {
                apod[i + j] += vi * vj;
            }
        }
    }
    apod
}

/// COBA beampattern: the co-array response under the intrinsic apodization,
/// equal pointwise to the square of the DAS beampattern.
pub fn coba_beampattern(
    a: &ArrayGeometry,
    angles: &[f64],
    omega0: f64,
    c: f64,
) -> Result<Beampattern> {
    if !(omega0 > 0.0) || !(c > 0.0) {
        return Err(Error::invalid("omega0 and c must be positive"));
    }
    let apod = intrinsic_apodization(a);
    let co_positions: Vec<usize> = (0..apod.len()).collect();
    let weights: Vec<f64> = apod.clone();
    // The co-array center is twice the aperture center, which keeps the
    // identity H_COBA = H_DAS^2 exact under re-centering.
    let values = steering_sum(
        &co_positions,
        Some(&weights),
        2.0 * a.aperture_center(),
        a.pitch_m(),
        angles,
        omega0,
        c,
    );
    Ok(Beampattern {
        angles_rad: angles.to_vec(),
        values,
    })
}
