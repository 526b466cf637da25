//! Sensor-side corrections: spectral sensitivity normalization,
//! illumination-field correction and spectral focus stacking.
//!
//! Both correction fields are estimated from a white-reference cube. The
//! corrections are pure, positively homogeneous transforms; denominators are
//! clamped below at [`DIV_EPSILON`] (with a warning logged) so bad inputs
//! can never propagate NaNs silently.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::filter;
use crate::{Error, Result};

/// Lower clamp applied to every correction denominator.
pub const DIV_EPSILON: f64 = 1e-6;

/// Default channel split for focus stacking: channels 1–75 come from the
/// blue-focused capture, the rest from the red-focused capture.
pub const DEFAULT_SPLIT_BAND: usize = 75;

/// Rectangular pixel region (used to restrict the white-reference estimate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Region {
    fn validate(&self, cube: &HsiCube) -> Result<()> {
        if self.rows == 0
            || self.cols == 0
            || self.row + self.rows > cube.rows()
            || self.col + self.cols > cube.cols()
        {
            return Err(Error::InvalidInput(format!(
                "region {}+{}x{}+{} exceeds cube {}x{}",
                self.row,
                self.rows,
                self.col,
                self.cols,
                cube.rows(),
                cube.cols()
            )));
        }
        Ok(())
    }
}

/// Per-band normalized sensor sensitivity, max entry = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSensitivity {
    values: Vec<f64>,
}

impl SpectralSensitivity {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidInput(
                "sensitivity entries must all be positive".into(),
            ));
        }
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        let values = values.into_iter().map(|v| v / max).collect();
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-pixel normalized illumination field, max entry = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlluminationField {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl IlluminationField {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "field holds {} values for {}x{}",
                values.len(),
                rows,
                cols
            )));
        }
        if values.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidInput(
                "illumination entries must all be positive".into(),
            ));
        }
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        let values = values.into_iter().map(|v| v / max).collect();
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Low-pass choice applied to the raw per-pixel estimate before
/// normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// Gaussian with an explicit σ in pixels.
    Gaussian {
        sigma: f64,
    },
    /// Gaussian with σ expressed as a fraction of the image diagonal.
    DiagonalFraction {
        fraction: f64,
    },
}

impl Default for Smoothing {
    fn default() -> Self {
        // white-reference pixels carry noise; σ = 2% of the diagonal
        Smoothing::DiagonalFraction { fraction: 0.02 }
    }
}

impl Smoothing {
    fn sigma(&self, rows: usize, cols: usize) -> f64 {
        match *self {
            Smoothing::None => 0.0,
            Smoothing::Gaussian { sigma } => sigma,
            Smoothing::DiagonalFraction { fraction } => {
                fraction * ((rows * rows + cols * cols) as f64).sqrt()
            }
        }
    }
}

/// Neumaier-compensated sum; deterministic and accurate for long band means.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Spatial mean of every band (over an optional region).
pub fn band_means(cube: &HsiCube, region: Option<&Region>) -> Result<Vec<f64>> {
    if let Some(r) = region {
        r.validate(cube)?;
    }
    let means = (0..cube.bands())
        .map(|b| {
            let plane = cube.band(b);
            match region {
                None => compensated_sum(plane.iter().map(|&v| v as f64)) / plane.len() as f64,
                Some(r) => {
                    let vals = (r.row..r.row + r.rows).flat_map(|row| {
                        plane[row * cube.cols() + r.col..row * cube.cols() + r.col + r.cols]
                            .iter()
                            .map(|&v| v as f64)
                    });
                    compensated_sum(vals) / (r.rows * r.cols) as f64
                }
            }
        })
        .collect();
    Ok(means)
}

/// Estimate the normalized sensitivity from a white-reference cube: the
/// spatial mean of every band, divided by the maximum over bands.
pub fn estimate_sensitivity(
    white_ref: &HsiCube,
    region: Option<&Region>,
) -> Result<SpectralSensitivity> {
    let means = band_means(white_ref, region)?;
    if let Some(b) = means.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::Degenerate(format!(
            "white reference band {} has non-positive mean; sensitivity undefined",
            b + 1
        )));
    }
    SpectralSensitivity::new(means)
}

/// Divide every band by its sensitivity coefficient.
pub fn normalize_sensitivity(cube: &HsiCube, w: &SpectralSensitivity) -> Result<HsiCube> {
    if w.len() != cube.bands() {
        return Err(Error::ShapeMismatch(format!(
            "sensitivity has {} entries for {} bands",
            w.len(),
            cube.bands()
        )));
    }
    let plane = cube.plane_len();
    let clamped: usize = w.values().iter().filter(|&&v| v < DIV_EPSILON).count();
    if clamped > 0 {
        log::warn!("normalize_sensitivity clamped {clamped} band coefficients at {DIV_EPSILON}");
    }
    let mut data = vec![0.0f32; cube.data().len()];
    data.par_chunks_mut(plane).enumerate().for_each(|(b, out)| {
        let inv = 1.0 / w.values()[b].max(DIV_EPSILON);
        for (o, &v) in out.iter_mut().zip(cube.band(b)) {
            *o = (v as f64 * inv) as f32;
        }
    });
    Ok(cube.with_data(data))
}

/// Estimate the normalized illumination field from a white-reference cube:
/// the per-pixel band mean, optionally low-passed, normalized so max = 1.
pub fn estimate_illumination(
    white_ref: &HsiCube,
    smoothing: Smoothing,
) -> Result<IlluminationField> {
    let plane = white_ref.plane_len();
    let bands = white_ref.bands();
    let mut mean = vec![0.0f64; plane];
    for b in 0..bands {
        for (m, &v) in mean.iter_mut().zip(white_ref.band(b)) {
            *m += v as f64;
        }
    }
    let inv = 1.0 / bands as f64;
    for m in &mut mean {
        *m *= inv;
    }
    if let Some(p) = mean.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::Degenerate(format!(
            "white reference pixel {p} has non-positive band mean; illumination undefined"
        )));
    }
    let sigma = smoothing.sigma(white_ref.rows(), white_ref.cols());
    let smoothed = filter::gaussian_blur(&mean, white_ref.rows(), white_ref.cols(), sigma);
    IlluminationField::new(white_ref.rows(), white_ref.cols(), smoothed)
}

/// Divide every pixel's spectrum by its illumination value.
pub fn correct_illumination(cube: &HsiCube, field: &IlluminationField) -> Result<HsiCube> {
    if field.rows() != cube.rows() || field.cols() != cube.cols() {
        return Err(Error::ShapeMismatch(format!(
            "field is {}x{}, cube is {}x{}",
            field.rows(),
            field.cols(),
            cube.rows(),
            cube.cols()
        )));
    }
    let plane = cube.plane_len();
    let clamped = field.values().iter().filter(|&&v| v < DIV_EPSILON).count();
    if clamped > 0 {
        log::warn!("correct_illumination clamped {clamped} field pixels at {DIV_EPSILON}");
    }
    let inv: Vec<f64> = field
        .values()
        .iter()
        .map(|&v| 1.0 / v.max(DIV_EPSILON))
        .collect();
    let mut data = vec![0.0f32; cube.data().len()];
    data.par_chunks_mut(plane).enumerate().for_each(|(b, out)| {
        for ((o, &v), &i) in out.iter_mut().zip(cube.band(b)).zip(&inv) {
            *o = (v as f64 * i) as f32;
        }
    });
    Ok(cube.with_data(data))
}

/// Assemble an all-in-focus cube: the first `split_band` channels (1-based)
/// are copied bit-exactly from `h1`, the rest from `h2`.
pub fn focus_stack(h1: &HsiCube, h2: &HsiCube, split_band: usize) -> Result<HsiCube> {
    if h1.rows() != h2.rows() || h1.cols() != h2.cols() || h1.bands() != h2.bands() {
        return Err(Error::ShapeMismatch(format!(
            "captures differ: {}x{}x{} vs {}x{}x{}",
            h1.rows(),
            h1.cols(),
            h1.bands(),
            h2.rows(),
            h2.cols(),
            h2.bands()
        )));
    }
    if split_band == 0 || split_band >= h1.bands() {
        return Err(Error::InvalidInput(format!(
            "split band {} out of range 1..{}",
            split_band,
            h1.bands()
        )));
    }
    let plane = h1.plane_len();
    let cut = split_band * plane;
    let mut data = Vec::with_capacity(h1.data().len());
    data.extend_from_slice(&h1.data()[..cut]);
    data.extend_from_slice(&h2.data()[cut..]);
    // both captures come from the same instrument; prefer h1's wavelengths
    let wavelengths = h1.wavelengths().or(h2.wavelengths()).map(|w| w.to_vec());
    HsiCube::new(h1.rows(), h1.cols(), h1.bands(), data, wavelengths)
}

/// Variance-of-Laplacian sharpness of one band (0-based).
pub fn band_sharpness(cube: &HsiCube, band: usize) -> f64 {
    filter::laplacian_variance(cube.band(band), cube.rows(), cube.cols())
}

/// Pick a split band automatically from per-channel sharpness: the index
/// maximizing the total sharpness of the stacked result. This is an
/// extension beyond the fixed-split method; the fixed split remains the
/// default behaviour.
pub fn choose_split_by_sharpness(h1: &HsiCube, h2: &HsiCube) -> Result<usize> {
    if h1.bands() != h2.bands() || h1.plane_len() != h2.plane_len() {
        return Err(Error::ShapeMismatch("captures differ in shape".into()));
    }
    let bands = h1.bands();
    let s1: Vec<f64> = (0..bands)
        .into_par_iter()
        .map(|b| band_sharpness(h1, b))
        .collect();
    let s2: Vec<f64> = (0..bands)
        .into_par_iter()
        .map(|b| band_sharpness(h2, b))
        .collect();
    let total2: f64 = s2.iter().sum();
    // score(split) = sum(s1[..split]) + sum(s2[split..])
    let mut best_split = 1;
    let mut best_score = f64::MIN;
    let mut prefix1 = 0.0;
    let mut prefix2 = 0.0;
    for split in 1..bands {
        prefix1 += s1[split - 1];
        prefix2 += s2[split - 1];
        let score = prefix1 + (total2 - prefix2);
        if score > best_score {
            best_score = score;
            best_split = split;
        }
    }
    Ok(best_split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_from_fn(
        rows: usize,
        cols: usize,
        bands: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> HsiCube {
        let mut data = Vec::with_capacity(rows * cols * bands);
        for b in 0..bands {
            for r in 0..rows {
                for c in 0..cols {
                    data.push(f(r, c, b) as f32);
                }
            }
        }
        HsiCube::new(rows, cols, bands, data, None).unwrap()
    }

    #[test]
    fn sensitivity_normalizes_by_max() {
        let cube = cube_from_fn(4, 4, 2, |_, _, b| if b == 0 { 0.2 } else { 0.4 });
        let w = estimate_sensitivity(&cube, None).unwrap();
        assert!((w.values()[0] - 0.5).abs() < 1e-12);
        assert!((w.values()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_white_gives_unit_sensitivity() {
        let cube = cube_from_fn(3, 5, 4, |_, _, _| 0.8);
        let w = estimate_sensitivity(&cube, None).unwrap();
        assert!(w.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_band_is_an_error() {
        let cube = cube_from_fn(2, 2, 2, |_, _, b| if b == 0 { 0.0 } else { 1.0 });
        assert!(matches!(
            estimate_sensitivity(&cube, None),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn normalize_sensitivity_identity_and_scaling() {
        let cube = cube_from_fn(2, 2, 2, |r, c, b| 0.1 * (1 + r + c + b) as f64);
        let ones = SpectralSensitivity::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(normalize_sensitivity(&cube, &ones).unwrap(), cube);

        let w = SpectralSensitivity::new(vec![0.5, 1.0]).unwrap();
        let out = normalize_sensitivity(&cube, &w).unwrap();
        for (o, i) in out.band(0).iter().zip(cube.band(0)) {
            assert!((o - i * 2.0).abs() < 1e-6);
        }
        assert_eq!(out.band(1), cube.band(1));
    }

    #[test]
    fn white_reference_becomes_spectrally_flat() {
        // after normalizing by its own sensitivity estimate, every band of
        // the white reference has the same spatial mean
        let cube = cube_from_fn(8, 8, 5, |r, c, b| {
            (0.3 + 0.1 * b as f64) * (0.7 + 0.002 * (r * 8 + c) as f64)
        });
        let w = estimate_sensitivity(&cube, None).unwrap();
        let flat = normalize_sensitivity(&cube, &w).unwrap();
        let means = band_means(&flat, None).unwrap();
        let m0 = means[0];
        for m in means {
            assert!(((m - m0) / m0).abs() < 1e-6);
        }
    }

    #[test]
    fn illumination_for_constant_white_is_one() {
        let cube = cube_from_fn(4, 4, 3, |_, _, _| 0.9);
        let field = estimate_illumination(&cube, Smoothing::None).unwrap();
        assert!(field.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn illumination_halves_without_smoothing() {
        let cube = cube_from_fn(4, 8, 2, |_, c, _| if c < 4 { 0.5 } else { 1.0 });
        let field = estimate_illumination(&cube, Smoothing::None).unwrap();
        for r in 0..4 {
            for c in 0..8 {
                let expect = if c < 4 { 0.5 } else { 1.0 };
                assert!((field.values()[r * 8 + c] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn correct_illumination_inverts_multiplication() {
        let rows = 6;
        let cols = 7;
        let field_values: Vec<f64> = (0..rows * cols)
            .map(|i| 0.5 + 0.5 * (i as f64 / (rows * cols - 1) as f64))
            .collect();
        let field = IlluminationField::new(rows, cols, field_values.clone()).unwrap();
        let lit = cube_from_fn(rows, cols, 3, |r, c, _| 0.3 * field_values[r * cols + c]);
        let out = correct_illumination(&lit, &field).unwrap();
        for &v in out.data() {
            assert!((v as f64 - 0.3).abs() < 1e-6 * 0.3);
        }

        let ones = IlluminationField::new(rows, cols, vec![1.0; rows * cols]).unwrap();
        assert_eq!(correct_illumination(&lit, &ones).unwrap(), lit);
    }

    #[test]
    fn corrections_are_positively_homogeneous() {
        let cube = cube_from_fn(3, 3, 2, |r, c, b| 0.2 + 0.05 * (r + 2 * c + 3 * b) as f64);
        let scaled = cube.with_data(cube.data().iter().map(|v| v * 3.0).collect());
        let w = SpectralSensitivity::new(vec![0.7, 1.0]).unwrap();
        let a = normalize_sensitivity(&scaled, &w).unwrap();
        let b = normalize_sensitivity(&cube, &w).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y * 3.0).abs() < 1e-5);
        }
    }

    #[test]
    fn focus_stack_copies_channels_bit_exactly() {
        let h1 = cube_from_fn(3, 3, 6, |r, c, b| (100 * b + 10 * r + c) as f64);
        let h2 = cube_from_fn(3, 3, 6, |r, c, b| -((100 * b + 10 * r + c) as f64));
        let out = focus_stack(&h1, &h2, 2).unwrap();
        assert_eq!(out.band(0), h1.band(0));
        assert_eq!(out.band(1), h1.band(1));
        assert_eq!(out.band(2), h2.band(2));
        assert_eq!(out.band(5), h2.band(5));

        assert_eq!(focus_stack(&h1, &h1, 3).unwrap(), h1);
        assert!(focus_stack(&h1, &h2, 6).is_err());
        assert!(focus_stack(&h1, &h2, 0).is_err());

        let small = cube_from_fn(2, 3, 6, |_, _, _| 0.0);
        assert!(focus_stack(&h1, &small, 2).is_err());
    }

    #[test]
    fn region_restricts_the_estimate() {
        let cube = cube_from_fn(4, 4, 1, |r, _, _| if r < 2 { 1.0 } else { 0.25 });
        let region = Region {
            row: 0,
            col: 0,
            rows: 2,
            cols: 4,
        };
        let means = band_means(&cube, Some(&region)).unwrap();
        assert!((means[0] - 1.0).abs() < 1e-12);
        let bad = Region {
            row: 3,
            col: 0,
            rows: 2,
            cols: 4,
        };
        assert!(band_means(&cube, Some(&bad)).is_err());
    }

    #[test]
    fn sharpness_split_picks_crossover() {
        // h1 sharp in low bands, h2 sharp in high bands
        let noise = |r: usize, c: usize| ((r * 31 + c * 17) % 7) as f64 * 0.1;
        let h1 = cube_from_fn(16, 16, 8, |r, c, b| if b < 3 { noise(r, c) } else { 0.5 });
        let h2 = cube_from_fn(16, 16, 8, |r, c, b| if b >= 3 { noise(r, c) } else { 0.5 });
        let split = choose_split_by_sharpness(&h1, &h2).unwrap();
        assert_eq!(split, 3);
    }
}
