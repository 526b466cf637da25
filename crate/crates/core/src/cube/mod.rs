//! Hyperspectral cube data model, ENVI-style file I/O, simulated RGB and
//! feature-stack concatenation.
//!
//! A [`HsiCube`] stores reflectance band-sequentially (all of band 0, then
//! all of band 1, ...), the same layout the on-disk format uses. Cubes are
//! immutable once built and safe to share across parallel workers.

mod envi;

pub use envi::{load_cube, save_cube};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// 3-D reflectance array (rows × cols × bands) with optional per-band
/// wavelengths in nanometres.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    rows: usize,
    cols: usize,
    bands: usize,
    data: Vec<f32>,
    wavelengths: Option<Vec<f64>>,
}

impl HsiCube {
    /// Build a cube from band-sequential data, validating the invariants:
    /// positive dimensions, `data.len() == rows·cols·bands`, and strictly
    /// increasing wavelengths of length `bands` when present.
    pub fn new(
        rows: usize,
        cols: usize,
        bands: usize,
        data: Vec<f32>,
        wavelengths: Option<Vec<f64>>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::InvalidInput(format!(
                "cube dimensions must be positive, got {rows}x{cols}x{bands}"
            )));
        }
        if data.len() != rows * cols * bands {
            return Err(Error::ShapeMismatch(format!(
                "cube data holds {} values, expected {}x{}x{} = {}",
                data.len(),
                rows,
                cols,
                bands,
                rows * cols * bands
            )));
        }
        if let Some(w) = &wavelengths {
            if w.len() != bands {
                return Err(Error::ShapeMismatch(format!(
                    "{} wavelengths for {} bands",
                    w.len(),
                    bands
                )));
            }
            if w.windows(2).any(|p| !(p[1] > p[0])) {
                return Err(Error::InvalidInput(
                    "wavelengths must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self {
            rows,
            cols,
            bands,
            data,
            wavelengths,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Pixels per band.
    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    /// Full band-sequential data.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    /// One band as a row-major plane. `band` is 0-based.
    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[band * n..(band + 1) * n]
    }

    pub fn value(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[band * self.plane_len() + row * self.cols + col]
    }

    /// Gather the spectrum of one pixel (by plane index) into `out`.
    pub fn spectrum_at(&self, pixel: usize, out: &mut Vec<f64>) {
        out.clear();
        let n = self.plane_len();
        out.extend((0..self.bands).map(|b| self.data[b * n + pixel] as f64));
    }

    /// Replace the data while keeping shape and wavelengths (for per-value
    /// transforms such as the radiometric corrections).
    pub(crate) fn with_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            rows: self.rows,
            cols: self.cols,
            bands: self.bands,
            data,
            wavelengths: self.wavelengths.clone(),
        }
    }
}

/// Per-pixel RGB planes in `[0,1]`, all with identical dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub rows: usize,
    pub cols: usize,
    pub r: Vec<f32>,
    pub g: Vec<f32>,
    pub b: Vec<f32>,
}

impl RgbImage {
    /// A 3-band cube in R, G, B channel order (no wavelengths).
    pub fn to_cube(&self) -> HsiCube {
        let mut data = Vec::with_capacity(3 * self.r.len());
        data.extend_from_slice(&self.r);
        data.extend_from_slice(&self.g);
        data.extend_from_slice(&self.b);
        HsiCube::new(self.rows, self.cols, 3, data, None).expect("planes share dimensions")
    }
}

/// 1-based inclusive channel ranges used to derive RGB planes from a cube.
///
/// The defaults are the reference configuration: R from channels 108–156,
/// G from 57–87, B from 24–56.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgbRanges {
    pub r: (usize, usize),
    pub g: (usize, usize),
    pub b: (usize, usize),
}

impl Default for RgbRanges {
    fn default() -> Self {
        Self {
            r: (108, 156),
            g: (57, 87),
            b: (24, 56),
        }
    }
}

impl RgbRanges {
    fn max_channel(&self) -> usize {
        self.r.1.max(self.g.1).max(self.b.1)
    }

    fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.r, self.g, self.b] {
            if lo == 0 || hi < lo {
                return Err(Error::InvalidInput(format!(
                    "RGB channel range {lo}..={hi} is not a valid 1-based range"
                )));
            }
        }
        Ok(())
    }
}

/// Simulate an RGB image by averaging the default channel ranges.
pub fn simulate_rgb(cube: &HsiCube) -> Result<RgbImage> {
    simulate_rgb_with(cube, &RgbRanges::default())
}

/// Simulate an RGB image: each plane is the per-pixel mean of the cube
/// channels in the given 1-based inclusive range.
pub fn simulate_rgb_with(cube: &HsiCube, ranges: &RgbRanges) -> Result<RgbImage> {
    ranges.validate()?;
    if cube.bands() < ranges.max_channel() {
        return Err(Error::InvalidInput(format!(
            "cube has {} bands but RGB simulation needs channel {}",
            cube.bands(),
            ranges.max_channel()
        )));
    }
    let mean_plane = |(lo, hi): (usize, usize)| -> Vec<f32> {
        let n = cube.plane_len();
        let mut acc = vec![0.0f64; n];
        for ch in lo..=hi {
            for (a, v) in acc.iter_mut().zip(cube.band(ch - 1)) {
                *a += *v as f64;
            }
        }
        let inv = 1.0 / (hi - lo + 1) as f64;
        acc.into_iter().map(|a| (a * inv) as f32).collect()
    };
    Ok(RgbImage {
        rows: cube.rows(),
        cols: cube.cols(),
        r: mean_plane(ranges.r),
        g: mean_plane(ranges.g),
        b: mean_plane(ranges.b),
    })
}

/// Named multi-channel per-pixel feature image; the common currency between
/// descriptors and the classifier. Channel-major layout, like the cube.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    rows: usize,
    cols: usize,
    names: Vec<String>,
    data: Vec<f32>,
}

impl FeatureStack {
    pub fn new(rows: usize, cols: usize, names: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || names.is_empty() {
            return Err(Error::InvalidInput(
                "feature stack needs positive dims and at least one channel".into(),
            ));
        }
        if data.len() != rows * cols * names.len() {
            return Err(Error::ShapeMismatch(format!(
                "stack data holds {} values, expected {}",
                data.len(),
                rows * cols * names.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            names,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, idx: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[idx * n..(idx + 1) * n]
    }

    /// Gather one pixel's feature vector (by plane index) into `out`.
    pub fn pixel_at(&self, pixel: usize, out: &mut Vec<f64>) {
        out.clear();
        let n = self.plane_len();
        out.extend((0..self.channels()).map(|c| self.data[c * n + pixel] as f64));
    }

    /// New stack holding a subset of channels, in the order given.
    pub fn select_channels(&self, indices: &[usize]) -> Result<FeatureStack> {
        if indices.is_empty() {
            return Err(Error::InvalidInput("empty channel selection".into()));
        }
        let n = self.plane_len();
        let mut names = Vec::with_capacity(indices.len());
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= self.channels() {
                return Err(Error::InvalidInput(format!(
                    "channel {i} out of range ({} channels)",
                    self.channels()
                )));
            }
            names.push(self.names[i].clone());
            data.extend_from_slice(self.channel(i));
        }
        FeatureStack::new(self.rows, self.cols, names, data)
    }

    /// Pack the stack into a cube (e.g. to reuse the cube file format).
    pub fn to_cube(&self) -> HsiCube {
        HsiCube::new(
            self.rows,
            self.cols,
            self.channels(),
            self.data.clone(),
            None,
        )
        .expect("stack invariants imply cube invariants")
    }
}

impl From<&HsiCube> for FeatureStack {
    fn from(cube: &HsiCube) -> Self {
        let names = (1..=cube.bands()).map(|b| format!("band_{b:03}")).collect();
        FeatureStack::new(cube.rows(), cube.cols(), names, cube.data().to_vec())
            .expect("cube invariants imply stack invariants")
    }
}

impl From<&RgbImage> for FeatureStack {
    fn from(rgb: &RgbImage) -> Self {
        let mut data = Vec::with_capacity(3 * rgb.r.len());
        data.extend_from_slice(&rgb.r);
        data.extend_from_slice(&rgb.g);
        data.extend_from_slice(&rgb.b);
        FeatureStack::new(
            rgb.rows,
            rgb.cols,
            vec!["r".into(), "g".into(), "b".into()],
            data,
        )
        .expect("planes share dimensions")
    }
}

/// Channel-wise concatenation of feature stacks, in argument order.
pub fn stack_features(parts: &[&FeatureStack]) -> Result<FeatureStack> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidInput("stack_features needs at least one part".into()))?;
    let (rows, cols) = (first.rows(), first.cols());
    let mut names = Vec::new();
    let mut data = Vec::new();
    for part in parts {
        if part.rows() != rows || part.cols() != cols {
            return Err(Error::ShapeMismatch(format!(
                "part is {}x{}, expected {}x{}",
                part.rows(),
                part.cols(),
                rows,
                cols
            )));
        }
        names.extend(part.names().iter().cloned());
        data.extend_from_slice(part.data());
    }
    FeatureStack::new(rows, cols, names, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_cube(rows: usize, cols: usize, bands: usize) -> HsiCube {
        // band b holds constant value (b+1)/bands
        let n = rows * cols;
        let mut data = Vec::with_capacity(n * bands);
        for b in 0..bands {
            data.extend(std::iter::repeat_n((b + 1) as f32 / bands as f32, n));
        }
        HsiCube::new(rows, cols, bands, data, None).unwrap()
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(HsiCube::new(0, 1, 1, vec![], None).is_err());
        assert!(HsiCube::new(1, 1, 2, vec![0.0], None).is_err());
        assert!(HsiCube::new(1, 1, 2, vec![0.0, 1.0], Some(vec![500.0])).is_err());
        assert!(HsiCube::new(1, 1, 2, vec![0.0, 1.0], Some(vec![500.0, 400.0])).is_err());
        assert!(HsiCube::new(1, 1, 2, vec![0.0, 1.0], Some(vec![400.0, 500.0])).is_ok());
    }

    #[test]
    fn simulate_rgb_constant_cube() {
        let n = 4 * 5;
        let cube = HsiCube::new(4, 5, 160, vec![0.5; n * 160], None).unwrap();
        let rgb = simulate_rgb(&cube).unwrap();
        for v in rgb.r.iter().chain(&rgb.g).chain(&rgb.b) {
            assert!((v - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn simulate_rgb_blue_range_only() {
        let n = 3 * 3;
        let bands = 160;
        let mut data = vec![0.0f32; n * bands];
        for ch in 24..=56 {
            data[(ch - 1) * n..ch * n].fill(1.0);
        }
        let cube = HsiCube::new(3, 3, bands, data, None).unwrap();
        let rgb = simulate_rgb(&cube).unwrap();
        assert!(rgb.b.iter().all(|&v| (v - 1.0).abs() < 1e-7));
        assert!(rgb.r.iter().all(|&v| v == 0.0));
        assert!(rgb.g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn simulate_rgb_channel_ramp_mean() {
        // channel c holds c/258: plane means are arithmetic-series means
        let cube = ramp_cube(2, 2, 258);
        let rgb = simulate_rgb(&cube).unwrap();
        // mean of {108..156}/258 = (108+156)/2/258 = 132/258
        let expect_r = 132.0 / 258.0;
        let expect_g = 72.0 / 258.0;
        let expect_b = 40.0 / 258.0;
        assert!((rgb.r[0] as f64 - expect_r).abs() < 1e-6);
        assert!((rgb.g[0] as f64 - expect_g).abs() < 1e-6);
        assert!((rgb.b[0] as f64 - expect_b).abs() < 1e-6);
    }

    #[test]
    fn simulate_rgb_too_few_bands() {
        let cube = ramp_cube(2, 2, 100);
        assert!(simulate_rgb(&cube).is_err());
    }

    #[test]
    fn simulate_rgb_commutes_with_scaling() {
        let cube = ramp_cube(3, 4, 160);
        let scaled = cube.with_data(cube.data().iter().map(|v| v * 0.25).collect());
        let a = simulate_rgb(&cube).unwrap();
        let b = simulate_rgb(&scaled).unwrap();
        for (x, y) in a.r.iter().zip(&b.r) {
            assert!((x * 0.25 - y).abs() < 1e-7);
        }
    }

    #[test]
    fn stack_features_counts_and_errors() {
        let cube = ramp_cube(2, 3, 4);
        let base = FeatureStack::from(&cube);
        let single = stack_features(&[&base]).unwrap();
        assert_eq!(single, base);

        let both = stack_features(&[&base, &base]).unwrap();
        assert_eq!(both.channels(), 8);
        assert_eq!(both.channel(5), base.channel(1));

        let other = ramp_cube(3, 3, 4);
        let other = FeatureStack::from(&other);
        assert!(stack_features(&[&base, &other]).is_err());
        assert!(stack_features(&[]).is_err());
    }

    #[test]
    fn select_channels_picks_in_order() {
        let cube = ramp_cube(2, 2, 5);
        let stack = FeatureStack::from(&cube);
        let sel = stack.select_channels(&[4, 0]).unwrap();
        assert_eq!(
            sel.names(),
            &["band_005".to_string(), "band_001".to_string()]
        );
        assert_eq!(sel.channel(0), stack.channel(4));
        assert!(stack.select_channels(&[9]).is_err());
    }

    proptest! {
        #[test]
        fn stacking_preserves_total_channels(parts in prop::collection::vec(1usize..5, 1..4)) {
            let stacks: Vec<FeatureStack> = parts
                .iter()
                .map(|&c| FeatureStack::from(&ramp_cube(3, 2, c)))
                .collect();
            let refs: Vec<&FeatureStack> = stacks.iter().collect();
            let out = stack_features(&refs).unwrap();
            prop_assert_eq!(out.channels(), parts.iter().sum::<usize>());
        }
    }
}
