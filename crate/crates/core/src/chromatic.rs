//! Hyper-hue / saturation / intensity for n-dimensional pixels.
//!
//! The achromatic axis of n-dimensional color space is the (1,…,1)
//! direction; the chromatic hyperplane P is its orthogonal complement
//! through the origin. A pixel's hyper-hue is the unit direction of its
//! projection onto P, its saturation is max − min of the band values, and
//! its intensity is the band mean. Hue is invariant under positive scaling
//! and achromatic offsets of the spectrum, which is what makes it robust to
//! illumination and material-coverage variation.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use crate::cube::{FeatureStack, HsiCube};
use crate::{Error, Result};

/// Default ‖c‖ threshold below which a pixel is flagged achromatic.
pub const ACHROMATIC_EPSILON: f64 = 1e-12;

/// Orthonormal basis of the chromatic hyperplane for dimension `n`:
/// `n − 1` unit vectors, pairwise perpendicular and orthogonal to (1,…,1).
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaticBasis {
    n: usize,
    vectors: Vec<Vec<f64>>,
    achromatic_axis: Vec<f64>,
}

impl ChromaticBasis {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// The spanning vectors u_1 … u_{n−1}.
    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Unit achromatic axis (1,…,1)/√n.
    pub fn achromatic_axis(&self) -> &[f64] {
        &self.achromatic_axis
    }

    /// Shared, cached basis for a dimension (built at most once per run).
    pub fn for_dim(n: usize) -> Result<Arc<ChromaticBasis>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<ChromaticBasis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().expect("basis cache poisoned");
        if let Some(b) = map.get(&n) {
            return Ok(b.clone());
        }
        let basis = Arc::new(build_basis(n)?);
        map.insert(n, basis.clone());
        Ok(basis)
    }
}

/// Build the chromatic basis for dimension `n ≥ 2`.
///
/// Vector u_i has its first i−1 entries zero, followed by m = n−i+1 nonzero
/// entries: the first equals (m−1)/√(m(m−1)) and the remaining m−1 entries
/// equal −1/√(m(m−1)).
pub fn build_basis(n: usize) -> Result<ChromaticBasis> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "chromatic basis needs dimension >= 2, got {n}"
        )));
    }
    let mut vectors = Vec::with_capacity(n - 1);
    for i in 1..n {
        let m = (n - i + 1) as f64;
        let norm = (m * (m - 1.0)).sqrt();
        let mut u = vec![0.0; n];
        u[i - 1] = (m - 1.0) / norm;
        for e in u.iter_mut().skip(i) {
            *e = -1.0 / norm;
        }
        vectors.push(u);
    }
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    Ok(ChromaticBasis {
        n,
        vectors,
        achromatic_axis: vec![inv_sqrt_n; n],
    })
}

/// Project a pixel onto the chromatic hyperplane by the explicit basis sum
/// c = Σ (x·u_i) u_i.
pub fn project_chromatic(x: &[f64], basis: &ChromaticBasis) -> Result<Vec<f64>> {
    if x.len() != basis.dim() {
        return Err(Error::ShapeMismatch(format!(
            "pixel has {} entries, basis dimension is {}",
            x.len(),
            basis.dim()
        )));
    }
    let mut c = vec![0.0; x.len()];
    project_into(x, basis, &mut c);
    Ok(c)
}

/// Inner projection loop; `u_i` has i−1 leading zeros, which the loops skip.
fn project_into(x: &[f64], basis: &ChromaticBasis, c: &mut [f64]) {
    c.fill(0.0);
    for (i, u) in basis.vectors().iter().enumerate() {
        let start = i; // u[..i] == 0
        let mut dot = 0.0;
        for (uv, xv) in u[start..].iter().zip(&x[start..]) {
            dot += uv * xv;
        }
        for (cv, uv) in c[start..].iter_mut().zip(&u[start..]) {
            *cv += dot * uv;
        }
    }
}

/// Hyper-hue / saturation / intensity of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiPixel {
    /// Unit hue vector in the chromatic plane; all zeros when achromatic.
    pub hue: Vec<f64>,
    /// max − min of the band values.
    pub saturation: f64,
    /// Band mean.
    pub intensity: f64,
    /// True when ‖c‖ fell below the achromatic threshold.
    pub achromatic: bool,
}

/// Transform one pixel. `eps` is the achromatic threshold on ‖c‖.
pub fn hsi_pixel(x: &[f64], basis: &ChromaticBasis, eps: f64) -> Result<HsiPixel> {
    let mut c = project_chromatic(x, basis)?;
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let achromatic = norm < eps;
    if achromatic {
        c.fill(0.0);
    } else {
        for v in &mut c {
            *v /= norm;
        }
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in x {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    Ok(HsiPixel {
        hue: c,
        saturation: max - min,
        intensity: sum / x.len() as f64,
        achromatic,
    })
}

/// Per-pixel hyper-hue/S/I of a whole cube, as an (n+2)-channel stack:
/// n hue channels, then `saturation`, then `intensity`.
pub fn hsi_transform(cube: &HsiCube, eps: f64) -> Result<FeatureStack> {
    let n = cube.bands();
    let basis = ChromaticBasis::for_dim(n)?;
    let plane = cube.plane_len();
    let width = n + 2;

    // pixel-major staging buffer, transposed to channel-major at the end
    let mut staged = vec![0.0f32; plane * width];
    staged
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(p, out)| {
            let mut x = Vec::with_capacity(n);
            cube.spectrum_at(p, &mut x);
            let mut c = vec![0.0; n];
            project_into(&x, &basis, &mut c);
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < eps {
                out[..n].fill(0.0);
            } else {
                for (o, v) in out[..n].iter_mut().zip(&c) {
                    *o = (v / norm) as f32;
                }
            }
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            let mut sum = 0.0;
            for &v in &x {
                min = min.min(v);
                max = max.max(v);
                sum += v;
            }
            out[n] = (max - min) as f32;
            out[n + 1] = (sum / n as f64) as f32;
        });

    let mut data = vec![0.0f32; plane * width];
    for p in 0..plane {
        for ch in 0..width {
            data[ch * plane + p] = staged[p * width + ch];
        }
    }
    let mut names: Vec<String> = (1..=n).map(|b| format!("hue_{b:03}")).collect();
    names.push("saturation".into());
    names.push("intensity".into());
    FeatureStack::new(cube.rows(), cube.cols(), names, data)
}

/// Only the n hue channels of [`hsi_transform`].
pub fn hue_stack(cube: &HsiCube, eps: f64) -> Result<FeatureStack> {
    let full = hsi_transform(cube, eps)?;
    let indices: Vec<usize> = (0..cube.bands()).collect();
    full.select_channels(&indices)
}
