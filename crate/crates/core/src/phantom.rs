//! Synthetic layered-drawing phantom with exact ground truth.
//!
//! The generator paints random chalk, diluted-chalk and ink strokes on a
//! paper-like substrate, composes per-band reflectance from piecewise-linear
//! material curves, then applies the acquisition effects the pipeline is
//! supposed to undo: an uneven illumination field, a spectral sensitivity
//! curve, additive sensor noise, and a pair of differently focused captures
//! (H1 sharp in the blue, H2 sharp in the red) with per-band defocus blur.
//!
//! Two modelling choices matter for realism of the classification task:
//!
//! - Stroke pixels carry a per-pixel *coverage* factor (deposit thickness),
//!   so each material blends with the substrate by a varying amount. In
//!   white-normalized space such blends keep the material's chromatic
//!   direction while spreading its intensity, which is exactly why
//!   raw-intensity features struggle and hue-based features do not.
//! - Diluted chalk is a thin wash: its opacity falls off toward the
//!   near-infrared, where the chalk layer becomes transparent and the
//!   substrate shows through. Its blend weight therefore equals the
//!   midpoint in the visible range but drops beyond ~700 nm, giving the
//!   wash its own chromatic direction.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::filter;
use crate::label::LabelMap;
use crate::seed;
use crate::{Error, Result};

/// Reflectance as a piecewise-linear function of wavelength (nm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialCurve {
    /// (wavelength nm, reflectance) control points, strictly increasing nm.
    pub points: Vec<(f64, f64)>,
}

impl MaterialCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("material curve needs points".into()));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidInput(
                "material curve wavelengths must increase".into(),
            ));
        }
        if points.iter().any(|&(_, r)| !(0.0..=1.0).contains(&r)) {
            return Err(Error::InvalidInput("reflectance must lie in [0, 1]".into()));
        }
        Ok(Self { points })
    }

    /// Linear interpolation, clamped at both ends.
    pub fn sample(&self, nm: f64) -> f64 {
        let pts = &self.points;
        if nm <= pts[0].0 {
            return pts[0].1;
        }
        if nm >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        let i = pts.partition_point(|&(w, _)| w <= nm);
        let (w0, r0) = pts[i - 1];
        let (w1, r1) = pts[i];
        r0 + (r1 - r0) * (nm - w0) / (w1 - w0)
    }
}

/// The four material curves of the phantom scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Materials {
    pub substrate: MaterialCurve,
    pub red_chalk: MaterialCurve,
    pub diluted_chalk: MaterialCurve,
    pub ink: MaterialCurve,
}

/// Default reflectance curves.
///
/// The substrate is bright with a gentle warm slope; red chalk stays at or
/// below 0.25 up to ~580 nm and rises past 0.6 into the red/NIR; iron-gall
/// ink is dark with a slight NIR rise. Diluted chalk is a thin wash of the
/// same pigment: an even chalk/substrate blend in the short visible range,
/// but with the iron-oxide absorption edge washed out (the substrate shows
/// through around 580–660 nm, shifting the apparent edge) and increasing
/// transparency toward the NIR. Its blend weight is [`diluted_blend_weight`].
pub fn default_materials() -> Materials {
    let substrate = MaterialCurve::new(vec![
        (400.0, 0.78),
        (550.0, 0.84),
        (700.0, 0.87),
        (1000.0, 0.90),
    ])
    .expect("static curve");
    let red_chalk = MaterialCurve::new(vec![
        (400.0, 0.15),
        (560.0, 0.20),
        (580.0, 0.25),
        (640.0, 0.50),
        (700.0, 0.60),
        (850.0, 0.64),
        (1000.0, 0.66),
    ])
    .expect("static curve");
    let ink = MaterialCurve::new(vec![(400.0, 0.04), (700.0, 0.10), (1000.0, 0.18)])
        .expect("static curve");

    let knots = [
        400.0, 550.0, 560.0, 580.0, 600.0, 620.0, 640.0, 660.0, 680.0, 700.0, 760.0, 820.0, 880.0,
        940.0, 1000.0,
    ];
    let diluted_points: Vec<(f64, f64)> = knots
        .iter()
        .map(|&nm| {
            let w = diluted_blend_weight(nm);
            (
                nm,
                w * red_chalk.sample(nm) + (1.0 - w) * substrate.sample(nm),
            )
        })
        .collect();
    let diluted_chalk = MaterialCurve::new(diluted_points).expect("static curve");

    Materials {
        substrate,
        red_chalk,
        diluted_chalk,
        ink,
    }
}

/// Chalk fraction of the diluted wash as a function of wavelength: 0.5 in
/// the short visible range, dipping to 0.32 across the 580–660 nm
/// absorption edge (the thin wash is lighter and its edge sits earlier),
/// and falling to 0.25 at 1000 nm where the wash turns transparent.
pub fn diluted_blend_weight(nm: f64) -> f64 {
    const EDGE: [(f64, f64); 7] = [
        (400.0, 0.42),
        (560.0, 0.50),
        (595.0, 0.34),
        (650.0, 0.34),
        (680.0, 0.50),
        (700.0, 0.50),
        (1000.0, 0.32),
    ];
    if nm <= EDGE[0].0 {
        return EDGE[0].1;
    }
    if nm >= EDGE[EDGE.len() - 1].0 {
        return EDGE[EDGE.len() - 1].1;
    }
    let i = EDGE.partition_point(|&(w, _)| w <= nm);
    let (w0, k0) = EDGE[i - 1];
    let (w1, k1) = EDGE[i];
    k0 + (k1 - k0) * (nm - w0) / (w1 - w0)
}

/// Stroke geometry and coverage statistics of one drawing layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokeLayer {
    /// Number of strokes.
    pub strokes: usize,
    /// Stroke width range in pixels (diameter).
    pub width: (f64, f64),
    /// Lower bound of the per-pixel coverage jitter; 1.0 disables jitter.
    pub min_coverage: f64,
    /// Width in pixels of the soft falloff at stroke borders; 0 for hard
    /// edges.
    pub edge_softness: f64,
}

/// Linear illumination gradient; `gradient` is the total falloff across the
/// image (0 = flat field).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IlluminationSpec {
    pub gradient: f64,
    /// Relative x/y weighting of the gradient direction.
    pub axis: (f64, f64),
}

/// Bell-shaped spectral sensitivity: `floor + (1-floor)·exp(-((t-peak)/width)²)`
/// over the normalized band position t, rescaled so the maximum is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySpec {
    pub floor: f64,
    pub peak_fraction: f64,
    pub width_fraction: f64,
}

/// Focus-shift model for the two captures: per-band Gaussian blur with
/// σ(b) = min(max_sigma, blur_per_channel·|b − focus|).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusSpec {
    /// 1-based channel in focus in H1 (blue range).
    pub h1_focus_channel: usize,
    /// 1-based channel in focus in H2 (red range).
    pub h2_focus_channel: usize,
    pub blur_per_channel: f64,
    pub max_sigma: f64,
}

/// Full phantom description; serializable so experiments can pin it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    /// Wavelength range mapped linearly onto the bands.
    pub wavelength_range: (f64, f64),
    pub chalk_layer: StrokeLayer,
    pub diluted_layer: StrokeLayer,
    pub ink_layer: StrokeLayer,
    pub materials: Materials,
    pub illumination: IlluminationSpec,
    pub sensitivity: SensitivitySpec,
    pub focus: FocusSpec,
    /// Standard deviation of the additive Gaussian sensor noise.
    pub noise_sd: f64,
    /// Amplitude of the multiplicative paper-texture field: every scene
    /// pixel's spectrum is scaled by a factor in [1−a, 1+a]. Texture scales
    /// the whole spectrum, so hue is unaffected while absolute intensities
    /// smear; the white reference is a separate uniform target and carries
    /// no texture.
    pub texture_amplitude: f64,
    /// Amplitude of the spectrally neutral soiling offset: every scene
    /// pixel's reflectance is shifted by a constant in [−a, a] across all
    /// bands (dirt, paper-tone variation). Neutral offsets barely touch the
    /// chromatic direction but displace every absolute intensity.
    pub soiling_amplitude: f64,
    pub seed: u64,
    /// When set, chalk pixels crossed by ink are labeled as their own
    /// "chalk under ink" class instead of plain ink, and diluted strokes
    /// count as red chalk.
    pub overlay_labeling: bool,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            rows: 200,
            cols: 200,
            bands: 258,
            wavelength_range: (400.0, 1000.0),
            chalk_layer: StrokeLayer {
                strokes: 8,
                width: (4.0, 8.0),
                min_coverage: 0.68,
                edge_softness: 1.5,
            },
            diluted_layer: StrokeLayer {
                strokes: 8,
                width: (4.0, 8.0),
                min_coverage: 0.72,
                edge_softness: 1.5,
            },
            ink_layer: StrokeLayer {
                strokes: 8,
                width: (3.0, 6.0),
                min_coverage: 0.70,
                edge_softness: 1.0,
            },
            materials: default_materials(),
            illumination: IlluminationSpec {
                gradient: 0.55,
                axis: (0.6, 0.4),
            },
            sensitivity: SensitivitySpec {
                floor: 0.55,
                peak_fraction: 0.45,
                width_fraction: 0.35,
            },
            focus: FocusSpec {
                h1_focus_channel: 41,
                h2_focus_channel: 200,
                blur_per_channel: 0.012,
                max_sigma: 1.8,
            },
            noise_sd: 0.001,
            texture_amplitude: 0.13,
            soiling_amplitude: 0.02,
            seed: 42,
            overlay_labeling: false,
        }
    }
}

impl PhantomSpec {
    fn validate(&self) -> Result<()> {
        if self.rows < 8 || self.cols < 8 {
            return Err(Error::InvalidInput(
                "phantom needs at least 8x8 pixels".into(),
            ));
        }
        if self.bands < 2 {
            return Err(Error::InvalidInput("phantom needs at least 2 bands".into()));
        }
        if !(self.wavelength_range.1 > self.wavelength_range.0) {
            return Err(Error::InvalidInput("empty wavelength range".into()));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::InvalidInput("negative noise SD".into()));
        }
        if !(0.0..1.0).contains(&self.texture_amplitude) {
            return Err(Error::InvalidInput(
                "texture amplitude must lie in [0, 1)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.soiling_amplitude) {
            return Err(Error::InvalidInput(
                "soiling amplitude must lie in [0, 1)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.illumination.gradient) {
            return Err(Error::InvalidInput("gradient must lie in [0, 1)".into()));
        }
        for layer in [&self.chalk_layer, &self.diluted_layer, &self.ink_layer] {
            if !(layer.min_coverage > 0.0 && layer.min_coverage <= 1.0) {
                return Err(Error::InvalidInput(
                    "min_coverage must lie in (0, 1]".into(),
                ));
            }
            if !(layer.width.0 > 0.0 && layer.width.1 >= layer.width.0) {
                return Err(Error::InvalidInput("bad stroke width range".into()));
            }
        }
        for focus in [self.focus.h1_focus_channel, self.focus.h2_focus_channel] {
            if focus == 0 || focus > self.bands {
                return Err(Error::InvalidInput(format!(
                    "focus channel {focus} outside 1..={}",
                    self.bands
                )));
            }
        }
        if !(self.sensitivity.floor > 0.0 && self.sensitivity.floor <= 1.0) {
            return Err(Error::InvalidInput(
                "sensitivity floor must be in (0,1]".into(),
            ));
        }
        Ok(())
    }

    /// Wavelength of a 0-based band index.
    pub fn wavelength(&self, band: usize) -> f64 {
        let (lo, hi) = self.wavelength_range;
        lo + (hi - lo) * band as f64 / (self.bands - 1) as f64
    }
}

/// Everything one acquisition produces: the in-focus cube, the two focus-
/// shifted captures, the white reference and the ground truth.
#[derive(Debug, Clone)]
pub struct PhantomOutput {
    pub clean: HsiCube,
    pub h1: HsiCube,
    pub h2: HsiCube,
    pub white_ref: HsiCube,
    pub ground_truth: LabelMap,
}

// rng sub-stream ids
const STREAM_CHALK: u64 = 1;
const STREAM_DILUTED: u64 = 2;
const STREAM_INK: u64 = 3;
const STREAM_JITTER_BASE: u64 = 10;
const STREAM_TEXTURE: u64 = 20;
const STREAM_SOILING: u64 = 21;
const STREAM_NOISE_BASE: u64 = 1000;

fn stamp_disc(
    profile: &mut [f32],
    rows: usize,
    cols: usize,
    cy: f64,
    cx: f64,
    radius: f64,
    soft: f64,
) {
    let r0 = ((cy - radius - 1.0).floor().max(0.0)) as usize;
    let r1 = ((cy + radius + 1.0).ceil().min(rows as f64 - 1.0)) as usize;
    let c0 = ((cx - radius - 1.0).floor().max(0.0)) as usize;
    let c1 = ((cx + radius + 1.0).ceil().min(cols as f64 - 1.0)) as usize;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let d = ((r as f64 + 0.5 - cy).powi(2) + (c as f64 + 0.5 - cx).powi(2)).sqrt();
            let tau = if soft > 0.0 {
                ((radius - d) / soft).clamp(0.0, 1.0)
            } else if d <= radius {
                1.0
            } else {
                0.0
            };
            let cell = &mut profile[r * cols + c];
            if tau as f32 > *cell {
                *cell = tau as f32;
            }
        }
    }
}

/// Rasterize one layer of random quadratic strokes into a coverage profile.
fn stamp_layer(rng: &mut ChaCha12Rng, rows: usize, cols: usize, layer: &StrokeLayer) -> Vec<f32> {
    let mut profile = vec![0.0f32; rows * cols];
    let margin = 0.06 * rows.min(cols) as f64;
    let min_len = 0.35 * rows.min(cols) as f64;
    for _ in 0..layer.strokes {
        let mut a = (0.0, 0.0);
        let mut b = (0.0, 0.0);
        for _try in 0..64 {
            a = (
                rng.random_range(margin..rows as f64 - margin),
                rng.random_range(margin..cols as f64 - margin),
            );
            b = (
                rng.random_range(margin..rows as f64 - margin),
                rng.random_range(margin..cols as f64 - margin),
            );
            let len = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            if len >= min_len {
                break;
            }
        }
        let len = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt().max(1.0);
        let mid = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
        let perp = (-(b.1 - a.1) / len, (b.0 - a.0) / len);
        let bow = rng.random_range(-0.3..0.3) * len;
        let ctrl = (mid.0 + perp.0 * bow, mid.1 + perp.1 * bow);
        let width = rng.random_range(layer.width.0..=layer.width.1);
        let radius = width / 2.0;

        let approx_len = ((a.0 - ctrl.0).powi(2) + (a.1 - ctrl.1).powi(2)).sqrt()
            + ((ctrl.0 - b.0).powi(2) + (ctrl.1 - b.1).powi(2)).sqrt();
        let steps = (2.0 * approx_len).ceil().max(2.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let u = 1.0 - t;
            let y = u * u * a.0 + 2.0 * u * t * ctrl.0 + t * t * b.0;
            let x = u * u * a.1 + 2.0 * u * t * ctrl.1 + t * t * b.1;
            stamp_disc(&mut profile, rows, cols, y, x, radius, layer.edge_softness);
        }
    }
    profile
}

/// Per-pixel coverage jitter in [min_coverage, 1].
fn coverage_jitter(rng: &mut ChaCha12Rng, n: usize, min_coverage: f64) -> Vec<f32> {
    if min_coverage >= 1.0 {
        return vec![1.0; n];
    }
    (0..n)
        .map(|_| rng.random_range(min_coverage..=1.0) as f32)
        .collect()
}

/// One standard normal draw (Box-Muller, one value per pair).
fn normal(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn blur_sigma(focus: &FocusSpec, band: usize, focus_channel: usize) -> f64 {
    let dist = (band as f64 + 1.0 - focus_channel as f64).abs();
    (focus.blur_per_channel * dist).min(focus.max_sigma)
}

/// Generate the phantom scene.
pub fn generate(spec: &PhantomSpec) -> Result<PhantomOutput> {
    spec.validate()?;
    let rows = spec.rows;
    let cols = spec.cols;
    let bands = spec.bands;
    let plane = rows * cols;

    // stroke coverage profiles, one per layer
    let mut rng_chalk = ChaCha12Rng::seed_from_u64(seed::derive(spec.seed, STREAM_CHALK));
    let mut rng_dil = ChaCha12Rng::seed_from_u64(seed::derive(spec.seed, STREAM_DILUTED));
    let mut rng_ink = ChaCha12Rng::seed_from_u64(seed::derive(spec.seed, STREAM_INK));
    let chalk_profile = stamp_layer(&mut rng_chalk, rows, cols, &spec.chalk_layer);
    let dil_profile = stamp_layer(&mut rng_dil, rows, cols, &spec.diluted_layer);
    let ink_profile = stamp_layer(&mut rng_ink, rows, cols, &spec.ink_layer);

    // per-pixel deposit thickness
    let mut jitters = Vec::with_capacity(3);
    for (i, layer) in [&spec.chalk_layer, &spec.diluted_layer, &spec.ink_layer]
        .iter()
        .enumerate()
    {
        let mut rng =
            ChaCha12Rng::seed_from_u64(seed::derive(spec.seed, STREAM_JITTER_BASE + i as u64));
        jitters.push(coverage_jitter(&mut rng, plane, layer.min_coverage));
    }
    let coverage =
        |profile: &[f32], jitter: &[f32], p: usize| -> f64 { profile[p] as f64 * jitter[p] as f64 };

    // ground truth: topmost layer with profile >= 0.5 wins
    let (labels, class_names) = {
        let mut labels = vec![0u8; plane];
        for p in 0..plane {
            let chalk = chalk_profile[p] >= 0.5;
            let dil = dil_profile[p] >= 0.5;
            let ink = ink_profile[p] >= 0.5;
            labels[p] = if spec.overlay_labeling {
                match (ink, chalk || dil) {
                    (true, true) => 2,
                    (true, false) => 3,
                    (false, true) => 1,
                    (false, false) => 0,
                }
            } else if ink {
                3
            } else if dil {
                2
            } else if chalk {
                1
            } else {
                0
            };
        }
        let names: Vec<String> = if spec.overlay_labeling {
            vec![
                "red_chalk".into(),
                "chalk_under_ink".into(),
                "black_ink".into(),
            ]
        } else {
            vec![
                "red_chalk".into(),
                "diluted_red_chalk".into(),
                "black_ink".into(),
            ]
        };
        (labels, names)
    };
    let ground_truth = LabelMap::new(rows, cols, labels, class_names)?;

    // per-band material reflectances and acquisition curves
    let wavelengths: Vec<f64> = (0..bands).map(|b| spec.wavelength(b)).collect();
    let sub: Vec<f64> = wavelengths
        .iter()
        .map(|&w| spec.materials.substrate.sample(w))
        .collect();
    let chalk: Vec<f64> = wavelengths
        .iter()
        .map(|&w| spec.materials.red_chalk.sample(w))
        .collect();
    let dil: Vec<f64> = wavelengths
        .iter()
        .map(|&w| spec.materials.diluted_chalk.sample(w))
        .collect();
    let ink: Vec<f64> = wavelengths
        .iter()
        .map(|&w| spec.materials.ink.sample(w))
        .collect();

    let sens: Vec<f64> = {
        let mut w: Vec<f64> = (0..bands)
            .map(|b| {
                let t = b as f64 / (bands - 1) as f64;
                spec.sensitivity.floor
                    + (1.0 - spec.sensitivity.floor)
                        * (-((t - spec.sensitivity.peak_fraction)
                            / spec.sensitivity.width_fraction)
                            .powi(2))
                        .exp()
            })
            .collect();
        let max = w.iter().cloned().fold(f64::MIN, f64::max);
        for v in &mut w {
            *v /= max;
        }
        w
    };

    let field: Vec<f64> = {
        let (wx, wy) = spec.illumination.axis;
        let norm = (wx + wy).max(1e-12);
        (0..plane)
            .map(|p| {
                let r = (p / cols) as f64 / (rows - 1).max(1) as f64;
                let c = (p % cols) as f64 / (cols - 1).max(1) as f64;
                1.0 - spec.illumination.gradient * (wx * c + wy * r) / norm
            })
            .collect()
    };

    // paper texture: a per-pixel multiplicative factor on the whole spectrum
    let texture: Vec<f64> = {
        let mut rng = ChaCha12Rng::seed_from_u64(seed::derive(spec.seed, STREAM_TEXTURE));
        let amp = spec.texture_amplitude;
        (0..plane)
            .map(|_| {
                if amp == 0.0 {
                    1.0
                } else {
                    1.0 + rng.random_range(-amp..=amp)
                }
            })
            .collect()
    };

    // neutral soiling: a per-pixel reflectance offset, constant over bands
    let soiling: Vec<f64> = {
        let mut rng = ChaCha12Rng::seed_from_u64(seed::derive(spec.seed, STREAM_SOILING));
        let amp = spec.soiling_amplitude;
        (0..plane)
            .map(|_| {
                if amp == 0.0 {
                    0.0
                } else {
                    rng.random_range(-amp..=amp)
                }
            })
            .collect()
    };

    // scene reflectance per band (before illumination/sensitivity)
    let reflectance_plane = |b: usize| -> Vec<f64> {
        (0..plane)
            .map(|p| {
                let mut rho = sub[b];
                let tau_c = coverage(&chalk_profile, &jitters[0], p);
                rho = rho * (1.0 - tau_c) + chalk[b] * tau_c;
                let tau_d = coverage(&dil_profile, &jitters[1], p);
                rho = rho * (1.0 - tau_d) + dil[b] * tau_d;
                let tau_i = coverage(&ink_profile, &jitters[2], p);
                rho = rho * (1.0 - tau_i) + ink[b] * tau_i;
                rho * texture[p] + soiling[p]
            })
            .collect()
    };

    // cube ids for noise streams
    const CUBE_CLEAN: u64 = 0;
    const CUBE_H1: u64 = 1;
    const CUBE_H2: u64 = 2;
    const CUBE_WHITE: u64 = 3;

    let noisy_band = |cube_id: u64, b: usize, values: &[f64]| -> Vec<f32> {
        if spec.noise_sd == 0.0 {
            return values.iter().map(|&v| v as f32).collect();
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed::derive(
            spec.seed,
            STREAM_NOISE_BASE + cube_id * 10_000 + b as u64,
        ));
        values
            .iter()
            .map(|&v| (v + spec.noise_sd * normal(&mut rng)) as f32)
            .collect()
    };

    struct BandSet {
        clean: Vec<f32>,
        h1: Vec<f32>,
        h2: Vec<f32>,
        white: Vec<f32>,
    }

    let band_sets: Vec<BandSet> = (0..bands)
        .into_par_iter()
        .map(|b| {
            let rho = reflectance_plane(b);
            let lit: Vec<f64> = rho
                .iter()
                .zip(&field)
                .map(|(&r, &l)| r * l * sens[b])
                .collect();
            let sigma1 = blur_sigma(&spec.focus, b, spec.focus.h1_focus_channel);
            let sigma2 = blur_sigma(&spec.focus, b, spec.focus.h2_focus_channel);
            let blur1 = filter::gaussian_blur(&lit, rows, cols, sigma1);
            let blur2 = filter::gaussian_blur(&lit, rows, cols, sigma2);
            let white: Vec<f64> = field.iter().map(|&l| sub[b] * l * sens[b]).collect();
            BandSet {
                clean: noisy_band(CUBE_CLEAN, b, &lit),
                h1: noisy_band(CUBE_H1, b, &blur1),
                h2: noisy_band(CUBE_H2, b, &blur2),
                white: noisy_band(CUBE_WHITE, b, &white),
            }
        })
        .collect();

    let mut clean = Vec::with_capacity(plane * bands);
    let mut h1 = Vec::with_capacity(plane * bands);
    let mut h2 = Vec::with_capacity(plane * bands);
    let mut white = Vec::with_capacity(plane * bands);
    for set in band_sets {
        clean.extend_from_slice(&set.clean);
        h1.extend_from_slice(&set.h1);
        h2.extend_from_slice(&set.h2);
        white.extend_from_slice(&set.white);
    }

    let wl = Some(wavelengths.clone());
    Ok(PhantomOutput {
        clean: HsiCube::new(rows, cols, bands, clean, wl.clone())?,
        h1: HsiCube::new(rows, cols, bands, h1, wl.clone())?,
        h2: HsiCube::new(rows, cols, bands, h2, wl.clone())?,
        white_ref: HsiCube::new(rows, cols, bands, white, wl)?,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            rows: 48,
            cols: 48,
            bands: 24,
            focus: FocusSpec {
                h1_focus_channel: 4,
                h2_focus_channel: 20,
                blur_per_channel: 0.15,
                max_sigma: 2.0,
            },
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn default_material_shapes() {
        let m = default_materials();
        // chalk darker in the blue than in the NIR
        let spec = PhantomSpec::default();
        let chalk_30 = m.red_chalk.sample(spec.wavelength(29));
        let chalk_200 = m.red_chalk.sample(spec.wavelength(199));
        assert!(chalk_30 < chalk_200);
        // chalk low below ~580 nm, high past 700 nm
        assert!(m.red_chalk.sample(560.0) <= 0.25);
        assert!(m.red_chalk.sample(750.0) >= 0.55);

        // diluted wash: never below the chalk/substrate midpoint, equal to
        // it where the wash is optically thickest (~560-580 nm), strictly
        // above it wherever the thin layer lets the substrate through (blue
        // end, washed-out absorption edge, NIR), never reaching the
        // substrate itself
        for nm in (400..=1000).step_by(10) {
            let nm = nm as f64;
            let mid = 0.5 * (m.red_chalk.sample(nm) + m.substrate.sample(nm));
            let dil = m.diluted_chalk.sample(nm);
            assert!(dil >= mid - 1e-12, "at {nm} nm: {dil} < {mid}");
            assert!(dil < m.substrate.sample(nm));
        }
        {
            let mid = 0.5 * (m.red_chalk.sample(560.0) + m.substrate.sample(560.0));
            assert!((m.diluted_chalk.sample(560.0) - mid).abs() < 1e-12);
        }
        for nm in [400.0, 620.0, 1000.0] {
            let mid = 0.5 * (m.red_chalk.sample(nm) + m.substrate.sample(nm));
            assert!(m.diluted_chalk.sample(nm) > mid + 1e-6);
        }

        // every curve within [0, 1]
        for curve in [&m.substrate, &m.red_chalk, &m.diluted_chalk, &m.ink] {
            for nm in 380..1020 {
                let v = curve.sample(nm as f64);
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn zero_strokes_gives_pure_substrate() {
        let mut spec = small_spec();
        spec.chalk_layer.strokes = 0;
        spec.diluted_layer.strokes = 0;
        spec.ink_layer.strokes = 0;
        spec.noise_sd = 0.0;
        spec.texture_amplitude = 0.0;
        spec.soiling_amplitude = 0.0;
        let out = generate(&spec).unwrap();
        assert!(out.ground_truth.labels().iter().all(|&l| l == 0));
        // cube = substrate × field × sensitivity exactly
        for b in [0, spec.bands / 2, spec.bands - 1] {
            let rho = spec.materials.substrate.sample(spec.wavelength(b));
            let plane = out.clean.band(b);
            let max = plane.iter().cloned().fold(f32::MIN, f32::max) as f64;
            // brightest pixel sits where the field is 1
            assert!((max - rho * sens_at(&spec, b)).abs() < 1e-6);
        }
        // white reference equals the clean cube in a stroke-free scene
        assert_eq!(out.white_ref.data(), out.clean.data());
    }

    fn sens_at(spec: &PhantomSpec, b: usize) -> f64 {
        let t = b as f64 / (spec.bands - 1) as f64;
        let raw = |x: f64| {
            spec.sensitivity.floor
                + (1.0 - spec.sensitivity.floor)
                    * (-((x - spec.sensitivity.peak_fraction) / spec.sensitivity.width_fraction)
                        .powi(2))
                    .exp()
        };
        let max = (0..spec.bands)
            .map(|i| raw(i as f64 / (spec.bands - 1) as f64))
            .fold(f64::MIN, f64::max);
        raw(t) / max
    }

    #[test]
    fn noiseless_flat_scene_reproduces_material_curves() {
        let mut spec = small_spec();
        spec.noise_sd = 0.0;
        spec.texture_amplitude = 0.0;
        spec.soiling_amplitude = 0.0;
        spec.illumination.gradient = 0.0;
        spec.sensitivity.floor = 1.0; // flat sensitivity
        for layer in [
            &mut spec.chalk_layer,
            &mut spec.diluted_layer,
            &mut spec.ink_layer,
        ] {
            layer.min_coverage = 1.0;
            layer.edge_softness = 0.0;
        }
        let out = generate(&spec).unwrap();
        let counts = out.ground_truth.pixel_counts();
        assert!(counts[1] > 0 && counts[2] > 0 && counts[3] > 0);
        // with hard edges and full coverage, the label is always the topmost
        // material and that material fully covers the pixel
        let mut spectrum = Vec::new();
        for p in 0..spec.rows * spec.cols {
            let label = out.ground_truth.labels()[p];
            let curve = match label {
                1 => &spec.materials.red_chalk,
                2 => &spec.materials.diluted_chalk,
                3 => &spec.materials.ink,
                _ => continue,
            };
            out.clean.spectrum_at(p, &mut spectrum);
            for (b, &v) in spectrum.iter().enumerate() {
                let expect = curve.sample(spec.wavelength(b));
                assert!(
                    (v - expect).abs() < 1e-5,
                    "label {label} band {b}: {v} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn same_seed_reproduces_everything() {
        let spec = small_spec();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.clean.data(), b.clean.data());
        assert_eq!(a.h1.data(), b.h1.data());
        assert_eq!(a.h2.data(), b.h2.data());
        assert_eq!(a.white_ref.data(), b.white_ref.data());
        assert_eq!(a.ground_truth, b.ground_truth);

        let mut other = spec.clone();
        other.seed = 43;
        let c = generate(&other).unwrap();
        assert_ne!(a.clean.data(), c.clean.data());
    }

    #[test]
    fn all_classes_present_with_defaults() {
        // the default spec drives the reference experiments; each class must
        // have enough pixels for the 100-per-class protocol
        let out = generate(&PhantomSpec::default()).unwrap();
        let counts = out.ground_truth.pixel_counts();
        for c in 1..=3 {
            assert!(counts[c] > 300, "class {c} has only {} pixels", counts[c]);
        }
    }

    #[test]
    fn overlay_labeling_marks_chalk_under_ink() {
        let mut spec = small_spec();
        spec.overlay_labeling = true;
        spec.chalk_layer.strokes = 12;
        spec.ink_layer.strokes = 12;
        let out = generate(&spec).unwrap();
        assert_eq!(out.ground_truth.class_names()[1], "chalk_under_ink");
        let counts = out.ground_truth.pixel_counts();
        // with that many strokes the layers cross somewhere
        assert!(counts[2] > 0, "no overlay pixels: {counts:?}");
    }

    #[test]
    fn wavelengths_attached_and_increasing() {
        let out = generate(&small_spec()).unwrap();
        let wl = out.clean.wavelengths().unwrap();
        assert_eq!(wl.len(), 24);
        assert!(wl.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(wl[0], 400.0);
        assert_eq!(wl[23], 1000.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = small_spec();
        spec.noise_sd = -1.0;
        assert!(generate(&spec).is_err());
        let mut spec = small_spec();
        spec.focus.h1_focus_channel = 0;
        assert!(generate(&spec).is_err());
        let mut spec = small_spec();
        spec.illumination.gradient = 1.0;
        assert!(generate(&spec).is_err());
    }
}
