//! PCA projection with explained-variance retention.
//!
//! Pixels are samples and channels are variables. The fit runs a two-pass
//! mean/covariance estimate in f64 followed by a cyclic Jacobi
//! eigendecomposition, keeping the smallest number of components whose
//! cumulative explained variance reaches the requested target. A fixed sign
//! convention (largest-magnitude entry positive) makes the model
//! deterministic across runs and thread counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::FeatureStack;
use crate::{Error, Result};

/// Fitted PCA model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// Per-channel mean of the training pixels (length d).
    pub mean: Vec<f64>,
    /// Retained components, one row per component (k × d, orthonormal rows).
    pub components: Vec<Vec<f64>>,
    /// Explained variance of each retained component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Retained / total variance; always ≥ the configured target.
    pub retained_ratio: f64,
    /// The variance target the fit was asked to reach.
    pub target_variance: f64,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Number of pixel chunks used for the parallel covariance reduction; fixed
/// so results do not depend on the thread count.
const REDUCE_CHUNKS: usize = 64;

fn mean_and_covariance(stack: &FeatureStack, pixels: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = stack.channels();
    let n = pixels.len();
    let plane = stack.plane_len();
    let data = stack.data();

    let chunk = n.div_ceil(REDUCE_CHUNKS);
    let partial_sums: Vec<Vec<f64>> = pixels
        .par_chunks(chunk)
        .map(|part| {
            let mut acc = vec![0.0f64; d];
            for &p in part {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += data[c * plane + p] as f64;
                }
            }
            acc
        })
        .collect();
    let mut mean = vec![0.0f64; d];
    for part in partial_sums {
        for (m, v) in mean.iter_mut().zip(part) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // upper-triangular covariance accumulation
    let tri_len = d * (d + 1) / 2;
    let partial_cov: Vec<Vec<f64>> = pixels
        .par_chunks(chunk)
        .map(|part| {
            let mut acc = vec![0.0f64; tri_len];
            let mut centered = vec![0.0f64; d];
            for &p in part {
                for (c, x) in centered.iter_mut().enumerate() {
                    *x = data[c * plane + p] as f64 - mean[c];
                }
                let mut idx = 0;
                for i in 0..d {
                    let xi = centered[i];
                    for &xj in &centered[i..] {
                        acc[idx] += xi * xj;
                        idx += 1;
                    }
                }
            }
            acc
        })
        .collect();
    let mut tri = vec![0.0f64; tri_len];
    for part in partial_cov {
        for (t, v) in tri.iter_mut().zip(part) {
            *t += v;
        }
    }
    let denom = (n - 1).max(1) as f64;
    let mut cov = vec![0.0f64; d * d];
    let mut idx = 0;
    for i in 0..d {
        for j in i..d {
            let v = tri[idx] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
            idx += 1;
        }
    }
    (mean, cov)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as rows of the returned matrix), unsorted.
fn jacobi_eigh(mut a: Vec<f64>, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0f64; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    if d == 1 {
        return (vec![a[0]], v);
    }
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * norm.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..d {
            for j in i + 1..d {
                off += (a[i * d + j]).powi(2);
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vpk = v[p * d + k];
                    let vqk = v[q * d + k];
                    v[p * d + k] = c * vpk - s * vqk;
                    v[q * d + k] = s * vpk + c * vqk;
                }
            }
        }
    }
    let eigvals = (0..d).map(|i| a[i * d + i]).collect();
    (eigvals, v)
}

fn selected_pixels(stack: &FeatureStack, mask: Option<&[bool]>) -> Result<Vec<usize>> {
    let plane = stack.plane_len();
    match mask {
        None => Ok((0..plane).collect()),
        Some(m) => {
            if m.len() != plane {
                return Err(Error::ShapeMismatch(format!(
                    "mask holds {} entries for {} pixels",
                    m.len(),
                    plane
                )));
            }
            Ok((0..plane).filter(|&p| m[p]).collect())
        }
    }
}

/// Fit a PCA keeping the smallest component count whose cumulative variance
/// ratio reaches `target_variance`. Masked-out pixels are excluded when a
/// mask is supplied.
pub fn fit_pca(
    stack: &FeatureStack,
    target_variance: f64,
    mask: Option<&[bool]>,
) -> Result<PcaModel> {
    if !(target_variance > 0.0 && target_variance <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "variance target must be in (0, 1], got {target_variance}"
        )));
    }
    let pixels = selected_pixels(stack, mask)?;
    if pixels.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least 2 samples, got {}",
            pixels.len()
        )));
    }
    let d = stack.channels();
    let (mean, cov) = mean_and_covariance(stack, &pixels);
    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(
            "zero total variance: PCA undefined on constant data".into(),
        ));
    }

    let (eigvals, eigvecs) = jacobi_eigh(cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        eigvals[j]
            .partial_cmp(&eigvals[i])
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });

    let mut components = Vec::new();
    let mut explained = Vec::new();
    let mut cumulative = 0.0;
    for &idx in &order {
        let variance = eigvals[idx].max(0.0);
        let mut comp: Vec<f64> = (0..d).map(|k| eigvecs[idx * d + k]).collect();
        // deterministic sign: largest-magnitude entry positive
        let mut pivot = 0;
        for (k, val) in comp.iter().enumerate() {
            if val.abs() > comp[pivot].abs() {
                pivot = k;
            }
        }
        if comp[pivot] < 0.0 {
            for x in &mut comp {
                *x = -*x;
            }
        }
        components.push(comp);
        explained.push(variance);
        cumulative += variance;
        if cumulative / total >= target_variance {
            break;
        }
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: explained,
        retained_ratio: cumulative / total,
        target_variance,
    })
}

/// Project every pixel: y = components · (x − mean).
pub fn transform_pca(stack: &FeatureStack, model: &PcaModel) -> Result<FeatureStack> {
    let d = stack.channels();
    if d != model.dim() {
        return Err(Error::ShapeMismatch(format!(
            "stack has {} channels, model dimension is {}",
            d,
            model.dim()
        )));
    }
    let plane = stack.plane_len();
    let k = model.n_components();
    let data = stack.data();
    let mut out = vec![0.0f32; k * plane];
    out.par_chunks_mut(plane)
        .enumerate()
        .for_each(|(c, plane_out)| {
            let comp = &model.components[c];
            for (p, o) in plane_out.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for (j, &w) in comp.iter().enumerate() {
                    acc += w * (data[j * plane + p] as f64 - model.mean[j]);
                }
                *o = acc as f32;
            }
        });
    let names = (1..=k).map(|i| format!("pc_{i:02}")).collect();
    FeatureStack::new(stack.rows(), stack.cols(), names, out)
}

/// Map component scores back to the original channel space:
/// x̂ = mean + componentsᵀ · y. Used to check reconstruction error.
pub fn inverse_transform_pca(scores: &FeatureStack, model: &PcaModel) -> Result<FeatureStack> {
    if scores.channels() != model.n_components() {
        return Err(Error::ShapeMismatch(format!(
            "scores have {} channels, model has {} components",
            scores.channels(),
            model.n_components()
        )));
    }
    let plane = scores.plane_len();
    let d = model.dim();
    let mut out = vec![0.0f32; d * plane];
    out.par_chunks_mut(plane)
        .enumerate()
        .for_each(|(j, plane_out)| {
            for (p, o) in plane_out.iter_mut().enumerate() {
                let mut acc = model.mean[j];
                for (c, comp) in model.components.iter().enumerate() {
                    acc += comp[j] * scores.channel(c)[p] as f64;
                }
                *o = acc as f32;
            }
        });
    let names = (1..=d).map(|j| format!("rec_{j:03}")).collect();
    FeatureStack::new(scores.rows(), scores.cols(), names, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn stack_from_rows(rows_data: &[Vec<f64>]) -> FeatureStack {
        // rows_data: one Vec per sample (pixel), length d
        let n = rows_data.len();
        let d = rows_data[0].len();
        let mut data = vec![0.0f32; n * d];
        for (p, sample) in rows_data.iter().enumerate() {
            for (c, &v) in sample.iter().enumerate() {
                data[c * n + p] = v as f32;
            }
        }
        FeatureStack::new(1, n, (0..d).map(|c| format!("c{c}")).collect(), data).unwrap()
    }

    /// Axis-aligned samples whose per-channel sample variances equal `vars`
    /// and whose channels are pairwise uncorrelated.
    fn axis_aligned(vars: &[f64], n: usize) -> Vec<Vec<f64>> {
        let d = vars.len();
        assert!(n.is_multiple_of(1 << d), "n must be a multiple of 2^d");
        (0..n)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let a = (vars[j] * (n - 1) as f64 / n as f64).sqrt();
                        if (i >> j) & 1 == 0 {
                            a
                        } else {
                            -a
                        }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn rank_one_line_needs_one_component() {
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let x = i as f64 / 10.0 - 2.5;
                vec![x, 2.0 * x]
            })
            .collect();
        let stack = stack_from_rows(&pts);
        let model = fit_pca(&stack, 0.999, None).unwrap();
        assert_eq!(model.n_components(), 1);
        assert!((model.retained_ratio - 1.0).abs() < 1e-9);

        // the single channel is the signed coordinate along the line
        let scores = transform_pca(&stack, &model).unwrap();
        let norm = (1.0f64 + 4.0).sqrt();
        assert!((model.components[0][0] - 1.0 / norm).abs() < 1e-9);
        assert!((model.components[0][1] - 2.0 / norm).abs() < 1e-9);
        for (p, pt) in pts.iter().enumerate() {
            let expect = (pt[0] - model.mean[0]) / norm + 2.0 * (pt[1] - model.mean[1]) / norm;
            assert!((scores.channel(0)[p] as f64 - expect).abs() < 1e-4);
        }
    }

    #[test]
    fn known_variances_select_two_components() {
        let pts = axis_aligned(&[10.0, 1.0, 1e-6], 64);
        let stack = stack_from_rows(&pts);
        let model = fit_pca(&stack, 0.999, None).unwrap();
        assert_eq!(model.n_components(), 2);
        // eigenvalues reproduce the constructed variances
        assert!(((model.explained_variance[0] - 10.0) / 10.0).abs() < 1e-6);
        assert!((model.explained_variance[1] - 1.0).abs() < 1e-6);
        assert!(model.retained_ratio >= 0.999);
        // components orthonormal
        for (i, a) in model.components.iter().enumerate() {
            for (j, b) in model.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn isotropic_gaussian_keeps_all_axes() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..3000)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        let u1: f64 = rng.random::<f64>().max(1e-12);
                        let u2: f64 = rng.random();
                        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                    })
                    .collect()
            })
            .collect();
        let stack = stack_from_rows(&pts);
        let model = fit_pca(&stack, 0.999, None).unwrap();
        assert_eq!(model.n_components(), 3);
    }

    #[test]
    fn transform_of_mean_is_zero_and_reconstruction_bounded() {
        let pts = axis_aligned(&[4.0, 0.25, 0.01], 128);
        let stack = stack_from_rows(&pts);
        let target = 0.99;
        let model = fit_pca(&stack, target, None).unwrap();

        let mean_stack = stack_from_rows(&[model.mean.clone(), model.mean.clone()]);
        let scores = transform_pca(&mean_stack, &model).unwrap();
        for c in 0..scores.channels() {
            assert!(scores.channel(c)[0].abs() < 1e-5);
        }

        let scores = transform_pca(&stack, &model).unwrap();
        let rec = inverse_transform_pca(&scores, &model).unwrap();
        let mut err = 0.0f64;
        let mut total = 0.0f64;
        for (p, pt) in pts.iter().enumerate() {
            for (c, &v) in pt.iter().enumerate() {
                let centered = v - model.mean[c];
                total += centered * centered;
                let e = rec.channel(c)[p] as f64 - v;
                err += e * e;
            }
        }
        assert!(err / total <= (1.0 - target) + 1e-6);
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        let flat = stack_from_rows(&vec![vec![1.0, 1.0]; 10]);
        assert!(matches!(
            fit_pca(&flat, 0.999, None),
            Err(Error::Degenerate(_))
        ));

        let pts = axis_aligned(&[1.0, 1.0], 8);
        let stack = stack_from_rows(&pts);
        assert!(fit_pca(&stack, 0.0, None).is_err());
        assert!(fit_pca(&stack, 1.5, None).is_err());

        let mask = vec![false; 8];
        assert!(fit_pca(&stack, 0.9, Some(&mask)).is_err());

        let model = fit_pca(&stack, 0.9, None).unwrap();
        let other = stack_from_rows(&axis_aligned(&[1.0, 1.0, 1.0], 8));
        assert!(transform_pca(&other, &model).is_err());
    }

    #[test]
    fn model_serializes_to_json() {
        let pts = axis_aligned(&[2.0, 0.5], 16);
        let model = fit_pca(&stack_from_rows(&pts), 0.999, None).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: PcaModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn deterministic_and_decorrelated() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..512)
            .map(|_| {
                let base: f64 = rng.random();
                (0..6)
                    .map(|j| base * j as f64 + rng.random::<f64>())
                    .collect()
            })
            .collect();
        let stack = stack_from_rows(&pts);
        let a = fit_pca(&stack, 0.999, None).unwrap();
        let b = fit_pca(&stack, 0.999, None).unwrap();
        assert_eq!(a, b);
        let ta = transform_pca(&stack, &a).unwrap();
        let tb = transform_pca(&stack, &b).unwrap();
        assert_eq!(ta.data(), tb.data());

        // transformed channels pairwise decorrelated relative to their scale
        let n = stack.plane_len() as f64;
        for i in 0..a.n_components() {
            for j in i + 1..a.n_components() {
                let ci = ta.channel(i);
                let cj = ta.channel(j);
                let mi: f64 = ci.iter().map(|&v| v as f64).sum::<f64>() / n;
                let mj: f64 = cj.iter().map(|&v| v as f64).sum::<f64>() / n;
                let mut cov = 0.0;
                for p in 0..ci.len() {
                    cov += (ci[p] as f64 - mi) * (cj[p] as f64 - mj);
                }
                cov /= n - 1.0;
                let rel = cov / (a.explained_variance[i] * a.explained_variance[j]).sqrt();
                assert!(rel.abs() < 1e-3, "channels {i},{j} correlate: {rel}");
            }
        }
    }
}
