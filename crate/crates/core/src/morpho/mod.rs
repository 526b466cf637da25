//! Attribute filters on component trees and the attribute-profile family of
//! descriptors (AP over one attribute, MAP over several, EMAP over every
//! spectral channel of a stack).
//!
//! Filtering runs on 256-level quantized channels. An attribute profile with
//! k thresholds stacks k thickenings (largest λ first), the original channel
//! and k thinnings (smallest λ first), 2k+1 channels in total; the EMAP
//! repeats this per base channel and de-quantizes each output back to the
//! channel's original value range.

pub mod reference;
mod tree;

pub use tree::{ComponentTree, Connectivity, Polarity};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::FeatureStack;
use crate::{Error, Result};

/// A 2-D channel quantized to integer gray levels in [0, 255], remembering
/// the original value range for de-quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedChannel {
    rows: usize,
    cols: usize,
    levels: Vec<u8>,
    orig_min: f32,
    orig_max: f32,
}

impl QuantizedChannel {
    /// Wrap raw levels (range bookkeeping maps level L back to L itself).
    pub fn from_levels(rows: usize, cols: usize, levels: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || levels.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} levels for {}x{}",
                levels.len(),
                rows,
                cols
            )));
        }
        Ok(Self {
            rows,
            cols,
            levels,
            orig_min: 0.0,
            orig_max: 255.0,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn original_range(&self) -> (f32, f32) {
        (self.orig_min, self.orig_max)
    }

    /// Same spatial shape and range bookkeeping, different levels.
    pub fn with_levels(&self, levels: Vec<u8>) -> Self {
        debug_assert_eq!(levels.len(), self.levels.len());
        Self {
            rows: self.rows,
            cols: self.cols,
            levels,
            orig_min: self.orig_min,
            orig_max: self.orig_max,
        }
    }

    /// Map a gray level back to the original value range.
    pub fn dequantize_level(&self, level: u8) -> f32 {
        if self.orig_max > self.orig_min {
            let t = level as f64 / 255.0;
            (self.orig_min as f64 + t * (self.orig_max - self.orig_min) as f64) as f32
        } else {
            // constant channel: every level collapses back to the constant
            self.orig_min
        }
    }
}

/// Linear min-max quantization to [0, 255] with round-half-up; a constant
/// channel maps to level 0.
pub fn quantize(plane: &[f32], rows: usize, cols: usize) -> Result<QuantizedChannel> {
    if plane.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} values for {}x{}",
            plane.len(),
            rows,
            cols
        )));
    }
    if plane.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("cannot quantize NaN/Inf values".into()));
    }
    let min = plane.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = plane.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let levels = if max > min {
        let scale = 255.0 / (max - min) as f64;
        plane
            .iter()
            .map(|&v| ((v - min) as f64 * scale).round() as u8)
            .collect()
    } else {
        vec![0u8; plane.len()]
    };
    Ok(QuantizedChannel {
        rows,
        cols,
        levels,
        orig_min: min,
        orig_max: max,
    })
}

/// Component attribute used by the filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Area,
    #[serde(rename = "stddev")]
    StdDev,
    Moment,
}

/// Decision rule for non-increasing attributes (for area, both coincide).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[derive(Default)]
pub enum FilterRule {
    /// Remove a node when it or any ancestor fails the criterion.
    #[default]
    Min,
    /// Remove a node exactly when its own attribute fails.
    Direct,
}


/// One attribute profile: an attribute, its increasing thresholds and the
/// filtering configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApConfig {
    pub attribute: AttributeKind,
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub connectivity: Connectivity,
    #[serde(default)]
    pub rule: FilterRule,
}

impl ApConfig {
    pub fn new(attribute: AttributeKind, thresholds: Vec<f64>) -> Result<Self> {
        let cfg = Self {
            attribute,
            thresholds,
            connectivity: Connectivity::Four,
            rule: FilterRule::Min,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::InvalidInput("attribute profile needs k >= 1".into()));
        }
        if self.thresholds.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "thresholds must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Channels this profile contributes: 2k + 1.
    pub fn profile_len(&self) -> usize {
        2 * self.thresholds.len() + 1
    }
}

/// Attribute thinning γ^A_λ: merge bright components with attribute < λ into
/// their surroundings (max-tree pruning). λ = 0 returns the input unchanged.
pub fn attribute_thinning(
    img: &QuantizedChannel,
    lambda: f64,
    attribute: AttributeKind,
    connectivity: Connectivity,
    rule: FilterRule,
) -> QuantizedChannel {
    let tree = ComponentTree::build(img, Polarity::Max, connectivity);
    img.with_levels(tree.filter(attribute, lambda, rule))
}

/// Attribute thickening Φ^A_λ: the dual of thinning, merging dark components
/// upward via the min-tree.
pub fn attribute_thickening(
    img: &QuantizedChannel,
    lambda: f64,
    attribute: AttributeKind,
    connectivity: Connectivity,
    rule: FilterRule,
) -> QuantizedChannel {
    let tree = ComponentTree::build(img, Polarity::Min, connectivity);
    img.with_levels(tree.filter(attribute, lambda, rule))
}

fn profile_levels(img: &QuantizedChannel, cfg: &ApConfig) -> Vec<(String, Vec<u8>)> {
    let attr_name = match cfg.attribute {
        AttributeKind::Area => "area",
        AttributeKind::StdDev => "stddev",
        AttributeKind::Moment => "moment",
    };
    let max_tree = ComponentTree::build(img, Polarity::Max, cfg.connectivity);
    let min_tree = ComponentTree::build(img, Polarity::Min, cfg.connectivity);
    let mut channels = Vec::with_capacity(cfg.profile_len());
    for &lambda in cfg.thresholds.iter().rev() {
        channels.push((
            format!("{attr_name}_thick_{lambda}"),
            min_tree.filter(cfg.attribute, lambda, cfg.rule),
        ));
    }
    channels.push(("orig".to_string(), img.levels().to_vec()));
    for &lambda in &cfg.thresholds {
        channels.push((
            format!("{attr_name}_thin_{lambda}"),
            max_tree.filter(cfg.attribute, lambda, cfg.rule),
        ));
    }
    channels
}

/// Attribute profile of a quantized channel:
/// `[Φ_{λk}, …, Φ_{λ1}, f, γ_{λ1}, …, γ_{λk}]` as a (2k+1)-channel stack of
/// gray levels.
pub fn attribute_profile(img: &QuantizedChannel, cfg: &ApConfig) -> Result<FeatureStack> {
    cfg.validate()?;
    let plane = img.rows() * img.cols();
    let channels = profile_levels(img, cfg);
    let mut names = Vec::with_capacity(channels.len());
    let mut data = Vec::with_capacity(channels.len() * plane);
    for (name, levels) in channels {
        names.push(name);
        data.extend(levels.iter().map(|&l| l as f32));
    }
    FeatureStack::new(img.rows(), img.cols(), names, data)
}

/// Extended multi-attribute profile: per base channel, quantize, compute the
/// profile of every config, and de-quantize back to the channel's original
/// range. Output holds `channels × Σ (2k+1)` channels.
pub fn emap(base: &FeatureStack, cfgs: &[ApConfig]) -> Result<FeatureStack> {
    if cfgs.is_empty() {
        return Err(Error::InvalidInput(
            "emap needs at least one profile".into(),
        ));
    }
    for cfg in cfgs {
        cfg.validate()?;
    }
    let rows = base.rows();
    let cols = base.cols();
    let plane = base.plane_len();

    let per_channel: Vec<Result<Vec<(String, Vec<f32>)>>> = (0..base.channels())
        .into_par_iter()
        .map(|ch| {
            let q = quantize(base.channel(ch), rows, cols)?;
            let base_name = &base.names()[ch];
            let mut out = Vec::new();
            for cfg in cfgs {
                for (name, levels) in profile_levels(&q, cfg) {
                    let values: Vec<f32> = levels.iter().map(|&l| q.dequantize_level(l)).collect();
                    out.push((format!("{base_name}|{name}"), values));
                }
            }
            Ok(out)
        })
        .collect();

    let total: usize = cfgs.iter().map(|c| c.profile_len()).sum::<usize>() * base.channels();
    let mut names = Vec::with_capacity(total);
    let mut data = Vec::with_capacity(total * plane);
    for channel_result in per_channel {
        for (name, values) in channel_result? {
            names.push(name);
            data.extend_from_slice(&values);
        }
    }
    FeatureStack::new(rows, cols, names, data)
}

/// Default threshold progressions per attribute:
/// area uses a geometric progression from `max(1, 0.001·image_area)` to
/// `0.2·image_area` rounded to integers; stddev is linear over 2.5..50 on
/// quantized levels; moment is linear over 0.2..1.0.
pub fn auto_thresholds(kind: AttributeKind, k: usize, image_area: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidInput("threshold count must be >= 1".into()));
    }
    let linspace = |lo: f64, hi: f64| -> Vec<f64> {
        if k == 1 {
            vec![lo]
        } else {
            (0..k)
                .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
                .collect()
        }
    };
    let mut values = match kind {
        AttributeKind::Area => {
            let lo = (0.001 * image_area as f64).max(1.0);
            let hi = 0.2 * image_area as f64;
            let raw = if k == 1 {
                vec![lo]
            } else {
                let ratio = (hi / lo).powf(1.0 / (k - 1) as f64);
                (0..k).map(|i| lo * ratio.powi(i as i32)).collect()
            };
            raw.into_iter().map(|v| v.round().max(1.0)).collect()
        }
        AttributeKind::StdDev => linspace(2.5, 50.0),
        AttributeKind::Moment => linspace(0.2, 1.0),
    };
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite thresholds"));
    values.dedup();
    if values.is_empty() {
        return Err(Error::Degenerate(
            "no distinct thresholds after deduplication".into(),
        ));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn quantized(rows: usize, cols: usize, levels: Vec<u8>) -> QuantizedChannel {
        QuantizedChannel::from_levels(rows, cols, levels).unwrap()
    }

    fn random_image(rng: &mut ChaCha12Rng, rows: usize, cols: usize, max_level: u8) -> Vec<u8> {
        (0..rows * cols)
            .map(|_| rng.random_range(0..=max_level))
            .collect()
    }

    #[test]
    fn quantize_examples() {
        let q = quantize(&[0.0, 0.5, 1.0], 1, 3).unwrap();
        assert_eq!(q.levels(), &[0, 128, 255]);

        let constant = quantize(&[0.4; 6], 2, 3).unwrap();
        assert_eq!(constant.levels(), &[0; 6]);
        assert_eq!(constant.dequantize_level(0), 0.4);

        let ramp: Vec<f32> = (0..256).map(|i| i as f32).collect();
        let q = quantize(&ramp, 16, 16).unwrap();
        let back: Vec<f32> = q.levels().iter().map(|&l| l as f32).collect();
        assert_eq!(back, ramp);

        assert!(quantize(&[f32::NAN, 0.0], 1, 2).is_err());
    }

    #[test]
    fn dequantize_restores_range() {
        let q = quantize(&[-2.0, 0.0, 6.0], 1, 3).unwrap();
        assert_eq!(q.dequantize_level(0), -2.0);
        assert_eq!(q.dequantize_level(255), 6.0);
    }

    #[test]
    fn thinning_examples() {
        let img = quantized(3, 3, vec![1, 1, 1, 1, 5, 1, 1, 1, 1]);
        let out = attribute_thinning(
            &img,
            2.0,
            AttributeKind::Area,
            Connectivity::Four,
            FilterRule::Min,
        );
        assert_eq!(out.levels(), &[1; 9]);
        let kept = attribute_thinning(
            &img,
            1.0,
            AttributeKind::Area,
            Connectivity::Four,
            FilterRule::Min,
        );
        assert_eq!(kept.levels(), img.levels());
        let zero = attribute_thinning(
            &img,
            0.0,
            AttributeKind::Area,
            Connectivity::Four,
            FilterRule::Min,
        );
        assert_eq!(zero.levels(), img.levels());
    }

    #[test]
    fn thickening_example() {
        let img = quantized(3, 3, vec![5, 5, 5, 5, 1, 5, 5, 5, 5]);
        let out = attribute_thickening(
            &img,
            2.0,
            AttributeKind::Area,
            Connectivity::Four,
            FilterRule::Min,
        );
        assert_eq!(out.levels(), &[5; 9]);
    }

    #[test]
    fn filters_match_reference_on_random_images() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..60 {
            let levels = random_image(&mut rng, 8, 8, 7);
            let img = quantized(8, 8, levels.clone());
            for lambda in [1usize, 2, 3, 5, 9] {
                let thin = attribute_thinning(
                    &img,
                    lambda as f64,
                    AttributeKind::Area,
                    Connectivity::Four,
                    FilterRule::Min,
                );
                let expect =
                    reference::area_thinning_reference(&levels, 8, 8, lambda, Connectivity::Four);
                assert_eq!(thin.levels(), &expect[..], "thinning λ={lambda}");

                let thick = attribute_thickening(
                    &img,
                    lambda as f64,
                    AttributeKind::Area,
                    Connectivity::Four,
                    FilterRule::Min,
                );
                let expect =
                    reference::area_thickening_reference(&levels, 8, 8, lambda, Connectivity::Four);
                assert_eq!(thick.levels(), &expect[..], "thickening λ={lambda}");
            }
        }
    }

    #[test]
    fn algebraic_properties_hold_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..25 {
            let levels = random_image(&mut rng, 9, 7, 255);
            let img = quantized(9, 7, levels.clone());
            let thin = |l: f64, im: &QuantizedChannel| {
                attribute_thinning(
                    im,
                    l,
                    AttributeKind::Area,
                    Connectivity::Four,
                    FilterRule::Min,
                )
            };
            let thick = |l: f64, im: &QuantizedChannel| {
                attribute_thickening(
                    im,
                    l,
                    AttributeKind::Area,
                    Connectivity::Four,
                    FilterRule::Min,
                )
            };

            let g = thin(11.0, &img);
            // idempotence
            assert_eq!(thin(11.0, &g).levels(), g.levels());
            // anti-extensivity / extensivity
            let f = thick(11.0, &img);
            assert_eq!(thick(11.0, &f).levels(), f.levels());
            for ((lo, orig), hi) in g.levels().iter().zip(levels.iter()).zip(f.levels()) {
                assert!(lo <= orig && orig <= hi);
            }
            // lambda ordering
            let g2 = thin(25.0, &img);
            for (a, b) in g2.levels().iter().zip(g.levels()) {
                assert!(a <= b);
            }
            // duality against the inverted image
            let inverted = quantized(9, 7, levels.iter().map(|&v| 255 - v).collect());
            let dual: Vec<u8> = thin(11.0, &inverted)
                .levels()
                .iter()
                .map(|&v| 255 - v)
                .collect();
            assert_eq!(f.levels(), &dual[..]);
        }
    }

    #[test]
    fn stddev_and_moment_filters_smoke() {
        let mut levels = vec![10u8; 81];
        for r in 2..5 {
            for c in 2..5 {
                levels[r * 9 + c] = 200;
            }
        }
        let img = quantized(9, 9, levels);
        for kind in [AttributeKind::StdDev, AttributeKind::Moment] {
            for rule in [FilterRule::Min, FilterRule::Direct] {
                let out = attribute_thinning(&img, 0.5, kind, Connectivity::Four, rule);
                assert_eq!(out.levels().len(), 81);
            }
        }
        // a huge stddev threshold flattens the bright square
        let out = attribute_thinning(
            &img,
            1000.0,
            AttributeKind::StdDev,
            Connectivity::Four,
            FilterRule::Min,
        );
        assert!(out.levels().iter().all(|&v| v == 10));
    }

    #[test]
    fn profile_shapes() {
        let img = quantized(4, 4, (0u8..16).collect());
        let cfg = ApConfig::new(AttributeKind::Area, vec![2.0, 4.0, 8.0, 12.0]).unwrap();
        let ap = attribute_profile(&img, &cfg).unwrap();
        assert_eq!(ap.channels(), 9);
        assert_eq!(ap.names()[4], "orig");

        // k = 1 with λ = 0: all three channels equal the input
        let cfg0 = ApConfig {
            attribute: AttributeKind::Area,
            thresholds: vec![0.0],
            connectivity: Connectivity::Four,
            rule: FilterRule::Min,
        };
        let ap0 = attribute_profile(&img, &cfg0).unwrap();
        assert_eq!(ap0.channels(), 3);
        for ch in 0..3 {
            let plane: Vec<u8> = ap0.channel(ch).iter().map(|&v| v as u8).collect();
            assert_eq!(&plane[..], img.levels());
        }

        // constant image: every profile channel identical
        let flat = quantized(4, 4, vec![9; 16]);
        let apf = attribute_profile(&flat, &cfg).unwrap();
        for ch in 0..apf.channels() {
            assert_eq!(apf.channel(ch), apf.channel(0));
        }
    }

    #[test]
    fn profile_rejects_bad_thresholds() {
        assert!(ApConfig::new(AttributeKind::Area, vec![]).is_err());
        assert!(ApConfig::new(AttributeKind::Area, vec![2.0, 2.0]).is_err());
        assert!(ApConfig::new(AttributeKind::Area, vec![4.0, 2.0]).is_err());
    }

    #[test]
    fn emap_channel_counts() {
        let rows = 6;
        let cols = 6;
        let mut data = Vec::new();
        for ch in 0..4 {
            for i in 0..rows * cols {
                data.push((i % (3 + ch)) as f32 * 0.5 - 1.0);
            }
        }
        let base =
            FeatureStack::new(rows, cols, (0..4).map(|i| format!("c{i}")).collect(), data).unwrap();

        let twenty = auto_thresholds(AttributeKind::Area, 20, 100 * 100).unwrap();
        let cfg = ApConfig::new(AttributeKind::Area, twenty).unwrap();
        let out = emap(&base, &[cfg]).unwrap();
        assert_eq!(out.channels(), 4 * 41);

        let one = base.select_channels(&[0]).unwrap();
        let cfg_a = ApConfig::new(AttributeKind::Area, vec![2.0, 4.0]).unwrap();
        let cfg_b = ApConfig::new(AttributeKind::StdDev, vec![2.5, 5.0]).unwrap();
        let out = emap(&one, &[cfg_a, cfg_b]).unwrap();
        assert_eq!(out.channels(), 10);
    }

    #[test]
    fn emap_constant_stack_stays_constant() {
        let base = FeatureStack::new(5, 5, vec!["c0".into()], vec![0.75; 25]).unwrap();
        let cfg = ApConfig::new(AttributeKind::Area, vec![2.0]).unwrap();
        let out = emap(&base, &[cfg]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn emap_dequantizes_to_original_range() {
        // base channel is a ramp over [-1, 3]; λ=1 keeps everything, so the
        // profile channels must reproduce the ramp after de-quantization
        let vals: Vec<f32> = (0..36).map(|i| -1.0 + 4.0 * i as f32 / 35.0).collect();
        let base = FeatureStack::new(6, 6, vec!["ramp".into()], vals.clone()).unwrap();
        let cfg = ApConfig::new(AttributeKind::Area, vec![1.0]).unwrap();
        let out = emap(&base, &[cfg]).unwrap();
        for ch in 0..out.channels() {
            for (o, v) in out.channel(ch).iter().zip(&vals) {
                assert!((o - v).abs() < 4.0 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn auto_threshold_progressions() {
        let area = auto_thresholds(AttributeKind::Area, 20, 100 * 100).unwrap();
        assert_eq!(area.len(), 20);
        assert!(area.windows(2).all(|w| w[1] > w[0]));
        assert!(area[0] >= 10.0 && *area.last().unwrap() <= 2000.0);
        assert!((area[0] - 10.0).abs() < 1e-9);
        assert!((area[19] - 2000.0).abs() < 1e-9);
        assert!(area.iter().all(|v| v.fract() == 0.0));

        let single = auto_thresholds(AttributeKind::StdDev, 1, 64).unwrap();
        assert_eq!(single, vec![2.5]);
        let single_area = auto_thresholds(AttributeKind::Area, 1, 10_000).unwrap();
        assert_eq!(single_area, vec![10.0]);

        let tiny = auto_thresholds(AttributeKind::Area, 2, 10).unwrap();
        assert!(!tiny.is_empty());
        assert!(tiny.windows(2).all(|w| w[1] > w[0]));

        assert!(auto_thresholds(AttributeKind::Moment, 0, 100).is_err());

        let moment = auto_thresholds(AttributeKind::Moment, 5, 100).unwrap();
        assert_eq!(moment, vec![0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
    }
}
