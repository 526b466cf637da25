//! Experiment configuration: one JSON file drives the whole run; every CLI
//! flag overrides a config key.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use layersep_core::cube::RgbRanges;
use layersep_core::learn::Protocol;
use layersep_core::morpho::{ApConfig, AttributeKind, Connectivity, FilterRule};
use layersep_core::phantom::PhantomSpec;
use layersep_core::preprocess::{Region, Smoothing, DEFAULT_SPLIT_BAND};

/// The closed set of feature variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SimRGB")]
    SimRgb,
    #[serde(rename = "SimRGB-IC")]
    SimRgbIc,
    #[serde(rename = "SimRGB-IC-SI")]
    SimRgbIcSi,
    #[serde(rename = "SimRGB-IC-EMAP")]
    SimRgbIcEmap,
    #[serde(rename = "HSI")]
    Hsi,
    #[serde(rename = "HSI-IC")]
    HsiIc,
    #[serde(rename = "HSI-DR")]
    HsiDr,
    #[serde(rename = "HSI-h")]
    HsiHue,
    #[serde(rename = "HSIhSI")]
    HsiHsi,
    #[serde(rename = "HSIhSI-DR")]
    HsiHsiDr,
    #[serde(rename = "HSI-EMAP")]
    HsiEmap,
    #[serde(rename = "HSIhSI-EMAP")]
    HsiHsiEmap,
}

impl Variant {
    pub const ALL: [Variant; 12] = [
        Variant::SimRgb,
        Variant::SimRgbIc,
        Variant::SimRgbIcSi,
        Variant::SimRgbIcEmap,
        Variant::Hsi,
        Variant::HsiIc,
        Variant::HsiDr,
        Variant::HsiHue,
        Variant::HsiHsi,
        Variant::HsiHsiDr,
        Variant::HsiEmap,
        Variant::HsiHsiEmap,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::SimRgb => "SimRGB",
            Variant::SimRgbIc => "SimRGB-IC",
            Variant::SimRgbIcSi => "SimRGB-IC-SI",
            Variant::SimRgbIcEmap => "SimRGB-IC-EMAP",
            Variant::Hsi => "HSI",
            Variant::HsiIc => "HSI-IC",
            Variant::HsiDr => "HSI-DR",
            Variant::HsiHue => "HSI-h",
            Variant::HsiHsi => "HSIhSI",
            Variant::HsiHsiDr => "HSIhSI-DR",
            Variant::HsiEmap => "HSI-EMAP",
            Variant::HsiHsiEmap => "HSIhSI-EMAP",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                format!(
                    "unknown variant '{s}'; expected one of {}",
                    names.join(", ")
                )
            })
    }
}

/// Where the cubes come from: a phantom spec or four files on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputConfig {
    /// Synthetic scene; used whenever file paths are absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h1: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h2: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub white_ref: Option<PathBuf>,
    /// Ground-truth label map as a PNG in the configured palette.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    /// Class names for file-based ground truth (palette order).
    #[serde(default = "default_class_names")]
    pub class_names: Vec<String>,
}

fn default_class_names() -> Vec<String> {
    vec![
        "red_chalk".into(),
        "diluted_red_chalk".into(),
        "black_ink".into(),
    ]
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            phantom: Some(PhantomSpec::default()),
            h1: None,
            h2: None,
            white_ref: None,
            ground_truth: None,
            class_names: default_class_names(),
        }
    }
}

/// Correction toggles and the focus-stacking split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    #[serde(default = "default_true")]
    pub sensitivity: bool,
    #[serde(default = "default_true")]
    pub illumination: bool,
    #[serde(default)]
    pub smoothing: Smoothing,
    /// Restrict white-reference statistics to a rectangle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub white_region: Option<Region>,
    /// 1-based channel count taken from H1.
    #[serde(default = "default_split_band")]
    pub split_band: usize,
    /// Pick the split from per-channel sharpness instead of `split_band`
    /// (extension beyond the fixed-split method).
    #[serde(default)]
    pub auto_split: bool,
}

fn default_true() -> bool {
    true
}

fn default_split_band() -> usize {
    DEFAULT_SPLIT_BAND
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            sensitivity: true,
            illumination: true,
            smoothing: Smoothing::default(),
            white_region: None,
            split_band: DEFAULT_SPLIT_BAND,
            auto_split: false,
        }
    }
}

/// EMAP settings; thresholds default to the automatic area progression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmapSettings {
    #[serde(default = "default_attribute")]
    pub attribute: AttributeKind,
    /// Explicit thresholds; when absent, `k` automatic ones are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub connectivity: Connectivity,
    #[serde(default)]
    pub rule: FilterRule,
}

fn default_attribute() -> AttributeKind {
    AttributeKind::Area
}

fn default_k() -> usize {
    20
}

impl Default for EmapSettings {
    fn default() -> Self {
        Self {
            attribute: default_attribute(),
            thresholds: None,
            k: default_k(),
            connectivity: Connectivity::Four,
            rule: FilterRule::Min,
        }
    }
}

impl EmapSettings {
    pub fn to_ap_config(&self, image_area: usize) -> layersep_core::Result<ApConfig> {
        let thresholds = match &self.thresholds {
            Some(t) => t.clone(),
            None => layersep_core::morpho::auto_thresholds(self.attribute, self.k, image_area)?,
        };
        Ok(ApConfig {
            attribute: self.attribute,
            thresholds,
            connectivity: self.connectivity,
            rule: self.rule,
        })
    }
}

/// RGB triple per class; index 0 is the background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
}

impl Default for Palette {
    fn default() -> Self {
        // black background; red chalk, green overlay/diluted, blue ink
        Self {
            colors: vec![[0, 0, 0], [255, 0, 0], [0, 255, 0], [0, 0, 255]],
        }
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub inputs: InputConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    /// Variants to run; empty means "decide at the call site" and is an
    /// error for `experiment`.
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub rgb_ranges: RgbRanges,
    #[serde(default = "default_pca_target")]
    pub pca_target: f64,
    #[serde(default)]
    pub emap: EmapSettings,
    #[serde(default = "default_achromatic_epsilon")]
    pub achromatic_epsilon: f64,
    #[serde(default)]
    pub palette: Palette,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Cache computed feature stacks here, keyed by a config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            inputs: InputConfig::default(),
            preprocess: PreprocessConfig::default(),
            variants: default_variants(),
            protocol: Protocol::default(),
            rgb_ranges: RgbRanges::default(),
            pca_target: default_pca_target(),
            emap: EmapSettings::default(),
            achromatic_epsilon: default_achromatic_epsilon(),
            palette: Palette::default(),
            output_dir: default_output_dir(),
            cache_dir: None,
        }
    }
}

fn default_pca_target() -> f64 {
    0.999
}

fn default_achromatic_epsilon() -> f64 {
    layersep_core::chromatic::ACHROMATIC_EPSILON
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    /// Apply a `key.path=value` override onto the JSON form of the config.
    pub fn apply_overrides(self, overrides: &[String]) -> anyhow::Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut value = serde_json::to_value(&self)?;
        for item in overrides {
            let (path, raw) = item
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("override '{item}' is not key=value"))?;
            let new: serde_json::Value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            let mut cursor = &mut value;
            let parts: Vec<&str> = path.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                if i + 1 == parts.len() {
                    cursor
                        .as_object_mut()
                        .ok_or_else(|| anyhow::anyhow!("'{path}' does not address an object"))?
                        .insert(part.to_string(), new.clone());
                } else {
                    cursor = cursor
                        .as_object_mut()
                        .ok_or_else(|| anyhow::anyhow!("'{path}' does not address an object"))?
                        .entry(part.to_string())
                        .or_insert_with(|| serde_json::Value::Object(Default::default()));
                }
            }
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let files = [
            &self.inputs.h1,
            &self.inputs.h2,
            &self.inputs.white_ref,
            &self.inputs.ground_truth,
        ];
        let n_paths = files.iter().filter(|p| p.is_some()).count();
        if self.inputs.phantom.is_none() {
            if n_paths != 4 {
                anyhow::bail!(
                    "inputs need either a phantom spec or all of h1/h2/white_ref/ground_truth"
                );
            }
            for path in files.into_iter().flatten() {
                if !path.exists() {
                    anyhow::bail!("input file {} does not exist", path.display());
                }
            }
        }
        if !(self.pca_target > 0.0 && self.pca_target <= 1.0) {
            anyhow::bail!("pca_target must lie in (0, 1]");
        }
        Ok(())
    }
}
