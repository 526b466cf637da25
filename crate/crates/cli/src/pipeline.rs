//! Experiment orchestration: input preparation, per-variant feature chains,
//! evaluation, reports and label maps.
//!
//! Each variant's dependency chain is fixed:
//!
//! ```text
//! SimRGB         focus_stack → sensitivity → simulate_rgb
//! SimRGB-IC      focus_stack → sensitivity → illumination → simulate_rgb
//! SimRGB-IC-SI   SimRGB-IC ⊕ its saturation and intensity
//! SimRGB-IC-EMAP emap(SimRGB-IC)
//! HSI            focus_stack → sensitivity
//! HSI-IC         focus_stack → sensitivity → illumination
//! HSI-DR         pca(HSI-IC)
//! HSI-h          hyper-hue(HSI-IC)
//! HSIhSI         HSI-IC ⊕ hyper-hue ⊕ S ⊕ I
//! HSIhSI-DR      pca(HSIhSI)
//! HSI-EMAP       emap(pca(HSI-IC))
//! HSIhSI-EMAP    emap(pca(HSIhSI))
//! ```
//!
//! Within a variant, stages run sequentially; every stage is deterministic,
//! so re-running a config reproduces all outputs byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

use layersep_core::chromatic;
use layersep_core::cube::{
    load_cube, save_cube, simulate_rgb_with, stack_features, FeatureStack, HsiCube,
};
use layersep_core::dimred;
use layersep_core::label::LabelMap;
use layersep_core::learn::{self, EvalReport, LabeledPixels};
use layersep_core::morpho;
use layersep_core::phantom;
use layersep_core::preprocess;
use layersep_core::seed;

use crate::config::{ExperimentConfig, Variant};
use crate::render;

/// Everything the variant chains start from.
pub struct PreparedInputs {
    pub h1: HsiCube,
    pub h2: HsiCube,
    pub white_ref: HsiCube,
    pub truth: LabelMap,
    /// Channel split actually used (after optional auto-split).
    pub split_band: usize,
    /// All-in-focus cube after sensitivity normalization (no illumination
    /// correction).
    pub hsi: HsiCube,
    /// Fully corrected all-in-focus cube.
    pub hsi_ic: HsiCube,
    sensitivity: Option<preprocess::SpectralSensitivity>,
    illumination: Option<preprocess::IlluminationField>,
}

impl PreparedInputs {
    /// Apply the configured corrections to any capture (used by the
    /// focus-stacking ablation to process H1/H2 alone).
    pub fn correct(&self, cube: &HsiCube) -> anyhow::Result<HsiCube> {
        let mut out = cube.clone();
        if let Some(w) = &self.sensitivity {
            out = preprocess::normalize_sensitivity(&out, w)?;
        }
        if let Some(field) = &self.illumination {
            out = preprocess::correct_illumination(&out, field)?;
        }
        Ok(out)
    }
}

/// Load or generate the inputs and run the shared preprocessing chain.
pub fn prepare(cfg: &ExperimentConfig) -> anyhow::Result<PreparedInputs> {
    cfg.validate()?;
    let (h1, h2, white_ref, truth) = match &cfg.inputs.phantom {
        Some(spec) => {
            let out = phantom::generate(spec)?;
            (out.h1, out.h2, out.white_ref, out.ground_truth)
        }
        None => {
            let load = |p: &Option<PathBuf>| -> anyhow::Result<HsiCube> {
                let path = p.as_ref().expect("validated");
                Ok(load_cube(path)?)
            };
            let truth = render::load_label_map_png(
                cfg.inputs.ground_truth.as_ref().expect("validated"),
                &cfg.palette,
                &cfg.inputs.class_names,
            )?;
            (
                load(&cfg.inputs.h1)?,
                load(&cfg.inputs.h2)?,
                load(&cfg.inputs.white_ref)?,
                truth,
            )
        }
    };

    let split_band = if cfg.preprocess.auto_split {
        preprocess::choose_split_by_sharpness(&h1, &h2)?
    } else {
        cfg.preprocess.split_band
    };
    let stacked = preprocess::focus_stack(&h1, &h2, split_band)?;

    let sensitivity = if cfg.preprocess.sensitivity {
        Some(preprocess::estimate_sensitivity(
            &white_ref,
            cfg.preprocess.white_region.as_ref(),
        )?)
    } else {
        None
    };
    let hsi = match &sensitivity {
        Some(w) => preprocess::normalize_sensitivity(&stacked, w)?,
        None => stacked.clone(),
    };
    let illumination = if cfg.preprocess.illumination {
        Some(preprocess::estimate_illumination(
            &white_ref,
            cfg.preprocess.smoothing,
        )?)
    } else {
        None
    };
    let hsi_ic = match &illumination {
        Some(field) => preprocess::correct_illumination(&hsi, field)?,
        None => hsi.clone(),
    };

    Ok(PreparedInputs {
        h1,
        h2,
        white_ref,
        truth,
        split_band,
        hsi,
        hsi_ic,
        sensitivity,
        illumination,
    })
}

fn rgb_stack(cfg: &ExperimentConfig, cube: &HsiCube) -> anyhow::Result<FeatureStack> {
    Ok(FeatureStack::from(&simulate_rgb_with(
        cube,
        &cfg.rgb_ranges,
    )?))
}

fn pca_reduce(cfg: &ExperimentConfig, stack: &FeatureStack) -> anyhow::Result<FeatureStack> {
    let model = dimred::fit_pca(stack, cfg.pca_target, None)?;
    Ok(dimred::transform_pca(stack, &model)?)
}

fn emap_of(cfg: &ExperimentConfig, stack: &FeatureStack) -> anyhow::Result<FeatureStack> {
    let ap = cfg.emap.to_ap_config(stack.plane_len())?;
    Ok(morpho::emap(stack, &[ap])?)
}

fn hsihsi_stack(cfg: &ExperimentConfig, prepared: &PreparedInputs) -> anyhow::Result<FeatureStack> {
    let base = FeatureStack::from(&prepared.hsi_ic);
    let transform = chromatic::hsi_transform(&prepared.hsi_ic, cfg.achromatic_epsilon)?;
    Ok(stack_features(&[&base, &transform])?)
}

/// Human-readable dependency chain embedded in every report.
pub fn chain_description(variant: Variant, cfg: &ExperimentConfig) -> String {
    let mut chain = String::from("focus_stack -> sensitivity");
    let ic = " -> illumination";
    match variant {
        Variant::SimRgb => chain.push_str(" -> simulate_rgb"),
        Variant::SimRgbIc => {
            chain.push_str(ic);
            chain.push_str(" -> simulate_rgb");
        }
        Variant::SimRgbIcSi => {
            chain.push_str(ic);
            chain.push_str(" -> simulate_rgb -> stack(rgb, saturation, intensity)");
        }
        Variant::SimRgbIcEmap => {
            chain.push_str(ic);
            chain.push_str(" -> simulate_rgb -> emap");
        }
        Variant::Hsi => {}
        Variant::HsiIc => chain.push_str(ic),
        Variant::HsiDr => {
            chain.push_str(ic);
            let _ = write!(chain, " -> pca({})", cfg.pca_target);
        }
        Variant::HsiHue => {
            chain.push_str(ic);
            chain.push_str(" -> hyper_hue");
        }
        Variant::HsiHsi => {
            chain.push_str(ic);
            chain.push_str(" -> stack(hsi, hyper_hue, saturation, intensity)");
        }
        Variant::HsiHsiDr => {
            chain.push_str(ic);
            let _ = write!(
                chain,
                " -> stack(hsi, hyper_hue, saturation, intensity) -> pca({})",
                cfg.pca_target
            );
        }
        Variant::HsiEmap => {
            chain.push_str(ic);
            let _ = write!(chain, " -> pca({}) -> emap", cfg.pca_target);
        }
        Variant::HsiHsiEmap => {
            chain.push_str(ic);
            let _ = write!(
                chain,
                " -> stack(hsi, hyper_hue, saturation, intensity) -> pca({}) -> emap",
                cfg.pca_target
            );
        }
    }
    let _ = write!(chain, " -> evaluate");
    chain
}

/// Compute the feature stack of one variant.
pub fn feature_stack_for(
    variant: Variant,
    cfg: &ExperimentConfig,
    prepared: &PreparedInputs,
) -> anyhow::Result<FeatureStack> {
    if let Some(stack) = cache_load(variant, cfg)? {
        return Ok(stack);
    }
    let stack = match variant {
        Variant::SimRgb => rgb_stack(cfg, &prepared.hsi)?,
        Variant::SimRgbIc => rgb_stack(cfg, &prepared.hsi_ic)?,
        Variant::SimRgbIcSi => {
            let rgb = simulate_rgb_with(&prepared.hsi_ic, &cfg.rgb_ranges)?;
            let rgb_stack = FeatureStack::from(&rgb);
            // S and I of the simulated RGB image itself (3-band spectra)
            let transform = chromatic::hsi_transform(&rgb.to_cube(), cfg.achromatic_epsilon)?;
            let si = transform.select_channels(&[3, 4])?;
            stack_features(&[&rgb_stack, &si])?
        }
        Variant::SimRgbIcEmap => {
            let rgb = rgb_stack(cfg, &prepared.hsi_ic)?;
            emap_of(cfg, &rgb)?
        }
        Variant::Hsi => FeatureStack::from(&prepared.hsi),
        Variant::HsiIc => FeatureStack::from(&prepared.hsi_ic),
        Variant::HsiDr => pca_reduce(cfg, &FeatureStack::from(&prepared.hsi_ic))?,
        Variant::HsiHue => chromatic::hue_stack(&prepared.hsi_ic, cfg.achromatic_epsilon)?,
        Variant::HsiHsi => hsihsi_stack(cfg, prepared)?,
        Variant::HsiHsiDr => pca_reduce(cfg, &hsihsi_stack(cfg, prepared)?)?,
        Variant::HsiEmap => {
            let reduced = pca_reduce(cfg, &FeatureStack::from(&prepared.hsi_ic))?;
            emap_of(cfg, &reduced)?
        }
        Variant::HsiHsiEmap => {
            let reduced = pca_reduce(cfg, &hsihsi_stack(cfg, prepared)?)?;
            emap_of(cfg, &reduced)?
        }
    };
    cache_store(variant, cfg, &stack)?;
    Ok(stack)
}

// --- feature-stack cache -------------------------------------------------

/// FNV-1a over the canonical JSON of everything the stack depends on.
fn cache_key(variant: Variant, cfg: &ExperimentConfig) -> anyhow::Result<u64> {
    #[derive(serde::Serialize)]
    struct KeyParts<'a> {
        variant: &'a str,
        inputs: &'a crate::config::InputConfig,
        preprocess: &'a crate::config::PreprocessConfig,
        rgb_ranges: &'a layersep_core::cube::RgbRanges,
        pca_target: f64,
        emap: &'a crate::config::EmapSettings,
        achromatic_epsilon: f64,
    }
    let json = serde_json::to_string(&KeyParts {
        variant: variant.name(),
        inputs: &cfg.inputs,
        preprocess: &cfg.preprocess,
        rgb_ranges: &cfg.rgb_ranges,
        pca_target: cfg.pca_target,
        emap: &cfg.emap,
        achromatic_epsilon: cfg.achromatic_epsilon,
    })?;
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in json.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(hash)
}

fn cache_paths(
    variant: Variant,
    cfg: &ExperimentConfig,
) -> anyhow::Result<Option<(PathBuf, PathBuf)>> {
    let Some(dir) = &cfg.cache_dir else {
        return Ok(None);
    };
    let key = cache_key(variant, cfg)?;
    let base = format!("{}_{key:016x}", variant.name().replace('/', "_"));
    Ok(Some((
        dir.join(format!("{base}.hdr")),
        dir.join(format!("{base}.names.json")),
    )))
}

fn cache_load(variant: Variant, cfg: &ExperimentConfig) -> anyhow::Result<Option<FeatureStack>> {
    let Some((cube_path, names_path)) = cache_paths(variant, cfg)? else {
        return Ok(None);
    };
    if !cube_path.exists() || !names_path.exists() {
        return Ok(None);
    }
    let cube = load_cube(&cube_path)?;
    let names: Vec<String> = serde_json::from_str(&fs::read_to_string(&names_path)?)?;
    log::info!("loaded {} from cache", variant.name());
    Ok(Some(FeatureStack::new(
        cube.rows(),
        cube.cols(),
        names,
        cube.data().to_vec(),
    )?))
}

fn cache_store(
    variant: Variant,
    cfg: &ExperimentConfig,
    stack: &FeatureStack,
) -> anyhow::Result<()> {
    let Some((cube_path, names_path)) = cache_paths(variant, cfg)? else {
        return Ok(());
    };
    fs::create_dir_all(cube_path.parent().expect("cache path has a parent"))?;
    save_cube(&stack.to_cube(), &cube_path)?;
    fs::write(&names_path, serde_json::to_string(stack.names())?)?;
    Ok(())
}

// --- experiment driver ----------------------------------------------------

/// Result of one variant: a report or the error that aborted it.
#[derive(Debug, serde::Serialize)]
pub struct VariantOutcome {
    pub variant: String,
    pub chain: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct ExperimentOutcome {
    pub outcomes: Vec<VariantOutcome>,
    pub summary_csv: PathBuf,
}

impl ExperimentOutcome {
    pub fn any_failed(&self) -> bool {
        self.outcomes.iter().any(|o| o.error.is_some())
    }
}

fn format_csv_row(feature: &str, report: &EvalReport) -> String {
    format!(
        "{},{:.2},{:.2},{:.2},{:.2},{:.4},{:.4}\n",
        feature,
        100.0 * report.aa_mean,
        100.0 * report.aa_sd,
        100.0 * report.oa_mean,
        100.0 * report.oa_sd,
        report.kappa_mean,
        report.kappa_sd
    )
}

pub const CSV_HEADER: &str = "feature,aa_mean,aa_sd,oa_mean,oa_sd,kappa_mean,kappa_sd\n";

fn evaluate_and_render(
    name: &str,
    stack: &FeatureStack,
    cfg: &ExperimentConfig,
    truth: &LabelMap,
    out_dir: &Path,
) -> anyhow::Result<EvalReport> {
    let (data, pixel_indices) = LabeledPixels::from_stack(stack, truth)?;
    let report = learn::evaluate(&data, &cfg.protocol)?;

    // full-image label map from one final model: split/train one past the
    // last repeat so the map is deterministic but independent of the
    // reported metrics
    let split_seed = cfg.protocol.seed.wrapping_add(cfg.protocol.repeats as u64);
    let (train, _) = learn::sample_split(&data, cfg.protocol.per_class, split_seed)?;
    let forest_seed = seed::derive(cfg.protocol.seed, 0x4c4d_0000);
    let model = learn::train_forest(&train, cfg.protocol.trees, forest_seed)?;
    let predictions = model.predict(data.features(), data.dim())?;
    let safe = name.replace('/', "_");
    render::render_predictions(
        truth.rows(),
        truth.cols(),
        &pixel_indices,
        &predictions,
        truth.class_names(),
        &cfg.palette,
        &out_dir.join(format!("labels_{safe}.png")),
    )?;
    Ok(report)
}

/// Run every configured variant against prepared inputs, writing per-variant
/// JSON reports, predicted label maps, the ground-truth map and the combined
/// CSV. A failing variant is recorded and skipped; the rest continue.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    prepared: &PreparedInputs,
) -> anyhow::Result<ExperimentOutcome> {
    if cfg.variants.is_empty() {
        anyhow::bail!("no variants configured");
    }
    let out_dir = &cfg.output_dir;
    fs::create_dir_all(out_dir)?;
    render::render_label_map(
        &prepared.truth,
        &cfg.palette,
        &out_dir.join("ground_truth.png"),
    )?;

    // run in the reference-table order so the CSV layout is stable no
    // matter how the config lists the variants
    let ordered: Vec<Variant> = Variant::ALL
        .iter()
        .filter(|v| cfg.variants.contains(v))
        .copied()
        .collect();
    let mut outcomes = Vec::new();
    let mut csv = String::from(CSV_HEADER);
    for variant in ordered {
        let chain = chain_description(variant, cfg);
        log::info!("running {variant}: {chain}");
        let result = feature_stack_for(variant, cfg, prepared).and_then(|stack| {
            evaluate_and_render(variant.name(), &stack, cfg, &prepared.truth, out_dir)
        });
        let outcome = match result {
            Ok(report) => {
                csv.push_str(&format_csv_row(variant.name(), &report));
                VariantOutcome {
                    variant: variant.name().to_string(),
                    chain,
                    report: Some(report),
                    error: None,
                }
            }
            Err(e) => {
                log::error!("variant {variant} failed: {e:#}");
                VariantOutcome {
                    variant: variant.name().to_string(),
                    chain,
                    report: None,
                    error: Some(format!("{e:#}")),
                }
            }
        };
        let path = out_dir.join(format!("report_{}.json", outcome.variant.replace('/', "_")));
        fs::write(&path, serde_json::to_string_pretty(&outcome)?)?;
        outcomes.push(outcome);
    }

    let summary_csv = out_dir.join("summary.csv");
    fs::write(&summary_csv, csv)?;
    Ok(ExperimentOutcome {
        outcomes,
        summary_csv,
    })
}

/// `prepare` + `run_experiment_with`.
pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentOutcome> {
    let prepared = prepare(cfg).context("preparing inputs")?;
    run_experiment_with(cfg, &prepared)
}

/// Focus-stacking ablation: evaluate the SimRGB and HSI-IC chains on
/// H1 alone, H2 alone and the stacked cube, mirroring the two-capture
/// comparison table. Returns (row name, report) pairs and writes
/// `focus_ablation.csv`.
pub fn run_focus_ablation(
    cfg: &ExperimentConfig,
    prepared: &PreparedInputs,
) -> anyhow::Result<Vec<(String, EvalReport)>> {
    let out_dir = &cfg.output_dir;
    fs::create_dir_all(out_dir)?;
    let stacked = preprocess::focus_stack(&prepared.h1, &prepared.h2, prepared.split_band)?;
    let sources: [(&str, &HsiCube); 3] = [
        ("H1", &prepared.h1),
        ("H2", &prepared.h2),
        ("stacked", &stacked),
    ];
    let mut rows = Vec::new();
    let mut csv = String::from(CSV_HEADER);
    for pipeline in ["SimRGB", "HSI-IC"] {
        for (source_name, cube) in sources {
            let corrected = prepared.correct(cube)?;
            let stack = match pipeline {
                "SimRGB" => rgb_stack(cfg, &corrected)?,
                _ => FeatureStack::from(&corrected),
            };
            let name = format!("{pipeline}({source_name})");
            let (data, _) = LabeledPixels::from_stack(&stack, &prepared.truth)?;
            let report = learn::evaluate(&data, &cfg.protocol)?;
            csv.push_str(&format_csv_row(&name, &report));
            rows.push((name, report));
        }
    }
    fs::write(out_dir.join("focus_ablation.csv"), csv)?;
    Ok(rows)
}

/// Rebuild the combined CSV from the per-variant JSON reports in a
/// directory. Rows follow the variant order of the reference list.
pub fn rebuild_summary(dir: &Path) -> anyhow::Result<String> {
    let mut csv = String::from(CSV_HEADER);
    let mut found = 0;
    for variant in Variant::ALL {
        let path = dir.join(format!("report_{}.json", variant.name()));
        if !path.exists() {
            continue;
        }
        let outcome: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
        if let Some(report) = outcome.get("report").filter(|r| !r.is_null()) {
            let report: EvalReport = serde_json::from_value(report.clone())?;
            csv.push_str(&format_csv_row(variant.name(), &report));
            found += 1;
        }
    }
    if found == 0 {
        anyhow::bail!("no report_<variant>.json files found in {}", dir.display());
    }
    Ok(csv)
}
