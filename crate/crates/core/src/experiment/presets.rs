use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    accuracy_of, baseline_config, evaluate, mean_std, prepare_data, run_pipeline_on, run_trial, Baseline, Components,
    ExperimentConfig, OracleConfig, PreparedData, RunReport, TrialArtifacts, TrialSeeds,
};
use crate::acquisition::Strategy;
use crate::confident::{correct_and_retrain, oof_probabilities};
use crate::merging::{ensemble_predict_with, estimate_fisher, merge_fisher, merge_weighted};
use crate::network::ModelRole;
use crate::noise::{NoiseMode, NoiseSpec};
use crate::rng;
use crate::training::{train_model, LossSpec, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    NoiseSweep,
    Asymmetric,
    AcquisitionAblation,
    MergeComparison,
    ShotScaling,
    ComponentAblation,
    AnnotatorPanel,
}

impl PresetName {
    pub const ALL: [PresetName; 7] = [
        PresetName::NoiseSweep,
        PresetName::Asymmetric,
        PresetName::AcquisitionAblation,
        PresetName::MergeComparison,
        PresetName::ShotScaling,
        PresetName::ComponentAblation,
        PresetName::AnnotatorPanel,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::NoiseSweep => "noise_sweep",
            PresetName::Asymmetric => "asymmetric",
            PresetName::AcquisitionAblation => "acquisition_ablation",
            PresetName::MergeComparison => "merge_comparison",
            PresetName::ShotScaling => "shot_scaling",
            PresetName::ComponentAblation => "component_ablation",
            PresetName::AnnotatorPanel => "annotator_panel",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Cell {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values);
        Some(Cell { mean, std, n: values.len() })
    }

    fn from_report(r: &RunReport) -> Option<Self> {
        Self::from_values(&r.accuracies)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetRow {
    pub label: String,
    pub cells: Vec<Option<Cell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetReport {
    pub preset: String,
    pub config_checksum: String,
    pub columns: Vec<String>,
    pub rows: Vec<PresetRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<RunReport>,
}

impl PresetReport {
    pub fn row(&self, label: &str) -> Option<&PresetRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Grid levels for the symmetric sweep.
pub const NOISE_LEVELS: [f64; 4] = [0.0, 0.2, 0.4, 0.6];
/// Expert-label budgets for shot scaling.
pub const SHOT_GRID: [usize; 5] = [25, 50, 100, 200, 400];
/// Disagreement rates for the annotator panel.
pub const DISAGREEMENT_RATES: [f64; 2] = [0.1, 0.2];

/// Toggle rows of the component ablation.
pub const ABLATION_ROWS: [Components; 6] = [
    Components::new(true, false, false, false),
    Components::new(true, true, false, false),
    Components::new(true, false, true, false),
    Components::new(true, true, true, false),
    Components::new(true, false, true, true),
    Components::new(true, true, true, true),
];

fn methods(base: &ExperimentConfig) -> Vec<Option<Baseline>> {
    let mut m = vec![None];
    m.extend(base.compare.iter().cloned().map(Some));
    m
}

fn method_label(b: &Option<Baseline>) -> String {
    b.as_ref().map_or("FHLR".into(), |b| b.label().into())
}

/// Expand the named grid over `base`, run every cell and tabulate.
pub fn run_preset(name: PresetName, base: &ExperimentConfig) -> Result<PresetReport> {
    base.validate()?;
    let data = prepare_data(&base.data)?;
    run_preset_on(name, base, &data)
}

pub fn run_preset_on(name: PresetName, base: &ExperimentConfig, data: &PreparedData) -> Result<PresetReport> {
    let mut base = base.clone();
    let out_dir = base.output_dir.take();
    let report = match name {
        PresetName::NoiseSweep => noise_sweep(&base, data)?,
        PresetName::Asymmetric => asymmetric(&base, data)?,
        PresetName::AcquisitionAblation => acquisition_ablation(&base, data)?,
        PresetName::MergeComparison => merge_comparison(&base, data)?,
        PresetName::ShotScaling => shot_scaling(&base, data)?,
        PresetName::ComponentAblation => component_ablation(&base, data)?,
        PresetName::AnnotatorPanel => annotator_panel(&base, data)?,
    };
    if let Some(dir) = out_dir {
        super::write_preset_outputs(&dir.join(name.as_str()), &report)?;
    }
    Ok(report)
}

fn new_report(name: PresetName, base: &ExperimentConfig, columns: Vec<String>) -> PresetReport {
    PresetReport {
        preset: name.as_str().into(),
        config_checksum: base.checksum(),
        columns,
        rows: Vec::new(),
        runs: Vec::new(),
    }
}

fn noise_sweep(base: &ExperimentConfig, data: &PreparedData) -> Result<PresetReport> {
    let cols = NOISE_LEVELS.iter().map(|l| format!("n_l={l:.1}")).collect();
    let mut rep = new_report(PresetName::NoiseSweep, base, cols);
    for method in methods(base) {
        let mut cells = Vec::new();
        for &level in &NOISE_LEVELS {
            let cfg = ExperimentConfig {
                noise: NoiseSpec {
                    level,
                    mode: NoiseMode::Symmetric,
                    ..base.noise.clone()
                },
                baseline: method.clone(),
                ..base.clone()
            };
            let r = run_pipeline_on(&cfg, data)?;
            cells.push(Cell::from_report(&r));
            rep.runs.push(r);
        }
        rep.rows.push(PresetRow { label: method_label(&method), cells });
    }
    Ok(rep)
}

fn asymmetric(base: &ExperimentConfig, data: &PreparedData) -> Result<PresetReport> {
    let noise = NoiseSpec::asymmetric(base.noise.num_classes, 0.4, base.noise.rng_seed);
    let mut rep = new_report(PresetName::Asymmetric, base, vec!["n_l=0.4".into()]);
    for method in methods(base) {
        let cfg = ExperimentConfig {
            noise: noise.clone(),
            baseline: method.clone(),
            ..base.clone()
        };
        let r = run_pipeline_on(&cfg, data)?;
        rep.rows.push(PresetRow {
            label: method_label(&method),
            cells: vec![Cell::from_report(&r)],
        });
        rep.runs.push(r);
    }
    Ok(rep)
}

fn acquisition_ablation(base: &ExperimentConfig, data: &PreparedData) -> Result<PresetReport> {
    let mut rep = new_report(PresetName::AcquisitionAblation, base, vec!["accuracy".into()]);
    for strategy in [
        Strategy::Stratified,
        Strategy::Entropy,
        Strategy::SmallestMargin,
        Strategy::LargestMargin,
        Strategy::LeastConfidence,
    ] {
        let mut cfg = base.clone();
        cfg.baseline = None;
        cfg.acquisition.strategy = strategy;
        // uncertainty strategies pick within seed-predicted classes
        cfg.acquisition.class_balanced = strategy != Strategy::Stratified;
        let r = run_pipeline_on(&cfg, data)?;
        let label = serde_json::to_value(strategy)?.as_str().unwrap_or_default().to_string();
        rep.rows.push(PresetRow { label, cells: vec![Cell::from_report(&r)] });
        rep.runs.push(r);
    }
    Ok(rep)
}

/// Test accuracy of each way of combining one trial's seed and fine-tuned
/// models, plus the two constituents alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeComparison {
    pub seed: f64,
    pub fine_tuned: f64,
    pub conventional: f64,
    pub ensemble: f64,
    pub fisher: f64,
    pub seed_weight: f64,
}

pub fn compare_merges(cfg: &ExperimentConfig, art: &TrialArtifacts, data: &PreparedData) -> Result<MergeComparison> {
    let (Some(seed), Some(tuned)) = (&art.seed, &art.fine_tuned) else {
        return Err(Error::InvalidInput("trial has no fine-tuned model to merge".into()));
    };
    let weights = match art.result.seed_weight {
        Some(w) => vec![w, 1.0 - w],
        None => cfg.merge.resolved_weights(cfg.noise.level),
    };
    let conventional = evaluate(&merge_weighted(&[seed, tuned], &weights)?, &data.test)?;
    let probs = ensemble_predict_with(&[seed, tuned], &data.test, cfg.merge.ensemble)?;
    let ensemble = accuracy_of(&probs, &data.test.y)?;
    let seeds = TrialSeeds::new(cfg, art.result.trial);
    let n = cfg.merge.fisher_samples.min(art.noisy_train.len());
    let fa = estimate_fisher(seed, &art.noisy_train, n, rng::derive(seeds.fisher, 0))?;
    let fb = estimate_fisher(tuned, &art.noisy_train, n, rng::derive(seeds.fisher, 1))?;
    let fisher = evaluate(&merge_fisher(&[seed, tuned], &[&fa, &fb], &weights)?, &data.test)?;
    Ok(MergeComparison {
        seed: evaluate(seed, &data.test)?,
        fine_tuned: evaluate(tuned, &data.test)?,
        conventional,
        ensemble,
        fisher,
        seed_weight: weights[0],
    })
}

fn merge_comparison(base: &ExperimentConfig, data: &PreparedData) -> Result<PresetReport> {
    let cfg = ExperimentConfig {
        baseline: None,
        components: Components::default(),
        ..base.clone()
    };
    let labels = ["Seed", "Fine-tuned", "Scratch (few-shot)", "Ensemble", "Fisher", "Conventional"];
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for t in 0..cfg.trials {
        let art = run_trial(&cfg, data, t)?;
        let cmp = compare_merges(&cfg, &art, data)?;
        let expert = art.expert.as_ref().expect("full method acquires labels");
        let seeds = TrialSeeds::new(&cfg, t);
        let scratch_cfg = TrainConfig {
            batch_size: cfg.refine.batch_size,
            smoothing_alpha: 0.0,
            ..cfg.seed_training.clone().with_seed(rng::derive(seeds.training, 1))
        };
        let few = data.train.subset(&expert.indices).with_labels(expert.corrected_labels.clone())?;
        let scratch = train_model(&data.arch(cfg.width_multiplier), &few, &scratch_cfg, ModelRole::Baseline, None)?.state;
        for (k, v) in labels.iter().zip([
            cmp.seed,
            cmp.fine_tuned,
            evaluate(&scratch, &data.test)?,
            cmp.ensemble,
            cmp.fisher,
            cmp.conventional,
        ]) {
            values.entry(k).or_default().push(v);
        }
    }
    let mut rep = new_report(PresetName::MergeComparison, base, vec!["accuracy".into()]);
    for l in labels {
        rep.rows.push(PresetRow {
            label: l.into(),
            cells: vec![Cell::from_values(&values[l])],
        });
    }
    Ok(rep)
}

fn shot_scaling(base: &ExperimentConfig, data: &PreparedData) -> Result<PresetReport> {
    let cols = SHOT_GRID.iter().map(|b| b.to_string()).collect();
    let mut rep = new_report(PresetName::ShotScaling, base, cols);
    let mut fhlr = Vec::new();
    for &budget in &SHOT_GRID {
        let mut cfg = base.clone();
        cfg.baseline = None;
        cfg.acquisition.budget = budget;
        let r = run_pipeline_on(&cfg, data)?;
        fhlr.push(Cell::from_report(&r));
        rep.runs.push(r);
    }
    rep.rows.push(PresetRow { label: "FHLR".into(), cells: fhlr });

    // confident learning with the same number of corrected labels
    let folds = base
        .compare
        .iter()
        .find_map(|b| match b {
            Baseline::ConfidentLearning(c) => Some(c.folds),
            _ => None,
        })
        .unwrap_or(5);
    let arch = data.arch(base.width_multiplier);
    let mut per_budget: Vec<Vec<f64>> = vec![Vec::new(); SHOT_GRID.len()];
    for t in 0..base.trials {
        let seeds = TrialSeeds::new(base, t);
        let (_, noisy) = super::corrupt_for_trial(base, data, &seeds)?;
        let tc = baseline_config(base, &seeds, &LossSpec::Ce);
        let oof = oof_probabilities(&arch, &noisy, folds, &tc)?;
        for (k, &budget) in SHOT_GRID.iter().enumerate() {
            let (_, state) = correct_and_retrain(&arch, &noisy, &oof.probs, &data.train.y, budget, &tc)?;
            per_budget[k].push(evaluate(&state, &data.test)?);
        }
    }
    rep.rows.push(PresetRow {
        label: "CL (corrected)".into(),
        cells: per_budget.iter().map(|v| Cell::from_values(v)).collect(),
    });
    Ok(rep)
}

fn component_ablation(base: &ExperimentConfig, data: &PreparedData) -> Result<PresetReport> {
    let mut rep = new_report(PresetName::ComponentAblation, base, vec!["accuracy".into()]);
    for comps in ABLATION_ROWS {
        let cfg = ExperimentConfig {
            baseline: None,
            components: comps,
            ..base.clone()
        };
        let r = run_pipeline_on(&cfg, data)?;
        rep.rows.push(PresetRow {
            label: comps.label(),
            cells: vec![Cell::from_report(&r)],
        });
        rep.runs.push(r);
    }
    Ok(rep)
}

fn annotator_panel(base: &ExperimentConfig, data: &PreparedData) -> Result<PresetReport> {
    let mut rep = new_report(PresetName::AnnotatorPanel, base, vec!["accuracy".into(), "kappa x100".into()]);
    let mut rows = vec![("d=0.0 (oracle)".to_string(), OracleConfig::Oracle)];
    for d in DISAGREEMENT_RATES {
        rows.push((format!("d={d:.1}"), OracleConfig::panel(d)));
    }
    for (label, oracle) in rows {
        let cfg = ExperimentConfig {
            baseline: None,
            oracle,
            ..base.clone()
        };
        let r = run_pipeline_on(&cfg, data)?;
        let kappas: Vec<f64> = r.trials.iter().filter_map(|t| t.kappa).map(|k| 100.0 * k).collect();
        rep.rows.push(PresetRow {
            label,
            cells: vec![Cell::from_report(&r), Cell::from_values(&kappas)],
        });
        rep.runs.push(r);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::tests::tiny_config;

    #[test]
    fn preset_names_parse() {
        for p in PresetName::ALL {
            assert_eq!(p.as_str().parse::<PresetName>().unwrap(), p);
        }
        assert!("table_9".parse::<PresetName>().is_err());
    }

    #[test]
    fn ablation_rows_match_toggle_matrix() {
        let labels: Vec<String> = ABLATION_ROWS.iter().map(|c| c.label()).collect();
        assert_eq!(labels, ["LS", "LS+EMA", "LS+FT", "LS+EMA+FT", "LS+FT+Merge", "LS+EMA+FT+Merge"]);
    }

    #[test]
    fn component_ablation_emits_six_rows() {
        let cfg = ExperimentConfig { trials: 1, ..tiny_config() };
        let rep = run_preset(PresetName::ComponentAblation, &cfg).unwrap();
        assert_eq!(rep.rows.len(), 6);
        assert!(rep.rows.iter().all(|r| r.cells[0].is_some()));
    }

    #[test]
    fn noise_sweep_has_four_columns() {
        let mut cfg = ExperimentConfig { trials: 1, ..tiny_config() };
        cfg.compare = vec![Baseline::Loss(LossSpec::Ce)];
        let rep = run_preset(PresetName::NoiseSweep, &cfg).unwrap();
        assert_eq!(rep.columns, ["n_l=0.0", "n_l=0.2", "n_l=0.4", "n_l=0.6"]);
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.rows.iter().all(|r| r.cells.len() == 4));
    }

    #[test]
    fn annotator_panel_reports_kappa_per_rate() {
        let cfg = ExperimentConfig { trials: 1, ..tiny_config() };
        let rep = run_preset(PresetName::AnnotatorPanel, &cfg).unwrap();
        assert_eq!(rep.columns, ["accuracy", "kappa x100"]);
        assert!(rep.row("d=0.1").unwrap().cells[1].is_some());
        assert!(rep.row("d=0.0 (oracle)").unwrap().cells[1].is_none());
    }

    #[test]
    fn merge_comparison_rows() {
        let cfg = ExperimentConfig { trials: 1, ..tiny_config() };
        let rep = run_preset(PresetName::MergeComparison, &cfg).unwrap();
        assert_eq!(rep.rows.len(), 6);
        assert!(rep.row("Fisher").is_some());
    }
}
