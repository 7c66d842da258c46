//! End-to-end runs: corrupt, seed-train, acquire, label, fine-tune, merge,
//! evaluate, repeated over trials; plus the comparison presets.

mod config;
mod presets;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{
    desk_synthetic, prepare_data, Baseline, ClSpec, ClTag, Components, DataSource, ExperimentConfig, OracleConfig,
    PreparedData, RefineConfig,
};
pub use presets::{
    compare_merges, run_preset, run_preset_on, Cell, MergeComparison, PresetName, PresetReport, PresetRow, ABLATION_ROWS,
    DISAGREEMENT_RATES, NOISE_LEVELS, SHOT_GRID,
};
pub use report::{load_reports, render_csv, render_text, write_preset_outputs};

use crate::acquisition::{select_batch, AcquisitionSpec};
use crate::confident::{estimate_joint, oof_probabilities, prune_and_retrain, pruning_precision};
use crate::datasets::WindowedDataset;
use crate::merging::{
    ensemble_predict_with, estimate_fisher, merge_fisher, merge_provenance, merge_weighted, search_seed_weight,
    MergeMethod,
};
use crate::network::{save_checkpoint, ArchitectureSpec, ModelRole, ModelState};
use crate::noise::{build_noise_matrix, corrupt_labels, CorruptionRecord};
use crate::oracle::{fleiss_kappa, oracle_labels, panel_annotate, AnnotatorPanel};
use crate::rng;
use crate::training::{accuracy, fine_tune, train_model, ExpertSet, ExpertSource, LossSpec, TrainConfig};
use crate::{Error, Result};

/// Fraction of argmax-correct predictions of the EMA parameters.
pub fn evaluate(state: &ModelState, test: &WindowedDataset) -> Result<f64> {
    accuracy(state, test)
}

/// Accuracy of a probability matrix against labels.
pub fn accuracy_of(probs: &crate::matrix::Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("accuracy on an empty dataset".into()));
    }
    let hits = probs.argmax_rows().iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Seeds for one trial, all derived from `base_seed + trial`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub trial_seed: u64,
    pub corruption: u64,
    pub training: u64,
    pub acquisition: u64,
    pub refine: u64,
    pub panel: u64,
    pub fisher: u64,
}

impl TrialSeeds {
    pub fn new(cfg: &ExperimentConfig, trial: usize) -> Self {
        let t = cfg.base_seed.wrapping_add(trial as u64);
        let panel_offset = match cfg.oracle {
            OracleConfig::Panel { rng_seed, .. } => rng_seed,
            _ => 0,
        };
        Self {
            trial_seed: t,
            corruption: rng::derive(t, 10),
            training: rng::derive(t.wrapping_add(cfg.seed_training.rng_seed), 20),
            acquisition: rng::derive(t.wrapping_add(cfg.acquisition.rng_seed), 30),
            refine: rng::derive(t, 40),
            panel: rng::derive(t.wrapping_add(panel_offset), 50),
            fisher: rng::derive(t, 60),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClSummary {
    pub pruned: usize,
    pub precision: f64,
    pub off_diagonal_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub trial_seed: u64,
    pub accuracy: f64,
    /// Realized fraction of flipped training labels.
    pub flip_rate: f64,
    /// Test accuracy after each stage that ran.
    pub phases: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_label_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confident_learning: Option<ClSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub config_checksum: String,
    pub trials: Vec<TrialResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<TrialFailure>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation; 0 for a single trial.
    pub std: f64,
    pub wall_clock_secs: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Everything one trial produced, for callers that reuse trained models.
pub struct TrialArtifacts {
    pub result: TrialResult,
    pub corruption: CorruptionRecord,
    pub noisy_train: WindowedDataset,
    pub seed: Option<ModelState>,
    pub expert: Option<ExpertSet>,
    pub fine_tuned: Option<ModelState>,
    pub final_model: Option<ModelState>,
}

/// Corrupt the training labels for one trial. Identical for every method
/// that shares the noise spec and trial seed.
pub fn corrupt_for_trial(cfg: &ExperimentConfig, data: &PreparedData, seeds: &TrialSeeds) -> Result<(CorruptionRecord, WindowedDataset)> {
    let q = build_noise_matrix(&cfg.noise)?;
    let record = corrupt_labels(&data.train.y, &q, seeds.corruption)?;
    let noisy = data.train.with_labels(record.noisy_labels.clone())?;
    Ok((record, noisy))
}

fn seed_config(cfg: &ExperimentConfig, seeds: &TrialSeeds) -> TrainConfig {
    let mut tc = cfg.seed_training.clone().with_seed(seeds.training);
    if !cfg.components.ls {
        tc.smoothing_alpha = 0.0;
    }
    if !cfg.components.ema {
        tc.ema_momentum = 0.0;
    }
    tc
}

fn baseline_config(cfg: &ExperimentConfig, seeds: &TrialSeeds, loss: &LossSpec) -> TrainConfig {
    TrainConfig {
        loss: loss.clone(),
        smoothing_alpha: 0.0,
        ema_momentum: 0.0,
        ..cfg.seed_training.clone().with_seed(seeds.training)
    }
}

/// Expert labels for the selected indices, always from the clean source.
pub fn acquire_labels(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    indices: &[usize],
    seeds: &TrialSeeds,
) -> Result<(ExpertSet, Option<f64>)> {
    match &cfg.oracle {
        OracleConfig::Oracle => Ok((
            ExpertSet {
                indices: indices.to_vec(),
                corrected_labels: oracle_labels(indices, &data.train.y)?,
                source: ExpertSource::Oracle,
            },
            None,
        )),
        OracleConfig::Panel { num_annotators, disagreement_rate, .. } => {
            let panel = AnnotatorPanel {
                num_annotators: *num_annotators,
                disagreement_rate: *disagreement_rate,
                num_classes: data.train.num_classes,
                rng_seed: seeds.panel,
            };
            let (votes, agg) = panel_annotate(indices, &data.train.y, &panel)?;
            let kappa = fleiss_kappa(&votes, data.train.num_classes).ok();
            Ok((
                ExpertSet {
                    indices: indices.to_vec(),
                    corrected_labels: agg,
                    source: ExpertSource::Panel,
                },
                kappa,
            ))
        }
        OracleConfig::Live { expert_set } => {
            let text = fs::read_to_string(expert_set).map_err(|e| Error::io(expert_set, e))?;
            let set: ExpertSet = serde_json::from_str(&text)?;
            set.validate(data.train.len(), data.train.num_classes)?;
            Ok((set, None))
        }
    }
}

fn save_stage(dir: Option<&Path>, name: &str, state: &ModelState, prov: Option<crate::network::Provenance>, out: &mut Vec<String>) -> Result<()> {
    if let Some(d) = dir {
        let path = d.join(name);
        save_checkpoint(&path, state, prov)?;
        out.push(path.display().to_string());
    }
    Ok(())
}

/// Run one trial of the configured method.
pub fn run_trial(cfg: &ExperimentConfig, data: &PreparedData, trial: usize) -> Result<TrialArtifacts> {
    let seeds = TrialSeeds::new(cfg, trial);
    let (corruption, noisy) = corrupt_for_trial(cfg, data, &seeds)?;
    let arch = data.arch(cfg.width_multiplier);
    let ckpt_dir = match (&cfg.output_dir, cfg.save_checkpoints) {
        (Some(d), true) => Some(d.join(format!("trial_{trial}"))),
        _ => None,
    };
    let mut result = TrialResult {
        trial,
        trial_seed: seeds.trial_seed,
        accuracy: f64::NAN,
        flip_rate: corruption.flip_rate(),
        phases: BTreeMap::new(),
        expert_label_accuracy: None,
        kappa: None,
        seed_weight: None,
        confident_learning: None,
        checkpoints: Vec::new(),
    };
    let mut art = TrialArtifacts {
        result: result.clone(),
        corruption,
        noisy_train: noisy,
        seed: None,
        expert: None,
        fine_tuned: None,
        final_model: None,
    };
    match &cfg.baseline {
        Some(Baseline::Loss(loss)) => {
            let tc = baseline_config(cfg, &seeds, loss);
            let state = train_model(&arch, &art.noisy_train, &tc, ModelRole::Baseline, None)?.state;
            result.accuracy = evaluate(&state, &data.test)?;
            result.phases.insert("baseline".into(), result.accuracy);
            save_stage(ckpt_dir.as_deref(), "baseline", &state, None, &mut result.checkpoints)?;
            art.final_model = Some(state);
        }
        Some(Baseline::ConfidentLearning(cl)) => {
            let tc = baseline_config(cfg, &seeds, &LossSpec::Ce);
            let oof = oof_probabilities(&arch, &art.noisy_train, cl.folds, &tc)?;
            let joint = estimate_joint(&oof.probs, &art.noisy_train.y)?;
            let out = prune_and_retrain(&arch, &art.noisy_train, &joint, &oof.probs, &tc)?;
            result.accuracy = evaluate(&out.state, &data.test)?;
            result.phases.insert("baseline".into(), result.accuracy);
            result.confident_learning = Some(ClSummary {
                pruned: out.audit.pruned.len(),
                precision: pruning_precision(&out.audit.pruned, &art.corruption.flipped_mask),
                off_diagonal_mass: joint.off_diagonal_mass(),
            });
            if let Some(d) = &ckpt_dir {
                fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                let p = d.join("cl_audit.json");
                fs::write(&p, serde_json::to_vec_pretty(&out.audit)?).map_err(|e| Error::io(&p, e))?;
            }
            save_stage(ckpt_dir.as_deref(), "baseline", &out.state, None, &mut result.checkpoints)?;
            art.final_model = Some(out.state);
        }
        None => run_method(cfg, data, &arch, &seeds, &mut art, &mut result, ckpt_dir.as_deref())?,
    }
    art.result = result;
    Ok(art)
}

fn run_method(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    arch: &ArchitectureSpec,
    seeds: &TrialSeeds,
    art: &mut TrialArtifacts,
    result: &mut TrialResult,
    ckpt: Option<&Path>,
) -> Result<()> {
    let tc = seed_config(cfg, seeds);
    let seed = train_model(arch, &art.noisy_train, &tc, ModelRole::Seed, None)?.state;
    let seed_acc = evaluate(&seed, &data.test)?;
    result.phases.insert("seed".into(), seed_acc);
    save_stage(ckpt, "seed", &seed, None, &mut result.checkpoints)?;
    if !cfg.components.ft {
        result.accuracy = seed_acc;
        art.final_model = Some(seed.clone());
        art.seed = Some(seed);
        return Ok(());
    }

    let probs = seed.predict_proba(&art.noisy_train, true)?;
    let spec = AcquisitionSpec {
        rng_seed: seeds.acquisition,
        ..cfg.acquisition.clone()
    };
    let selection = select_batch(&probs, &spec, &BTreeSet::new())?;
    let (expert, kappa) = acquire_labels(cfg, data, &selection.indices, seeds)?;
    let truth = oracle_labels(&expert.indices, &data.train.y)?;
    let agree = truth.iter().zip(&expert.corrected_labels).filter(|(a, b)| a == b).count();
    result.expert_label_accuracy = Some(agree as f64 / expert.len().max(1) as f64);
    result.kappa = kappa;

    let ft_cfg = TrainConfig {
        epochs: cfg.refine.epochs,
        batch_size: cfg.refine.batch_size,
        ..tc.clone().with_seed(seeds.refine)
    };
    let tuned = fine_tune(&seed, &expert, &art.noisy_train, cfg.refine.eta, &ft_cfg)?.state;
    let ft_acc = evaluate(&tuned, &data.test)?;
    result.phases.insert("fine_tuned".into(), ft_acc);
    save_stage(ckpt, "fine_tuned", &tuned, None, &mut result.checkpoints)?;

    if cfg.components.merge {
        let weights = if cfg.merge.search_on_validation {
            let val = data
                .val
                .as_ref()
                .ok_or_else(|| Error::Config("seed-weight search needs a validation split".into()))?;
            let (w, _) = search_seed_weight(&seed, &tuned, val)?;
            vec![w, 1.0 - w]
        } else {
            cfg.merge.resolved_weights(cfg.noise.level)
        };
        result.seed_weight = Some(weights[0]);
        let (acc, merged) = merge_pair(cfg, &seed, &tuned, &weights, &art.noisy_train, &data.test, seeds.fisher)?;
        result.phases.insert("merged".into(), acc);
        result.accuracy = acc;
        if let Some(m) = &merged {
            let prov = merge_provenance(&[&seed, &tuned], &weights, cfg.merge.method);
            save_stage(ckpt, "merged", m, Some(prov), &mut result.checkpoints)?;
        }
        art.final_model = merged;
    } else {
        result.accuracy = ft_acc;
        art.final_model = Some(tuned.clone());
    }
    art.seed = Some(seed);
    art.expert = Some(expert);
    art.fine_tuned = Some(tuned);
    Ok(())
}

/// Combine seed and fine-tuned models with the configured method; returns the
/// test accuracy and, for parameter merges, the merged model.
pub fn merge_pair(
    cfg: &ExperimentConfig,
    seed: &ModelState,
    tuned: &ModelState,
    weights: &[f64],
    pool: &WindowedDataset,
    test: &WindowedDataset,
    fisher_seed: u64,
) -> Result<(f64, Option<ModelState>)> {
    match cfg.merge.method {
        MergeMethod::WeightedAverage => {
            let m = merge_weighted(&[seed, tuned], weights)?;
            Ok((evaluate(&m, test)?, Some(m)))
        }
        MergeMethod::Fisher => {
            let n = cfg.merge.fisher_samples.min(pool.len());
            let fa = estimate_fisher(seed, pool, n, rng::derive(fisher_seed, 0))?;
            let fb = estimate_fisher(tuned, pool, n, rng::derive(fisher_seed, 1))?;
            let m = merge_fisher(&[seed, tuned], &[&fa, &fb], weights)?;
            Ok((evaluate(&m, test)?, Some(m)))
        }
        MergeMethod::Ensemble => {
            let probs = ensemble_predict_with(&[seed, tuned], test, cfg.merge.ensemble)?;
            Ok((accuracy_of(&probs, &test.y)?, None))
        }
    }
}

/// Run every trial and summarize. A failed trial is recorded and skipped;
/// the run fails only when no trial succeeds.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let data = prepare_data(&cfg.data)?;
    run_pipeline_on(cfg, &data)
}

/// As [`run_pipeline`], on already loaded data.
pub fn run_pipeline_on(cfg: &ExperimentConfig, data: &PreparedData) -> Result<RunReport> {
    cfg.validate()?;
    if data.train.num_classes != cfg.noise.num_classes {
        return Err(Error::Config(format!(
            "noise model has {} classes, data has {}",
            cfg.noise.num_classes, data.train.num_classes
        )));
    }
    let start = Instant::now();
    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for t in 0..cfg.trials {
        match run_trial(cfg, data, t) {
            Ok(a) => {
                log::info!("{} trial {t}: accuracy {:.4}", cfg.label(), a.result.accuracy);
                trials.push(a.result);
            }
            Err(e) if e.is_config() => return Err(e),
            Err(e) => {
                log::warn!("{} trial {t} failed: {e}", cfg.label());
                failures.push(TrialFailure { trial: t, error: e.to_string() });
            }
        }
    }
    if trials.is_empty() {
        return Err(Error::Runtime(format!(
            "all {} trials failed; first error: {}",
            cfg.trials,
            failures.first().map_or("", |f| f.error.as_str())
        )));
    }
    let accuracies: Vec<f64> = trials.iter().map(|t| t.accuracy).collect();
    let (mean, std) = mean_std(&accuracies);
    let report = RunReport {
        label: cfg.label(),
        config_checksum: cfg.checksum(),
        trials,
        failures,
        accuracies,
        mean,
        std,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("report.json");
        fs::write(&p, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::SyntheticSpec;
    use crate::matrix::Matrix;
    use crate::noise::NoiseSpec;

    pub(crate) fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk(NoiseSpec::symmetric(3, 0.2, 0.2, 0));
        cfg.data = DataSource::Synthetic(SyntheticSpec {
            num_classes: 3,
            channels: 1,
            window_length: 64,
            train_count: 90,
            test_count: 30,
            class_separability: 2.0,
            noise_floor: 0.3,
            rng_seed: 4,
            num_subjects: 0,
        });
        cfg.seed_training.epochs = 2;
        cfg.refine.epochs = 2;
        cfg.acquisition.budget = 9;
        cfg.trials = 2;
        cfg
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[0.0, 1.0]);
        assert_eq!((m, s), (0.5, 0.5));
    }

    #[test]
    fn accuracy_of_simple_predictors() {
        // constant prediction on balanced labels
        let probs = Matrix::from_rows(&vec![vec![1.0, 0.0, 0.0]; 6]);
        assert!((accuracy_of(&probs, &[0, 1, 2, 0, 1, 2]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let perfect = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(accuracy_of(&perfect, &[1, 0]).unwrap(), 1.0);
        assert!(accuracy_of(&perfect, &[]).is_err());
    }

    #[test]
    fn trials_report_mean_and_std() {
        let cfg = tiny_config();
        let report = run_pipeline(&cfg).unwrap();
        assert_eq!(report.trials.len(), 2);
        assert_eq!(report.accuracies.len(), 2);
        let (m, s) = mean_std(&report.accuracies);
        assert_eq!((report.mean, report.std), (m, s));
        let t = &report.trials[0];
        assert!(t.phases.contains_key("seed") && t.phases.contains_key("fine_tuned") && t.phases.contains_key("merged"));
        assert_eq!(t.expert_label_accuracy, Some(1.0));
    }

    #[test]
    fn reports_are_reproducible() {
        let cfg = ExperimentConfig { trials: 1, ..tiny_config() };
        let a = run_pipeline(&cfg).unwrap();
        let b = run_pipeline(&cfg).unwrap();
        assert_eq!(a.accuracies, b.accuracies);
        assert_eq!(a.trials, b.trials);
    }

    #[test]
    fn corruption_is_shared_across_methods() {
        let cfg = tiny_config();
        let data = prepare_data(&cfg.data).unwrap();
        let fhlr = run_trial(&cfg, &data, 1).unwrap();
        let ce = ExperimentConfig { baseline: Some(Baseline::Loss(LossSpec::Ce)), ..cfg.clone() };
        let base = run_trial(&ce, &data, 1).unwrap();
        assert_eq!(fhlr.corruption.noisy_labels, base.corruption.noisy_labels);
        let other = run_trial(&cfg, &data, 0).unwrap();
        assert_ne!(fhlr.corruption.noisy_labels, other.corruption.noisy_labels);
    }

    #[test]
    fn ls_only_stops_after_seed() {
        let cfg = ExperimentConfig {
            components: Components::new(true, false, false, false),
            trials: 1,
            ..tiny_config()
        };
        let data = prepare_data(&cfg.data).unwrap();
        let a = run_trial(&cfg, &data, 0).unwrap();
        assert_eq!(a.result.phases.len(), 1);
        let seed = a.seed.unwrap();
        // EMA disabled: evaluated parameters are the raw ones
        assert_eq!(seed.ema_params, seed.params);
        assert!(a.fine_tuned.is_none());
    }

    #[test]
    fn panel_oracle_reports_kappa() {
        let cfg = ExperimentConfig {
            oracle: OracleConfig::panel(0.1),
            trials: 1,
            ..tiny_config()
        };
        let r = run_pipeline(&cfg).unwrap();
        assert!(r.trials[0].kappa.is_some());
    }

    #[test]
    fn live_oracle_reads_expert_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("expert.json");
        let set = ExpertSet { indices: vec![0, 1, 2], corrected_labels: vec![0, 1, 2], source: ExpertSource::LiveUi };
        fs::write(&path, serde_json::to_vec(&set).unwrap()).unwrap();
        let cfg = ExperimentConfig { oracle: OracleConfig::Live { expert_set: path }, trials: 1, ..tiny_config() };
        let data = prepare_data(&cfg.data).unwrap();
        let a = run_trial(&cfg, &data, 0).unwrap();
        assert_eq!(a.expert.unwrap(), set);
    }

    #[test]
    fn output_dir_receives_report_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            output_dir: Some(dir.path().to_path_buf()),
            save_checkpoints: true,
            trials: 1,
            ..tiny_config()
        };
        let r = run_pipeline(&cfg).unwrap();
        assert!(dir.path().join("report.json").exists());
        assert_eq!(r.trials[0].checkpoints.len(), 3);
        let (merged, manifest) = crate::network::load_checkpoint(dir.path().join("trial_0/merged")).unwrap();
        assert_eq!(merged.role, ModelRole::Merged);
        assert_eq!(manifest.provenance.unwrap().constituents.len(), 2);
    }

    #[test]
    fn missing_validation_split_is_a_config_error() {
        let mut cfg = ExperimentConfig { trials: 1, ..tiny_config() };
        cfg.merge.search_on_validation = true;
        assert!(run_pipeline(&cfg).unwrap_err().is_config());
    }

    #[test]
    fn every_baseline_runs() {
        let cfg = ExperimentConfig { trials: 1, ..tiny_config() };
        let data = prepare_data(&cfg.data).unwrap();
        for b in Baseline::all() {
            let c = ExperimentConfig { baseline: Some(b.clone()), ..cfg.clone() };
            let r = run_pipeline_on(&c, &data).unwrap();
            assert_eq!(r.label, b.label());
            assert!(r.mean.is_finite());
        }
    }
}
