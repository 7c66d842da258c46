use std::path::PathBuf;

use fhlr::datasets::SyntheticSpec;
use fhlr::experiment::ExperimentConfig;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_experiment_configs_validate() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if !name.ends_with(".json") || name.starts_with("synth_") {
            continue;
        }
        ExperimentConfig::from_file(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
        seen += 1;
    }
    assert!(seen >= 3);
}

#[test]
fn desk_config_file_matches_builtin_desk_data() {
    let cfg = ExperimentConfig::from_file(configs_dir().join("desk_symmetric.json")).unwrap();
    let builtin = ExperimentConfig::desk(cfg.noise.clone());
    assert_eq!(cfg.data, builtin.data);
    assert_eq!(cfg.seed_training, builtin.seed_training);
    assert_eq!(cfg.refine, builtin.refine);
    let text = std::fs::read_to_string(configs_dir().join("synth_desk.json")).unwrap();
    let spec: SyntheticSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(spec, fhlr::experiment::desk_synthetic());
}
