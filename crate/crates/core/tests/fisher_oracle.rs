use fhlr::datasets::{make_synthetic, SyntheticSpec, WindowedDataset};
use fhlr::merging::{estimate_fisher, MergeSpec};
use fhlr::network::{build_model, ArchitectureSpec, ModelRole, ModelState};
use fhlr::training::{accuracy, train_model, LossSpec, TrainConfig};

fn data(n: usize) -> WindowedDataset {
    make_synthetic(&SyntheticSpec {
        num_classes: 3,
        channels: 2,
        window_length: 64,
        train_count: n,
        test_count: 3,
        class_separability: 2.0,
        noise_floor: 0.3,
        rng_seed: 21,
        num_subjects: 0,
    })
    .unwrap()
    .0
}

fn channels_last(ds: &WindowedDataset, i: usize) -> Vec<f64> {
    let (c, l) = (ds.channels, ds.window_length);
    let w = ds.window(i);
    let mut out = vec![0.0; c * l];
    for ch in 0..c {
        for t in 0..l {
            out[t * c + ch] = w[ch * l + t] as f64;
        }
    }
    out
}

#[test]
fn constant_output_model_matches_per_example_oracle() {
    let ds = data(60);
    let arch = ArchitectureSpec::standard(2, 64, 3).with_width(0.5);
    let base = build_model(&arch, 4).unwrap();
    let layout = base.layout().clone();
    let w = layout.get("dense.weight").unwrap().range();
    let b = layout.get("dense.bias").unwrap().range();
    let mut values = base.flatten();
    values[w.clone()].iter_mut().for_each(|v| *v = 0.0);
    let bias = [0.4, -0.3, 0.1];
    values[b.clone()].copy_from_slice(&bias);
    let state = ModelState::with_params(&base, values.clone(), ModelRole::Seed).unwrap();

    let f = estimate_fisher(&state, &ds, 40, 9).unwrap();
    assert_eq!(f.estimation_sample_count(), 40);

    // logits are the bias for every input
    let z: f64 = bias.iter().map(|v: &f64| v.exp()).sum();
    let p: Vec<f64> = bias.iter().map(|v| v.exp() / z).collect();
    let cf = w.len() / 3;
    let mut want = vec![0.0; values.len()];
    for &i in &f.examples {
        let (_, tape) = state.network().forward_cl(&values, channels_last(&ds, i), 1, None);
        let feats = tape.features();
        assert_eq!(feats.len(), cf);
        // every label y weighted by p_y
        for (y, &py) in p.iter().enumerate() {
            for c in 0..3 {
                let r = f64::from(u8::from(c == y)) - p[c];
                want[b.start + c] += py * r * r;
                for j in 0..cf {
                    want[w.start + c * cf + j] += py * (r * feats[j]).powi(2);
                }
            }
        }
    }
    want.iter_mut().for_each(|v| *v /= 40.0);
    for (k, (got, exp)) in f.values.iter().zip(&want).enumerate() {
        assert!((got - exp).abs() <= 1e-9 * exp.abs().max(1e-3), "param {k}: {got} vs {exp}");
    }
    // nothing upstream of a zero dense layer receives gradient
    assert!(f.values[..w.start].iter().all(|&v| v == 0.0));
}

#[test]
fn estimate_is_stable_when_samples_double() {
    let ds = data(1200);
    let arch = ArchitectureSpec::standard(2, 64, 3).with_width(0.5);
    let cfg = TrainConfig {
        epochs: 15,
        smoothing_alpha: 0.0,
        loss: LossSpec::Ce,
        rng_seed: 2,
        ..TrainConfig::default()
    };
    let state = train_model(&arch, &ds, &cfg, ModelRole::Seed, None).unwrap().state;
    assert_eq!(accuracy(&state, &ds).unwrap(), 1.0);
    // doubling up to the default sample count
    let n = MergeSpec::default().fisher_samples;
    for seed in [1, 2, 3] {
        let half = estimate_fisher(&state, &ds, n / 2, seed).unwrap();
        let full = estimate_fisher(&state, &ds, n, seed).unwrap();
        // total variation relative to the Fisher mass
        let moved: f64 = half.values.iter().zip(&full.values).map(|(a, b)| (a - b).abs()).sum();
        let rel = moved / full.values.iter().sum::<f64>();
        assert!(rel < 0.1, "seed {seed}: relative change {rel}");
    }
}
