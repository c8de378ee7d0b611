//! End-to-end training runs on the synthetic corpus at desk scale.

use wnet::model::{WNet, WNetConfig};
use wnet::training::{synth_scenes, EpochStats, RunConfig, Scene, SyntheticSceneSpec, TrainConfig, Trainer};

fn corpus(seed: u64) -> Vec<Scene> {
    synth_scenes(&SyntheticSceneSpec::default(), 200, 1000 + seed, &RunConfig::desk()).unwrap()
}

fn run(model: WNetConfig, seed: u64, epochs: usize, scenes: &[Scene]) -> Vec<EpochStats> {
    wnet::parallel::set_threads(0);
    let train = TrainConfig {
        epochs,
        seed,
        ..RunConfig::desk().train
    };
    let mut t = Trainer::new(WNet::with_seed(model, seed).unwrap(), train).unwrap();
    t.fit(scenes, |_, _| Ok(())).unwrap()
}

fn median(mut v: Vec<bool>) -> bool {
    v.sort();
    v[v.len() / 2]
}

#[test]
fn epoch_loss_strictly_decreases_over_first_three_epochs() {
    let verdicts: Vec<bool> = (0..3)
        .map(|seed| {
            let curve = run(WNetConfig::tiny(), seed, 3, &corpus(seed));
            let losses: Vec<f64> = curve.iter().map(|s| s.loss).collect();
            eprintln!("seed {seed}: {losses:?}");
            losses.windows(2).all(|w| w[1] < w[0])
        })
        .collect();
    assert!(median(verdicts), "loss did not decrease for most seeds");
}

#[test]
fn baseline_without_reinforcement_still_reduces_mse() {
    let model = WNetConfig {
        reinforcement_enabled: false,
        ..WNetConfig::tiny()
    };
    let scenes = corpus(0);
    let curve = run(model, 0, 3, &scenes);
    assert!(curve.iter().all(|s| s.bce.is_none()));
    assert!(curve[2].mse < curve[0].mse, "{curve:?}");
}
