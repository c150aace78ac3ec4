mod common;

use lmfn::train::{
    loss_csv, synthetic_scene, train, BlurSpec, Checkpoint, Dataset, LossRecord, TrainConfig,
};
use lmfn::{LmfnError, LmfnModel};

use common::*;

fn data(n: u64, side: usize) -> Dataset {
    let sharp = (0..n)
        .map(|i| synthetic_scene(side, side, 40 + i).unwrap())
        .collect();
    Dataset::synthesize(sharp, &BlurSpec::gaussian(1.0)).unwrap()
}

fn config(steps: u64) -> TrainConfig {
    TrainConfig {
        model: tiny_config(),
        steps,
        batch_size: 2,
        patch_size: 8,
        log_every: 1,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let d = data(3, 20);
    let a = train(&d, &config(6)).unwrap();
    let b = train(&d, &config(6)).unwrap();
    assert_eq!(
        a.final_checkpoint.to_bytes().unwrap(),
        b.final_checkpoint.to_bytes().unwrap()
    );
    assert_eq!(a.trace, b.trace);
    let c = train(
        &d,
        &TrainConfig {
            seed: 12,
            ..config(6)
        },
    )
    .unwrap();
    assert_ne!(
        a.final_checkpoint.to_bytes().unwrap(),
        c.final_checkpoint.to_bytes().unwrap()
    );
}

#[test]
fn zero_steps_returns_the_initial_model() {
    let cfg = config(0);
    let out = train(&data(1, 8), &cfg).unwrap();
    let init = LmfnModel::new(cfg.model.clone(), cfg.seed).unwrap();
    assert_eq!(out.final_checkpoint.params, *init.params());
    assert_eq!(out.best_checkpoint.params, *init.params());
    assert!(out.best.is_none() && out.trace.is_empty());
}

#[test]
fn outputs_are_written_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&data(2, 16), &config(4)).unwrap();
    let paths = out.write(&dir.path().join("run.ckpt")).unwrap();
    let final_ckpt = Checkpoint::load(&paths.final_checkpoint).unwrap();
    assert_eq!(final_ckpt.optimizer.as_ref().unwrap().step, 4);
    assert!(Checkpoint::load(&paths.best_checkpoint)
        .unwrap()
        .optimizer
        .is_none());
    let csv = std::fs::read_to_string(&paths.loss_csv).unwrap();
    assert_eq!(csv, loss_csv(&out.trace));
    assert_eq!(csv.lines().next(), Some("iteration,loss,lr"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn smoothed_loss_trends_down_while_overfitting() {
    let cfg = TrainConfig {
        base_lr: 1e-3,
        ..config(160)
    };
    let out = train(&data(2, 8), &cfg).unwrap();
    let means: Vec<f64> = out
        .trace
        .chunks(40)
        .map(|c| c.iter().map(|r| r.loss as f64).sum::<f64>() / c.len() as f64)
        .collect();
    for w in means.windows(2) {
        assert!(w[1] < w[0], "window means {means:?}");
    }
}

#[test]
fn diverging_training_stops_with_a_numerical_error() {
    let cfg = TrainConfig {
        base_lr: 1e30,
        ..config(20)
    };
    match train(&data(1, 8), &cfg) {
        Err(LmfnError::Numerical(msg)) => assert!(msg.contains("step"), "{msg}"),
        other => panic!("expected a numerical failure, got {other:?}"),
    }
}

#[test]
fn bad_geometry_is_rejected() {
    let d = data(1, 8);
    for patch_size in [6, 16] {
        let cfg = TrainConfig {
            patch_size,
            ..config(1)
        };
        assert!(train(&d, &cfg).is_err(), "patch {patch_size}");
    }
}

#[test]
fn directories_load_sorted_and_empty_ones_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert!(Dataset::load_dir(dir.path(), &BlurSpec::default()).is_err());
    for (name, seed) in [("b.png", 1), ("a.png", 2)] {
        synthetic_scene(12, 10, seed)
            .unwrap()
            .save_png(dir.path().join(name))
            .unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let d = Dataset::load_dir(dir.path(), &BlurSpec::default()).unwrap();
    assert_eq!(d.len(), 2);
    let a = lmfn::ImagePlane::load_png(dir.path().join("a.png")).unwrap();
    assert_eq!(d.pairs()[0].1, a);
}

#[test]
fn loss_csv_has_one_row_per_record() {
    let rows = [
        LossRecord {
            iteration: 0,
            loss: 0.5,
            lr: 1e-4,
        },
        LossRecord {
            iteration: 10,
            loss: 0.25,
            lr: 1e-4,
        },
    ];
    assert_eq!(
        loss_csv(&rows),
        "iteration,loss,lr\n0,0.5,0.0001\n10,0.25,0.0001\n"
    );
}
