use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssbr_prealign::eval::pearson_report;
use ssbr_prealign::ssbr::{loss_ssbr, sample_stack, train_regressor};
use ssbr_prealign::volume::make_phantom;
use ssbr_prealign::{LearnedScorer, PhantomSpec, SliceModel, SliceScorer, TrainConfig, Volume};

fn linear_phantoms(seeds: std::ops::Range<u64>) -> Vec<Volume<f64>> {
    seeds
        .map(|s| {
            make_phantom(&PhantomSpec {
                dims: [32, 32, 100],
                anatomy_knots: vec![(0.0, -200.0), (1.0, 200.0)],
                ..PhantomSpec::standard(s)
            })
            .unwrap()
        })
        .collect()
}

/// Mean loss over a fixed set of 256 stacks, so before/after compare the same batch.
fn held_batch_loss(model: &SliceModel<f64>, vols: &[Volume<f64>]) -> f64 {
    let scorer = LearnedScorer::new(model.clone()).unwrap();
    let curves: Vec<Vec<f64>> = vols
        .iter()
        .map(|v| scorer.score_all(v).unwrap().scores().to_vec())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let batch: Vec<Vec<f64>> = (0..256)
        .map(|i| {
            let vid = i % vols.len();
            let s = sample_stack(vid, vols[vid].nz(), 8, &mut rng).unwrap();
            s.slice_indices.iter().map(|&k| curves[vid][k]).collect()
        })
        .collect();
    loss_ssbr(&batch).unwrap()
}

#[test]
fn loss_drops_tenfold_on_linear_phantoms() {
    let vols = linear_phantoms(0..10);
    let cfg = TrainConfig {
        learning_rate: 0.05,
        iterations: 2000,
        ..TrainConfig::default()
    };
    let initial = SliceModel {
        params: cfg.initial_params().unwrap(),
        features: cfg.features,
    };
    let out = train_regressor(&vols, &cfg).unwrap();
    assert_eq!(out.trace.len(), 2000);
    assert!(out.trace.iter().all(|l| l.is_finite()));
    let before = held_batch_loss(&initial, &vols);
    let after = held_batch_loss(&out.model, &vols);
    println!("held-out batch loss {before:.4} -> {after:.4} ({:.1}x)", before / after);
    assert!(after * 10.0 <= before, "{before} -> {after}");

    let held_out = linear_phantoms(100..105);
    let r = pearson_report(&LearnedScorer::new(out.model).unwrap(), &held_out).unwrap();
    assert!(r.min.unwrap() > 0.99, "{r:?}");
}
