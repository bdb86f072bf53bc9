use loopguard_core::synthetic::{self, SeparationFixture};
use loopguard_core::training::{latent_variance, reconstruction_loss, COLLAPSE_VARIANCE};
use loopguard_core::{
    finetune_svdd, pretrain_autoencoder, split_dataset, AutoencoderModel, EmbeddingMatrix, EncoderSpec, Error,
    Hyperparameters, Matrix, SvddOptions, Variant,
};
use proptest::prelude::*;

fn small_spec(variant: Variant) -> EncoderSpec {
    EncoderSpec {
        dims: vec![64, 32, 16, 8],
        variant,
        allow_custom_latent: true,
        ..EncoderSpec::default()
    }
}

fn hp(max_epochs: usize, seed: u64) -> Hyperparameters {
    Hyperparameters {
        max_epochs,
        seed,
        ..Hyperparameters::default()
    }
}

fn low_rank_embeddings(n: usize, d: usize, rank: usize, seed: u64) -> EmbeddingMatrix {
    EmbeddingMatrix::from_matrix(&synthetic::low_rank(n, d, rank, 0.0, seed).unwrap()).unwrap()
}

#[test]
fn pretraining_cuts_validation_error_on_low_rank_data() {
    let data = low_rank_embeddings(200, 64, 4, 1);
    let split = split_dataset(200, 0.8, 1).unwrap();
    for variant in [Variant::Ae, Variant::Aewres] {
        let (model, history) = pretrain_autoencoder(&data, &split, &small_spec(variant), &hp(100, 1)).unwrap();
        let best = history.best_val_loss().unwrap();
        // skips let the default variant bypass the narrow bottleneck
        let factor = if variant == Variant::Aewres { 0.1 } else { 0.5 };
        assert!(best < factor * history.val_loss[0], "{variant:?}: {best} vs {}", history.val_loss[0]);
        let min = history.val_loss.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(best, min);
        // the returned model is the best snapshot
        let val = data.select(&split.val_indices);
        assert_eq!(reconstruction_loss(&model, &val).unwrap(), best);
        assert_eq!(history.lr[0], 1e-3);
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = low_rank_embeddings(80, 64, 3, 2);
    let split = split_dataset(80, 0.8, 2).unwrap();
    let spec = small_spec(Variant::Aewres);
    let run = |seed| {
        let (ae, h1) = pretrain_autoencoder(&data, &split, &spec, &hp(8, seed)).unwrap();
        let (svdd, h2) = finetune_svdd(ae, &data, &split, &hp(8, seed), &SvddOptions::default()).unwrap();
        (svdd, h1, h2)
    };
    let a = run(5);
    let b = run(5);
    assert_eq!(a, b);
    let c = run(6);
    assert_ne!(a.1.train_loss, c.1.train_loss);
}

#[test]
fn finetuning_monitors_mean_validation_score() {
    let fx = SeparationFixture {
        n_normal: 200,
        n_anomaly: 0,
        dim: 64,
        shifted_coords: 0,
        seed: 4,
        ..SeparationFixture::default()
    };
    let data = EmbeddingMatrix::from_matrix(&fx.generate().unwrap().data).unwrap();
    let split = split_dataset(200, 0.8, 4).unwrap();
    let (ae, _) = pretrain_autoencoder(&data, &split, &small_spec(Variant::Aewres), &hp(30, 4)).unwrap();
    let (model, history) = finetune_svdd(ae, &data, &split, &hp(30, 4), &SvddOptions::default()).unwrap();

    assert!(history.best_val_loss().unwrap() <= history.val_loss[0]);
    let val_scores = model.score_rows(&data.select(&split.val_indices)).unwrap();
    let mean = val_scores.iter().sum::<f64>() / val_scores.len() as f64;
    assert!((mean - history.best_val_loss().unwrap()).abs() < 1e-12);
    assert!(history.best_epoch > 0);
    assert!(history.train_loss[history.best_epoch] < history.train_loss[0]);

    let train_scores = model.score_rows(&data.select(&split.train_indices)).unwrap();
    let t = model.training_threshold.unwrap();
    let above = train_scores.iter().filter(|&&s| s > t).count() as f64 / train_scores.len() as f64;
    assert!(above <= 0.05);
    assert!(model.center.iter().all(|c| c.abs() >= 0.1));
}

#[test]
fn no_bias_mode_keeps_shifts_at_zero() {
    let data = low_rank_embeddings(60, 64, 3, 3);
    let split = split_dataset(60, 0.8, 3).unwrap();
    let (ae, _) = pretrain_autoencoder(&data, &split, &small_spec(Variant::Ae), &hp(5, 3)).unwrap();
    let options = SvddOptions {
        no_bias: true,
        ..SvddOptions::default()
    };
    let (model, _) = finetune_svdd(ae, &data, &split, &hp(5, 3), &options).unwrap();
    for block in &model.encoder.blocks {
        let [_, bias, _, beta] = block.params();
        assert!(bias.iter().chain(beta).all(|&v| v == 0.0));
    }
}

#[test]
fn constant_encoder_raises_collapse_warning() {
    let data = low_rank_embeddings(40, 64, 3, 7);
    let split = split_dataset(40, 0.8, 7).unwrap();
    let mut ae = AutoencoderModel::build(&small_spec(Variant::Ae), 0).unwrap();
    for block in &mut ae.encoder.blocks {
        block.linear.weights = Matrix::zeros(block.out_dim(), block.in_dim());
    }
    let frozen = Hyperparameters {
        lr0: 1e-12,
        lr_min: 1e-12,
        max_epochs: 1,
        ..Hyperparameters::default()
    };
    let (model, history) = finetune_svdd(ae, &data, &split, &frozen, &SvddOptions::default()).unwrap();
    let latents = model.latents(&data.to_matrix()).unwrap();
    assert!(latent_variance(&latents) < COLLAPSE_VARIANCE);
    assert_eq!(history.notes.len(), 1);
    assert!(history.notes[0].contains("collapse"));
}

#[test]
fn runaway_updates_report_divergence() {
    let data = low_rank_embeddings(40, 64, 3, 8);
    let split = split_dataset(40, 0.8, 8).unwrap();
    let unstable = Hyperparameters {
        lr0: 1e3,
        lr_min: 1e3,
        weight_decay: 10.0,
        max_epochs: 50,
        ..Hyperparameters::default()
    };
    match pretrain_autoencoder(&data, &split, &small_spec(Variant::Ae), &unstable) {
        Err(Error::Diverged { epoch, history, .. }) => {
            assert!(epoch < 50);
            assert_eq!(history.epochs(), epoch);
        }
        other => panic!("expected divergence, got {:?}", other.map(|r| r.1)),
    }
}

#[test]
fn input_width_must_match_model() {
    let data = low_rank_embeddings(40, 32, 3, 9);
    let split = split_dataset(40, 0.8, 9).unwrap();
    assert!(matches!(
        pretrain_autoencoder(&data, &split, &small_spec(Variant::Ae), &hp(2, 0)),
        Err(Error::Shape(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_are_nonnegative(rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 64), 1..20)) {
        use std::sync::OnceLock;
        static MODEL: OnceLock<loopguard_core::SvddModel> = OnceLock::new();
        let model = MODEL.get_or_init(|| {
            let data = low_rank_embeddings(40, 64, 3, 10);
            let split = split_dataset(40, 0.8, 10).unwrap();
            let (ae, _) = pretrain_autoencoder(&data, &split, &small_spec(Variant::Aewres), &hp(3, 10)).unwrap();
            finetune_svdd(ae, &data, &split, &hp(3, 10), &SvddOptions::default()).unwrap().0
        });
        let x = Matrix::from_rows(&rows).unwrap();
        let scores = model.score_rows(&x).unwrap();
        prop_assert_eq!(scores.len(), rows.len());
        prop_assert!(scores.iter().all(|&s| s >= 0.0 && s.is_finite()));
        // row-wise scoring agrees with batch scoring
        prop_assert_eq!(model.score(&rows[0]).unwrap(), scores[0]);
    }
}
