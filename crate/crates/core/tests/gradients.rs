use loopguard_core::models::SkipPair;
use loopguard_core::{grad_check, AutoencoderModel, EncoderSpec, GradCheck, Loss, Matrix, Mode, Rng, Variant};

fn small_spec(variant: Variant) -> EncoderSpec {
    EncoderSpec {
        dims: vec![16, 8, 4],
        variant,
        allow_custom_latent: true,
        ..EncoderSpec::default()
    }
}

fn batch(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

#[test]
fn reconstruction_gradients_across_seeds_and_modes() {
    for seed in 0..20 {
        for variant in [Variant::Ae, Variant::Aewres] {
            let model = AutoencoderModel::build(&small_spec(variant), seed).unwrap();
            let x = batch(5, 16, 500 + seed);
            for mode in [Mode::Train, Mode::Eval] {
                let cfg = GradCheck {
                    seed,
                    mode,
                    max_params: None,
                    ..GradCheck::default()
                };
                let err = grad_check(&model, &Loss::Reconstruction, &x, &cfg).unwrap();
                assert!(err < 1e-4, "{variant:?} seed {seed} {mode:?}: {err}");
            }
        }
    }
}

#[test]
fn deeper_skip_network_gradients() {
    let spec = EncoderSpec {
        dims: vec![12, 10, 8, 6, 4],
        allow_custom_latent: true,
        ..EncoderSpec::default()
    };
    assert_eq!(
        spec.skip_pairs(),
        vec![
            SkipPair { encoder_layer: 0, decoder_layer: 3, width: 10 },
            SkipPair { encoder_layer: 1, decoder_layer: 2, width: 8 },
            SkipPair { encoder_layer: 2, decoder_layer: 1, width: 6 },
        ]
    );
    let model = AutoencoderModel::build(&spec, 3).unwrap();
    let cfg = GradCheck {
        max_params: None,
        ..GradCheck::default()
    };
    let err = grad_check(&model, &Loss::Reconstruction, &batch(6, 12, 1), &cfg).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn center_distance_gradients_on_encoder() {
    for seed in 0..5 {
        let model = AutoencoderModel::build(&small_spec(Variant::Aewres), seed).unwrap();
        let encoder = model.into_encoder();
        let loss = Loss::CenterDistance(vec![0.1, -0.3, 0.2, 0.5]);
        let cfg = GradCheck {
            seed,
            max_params: None,
            ..GradCheck::default()
        };
        let err = grad_check(&encoder, &loss, &batch(7, 16, seed), &cfg).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn default_width_network_passes_sampled_check() {
    let model = AutoencoderModel::build(&EncoderSpec::default(), 0).unwrap();
    let x = batch(4, 1024, 9);
    let cfg = GradCheck {
        max_params: Some(300),
        ..GradCheck::default()
    };
    let err = grad_check(&model, &Loss::Reconstruction, &x, &cfg).unwrap();
    assert!(err < 1e-4, "{err}");
}
