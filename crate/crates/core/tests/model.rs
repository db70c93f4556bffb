use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regdgcnn_core::autodiff::{Mode, Tape, Tensor};
use regdgcnn_core::model::{count_parameters, Aggregation, ModelError, RegDgcnn, RegDgcnnConfig};

fn toy_config() -> RegDgcnnConfig {
    RegDgcnnConfig {
        k: 4,
        edgeconv_channels: vec![8, 8],
        embedding_dim: 16,
        fc_channels: vec![8, 4],
        dropout_p: 0.0,
        input_points: 32,
        ..RegDgcnnConfig::default()
    }
}

fn cloud(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn batch(clouds: &[Vec<f64>]) -> Tensor<f64> {
    let n = clouds[0].len() / 3;
    let data = clouds.concat();
    Tensor::new(vec![clouds.len(), n, 3], data).unwrap()
}

fn loss(model: &mut RegDgcnn<f64>, x: &Tensor<f64>, target: &[f64]) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = model.forward(&mut tape, x, &mut rng).unwrap();
    let l = tape.mse_loss(pass.output, target).unwrap();
    let grads = tape.backward(l).unwrap();
    let g = pass
        .params
        .iter()
        .map(|&v| grads.get_or_zeros(v, &tape).into_data())
        .collect();
    (tape.value(l).data()[0], g)
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut model = RegDgcnn::<f64>::init(toy_config(), 3).unwrap();
    let x = batch(&[cloud(32, 1), cloud(32, 2)]);
    let target = [0.3, -0.2];
    let (_, analytic) = loss(&mut model, &x, &target);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for p in 0..model.parameters().len() {
        for e in 0..model.parameters()[p].value.len() {
            let orig = model.parameters()[p].value.data()[e];
            model.parameters_mut()[p].value.data_mut()[e] = orig + h;
            let (up, _) = loss(&mut model, &x, &target);
            model.parameters_mut()[p].value.data_mut()[e] = orig - h;
            let (down, _) = loss(&mut model, &x, &target);
            model.parameters_mut()[p].value.data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[p][e];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(err);
            assert!(
                err < 1e-3,
                "{}[{e}]: analytic {a} vs numeric {numeric}",
                model.parameters()[p].name
            );
        }
    }
    assert!(worst.is_finite());
}

#[test]
fn fused_inference_matches_tape() {
    for aggregation in [Aggregation::ConcatAll, Aggregation::LastLayer] {
        for use_batch_norm in [true, false] {
            let config = RegDgcnnConfig {
                aggregation,
                use_batch_norm,
                dropout_p: 0.5,
                ..toy_config()
            };
            let mut model = RegDgcnn::<f64>::init(config, 11).unwrap();
            let x = batch(&[cloud(40, 5), cloud(40, 6), cloud(40, 7)]);
            // Populate running statistics and flip some scales negative.
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..3 {
                model.forward(&mut Tape::new(), &x, &mut rng).unwrap();
            }
            for p in model.parameters_mut() {
                if p.name.ends_with(".gamma") {
                    for (i, g) in p.value.data_mut().iter_mut().enumerate() {
                        if i % 3 == 0 {
                            *g = -0.7;
                        }
                    }
                }
            }
            model.set_mode(Mode::Inference);
            let mut tape = Tape::new();
            let pass = model.forward(&mut tape, &x, &mut rng).unwrap();
            let reference = tape.value(pass.output).data().to_vec();
            let fused = model.predict(&x).unwrap();
            for (a, b) in reference.iter().zip(&fused) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }
}

#[test]
fn predictions_are_permutation_invariant() {
    let model = RegDgcnn::<f64>::init(toy_config(), 2).unwrap();
    let points = cloud(256, 9);
    let base = model.predict_cloud(&points).unwrap();
    let mut order: Vec<usize> = (0..256).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let permuted: Vec<f64> = order.iter().flat_map(|&i| points[3 * i..3 * i + 3].to_vec()).collect();
    let again = model.predict_cloud(&permuted).unwrap();
    assert!((base - again).abs() <= 1e-12 * (1.0 + base.abs()), "{base} vs {again}");
}

#[test]
fn single_channel_network_by_hand() {
    // Three collinear points, k = 1, one EdgeConv channel, no batch norm.
    let config = RegDgcnnConfig {
        k: 1,
        edgeconv_channels: vec![1],
        embedding_dim: 1,
        fc_channels: vec![1],
        dropout_p: 0.0,
        use_batch_norm: false,
        ..RegDgcnnConfig::default()
    };
    let t = |shape: Vec<usize>, v: &[f64]| Tensor::new(shape, v.to_vec()).unwrap();
    let params = vec![
        // edge feature [x_i, x_j − x_i] → x-coordinate of x_i plus 2·dx
        ("edgeconv.0.weight".to_string(), t(vec![6, 1], &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0])),
        ("edgeconv.0.bias".to_string(), t(vec![1], &[0.5])),
        ("embedding.weight".to_string(), t(vec![1, 1], &[1.0])),
        ("embedding.bias".to_string(), t(vec![1], &[0.0])),
        ("fc.0.weight".to_string(), t(vec![1, 1], &[-1.0])),
        ("fc.0.bias".to_string(), t(vec![1], &[0.0])),
        ("head.weight".to_string(), t(vec![1, 1], &[3.0])),
        ("head.bias".to_string(), t(vec![1], &[1.0])),
    ];
    let model = RegDgcnn::from_parameters(config, params).unwrap();
    let points = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0];
    // Nearest neighbours: 0→1, 1→0, 2→1.
    // Edge values: 0+2·1+0.5 = 2.5, 1−2+0.5 = −0.5 → −0.1, 3−4+0.5 = −0.5 → −0.1.
    // Global max 2.5; fc: −2.5 → −0.5; head: 3·(−0.5)+1 = −0.5.
    let y = model.predict_cloud(&points).unwrap();
    assert!((y + 0.5).abs() < 1e-12, "{y}");
    let mut m = model.clone();
    m.set_mode(Mode::Inference);
    let mut tape = Tape::new();
    let x = t(vec![3, 3], &points);
    let pass = m.forward(&mut tape, &x, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((tape.value(pass.output).data()[0] + 0.5).abs() < 1e-12);
}

#[test]
fn too_few_points_rejected() {
    let model = RegDgcnn::<f32>::init(toy_config(), 0).unwrap();
    assert_eq!(
        model.predict_cloud(&[0.0; 12]),
        Err(ModelError::TooFewPoints { n: 4, k: 4 })
    );
}

#[test]
fn training_mode_updates_running_stats() {
    let mut model = RegDgcnn::<f32>::init(toy_config(), 0).unwrap();
    let x: Tensor<f32> = batch(&[cloud(32, 1), cloud(32, 2)]).cast();
    let before = model.running_stats().to_vec();
    model.forward(&mut Tape::new(), &x, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_ne!(before, model.running_stats());
    model.set_mode(Mode::Inference);
    let frozen = model.running_stats().to_vec();
    model.forward(&mut Tape::new(), &x, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(frozen, model.running_stats());
}

#[test]
fn default_network_forward_shape() {
    let config = RegDgcnnConfig::default();
    assert_eq!(count_parameters(&config), 3_101_185);
    let model = RegDgcnn::<f32>::init(config, 0).unwrap();
    let points: Vec<f32> = cloud(1024, 3).iter().map(|&v| v as f32).collect();
    let x = Tensor::new(vec![1, 1024, 3], points).unwrap();
    let y = model.predict(&x).unwrap();
    assert_eq!(y.len(), 1);
    assert!(y[0].is_finite());
}
