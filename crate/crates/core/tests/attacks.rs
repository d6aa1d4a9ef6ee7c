use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ascl_core::adversary::{
    attack_dataset, multi_targeted_pgd, pgd_attack, pgd_attack_at, pgd_step, project_linf, robust_accuracy,
    AttackConfig, AttackKind, AttackLoss,
};
use ascl_core::data::{make_blobs, BlobsConfig, Dataset, Split};
use ascl_core::model::{softmax_rows, Model, ModelSpec};
use ascl_core::tensor::{sign, Tensor};

/// `h(x) = x W + b` through an identity hidden layer (inputs are nonnegative).
fn linear_model(w: &Tensor, b: &Tensor) -> Model {
    let d = w.rows();
    let spec = ModelSpec::new(d, vec![d], w.cols());
    Model::from_params(spec, vec![Tensor::identity(d), Tensor::zeros(&[1, d]), w.clone(), b.clone()]).unwrap()
}

fn random_inputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn assert_in_ball(x_adv: &Tensor, x: &Tensor, eps: f64) {
    for (a, o) in x_adv.data().iter().zip(x.data()) {
        assert!((a - o).abs() <= eps + 1e-12, "|{a} - {o}| > {eps}");
        assert!((0.0..=1.0).contains(a));
    }
}

#[test]
fn one_step_matches_closed_form_logistic_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (d, c, n) = (4, 3, 6);
        let w = Tensor::new(vec![d, c], (0..d * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::new(vec![1, c], (0..c).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        let model = linear_model(&w, &b);
        let x = random_inputs(&mut rng, n, d);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let cfg = AttackConfig {
            epsilon: 0.1,
            eta: 0.03,
            steps: 1,
            random_init: false,
            ..AttackConfig::default()
        };
        let got = pgd_attack(&model, &x, &y, &cfg, 0).unwrap();
        // d CE / d x = (softmax(xW + b) - onehot(y)) Wᵀ
        let mut logits = vec![0.0; n * c];
        for i in 0..n {
            for k in 0..c {
                logits[i * c + k] = b.data()[k] + (0..d).map(|j| x.row(i)[j] * w.row(j)[k]).sum::<f64>();
            }
        }
        let probs = softmax_rows(&Tensor::new(vec![n, c], logits).unwrap());
        for i in 0..n {
            for j in 0..d {
                let grad: f64 = (0..c)
                    .map(|k| (probs.row(i)[k] - (y[i] == k) as u8 as f64) * w.row(j)[k])
                    .sum();
                let want = (x.row(i)[j] + cfg.eta * sign(grad)).clamp(0.0, 1.0);
                assert_eq!(got.row(i)[j], want);
            }
        }
    }
}

#[test]
fn k_steps_equal_manual_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::new(ModelSpec::new(5, vec![8, 6], 4), 3).unwrap();
    let x = random_inputs(&mut rng, 10, 5);
    let y: Vec<usize> = (0..10).map(|i| i % 4).collect();
    let cfg = AttackConfig {
        epsilon: 0.1,
        eta: 0.02,
        steps: 7,
        random_init: false,
        ..AttackConfig::default()
    };
    let mut cur = x.clone();
    for _ in 0..cfg.steps {
        let stepped = pgd_step(&model, &cur, &x, &y, &cfg).unwrap();
        cur = project_linf(&stepped, &x, cfg.epsilon, cfg.clip).unwrap();
    }
    assert_eq!(pgd_attack(&model, &x, &y, &cfg, 0).unwrap(), cur);
}

#[test]
fn attacks_are_deterministic_and_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::new(ModelSpec::new(5, vec![8], 3), 4).unwrap();
    let before = model.params().to_vec();
    let x = random_inputs(&mut rng, 12, 5);
    let x_copy = x.clone();
    let y: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let cfg = AttackConfig::synthetic();
    let a = pgd_attack(&model, &x, &y, &cfg, 9).unwrap();
    let b = pgd_attack(&model, &x, &y, &cfg, 9).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, pgd_attack(&model, &x, &y, &cfg, 10).unwrap());
    let m1 = multi_targeted_pgd(&model, &x, &y, &cfg, 9, 0).unwrap();
    assert_eq!(m1, multi_targeted_pgd(&model, &x, &y, &cfg, 9, 0).unwrap());
    assert_eq!(model.params(), before.as_slice());
    assert_eq!(x, x_copy);
    assert_in_ball(&a, &x, cfg.epsilon);
    assert_in_ball(&m1, &x, cfg.epsilon);
}

#[test]
fn chunked_evaluation_matches_whole_batch() {
    let data = make_blobs(&BlobsConfig {
        classes: 3,
        per_class: 200,
        dims: 4,
        spread: 0.2,
        seed: 5,
    })
    .unwrap();
    let model = Model::new(ModelSpec::new(4, vec![8], 3), 6).unwrap();
    let cfg = AttackConfig::synthetic();
    let whole = pgd_attack_at(&model, data.features(), data.labels(), &cfg, 7, 0).unwrap();
    assert_eq!(attack_dataset(&model, &data, AttackKind::Pgd, &cfg, 7).unwrap(), whole);
}

#[test]
fn two_class_mpgd_is_targeted_pgd() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = Model::new(ModelSpec::new(3, vec![6], 2), 2).unwrap();
    let x = random_inputs(&mut rng, 9, 3);
    let y: Vec<usize> = (0..9).map(|i| i % 2).collect();
    let cfg = AttackConfig::synthetic();
    let targeted = AttackConfig {
        loss: AttackLoss::TargetedCrossEntropy,
        ..cfg
    };
    let other: Vec<usize> = y.iter().map(|&l| 1 - l).collect();
    assert_eq!(
        multi_targeted_pgd(&model, &x, &y, &cfg, 4, 0).unwrap(),
        pgd_attack(&model, &x, &other, &targeted, 4).unwrap()
    );
}

#[test]
fn zero_epsilon_accuracy_is_natural_accuracy() {
    let data = make_blobs(&BlobsConfig {
        classes: 4,
        per_class: 30,
        dims: 5,
        spread: 0.3,
        seed: 1,
    })
    .unwrap();
    let model = Model::new(ModelSpec::new(5, vec![10], 4), 1).unwrap();
    let cfg = AttackConfig::synthetic().with_epsilon(0.0);
    let natural = robust_accuracy(&model, &data, AttackKind::None, &cfg, 0).unwrap();
    for kind in [AttackKind::Pgd, AttackKind::Mpgd] {
        assert_eq!(robust_accuracy(&model, &data, kind, &cfg, 0).unwrap(), natural);
    }
}

#[test]
fn constant_model_accuracy_is_class_prior() {
    let spec = ModelSpec::new(2, vec![3], 3);
    let mut params = Model::zeros(spec.clone()).unwrap().params().to_vec();
    let last = params.len() - 1;
    params[last] = Tensor::from_rows(&[[0.1, 0.5, -0.2]]).unwrap();
    let model = Model::from_params(spec, params).unwrap();
    let x = Tensor::from_rows(&[[0.1, 0.2], [0.3, 0.4], [0.5, 0.6], [0.7, 0.8], [0.9, 1.0]]).unwrap();
    let data = Dataset::new("prior", Split::Test, x, vec![1, 0, 1, 2, 1], 3).unwrap();
    for kind in [AttackKind::None, AttackKind::Pgd, AttackKind::Mpgd] {
        let acc = robust_accuracy(&model, &data, kind, &AttackConfig::synthetic(), 3).unwrap();
        assert_eq!(acc, 0.6);
    }
}

#[test]
fn every_emitted_example_respects_the_ball() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let model = Model::new(ModelSpec::new(6, vec![12], 4), 5).unwrap();
    for eps in [0.0, 0.02, 0.05, 0.1] {
        let x = random_inputs(&mut rng, 200, 6);
        let y: Vec<usize> = (0..200).map(|_| rng.random_range(0..4)).collect();
        let cfg = AttackConfig::synthetic().with_epsilon(eps);
        let a = pgd_attack(&model, &x, &y, &cfg, 1).unwrap();
        let m = multi_targeted_pgd(&model, &x, &y, &cfg, 1, 0).unwrap();
        assert_in_ball(&a, &x, eps);
        assert_in_ball(&m, &x, eps);
        if eps == 0.0 {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&x));
            assert_eq!(bits(&m), bits(&x));
        }
    }
}
