use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skillgrid::config::VqConfig;
use skillgrid::vq::{Codebook, VqArch, VqModel, VqNets};
use skillgrid::Error;
use skillgrid_nn::ops::mse;
use skillgrid_nn::Tensor;

fn tiny_cfg() -> VqConfig {
    VqConfig {
        batch_size: 16,
        num_hiddens: 8,
        num_residual_hiddens: 4,
        num_residual_layers: 1,
        embedding_dim: 6,
        num_embeddings: 4,
        coord_hiddens: 8,
        ..VqConfig::default()
    }
}

fn random_pixels(b: usize, s: usize, rng: &mut impl Rng) -> Tensor<f32> {
    Tensor::new(vec![b, 3, s, s], (0..b * 3 * s * s).map(|_| rng.random::<f32>()).collect()).unwrap()
}

#[test]
fn encoding_is_deterministic_and_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = VqModel::new(&tiny_cfg(), 8, false, &mut rng).unwrap();
    let x = random_pixels(5, 8, &mut rng);
    let a = model.encode(&x, None).unwrap();
    assert_eq!(a, model.encode(&x, None).unwrap());
    assert_eq!(a.shape(), &[5, 6]);
    assert!(a.data().iter().all(|v| v.is_finite()));
    assert_eq!(a.row(0), model.encode(&Tensor::new(vec![1, 3, 8, 8], x.row(0).to_vec()).unwrap(), None).unwrap().data());
}

#[test]
fn zero_weight_encoder_gives_zero_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = VqModel::new(&tiny_cfg(), 8, false, &mut rng).unwrap();
    for p in model.nets.encoder.params_mut() {
        p.value.iter_mut().for_each(|v| *v = 0.0);
    }
    let z = model.encode(&random_pixels(3, 8, &mut rng), None).unwrap();
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn joint_encoding_with_zeroed_coordinate_branch_matches_pixels_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = VqModel::new(&tiny_cfg(), 8, true, &mut rng).unwrap();
    let x = random_pixels(4, 8, &mut rng);
    let c = Tensor::new(vec![4, 2], vec![-0.8, 0.0, 0.8, 0.0, 0.1, -0.3, 1.0, 1.0]).unwrap();
    assert!(matches!(model.encode(&x, None), Err(Error::Usage(_))));
    for p in model.nets.coord_encoder.as_mut().unwrap().params_mut() {
        p.value.iter_mut().for_each(|v| *v = 0.0);
    }
    assert_eq!(model.encode(&x, Some(&c)).unwrap(), model.nets.encoder.infer(&x).unwrap());
}

#[test]
fn straight_through_gradient_matches_decoder_input_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let arch = VqArch::from_config(&tiny_cfg(), 8);
    let mut nets: VqNets<f64> = VqNets::<f32>::build(&arch, false, &mut rng).unwrap().cast();
    let x: Tensor<f64> = random_pixels(3, 8, &mut rng).cast();
    let table: Vec<f64> = (0..4 * 6).map(|_| rng.random_range(-0.5..0.5)).collect();
    let pass = nets.forward_backward(&x, None, &table, 0.0, 1.0).unwrap();
    assert_eq!(pass.grad_z, pass.grad_quantized);
    assert_eq!(pass.commitment, 0.0);

    // Central differences of the reconstruction loss w.r.t. the decoder input.
    let mut q = Vec::new();
    for &k in &pass.assignments {
        q.extend_from_slice(&table[k * 6..(k + 1) * 6]);
    }
    let loss = |q: &[f64]| {
        let out = nets.decoder.infer(&Tensor::new(vec![3, 6], q.to_vec()).unwrap()).unwrap();
        mse(&out, &x).unwrap().0
    };
    let h = 1e-5;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..q.len() {
        let mut p = q.clone();
        p[i] += h;
        let mut m = q.clone();
        m[i] -= h;
        let fd = (loss(&p) - loss(&m)) / (2.0 * h);
        num += (fd - pass.grad_z.data()[i]).powi(2);
        den += fd.powi(2);
    }
    assert!((num / den).sqrt() < 1e-6, "relative error {}", (num / den).sqrt());
}

#[test]
fn commitment_vanishes_when_encodings_sit_on_codes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let arch = VqArch::from_config(&tiny_cfg(), 8);
    let mut nets: VqNets<f64> = VqNets::<f32>::build(&arch, false, &mut rng).unwrap().cast();
    let x: Tensor<f64> = random_pixels(2, 8, &mut rng).cast();
    let z = nets.encode(&x, None).unwrap();
    let pass = nets.forward_backward(&x, None, z.data(), 0.25, 1.0).unwrap();
    assert_eq!(pass.assignments, vec![0, 1]);
    assert!(pass.commitment.abs() < 1e-24);
}

/// Independent recursion: `N ← γN + (1−γ)n`, `S ← γS + (1−γ)Σz`, `e = S / N̂`.
#[test]
fn ema_codebook_follows_closed_form_on_a_repeated_batch() {
    let (k, d, gamma) = (3, 2, 0.99);
    let rows = vec![0.0, 0.0, 10.0, 10.0, -10.0, 5.0];
    let mut cb = Codebook::from_rows(rows.clone(), k, d, gamma).unwrap();
    let z = vec![1.0f32, 1.0, 2.0, 0.0, 9.0, 11.0, 11.0, 9.0, 12.0, 10.0];
    let assign: Vec<usize> = z.chunks(2).map(|r| cb.quantize(r).0).collect();
    assert_eq!(assign, vec![0, 0, 1, 1, 1]);
    for _ in 0..500 {
        cb.ema_update(&z, &assign);
    }
    let counts = [2.0, 3.0, 0.0];
    let sums = [[3.0, 1.0], [32.0, 30.0], [0.0, 0.0]];
    let g = gamma.powi(500);
    let n: Vec<f64> = (0..k).map(|j| g * 1.0 + (1.0 - g) * counts[j]).collect();
    let total: f64 = n.iter().sum();
    for j in 0..2 {
        let smoothed = (n[j] + 1e-5) / (total + k as f64 * 1e-5) * total;
        for i in 0..d {
            let s = g * rows[j * d + i] as f64 + (1.0 - g) * sums[j][i];
            let expected = s / smoothed;
            let got = f64::from(cb.embeddings[j * d + i]);
            assert!((got - expected).abs() <= 1e-3 * expected.abs().max(1.0), "code {j}: {got} vs {expected}");
            let mean = sums[j][i] / counts[j];
            assert!((got - mean).abs() <= 0.01 * mean.abs().max(1.0), "code {j} far from its assigned mean");
        }
    }
    assert!(cb.cluster_size.iter().all(|&c| c >= 0.0));
}

#[test]
fn idle_codes_are_reseeded_onto_batch_encodings() {
    let mut cb = Codebook::from_rows(vec![0.0, 0.0, 50.0, 50.0], 2, 2, 0.99).unwrap();
    let z = vec![0.5f32, 0.5, -0.5, 0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..3 {
        cb.ema_update(&z, &[0, 0]);
        assert!(cb.reseed_dead(&z, 5, &mut rng).is_empty());
    }
    cb.ema_update(&z, &[0, 0]);
    cb.ema_update(&z, &[0, 0]);
    assert_eq!(cb.reseed_dead(&z, 5, &mut rng), vec![1]);
    assert!(z.chunks(2).any(|r| r == cb.row(1)));
}

#[test]
fn constant_images_reconstruct_closely() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = VqModel::new(&tiny_cfg(), 8, false, &mut rng).unwrap();
    let color = [0.2f32, 0.6, 0.9];
    let mut data = Vec::new();
    for _ in 0..16 {
        for c in color {
            data.extend(std::iter::repeat_n(c, 64));
        }
    }
    let x = Tensor::new(vec![16, 3, 8, 8], data).unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..2000 {
        let r = model.train_step(&x, None, &mut rng).unwrap();
        assert!(r.recon >= 0.0 && r.commitment >= 0.0 && (1.0..=4.0).contains(&r.perplexity));
        last = r.recon;
        if last < 1e-3 {
            break;
        }
    }
    assert!(last < 1e-3, "reconstruction {last}");
}

#[test]
fn joint_training_reports_coordinate_loss_and_checkpoints_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = tiny_cfg();
    let mut model = VqModel::new(&cfg, 8, true, &mut rng).unwrap();
    let x = random_pixels(16, 8, &mut rng);
    let c = Tensor::new(vec![16, 2], (0..32).map(|i| (i as f32 / 16.0) - 1.0).collect()).unwrap();
    let r = model.train_step(&x, Some(&c), &mut rng).unwrap();
    assert!(r.coord_recon.is_some_and(|v| v > 0.0));
    assert!(matches!(model.train_step(&x, None, &mut rng), Err(Error::Usage(_))));
    let ck = model.to_checkpoint().unwrap();
    let mut fresh = VqModel::new(&cfg, 8, true, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    fresh.load_checkpoint(&ck).unwrap();
    assert_eq!(fresh.codebook.embeddings, model.codebook.embeddings);
    assert_eq!(fresh.assign(&x, Some(&c)).unwrap(), model.assign(&x, Some(&c)).unwrap());
}
