use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skillgrid_nn::{Checkpoint, LayerSpec, Network, NnError, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn dense_identity_passes_input_through() {
    let mut net = Network::<f32>::new("d", &[2], vec![LayerSpec::Dense { inputs: 2, outputs: 2 }], &mut rng(0)).unwrap();
    {
        let mut ps = net.params_mut();
        ps[0].value.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        ps[1].value.copy_from_slice(&[0.0, 0.0]);
    }
    let x = Tensor::new(vec![1, 2], vec![0.25, -4.0]).unwrap();
    assert_eq!(net.infer(&x).unwrap().data(), &[0.25, -4.0]);
}

#[test]
fn relu_clamps_negative() {
    let net = Network::<f32>::new("r", &[3], vec![LayerSpec::Relu], &mut rng(0)).unwrap();
    let x = Tensor::new(vec![1, 3], vec![-3.0, 0.0, 2.0]).unwrap();
    assert_eq!(net.infer(&x).unwrap().data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn pointwise_conv_scales_constant_image() {
    let spec = LayerSpec::Conv2d { in_channels: 1, out_channels: 1, kernel: 1, stride: 1, padding: 0 };
    let mut net = Network::<f32>::new("c", &[1, 4, 4], vec![spec], &mut rng(0)).unwrap();
    {
        let mut ps = net.params_mut();
        ps[0].value[0] = 2.0;
        ps[1].value[0] = 0.0;
    }
    let x = Tensor::full(vec![1, 1, 4, 4], 3.0);
    assert!(net.infer(&x).unwrap().data().iter().all(|&v| v == 6.0));
}

#[test]
fn shape_errors_are_configuration_errors() {
    let bad = Network::<f32>::new(
        "bad",
        &[3, 8, 8],
        vec![LayerSpec::Conv2d { in_channels: 4, out_channels: 2, kernel: 3, stride: 1, padding: 1 }],
        &mut rng(0),
    );
    assert!(matches!(bad, Err(NnError::Config(_))));
    let net = Network::<f32>::new("d", &[2], vec![LayerSpec::Dense { inputs: 2, outputs: 1 }], &mut rng(0)).unwrap();
    let x = Tensor::zeros(vec![1, 3]);
    assert!(matches!(net.infer(&x), Err(NnError::Config(_))));
}

#[test]
fn backward_before_forward_is_usage_error() {
    let mut net = Network::<f32>::new("d", &[2], vec![LayerSpec::Dense { inputs: 2, outputs: 1 }], &mut rng(0)).unwrap();
    let g = Tensor::zeros(vec![1, 1]);
    assert!(matches!(net.backward(&g), Err(NnError::Usage(_))));
    net.forward(&Tensor::zeros(vec![1, 2])).unwrap();
    net.backward(&g).unwrap();
    assert!(matches!(net.backward(&g), Err(NnError::Usage(_))), "caches are consumed by backward");
}

#[test]
fn square_loss_gradient() {
    // loss = x² through a 1→1 dense layer with unit weight: d/dx at x=3 is 6.
    let mut net = Network::<f64>::new("d", &[1], vec![LayerSpec::Dense { inputs: 1, outputs: 1 }], &mut rng(0)).unwrap();
    net.params_mut()[0].value[0] = 1.0;
    net.params_mut()[1].value[0] = 0.0;
    let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
    let y = net.forward(&x).unwrap();
    let g = y.map(|v| 2.0 * v);
    let dx = net.backward(&g).unwrap();
    assert_eq!(dx.data(), &[6.0]);
}

#[test]
fn mse_at_minimum_has_zero_gradients() {
    let mut net = Network::<f64>::new(
        "m",
        &[3],
        vec![LayerSpec::Dense { inputs: 3, outputs: 4 }, LayerSpec::Relu, LayerSpec::Dense { inputs: 4, outputs: 2 }],
        &mut rng(3),
    )
    .unwrap();
    let x = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
    let y = net.forward(&x).unwrap();
    let (loss, g) = skillgrid_nn::ops::mse(&y, &y.clone()).unwrap();
    assert_eq!(loss, 0.0);
    net.backward_params(&g).unwrap();
    assert!(net.params().iter().all(|p| p.grad.iter().all(|&v| v == 0.0)));
}

fn encoder_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d { in_channels: 3, out_channels: 8, kernel: 4, stride: 2, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::Residual { channels: 8, hidden: 4 },
        LayerSpec::Relu,
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense { inputs: 8, outputs: 5 },
    ]
}

#[test]
fn forward_is_bit_deterministic_for_equal_seeds() {
    let a = Network::<f32>::new("e", &[3, 8, 8], encoder_specs(), &mut rng(42)).unwrap();
    let b = Network::<f32>::new("e", &[3, 8, 8], encoder_specs(), &mut rng(42)).unwrap();
    let x = Tensor::new(vec![2, 3, 8, 8], (0..384).map(|i| (i as f32 * 0.01).sin()).collect()).unwrap();
    let ya = a.infer(&x).unwrap();
    let yb = b.infer(&x).unwrap();
    assert!(ya.data().iter().zip(yb.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    let mut c = a.clone();
    let yc = c.forward(&x).unwrap();
    assert_eq!(ya, yc, "training forward matches pure inference");
    assert_eq!(c.params(), a.params(), "forward never mutates parameters");
}

#[test]
fn checkpoint_restores_network() {
    let a = Network::<f32>::new("e", &[3, 8, 8], encoder_specs(), &mut rng(1)).unwrap();
    let mut b = Network::<f32>::new("e", &[3, 8, 8], encoder_specs(), &mut rng(2)).unwrap();
    let mut ck = Checkpoint::new();
    ck.push_network(&a).unwrap();
    let ck = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    ck.load_network(&mut b).unwrap();
    let x = Tensor::full(vec![1, 3, 8, 8], 0.5);
    assert_eq!(a.infer(&x).unwrap(), b.infer(&x).unwrap());
}

#[test]
fn transposed_conv_doubles_resolution() {
    let spec = LayerSpec::ConvTranspose2d { in_channels: 4, out_channels: 3, kernel: 4, stride: 2, padding: 1 };
    assert_eq!(spec.output_shape(&[4, 4, 4]).unwrap(), vec![3, 8, 8]);
    let net = Network::<f32>::new("t", &[4, 4, 4], vec![spec], &mut rng(0)).unwrap();
    assert_eq!(net.infer(&Tensor::zeros(vec![2, 4, 4, 4])).unwrap().shape(), &[2, 3, 8, 8]);
}
