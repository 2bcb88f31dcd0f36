//! Central finite differences, used as an independent oracle for autodiff.

use crate::network::Network;

/// `∂f/∂x_i ≈ (f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn central_difference(x: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(x);
            x[i] = orig - h;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Finite-difference gradient of `loss(net)` for every parameter tensor of
/// `net`, evaluated only through `loss` (no backward pass involved).
pub fn network_param_gradients(
    net: &mut Network<f64>,
    h: f64,
    mut loss: impl FnMut(&Network<f64>) -> f64,
) -> Vec<Vec<f64>> {
    let count = net.params().len();
    let mut out = Vec::with_capacity(count);
    for pi in 0..count {
        let len = net.params()[pi].len();
        let mut g = Vec::with_capacity(len);
        for i in 0..len {
            let orig = net.params()[pi].value[i];
            net.params_mut()[pi].value[i] = orig + h;
            let up = loss(net);
            net.params_mut()[pi].value[i] = orig - h;
            let down = loss(net);
            net.params_mut()[pi].value[i] = orig;
            g.push((up - down) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference norm when both are ~0.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}
