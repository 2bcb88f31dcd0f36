//! Loss functions and two-input operations with hand-written gradients.

use crate::error::{NnError, Result};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::Tensor;

/// Mean squared error over all elements and its gradient w.r.t. `pred`.
pub fn mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(NnError::Shape(format!("mse {:?} vs {:?}", pred.shape(), target.shape())));
    }
    let n = T::lit(pred.len().max(1) as f64);
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        loss += d * d;
        grad.push(two * d / n);
    }
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Huber loss with unit threshold (quadratic inside |δ| ≤ 1, linear outside),
/// averaged over items with optional per-item weights. Returns the loss and
/// `∂loss/∂pred`.
pub fn huber<T: Real>(pred: &[T], target: &[T], weights: Option<&[T]>) -> (T, Vec<T>) {
    assert_eq!(pred.len(), target.len());
    let n = T::lit(pred.len().max(1) as f64);
    let half = T::lit(0.5);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for i in 0..pred.len() {
        let w = weights.map_or(T::one(), |w| w[i]);
        let d = pred[i] - target[i];
        let (l, g) = if d.abs() <= T::one() { (half * d * d, d) } else { (d.abs() - half, d.signum()) };
        loss += w * l;
        grad.push(w * g / n);
    }
    (loss / n, grad)
}

/// Similarity matrix `S[i][j] = z_i · W · zp_j` for `z: [n, d]`, `zp: [m, d]`,
/// `w: d × d` row-major.
pub fn bilinear_logits<T: Real>(z: &Tensor<T>, w: &[T], zp: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = matrix_dims(z)?;
    let (m, d2) = matrix_dims(zp)?;
    if d != d2 || w.len() != d * d {
        return Err(NnError::Shape(format!("bilinear form with z {:?}, zp {:?}, |W| {}", z.shape(), zp.shape(), w.len())));
    }
    let mut zw = vec![T::zero(); n * d];
    gemm(T::one(), MatRef::new(z.data(), n, d), MatRef::new(w, d, d), T::zero(), &mut zw);
    let mut s = vec![T::zero(); n * m];
    gemm(T::one(), MatRef::new(&zw, n, d), MatRef::new(zp.data(), m, d).t(), T::zero(), &mut s);
    Tensor::new(vec![n, m], s)
}

/// Gradients of `Σ G ⊙ S` for `S = z W zpᵀ`: returns `(dz, dW, dzp)`.
pub fn bilinear_backward<T: Real>(
    z: &Tensor<T>,
    w: &[T],
    zp: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Tensor<T>)> {
    let (n, d) = matrix_dims(z)?;
    let (m, _) = matrix_dims(zp)?;
    if grad.shape() != [n, m] {
        return Err(NnError::Shape(format!("bilinear gradient {:?}, expected [{n}, {m}]", grad.shape())));
    }
    let g = MatRef::new(grad.data(), n, m);
    let wm = MatRef::new(w, d, d);
    // dz = G · zp · Wᵀ
    let mut gzp = vec![T::zero(); n * d];
    gemm(T::one(), g, MatRef::new(zp.data(), m, d), T::zero(), &mut gzp);
    let mut dz = vec![T::zero(); n * d];
    gemm(T::one(), MatRef::new(&gzp, n, d), wm.t(), T::zero(), &mut dz);
    // dW = zᵀ · G · zp
    let mut dw = vec![T::zero(); d * d];
    gemm(T::one(), MatRef::new(z.data(), n, d).t(), MatRef::new(&gzp, n, d), T::zero(), &mut dw);
    // dzp = Gᵀ · z · W
    let mut zw = vec![T::zero(); n * d];
    gemm(T::one(), MatRef::new(z.data(), n, d), wm, T::zero(), &mut zw);
    let mut dzp = vec![T::zero(); m * d];
    gemm(T::one(), g.t(), MatRef::new(&zw, n, d), T::zero(), &mut dzp);
    Ok((Tensor::new(vec![n, d], dz)?, dw, Tensor::new(vec![m, d], dzp)?))
}

const NORM_EPS: f64 = 1e-12;

/// Scales each row to unit Euclidean norm. Returns the normalized rows and
/// the norms used, which [`l2_normalize_backward`] needs.
pub fn l2_normalize_rows<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
    let (n, _) = matrix_dims(x)?;
    let mut y = x.clone();
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let row = y.row_mut(i);
        let norm = (row.iter().map(|&v| v * v).sum::<T>() + T::lit(NORM_EPS)).sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }
    Ok((y, norms))
}

/// `dx = (dy − y·(y·dy)) / ‖x‖` per row.
pub fn l2_normalize_backward<T: Real>(y: &Tensor<T>, norms: &[T], dy: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != dy.shape() {
        return Err(NnError::Shape(format!("{:?} vs {:?}", y.shape(), dy.shape())));
    }
    let mut dx = dy.clone();
    for (i, &norm) in norms.iter().enumerate() {
        let yr = y.row(i);
        let dot: T = yr.iter().zip(dy.row(i)).map(|(&a, &b)| a * b).sum();
        for (d, &yv) in dx.row_mut(i).iter_mut().zip(yr) {
            *d = (*d - yv * dot) / norm;
        }
    }
    Ok(dx)
}

/// Mean cross-entropy of row-wise softmax over a square logit matrix where
/// the correct class of row `i` is column `i`. Returns the loss and
/// `∂loss/∂logits`.
pub fn cross_entropy_diagonal<T: Real>(logits: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let (n, m) = matrix_dims(logits)?;
    if n != m {
        return Err(NnError::Shape(format!("expected square logits, got {:?}", logits.shape())));
    }
    let inv_n = T::one() / T::lit(n as f64);
    let mut loss = T::zero();
    let mut grad = logits.clone();
    for i in 0..n {
        let row = grad.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let diag = logits.row(i)[i];
        loss += max + sum.ln() - diag;
        for (j, v) in row.iter_mut().enumerate() {
            let p = *v / sum;
            *v = (p - if i == j { T::one() } else { T::zero() }) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

fn matrix_dims<T: Real>(x: &Tensor<T>) -> Result<(usize, usize)> {
    match x.shape() {
        [n, d] => Ok((*n, *d)),
        s => Err(NnError::Shape(format!("expected a matrix, got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_equal_tensors_is_zero_with_zero_grad() {
        let a = Tensor::<f64>::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (l, g) = mse(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn huber_switches_to_linear_beyond_unit_delta() {
        let (l, g) = huber(&[0.5f64, 3.0], &[0.0, 0.0], None);
        assert!((l - (0.125 + 2.5) / 2.0).abs() < 1e-12);
        assert_eq!(g, vec![0.25, 0.5]);
    }

    #[test]
    fn uniform_logits_give_log_n() {
        let n = 5;
        let logits = Tensor::<f64>::full(vec![n, n], 0.3);
        let (l, _) = cross_entropy_diagonal(&logits).unwrap();
        assert!((l - (n as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let x = Tensor::<f64>::new(vec![2, 3], vec![3.0, 4.0, 0.0, -1.0, 1.0, 1.0]).unwrap();
        let (y, norms) = l2_normalize_rows(&x).unwrap();
        assert!((norms[0] - 5.0).abs() < 1e-9);
        for i in 0..2 {
            let n: f64 = y.row(i).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }
}
