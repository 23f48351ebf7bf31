use super::{Scalar, Tensor};

/// Predictions are clamped into `[ε, 1−ε]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient w.r.t. the probabilities.
///
/// The gradient is zero wherever the clamp is active, matching the
/// clamped forward.
pub fn bce_loss<T: Scalar>(p: &[T], y: &[T]) -> (T, Vec<T>) {
    let n = T::from_f64(p.len().max(1) as f64);
    let lo = T::from_f64(BCE_CLAMP);
    let hi = T::one() - lo;
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.iter().zip(y) {
        let c = pi.max(lo).min(hi);
        total += -(yi * c.ln() + (T::one() - yi) * (T::one() - c).ln());
        let g = if pi < lo || pi > hi { T::zero() } else { (c - yi) / (c * (T::one() - c)) / n };
        grad.push(g);
    }
    (total / n, grad)
}

/// Gradient of mean BCE w.r.t. the pre-sigmoid logits, `(p − y)/n`.
///
/// Fused form used in training; it skips the divide by `p(1−p)` that
/// loses precision when the sigmoid saturates.
pub fn bce_logit_grad<T: Scalar>(p: &Tensor<T>, y: &[T]) -> Tensor<T> {
    let n = T::from_f64(y.len().max(1) as f64);
    let data = p.data().iter().zip(y).map(|(&pi, &yi)| (pi - yi) / n).collect();
    Tensor::from_vec(p.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        let (l, _) = bce_loss(&[0.5f64], &[1.0]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-6);
        let (l, _) = bce_loss(&[1.0f64], &[1.0]);
        assert!(l.abs() < 1e-6);
        let (l, g) = bce_loss(&[0.0f64], &[1.0]);
        assert!((l - 16.118096).abs() < 1e-5, "{l}");
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn matches_finite_difference() {
        let p = [0.3f64, 0.8, 0.55];
        let y = [1.0, 0.0, 1.0];
        let (_, g) = bce_loss(&p, &y);
        for i in 0..3 {
            let h = 1e-6;
            let (mut a, mut b) = (p, p);
            a[i] += h;
            b[i] -= h;
            let fd = (bce_loss(&a, &y).0 - bce_loss(&b, &y).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6);
        }
    }
}
