use crate::error::{Error, Result};
use crate::numerics::{dot, ModelVector};

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary logistic loss `-y <w, x> + log(1 + exp(<w, x>))`.
pub fn logistic_loss(w: &ModelVector, x: &[f64], label: u8) -> Result<f64> {
    if w.dim() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: w.dim(),
            found: x.len(),
        });
    }
    Ok(logistic_loss_raw(w.as_slice(), x, label))
}

pub fn logistic_loss_raw(w: &[f64], x: &[f64], label: u8) -> f64 {
    let z = dot(w, x);
    softplus(z) - f64::from(label) * z
}

/// Accumulate `scale * (sigmoid(<w,x>) - y) x` into `out`.
pub fn logistic_grad_into(w: &[f64], x: &[f64], label: u8, scale: f64, out: &mut [f64]) {
    let r = scale * (sigmoid(dot(w, x)) - f64::from(label));
    for (o, xi) in out.iter_mut().zip(x) {
        *o += r * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_weights_give_log_two() {
        let w = ModelVector::zeros(3);
        let x = [0.3, -2.0, 5.0];
        assert!((logistic_loss(&w, &x, 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((logistic_loss(&w, &x, 0).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn large_margin_is_stable() {
        let w = ModelVector::new(vec![100.0]).unwrap();
        let v = logistic_loss(&w, &[1.0], 1).unwrap();
        assert!(v.is_finite() && (0.0..1e-40).contains(&v));
        let v = logistic_loss(&w, &[-1.0], 0).unwrap();
        assert!(v.is_finite() && v < 1e-40);
        // wrong side: loss grows linearly, no overflow
        let v = logistic_loss(&ModelVector::new(vec![800.0]).unwrap(), &[1.0], 0).unwrap();
        assert_eq!(v, 800.0);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(logistic_loss(&ModelVector::zeros(2), &[1.0], 0).is_err());
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(
            w in prop::collection::vec(-3.0..3.0f64, 4),
            x in prop::collection::vec(-2.0..2.0f64, 4),
            u in prop::collection::vec(-1.0..1.0f64, 4),
            label in 0u8..=1,
        ) {
            let h = 1e-6;
            let plus: Vec<f64> = w.iter().zip(&u).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = w.iter().zip(&u).map(|(a, b)| a - h * b).collect();
            let fd = (logistic_loss_raw(&plus, &x, label) - logistic_loss_raw(&minus, &x, label)) / (2.0 * h);
            let mut g = vec![0.0; 4];
            logistic_grad_into(&w, &x, label, 1.0, &mut g);
            prop_assert!((dot(&g, &u) - fd).abs() < 1e-5);
        }
    }
}
