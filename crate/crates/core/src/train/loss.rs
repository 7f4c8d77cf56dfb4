use crate::error::{Error, Result};
use crate::numeric::inner_product;

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `−ln(e^{s⁺} / (e^{s⁺} + e^{s⁻}))` from the two similarities, evaluated as
/// `softplus(s⁻ − s⁺)`.
pub fn loss_from_similarities(s_pos: f64, s_neg: f64) -> f64 {
    softplus(s_neg - s_pos)
}

/// Partial derivatives `(∂ℓ/∂s⁺, ∂ℓ/∂s⁻)`; they always sum to zero.
pub fn loss_similarity_grads(s_pos: f64, s_neg: f64) -> (f64, f64) {
    let p = sigmoid(s_neg - s_pos);
    (-p, p)
}

/// Triplet contrastive loss on anchor, positive and negative features.
pub fn contrastive_loss(f: &[f64], fp: &[f64], fn_: &[f64]) -> Result<f64> {
    if [f, fp, fn_].iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("contrastive loss input".into()));
    }
    let s_pos = inner_product(f, fp)?;
    let s_neg = inner_product(f, fn_)?;
    Ok(loss_from_similarities(s_pos, s_neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn anchor_values() {
        let f = [1.0, 0.0];
        assert!((contrastive_loss(&f, &[0.6, 0.8], &[0.6, -0.8]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let l = contrastive_loss(&f, &[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert!((l - (-2f64).exp().ln_1p()).abs() < 1e-12);
        assert!((l - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(contrastive_loss(&[f64::NAN, 0.0], &[1.0, 0.0], &[0.0, 1.0]).is_err());
        assert!(contrastive_loss(&[1.0], &[1.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn stable_for_extreme_similarities() {
        assert!(loss_from_similarities(800.0, -800.0) >= 0.0);
        assert!((loss_from_similarities(-800.0, 800.0) - 1600.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn swap_sum_bounded_below(sp in -1.0f64..1.0, sn in -1.0f64..1.0) {
            let total = loss_from_similarities(sp, sn) + loss_from_similarities(sn, sp);
            prop_assert!(total >= 2.0 * 2f64.ln() - 1e-15);
            prop_assert!(loss_from_similarities(sp, sn) >= 0.0);
            prop_assert!(loss_from_similarities(sp, sn) <= (1.0 + 2f64.exp()).ln() + 1e-12);
        }

        #[test]
        fn similarity_grads_match_differences(sp in -1.0f64..1.0, sn in -1.0f64..1.0) {
            let h = 1e-6;
            let (gp, gn) = loss_similarity_grads(sp, sn);
            let np = (loss_from_similarities(sp + h, sn) - loss_from_similarities(sp - h, sn)) / (2.0 * h);
            let nn = (loss_from_similarities(sp, sn + h) - loss_from_similarities(sp, sn - h)) / (2.0 * h);
            prop_assert!((gp - np).abs() < 1e-8);
            prop_assert!((gn - nn).abs() < 1e-8);
            prop_assert_eq!(gp + gn, 0.0);
        }
    }
}
