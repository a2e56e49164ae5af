use ndarray::{ArrayBase, Data, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the reconstruction and adversarial terms in the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_i: f64,
    pub w_a: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_i: 50.0, w_a: 1.0 }
    }
}

impl LossWeights {
    pub fn new(w_i: f64, w_a: f64) -> Result<Self> {
        let w = Self { w_i, w_a };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_i >= 0.0 && self.w_a >= 0.0) || !self.w_i.is_finite() || !self.w_a.is_finite() {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got w_i={} w_a={}",
                self.w_i, self.w_a
            )));
        }
        if self.w_i + self.w_a <= 0.0 {
            return Err(Error::Config("w_i + w_a must be positive".into()));
        }
        Ok(())
    }
}

/// Mean absolute difference over all elements.
pub fn reconstruction_loss<A, S1, S2, D>(x: &ArrayBase<S1, D>, x_hat: &ArrayBase<S2, D>) -> Result<f64>
where
    A: Copy + Into<f64>,
    S1: Data<Elem = A>,
    S2: Data<Elem = A>,
    D: Dimension,
{
    if x.shape() != x_hat.shape() {
        return Err(Error::Shape(format!(
            "reconstruction shape {:?} differs from input {:?}",
            x_hat.shape(),
            x.shape()
        )));
    }
    if x.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let sum: f64 = x
        .iter()
        .zip(x_hat.iter())
        .map(|(a, b)| ((*a).into() - (*b).into()).abs())
        .sum();
    Ok(sum / x.len() as f64)
}

/// Which generator adversarial term is minimized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversarialForm {
    /// `-mean(log D(G(x)))`.
    #[default]
    NonSaturating,
    /// `mean(log(1 - D(G(x))))`, the literal min-max term.
    MinMax,
}

/// `(generator_adv_loss, discriminator_loss)` from discriminator outputs on real
/// and reconstructed samples. The generator term is the non-saturating
/// `-mean(log d_fake)`.
pub fn adversarial_losses(d_real: &[f64], d_fake: &[f64]) -> Result<(f64, f64)> {
    adversarial_losses_with(d_real, d_fake, AdversarialForm::NonSaturating)
}

/// [`adversarial_losses`] with a chosen generator term.
pub fn adversarial_losses_with(d_real: &[f64], d_fake: &[f64], form: AdversarialForm) -> Result<(f64, f64)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::Domain("discriminator outputs are empty".into()));
    }
    if let Some(p) = d_real.iter().chain(d_fake).find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
    }
    let mean = |xs: &[f64], f: &dyn Fn(f64) -> f64| xs.iter().map(|&x| f(x)).sum::<f64>() / xs.len() as f64;
    let d_loss = -mean(d_real, &|p| p.ln()) - mean(d_fake, &|p| (1.0 - p).ln());
    let g_loss = match form {
        AdversarialForm::NonSaturating => -mean(d_fake, &|p| p.ln()),
        AdversarialForm::MinMax => mean(d_fake, &|p| (1.0 - p).ln()),
    };
    Ok((g_loss, d_loss))
}

/// `w_i * l_irec + w_a * l_adv`.
pub fn total_generator_loss(l_irec: f64, l_adv: f64, w: LossWeights) -> Result<f64> {
    if !l_irec.is_finite() || !l_adv.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss term (l_irec={l_irec}, l_adv={l_adv})"
        )));
    }
    Ok(w.w_i * l_irec + w.w_a * l_adv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array4};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reconstruction_named_cases() {
        let x = Array4::<f32>::ones((2, 3, 3, 3));
        assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
        let z = Array4::<f32>::zeros((2, 3, 3, 3));
        assert_eq!(reconstruction_loss(&x, &z).unwrap(), 1.0);
        let bad = Array4::<f32>::zeros((2, 3, 3, 1));
        assert!(matches!(reconstruction_loss(&x, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn reconstruction_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Array2::from_shape_fn((17, 23), |_| rng.random_range(-1.0f32..1.0));
        let b = Array2::from_shape_fn((17, 23), |_| rng.random_range(-1.0f32..1.0));
        let mut total = 0.0f64;
        for i in 0..17 {
            for j in 0..23 {
                total += (a[[i, j]] as f64 - b[[i, j]] as f64).abs();
            }
        }
        let oracle = total / (17.0 * 23.0);
        assert!((reconstruction_loss(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn adversarial_closed_forms() {
        let half = vec![0.5; 8];
        let (g, d) = adversarial_losses(&half, &half).unwrap();
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((g - 2f64.ln()).abs() < 1e-15);
        assert!((d - 1.3863).abs() < 1e-4);
        assert!((g - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn adversarial_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let real: Vec<f64> = (0..13).map(|_| rng.random_range(0.001..0.999)).collect();
            let fake: Vec<f64> = (0..7).map(|_| rng.random_range(0.001..0.999)).collect();
            let mut sr = 0.0;
            for p in &real {
                sr += p.ln();
            }
            let mut sf = 0.0;
            let mut sg = 0.0;
            for p in &fake {
                sf += (1.0 - p).ln();
                sg += p.ln();
            }
            let d_oracle = -(sr / 13.0) - sf / 7.0;
            let g_oracle = -sg / 7.0;
            let (g, d) = adversarial_losses(&real, &fake).unwrap();
            assert!((g - g_oracle).abs() < 1e-12);
            assert!((d - d_oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn adversarial_domain_errors() {
        assert!(matches!(adversarial_losses(&[0.0], &[0.5]), Err(Error::Domain(_))));
        assert!(matches!(adversarial_losses(&[0.5], &[1.0]), Err(Error::Domain(_))));
        assert!(matches!(adversarial_losses(&[f64::NAN], &[0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn total_loss_cases() {
        let w = |a, b| LossWeights::new(a, b).unwrap();
        assert_eq!(total_generator_loss(0.3, 0.9, w(1.0, 0.0)).unwrap(), 0.3);
        assert_eq!(total_generator_loss(0.3, 0.9, w(0.0, 1.0)).unwrap(), 0.9);
        assert!((total_generator_loss(0.2, 0.7, w(50.0, 1.0)).unwrap() - 10.7).abs() < 1e-12);
        assert!(matches!(
            total_generator_loss(f64::NAN, 0.1, w(1.0, 1.0)),
            Err(Error::Numeric(_))
        ));
        assert!(LossWeights::new(0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 2.0).is_err());
    }

    proptest! {
        #[test]
        fn reconstruction_is_a_symmetric_nonnegative_distance(
            a in prop::collection::vec(-1.0f32..1.0, 1..64),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f32> = a.iter().map(|x| if rng.random_bool(0.5) { *x } else { rng.random_range(-1.0..1.0) }).collect();
            let (xa, xb) = (ndarray::arr1(&a), ndarray::arr1(&b));
            let ab = reconstruction_loss(&xa, &xb).unwrap();
            let ba = reconstruction_loss(&xb, &xa).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab == 0.0, a == b);
        }

        #[test]
        fn total_loss_is_linear(
            l1 in -10.0f64..10.0, l2 in -10.0f64..10.0,
            m1 in -10.0f64..10.0, m2 in -10.0f64..10.0,
            s in -3.0f64..3.0,
            wi in 0.0f64..100.0, wa in 0.0f64..10.0,
        ) {
            prop_assume!(wi + wa > 0.0);
            let w = LossWeights::new(wi, wa).unwrap();
            let lhs = total_generator_loss(l1 + s * m1, l2 + s * m2, w).unwrap();
            let rhs = total_generator_loss(l1, l2, w).unwrap() + s * total_generator_loss(m1, m2, w).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }
}
