//! Entropy and surprise of next-token distributions given as logits.

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// A softmax distribution in max-shifted form: `p_i = exp(shifted_i) / Z`
/// with every `shifted_i <= 0` and at least one equal to zero.
#[derive(Clone, Debug)]
pub struct Distribution<T> {
    pub shifted: Vec<T>,
    pub log_z: T,
}

impl<T: Scalar> Distribution<T> {
    pub fn from_logits(logits: &[T], temperature: T) -> Result<Self> {
        if logits.is_empty() {
            return Err(invalid("empty logit vector"));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(invalid("non-finite logit"));
        }
        if !(temperature > T::zero()) || !temperature.is_finite() {
            return Err(invalid(format!("temperature must be finite and > 0, got {temperature}")));
        }
        let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let shifted: Vec<T> = logits.iter().map(|&l| (l - m) / temperature).collect();
        let z: T = shifted.iter().map(|&s| s.exp()).sum();
        Ok(Self { shifted, log_z: z.ln() })
    }

    /// `H = ln Z + Σ p_i (−s_i)`. Every summand is nonnegative, so the
    /// result is never below the argmax surprise `ln Z`, even after rounding.
    pub fn entropy(&self) -> T {
        let z = self.log_z.exp();
        let spread: T = self
            .shifted
            .iter()
            .map(|&s| {
                let p = s.exp() / z;
                if p == T::zero() {
                    T::zero()
                } else {
                    p * (-s)
                }
            })
            .sum();
        self.log_z + spread
    }

    /// `−log p(token)`.
    pub fn surprise(&self, token: usize) -> T {
        self.log_z - self.shifted[token]
    }

    pub fn logprob(&self, token: usize) -> T {
        self.shifted[token] - self.log_z
    }

    pub fn probs(&self) -> Vec<T> {
        let z = self.log_z.exp();
        self.shifted.iter().map(|&s| s.exp() / z).collect()
    }

    /// Token ids ordered by probability, ties broken by lower id.
    pub fn ranked(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.shifted.len()).collect();
        ids.sort_by(|&a, &b| {
            self.shifted[b]
                .partial_cmp(&self.shifted[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        ids
    }

    /// Lowest-id argmax.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.shifted.iter().enumerate() {
            if s > self.shifted[best] {
                best = i;
            }
        }
        best
    }
}

/// Shannon entropy (nats) of `softmax(logits / temperature)`.
///
/// Temperature zero is the deterministic limit and returns 0.
pub fn entropy_of<T: Scalar>(logits: &[T], temperature: T) -> Result<T> {
    if temperature == T::zero() {
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(invalid("non-finite logit"));
        }
        return Ok(T::zero());
    }
    Ok(Distribution::from_logits(logits, temperature)?.entropy())
}

/// `−log softmax(logits)[token]` at temperature one.
pub fn surprise_of<T: Scalar>(logits: &[T], token: usize) -> Result<T> {
    if token >= logits.len() {
        return Err(invalid(format!("token {token} outside vocabulary of {}", logits.len())));
    }
    Ok(Distribution::from_logits(logits, T::one())?.surprise(token))
}

pub fn log_softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    let d = Distribution::from_logits(logits, T::one())?;
    Ok(d.shifted.iter().map(|&s| s - d.log_z).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_log_v() {
        for v in [10usize, 100, 128_000] {
            let h = entropy_of(&vec![0.3f64; v], 1.0).unwrap();
            assert!((h - (v as f64).ln()).abs() < 1e-9, "V={v}: {h}");
        }
    }

    #[test]
    fn dominant_logit_gives_zero() {
        let mut l = vec![0.0f64; 50];
        l[7] = 1e4;
        assert!(entropy_of(&l, 1.0).unwrap().abs() < 1e-6);
    }

    #[test]
    fn zero_temperature_is_zero() {
        assert_eq!(entropy_of(&[1.0f64, 2.0], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(entropy_of(&[1.0f64, f64::NAN], 1.0).is_err());
        assert!(entropy_of(&[1.0f64, f64::INFINITY], 0.0).is_err());
        assert!(entropy_of(&[1.0f64], -1.0).is_err());
    }

    #[test]
    fn argmax_surprise_bounded_by_entropy() {
        let d = Distribution::from_logits(&[2.0f64, 2.0, 1.0, -3.0], 1.0).unwrap();
        assert!(d.surprise(d.argmax()) <= d.entropy());
        assert_eq!(d.argmax(), 0);
        assert_eq!(d.ranked(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn temperature_sharpens() {
        let l = [1.0f64, 0.5, 0.0];
        let hot = entropy_of(&l, 2.0).unwrap();
        let cold = entropy_of(&l, 0.5).unwrap();
        assert!(cold < entropy_of(&l, 1.0).unwrap() && hot > entropy_of(&l, 1.0).unwrap());
    }

    #[test]
    fn f32_kernel() {
        let h = entropy_of(&[0.0f32; 16], 1.0).unwrap();
        assert!((h - 16f32.ln()).abs() < 1e-5);
    }
}
