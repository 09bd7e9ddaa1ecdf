use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Zero};

use super::EvalError;
use crate::genai::RepairAttempt;

/// The k values reported per bug.
pub const REPORTED_K: [u64; 3] = [1, 3, 5];

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        // exact at every step: acc holds C(n, i + 1) afterwards
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

fn check(n: u64, c: u64, k: u64) -> Result<(), EvalError> {
    if k == 0 || k > n || c > n {
        return Err(EvalError::PassAtK { n, c, k });
    }
    Ok(())
}

/// `1 - C(n-c, k) / C(n, k)` as an exact rational.
pub fn pass_at_k_exact(n: u64, c: u64, k: u64) -> Result<BigRational, EvalError> {
    check(n, c, k)?;
    let miss = BigRational::new(binomial(n - c, k).into(), binomial(n, k).into());
    Ok(BigRational::one() - miss)
}

/// Floating-point form of [`pass_at_k_exact`], computed as a product so it
/// stays stable for large n.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, EvalError> {
    check(n, c, k)?;
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = ((n - c + 1)..=n)
        .map(|i| 1.0 - k as f64 / i as f64)
        .product();
    Ok(1.0 - miss)
}

/// Samples and successes for one bug.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PassAtK {
    pub n: u64,
    pub c: u64,
}

impl PassAtK {
    pub fn at(&self, k: u64) -> Option<f64> {
        pass_at_k(self.n, self.c, k).ok()
    }

    pub fn exact_at(&self, k: u64) -> Option<BigRational> {
        pass_at_k_exact(self.n, self.c, k).ok()
    }
}

/// (n, c) per bug: a sample (or refinement chain) counts as correct when
/// any of its attempts passed every test.
pub fn sample_counts(attempts: &[RepairAttempt]) -> BTreeMap<String, PassAtK> {
    let mut samples: BTreeMap<(&str, usize), bool> = BTreeMap::new();
    for a in attempts {
        *samples.entry((&a.bug_id, a.sample_index)).or_default() |= a.passed_all;
    }
    let mut out: BTreeMap<String, PassAtK> = BTreeMap::new();
    for ((bug, _), ok) in samples {
        let e = out.entry(bug.to_owned()).or_insert(PassAtK { n: 0, c: 0 });
        e.n += 1;
        e.c += u64::from(ok);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_traits::ToPrimitive;

    fn ratio_to_f64(r: &BigRational) -> f64 {
        r.to_f64().unwrap()
    }

    fn exact(n: u64, c: u64, k: u64) -> BigRational {
        pass_at_k_exact(n, c, k).unwrap()
    }

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(BigInt::from(a), BigInt::from(b))
    }

    #[test]
    fn worked_values() {
        assert_eq!(exact(5, 0, 1), q(0, 1));
        assert_eq!(exact(5, 5, 3), q(1, 1));
        assert_eq!(exact(5, 2, 3), q(9, 10));
        assert_eq!(exact(5, 2, 1), q(2, 5));
    }

    #[test]
    fn invalid_arguments() {
        assert!(pass_at_k(3, 1, 4).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
        assert!(pass_at_k(3, 4, 1).is_err());
    }

    #[test]
    fn float_form_tracks_exact_form() {
        for n in 1..=30 {
            for c in 0..=n {
                for k in 1..=n {
                    let f = pass_at_k(n, c, k).unwrap();
                    let e = ratio_to_f64(&exact(n, c, k));
                    assert!((f - e).abs() < 1e-12, "n={n} c={c} k={k}");
                }
            }
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), BigUint::from(10u32));
        assert_eq!(binomial(60, 30), BigUint::from(118264581564861424u64));
        assert_eq!(binomial(3, 4), BigUint::zero());
    }
}
