use crate::error::{Error, Result};

/// Binary Shannon entropy in bits.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("binary entropy argument {p} outside [0,1]")));
    }
    Ok(h(p))
}

pub(crate) fn h(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_centre() {
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert!(binary_entropy(-1e-12).is_err());
        assert!(binary_entropy(1.5).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }

    #[test]
    fn golden_value() {
        // 40-digit evaluation
        let oracle = 0.076_116_028_408_361_379_606;
        assert!((binary_entropy(0.0093).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn symmetric_on_dense_grid() {
        for k in 0..=100_000 {
            let p = k as f64 / 100_000.0;
            let a = binary_entropy(p).unwrap();
            let b = binary_entropy(1.0 - p).unwrap();
            assert!((a - b).abs() < 1e-12, "p = {p}");
        }
    }

    proptest! {
        #[test]
        fn bounded_and_concave(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            let (hp, hq) = (h(p), h(q));
            prop_assert!((0.0..=1.0).contains(&hp));
            prop_assert!(h(0.5 * (p + q)) >= 0.5 * (hp + hq) - 1e-12);
        }
    }
}
