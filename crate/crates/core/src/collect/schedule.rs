use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numcore::seeded_rng;

/// Draws `target_n` temperatures uniformly from the grid `0, step, ..., 1`.
/// Zero makes decoding deterministic, so it is drawn at most once; a second
/// draw of zero is redrawn.
pub fn build_temperature_schedule(target_n: usize, step: f64, seed: u64) -> Result<Vec<f64>> {
    if target_n == 0 {
        return Err(Error::invalid("target_n must be at least 1"));
    }
    let points = grid_points(step)?;
    let mut rng = seeded_rng(seed);
    let mut zero_used = false;
    let mut out = Vec::with_capacity(target_n);
    while out.len() < target_n {
        let k = rng.random_range(0..=points);
        if k == 0 {
            if zero_used {
                continue;
            }
            zero_used = true;
        }
        out.push(k as f64 / points as f64);
    }
    Ok(out)
}

/// Number of steps on the grid; `step` has to divide 1 into whole steps.
fn grid_points(step: f64) -> Result<u64> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::invalid(format!("temperature step {step} must be in (0, 1]")));
    }
    let m = (1.0 / step).round();
    if (m * step - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("temperature step {step} does not divide 1 into whole steps")));
    }
    Ok(m as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_size_schedule() {
        let s = build_temperature_schedule(401, 0.01, 7).unwrap();
        assert_eq!(s.len(), 401);
        assert!(s.iter().filter(|&&t| t == 0.0).count() <= 1);
        for t in &s {
            assert!((0.0..=1.0).contains(t));
            assert!(((t * 100.0).round() - t * 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_value() {
        for seed in 0..20 {
            let s = build_temperature_schedule(1, 0.01, seed).unwrap();
            assert_eq!(s.len(), 1);
            assert!((0.0..=1.0).contains(&s[0]));
        }
    }

    #[test]
    fn zero_never_repeats_on_a_coarse_grid() {
        let s = build_temperature_schedule(500, 1.0, 3).unwrap();
        assert_eq!(s.iter().filter(|&&t| t == 0.0).count(), 1);
        assert_eq!(s.iter().filter(|&&t| t == 1.0).count(), 499);
    }

    #[test]
    fn bad_step() {
        assert!(build_temperature_schedule(5, 0.3, 1).is_err());
        assert!(build_temperature_schedule(5, 0.0, 1).is_err());
        assert!(build_temperature_schedule(0, 0.1, 1).is_err());
    }

    proptest! {
        #[test]
        fn deterministic(n in 1usize..300, seed in any::<u64>()) {
            let a = build_temperature_schedule(n, 0.01, seed).unwrap();
            let b = build_temperature_schedule(n, 0.01, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.iter().filter(|&&t| t == 0.0).count() <= 1);
        }
    }
}
