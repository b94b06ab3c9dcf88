use alloc::vec::Vec;

use super::stats::GlobalStats;
use crate::error::{bail, Result};

/// Convex blend `(1 − λ)·old + λ·new`, channel by channel.
pub fn ema_update(old: &GlobalStats, new: &GlobalStats, lambda: f64) -> Result<GlobalStats> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        bail!(Config, "EMA momentum must lie in (0, 1], got {}", lambda);
    }
    if old.channels() != new.channels() {
        bail!(
            Shape,
            "EMA over {} vs {} channels",
            old.channels(),
            new.channels()
        );
    }
    if lambda == 1.0 {
        return Ok(new.clone());
    }
    let blend = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(o, n)| (1.0 - lambda) * o + lambda * n)
            .collect()
    };
    Ok(GlobalStats {
        mean: blend(&old.mean, &new.mean),
        var: blend(&old.var, &new.var),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn stats(m: f64, v: f64) -> GlobalStats {
        GlobalStats::new(vec![m], vec![v]).unwrap()
    }

    #[test]
    fn unit_momentum_replaces() {
        let new = stats(0.3, 1.7);
        assert_eq!(ema_update(&stats(5.0, 2.0), &new, 1.0).unwrap(), new);
    }

    #[test]
    fn small_momentum_blends_linearly() {
        let out = ema_update(&stats(0.0, 1.0), &stats(1.0, 1.0), 0.01).unwrap();
        assert!((out.mean[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn repeated_updates_converge_geometrically() {
        let lambda = 0.2;
        let target = stats(1.0, 3.0);
        let mut cur = stats(-2.0, 0.5);
        for t in 1..=30 {
            cur = ema_update(&cur, &target, lambda).unwrap();
            let closed = (1.0f64 - lambda).powi(t) * 3.0;
            assert!(((cur.mean[0] - 1.0).abs() - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn momentum_out_of_range_is_rejected() {
        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                ema_update(&stats(0.0, 1.0), &stats(1.0, 1.0), bad),
                Err(crate::Error::Config(_))
            ));
        }
    }
}
