//! Fairness and efficiency formulas plus prediction-quality metrics.
//!
//! The closed forms here double as oracles for the scheduler: the ideal
//! fairness and total-time expressions must agree exactly with the simulated
//! schedule under uniform durations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jain's fairness index `(sum x)^2 / (M * sum x^2)`, between `1/M` and 1.
pub fn jain_index(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Argument("fairness index of an empty vector is undefined".into()));
    }
    if x.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Argument("fairness index needs nonnegative finite inputs".into()));
    }
    let sum: f64 = x.iter().sum();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return Err(Error::Argument("fairness index of an all-zero vector is undefined".into()));
    }
    Ok(sum * sum / (x.len() as f64 * sq))
}

fn ceil_log2(m: u64) -> u32 {
    // smallest l with 2^l >= m
    let mut l = 0;
    while (1u64 << l) < m {
        l += 1;
    }
    l
}

/// Per-party active-node counts of the ideal schedule: the doubling phase
/// hands layer `l` to parties `1..2^(l-1)`, the saturated phase round-robins
/// the remaining nodes over all `M` parties in breadth-first order.
pub fn ideal_counts(n: u32, m: u32) -> Vec<u64> {
    debug_assert!(n >= 1 && m >= 1);
    let m64 = m as u64;
    let doubling_layers = ceil_log2(m64).min(n);
    let mut counts = vec![0u64; m as usize];
    for l in 1..=doubling_layers {
        for party in 0..(1u64 << (l - 1)).min(m64) {
            counts[party as usize] += 1;
        }
    }
    let total: u64 = (1 << n) - 1;
    let assigned: u64 = (1 << doubling_layers) - 1;
    let rest = total - assigned;
    let p = rest / m64;
    let q = rest % m64;
    for (party, c) in counts.iter_mut().enumerate() {
        *c += p + u64::from((party as u64) < q);
    }
    counts
}

/// Closed-form Jain index of the ideal schedule over a complete tree of `n`
/// non-leaf layers and `M` parties.
pub fn ideal_fairness(n: u32, m: u32) -> f64 {
    debug_assert!(n >= 1 && m >= 1);
    let nodes = (1u64 << n) - 1;
    if u64::from(m) > 1u64 << (n - 1) {
        let sq = 3 * (1u64 << n) - 2 * u64::from(n) - 3;
        (nodes * nodes) as f64 / (u64::from(m) * sq) as f64
    } else {
        // profile x_m = ceil(log2 M) - ceil(log2 m) + p + alpha(m), Jain with
        // the M factor in the denominator
        let counts = ideal_counts(n, m);
        let sum: u64 = counts.iter().sum();
        let sq: u64 = counts.iter().map(|&c| c * c).sum();
        (sum * sum) as f64 / (u64::from(m) * sq) as f64
    }
}

/// Ideal makespan for one tree: every party aggregates all `2^n - 1` nodes,
/// and the critical path carries `ceil(log2 M)` doubling-phase splits plus the
/// round-robined remainder. The doubling phase cannot exceed `n` layers.
pub fn ideal_total_time(n: u32, m: u32, tau10: f64, tau20: f64) -> f64 {
    debug_assert!(n >= 1 && m >= 1);
    let nodes = (1u64 << n) - 1;
    let doubling = ceil_log2(u64::from(m)).min(n);
    let rest = (1u64 << n) - (1u64 << doubling);
    let slots = doubling as u64 + rest.div_ceil(u64::from(m));
    tau10 * nodes as f64 + tau20 * slots as f64
}

/// Large-`n` limit of `T_M / T_inf`: `1 + tau20 / (M * tau10)`.
pub fn asymptotic_ratio(m: u32, tau10: f64, tau20: f64) -> f64 {
    debug_assert!(m >= 1 && tau10 > 0.0 && tau20 > 0.0);
    1.0 + tau20 / (m as f64 * tau10)
}

/// Mean squared error.
pub fn mse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != actual.len() {
        return Err(Error::Argument(format!(
            "mse needs equal nonempty lengths, got {} and {}",
            pred.len(),
            actual.len()
        )));
    }
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum::<f64>() / pred.len() as f64)
}

/// Per-party share of active-node assignments across epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FairnessReport {
    /// Total active-node count per party, summed over epochs.
    pub x: Vec<u64>,
    pub jain: f64,
    /// Per-party mean count across epochs.
    pub mean: Vec<f64>,
    /// Per-party standard deviation across epochs.
    pub std: Vec<f64>,
}

impl FairnessReport {
    /// `per_epoch[e][m]` is party `m`'s active-node count in epoch `e`.
    pub fn from_epoch_counts(per_epoch: &[Vec<u64>]) -> Result<FairnessReport> {
        if per_epoch.is_empty() || per_epoch[0].is_empty() {
            return Err(Error::Argument("fairness report needs at least one epoch and party".into()));
        }
        let m = per_epoch[0].len();
        let epochs = per_epoch.len() as f64;
        let mut x = vec![0u64; m];
        for epoch in per_epoch {
            if epoch.len() != m {
                return Err(Error::Argument("epoch count vectors differ in length".into()));
            }
            for (t, &c) in x.iter_mut().zip(epoch) {
                *t += c;
            }
        }
        let mean: Vec<f64> = x.iter().map(|&t| t as f64 / epochs).collect();
        let std: Vec<f64> = (0..m)
            .map(|party| {
                let mu = mean[party];
                let var = per_epoch
                    .iter()
                    .map(|e| (e[party] as f64 - mu).powi(2))
                    .sum::<f64>()
                    / epochs;
                var.sqrt()
            })
            .collect();
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let jain = jain_index(&xf)?;
        Ok(FairnessReport { x, jain, mean, std })
    }
}

/// Timing summary of one schedule run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Makespan in virtual seconds.
    pub makespan: f64,
    /// Closed-form T_M under uniform durations, when applicable.
    #[serde(rename = "formula_T_M")]
    pub formula_t_m: Option<f64>,
    /// Makespan divided by the aggregation-only lower bound `tau10 * (2^n - 1)`.
    pub ratio: Option<f64>,
    /// Per-party idle fraction of the makespan.
    pub idle: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jain_examples() {
        assert_eq!(jain_index(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(jain_index(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.25);
        let paper = jain_index(&[9.0, 8.0, 7.0, 7.0, 6.0, 6.0, 6.0, 6.0, 4.0, 4.0]).unwrap();
        assert!((paper - 0.947).abs() < 1e-3, "got {paper}");
        assert!(jain_index(&[]).is_err());
        assert!(jain_index(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn ideal_fairness_examples() {
        // first branch: 961/2656
        let f = ideal_fairness(5, 32);
        assert!((f - 961.0 / 2656.0).abs() < 1e-12, "got {f}");
        // paper case study value
        let f = ideal_fairness(6, 10);
        assert!((f - 0.947).abs() < 1e-3, "got {f}");
        assert_eq!(ideal_fairness(4, 1), 1.0);
    }

    #[test]
    fn ideal_counts_match_known_profiles() {
        assert_eq!(ideal_counts(2, 2), vec![2, 1]);
        let c = ideal_counts(5, 32);
        let mut expected = vec![5u64, 4, 3, 3, 2, 2, 2, 2];
        expected.extend(std::iter::repeat(1).take(8));
        expected.extend(std::iter::repeat(0).take(16));
        assert_eq!(c, expected);
        let c = ideal_counts(6, 10);
        assert_eq!(c, vec![9, 8, 7, 7, 6, 6, 6, 6, 4, 4]);
        assert_eq!(c.iter().sum::<u64>(), 63);
    }

    #[test]
    fn ideal_fairness_matches_counts_grid() {
        for n in 2..=6 {
            for m in 1..=32 {
                let counts: Vec<f64> = ideal_counts(n, m).iter().map(|&c| c as f64).collect();
                let from_counts = jain_index(&counts).unwrap();
                let formula = ideal_fairness(n, m);
                assert!(
                    (from_counts - formula).abs() < 1e-12,
                    "n={n} m={m}: counts {from_counts} vs formula {formula}"
                );
            }
        }
    }

    #[test]
    fn ideal_total_time_examples() {
        assert_eq!(ideal_total_time(5, 1, 2.0, 7.0), 279.0);
        assert_eq!(ideal_total_time(5, 4, 2.0, 7.0), 125.0);
        for m in [1u32, 3, 17] {
            assert_eq!(ideal_total_time(1, m, 2.0, 7.0), 9.0);
        }
    }

    #[test]
    fn asymptotic_ratio_examples() {
        assert_eq!(asymptotic_ratio(1, 2.0, 7.0), 4.5);
        assert_eq!(asymptotic_ratio(7, 1.0, 7.0), 2.0);
        assert!((asymptotic_ratio(1_000_000, 2.0, 7.0) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(mse(&[], &[]).is_err());
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn fairness_report_aggregates_epochs() {
        let per_epoch = vec![vec![3u64, 1, 0], vec![1, 3, 0]];
        let r = FairnessReport::from_epoch_counts(&per_epoch).unwrap();
        assert_eq!(r.x, vec![4, 4, 0]);
        assert_eq!(r.mean, vec![2.0, 2.0, 0.0]);
        assert_eq!(r.std, vec![1.0, 1.0, 0.0]);
        assert!((r.jain - 64.0 / (3.0 * 32.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn jain_bounds(x in proptest::collection::vec(0.0f64..100.0, 1..20)) {
            prop_assume!(x.iter().any(|&v| v > 0.0));
            let j = jain_index(&x).unwrap();
            let m = x.len() as f64;
            prop_assert!(j >= 1.0 / m - 1e-12);
            prop_assert!(j <= 1.0 + 1e-12);
        }

        #[test]
        fn jain_scale_invariance(
            x in proptest::collection::vec(0.0f64..100.0, 1..20),
            c in 0.001f64..1000.0,
        ) {
            prop_assume!(x.iter().any(|&v| v > 0.0));
            let scaled: Vec<f64> = x.iter().map(|&v| c * v).collect();
            let a = jain_index(&x).unwrap();
            let b = jain_index(&scaled).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn jain_extremes(m in 1usize..24) {
            let mut one_hot = vec![0.0; m];
            one_hot[0] = 7.5;
            prop_assert!((jain_index(&one_hot).unwrap() - 1.0 / m as f64).abs() < 1e-12);
            let equal = vec![3.25; m];
            prop_assert!((jain_index(&equal).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
