//! Label-skewed client partitions.
//!
//! For every class, proportions `p ~ Dir(φ·1_K)` are drawn across the `K`
//! clients and the (shuffled) indices of that class are cut at
//! `⌊cumsum(p)·n_c⌋`. Smaller `φ` concentrates each class on fewer clients.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use super::dataset::label_histogram;
use crate::error::{bail, Error, Result};
use crate::rng::{stream_rng, Rng, Stream};

pub const MAX_PARTITION_ATTEMPTS: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub clients: usize,
    /// Dirichlet concentration φ.
    pub phi: f64,
    pub seed: u64,
    pub min_samples: usize,
}

/// Draws `Dir(φ·1_k)` through normalized Gamma variates.
pub fn sample_dirichlet(phi: f64, k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let gamma =
        Gamma::new(phi, 1.0).map_err(|e| Error::Config(alloc::format!("invalid φ {phi}: {e}")))?;
    for _ in 0..1000 {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return Ok(draws.into_iter().map(|g| g / total).collect());
        }
    }
    // every draw underflowed: all mass on one uniformly chosen client
    let mut p = vec![0.0; k];
    p[rng.random_range(0..k)] = 1.0;
    Ok(p)
}

/// Splits the indices of `labels` into `spec.clients` disjoint, covering,
/// sorted index sets.
pub fn dirichlet_partition(
    labels: &[usize],
    classes: usize,
    spec: &PartitionSpec,
) -> Result<Vec<Vec<usize>>> {
    if spec.clients == 0 {
        bail!(Config, "need at least one client");
    }
    if !(spec.phi > 0.0 && spec.phi.is_finite()) {
        bail!(
            Config,
            "Dirichlet coefficient must be positive and finite, got {}",
            spec.phi
        );
    }
    if spec.clients * spec.min_samples > labels.len() {
        bail!(
            Partition,
            "{} samples cannot give {} clients {} samples each",
            labels.len(),
            spec.clients,
            spec.min_samples
        );
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            bail!(Data, "label {} out of range for {} classes", l, classes);
        }
        by_class[l].push(i);
    }

    for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let mut rng = stream_rng(spec.seed, Stream::Partition, &[attempt as u64]);
        let mut parts: Vec<Vec<usize>> = vec![Vec::new(); spec.clients];
        for members in &by_class {
            let mut idx = members.clone();
            idx.shuffle(&mut rng);
            let p = sample_dirichlet(spec.phi, spec.clients, &mut rng)?;
            let n = idx.len();
            let mut start = 0usize;
            let mut cum = 0.0f64;
            for (k, pk) in p.iter().enumerate() {
                cum += pk;
                let end = if k + 1 == spec.clients {
                    n
                } else {
                    ((cum * n as f64) as usize).clamp(start, n)
                };
                parts[k].extend_from_slice(&idx[start..end]);
                start = end;
            }
        }
        if parts.iter().all(|p| p.len() >= spec.min_samples) {
            for p in parts.iter_mut() {
                p.sort_unstable();
            }
            return Ok(parts);
        }
    }
    bail!(
        Partition,
        "no partition with at least {} samples per client after {} attempts (φ = {})",
        spec.min_samples,
        MAX_PARTITION_ATTEMPTS,
        spec.phi
    )
}

fn normalized(h: &[usize]) -> Vec<f64> {
    let total: usize = h.iter().sum();
    h.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
}

/// Shannon entropy (nats) of a client's label distribution.
pub fn label_entropy(labels: &[usize], indices: &[usize], classes: usize) -> f64 {
    let own: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
    normalized(&label_histogram(&own, classes))
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * libm::log(p))
        .sum()
}

/// `KL(client ‖ global)` of label distributions, in nats.
pub fn label_kl_from_global(labels: &[usize], indices: &[usize], classes: usize) -> f64 {
    let global = normalized(&label_histogram(labels, classes));
    let own: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
    normalized(&label_histogram(&own, classes))
        .iter()
        .zip(&global)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * libm::log(p / q))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced_labels(per_class: usize, classes: usize) -> Vec<usize> {
        (0..per_class * classes).map(|i| i % classes).collect()
    }

    fn spec(clients: usize, phi: f64, seed: u64) -> PartitionSpec {
        PartitionSpec {
            clients,
            phi,
            seed,
            min_samples: 1,
        }
    }

    #[test]
    fn partitions_are_disjoint_and_cover() {
        let labels = balanced_labels(50, 10);
        for &phi in &[0.05, 0.1, 0.6, 10.0] {
            for seed in 0..5 {
                let parts = dirichlet_partition(&labels, 10, &spec(7, phi, seed)).unwrap();
                let mut all: Vec<usize> = parts.concat();
                all.sort_unstable();
                assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn huge_phi_matches_global_histogram() {
        let labels = balanced_labels(400, 10);
        let parts = dirichlet_partition(&labels, 10, &spec(5, 1e6, 3)).unwrap();
        for p in &parts {
            let own: Vec<usize> = p.iter().map(|&i| labels[i]).collect();
            let h = normalized(&label_histogram(&own, 10));
            for v in h {
                assert!((v - 0.1).abs() <= 0.05 * 0.1 + 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn smaller_phi_lowers_mean_entropy() {
        let labels = balanced_labels(100, 10);
        let mean_entropy = |phi: f64| -> f64 {
            let mut total = 0.0;
            let mut count = 0;
            for seed in 0..10 {
                for p in dirichlet_partition(&labels, 10, &spec(10, phi, seed)).unwrap() {
                    total += label_entropy(&labels, &p, 10);
                    count += 1;
                }
            }
            total / count as f64
        };
        assert!(mean_entropy(0.1) < mean_entropy(0.6));
    }

    #[test]
    fn heterogeneity_is_monotone_in_phi() {
        let labels = balanced_labels(100, 10);
        let mean_kl = |phi: f64| -> f64 {
            let mut total = 0.0;
            let mut count = 0;
            for seed in 0..10 {
                for p in dirichlet_partition(&labels, 10, &spec(10, phi, seed)).unwrap() {
                    total += label_kl_from_global(&labels, &p, 10);
                    count += 1;
                }
            }
            total / count as f64
        };
        let kls: Vec<f64> = [0.05, 0.1, 0.3, 0.6, 10.0]
            .iter()
            .map(|&p| mean_kl(p))
            .collect();
        for w in kls.windows(2) {
            assert!(w[0] >= w[1], "{kls:?}");
        }
    }

    #[test]
    fn unsatisfiable_minimum_is_partition_error() {
        let labels = balanced_labels(3, 2);
        let err = dirichlet_partition(
            &labels,
            2,
            &PartitionSpec {
                clients: 4,
                phi: 0.5,
                seed: 0,
                min_samples: 2,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Partition(_)));

        // satisfiable in principle but practically impossible with extreme skew
        let labels = balanced_labels(20, 2);
        let err = dirichlet_partition(
            &labels,
            2,
            &PartitionSpec {
                clients: 10,
                phi: 0.001,
                seed: 0,
                min_samples: 4,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Partition(_)));
    }

    #[test]
    fn invalid_phi_is_config_error() {
        let labels = balanced_labels(3, 2);
        for phi in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                dirichlet_partition(&labels, 2, &spec(2, phi, 0)),
                Err(Error::Config(_))
            ));
        }
    }
}
