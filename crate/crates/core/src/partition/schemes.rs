//! Train/test splitting and the client partition regimes.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::partition::dataset::Dataset;
use crate::seeding::seeded_rng;

/// Maximum number of full redraws before a Dirichlet split gives up.
const MAX_DIRICHLET_ATTEMPTS: usize = 100;

/// Disjoint per-client index lists into a parent dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
}

impl Partition {
    pub fn clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn total_assigned(&self) -> usize {
        self.client_indices.iter().map(Vec::len).sum()
    }

    /// Check disjointness and index validity against the parent size.
    pub fn validate(&self, parent_len: usize) -> Result<()> {
        let mut seen = vec![false; parent_len];
        for (client, indices) in self.client_indices.iter().enumerate() {
            for &idx in indices {
                if idx >= parent_len {
                    return Err(Error::State {
                        message: format!("client {client} holds out-of-range index {idx}"),
                    });
                }
                if seen[idx] {
                    return Err(Error::State {
                        message: format!("index {idx} assigned to more than one client"),
                    });
                }
                seen[idx] = true;
            }
        }
        Ok(())
    }

    /// True when every parent index is assigned to some client.
    pub fn covers(&self, parent_len: usize) -> bool {
        self.total_assigned() == parent_len
    }
}

/// Audit manifest: one line per client with its index list.
pub fn partition_manifest(partition: &Partition) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# clients={}", partition.clients());
    for (client, indices) in partition.client_indices.iter().enumerate() {
        let _ = write!(out, "client {client}:");
        for idx in indices {
            let _ = write!(out, " {idx}");
        }
        let _ = writeln!(out);
    }
    out
}

/// Partition regime selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionScheme {
    Iid,
    /// Every client holds `shots` samples of every class.
    IidFewShot { shots: usize },
    Dirichlet { beta: f64 },
    /// Disjoint class ownership with `shots` samples per owned class;
    /// remainder classes go to the last client.
    Pathological {
        classes_per_client: usize,
        shots: usize,
    },
}

impl PartitionScheme {
    pub fn tag(&self) -> &'static str {
        match self {
            PartitionScheme::Iid => "iid",
            PartitionScheme::IidFewShot { .. } => "iid-fewshot",
            PartitionScheme::Dirichlet { .. } => "dirichlet",
            PartitionScheme::Pathological { .. } => "pathological",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub clients: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::InvalidParameter {
                name: "clients",
                message: "must be at least 1".to_string(),
            });
        }
        match self.scheme {
            PartitionScheme::Dirichlet { beta } => {
                if !(beta > 0.0) || !beta.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "beta",
                        message: format!("must be positive, got {beta}"),
                    });
                }
            }
            PartitionScheme::Pathological {
                classes_per_client,
                shots,
            } => {
                if classes_per_client == 0 {
                    return Err(Error::InvalidParameter {
                        name: "classes_per_client",
                        message: "must be at least 1".to_string(),
                    });
                }
                if shots == 0 {
                    return Err(Error::InvalidParameter {
                        name: "shots",
                        message: "must be at least 1".to_string(),
                    });
                }
            }
            PartitionScheme::IidFewShot { shots } => {
                if shots == 0 {
                    return Err(Error::InvalidParameter {
                        name: "shots",
                        message: "must be at least 1".to_string(),
                    });
                }
            }
            PartitionScheme::Iid => {}
        }
        Ok(())
    }

    pub fn build(&self, train: &Dataset) -> Result<Partition> {
        self.validate()?;
        match self.scheme {
            PartitionScheme::Iid => split_iid(train, self.clients, self.seed),
            PartitionScheme::IidFewShot { shots } => {
                split_iid_few_shot(train, self.clients, shots, self.seed)
            }
            PartitionScheme::Dirichlet { beta } => {
                split_dirichlet(train, self.clients, beta, self.seed)
            }
            PartitionScheme::Pathological {
                classes_per_client,
                shots,
            } => split_pathological(train, self.clients, classes_per_client, shots, self.seed),
        }
    }
}

/// Result of a train/test split. `stratified` is false when some class was
/// too small and the split fell back to an unstratified shuffle.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: Dataset,
    pub test: Dataset,
    pub stratified: bool,
}

/// Stratified train/test split, deterministic per seed.
///
/// The global test size is `round(fraction * n)`; per-class quotas use
/// largest-remainder rounding so each class contributes within one sample
/// of its proportional share. Classes with fewer than two samples force an
/// unstratified fallback, flagged in the result.
pub fn train_test_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<SplitOutcome> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter {
            name: "test_fraction",
            message: format!("must be in (0, 1), got {test_fraction}"),
        });
    }
    let n = dataset.len();
    let total_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let by_class = dataset.indices_by_class();
    let stratifiable = by_class.iter().all(|idx| idx.is_empty() || idx.len() >= 2);

    let mut test_indices: Vec<usize> = Vec::with_capacity(total_test);
    if stratifiable {
        // Largest-remainder allocation of the global quota across classes.
        let quotas: Vec<f64> = by_class
            .iter()
            .map(|idx| test_fraction * idx.len() as f64)
            .collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        let mut cursor = 0;
        while assigned < total_test {
            let class = order[cursor % order.len()];
            if counts[class] < by_class[class].len() {
                counts[class] += 1;
                assigned += 1;
            }
            cursor += 1;
        }
        while assigned > total_test {
            let class = order[cursor % order.len()];
            if counts[class] > 0 {
                counts[class] -= 1;
                assigned -= 1;
            }
            cursor += 1;
        }
        for (class, indices) in by_class.iter().enumerate() {
            if indices.is_empty() {
                continue;
            }
            let mut shuffled = indices.clone();
            let mut rng = seeded_rng("split-class", &[seed, class as u64]);
            shuffled.shuffle(&mut rng);
            test_indices.extend_from_slice(&shuffled[..counts[class]]);
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        let mut rng = seeded_rng("split", &[seed]);
        all.shuffle(&mut rng);
        test_indices.extend_from_slice(&all[..total_test]);
    }

    test_indices.sort_unstable();
    let mut in_test = vec![false; n];
    for &idx in &test_indices {
        in_test[idx] = true;
    }
    let train_indices: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();

    Ok(SplitOutcome {
        train: dataset.take(&train_indices)?,
        test: dataset.take(&test_indices)?,
        stratified: stratifiable,
    })
}

/// Deal shuffled indices round-robin; client sizes differ by at most one and
/// the union is the whole training set.
pub fn split_iid(train: &Dataset, clients: usize, seed: u64) -> Result<Partition> {
    if clients == 0 {
        return Err(Error::InvalidParameter {
            name: "clients",
            message: "must be at least 1".to_string(),
        });
    }
    if train.len() < clients {
        return Err(Error::InsufficientData {
            what: "iid partition",
            needed: clients,
            available: train.len(),
        });
    }
    let mut indices: Vec<usize> = (0..train.len()).collect();
    let mut rng = seeded_rng("iid", &[seed]);
    indices.shuffle(&mut rng);
    let mut client_indices = vec![Vec::new(); clients];
    for (pos, idx) in indices.into_iter().enumerate() {
        client_indices[pos % clients].push(idx);
    }
    for list in &mut client_indices {
        list.sort_unstable();
    }
    Ok(Partition { client_indices })
}

/// Per-class label-skew split: for each class, client proportions are drawn
/// from a symmetric Dirichlet(beta) via normalized Gamma(beta, 1) draws and
/// realized with largest-remainder rounding. If any client ends up empty the
/// whole partition is redrawn, up to a bounded number of attempts.
pub fn split_dirichlet(train: &Dataset, clients: usize, beta: f64, seed: u64) -> Result<Partition> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter {
            name: "beta",
            message: format!("must be positive, got {beta}"),
        });
    }
    if clients == 0 {
        return Err(Error::InvalidParameter {
            name: "clients",
            message: "must be at least 1".to_string(),
        });
    }
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::InvalidParameter {
        name: "beta",
        message: e.to_string(),
    })?;
    let by_class = train.indices_by_class();

    'attempt: for attempt in 0..MAX_DIRICHLET_ATTEMPTS {
        let mut client_indices = vec![Vec::new(); clients];
        let mut rng = seeded_rng("dirichlet", &[seed, attempt as u64]);
        for (class, indices) in by_class.iter().enumerate() {
            if indices.is_empty() {
                continue;
            }
            let draws: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            if !(total > 0.0) || !total.is_finite() {
                continue 'attempt;
            }
            let proportions: Vec<f64> = draws.iter().map(|d| d / total).collect();
            let counts = largest_remainder(&proportions, indices.len());

            let mut shuffled = indices.clone();
            let mut class_rng = seeded_rng("dirichlet-class", &[seed, attempt as u64, class as u64]);
            shuffled.shuffle(&mut class_rng);
            let mut cursor = 0;
            for (client, &count) in counts.iter().enumerate() {
                client_indices[client].extend_from_slice(&shuffled[cursor..cursor + count]);
                cursor += count;
            }
        }
        if client_indices.iter().all(|list| !list.is_empty()) {
            for list in &mut client_indices {
                list.sort_unstable();
            }
            return Ok(Partition { client_indices });
        }
    }
    Err(Error::PartitionInfeasible {
        beta,
        clients,
        samples: train.len(),
        attempts: MAX_DIRICHLET_ATTEMPTS,
    })
}

/// Round fractional shares to integer counts that sum to `total`, favoring
/// the largest remainders (ties break toward the lower index).
fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut leftover = total - assigned.min(total);
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Disjoint class ownership: classes are shuffled and dealt
/// `classes_per_client` to each client, with the remainder going to the last
/// client; each client receives exactly `shots` samples per owned class.
pub fn split_pathological(
    train: &Dataset,
    clients: usize,
    classes_per_client: usize,
    shots: usize,
    seed: u64,
) -> Result<Partition> {
    let k = train.classes;
    if classes_per_client * (clients.saturating_sub(1)) > k {
        return Err(Error::InvalidParameter {
            name: "classes_per_client",
            message: format!(
                "{classes_per_client} classes for each of {clients} clients exceeds {k} classes"
            ),
        });
    }
    let by_class = train.indices_by_class();
    let mut class_order: Vec<usize> = (0..k).collect();
    let mut rng = seeded_rng("pathological", &[seed]);
    class_order.shuffle(&mut rng);

    let mut client_indices = vec![Vec::new(); clients];
    for client in 0..clients {
        let start = client * classes_per_client;
        let end = if client + 1 == clients {
            k
        } else {
            (client + 1) * classes_per_client
        };
        for &class in &class_order[start..end] {
            let available = by_class[class].len();
            if available < shots {
                return Err(Error::InsufficientShots {
                    class,
                    available,
                    shots,
                });
            }
            let mut shuffled = by_class[class].clone();
            let mut class_rng = seeded_rng("pathological-class", &[seed, class as u64]);
            shuffled.shuffle(&mut class_rng);
            client_indices[client].extend_from_slice(&shuffled[..shots]);
        }
    }
    for list in &mut client_indices {
        list.sort_unstable();
    }
    Ok(Partition { client_indices })
}

/// Few-shot split where every client owns every class: client `i` takes the
/// i-th disjoint `shots`-sized slice of each class.
pub fn split_iid_few_shot(
    train: &Dataset,
    clients: usize,
    shots: usize,
    seed: u64,
) -> Result<Partition> {
    let by_class = train.indices_by_class();
    let mut client_indices = vec![Vec::new(); clients];
    for (class, indices) in by_class.iter().enumerate() {
        if indices.len() < clients * shots {
            return Err(Error::InsufficientShots {
                class,
                available: indices.len(),
                shots: clients * shots,
            });
        }
        let mut shuffled = indices.clone();
        let mut rng = seeded_rng("iid-fewshot", &[seed, class as u64]);
        shuffled.shuffle(&mut rng);
        for (client, list) in client_indices.iter_mut().enumerate() {
            list.extend_from_slice(&shuffled[client * shots..(client + 1) * shots]);
        }
    }
    for list in &mut client_indices {
        list.sort_unstable();
    }
    Ok(Partition { client_indices })
}

/// Mean over clients of the Shannon entropy (nats) of their label histogram.
pub fn mean_client_label_entropy(train: &Dataset, partition: &Partition) -> f64 {
    let mut total = 0.0;
    for indices in &partition.client_indices {
        if indices.is_empty() {
            continue;
        }
        let mut hist = vec![0usize; train.classes];
        for &idx in indices {
            hist[train.labels[idx]] += 1;
        }
        let n = indices.len() as f64;
        let mut entropy = 0.0;
        for count in hist {
            if count > 0 {
                let p = count as f64 / n;
                entropy -= p * p.ln();
            }
        }
        total += entropy;
    }
    total / partition.clients() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::dataset::{synth_dataset, SynthSpec};

    fn data(classes: usize, per_class: usize, seed: u64) -> Dataset {
        synth_dataset(&SynthSpec {
            classes,
            d_feat: 3,
            per_class,
            separation: 1.0,
            seed,
            mean_seed: seed,
            mean_jitter: 0.0,
        })
        .unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let d = data(10, 10, 1);
        let out = train_test_split(&d, 0.2, 5).unwrap();
        assert_eq!(out.test.len(), 20);
        assert_eq!(out.train.len(), 80);
        assert!(out.stratified);
    }

    #[test]
    fn split_is_deterministic() {
        let d = data(5, 8, 2);
        let a = train_test_split(&d, 0.25, 9).unwrap();
        let b = train_test_split(&d, 0.25, 9).unwrap();
        assert!(a.test.features.bits_eq(&b.test.features));
        assert_eq!(a.test.labels, b.test.labels);
    }

    #[test]
    fn stratified_counts_within_one_of_share() {
        let d = data(7, 30, 3);
        let out = train_test_split(&d, 0.2, 11).unwrap();
        let hist = out.test.class_histogram();
        for &count in &hist {
            assert!((count as f64 - 6.0).abs() <= 1.0, "hist {hist:?}");
        }
    }

    #[test]
    fn tiny_class_falls_back_unstratified() {
        let features = crate::numerics::Matrix::filled(3, 2, 1.0).unwrap();
        let d = Dataset::new(features, vec![0, 0, 1], 2, "t".to_string()).unwrap();
        let out = train_test_split(&d, 0.4, 1).unwrap();
        assert!(!out.stratified);
    }

    #[test]
    fn iid_single_client_takes_everything() {
        let d = data(4, 5, 4);
        let p = split_iid(&d, 1, 0).unwrap();
        assert_eq!(p.client_indices[0].len(), 20);
        assert!(p.covers(20));
    }

    #[test]
    fn iid_even_division() {
        let d = data(10, 10, 5);
        let p = split_iid(&d, 10, 3).unwrap();
        for list in &p.client_indices {
            assert_eq!(list.len(), 10);
        }
        p.validate(100).unwrap();
        assert!(p.covers(100));
    }

    #[test]
    fn iid_needs_enough_samples() {
        let d = data(2, 2, 6);
        assert!(matches!(
            split_iid(&d, 5, 0),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn dirichlet_assigns_every_sample_once() {
        let d = data(10, 40, 7);
        let p = split_dirichlet(&d, 6, 0.5, 13).unwrap();
        p.validate(d.len()).unwrap();
        assert!(p.covers(d.len()));
        assert!(p.client_indices.iter().all(|l| !l.is_empty()));
    }

    #[test]
    fn dirichlet_is_deterministic() {
        let d = data(6, 25, 8);
        let a = split_dirichlet(&d, 4, 0.1, 21).unwrap();
        let b = split_dirichlet(&d, 4, 0.1, 21).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pathological_shapes_match_the_dealing_rule() {
        // 47 classes over 7 clients, 6 each: the last client owns 11.
        let d = data(47, 6, 9);
        let p = split_pathological(&d, 7, 6, 4, 2).unwrap();
        for client in 0..6 {
            assert_eq!(p.client_indices[client].len(), 6 * 4);
        }
        assert_eq!(p.client_indices[6].len(), 11 * 4);
        p.validate(d.len()).unwrap();
    }

    #[test]
    fn pathological_class_sets_are_disjoint_and_cover() {
        let d = data(10, 6, 10);
        let p = split_pathological(&d, 5, 2, 3, 4).unwrap();
        let mut owned = vec![false; 10];
        for indices in &p.client_indices {
            let mut classes: Vec<usize> = indices.iter().map(|&i| d.labels[i]).collect();
            classes.sort_unstable();
            classes.dedup();
            assert_eq!(classes.len(), 2);
            for c in classes {
                assert!(!owned[c], "class {c} owned twice");
                owned[c] = true;
            }
        }
        assert!(owned.into_iter().all(|x| x));
    }

    #[test]
    fn pathological_insufficient_shots_names_class() {
        let d = data(4, 2, 11);
        match split_pathological(&d, 2, 2, 3, 0) {
            Err(Error::InsufficientShots { shots, .. }) => assert_eq!(shots, 3),
            other => panic!("expected shots error, got {other:?}"),
        }
    }

    #[test]
    fn iid_few_shot_counts() {
        let d = data(5, 20, 12);
        let p = split_iid_few_shot(&d, 4, 3, 1).unwrap();
        for indices in &p.client_indices {
            assert_eq!(indices.len(), 5 * 3);
        }
        p.validate(d.len()).unwrap();
    }
}
