use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

use super::round_half_up;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionScheme {
    /// Per-class client proportions drawn from `Dirichlet(alpha)`.
    Dirichlet { alpha: f64 },
    /// Label-sorted data cut into `clients · per_client` shards, dealt at random.
    Shard { per_client: usize },
}

impl Default for PartitionScheme {
    fn default() -> Self {
        Self::Dirichlet { alpha: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientShard {
    pub client_id: usize,
    /// Ascending indices into the parent dataset.
    pub indices: Vec<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

const DIRICHLET_ATTEMPTS: usize = 100;

/// Splits sample indices over `clients` disjoint, nonempty shards.
pub fn partition_noniid(
    labels: &[usize],
    class_count: usize,
    clients: usize,
    scheme: PartitionScheme,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    let n = labels.len();
    if clients == 0 {
        return Err(Error::Config("client count must be at least 1".into()));
    }
    if clients > n {
        return Err(Error::Config(format!(
            "{clients} clients but only {n} samples"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = match scheme {
        PartitionScheme::Dirichlet { alpha } => {
            dirichlet(labels, class_count, clients, alpha, &mut rng)?
        }
        PartitionScheme::Shard { per_client } => shards(labels, clients, per_client, &mut rng)?,
    };
    repair_empty(&mut assignment);
    Ok(assignment
        .into_iter()
        .enumerate()
        .map(|(client_id, mut indices)| {
            indices.sort_unstable();
            ClientShard { client_id, indices }
        })
        .collect())
}

fn dirichlet(
    labels: &[usize],
    class_count: usize,
    clients: usize,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "dirichlet alpha must be positive, got {alpha}"
        )));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut by_class = vec![Vec::new(); class_count];
    for (i, &y) in labels.iter().enumerate() {
        if y >= class_count {
            return Err(Error::LabelOutOfRange {
                label: y,
                class_count,
            });
        }
        by_class[y].push(i);
    }

    let mut best = Vec::new();
    for _ in 0..DIRICHLET_ATTEMPTS {
        let mut assignment = vec![Vec::new(); clients];
        for members in &by_class {
            let mut members = members.clone();
            members.shuffle(rng);
            let mut weights: Vec<f64> = (0..clients).map(|_| gamma.sample(rng)).collect();
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                weights.iter_mut().for_each(|w| *w /= total);
            } else {
                // every draw underflowed: give the class to one random client
                weights.iter_mut().for_each(|w| *w = 0.0);
                weights[rng.random_range(0..clients)] = 1.0;
            }
            let mut cumulative = 0.0;
            let mut start = 0;
            for (client, w) in weights.iter().enumerate() {
                cumulative += w;
                let end = if client + 1 == clients {
                    members.len()
                } else {
                    round_half_up(cumulative * members.len() as f64).min(members.len())
                };
                assignment[client].extend_from_slice(&members[start..end.max(start)]);
                start = end.max(start);
            }
        }
        let complete = assignment.iter().all(|a| !a.is_empty());
        best = assignment;
        if complete {
            break;
        }
    }
    Ok(best)
}

fn shards(
    labels: &[usize],
    clients: usize,
    per_client: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let total = clients * per_client;
    if per_client == 0 || total > labels.len() {
        return Err(Error::Config(format!(
            "cannot cut {} samples into {clients} × {per_client} shards",
            labels.len()
        )));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&i| labels[i]);
    let mut shard_ids: Vec<usize> = (0..total).collect();
    shard_ids.shuffle(rng);
    let n = labels.len();
    Ok(shard_ids
        .chunks(per_client)
        .map(|ids| {
            ids.iter()
                .flat_map(|&s| order[s * n / total..(s + 1) * n / total].iter().copied())
                .collect()
        })
        .collect())
}

/// Moves one sample from the largest shard into each empty shard.
fn repair_empty(assignment: &mut [Vec<usize>]) {
    for client in 0..assignment.len() {
        if !assignment[client].is_empty() {
            continue;
        }
        let donor = (0..assignment.len())
            .max_by_key(|&c| (assignment[c].len(), std::cmp::Reverse(c)))
            .expect("at least one client");
        if assignment[donor].len() > 1 {
            let moved = assignment[donor].pop().expect("nonempty donor");
            assignment[client].push(moved);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced(k: usize, per: usize) -> Vec<usize> {
        (0..k).flat_map(|c| std::iter::repeat_n(c, per)).collect()
    }

    fn check_cover(shards: &[ClientShard], n: usize) {
        let mut seen = vec![false; n];
        for s in shards {
            assert!(!s.is_empty());
            for &i in &s.indices {
                assert!(!seen[i], "index {i} twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn single_client_takes_all() {
        let labels = balanced(3, 4);
        for scheme in [
            PartitionScheme::default(),
            PartitionScheme::Shard { per_client: 2 },
        ] {
            let shards = partition_noniid(&labels, 3, 1, scheme, 0).unwrap();
            assert_eq!(shards.len(), 1);
            assert_eq!(shards[0].indices, (0..12).collect::<Vec<_>>());
        }
    }

    #[test]
    fn one_shard_per_client_is_one_class() {
        let labels = balanced(2, 10);
        let shards =
            partition_noniid(&labels, 2, 2, PartitionScheme::Shard { per_client: 1 }, 4).unwrap();
        for s in &shards {
            let first = labels[s.indices[0]];
            assert!(s.indices.iter().all(|&i| labels[i] == first));
        }
        check_cover(&shards, 20);
    }

    #[test]
    fn too_many_clients() {
        let labels = balanced(2, 2);
        assert!(matches!(
            partition_noniid(&labels, 2, 5, PartitionScheme::default(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dirichlet_histograms_are_skewed() {
        // Over 20 seeds, at least half of the clients hold a class share above 1.5 / k.
        let k = 4;
        let labels = balanced(k, 100);
        for seed in 0..20 {
            let shards = partition_noniid(
                &labels,
                k,
                10,
                PartitionScheme::Dirichlet { alpha: 0.5 },
                seed,
            )
            .unwrap();
            let skewed = shards
                .iter()
                .filter(|s| {
                    let mut hist = vec![0usize; k];
                    s.indices.iter().for_each(|&i| hist[labels[i]] += 1);
                    let max = *hist.iter().max().unwrap() as f64;
                    max / s.len() as f64 > 1.5 / k as f64
                })
                .count();
            assert!(skewed >= 5, "seed {seed}: only {skewed} skewed clients");
        }
    }

    proptest! {
        #[test]
        fn partitions_are_disjoint_covers(
            k in 2usize..5,
            per in 1usize..30,
            clients in 1usize..12,
            alpha in 0.05f64..5.0,
            seed in any::<u64>(),
        ) {
            let labels = balanced(k, per);
            prop_assume!(clients <= labels.len());
            let shards = partition_noniid(&labels, k, clients, PartitionScheme::Dirichlet { alpha }, seed).unwrap();
            prop_assert_eq!(shards.len(), clients);
            check_cover(&shards, labels.len());
            if clients * 2 <= labels.len() {
                let shards = partition_noniid(&labels, k, clients, PartitionScheme::Shard { per_client: 2 }, seed).unwrap();
                check_cover(&shards, labels.len());
            }
        }
    }
}
