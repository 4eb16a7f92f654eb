use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::seed;

/// Disjoint per-client index lists into one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    clients: Vec<Vec<usize>>,
}

impl Partition {
    pub fn from_lists(clients: Vec<Vec<usize>>) -> Self {
        Partition { clients }
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client(&self, k: usize) -> &[usize] {
        &self.clients[k]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clients.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.clients.iter().map(Vec::len).sum()
    }

    /// Label histogram of each client.
    pub fn label_counts(&self, labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
        self.clients
            .iter()
            .map(|idx| {
                let mut c = vec![0; num_classes];
                for &i in idx {
                    c[labels[i]] += 1;
                }
                c
            })
            .collect()
    }
}

/// Non-IID label partition.
///
/// For every class the shuffled class members are split across clients by
/// proportions drawn from a symmetric Dirichlet(`alpha`). Clients left with
/// fewer than `min_per_client` indices are topped up one index at a time from
/// the currently largest client. Each client's list is returned sorted.
pub fn partition_dirichlet(
    labels: &[usize],
    num_classes: usize,
    num_clients: usize,
    alpha: f64,
    min_per_client: usize,
    seed: u64,
) -> Result<Partition> {
    if num_clients == 0 {
        return Err(Error::config("partition needs at least one client"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!(
            "dirichlet alpha must be finite and > 0, got {alpha}"
        )));
    }
    if min_per_client * num_clients > labels.len() {
        return Err(Error::config(format!(
            "cannot give {num_clients} clients at least {min_per_client} samples each from {} samples",
            labels.len()
        )));
    }
    let mut rng = seed::rng(seed, "dirichlet");
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::config(format!("dirichlet alpha: {e}")))?;
    let mut clients: Vec<Vec<usize>> = vec![Vec::new(); num_clients];

    for class in 0..num_classes {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let mut props: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = props.iter().sum();
        if total > 0.0 && total.is_finite() {
            props.iter_mut().for_each(|p| *p /= total);
        } else {
            // every gamma draw underflowed; the limit of a tiny alpha is a point mass
            props.iter_mut().for_each(|p| *p = 0.0);
            props[rng.random_range(0..num_clients)] = 1.0;
        }
        let n = members.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (k, p) in props.iter().enumerate() {
            cum += p;
            let end = if k + 1 == num_clients {
                n
            } else {
                ((cum * n as f64).round() as usize).clamp(start, n)
            };
            clients[k].extend_from_slice(&members[start..end]);
            start = end;
        }
    }

    while let Some(needy) = (0..num_clients).find(|&k| clients[k].len() < min_per_client) {
        let donor = (0..num_clients)
            .max_by_key(|&k| (clients[k].len(), std::cmp::Reverse(k)))
            .expect("at least one client");
        if clients[donor].len() <= min_per_client {
            return Err(Error::config("minimum-per-client constraint is infeasible"));
        }
        let moved = clients[donor].pop().expect("donor is non-empty");
        clients[needy].push(moved);
    }

    for c in &mut clients {
        c.sort_unstable();
    }
    Ok(Partition { clients })
}

/// Mean total-variation distance between each client's label distribution
/// and the pooled distribution over all assigned indices.
pub fn label_skew(partition: &Partition, labels: &[usize], num_classes: usize) -> f64 {
    let counts = partition.label_counts(labels, num_classes);
    let mut global = vec![0.0; num_classes];
    for c in &counts {
        for (g, &v) in global.iter_mut().zip(c) {
            *g += v as f64;
        }
    }
    let total: f64 = global.iter().sum();
    global.iter_mut().for_each(|g| *g /= total);
    let mut acc = 0.0;
    let mut n = 0;
    for c in &counts {
        let size: usize = c.iter().sum();
        if size == 0 {
            continue;
        }
        let tv: f64 = c
            .iter()
            .zip(&global)
            .map(|(&v, g)| (v as f64 / size as f64 - g).abs())
            .sum::<f64>()
            / 2.0;
        acc += tv;
        n += 1;
    }
    acc / n as f64
}
