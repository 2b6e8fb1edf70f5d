//! Grouping systems by how similarly they correct.
//!
//! For every sentence the systems' corrected variants form a small document
//! collection; each is turned into a token TF-IDF vector (smoothed idf
//! `ln((1 + N) / (1 + df)) + 1`, L2-normalized) and compared by cosine.
//! Per-sentence similarities are averaged into one matrix, systems are
//! clustered with average linkage on `1 - similarity`, and the dendrogram is
//! cut at a distance threshold.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{check_all_aligned, SystemOutput, TokenSentence};
use crate::error::{Error, Result};

/// Symmetric, unit-diagonal similarity matrix with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimilarityMatrix {
    pub systems: Vec<String>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn distances(&self) -> Vec<f64> {
        self.values.iter().map(|s| 1.0 - s).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("system");
        for name in &self.systems {
            out.push('\t');
            out.push_str(name);
        }
        out.push('\n');
        for (i, name) in self.systems.iter().enumerate() {
            out.push_str(name);
            for j in 0..self.len() {
                let _ = write!(out, "\t{:.6}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise cosine similarities (row-major, `n * n`) between the TF-IDF
/// vectors of one sentence's variants.
pub fn sentence_similarities(variants: &[&TokenSentence]) -> Vec<f64> {
    let n = variants.len();
    let mut df: HashMap<&str, usize> = HashMap::new();
    let tfs: Vec<HashMap<&str, f64>> = variants
        .iter()
        .map(|s| {
            let mut tf: HashMap<&str, f64> = HashMap::new();
            for tok in s.tokens() {
                *tf.entry(tok.as_str()).or_default() += 1.0;
            }
            for term in tf.keys() {
                *df.entry(term).or_default() += 1;
            }
            tf
        })
        .collect();

    let docs = n as f64;
    let vectors: Vec<HashMap<&str, f64>> = tfs
        .into_iter()
        .map(|tf| {
            let mut v: HashMap<&str, f64> = tf
                .into_iter()
                .map(|(t, c)| (t, c * (((1.0 + docs) / (1.0 + df[t] as f64)).ln() + 1.0)))
                .collect();
            let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.values_mut().for_each(|x| *x /= norm);
            }
            v
        })
        .collect();

    let mut sims = vec![0.0; n * n];
    for i in 0..n {
        sims[i * n + i] = 1.0;
        for j in i + 1..n {
            let sim = if variants[i] == variants[j] {
                1.0
            } else {
                let (small, large) = if vectors[i].len() <= vectors[j].len() {
                    (&vectors[i], &vectors[j])
                } else {
                    (&vectors[j], &vectors[i])
                };
                small
                    .iter()
                    .filter_map(|(t, x)| large.get(t).map(|y| x * y))
                    .sum::<f64>()
                    .clamp(0.0, 1.0)
            };
            sims[i * n + j] = sim;
            sims[j * n + i] = sim;
        }
    }
    sims
}

/// Mean of the per-sentence similarity matrices.
pub fn similarity_matrix(outputs: &[SystemOutput]) -> Result<SimilarityMatrix> {
    if outputs.len() < 2 {
        return Err(Error::Validation(format!(
            "clustering needs at least 2 systems, got {}",
            outputs.len()
        )));
    }
    let n_sent = outputs[0].len();
    check_all_aligned(outputs, n_sent)?;
    if n_sent == 0 {
        return Err(Error::Validation(
            "clustering needs at least one sentence".into(),
        ));
    }
    let n = outputs.len();
    let sum = (0..n_sent)
        .into_par_iter()
        .map(|i| {
            let variants: Vec<&TokenSentence> = outputs.iter().map(|o| &o.sentences[i]).collect();
            sentence_similarities(&variants)
        })
        .reduce(
            || vec![0.0; n * n],
            |mut acc, m| {
                acc.iter_mut().zip(m).for_each(|(a, b)| *a += b);
                acc
            },
        );
    let mut values: Vec<f64> = sum
        .into_iter()
        .map(|x| (x / n_sent as f64).clamp(0.0, 1.0))
        .collect();
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            // symmetric by construction; average the two halves anyway so
            // summation order cannot leave a last-bit difference
            let v = 0.5 * (values[i * n + j] + values[j * n + i]);
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(SimilarityMatrix {
        systems: outputs.iter().map(|o| o.name.clone()).collect(),
        values,
    })
}

/// One agglomeration step. Leaves are `0..n`; the cluster created by merge
/// `k` has id `n + k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

/// Average-linkage agglomerative clustering over a row-major `n * n`
/// distance matrix. Equal distances merge the pair that comes first in
/// creation order.
pub fn average_linkage(distances: &[f64], n: usize) -> Vec<Merge> {
    assert_eq!(distances.len(), n * n, "distance matrix must be n * n");
    // active clusters: (id, size); dist[a][b] over positions in `active`
    let mut active: Vec<(usize, usize)> = (0..n).map(|i| (i, 1)).collect();
    let mut dist: Vec<Vec<f64>> = (0..n)
        .map(|i| distances[i * n..(i + 1) * n].to_vec())
        .collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    while active.len() > 1 {
        let (mut bi, mut bj, mut bd) = (0, 1, f64::INFINITY);
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                if dist[i][j] < bd {
                    (bi, bj, bd) = (i, j, dist[i][j]);
                }
            }
        }
        let (id_i, size_i) = active[bi];
        let (id_j, size_j) = active[bj];
        let size = size_i + size_j;
        merges.push(Merge {
            left: id_i.min(id_j),
            right: id_i.max(id_j),
            distance: bd,
            size,
        });

        // Lance-Williams update for average linkage, stored in slot bi.
        for k in 0..active.len() {
            if k == bi || k == bj {
                continue;
            }
            let d = (size_i as f64 * dist[bi][k] + size_j as f64 * dist[bj][k]) / size as f64;
            dist[bi][k] = d;
            dist[k][bi] = d;
        }
        active[bi] = (n + merges.len() - 1, size);
        active.remove(bj);
        dist.remove(bj);
        for row in &mut dist {
            row.remove(bj);
        }
    }
    merges
}

/// Flat cluster label per leaf: leaves joined by merges at distance
/// `<= threshold` share a label. Labels are numbered by their smallest leaf.
pub fn cut_dendrogram(merges: &[Merge], n: usize, threshold: f64) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n + merges.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (k, m) in merges.iter().enumerate() {
        if m.distance <= threshold {
            let node = n + k;
            let (a, b) = (find(&mut parent, m.left), find(&mut parent, m.right));
            parent[a] = node;
            parent[b] = node;
        }
    }
    let mut labels = vec![usize::MAX; n];
    let mut root_label: HashMap<usize, usize> = HashMap::new();
    for (leaf, label) in labels.iter_mut().enumerate() {
        let root = find(&mut parent, leaf);
        let next = root_label.len();
        *label = *root_label.entry(root).or_insert(next);
    }
    labels
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cluster {
    pub id: usize,
    /// System indices, ascending.
    pub members: Vec<usize>,
    pub representative: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Clustering {
    pub matrix: SimilarityMatrix,
    pub merges: Vec<Merge>,
    pub threshold: f64,
    pub clusters: Vec<Cluster>,
}

impl Clustering {
    pub fn representatives(&self) -> Vec<&str> {
        self.clusters
            .iter()
            .map(|c| self.matrix.systems[c.representative].as_str())
            .collect()
    }

    /// `system, cluster, representative` rows in system order.
    pub fn report_tsv(&self) -> String {
        let mut cluster_of = vec![(0, false); self.matrix.len()];
        for c in &self.clusters {
            for &m in &c.members {
                cluster_of[m] = (c.id, m == c.representative);
            }
        }
        let mut out = String::from("system\tcluster\trepresentative\n");
        for (name, (cluster, rep)) in self.matrix.systems.iter().zip(cluster_of) {
            let _ = writeln!(out, "{name}\t{cluster}\t{}", u8::from(rep));
        }
        out
    }

    pub fn dendrogram_tsv(&self) -> String {
        let mut out = String::from("step\tleft\tright\tdistance\tsize\n");
        for (k, m) in self.merges.iter().enumerate() {
            let _ = writeln!(
                out,
                "{k}\t{}\t{}\t{:.6}\t{}",
                m.left, m.right, m.distance, m.size
            );
        }
        out
    }
}

/// Clusters systems and picks, per cluster, the member with the highest mean
/// similarity to the other members (earliest system on ties).
pub fn cluster_systems(outputs: &[SystemOutput], threshold: f64) -> Result<Clustering> {
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(Error::Validation(format!(
            "bad clustering threshold {threshold}"
        )));
    }
    let matrix = similarity_matrix(outputs)?;
    let n = matrix.len();
    let merges = average_linkage(&matrix.distances(), n);
    let labels = cut_dendrogram(&merges, n, threshold);
    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    let clusters = (0..n_clusters)
        .map(|id| {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == id).collect();
            let mean_sim = |i: usize| {
                if members.len() == 1 {
                    return 1.0;
                }
                members
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| matrix.get(i, j))
                    .sum::<f64>()
                    / (members.len() - 1) as f64
            };
            let mut representative = members[0];
            let mut best = mean_sim(representative);
            for &m in &members[1..] {
                let v = mean_sim(m);
                if v > best {
                    (representative, best) = (m, v);
                }
            }
            Cluster {
                id,
                members,
                representative,
            }
        })
        .collect();
    Ok(Clustering {
        matrix,
        merges,
        threshold,
        clusters,
    })
}
