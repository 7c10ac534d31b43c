//! Hierarchical navigable small-world graph for approximate
//! nearest-neighbor search over unit vectors.
//!
//! Insertion order and the level RNG are seeded, so index builds are
//! byte-reproducible. Similarity is the cosine (dot product on unit
//! vectors); internally the graph minimizes `-dot`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::EmbeddingVector;

const MAX_LEVEL_CAP: usize = 24;

/// A graph node with its distance to the query; ordered so the heap is
/// deterministic even for equal distances.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    node: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.node.cmp(&other.node))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct HnswGraph {
    pub(crate) m: usize,
    pub(crate) ef_construction: usize,
    pub(crate) entry: u32,
    pub(crate) max_level: usize,
    /// `neighbors[node][level]` is the adjacency list of `node` at `level`.
    pub(crate) neighbors: Vec<Vec<Vec<u32>>>,
}

fn dist(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    -a.cosine(b)
}

impl HnswGraph {
    fn m_max(&self, level: usize) -> usize {
        if level == 0 {
            self.m * 2
        } else {
            self.m
        }
    }

    pub(crate) fn build(
        vectors: &[EmbeddingVector],
        m: usize,
        ef_construction: usize,
        seed: u64,
    ) -> HnswGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ml = 1.0 / (m as f64).ln();
        let levels: Vec<usize> = (0..vectors.len())
            .map(|_| {
                let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
                ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL_CAP)
            })
            .collect();

        let mut graph = HnswGraph {
            m,
            ef_construction,
            entry: 0,
            max_level: 0,
            neighbors: levels.iter().map(|&l| vec![Vec::new(); l + 1]).collect(),
        };
        for (i, level) in levels.iter().copied().enumerate() {
            graph.insert(i as u32, level, vectors);
        }
        graph
    }

    fn insert(&mut self, node: u32, level: usize, vectors: &[EmbeddingVector]) {
        if node == 0 {
            self.entry = 0;
            self.max_level = level;
            return;
        }
        let q = &vectors[node as usize];
        let mut ep = self.entry;
        // Greedy descent through layers above the node's level.
        let mut lc = self.max_level;
        while lc > level {
            ep = self.greedy_step(q, ep, lc, vectors);
            lc -= 1;
        }
        let mut eps = vec![ep];
        let top = level.min(self.max_level);
        for lc in (0..=top).rev() {
            let found = self.search_layer(q, &eps, self.ef_construction, lc, vectors);
            let selected: Vec<u32> = found.iter().take(self.m).map(|c| c.node).collect();
            for &nb in &selected {
                self.neighbors[node as usize][lc].push(nb);
                self.neighbors[nb as usize][lc].push(node);
                let cap = self.m_max(lc);
                if self.neighbors[nb as usize][lc].len() > cap {
                    self.prune(nb, lc, cap, vectors);
                }
            }
            eps = found.iter().map(|c| c.node).collect();
            if eps.is_empty() {
                eps = vec![ep];
            }
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = node;
        }
    }

    /// Keeps the `cap` closest neighbors of `node` at `level`.
    fn prune(&mut self, node: u32, level: usize, cap: usize, vectors: &[EmbeddingVector]) {
        let base = &vectors[node as usize];
        let mut list: Vec<Candidate> = self.neighbors[node as usize][level]
            .iter()
            .map(|&nb| Candidate {
                dist: dist(base, &vectors[nb as usize]),
                node: nb,
            })
            .collect();
        list.sort();
        list.truncate(cap);
        self.neighbors[node as usize][level] = list.into_iter().map(|c| c.node).collect();
    }

    fn greedy_step(
        &self,
        q: &EmbeddingVector,
        mut current: u32,
        level: usize,
        vectors: &[EmbeddingVector],
    ) -> u32 {
        let mut best = dist(q, &vectors[current as usize]);
        loop {
            let mut improved = false;
            for &nb in &self.neighbors[current as usize][level] {
                let d = dist(q, &vectors[nb as usize]);
                if d < best {
                    best = d;
                    current = nb;
                    improved = true;
                }
            }
            if !improved {
                return current;
            }
        }
    }

    /// Beam search at one layer; returns up to `ef` candidates sorted by
    /// ascending distance.
    fn search_layer(
        &self,
        q: &EmbeddingVector,
        entry_points: &[u32],
        ef: usize,
        level: usize,
        vectors: &[EmbeddingVector],
    ) -> Vec<Candidate> {
        let mut visited = vec![false; vectors.len()];
        // Min-heap of frontier candidates, max-heap of current best set.
        let mut frontier: BinaryHeap<std::cmp::Reverse<Candidate>> = BinaryHeap::new();
        let mut best: BinaryHeap<Candidate> = BinaryHeap::new();
        for &ep in entry_points {
            if visited[ep as usize] {
                continue;
            }
            visited[ep as usize] = true;
            let c = Candidate {
                dist: dist(q, &vectors[ep as usize]),
                node: ep,
            };
            frontier.push(std::cmp::Reverse(c));
            best.push(c);
        }
        while let Some(std::cmp::Reverse(current)) = frontier.pop() {
            let worst = best.peek().map_or(f64::INFINITY, |c| c.dist);
            if current.dist > worst && best.len() >= ef {
                break;
            }
            if (current.node as usize) < self.neighbors.len()
                && level < self.neighbors[current.node as usize].len()
            {
                for &nb in &self.neighbors[current.node as usize][level] {
                    if visited[nb as usize] {
                        continue;
                    }
                    visited[nb as usize] = true;
                    let d = dist(q, &vectors[nb as usize]);
                    let worst = best.peek().map_or(f64::INFINITY, |c| c.dist);
                    if best.len() < ef || d < worst {
                        let c = Candidate { dist: d, node: nb };
                        frontier.push(std::cmp::Reverse(c));
                        best.push(c);
                        if best.len() > ef {
                            best.pop();
                        }
                    }
                }
            }
        }
        let mut out: Vec<Candidate> = best.into_iter().collect();
        out.sort();
        out
    }

    /// Approximate top-`n` nearest nodes; returns `(node, cosine)` pairs.
    pub(crate) fn search(
        &self,
        q: &EmbeddingVector,
        vectors: &[EmbeddingVector],
        ef: usize,
        n: usize,
    ) -> Vec<(u32, f64)> {
        if vectors.is_empty() {
            return Vec::new();
        }
        let mut ep = self.entry;
        for lc in (1..=self.max_level).rev() {
            ep = self.greedy_step(q, ep, lc, vectors);
        }
        let found = self.search_layer(q, &[ep], ef.max(n), 0, vectors);
        found
            .into_iter()
            .take(n)
            .map(|c| (c.node, -c.dist))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let raw: Vec<f32> = (0..dim).map(|_| rng.random::<f32>() - 0.5).collect();
                EmbeddingVector::unit(raw).unwrap()
            })
            .collect()
    }

    fn exact_top_n(q: &EmbeddingVector, vectors: &[EmbeddingVector], n: usize) -> Vec<u32> {
        let mut scored: Vec<(u32, f64)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i as u32, q.cosine(v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.into_iter().take(n).map(|(i, _)| i).collect()
    }

    #[test]
    fn build_is_deterministic() {
        let vectors = random_unit_vectors(200, 16, 11);
        let a = HnswGraph::build(&vectors, 16, 100, 42);
        let b = HnswGraph::build(&vectors, 16, 100, 42);
        assert_eq!(a.entry, b.entry);
        assert_eq!(a.neighbors, b.neighbors);
    }

    #[test]
    fn recall_on_small_corpus() {
        let vectors = random_unit_vectors(1000, 32, 5);
        let graph = HnswGraph::build(&vectors, 16, 200, 7);
        let queries = random_unit_vectors(20, 32, 99);
        let mut hits = 0usize;
        let mut total = 0usize;
        for q in &queries {
            let exact: std::collections::HashSet<u32> =
                exact_top_n(q, &vectors, 8).into_iter().collect();
            let approx = graph.search(q, &vectors, 128, 8);
            hits += approx.iter().filter(|(i, _)| exact.contains(i)).count();
            total += exact.len();
        }
        let recall = hits as f64 / total as f64;
        assert!(recall >= 0.9, "recall {recall} too low");
    }

    #[test]
    fn single_node_graph() {
        let vectors = random_unit_vectors(1, 8, 0);
        let graph = HnswGraph::build(&vectors, 16, 200, 1);
        let got = graph.search(&vectors[0], &vectors, 128, 4);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, 0);
        assert!((got[0].1 - 1.0).abs() < 1e-6);
    }
}
