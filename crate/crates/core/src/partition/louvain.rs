//! Seeded, order-canonicalized Louvain community detection.
//!
//! Works on a local adjacency list indexed 0..n. Node visit order is drawn
//! from the caller's RNG once per level; all tie-breaks are deterministic,
//! so identical (graph, seed, resolution) inputs give identical communities.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

const GAIN_EPS: f64 = 1e-12;
const MAX_PASSES: usize = 200;

/// Adjacency with optional self-loop weight per node (used by aggregated
/// levels; input graphs have none).
struct Level {
    /// neighbors without self entries
    adj: Vec<Vec<(usize, f64)>>,
    self_weight: Vec<f64>,
}

impl Level {
    fn n(&self) -> usize {
        self.adj.len()
    }

    /// Weighted degree: incident edge weights plus twice the self-loop.
    fn degrees(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                self.adj[i].iter().map(|&(_, w)| w).sum::<f64>() + 2.0 * self.self_weight[i]
            })
            .collect()
    }
}

/// Final communities over the original nodes, each sorted ascending, ordered
/// by their minimum node.
pub(crate) fn louvain_communities(
    adj: &[Vec<(usize, f64)>],
    resolution: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut level = Level {
        adj: adj.to_vec(),
        self_weight: vec![0.0; n],
    };
    // membership[node] = community over original nodes
    let mut membership: Vec<usize> = (0..n).collect();

    loop {
        let (assignment, moved) = one_level(&level, resolution, rng);
        let (renumbered, count) = renumber(&assignment);
        if !moved || count == level.n() {
            // final assignment at this level maps supernodes to communities
            for m in membership.iter_mut() {
                *m = renumbered[*m];
            }
            break;
        }
        for m in membership.iter_mut() {
            *m = renumbered[*m];
        }
        level = aggregate(&level, &renumbered, count);
    }

    let count = membership.iter().copied().max().map_or(0, |m| m + 1);
    let mut communities: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (node, &c) in membership.iter().enumerate() {
        communities[c].push(node);
    }
    communities.retain(|c| !c.is_empty());
    communities.sort_by_key(|c| c[0]);
    communities
}

/// One local-move phase. Returns (community per node, any node moved).
fn one_level(level: &Level, resolution: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
    let n = level.n();
    let degrees = level.degrees();
    let m2: f64 = degrees.iter().sum(); // 2m
    let mut community: Vec<usize> = (0..n).collect();
    let mut tot: Vec<f64> = degrees.clone();

    if m2 == 0.0 {
        return (community, false);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut any_moved = false;
    for _ in 0..MAX_PASSES {
        let mut moves = 0usize;
        for &node in &order {
            let old = community[node];
            tot[old] -= degrees[node];

            // weight from node to each adjacent community
            let mut links: Vec<(usize, f64)> = Vec::with_capacity(level.adj[node].len());
            for &(nb, w) in &level.adj[node] {
                let c = community[nb];
                match links.iter_mut().find(|(lc, _)| *lc == c) {
                    Some((_, lw)) => *lw += w,
                    None => links.push((c, w)),
                }
            }
            let link_to = |c: usize| links.iter().find(|(lc, _)| *lc == c).map_or(0.0, |&(_, w)| w);

            let gain = |c: usize, w_ic: f64| w_ic - resolution * degrees[node] * tot[c] / m2;
            let stay_gain = gain(old, link_to(old));
            // move only on strict improvement over staying; among near-equal
            // candidate moves prefer the smallest community label
            let mut best_c = old;
            let mut best_gain = stay_gain;
            for &(c, w_ic) in &links {
                if c == old {
                    continue;
                }
                let g = gain(c, w_ic);
                let improves = g > best_gain + GAIN_EPS;
                let ties_smaller = best_c != old && (g - best_gain).abs() <= GAIN_EPS && c < best_c;
                if improves || ties_smaller {
                    best_c = c;
                    best_gain = g;
                }
            }

            tot[best_c] += degrees[node];
            if best_c != old {
                community[node] = best_c;
                moves += 1;
                any_moved = true;
            }
        }
        if moves == 0 {
            break;
        }
    }
    (community, any_moved)
}

/// Renumbers community labels to 0..count in order of first appearance by
/// node index.
fn renumber(assignment: &[usize]) -> (Vec<usize>, usize) {
    let mut map: Vec<Option<usize>> = vec![None; assignment.len()];
    let mut next = 0usize;
    let mut out = Vec::with_capacity(assignment.len());
    for &c in assignment {
        let label = match map[c] {
            Some(l) => l,
            None => {
                let l = next;
                map[c] = Some(l);
                next += 1;
                l
            }
        };
        out.push(label);
    }
    (out, next)
}

/// Collapses communities into supernodes; intra-community weight becomes a
/// self-loop.
fn aggregate(level: &Level, renumbered: &[usize], count: usize) -> Level {
    let mut self_weight = vec![0.0; count];
    let mut cross: std::collections::BTreeMap<(usize, usize), f64> = std::collections::BTreeMap::new();
    for i in 0..level.n() {
        self_weight[renumbered[i]] += level.self_weight[i];
        for &(j, w) in &level.adj[i] {
            if j < i {
                continue; // each undirected edge once
            }
            let (ci, cj) = (renumbered[i], renumbered[j]);
            if ci == cj {
                self_weight[ci] += w;
            } else {
                let k = if ci < cj { (ci, cj) } else { (cj, ci) };
                *cross.entry(k).or_insert(0.0) += w;
            }
        }
    }
    let mut adj = vec![Vec::new(); count];
    for ((a, b), w) in cross {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    for list in &mut adj {
        list.sort_by_key(|&(i, _)| i);
    }
    Level { adj, self_weight }
}

/// Modularity of a node partition at a given resolution (exposed for tests
/// and diagnostics).
pub fn modularity(adj: &[Vec<(usize, f64)>], communities: &[Vec<usize>], resolution: f64) -> f64 {
    let n = adj.len();
    let mut membership = vec![usize::MAX; n];
    for (ci, c) in communities.iter().enumerate() {
        for &node in c {
            membership[node] = ci;
        }
    }
    let degrees: Vec<f64> = (0..n)
        .map(|i| adj[i].iter().map(|&(_, w)| w).sum::<f64>())
        .collect();
    let m2: f64 = degrees.iter().sum();
    if m2 == 0.0 {
        return 0.0;
    }
    let mut intra = vec![0.0; communities.len()];
    for i in 0..n {
        for &(j, w) in &adj[i] {
            if j > i && membership[i] == membership[j] {
                intra[membership[i]] += w;
            }
        }
    }
    let mut q = 0.0;
    for (ci, c) in communities.iter().enumerate() {
        let tot: f64 = c.iter().map(|&i| degrees[i]).sum();
        q += 2.0 * intra[ci] / m2 - resolution * (tot / m2).powi(2);
    }
    q
}
