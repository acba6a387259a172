//! Balanced bisection fallback with greedy Kernighan-Lin-style refinement
//! and a connectivity repair pass.
//!
//! Used when community detection yields a split unusable for the label tree
//! (a single community, more communities than the branching factor allows,
//! or a disconnected community). Input must be connected; both returned
//! halves are non-empty, disjoint, and induce connected subgraphs.

/// Bisects nodes `0..n` of a connected graph. Returns sorted halves.
pub(crate) fn bisect(adj: &[Vec<(usize, f64)>]) -> (Vec<usize>, Vec<usize>) {
    let n = adj.len();
    debug_assert!(n >= 2);
    let target = n.div_ceil(2);

    // Initial split: BFS from node 0 in ascending neighbor order; the first
    // half of the visit order becomes side A. BFS keeps A connected.
    let mut side = vec![false; n]; // false = A, true = B
    let order = bfs_order(adj, 0);
    for &v in order.iter().skip(target) {
        side[v] = true;
    }

    refine(adj, &mut side);
    repair_connectivity(adj, &mut side);

    let a: Vec<usize> = (0..n).filter(|&v| !side[v]).collect();
    let b: Vec<usize> = (0..n).filter(|&v| side[v]).collect();
    debug_assert!(!a.is_empty() && !b.is_empty());
    (a, b)
}

fn bfs_order(adj: &[Vec<(usize, f64)>], start: usize) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::new();
    visited[start] = true;
    queue.push_back(start);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &(u, _) in &adj[v] {
            if !visited[u] {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    debug_assert_eq!(order.len(), n, "bisection input must be connected");
    order
}

/// Greedy single-node moves: move the node with the largest positive
/// external-minus-internal weight from the larger side, keeping the size
/// difference at most one. Deterministic: ties go to the lower node index.
fn refine(adj: &[Vec<(usize, f64)>], side: &mut [bool]) {
    let n = adj.len();
    let max_moves = 2 * n;
    for _ in 0..max_moves {
        let size_b = side.iter().filter(|&&s| s).count();
        let size_a = n - size_b;
        if size_a.abs_diff(size_b) == 0 && n % 2 == 0 {
            // perfectly balanced: a single move would unbalance by 2
            break;
        }
        let from_b = size_b > size_a;
        let mut best: Option<(f64, usize)> = None;
        for v in 0..n {
            if side[v] != from_b {
                continue;
            }
            let mut ext = 0.0;
            let mut int = 0.0;
            for &(u, w) in &adj[v] {
                if side[u] == side[v] {
                    int += w;
                } else {
                    ext += w;
                }
            }
            let gain = ext - int;
            if gain > 1e-12 && best.map_or(true, |(bg, _)| gain > bg + 1e-12) {
                best = Some((gain, v));
            }
        }
        match best {
            Some((_, v)) => side[v] = !side[v],
            None => break,
        }
    }
}

/// Connectivity enforcement: each side keeps its largest connected piece;
/// every other piece migrates to the opposite side, where its external edges
/// attach it to an already-connected region. Two passes (A then B) suffice.
fn repair_connectivity(adj: &[Vec<(usize, f64)>], side: &mut [bool]) {
    for target_side in [false, true] {
        let members: Vec<usize> = (0..adj.len()).filter(|&v| side[v] == target_side).collect();
        if members.is_empty() {
            continue;
        }
        let pieces = connected_pieces(adj, &members, side);
        if pieces.len() <= 1 {
            continue;
        }
        // keep the largest piece; ties keep the piece with the smallest node
        let keep = pieces
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
            .map(|(i, _)| i)
            .unwrap();
        for (i, piece) in pieces.iter().enumerate() {
            if i != keep {
                for &v in piece {
                    side[v] = !target_side;
                }
            }
        }
    }
}

/// Maximal connected pieces of `members` in the subgraph induced by the
/// current side assignment, ordered by smallest node.
fn connected_pieces(
    adj: &[Vec<(usize, f64)>],
    members: &[usize],
    side: &[bool],
) -> Vec<Vec<usize>> {
    let mut seen = std::collections::BTreeSet::new();
    let mut pieces = Vec::new();
    for &start in members {
        if seen.contains(&start) {
            continue;
        }
        let target = side[start];
        let mut piece = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        seen.insert(start);
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            piece.push(v);
            for &(u, _) in &adj[v] {
                if side[u] == target && seen.insert(u) {
                    queue.push_back(u);
                }
            }
        }
        piece.sort_unstable();
        pieces.push(piece);
    }
    pieces
}
