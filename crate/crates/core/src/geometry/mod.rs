//! Geometric kernels over point sets.
//!
//! Host-side functions take plain coordinate slices; [`soft`] holds the
//! differentiable tensor versions used during training. All distances are
//! squared Euclidean, and every tie is broken toward the lowest index.

mod soft;

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

pub use soft::{chamfer_terms, soft_project, SoftProjection};

use crate::error::{Error, Result};

/// Default neighbor count for soft projection.
pub const DEFAULT_NEIGHBORS: usize = 8;

#[inline]
pub fn sq_dist(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    let dz = a[2] as f64 - b[2] as f64;
    dx * dx + dy * dy + dz * dz
}

/// The `k` nearest reference points of a query.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub indices: Vec<usize>,
    /// Squared distances, ascending.
    pub distances: Vec<f64>,
}

/// Exact k-nearest neighbors by full scan.
pub fn knn(query: &[f32; 3], reference: &[[f32; 3]], k: usize) -> Result<NeighborSet> {
    if k == 0 || k > reference.len() {
        return Err(Error::invalid(format!(
            "k = {k} must lie in [1, {}]",
            reference.len()
        )));
    }
    let mut order: Vec<(f64, usize)> = reference
        .iter()
        .enumerate()
        .map(|(i, p)| (sq_dist(query, p), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    Ok(NeighborSet {
        indices: order.iter().map(|&(_, i)| i).collect(),
        distances: order.iter().map(|&(d, _)| d).collect(),
    })
}

/// Farthest point sampling.
///
/// Starts at `start` and repeatedly adds the unselected point whose distance
/// to the selected set is largest.
pub fn fps(points: &[[f32; 3]], k: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("fps: k = {k} must lie in [1, {n}]")));
    }
    if start >= n {
        return Err(Error::invalid(format!("fps: start {start} out of range for {n} points")));
    }
    let mut selected = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut order = Vec::with_capacity(k);
    let mut current = start;
    loop {
        selected[current] = true;
        order.push(current);
        if order.len() == k {
            break;
        }
        let anchor = &points[current];
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let d = sq_dist(anchor, &points[i]);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best_d {
                best_d = nearest[i];
                best = Some(i);
            }
        }
        current = best.expect("k <= n leaves an unselected point");
    }
    Ok(order)
}

/// Chamfer terms between two point sets.
///
/// Returns `(avg, max)`: `avg` is the mean nearest squared distance from `a`
/// to `b` plus the same from `b` to `a`; `max` is the largest nearest squared
/// distance from a point of `a` to `b`.
pub fn chamfer(a: &[[f32; 3]], b: &[[f32; 3]]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer of an empty set"));
    }
    let mut a_to_b = vec![f64::INFINITY; a.len()];
    let mut b_to_a = vec![f64::INFINITY; b.len()];
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let d = sq_dist(p, q);
            a_to_b[i] = a_to_b[i].min(d);
            b_to_a[j] = b_to_a[j].min(d);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max = a_to_b.iter().copied().fold(0.0, f64::max);
    Ok((mean(&a_to_b) + mean(&b_to_a), max))
}

#[derive(PartialEq)]
struct Candidate {
    dist: f64,
    gen: usize,
    reference: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.gen.cmp(&other.gen))
            .then(self.reference.cmp(&other.reference))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Hard assignment of generated points to distinct reference indices.
///
/// Candidate pairs are claimed in ascending distance order; a generated
/// point whose nearest index is already taken falls back to its next-nearest
/// unused one.
pub fn match_hard(generated: &[[f32; 3]], reference: &[[f32; 3]]) -> Result<Vec<usize>> {
    let (r, n) = (generated.len(), reference.len());
    if r > n {
        return Err(Error::invalid(format!(
            "cannot match {r} generated points to {n} distinct reference points"
        )));
    }
    let ranked: Vec<Vec<(f64, usize)>> = generated
        .iter()
        .map(|g| {
            let mut row: Vec<(f64, usize)> =
                reference.iter().enumerate().map(|(j, p)| (sq_dist(g, p), j)).collect();
            row.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            row
        })
        .collect();

    let mut cursor = vec![0usize; r];
    let mut heap = BinaryHeap::with_capacity(r);
    for (gen, row) in ranked.iter().enumerate() {
        heap.push(Reverse(Candidate {
            dist: row[0].0,
            gen,
            reference: row[0].1,
        }));
    }
    let mut taken = vec![false; n];
    let mut assignment = vec![usize::MAX; r];
    while let Some(Reverse(c)) = heap.pop() {
        if !taken[c.reference] {
            taken[c.reference] = true;
            assignment[c.gen] = c.reference;
            continue;
        }
        let row = &ranked[c.gen];
        let mut next = cursor[c.gen] + 1;
        while taken[row[next].1] {
            next += 1;
        }
        cursor[c.gen] = next;
        heap.push(Reverse(Candidate {
            dist: row[next].0,
            gen: c.gen,
            reference: row[next].1,
        }));
    }
    Ok(assignment)
}
