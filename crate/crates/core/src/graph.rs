//! Connected components of the threshold graph `{i, j} ∈ E ⇔ ‖pᵢ − pⱼ‖ < γ`.
//!
//! Distances are computed on the fly during an iterative depth-first search,
//! so memory stays O(N) while time is O(N²·d). At N ≈ 10⁵ points of a few
//! hundred features that is minutes of CPU, not memory pressure.

use crate::numerics::dist_sq;

/// Component index per point, components numbered in order of their smallest
/// member. Returns `(labels, component_sizes)`.
pub fn threshold_components<P: AsRef<[f64]>>(points: &[P], gamma: f64) -> (Vec<usize>, Vec<usize>) {
    let n = points.len();
    let gamma_sq = gamma * gamma;
    let mut labels = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    // points not yet reached; scanning only these keeps each pair visited once
    let mut unvisited: Vec<usize> = (0..n).collect();
    let mut stack = Vec::new();

    while let Some(&seed) = unvisited.first() {
        let comp = sizes.len();
        // `remove` keeps ascending order, so seeds are always the smallest unvisited index
        unvisited.remove(0);
        labels[seed] = comp;
        let mut size = 1;
        stack.push(seed);
        while let Some(i) = stack.pop() {
            let pi = points[i].as_ref();
            let mut k = 0;
            while k < unvisited.len() {
                let j = unvisited[k];
                if dist_sq(pi, points[j].as_ref()) < gamma_sq {
                    labels[j] = comp;
                    size += 1;
                    stack.push(j);
                    unvisited.remove(k);
                } else {
                    k += 1;
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}
