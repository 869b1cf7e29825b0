use super::graph::Subgraph;

pub const DEFAULT_RESTART: f64 = 0.15;
pub const DEFAULT_TOL: f64 = 1e-8;
const MAX_ITERS: usize = 100_000;

/// Personalized PageRank with teleport to the subgraph center, by power
/// iteration until the L1 change drops below `tol`. Dangling nodes send
/// all their mass back to the center.
pub fn ppr_distribution(sg: &Subgraph, restart: f64, tol: f64) -> Vec<f64> {
    let n = sg.len();
    if n <= 1 {
        return vec![1.0; n];
    }
    let adj = sg.adjacency();
    let c = sg.center;
    let mut p = vec![0.0; n];
    p[c] = 1.0;
    let mut next = vec![0.0; n];
    for _ in 0..MAX_ITERS {
        next.iter_mut().for_each(|x| *x = 0.0);
        next[c] = restart;
        for (u, nbrs) in adj.iter().enumerate() {
            let mass = (1.0 - restart) * p[u];
            if nbrs.is_empty() {
                next[c] += mass;
            } else {
                let share = mass / nbrs.len() as f64;
                for &v in nbrs {
                    next[v] += share;
                }
            }
        }
        let diff: f64 = p.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut p, &mut next);
        if diff < tol {
            break;
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}
