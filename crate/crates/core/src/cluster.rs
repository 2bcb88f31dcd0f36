//! K-Means with k-means++ seeding and best-of-restarts selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    pub k: usize,
    pub d: usize,
    /// `k × d`, row-major.
    pub centroids: Vec<f32>,
    pub inertia: f64,
    pub seed: u64,
    /// Inertia after each Lloyd iteration of the selected restart, including
    /// the iterations that follow a single-point refinement.
    pub trace: Vec<f64>,
}

impl CentroidSet {
    pub fn row(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.d..(j + 1) * self.d]
    }

    pub fn assign(&self, z: &[f32]) -> usize {
        nearest(z, &self.centroids, self.d).0
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2)).sum()
}

/// Index and squared distance of the nearest row of `table` (`· × d`); ties
/// go to the smallest index.
pub fn nearest(z: &[f32], table: &[f32], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, row) in table.chunks_exact(d).enumerate() {
        let dist = sq_dist(z, row);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, later ones with probability
/// proportional to the squared distance to the nearest chosen centre.
pub fn kmeans_pp(data: &[f32], d: usize, k: usize, rng: &mut impl Rng) -> Vec<f32> {
    let n = data.len() / d;
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut centres = row(rng.random_range(0..n)).to_vec();
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centres)).collect();
    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(row(i), &c));
        }
        centres.extend_from_slice(&c);
    }
    centres
}

fn lloyd(data: &[f32], d: usize, mut centres: Vec<f32>, max_iters: usize) -> (Vec<f32>, f64, Vec<f64>) {
    let n = data.len() / d;
    let k = centres.len() / d;
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut assign = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut dists = vec![0f64; n];
        for i in 0..n {
            let (j, dist) = nearest(row(i), &centres, d);
            changed |= assign[i] != j;
            assign[i] = j;
            dists[i] = dist;
        }
        trace.push(dists.iter().sum());
        if !changed {
            break;
        }
        let mut sums = vec![0f64; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, &v) in sums[assign[i] * d..][..d].iter_mut().zip(row(i)) {
                *s += f64::from(v);
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Empty cluster: take over the point farthest from its centre.
                let far = (0..n).max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a))).expect("n ≥ k");
                centres[j * d..(j + 1) * d].copy_from_slice(row(far));
                dists[far] = 0.0;
                continue;
            }
            for (c, s) in centres[j * d..(j + 1) * d].iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                *c = (*s / counts[j] as f64) as f32;
            }
        }
    }
    let inertia = (0..n).map(|i| nearest(row(i), &centres, d).1).sum();
    (centres, inertia, trace)
}

/// Single-point moves from a Lloyd fixpoint: a point leaves its cluster when
/// the exact change in inertia, accounting for both centroid shifts, is
/// negative. Escapes some Lloyd local minima. Returns the moved-to centres,
/// or `None` if no move helps.
fn hartigan(data: &[f32], d: usize, centres: &[f32], max_passes: usize) -> Option<Vec<f32>> {
    let n = data.len() / d;
    let k = centres.len() / d;
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut assign: Vec<usize> = (0..n).map(|i| nearest(row(i), centres, d).0).collect();
    let mut counts = vec![0usize; k];
    let mut sums = vec![0f64; k * d];
    for (i, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        for (s, &v) in sums[a * d..(a + 1) * d].iter_mut().zip(row(i)) {
            *s += f64::from(v);
        }
    }
    let dist = |i: usize, j: usize, sums: &[f64], counts: &[usize]| -> f64 {
        let c = counts[j] as f64;
        row(i).iter().zip(&sums[j * d..(j + 1) * d]).map(|(&x, &s)| (f64::from(x) - s / c).powi(2)).sum()
    };
    let mut moved = false;
    for _ in 0..max_passes.max(1) {
        let mut any = false;
        for i in 0..n {
            let a = assign[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let leave = na / (na - 1.0) * dist(i, a, &sums, &counts);
            let mut best = (a, 0.0);
            for b in (0..k).filter(|&b| b != a && counts[b] > 0) {
                let nb = counts[b] as f64;
                let delta = nb / (nb + 1.0) * dist(i, b, &sums, &counts) - leave;
                if delta < best.1 - 1e-12 * leave.max(1.0) {
                    best = (b, delta);
                }
            }
            let b = best.0;
            if b != a {
                for (t, &v) in row(i).iter().enumerate() {
                    sums[a * d + t] -= f64::from(v);
                    sums[b * d + t] += f64::from(v);
                }
                counts[a] -= 1;
                counts[b] += 1;
                assign[i] = b;
                any = true;
            }
        }
        moved |= any;
        if !any {
            break;
        }
    }
    if !moved {
        return None;
    }
    let mut out = centres.to_vec();
    for j in (0..k).filter(|&j| counts[j] > 0) {
        for t in 0..d {
            out[j * d + t] = (sums[j * d + t] / counts[j] as f64) as f32;
        }
    }
    Some(out)
}

/// Clusters `n = data.len() / d` points into `k` groups, keeping the restart
/// with the lowest inertia.
pub fn kmeans(data: &[f32], d: usize, k: usize, max_iters: usize, restarts: usize, seed: u64) -> Result<CentroidSet> {
    if d == 0 || data.len() % d != 0 {
        return Err(Error::Usage("data length is not a multiple of the dimension".into()));
    }
    let n = data.len() / d;
    if k == 0 || n < k {
        return Err(Error::Usage(format!("k-means needs at least k = {k} points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<CentroidSet> = None;
    for _ in 0..restarts.max(1) {
        let init = kmeans_pp(data, d, k, &mut rng);
        let (mut centroids, mut inertia, mut trace) = lloyd(data, d, init, max_iters);
        if let Some(refined) = hartigan(data, d, &centroids, max_iters) {
            let (c, i, t) = lloyd(data, d, refined, max_iters);
            if i < inertia {
                (centroids, inertia) = (c, i);
                trace.extend(t);
            }
        }
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(CentroidSet { k, d, centroids, inertia, seed, trace });
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_equals_n_reproduces_points() {
        let data = [0.0f32, 0.0, 1.0, 0.0, 5.0, 5.0];
        let c = kmeans(&data, 2, 3, 20, 3, 1).unwrap();
        assert_eq!(c.inertia, 0.0);
        let mut rows: Vec<_> = (0..3).map(|j| c.row(j).to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0]]);
    }

    #[test]
    fn too_few_points_is_usage_error() {
        assert!(matches!(kmeans(&[0.0, 1.0], 1, 3, 10, 1, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn ties_go_to_smallest_index() {
        assert_eq!(nearest(&[0.5], &[0.0, 1.0], 1).0, 0);
        assert_eq!(nearest(&[3.0, 4.0], &[0.0, 0.0, 3.0, 4.0], 2).0, 1);
    }
}
