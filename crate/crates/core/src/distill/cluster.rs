//! Point-set primitives over row-major `rows × dim` f64 buffers: k-means,
//! farthest point sampling and exact k-nearest neighbours.

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::rng::Rng;

pub const KMEANS_MAX_ITERATIONS: usize = 50;
pub const KMEANS_REL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    /// k × dim
    pub centers: Vec<f64>,
    pub labels: Vec<usize>,
    /// Sum of squared distances to the assigned centre.
    pub inertia: f64,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_rows(points: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "{} values do not form rows of width {dim}",
            points.len()
        )));
    }
    Ok(points.len() / dim)
}

/// k-means++ seeding: the first centre uniformly, each further one with
/// probability proportional to the squared distance to the nearest chosen centre.
pub fn kmeans_pp_seeds(points: &[f64], dim: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let n = check_rows(points, dim)?;
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "cannot pick {k} clusters from {n} points"
        )));
    }
    let mut seeds = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| dist2(&points[i * dim..(i + 1) * dim], row(points, dim, seeds[0])))
        .collect();
    while seeds.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if *d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| d2[i] > 0.0).expect("positive total"))
        } else {
            (0..n).find(|i| !seeds.contains(i)).expect("k ≤ n")
        };
        seeds.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist2(row(points, dim, i), row(points, dim, next)));
        }
    }
    Ok(seeds)
}

fn row(points: &[f64], dim: usize, i: usize) -> &[f64] {
    &points[i * dim..(i + 1) * dim]
}

fn assign(points: &[f64], dim: usize, centers: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let k = centers.len() / dim;
    points
        .par_chunks(dim)
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let d = dist2(p, row(centers, dim, c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

/// Lloyd iterations from the given centres until the relative inertia
/// decrease falls below `rel_tol` or `max_iterations` updates have run.
/// An emptied cluster is moved to the point farthest from its own centre.
pub fn lloyd(
    points: &[f64],
    dim: usize,
    init: &[f64],
    max_iterations: usize,
    rel_tol: f64,
) -> Result<KMeans> {
    let n = check_rows(points, dim)?;
    let k = check_rows(init, dim)?;
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "cannot form {k} clusters from {n} points"
        )));
    }
    let mut centers = init.to_vec();
    let (mut labels, mut d2) = assign(points, dim, &centers);
    let mut inertia: f64 = d2.iter().sum();
    let mut iterations = 0;
    while iterations < max_iterations {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for j in 0..dim {
                sums[l * dim + j] += points[i * dim + j];
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centers[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if d2[b] >= d2[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("k ≤ n");
                taken[far] = true;
                centers[c * dim..(c + 1) * dim].copy_from_slice(row(points, dim, far));
            }
        }
        let (l2, dd) = assign(points, dim, &centers);
        labels = l2;
        d2 = dd;
        let next: f64 = d2.iter().sum();
        iterations += 1;
        let rel = if inertia > 0.0 {
            (inertia - next) / inertia
        } else {
            0.0
        };
        inertia = next;
        if rel < rel_tol {
            break;
        }
    }
    Ok(KMeans {
        centers,
        labels,
        inertia,
        iterations,
    })
}

/// k-means++ seeding followed by Lloyd with the default stopping rule.
pub fn kmeans(points: &[f64], dim: usize, k: usize, rng: &mut Rng) -> Result<KMeans> {
    let seeds = kmeans_pp_seeds(points, dim, k, rng)?;
    let init: Vec<f64> = seeds
        .iter()
        .flat_map(|&s| row(points, dim, s).to_vec())
        .collect();
    lloyd(points, dim, &init, KMEANS_MAX_ITERATIONS, KMEANS_REL_TOL)
}

/// Greedy farthest point sampling from `start`; ties go to the lower index.
pub fn fps(points: &[f64], dim: usize, count: usize, start: usize) -> Result<Vec<usize>> {
    let n = check_rows(points, dim)?;
    if count > n || (count > 0 && start >= n) {
        return Err(Error::Config(format!(
            "cannot sample {count} of {n} points from index {start}"
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut chosen = vec![start];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| dist2(row(points, dim, i), row(points, dim, start)))
        .collect();
    while chosen.len() < count {
        let mut best = (usize::MAX, -1.0);
        for (i, &d) in d2.iter().enumerate() {
            if d > best.1 {
                best = (i, d);
            }
        }
        let next = best.0;
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist2(row(points, dim, i), row(points, dim, next)));
        }
    }
    Ok(chosen)
}

/// For each query row, the `k` nearest reference rows by squared Euclidean
/// distance, closest first; equal distances are ordered by index.
pub fn knn(queries: &[f64], refs: &[f64], dim: usize, k: usize) -> Result<Vec<usize>> {
    check_rows(queries, dim)?;
    let m = check_rows(refs, dim)?;
    if k == 0 || k > m {
        return Err(Error::Config(format!(
            "cannot take {k} neighbours from {m} points"
        )));
    }
    Ok(queries
        .par_chunks(dim)
        .flat_map_iter(|q| {
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for j in 0..m {
                let d = dist2(q, row(refs, dim, j));
                if best.len() == k && d >= best[k - 1].0 {
                    continue;
                }
                let pos = best.partition_point(|&(bd, _)| bd <= d);
                best.insert(pos, (d, j));
                best.truncate(k);
            }
            best.into_iter().map(|(_, j)| j)
        })
        .collect())
}
