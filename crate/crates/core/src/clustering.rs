//! k-means over sampled parameter points.
//!
//! Seeding is k-means++ from a seeded generator, followed by Lloyd
//! iterations until the assignment stops changing. When the parameter space
//! has more than one dimension, distances are measured after min-max
//! scaling each dimension to `[0, 1]`; reported centroids are always in raw
//! coordinates. Centroids are returned in lexicographic order so cluster
//! indices do not depend on the seeding order.

use rand::Rng;

use crate::error::{Result, RomError};
use crate::nn::rng_from_seed;

/// A point θ of the p-dimensional parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPoint(pub Vec<f64>);

impl ParameterPoint {
    pub fn scalar(value: f64) -> Self {
        Self(vec![value])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl From<f64> for ParameterPoint {
    fn from(v: f64) -> Self {
        Self::scalar(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Vec<ParameterPoint>,
    /// Cluster index of every training point, in input order.
    pub assignment: Vec<usize>,
    /// Per-dimension offset and span of the distance metric.
    pub scale_lo: Vec<f64>,
    pub scale_span: Vec<f64>,
    /// Sum of squared scaled distances after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl Clustering {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }

    fn scaled(&self, x: &[f64]) -> Vec<f64> {
        scale(x, &self.scale_lo, &self.scale_span)
    }

    /// Members of cluster `c`, as indices into the training points.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == c)
            .collect()
    }
}

fn scale(x: &[f64], lo: &[f64], span: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lo.iter().zip(span))
        .map(|(v, (l, s))| (v - l) / s)
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centre; ties go to the lowest index.
fn nearest(x: &[f64], centres: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centres.iter().enumerate() {
        let d = sq_dist(x, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// The result does not depend on the order of `points`: the run happens on
/// a lexicographically sorted copy and the assignment is mapped back.
pub fn kmeans(
    points: &[ParameterPoint],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Clustering> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(points[a].coords(), points[b].coords()));
    let sorted: Vec<ParameterPoint> = order.iter().map(|&i| points[i].clone()).collect();
    let mut c = kmeans_sorted(&sorted, k, seed, max_iters)?;
    let mut assignment = vec![0; points.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = c.assignment[pos];
    }
    c.assignment = assignment;
    Ok(c)
}

fn kmeans_sorted(
    points: &[ParameterPoint],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Clustering> {
    let Some(first) = points.first() else {
        return Err(RomError::input("k-means on an empty point set"));
    };
    let p = first.dim();
    if p == 0 || points.iter().any(|x| x.dim() != p) {
        return Err(RomError::input(
            "parameter points must share a positive dimension",
        ));
    }
    if points.iter().any(|x| x.0.iter().any(|v| !v.is_finite())) {
        return Err(RomError::input("parameter points must be finite"));
    }
    let mut distinct: Vec<&[f64]> = points.iter().map(|x| x.coords()).collect();
    distinct.sort_by(|a, b| lex_cmp(a, b));
    distinct.dedup();
    if k == 0 || k > distinct.len() {
        return Err(RomError::input(format!(
            "k = {k} but there are {} distinct parameter points",
            distinct.len()
        )));
    }

    let (lo, span) = if p > 1 {
        let lo: Vec<f64> = (0..p)
            .map(|d| points.iter().map(|x| x.0[d]).fold(f64::INFINITY, f64::min))
            .collect();
        let span = (0..p)
            .map(|d| {
                let hi = points
                    .iter()
                    .map(|x| x.0[d])
                    .fold(f64::NEG_INFINITY, f64::max);
                if hi > lo[d] {
                    hi - lo[d]
                } else {
                    1.0
                }
            })
            .collect();
        (lo, span)
    } else {
        (vec![0.0], vec![1.0])
    };
    let xs: Vec<Vec<f64>> = points.iter().map(|x| scale(&x.0, &lo, &span)).collect();

    let mut rng = rng_from_seed(seed);
    let mut centres = plus_plus_seeding(&xs, k, &mut rng);
    let mut assignment: Vec<usize> = xs.iter().map(|x| nearest(x, &centres).0).collect();
    let mut history = Vec::new();

    for _ in 0..max_iters.max(1) {
        repair_empty(&xs, &mut centres, &mut assignment);
        centres = means(&xs, &assignment, k, p);
        let next: Vec<usize> = xs.iter().map(|x| nearest(x, &centres).0).collect();
        let changed = next != assignment;
        assignment = next;
        history.push(inertia(&xs, &centres, &assignment));
        if !changed {
            break;
        }
    }
    repair_empty(&xs, &mut centres, &mut assignment);
    centres = means(&xs, &assignment, k, p);

    // Canonical order: sort clusters by centroid.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| lex_cmp(&centres[a], &centres[b]));
    let mut relabel = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let assignment: Vec<usize> = assignment.iter().map(|&c| relabel[c]).collect();
    let raw_means = means(
        &points.iter().map(|x| x.0.clone()).collect::<Vec<_>>(),
        &assignment,
        k,
        p,
    );
    Ok(Clustering {
        k,
        centroids: raw_means.into_iter().map(ParameterPoint).collect(),
        assignment,
        scale_lo: lo,
        scale_span: span,
        inertia_history: history,
    })
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

fn plus_plus_seeding(xs: &[Vec<f64>], k: usize, rng: &mut crate::nn::Rng64) -> Vec<Vec<f64>> {
    let mut centres = vec![xs[rng.random_range(0..xs.len())].clone()];
    let mut d2: Vec<f64> = xs.iter().map(|x| sq_dist(x, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut idx = xs.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            // floating residue can leave the last candidate at zero weight
            if d2[idx] == 0.0 {
                idx = d2.iter().rposition(|&d| d > 0.0).unwrap_or(idx);
            }
            idx
        } else {
            rng.random_range(0..xs.len())
        };
        centres.push(xs[pick].clone());
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min(sq_dist(x, &xs[pick]));
        }
    }
    centres
}

/// Moves the centre of each empty cluster onto the point farthest from its
/// own centre, taken from a cluster that can spare it.
fn repair_empty(xs: &[Vec<f64>], centres: &mut [Vec<f64>], assignment: &mut [usize]) {
    let k = centres.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..xs.len())
            .filter(|&i| counts[assignment[i]] > 1)
            .max_by(|&i, &j| {
                sq_dist(&xs[i], &centres[assignment[i]])
                    .total_cmp(&sq_dist(&xs[j], &centres[assignment[j]]))
                    .then(j.cmp(&i))
            })
            .expect("k does not exceed the number of points");
        centres[empty] = xs[far].clone();
        assignment[far] = empty;
    }
}

fn means(xs: &[Vec<f64>], assignment: &[usize], k: usize, p: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; p]; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in xs.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

fn inertia(xs: &[Vec<f64>], centres: &[Vec<f64>], assignment: &[usize]) -> f64 {
    xs.iter()
        .zip(assignment)
        .map(|(x, &a)| sq_dist(x, &centres[a]))
        .sum()
}

/// Nearest centroid to `theta` under the clustering's metric.
pub fn assign(clustering: &Clustering, theta: &ParameterPoint) -> Result<usize> {
    if theta.dim() != clustering.scale_lo.len() {
        return Err(RomError::shape(format!(
            "parameter of dimension {} against {}-dimensional centroids",
            theta.dim(),
            clustering.scale_lo.len()
        )));
    }
    let centres: Vec<Vec<f64>> = clustering
        .centroids
        .iter()
        .map(|c| clustering.scaled(&c.0))
        .collect();
    Ok(nearest(&clustering.scaled(&theta.0), &centres).0)
}
