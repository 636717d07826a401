//! KMeans++ clustering of consumption vectors, quality metrics, seed
//! stability and cluster profiles.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::interactions::InteractionMatrix;
use crate::registry::{Leaning, Registry};
use crate::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub seed: u64,
    pub iterations_run: usize,
    /// Distortion after every centroid update, starting with the seeded
    /// centroids.
    pub distortion_trace: Vec<f64>,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, a)| **a == cluster)
            .map(|(i, _)| i)
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points have different dimensions"));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("points contain non-finite coordinates"));
    }
    Ok(dim)
}

pub fn distinct_points(points: &[Vec<f64>]) -> usize {
    points
        .iter()
        .map(|p| p.iter().map(|x| (x + 0.0).to_bits()).collect::<Vec<_>>())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Index of the nearest centroid; ties go to the lower index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points.par_iter().map(|p| nearest(p, centroids).0).collect()
}

fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick].clone();
        for (p, best) in points.iter().zip(d2.iter_mut()) {
            *best = best.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Mean of each cluster. A cluster left empty takes over the point farthest
/// from its own centroid among clusters that can spare one.
fn update_centroids(points: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let dim = centroids[0].len();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let far = (0..points.len())
            .filter(|&i| counts[assignments[i]] > 1)
            .max_by(|&i, &j| {
                let di = sq_dist(&points[i], &centroids[assignments[i]]);
                let dj = sq_dist(&points[j], &centroids[assignments[j]]);
                di.total_cmp(&dj).then(j.cmp(&i))
            });
        if let Some(i) = far {
            counts[assignments[i]] -= 1;
            assignments[i] = empty;
            counts[empty] = 1;
        }
    }
    let mut sums = vec![vec![0.0; dim]; k];
    for (p, &a) in points.iter().zip(assignments.iter()) {
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (c, (sum, n)) in sums.into_iter().zip(&counts).enumerate() {
        if *n > 0 {
            centroids[c] = sum.into_iter().map(|s| s / *n as f64).collect();
        }
    }
}

fn distortion_of(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    kmeans_with(points, k, seed, MAX_ITERATIONS)
}

/// KMeans++ seeding followed by Lloyd iterations until the assignments stop
/// changing or `max_iterations` updates have run.
pub fn kmeans_with(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iterations: usize,
) -> Result<Clustering> {
    check_points(points)?;
    let distinct = distinct_points(points);
    if k == 0 || k > distinct {
        return Err(Error::TooFewPoints { k, distinct });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignments = assign_all(points, &centroids);
    let mut trace = vec![distortion_of(points, &assignments, &centroids)];
    let mut iterations_run = 0;
    while iterations_run < max_iterations {
        update_centroids(points, &mut assignments, &mut centroids);
        iterations_run += 1;
        trace.push(distortion_of(points, &assignments, &centroids));
        let next = assign_all(points, &centroids);
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok(Clustering {
        k,
        centroids,
        assignments,
        seed,
        iterations_run,
        distortion_trace: trace,
    })
}

/// Lowest-distortion clustering over several seeds.
pub fn kmeans_best_of(points: &[Vec<f64>], k: usize, seeds: &[u64]) -> Result<Clustering> {
    let runs: Vec<Clustering> = seeds
        .par_iter()
        .map(|&s| kmeans(points, k, s))
        .collect::<Result<_>>()?;
    runs.into_iter()
        .min_by(|a, b| distortion(points, a).total_cmp(&distortion(points, b)))
        .ok_or_else(|| Error::invalid("no seeds given"))
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn distortion(points: &[Vec<f64>], c: &Clustering) -> f64 {
    distortion_of(points, &c.assignments, &c.centroids)
}

/// Group point indices by label, dropping empty labels.
fn groups(assignments: &[usize]) -> Vec<Vec<usize>> {
    let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &a) in assignments.iter().enumerate() {
        by.entry(a).or_default().push(i);
    }
    by.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SilhouetteOrientation {
    /// `(x - y) / max(x, y)` with x the mean intra-cluster distance and y the
    /// mean distance to the next-nearest cluster. Well-separated clusters
    /// score near -1.
    #[default]
    AsPrinted,
    /// The usual `(b - a) / max(a, b)`; well-separated clusters score near 1.
    Conventional,
}

/// Per-point silhouette scores. Points alone in their cluster score 0.
pub fn silhouette_scores(
    points: &[Vec<f64>],
    assignments: &[usize],
    orientation: SilhouetteOrientation,
) -> Result<Vec<f64>> {
    let groups = groups(assignments);
    if groups.len() < 2 {
        return Err(Error::TooFewClusters(groups.len()));
    }
    let label_of: Vec<usize> = {
        let mut l = vec![0; points.len()];
        for (g, members) in groups.iter().enumerate() {
            for &i in members {
                l[i] = g;
            }
        }
        l
    };
    Ok((0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = label_of[i];
            if groups[own].len() == 1 {
                return 0.0;
            }
            let mean_to = |g: &[usize]| {
                let s: f64 = g
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| dist(&points[i], &points[j]))
                    .sum();
                s / g.iter().filter(|&&j| j != i).count() as f64
            };
            let x = mean_to(&groups[own]);
            let y = groups
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != own)
                .map(|(_, g)| mean_to(g))
                .fold(f64::INFINITY, f64::min);
            let denom = x.max(y);
            if denom == 0.0 {
                return 0.0;
            }
            match orientation {
                SilhouetteOrientation::AsPrinted => (x - y) / denom,
                SilhouetteOrientation::Conventional => (y - x) / denom,
            }
        })
        .collect())
}

pub fn silhouette_mean(
    points: &[Vec<f64>],
    c: &Clustering,
    orientation: SilhouetteOrientation,
) -> Result<f64> {
    let s = silhouette_scores(points, &c.assignments, orientation)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Davies–Bouldin index over the non-empty clusters of `assignments`, with
/// centroids taken as cluster means.
pub fn davies_bouldin(points: &[Vec<f64>], assignments: &[usize]) -> Result<f64> {
    let groups = groups(assignments);
    if groups.len() < 2 {
        return Err(Error::TooFewClusters(groups.len()));
    }
    let dim = points[0].len();
    let centroids: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let mut c = vec![0.0; dim];
            for &i in g {
                for (s, x) in c.iter_mut().zip(&points[i]) {
                    *s += x;
                }
            }
            c.iter_mut().for_each(|s| *s /= g.len() as f64);
            c
        })
        .collect();
    let scatter: Vec<f64> = groups
        .iter()
        .zip(&centroids)
        .map(|(g, c)| g.iter().map(|&i| dist(&points[i], c)).sum::<f64>() / g.len() as f64)
        .collect();
    let mut total = 0.0;
    for i in 0..groups.len() {
        let mut worst = 0.0f64;
        for j in 0..groups.len() {
            if i == j {
                continue;
            }
            let d = dist(&centroids[i], &centroids[j]);
            if d == 0.0 {
                return Err(Error::CoincidentCentroids(i.min(j), i.max(j)));
            }
            worst = worst.max((scatter[i] + scatter[j]) / d);
        }
        total += worst;
    }
    Ok(total / groups.len() as f64)
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let pairs = |n: u64| (n * n.saturating_sub(1) / 2) as f64;
    let index: f64 = table.values().map(|&n| pairs(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| pairs(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| pairs(n)).sum();
    let total = pairs(a.len() as u64);
    let expected = if total > 0.0 {
        sum_a * sum_b / total
    } else {
        0.0
    };
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub distortion: f64,
    pub silhouette: Option<f64>,
    pub davies_bouldin: Option<f64>,
}

/// Metrics for each `k`, using the best of `seeds` runs per `k`. Values of
/// `k` beyond the number of distinct points are skipped.
pub fn metric_curve(
    points: &[Vec<f64>],
    ks: impl IntoIterator<Item = usize>,
    seeds: &[u64],
    orientation: SilhouetteOrientation,
) -> Result<Vec<CurvePoint>> {
    let distinct = distinct_points(points);
    let mut out = Vec::new();
    for k in ks.into_iter().filter(|&k| k >= 1 && k <= distinct) {
        let c = kmeans_best_of(points, k, seeds)?;
        out.push(CurvePoint {
            k,
            distortion: distortion(points, &c),
            silhouette: silhouette_mean(points, &c, orientation).ok(),
            davies_bouldin: davies_bouldin(points, &c.assignments).ok(),
        });
    }
    Ok(out)
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["k", "distortion", "silhouette", "davies_bouldin"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in curve {
        w.write_record([
            p.k.to_string(),
            p.distortion.to_string(),
            opt(p.silhouette),
            opt(p.davies_bouldin),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Share of each label among the given items.
pub fn distribution<'a>(labels: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    let mut n = 0.0;
    for l in labels {
        *counts.entry(l.to_string()).or_default() += 1.0;
        n += 1.0;
    }
    counts.values_mut().for_each(|v| *v /= n);
    counts
}

/// Total variation distance between two discrete distributions.
pub fn tv_distance(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    let keys: BTreeSet<&String> = p.keys().chain(q.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityParams {
    /// Largest TV distance at which two clusters count as the same group.
    pub max_tv: f64,
    /// Allowed relative size difference against the reference cluster.
    pub size_tolerance: f64,
}

impl Default for StabilityParams {
    fn default() -> Self {
        StabilityParams {
            max_tv: 0.25,
            size_tolerance: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub size: usize,
    pub nationality: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedGroup {
    /// Cluster index in the reference (first seed) run.
    pub reference: usize,
    pub size: usize,
    pub nationality: BTreeMap<String, f64>,
    /// Matched cluster index per run, `None` where the best match was too
    /// far away or too different in size.
    pub matches: Vec<Option<usize>>,
    pub appearances: usize,
    pub robust: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub runs: Vec<Vec<ClusterSummary>>,
    pub groups: Vec<MatchedGroup>,
}

impl StabilityReport {
    pub fn robust_count(&self) -> usize {
        self.groups.iter().filter(|g| g.robust).count()
    }
}

fn summarize(c: &Clustering, nationality: &[String]) -> Vec<ClusterSummary> {
    (0..c.k)
        .map(|cl| {
            let members: Vec<usize> = c.members(cl).collect();
            ClusterSummary {
                size: members.len(),
                nationality: distribution(members.iter().map(|&i| nationality[i].as_str())),
            }
        })
        .collect()
}

/// Greedy one-to-one matching by ascending TV distance.
fn greedy_match(
    reference: &[ClusterSummary],
    other: &[ClusterSummary],
) -> Vec<Option<(usize, f64)>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, r) in reference.iter().enumerate() {
        for (j, o) in other.iter().enumerate() {
            if r.size > 0 && o.size > 0 {
                pairs.push((tv_distance(&r.nationality, &o.nationality), i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut out = vec![None; reference.len()];
    let mut used = vec![false; other.len()];
    for (d, i, j) in pairs {
        if out[i].is_none() && !used[j] {
            out[i] = Some((j, d));
            used[j] = true;
        }
    }
    out
}

/// Run kmeans once per seed and match clusters of later runs to the first
/// run by the nationality mix of their members.
pub fn stability(
    points: &[Vec<f64>],
    nationality: &[String],
    k: usize,
    seeds: &[u64],
    params: StabilityParams,
) -> Result<StabilityReport> {
    if seeds.len() < 2 {
        return Err(Error::invalid("stability needs at least two seeds"));
    }
    if nationality.len() != points.len() {
        return Err(Error::invalid("one nationality label per point required"));
    }
    let clusterings: Vec<Clustering> = seeds
        .par_iter()
        .map(|&s| kmeans(points, k, s))
        .collect::<Result<_>>()?;
    let runs: Vec<Vec<ClusterSummary>> = clusterings
        .iter()
        .map(|c| summarize(c, nationality))
        .collect();
    let reference = &runs[0];
    let matchings: Vec<_> = runs.iter().map(|r| greedy_match(reference, r)).collect();
    let needed = seeds.len().div_ceil(2);
    let groups = reference
        .iter()
        .enumerate()
        .filter(|(_, r)| r.size > 0)
        .map(|(i, r)| {
            let matches: Vec<Option<usize>> = matchings
                .iter()
                .zip(&runs)
                .map(|(m, run)| {
                    m[i].filter(|&(j, d)| {
                        let size = run[j].size as f64;
                        d <= params.max_tv
                            && (size - r.size as f64).abs() <= params.size_tolerance * r.size as f64
                    })
                    .map(|(j, _)| j)
                })
                .collect();
            let appearances = matches.iter().flatten().count();
            MatchedGroup {
                reference: i,
                size: r.size,
                nationality: r.nationality.clone(),
                matches,
                appearances,
                robust: appearances >= needed,
            }
        })
        .collect();
    Ok(StabilityReport {
        k,
        seeds: seeds.to_vec(),
        runs,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopOutlet {
    pub outlet: String,
    /// Share of the cluster's total interaction mass.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub cluster: usize,
    pub size: usize,
    pub mean_vector: Vec<f64>,
    pub nationality: BTreeMap<String, f64>,
    pub factuality: BTreeMap<String, f64>,
    pub credibility: BTreeMap<String, f64>,
    pub top_outlets: BTreeMap<String, Vec<TopOutlet>>,
}

pub const TOP_OUTLETS: usize = 5;

/// Describe each non-empty cluster. `users[i]` and `nationality[i]` belong
/// to `points[i]`; `matrix` is the user→outlet matrix the points came from.
pub fn profile(
    clustering: &Clustering,
    points: &[Vec<f64>],
    users: &[String],
    nationality: &[String],
    matrix: &InteractionMatrix,
    registry: &Registry,
) -> Result<Vec<ClusterProfile>> {
    if users.len() != points.len() || nationality.len() != points.len() {
        return Err(Error::invalid(
            "users, nationalities and points differ in length",
        ));
    }
    let outlets = registry.by_id();
    let dim = points.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    for cl in 0..clustering.k {
        let members: Vec<usize> = clustering.members(cl).collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; dim];
        for &i in &members {
            for (m, x) in mean.iter_mut().zip(&points[i]) {
                *m += x / members.len() as f64;
            }
        }
        let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
        for &i in &members {
            if let Some(row) = matrix.row(&users[i]) {
                for (o, v) in row {
                    *mass.entry(o.as_str()).or_default() += v;
                }
            }
        }
        let total: f64 = mass.values().sum();
        let mut factuality: BTreeMap<String, f64> = BTreeMap::new();
        let mut credibility: BTreeMap<String, f64> = BTreeMap::new();
        let mut by_leaning: BTreeMap<Leaning, Vec<(&str, f64)>> = BTreeMap::new();
        for (&o, &v) in &mass {
            let meta = outlets.get(o);
            let f = meta
                .and_then(|m| m.factuality())
                .map_or("unrated", |f| f.as_str());
            let c = meta
                .and_then(|m| m.credibility)
                .map_or("unrated", |c| c.as_str());
            *factuality.entry(f.to_string()).or_default() += v / total;
            *credibility.entry(c.to_string()).or_default() += v / total;
            if let Some(m) = meta {
                by_leaning
                    .entry(m.ideology.leaning())
                    .or_default()
                    .push((o, v));
            }
        }
        let top_outlets = by_leaning
            .into_iter()
            .map(|(l, mut list)| {
                list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
                let top = list
                    .into_iter()
                    .take(TOP_OUTLETS)
                    .map(|(o, v)| TopOutlet {
                        outlet: o.to_string(),
                        share: v / total,
                    })
                    .collect();
                (l.as_str().to_string(), top)
            })
            .collect();
        out.push(ClusterProfile {
            cluster: cl,
            size: members.len(),
            mean_vector: mean,
            nationality: distribution(members.iter().map(|&i| nationality[i].as_str())),
            factuality,
            credibility,
            top_outlets,
        });
    }
    Ok(out)
}
