//! Source and target user groups for a country pair, transition
//! probabilities and risk ratios between them.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::clustering::{Clustering, kmeans};
use crate::interactions::{IdeologyFold, InteractionMatrix, consumption_vectors};
use crate::registry::{Ideology, Registry};
use crate::{Error, Result};

/// Users clustered twice: once on local-media consumption (source groups)
/// and once on foreign-media consumption (target groups).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGroups {
    pub users: Vec<String>,
    pub sg: Clustering,
    pub tg: Clustering,
    /// Users dropped for lacking a nonzero vector on one side.
    pub excluded: usize,
}

pub fn build_groups(
    users: &[String],
    local: &BTreeMap<String, Vec<f64>>,
    foreign: &BTreeMap<String, Vec<f64>>,
    k_sg: usize,
    k_tg: usize,
    seed: u64,
) -> Result<PairGroups> {
    let nonzero = |v: &Vec<f64>| v.iter().any(|x| *x > 0.0);
    let mut kept = Vec::new();
    let mut lp = Vec::new();
    let mut fp = Vec::new();
    for u in users {
        match (local.get(u), foreign.get(u)) {
            (Some(l), Some(f)) if nonzero(l) && nonzero(f) => {
                kept.push(u.clone());
                lp.push(l.clone());
                fp.push(f.clone());
            }
            _ => {}
        }
    }
    let excluded = users.len() - kept.len();
    let (sg, tg) = rayon::join(|| kmeans(&lp, k_sg, seed), || kmeans(&fp, k_tg, seed));
    Ok(PairGroups {
        users: kept,
        sg: sg?,
        tg: tg?,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTransitionReport {
    pub n: u64,
    pub sg_sizes: Vec<u64>,
    pub tg_sizes: Vec<u64>,
    /// `counts[i][j]` users in both SG i and TG j.
    pub counts: Vec<Vec<u64>>,
    pub sg_prior: Vec<f64>,
    /// Row-stochastic; rows for empty source groups are missing.
    pub transitions: Vec<Option<Vec<f64>>>,
    pub tg_baseline: Vec<f64>,
    /// `r[i][j] = P(TG j | SG i) / P(TG j)`; missing where either group is
    /// empty.
    pub risk: Vec<Vec<Option<f64>>>,
}

impl GroupTransitionReport {
    /// Risk ratio as an exact fraction, `|SG_i ∩ TG_j| · N / (|SG_i| · |TG_j|)`.
    pub fn risk_exact(&self, i: usize, j: usize) -> Option<Ratio<u64>> {
        let denom = self.sg_sizes[i] * self.tg_sizes[j];
        (denom > 0).then(|| Ratio::new(self.counts[i][j] * self.n, denom))
    }
}

/// Transition statistics between two labelings of the same users.
pub fn transition_report(
    sg: &[usize],
    tg: &[usize],
    k_sg: usize,
    k_tg: usize,
) -> Result<GroupTransitionReport> {
    if sg.len() != tg.len() {
        return Err(Error::invalid(
            "source and target assignments cover different users",
        ));
    }
    if sg.is_empty() {
        return Err(Error::invalid("no users to compare"));
    }
    if sg.iter().any(|&i| i >= k_sg) || tg.iter().any(|&j| j >= k_tg) {
        return Err(Error::invalid("group label out of range"));
    }
    let n = sg.len() as u64;
    let mut counts = vec![vec![0u64; k_tg]; k_sg];
    for (&i, &j) in sg.iter().zip(tg) {
        counts[i][j] += 1;
    }
    let sg_sizes: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let tg_sizes: Vec<u64> = (0..k_tg)
        .map(|j| counts.iter().map(|r| r[j]).sum())
        .collect();
    let sg_prior = sg_sizes.iter().map(|&s| s as f64 / n as f64).collect();
    let tg_baseline = tg_sizes.iter().map(|&s| s as f64 / n as f64).collect();
    let transitions = counts
        .iter()
        .zip(&sg_sizes)
        .map(|(row, &size)| {
            (size > 0).then(|| row.iter().map(|&c| c as f64 / size as f64).collect())
        })
        .collect();
    let risk = counts
        .iter()
        .zip(&sg_sizes)
        .map(|(row, &si)| {
            row.iter()
                .zip(&tg_sizes)
                .map(|(&c, &tj)| {
                    let denom = si * tj;
                    (denom > 0).then(|| (c * n) as f64 / denom as f64)
                })
                .collect()
        })
        .collect();
    Ok(GroupTransitionReport {
        n,
        sg_sizes,
        tg_sizes,
        counts,
        sg_prior,
        transitions,
        tg_baseline,
        risk,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub local: String,
    pub foreign: String,
    pub seed: u64,
    pub users: usize,
    pub excluded: usize,
    pub sg_centroids: Vec<Vec<f64>>,
    pub tg_centroids: Vec<Vec<f64>>,
    pub transitions: GroupTransitionReport,
}

pub fn pair_report(local: &str, foreign: &str, groups: &PairGroups) -> Result<PairReport> {
    Ok(PairReport {
        local: local.to_string(),
        foreign: foreign.to_string(),
        seed: groups.sg.seed,
        users: groups.users.len(),
        excluded: groups.excluded,
        sg_centroids: groups.sg.centroids.clone(),
        tg_centroids: groups.tg.centroids.clone(),
        transitions: transition_report(
            &groups.sg.assignments,
            &groups.tg.assignments,
            groups.sg.k,
            groups.tg.k,
        )?,
    })
}

/// One report per seed, for checking how much the groups move around.
#[allow(clippy::too_many_arguments)]
pub fn multi_seed_reports(
    local: &str,
    foreign: &str,
    users: &[String],
    local_vectors: &BTreeMap<String, Vec<f64>>,
    foreign_vectors: &BTreeMap<String, Vec<f64>>,
    k_sg: usize,
    k_tg: usize,
    seeds: &[u64],
) -> Result<Vec<PairReport>> {
    seeds
        .iter()
        .map(|&s| {
            let g = build_groups(users, local_vectors, foreign_vectors, k_sg, k_tg, s)?;
            pair_report(local, foreign, &g)
        })
        .collect()
}

/// Risk-ratio heatmap cells: `sg,tg,risk,color` with red above 1, blue
/// below and white at exactly 1.
pub fn write_risk_csv<W: Write>(report: &GroupTransitionReport, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["sg", "tg", "risk", "color"])?;
    for (i, row) in report.risk.iter().enumerate() {
        for (j, r) in row.iter().enumerate() {
            let (value, color) = match (r, report.risk_exact(i, j)) {
                (Some(v), Some(exact)) => {
                    let one = Ratio::from_integer(1);
                    let color = if exact > one {
                        "red"
                    } else if exact < one {
                        "blue"
                    } else {
                        "white"
                    };
                    (v.to_string(), color)
                }
                _ => (String::new(), ""),
            };
            w.write_record([
                (i + 1).to_string(),
                (j + 1).to_string(),
                value,
                color.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "group", content = "bin")]
pub enum Predominant {
    Bin(usize),
    Mixed,
}

impl Predominant {
    pub fn label(self, fold: IdeologyFold) -> String {
        match self {
            Predominant::Bin(b) => fold.labels()[b].to_string(),
            Predominant::Mixed => "mixed".to_string(),
        }
    }
}

/// The bin holding at least `threshold` of the consumption, or `Mixed`.
/// When several bins qualify the largest wins, ties to the lower index.
pub fn predominant_group(vector: &[f64], threshold: f64) -> Predominant {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in vector.iter().enumerate() {
        if x >= threshold && best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map_or(Predominant::Mixed, |(i, _)| Predominant::Bin(i))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub vectors: BTreeMap<String, Vec<f64>>,
    /// Users whose entire consumption was the removed outlet.
    pub dropped: Vec<String>,
}

/// Consumption vectors recomputed without one outlet's column.
pub fn ablate_outlet(
    matrix: &InteractionMatrix,
    outlet: &str,
    ideology_of: impl Fn(&str) -> Option<Ideology>,
    fold: IdeologyFold,
) -> Result<Ablation> {
    if !matrix.column_keys().contains(outlet) {
        return Err(Error::UnknownOutlet(outlet.to_string()));
    }
    let mut without = matrix.without_columns(&BTreeSet::from([outlet]));
    without
        .provenance
        .cutoffs
        .push(crate::interactions::Cutoff::Ablation {
            outlet: outlet.to_string(),
        });
    let (vectors, _) = consumption_vectors(&without, ideology_of, fold);
    let dropped = matrix
        .rows()
        .map(|(u, _)| u)
        .filter(|u| !vectors.contains_key(*u))
        .map(str::to_string)
        .collect();
    Ok(Ablation { vectors, dropped })
}

type Vectors = BTreeMap<String, Vec<f64>>;

/// Local and foreign consumption vectors for users of `local_country`.
///
/// Each side keeps only outlets from its country and only users whose
/// interactions with that side reach `min_total`.
pub fn pair_vectors(
    user_outlet: &InteractionMatrix,
    user_country: &BTreeMap<String, String>,
    registry: &Registry,
    local_country: &str,
    foreign_country: &str,
    min_total: f64,
    fold: IdeologyFold,
) -> (Vec<String>, Vectors, Vectors) {
    let outlets = registry.by_id();
    let users =
        user_outlet.retain_rows(|u| user_country.get(u).is_some_and(|c| c == local_country));
    let side = |country: &str| {
        let foreign_cols: BTreeSet<&str> = users
            .column_keys()
            .into_iter()
            .filter(|o| outlets.get(o).is_none_or(|m| m.country != country))
            .collect();
        let m = users
            .without_columns(&foreign_cols)
            .threshold_cutoff(min_total);
        consumption_vectors(&m, |o| outlets.get(o).map(|m| m.ideology), fold).0
    };
    let local = side(local_country);
    let foreign = side(foreign_country);
    let ids = users.rows().map(|(u, _)| u.to_string()).collect();
    (ids, local, foreign)
}
