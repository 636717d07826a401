//! Interaction events and sparse interaction matrices.
//!
//! A tweet interacts with a media outlet when it retweets, quotes, replies
//! to or mentions one of the outlet's accounts, or shares a link on the
//! outlet's domain. The quantification scheme turns a tweet's occurrences
//! into weighted events; events are then summed into matrices keyed by user,
//! state, country, outlet or ideology.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::ingest::TweetRecord;
use crate::registry::{HandleMap, Ideology, OutletIdx};
use crate::{Error, Result};

/// Exact event weight.
pub type Weight = Ratio<u32>;

/// Rows and columns whose sums fall within this of a threshold count as
/// reaching it, so thirds that add up to 5 are not cut at 5.
pub const CUTOFF_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Scheme 1: weight 1 for every occurrence of a media account.
    Occurrence,
    /// Scheme 2: weight 1 for each distinct outlet, bucketed by its country.
    Country,
    /// Scheme 3: one interaction per tweet, split by occurrence counts.
    #[default]
    Weighted,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Occurrence => "occurrence",
            Scheme::Country => "country",
            Scheme::Weighted => "weighted",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "occurrence" => Ok(Scheme::Occurrence),
            "2" | "country" => Ok(Scheme::Country),
            "3" | "weighted" => Ok(Scheme::Weighted),
            _ => Err(Error::invalid(format!("unknown scheme '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionEvent {
    pub user_id: String,
    pub outlet: OutletIdx,
    pub weight: Weight,
    pub tweet_id: String,
    pub scheme: Scheme,
}

impl InteractionEvent {
    pub fn weight_f64(&self) -> f64 {
        *self.weight.numer() as f64 / *self.weight.denom() as f64
    }
}

/// Registered outlets referenced by a tweet, one entry per occurrence, in
/// the order retweet, quote, reply, mentions, shared URLs.
pub fn media_occurrences(record: &TweetRecord, handles: &HandleMap) -> Vec<OutletIdx> {
    let accounts = record
        .retweeted_account
        .iter()
        .chain(&record.quoted_account)
        .chain(&record.reply_target_handle)
        .chain(&record.mentioned_accounts);
    let mut found: Vec<OutletIdx> = accounts
        .filter_map(|h| handles.outlet_for_handle(h))
        .collect();
    found.extend(
        record
            .shared_urls
            .iter()
            .filter_map(|u| handles.outlet_for_url(u)),
    );
    found
}

/// Turn one tweet into weighted events. The consumer is always the tweet's
/// author, also for retweets.
pub fn extract_interactions(
    record: &TweetRecord,
    handles: &HandleMap,
    scheme: Scheme,
) -> Vec<InteractionEvent> {
    let occurrences = media_occurrences(record, handles);
    if occurrences.is_empty() {
        return Vec::new();
    }
    let event = |outlet, weight| InteractionEvent {
        user_id: record.author_id.clone(),
        outlet,
        weight,
        tweet_id: record.tweet_id.clone(),
        scheme,
    };
    match scheme {
        Scheme::Occurrence => occurrences
            .into_iter()
            .map(|o| event(o, Weight::from_integer(1)))
            .collect(),
        Scheme::Country => distinct_counts(&occurrences)
            .into_iter()
            .map(|(o, _)| event(o, Weight::from_integer(1)))
            .collect(),
        Scheme::Weighted => {
            let total = occurrences.len() as u32;
            distinct_counts(&occurrences)
                .into_iter()
                .map(|(o, n)| event(o, Weight::new(n, total)))
                .collect()
        }
    }
}

/// Occurrence counts per outlet in first-seen order.
fn distinct_counts(occurrences: &[OutletIdx]) -> Vec<(OutletIdx, u32)> {
    let mut counts: Vec<(OutletIdx, u32)> = Vec::new();
    for &o in occurrences {
        match counts.iter_mut().find(|(x, _)| *x == o) {
            Some((_, n)) => *n += 1,
            None => counts.push((o, 1)),
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyKind {
    User,
    State,
    Country,
    Outlet,
    Ideology,
    Leaning,
}

impl KeyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyKind::User => "user",
            KeyKind::State => "state",
            KeyKind::Country => "country",
            KeyKind::Outlet => "outlet",
            KeyKind::Ideology => "ideology",
            KeyKind::Leaning => "leaning",
        }
    }
}

/// A typed row or column key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityKey {
    pub kind: KeyKind,
    pub name: String,
}

impl EntityKey {
    pub fn user(id: &str) -> Self {
        EntityKey {
            kind: KeyKind::User,
            name: id.to_string(),
        }
    }

    pub fn country(name: &str) -> Self {
        EntityKey {
            kind: KeyKind::Country,
            name: name.to_string(),
        }
    }

    /// States are keyed `Country/State` so equal names in different
    /// countries stay apart.
    pub fn state(country: &str, state: &str) -> Self {
        EntityKey {
            kind: KeyKind::State,
            name: state_key(country, state),
        }
    }

    pub fn outlet(id: &str) -> Self {
        EntityKey {
            kind: KeyKind::Outlet,
            name: id.to_string(),
        }
    }

    pub fn ideology(i: Ideology) -> Self {
        EntityKey {
            kind: KeyKind::Ideology,
            name: i.as_str().to_string(),
        }
    }
}

pub fn state_key(country: &str, state: &str) -> String {
    format!("{country}/{state}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cutoff {
    Percentile { fraction: f64, removed: usize },
    Threshold { min_total: f64, removed: usize },
    ZeroDiagonal,
    Ablation { outlet: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub scheme: Option<Scheme>,
    pub cutoffs: Vec<Cutoff>,
}

/// JSON sidecar written next to a triplet file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub row_type: KeyKind,
    pub col_type: KeyKind,
    pub scheme: Option<Scheme>,
    pub cutoffs: Vec<Cutoff>,
}

/// Sparse nonnegative matrix with typed keys. Zero cells are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    row_kind: KeyKind,
    col_kind: KeyKind,
    rows: BTreeMap<String, BTreeMap<String, f64>>,
    pub provenance: Provenance,
}

/// A matrix plus what could not be placed in it.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixBuild {
    pub matrix: InteractionMatrix,
    pub dropped_events: usize,
    pub dropped_mass: f64,
}

/// Sum event weights into cells keyed by `row_key` × `col_key`.
///
/// Events whose row or column key is `None` (e.g. users without a resolved
/// location) are dropped and counted. A key of the wrong kind is an error.
pub fn build_matrix<'e, R, C>(
    events: impl IntoIterator<Item = &'e InteractionEvent>,
    row_kind: KeyKind,
    col_kind: KeyKind,
    mut row_key: R,
    mut col_key: C,
) -> Result<MatrixBuild>
where
    R: FnMut(&InteractionEvent) -> Option<EntityKey>,
    C: FnMut(&InteractionEvent) -> Option<EntityKey>,
{
    let mut matrix = InteractionMatrix::new(row_kind, col_kind);
    let mut dropped_events = 0;
    let mut dropped_mass = 0.0;
    for e in events {
        matrix.provenance.scheme.get_or_insert(e.scheme);
        let (Some(r), Some(c)) = (row_key(e), col_key(e)) else {
            dropped_events += 1;
            dropped_mass += e.weight_f64();
            continue;
        };
        check_kind(row_kind, r.kind)?;
        check_kind(col_kind, c.kind)?;
        matrix.add(r.name, c.name, e.weight_f64());
    }
    Ok(MatrixBuild {
        matrix,
        dropped_events,
        dropped_mass,
    })
}

fn check_kind(expected: KeyKind, found: KeyKind) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::MixedKeyTypes {
            expected: expected.as_str().into(),
            found: found.as_str().into(),
        })
    }
}

impl InteractionMatrix {
    pub fn new(row_kind: KeyKind, col_kind: KeyKind) -> Self {
        InteractionMatrix {
            row_kind,
            col_kind,
            rows: BTreeMap::new(),
            provenance: Provenance::default(),
        }
    }

    pub fn row_kind(&self) -> KeyKind {
        self.row_kind
    }

    pub fn col_kind(&self) -> KeyKind {
        self.col_kind
    }

    /// Add `value` to a cell. Non-positive values are ignored.
    pub fn add(&mut self, row: String, col: String, value: f64) {
        if value > 0.0 {
            *self.rows.entry(row).or_default().entry(col).or_insert(0.0) += value;
        }
    }

    pub fn get(&self, row: &str, col: &str) -> f64 {
        self.rows
            .get(row)
            .and_then(|r| r.get(col))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn row(&self, row: &str) -> Option<&BTreeMap<String, f64>> {
        self.rows.get(row)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, f64>)> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_keys(&self) -> BTreeSet<&str> {
        self.rows
            .values()
            .flat_map(|r| r.keys().map(String::as_str))
            .collect()
    }

    pub fn row_sums(&self) -> BTreeMap<&str, f64> {
        self.rows
            .iter()
            .map(|(k, r)| (k.as_str(), r.values().sum()))
            .collect()
    }

    pub fn col_sums(&self) -> BTreeMap<&str, f64> {
        let mut sums = BTreeMap::new();
        for r in self.rows.values() {
            for (c, v) in r {
                *sums.entry(c.as_str()).or_insert(0.0) += v;
            }
        }
        sums
    }

    pub fn total(&self) -> f64 {
        self.rows.values().flat_map(|r| r.values()).sum()
    }

    /// Cell-wise addition of a partial matrix built over another shard.
    pub fn merge(&mut self, other: InteractionMatrix) -> Result<()> {
        check_kind(self.row_kind, other.row_kind)?;
        check_kind(self.col_kind, other.col_kind)?;
        for (r, cols) in other.rows {
            for (c, v) in cols {
                self.add(r.clone(), c, v);
            }
        }
        Ok(())
    }

    /// Regroup rows and columns. Entries mapped to `None` are dropped; the
    /// dropped mass is returned alongside.
    pub fn aggregate(
        &self,
        row_kind: KeyKind,
        col_kind: KeyKind,
        mut row_map: impl FnMut(&str) -> Option<String>,
        mut col_map: impl FnMut(&str) -> Option<String>,
    ) -> (InteractionMatrix, f64) {
        let mut out = InteractionMatrix::new(row_kind, col_kind);
        out.provenance = self.provenance.clone();
        let mut dropped = 0.0;
        let mut col_cache: BTreeMap<&str, Option<String>> = BTreeMap::new();
        for (r, cols) in &self.rows {
            let Some(new_r) = row_map(r) else {
                dropped += cols.values().sum::<f64>();
                continue;
            };
            for (c, v) in cols {
                let new_c = col_cache.entry(c.as_str()).or_insert_with(|| col_map(c));
                match new_c {
                    Some(new_c) => out.add(new_r.clone(), new_c.clone(), *v),
                    None => dropped += v,
                }
            }
        }
        (out, dropped)
    }

    /// Keep only the rows accepted by `keep`.
    pub fn retain_rows(&self, mut keep: impl FnMut(&str) -> bool) -> InteractionMatrix {
        InteractionMatrix {
            row_kind: self.row_kind,
            col_kind: self.col_kind,
            rows: self
                .rows
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Drop the given columns; rows left empty disappear.
    pub fn without_columns(&self, drop: &BTreeSet<&str>) -> InteractionMatrix {
        let mut out = InteractionMatrix::new(self.row_kind, self.col_kind);
        out.provenance = self.provenance.clone();
        for (r, cols) in &self.rows {
            for (c, v) in cols {
                if !drop.contains(c.as_str()) {
                    out.add(r.clone(), c.clone(), *v);
                }
            }
        }
        out
    }

    /// Sorted `(row, col, value)` triplets.
    pub fn triplets(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.rows
            .iter()
            .flat_map(|(r, cols)| cols.iter().map(move |(c, v)| (r.as_str(), c.as_str(), *v)))
    }

    pub fn sidecar(&self) -> MatrixSidecar {
        MatrixSidecar {
            row_type: self.row_kind,
            col_type: self.col_kind,
            scheme: self.provenance.scheme,
            cutoffs: self.provenance.cutoffs.clone(),
        }
    }

    /// `row_key,col_key,value` CSV. Values use the shortest representation
    /// that parses back to the same `f64`.
    pub fn write_triplets<W: Write>(&self, out: W) -> Result<()> {
        self.write_mapped(out, Some)
    }

    /// Same triplets with `log10` values, for heatmaps.
    pub fn write_log10_triplets<W: Write>(&self, out: W) -> Result<()> {
        self.write_mapped(out, |v| Some(v.log10()))
    }

    fn write_mapped<W: Write>(&self, out: W, f: impl Fn(f64) -> Option<f64>) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["row_key", "col_key", "value"])?;
        for (r, c, v) in self.triplets() {
            if let Some(v) = f(v) {
                w.write_record([r, c, v.to_string().as_str()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_triplets<R: Read>(input: R, sidecar: &MatrixSidecar) -> Result<InteractionMatrix> {
        let mut m = InteractionMatrix::new(sidecar.row_type, sidecar.col_type);
        m.provenance = Provenance {
            scheme: sidecar.scheme,
            cutoffs: sidecar.cutoffs.clone(),
        };
        let mut reader = csv::Reader::from_reader(input);
        for rec in reader.deserialize::<(String, String, f64)>() {
            let (r, c, v) = rec?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "negative or non-finite cell ({r}, {c}) = {v}"
                )));
            }
            m.add(r, c, v);
        }
        Ok(m)
    }

    /// Remove the `ceil(fraction · N)` rows with the largest sums. Among
    /// equal sums the larger key goes first.
    pub fn percentile_cutoff(&self, fraction: f64) -> Result<(InteractionMatrix, Vec<String>)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::invalid(format!(
                "percentile fraction {fraction} outside [0, 1)"
            )));
        }
        let n = self.rows.len();
        let remove = ((fraction * n as f64) - CUTOFF_EPSILON).ceil().max(0.0) as usize;
        let mut sums: Vec<(&str, f64)> = self.row_sums().into_iter().collect();
        sums.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| b.0.cmp(a.0)));
        let removed: BTreeSet<&str> = sums.iter().take(remove).map(|(k, _)| *k).collect();
        let mut out = self.retain_rows(|k| !removed.contains(k));
        out.provenance.cutoffs.push(Cutoff::Percentile {
            fraction,
            removed: removed.len(),
        });
        Ok((out, removed.into_iter().map(str::to_string).collect()))
    }

    /// Keep rows whose sum reaches `min_total`.
    pub fn threshold_cutoff(&self, min_total: f64) -> InteractionMatrix {
        let sums = self.row_sums();
        let mut out = self.retain_rows(|k| sums[k] >= min_total - CUTOFF_EPSILON);
        let removed = self.rows.len() - out.rows.len();
        out.provenance
            .cutoffs
            .push(Cutoff::Threshold { min_total, removed });
        out
    }

    /// Copy with diagonal cells (row key == col key) removed.
    pub fn zero_diagonal(&self) -> InteractionMatrix {
        let mut out = InteractionMatrix::new(self.row_kind, self.col_kind);
        out.provenance = self.provenance.clone();
        out.provenance.cutoffs.push(Cutoff::ZeroDiagonal);
        for (r, cols) in &self.rows {
            for (c, v) in cols {
                if r != c {
                    out.add(r.clone(), c.clone(), *v);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdeologyFold {
    #[default]
    Seven,
    Three,
}

impl IdeologyFold {
    pub fn dims(self) -> usize {
        match self {
            IdeologyFold::Seven => 7,
            IdeologyFold::Three => 3,
        }
    }

    pub fn bin(self, i: Ideology) -> usize {
        match self {
            IdeologyFold::Seven => i.index(),
            IdeologyFold::Three => i.leaning().index(),
        }
    }

    pub fn labels(self) -> Vec<&'static str> {
        match self {
            IdeologyFold::Seven => Ideology::ALL.iter().map(|i| i.as_str()).collect(),
            IdeologyFold::Three => crate::registry::Leaning::ALL
                .iter()
                .map(|l| l.as_str())
                .collect(),
        }
    }
}

fn fold_row(
    row: &BTreeMap<String, f64>,
    ideology_of: &impl Fn(&str) -> Option<Ideology>,
    fold: IdeologyFold,
) -> Vec<f64> {
    let mut v = vec![0.0; fold.dims()];
    for (outlet, x) in row {
        if let Some(i) = ideology_of(outlet) {
            v[fold.bin(i)] += x;
        }
    }
    v
}

fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
        Some(v)
    } else {
        None
    }
}

/// Share of a user's interactions going to each ideology bin.
pub fn consumption_vector(
    m: &InteractionMatrix,
    user: &str,
    ideology_of: impl Fn(&str) -> Option<Ideology>,
    fold: IdeologyFold,
) -> Result<Vec<f64>> {
    let row = m
        .row(user)
        .ok_or_else(|| Error::EmptyRow(user.to_string()))?;
    normalized(fold_row(row, &ideology_of, fold)).ok_or_else(|| Error::EmptyRow(user.to_string()))
}

/// Consumption vectors for every row with nonzero mass, plus the count of
/// rows that had none.
pub fn consumption_vectors(
    m: &InteractionMatrix,
    ideology_of: impl Fn(&str) -> Option<Ideology>,
    fold: IdeologyFold,
) -> (BTreeMap<String, Vec<f64>>, usize) {
    let mut out = BTreeMap::new();
    let mut empty = 0;
    for (user, row) in m.rows() {
        match normalized(fold_row(row, &ideology_of, fold)) {
            Some(v) => {
                out.insert(user.to_string(), v);
            }
            None => empty += 1,
        }
    }
    (out, empty)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub consumed: f64,
    pub supplied: f64,
    /// `log10(consumed) - log10(supplied)`; missing when either side is zero.
    pub ratio: Option<f64>,
}

/// Consumption (row sum) against supply (column sum) per GPE, with
/// self-interactions removed.
pub fn info_flow(m: &InteractionMatrix) -> Result<BTreeMap<String, FlowStats>> {
    if m.row_kind != m.col_kind || !matches!(m.row_kind, KeyKind::State | KeyKind::Country) {
        return Err(Error::invalid(format!(
            "information flow needs a square GPE matrix, got {} x {}",
            m.row_kind.as_str(),
            m.col_kind.as_str()
        )));
    }
    let off = m.zero_diagonal();
    let consumed = off.row_sums();
    let supplied = off.col_sums();
    let keys: BTreeSet<&str> = m
        .rows
        .keys()
        .map(String::as_str)
        .chain(m.column_keys())
        .collect();
    Ok(keys
        .into_iter()
        .map(|k| {
            let c = consumed.get(k).copied().unwrap_or(0.0);
            let s = supplied.get(k).copied().unwrap_or(0.0);
            let ratio = (c > 0.0 && s > 0.0).then(|| c.log10() - s.log10());
            (
                k.to_string(),
                FlowStats {
                    consumed: c,
                    supplied: s,
                    ratio,
                },
            )
        })
        .collect())
}
