//! Offline geo-parsing of free-form profile locations.
//!
//! Resolution runs in two phases:
//!
//! 1. Deterministic lookup. The description is split on `,`, `/` and `|`,
//!    each piece normalized and alias-substituted, then matched against the
//!    gazetteer index longest combination first. Every matched span
//!    contributes a candidate set of places; the candidate countries are
//!    intersected. A single surviving country resolves, anything else is
//!    reported as ambiguous. Unmatched pieces are ignored.
//! 2. Fuzzy fallback, only when phase 1 matched nothing. Pieces are compared
//!    against state and country names at edit distance at most 1.
//!
//! A bare name known in several countries is never resolved on its own; it
//! needs a corroborating piece ("Cambridge, Massachusetts").

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;
use unicode_normalization::char::is_combining_mark;

use crate::{Error, Result};

/// Pieces shorter than this are never fuzzy-matched.
pub const FUZZY_MIN_LEN: usize = 4;
pub const FUZZY_MAX_DISTANCE: usize = 1;

const KEY_SEP: char = ',';

/// Case-fold, strip diacritics and punctuation, collapse whitespace.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.nfkd() {
        if is_combining_mark(c) {
            continue;
        }
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(c.to_lowercase());
        } else if c.is_whitespace() || c == '-' || c == '_' {
            pending_space = true;
        }
    }
    out
}

fn split_pieces(description: &str) -> impl Iterator<Item = &str> {
    description.split([',', '/', '|'])
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Place {
    pub country: String,
    pub state: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazetteerRow {
    pub city: Option<String>,
    pub state: Option<String>,
    pub country: String,
}

impl GazetteerRow {
    pub fn new(city: &str, state: &str, country: &str) -> Self {
        let opt = |s: &str| {
            let s = s.trim();
            (!s.is_empty() && s != "—" && s != "-").then(|| s.to_string())
        };
        GazetteerRow {
            city: opt(city),
            state: opt(state),
            country: country.trim().to_string(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    index: HashMap<String, BTreeSet<Place>>,
    aliases: HashMap<String, String>,
    fuzzy_targets: Vec<(String, BTreeSet<Place>)>,
}

/// Every index key one row contributes, with the place each key stands for.
///
/// Keys are the non-empty ordered sub-sequences of (city, state, country).
/// A key carries the row's state only when it names the city or the state.
pub fn row_keys(row: &GazetteerRow) -> Vec<(String, Place)> {
    let parts = [
        row.city.as_deref().map(normalize),
        row.state.as_deref().map(normalize),
        Some(normalize(&row.country)),
    ];
    let mut keys = Vec::with_capacity(7);
    for mask in 1u8..8 {
        let mut names = Vec::with_capacity(3);
        let mut complete = true;
        for (bit, part) in parts.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                match part {
                    Some(p) if !p.is_empty() => names.push(p.as_str()),
                    _ => complete = false,
                }
            }
        }
        if !complete {
            continue;
        }
        let names_sub_country = mask & 0b011 != 0;
        keys.push((
            names.join(&KEY_SEP.to_string()),
            Place {
                country: row.country.clone(),
                state: if names_sub_country {
                    row.state.clone()
                } else {
                    None
                },
            },
        ));
    }
    keys
}

/// Build the lookup index from (city, state, country) rows and an alias table.
pub fn build_gazetteer(rows: &[GazetteerRow], aliases: &[(String, String)]) -> Result<Gazetteer> {
    if rows.is_empty() {
        return Err(Error::invalid("gazetteer has no rows"));
    }
    let mut index: HashMap<String, BTreeSet<Place>> = HashMap::new();
    let mut fuzzy: BTreeMap<String, BTreeSet<Place>> = BTreeMap::new();
    for row in rows {
        if normalize(&row.country).is_empty() {
            return Err(Error::invalid(format!("row without a country: {row:?}")));
        }
        for (key, place) in row_keys(row) {
            index.entry(key).or_default().insert(place);
        }
        fuzzy
            .entry(normalize(&row.country))
            .or_default()
            .insert(Place {
                country: row.country.clone(),
                state: None,
            });
        if let Some(state) = &row.state {
            fuzzy.entry(normalize(state)).or_default().insert(Place {
                country: row.country.clone(),
                state: Some(state.clone()),
            });
        }
    }

    let mut alias_map: HashMap<String, String> = HashMap::new();
    let mut collisions = Vec::new();
    for (alias, canonical) in aliases {
        let (a, c) = (normalize(alias), normalize(canonical));
        if a.is_empty() || a == c {
            continue;
        }
        match alias_map.get(&a) {
            Some(prev) if *prev != c => {
                collisions.push(format!("'{alias}' -> '{prev}' vs '{c}'"));
            }
            _ => {
                alias_map.insert(a, c);
            }
        }
    }
    if !collisions.is_empty() {
        collisions.sort();
        return Err(Error::AliasCollision(collisions));
    }
    let mut alias_keys: Vec<_> = alias_map.iter().collect();
    alias_keys.sort();
    for (alias, canonical) in alias_keys {
        let Some(places) = index.get(canonical).cloned() else {
            return Err(Error::invalid(format!(
                "alias '{alias}' points to unknown name '{canonical}'"
            )));
        };
        index.entry(alias.clone()).or_default().extend(places);
    }

    Ok(Gazetteer {
        index,
        aliases: alias_map,
        fuzzy_targets: fuzzy.into_iter().collect(),
    })
}

pub fn read_gazetteer_csv(path: &Path) -> Result<Vec<GazetteerRow>> {
    #[derive(Deserialize)]
    struct Row {
        #[serde(default)]
        city: String,
        #[serde(default)]
        state: String,
        country: String,
    }
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize::<Row>()
        .map(|r| {
            let r = r?;
            Ok(GazetteerRow::new(&r.city, &r.state, &r.country))
        })
        .collect()
}

pub fn read_aliases_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize::<(String, String)>()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum LocationResolution {
    Resolved {
        country: String,
        state: Option<String>,
    },
    Ambiguous {
        candidates: Vec<String>,
    },
    Unknown,
}

impl LocationResolution {
    pub fn country(&self) -> Option<&str> {
        match self {
            LocationResolution::Resolved { country, .. } => Some(country),
            _ => None,
        }
    }

    pub fn state(&self) -> Option<&str> {
        match self {
            LocationResolution::Resolved { state, .. } => state.as_deref(),
            _ => None,
        }
    }
}

impl Gazetteer {
    pub fn key_count(&self) -> usize {
        self.index.len()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn lookup(&self, key: &str) -> Option<&BTreeSet<Place>> {
        self.index.get(key)
    }

    fn pieces(&self, description: &str) -> Vec<String> {
        split_pieces(description)
            .map(normalize)
            .filter(|p| !p.is_empty())
            .map(|p| self.aliases.get(&p).cloned().unwrap_or(p))
            .collect()
    }

    /// Resolve one description. Pure and deterministic.
    pub fn parse_location(&self, description: &str) -> LocationResolution {
        let pieces = self.pieces(description);
        if pieces.is_empty() {
            return LocationResolution::Unknown;
        }

        let mut spans: Vec<&BTreeSet<Place>> = Vec::new();
        let mut i = 0;
        while i < pieces.len() {
            let mut matched = 0;
            for len in (1..=3.min(pieces.len() - i)).rev() {
                let key = pieces[i..i + len].join(&KEY_SEP.to_string());
                if let Some(places) = self.index.get(&key) {
                    spans.push(places);
                    matched = len;
                    break;
                }
            }
            i += matched.max(1);
        }
        if !spans.is_empty() {
            return combine(&spans);
        }

        let fuzzy: Vec<BTreeSet<Place>> = pieces
            .iter()
            .filter_map(|p| self.fuzzy_candidates(p))
            .collect();
        if fuzzy.is_empty() {
            LocationResolution::Unknown
        } else {
            combine(&fuzzy.iter().collect::<Vec<_>>())
        }
    }

    fn fuzzy_candidates(&self, piece: &str) -> Option<BTreeSet<Place>> {
        let len = piece.chars().count();
        if len < FUZZY_MIN_LEN {
            return None;
        }
        let mut found = BTreeSet::new();
        for (name, places) in &self.fuzzy_targets {
            if name.chars().count().abs_diff(len) > FUZZY_MAX_DISTANCE {
                continue;
            }
            if strsim::levenshtein(piece, name) <= FUZZY_MAX_DISTANCE {
                found.extend(places.iter().cloned());
            }
        }
        (!found.is_empty()).then_some(found)
    }
}

fn combine(spans: &[&BTreeSet<Place>]) -> LocationResolution {
    let country_sets: Vec<BTreeSet<&str>> = spans
        .iter()
        .map(|s| s.iter().map(|p| p.country.as_str()).collect())
        .collect();
    let mut surviving = country_sets[0].clone();
    for set in &country_sets[1..] {
        surviving.retain(|c| set.contains(c));
    }
    let candidates: BTreeSet<&str> = if surviving.is_empty() {
        country_sets.iter().flatten().copied().collect()
    } else {
        surviving
    };
    if candidates.len() != 1 {
        return LocationResolution::Ambiguous {
            candidates: candidates.into_iter().map(str::to_string).collect(),
        };
    }
    let country = *candidates.first().expect("one candidate");

    // Spans that only know the country (or a stateless city) do not constrain the state.
    let mut state: Option<BTreeSet<&str>> = None;
    for span in spans {
        let in_country: Vec<&Place> = span.iter().filter(|p| p.country == country).collect();
        if in_country.iter().any(|p| p.state.is_none()) {
            continue;
        }
        let states: BTreeSet<&str> = in_country
            .iter()
            .filter_map(|p| p.state.as_deref())
            .collect();
        state = Some(match state {
            None => states,
            Some(prev) => prev.intersection(&states).copied().collect(),
        });
    }
    let state = state
        .filter(|s| s.len() == 1)
        .and_then(|s| s.first().map(|s| s.to_string()));
    LocationResolution::Resolved {
        country: country.to_string(),
        state,
    }
}

/// Resolve many descriptions, parsing each distinct string once.
pub fn resolve_unique<'a>(
    g: &Gazetteer,
    descriptions: impl IntoIterator<Item = &'a str>,
) -> HashMap<String, LocationResolution> {
    let unique: BTreeSet<&str> = descriptions.into_iter().collect();
    unique
        .into_par_iter()
        .map(|d| (d.to_string(), g.parse_location(d)))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub resolved: u64,
    /// Subset of `resolved`.
    pub resolved_with_state: u64,
    pub ambiguous: u64,
    pub unknown: u64,
}

impl OutcomeCounts {
    fn add(&mut self, r: &LocationResolution, n: u64) {
        match r {
            LocationResolution::Resolved { state, .. } => {
                self.resolved += n;
                if state.is_some() {
                    self.resolved_with_state += n;
                }
            }
            LocationResolution::Ambiguous { .. } => self.ambiguous += n,
            LocationResolution::Unknown => self.unknown += n,
        }
    }

    pub fn total(&self) -> u64 {
        self.resolved + self.ambiguous + self.unknown
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// One count per distinct description.
    pub unique: OutcomeCounts,
    /// Weighted by the number of users sharing each description.
    pub users: OutcomeCounts,
}

pub fn corpus_stats<'a>(
    resolutions: impl IntoIterator<Item = (&'a LocationResolution, u64)>,
) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for (r, users) in resolutions {
        stats.unique.add(r, 1);
        stats.users.add(r, users);
    }
    stats
}
