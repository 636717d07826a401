//! Media-outlet registry: bias and factuality ratings, credibility rules and
//! Twitter-handle resolution.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::urls::registrable_domain;
use crate::{Error, Result};

/// Seven-point political bias scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ideology {
    ExtremeLeft,
    Left,
    CenterLeft,
    Center,
    CenterRight,
    Right,
    ExtremeRight,
}

impl Ideology {
    pub const ALL: [Ideology; 7] = [
        Ideology::ExtremeLeft,
        Ideology::Left,
        Ideology::CenterLeft,
        Ideology::Center,
        Ideology::CenterRight,
        Ideology::Right,
        Ideology::ExtremeRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ideology::ExtremeLeft => "extreme-left",
            Ideology::Left => "left",
            Ideology::CenterLeft => "center-left",
            Ideology::Center => "center",
            Ideology::CenterRight => "center-right",
            Ideology::Right => "right",
            Ideology::ExtremeRight => "extreme-right",
        }
    }

    pub fn leaning(self) -> Leaning {
        match self {
            Ideology::ExtremeLeft | Ideology::Left | Ideology::CenterLeft => Leaning::Left,
            Ideology::Center => Leaning::Center,
            Ideology::CenterRight | Ideology::Right | Ideology::ExtremeRight => Leaning::Right,
        }
    }
}

impl fmt::Display for Ideology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ideology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '_' { '-' } else { c })
            .collect();
        Ok(match k.as_str() {
            "extreme-left" | "far-left" => Ideology::ExtremeLeft,
            "left" => Ideology::Left,
            "center-left" | "left-center" | "centre-left" => Ideology::CenterLeft,
            "center" | "centre" | "least-biased" => Ideology::Center,
            "center-right" | "right-center" | "centre-right" => Ideology::CenterRight,
            "right" => Ideology::Right,
            "extreme-right" | "far-right" => Ideology::ExtremeRight,
            _ => return Err(Error::invalid(format!("unknown ideology '{s}'"))),
        })
    }
}

/// Three-way fold of [`Ideology`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Leaning {
    Left,
    Center,
    Right,
}

impl Leaning {
    pub const ALL: [Leaning; 3] = [Leaning::Left, Leaning::Center, Leaning::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Leaning::Left => "left",
            Leaning::Center => "center",
            Leaning::Right => "right",
        }
    }
}

/// Factuality bands, most factual first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Factuality {
    VeryHigh,
    High,
    MostlyFactual,
    Mixed,
    Low,
    VeryLow,
}

impl Factuality {
    pub const ALL: [Factuality; 6] = [
        Factuality::VeryHigh,
        Factuality::High,
        Factuality::MostlyFactual,
        Factuality::Mixed,
        Factuality::Low,
        Factuality::VeryLow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Factuality::VeryHigh => "very-high",
            Factuality::High => "high",
            Factuality::MostlyFactual => "mostly-factual",
            Factuality::Mixed => "mixed",
            Factuality::Low => "low",
            Factuality::VeryLow => "very-low",
        }
    }
}

/// Band a 0–10 factuality score; lower scores are more factual.
pub fn factuality_category(score: i64) -> Result<Factuality> {
    Ok(match score {
        0 => Factuality::VeryHigh,
        1..=2 => Factuality::High,
        3..=4 => Factuality::MostlyFactual,
        5..=6 => Factuality::Mixed,
        7..=9 => Factuality::Low,
        10 => Factuality::VeryLow,
        _ => return Err(Error::FactualityOutOfRange(score)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Credibility {
    High,
    Mixed,
    Low,
    /// Not enough rated fields to apply any rule.
    Undetermined,
}

impl Credibility {
    pub fn as_str(self) -> &'static str {
        match self {
            Credibility::High => "high",
            Credibility::Mixed => "mixed",
            Credibility::Low => "low",
            Credibility::Undetermined => "undetermined",
        }
    }
}

impl FromStr for Credibility {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(Credibility::High),
            "mixed" | "medium" => Ok(Credibility::Mixed),
            "low" => Ok(Credibility::Low),
            "" | "undetermined" | "n/a" => Ok(Credibility::Undetermined),
            _ => Err(Error::invalid(format!("unknown credibility '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Traffic {
    High,
    Medium,
    Low,
}

impl FromStr for Traffic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(Traffic::High),
            "medium" => Ok(Traffic::Medium),
            "low" | "minimal" => Ok(Traffic::Low),
            _ => Err(Error::invalid(format!("unknown traffic '{s}'"))),
        }
    }
}

/// Handle case and a leading `@` are not significant.
pub fn normalize_handle(h: &str) -> String {
    h.trim().trim_start_matches('@').to_ascii_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaOutlet {
    pub id: String,
    pub name: String,
    pub canonical_url: String,
    pub country: String,
    /// Sub-national location, where the registry knows it.
    #[serde(default)]
    pub state: Option<String>,
    pub ideology: Ideology,
    pub factuality_score: Option<i64>,
    pub credibility: Option<Credibility>,
    pub traffic: Option<Traffic>,
    pub failed_fact_checks: Option<u32>,
    pub questionable: Option<bool>,
    pub handles: BTreeSet<String>,
}

impl MediaOutlet {
    pub fn factuality(&self) -> Option<Factuality> {
        self.factuality_score
            .and_then(|s| factuality_category(s).ok())
    }

    pub fn domain(&self) -> Option<String> {
        registrable_domain(&self.canonical_url)
    }
}

/// Thresholds for the "few" / "many" failed fact checks split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredibilityPolicy {
    /// At most this many failed checks counts as "few"; more counts as "many".
    pub few_failed_max: u32,
}

impl Default for CredibilityPolicy {
    fn default() -> Self {
        CredibilityPolicy { few_failed_max: 2 }
    }
}

/// Derive credibility from the rated fields. Rules are tried in order and
/// the first that applies wins; a questionable/conspiracy rating overrides
/// everything else.
pub fn classify_credibility(outlet: &MediaOutlet, policy: CredibilityPolicy) -> Credibility {
    use Credibility as C;
    use Factuality as F;

    if outlet.questionable == Some(true) {
        return C::Low;
    }
    let Some(factuality) = outlet.factuality() else {
        return C::Undetermined;
    };
    let high_or_medium = matches!(outlet.traffic, Some(Traffic::High | Traffic::Medium));
    let low_traffic = outlet.traffic == Some(Traffic::Low);
    match factuality {
        F::VeryHigh | F::High => C::High,
        F::MostlyFactual if high_or_medium => C::High,
        F::MostlyFactual if low_traffic && outlet.ideology != Ideology::Center => C::Mixed,
        F::MostlyFactual => C::Undetermined,
        F::Mixed if high_or_medium => C::Mixed,
        F::Mixed if low_traffic => match outlet.failed_fact_checks {
            Some(n) if n <= policy.few_failed_max => C::Mixed,
            Some(_) => C::Low,
            None => C::Undetermined,
        },
        F::Mixed => C::Undetermined,
        F::Low | F::VeryLow => C::Low,
    }
}

/// Immutable set of outlets with registry-wide unique handles.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Registry {
    outlets: Vec<MediaOutlet>,
}

/// Dense outlet index into a [`Registry`].
pub type OutletIdx = u32;

impl Registry {
    /// Validate and normalize. Handles are lowercased; every handle must
    /// belong to exactly one outlet and outlet ids must be unique.
    pub fn new(mut outlets: Vec<MediaOutlet>) -> Result<Self> {
        let mut ids = HashSet::new();
        for o in &mut outlets {
            if !ids.insert(o.id.clone()) {
                return Err(Error::invalid(format!("duplicate outlet id '{}'", o.id)));
            }
            if let Some(score) = o.factuality_score {
                factuality_category(score)?;
            }
            o.handles = o
                .handles
                .iter()
                .map(|h| normalize_handle(h))
                .filter(|h| !h.is_empty())
                .collect();
        }
        let registry = Registry { outlets };
        registry.handle_map()?;
        Ok(registry)
    }

    pub fn outlets(&self) -> &[MediaOutlet] {
        &self.outlets
    }

    pub fn len(&self) -> usize {
        self.outlets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outlets.is_empty()
    }

    pub fn get(&self, idx: OutletIdx) -> &MediaOutlet {
        &self.outlets[idx as usize]
    }

    pub fn position(&self, id: &str) -> Option<OutletIdx> {
        self.outlets
            .iter()
            .position(|o| o.id == id)
            .map(|i| i as OutletIdx)
    }

    pub fn by_id(&self) -> HashMap<&str, &MediaOutlet> {
        self.outlets.iter().map(|o| (o.id.as_str(), o)).collect()
    }

    /// Map every registered handle to its outlet; multi-handle outlets
    /// collapse onto one outlet.
    pub fn handle_map(&self) -> Result<HandleMap> {
        let mut handles: HashMap<String, OutletIdx> = HashMap::new();
        for (i, o) in self.outlets.iter().enumerate() {
            for h in &o.handles {
                if let Some(&prev) = handles.get(h)
                    && prev as usize != i
                {
                    return Err(Error::DuplicateHandle {
                        handle: h.clone(),
                        first: self.outlets[prev as usize].id.clone(),
                        second: o.id.clone(),
                    });
                }
                handles.insert(h.clone(), i as OutletIdx);
            }
        }

        // A domain shared by several outlets cannot attribute a URL share.
        let mut domain_owners: BTreeMap<String, BTreeSet<OutletIdx>> = BTreeMap::new();
        for (i, o) in self.outlets.iter().enumerate() {
            if let Some(d) = o.domain() {
                domain_owners.entry(d).or_default().insert(i as OutletIdx);
            }
        }
        let domains = domain_owners
            .into_iter()
            .filter(|(_, owners)| owners.len() == 1)
            .map(|(d, owners)| (d, *owners.first().expect("one owner")))
            .collect();
        Ok(HandleMap { handles, domains })
    }

    /// Fill missing credibility ratings from the rules; undetermined stays `None`.
    pub fn derive_credibility(&mut self, policy: CredibilityPolicy) {
        for o in &mut self.outlets {
            if o.credibility.is_none() {
                let c = classify_credibility(o, policy);
                o.credibility = (c != Credibility::Undetermined).then_some(c);
            }
        }
    }

    pub fn set_handles(&mut self, idx: OutletIdx, handles: BTreeSet<String>) -> Result<()> {
        self.outlets[idx as usize].handles = handles.iter().map(|h| normalize_handle(h)).collect();
        self.handle_map().map(|_| ())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.outlets).expect("registry serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Registry::new(serde_json::from_str(text)?)
    }

    /// Load from `.json` (array of outlets) or CSV with columns
    /// `id,name,url,country,state,ideology,factuality_score,credibility,traffic,
    /// failed_fact_checks,questionable,handles` (handles `;`-separated).
    pub fn load(path: &Path) -> Result<Self> {
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            return Registry::from_json(&std::fs::read_to_string(path)?);
        }
        let mut reader = csv::Reader::from_path(path)?;
        let mut outlets = Vec::new();
        for row in reader.deserialize::<CsvOutlet>() {
            outlets.push(row?.into_outlet()?);
        }
        Registry::new(outlets)
    }
}

#[derive(Deserialize)]
struct CsvOutlet {
    #[serde(default)]
    id: String,
    name: String,
    url: String,
    country: String,
    #[serde(default)]
    state: String,
    ideology: String,
    #[serde(default)]
    factuality_score: Option<i64>,
    #[serde(default)]
    credibility: String,
    #[serde(default)]
    traffic: String,
    #[serde(default)]
    failed_fact_checks: Option<u32>,
    #[serde(default)]
    questionable: Option<bool>,
    #[serde(default)]
    handles: String,
}

impl CsvOutlet {
    fn into_outlet(self) -> Result<MediaOutlet> {
        let credibility = match self.credibility.parse::<Credibility>()? {
            Credibility::Undetermined => None,
            c => Some(c),
        };
        let traffic = if self.traffic.trim().is_empty() {
            None
        } else {
            Some(self.traffic.parse()?)
        };
        Ok(MediaOutlet {
            id: if self.id.trim().is_empty() {
                self.name.clone()
            } else {
                self.id
            },
            name: self.name,
            canonical_url: self.url,
            country: self.country,
            state: Some(self.state.trim().to_string()).filter(|s| !s.is_empty()),
            ideology: self.ideology.parse()?,
            factuality_score: self.factuality_score,
            credibility,
            traffic,
            failed_fact_checks: self.failed_fact_checks,
            questionable: self.questionable,
            handles: self
                .handles
                .split(';')
                .map(normalize_handle)
                .filter(|h| !h.is_empty())
                .collect(),
        })
    }
}

/// Handle → outlet and registrable domain → outlet lookups.
#[derive(Debug, Clone, Default)]
pub struct HandleMap {
    handles: HashMap<String, OutletIdx>,
    domains: HashMap<String, OutletIdx>,
}

impl HandleMap {
    pub fn outlet_for_handle(&self, handle: &str) -> Option<OutletIdx> {
        self.handles.get(handle).copied()
    }

    pub fn outlet_for_url(&self, url: &str) -> Option<OutletIdx> {
        registrable_domain(url).and_then(|d| self.domains.get(&d).copied())
    }

    pub fn len(&self) -> usize {
        self.handles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }
}

/// Search results and redirect table standing in for live lookups.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HandleResolutionFixture {
    pub searches: BTreeMap<String, Vec<SearchCandidate>>,
    #[serde(default)]
    pub redirects: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchCandidate {
    pub handle: String,
    #[serde(default)]
    pub urls: Vec<String>,
}

/// Only the first results of each search are inspected.
pub const SEARCH_DEPTH: usize = 10;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HandleResolution {
    pub handles: BTreeSet<String>,
    pub warnings: Vec<String>,
}

impl HandleResolutionFixture {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Follow the redirect table to its end.
    pub fn resolve_redirects(&self, url: &str) -> Result<String> {
        let mut seen = HashSet::new();
        let mut current = url;
        while let Some(next) = self.redirects.get(current) {
            if !seen.insert(current) {
                return Err(Error::RedirectCycle(url.to_string()));
            }
            current = next;
        }
        Ok(current.to_string())
    }
}

/// Find the outlet's accounts by matching profile URLs against its site.
pub fn resolve_handles(
    outlet: &MediaOutlet,
    fixture: &HandleResolutionFixture,
) -> Result<HandleResolution> {
    let mut out = HandleResolution::default();
    let Some(candidates) = fixture.searches.get(&outlet.name) else {
        out.warnings
            .push(format!("no search results recorded for '{}'", outlet.name));
        return Ok(out);
    };
    let Some(target) = outlet.domain() else {
        out.warnings
            .push(format!("outlet '{}' has no usable url", outlet.id));
        return Ok(out);
    };
    for candidate in candidates.iter().take(SEARCH_DEPTH) {
        for url in &candidate.urls {
            let resolved = fixture.resolve_redirects(url)?;
            if registrable_domain(&resolved).as_deref() == Some(target.as_str()) {
                out.handles.insert(normalize_handle(&candidate.handle));
                break;
            }
        }
    }
    Ok(out)
}
