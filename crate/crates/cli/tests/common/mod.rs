//! Synthetic inputs shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::seq::IndexedRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Value, json};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mediaflow")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn run_ok(config: &Path, out: &Path, args: &[&str]) -> String {
    let o = run(config, out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

/// What a synthetic tweet references.
#[derive(Debug, Clone, Default)]
pub struct TweetSpec {
    pub retweet_of: Option<String>,
    pub quote_of: Option<String>,
    pub reply_to: Option<String>,
    pub mentions: Vec<String>,
    pub urls: Vec<String>,
}

pub fn tweet_line(id: u64, user: &str, location: &str, ts: i64, t: &TweetSpec) -> String {
    let mut v = json!({
        "id_str": id.to_string(),
        "timestamp_ms": ts.to_string(),
        "text": "synthetic",
        "user": { "id_str": user, "screen_name": format!("u{user}"), "location": location },
        "entities": {
            "user_mentions": t.mentions.iter().map(|m| json!({ "screen_name": m })).collect::<Vec<_>>(),
            "urls": t.urls.iter().map(|u| json!({ "url": "https://t.co/x", "expanded_url": u })).collect::<Vec<_>>(),
        },
    });
    if let Some(h) = &t.retweet_of {
        v["retweeted_status"] = json!({ "id_str": "1", "user": { "screen_name": h } });
    }
    if let Some(h) = &t.quote_of {
        v["quoted_status"] = json!({ "id_str": "2", "user": { "screen_name": h } });
    }
    if let Some(h) = &t.reply_to {
        v["in_reply_to_screen_name"] = Value::from(h.as_str());
        v["in_reply_to_user_id_str"] = Value::from("3");
        v["in_reply_to_status_id_str"] = Value::from("4");
    }
    v.to_string()
}

pub struct Outlet {
    pub id: &'static str,
    pub country: &'static str,
    pub state: &'static str,
    pub ideology: &'static str,
}

impl Outlet {
    pub fn handle(&self) -> String {
        self.id.to_ascii_lowercase()
    }

    pub fn url(&self) -> String {
        let tld = if self.country == "United States" {
            "com"
        } else {
            "co.uk"
        };
        format!("https://www.{}.{tld}", self.id.to_ascii_lowercase())
    }

    fn left(&self) -> bool {
        self.ideology.contains("left")
    }
}

const fn o(
    id: &'static str,
    country: &'static str,
    state: &'static str,
    ideology: &'static str,
) -> Outlet {
    Outlet {
        id,
        country,
        state,
        ideology,
    }
}

pub const US: &str = "United States";
pub const UK: &str = "United Kingdom";

pub const OUTLETS: &[Outlet] = &[
    o("Ledger", US, "New York", "left"),
    o("Courier", US, "New York", "left-center"),
    o("Herald", US, "Illinois", "left-center"),
    o("Gazette", US, "Texas", "right"),
    o("Sentinel", US, "Florida", "right-center"),
    o("Tribune", US, "Illinois", "center"),
    o("Beacon", US, "Massachusetts", "left"),
    o("Patriot", US, "Texas", "extreme-right"),
    o("Dispatch", US, "Ohio", "right"),
    o("Chronicle", US, "Washington", "left-center"),
    o("Observer", UK, "England", "left-center"),
    o("Standard", UK, "England", "right"),
    o("Crown", UK, "England", "right-center"),
    o("Clarion", UK, "Scotland", "left"),
    o("Wire", UK, "", "center"),
];

/// (city, state, country, share of left-leaning residents)
pub const PLACES: &[(&str, &str, &str, f64)] = &[
    ("Chicago", "Illinois", US, 0.7),
    ("Houston", "Texas", US, 0.3),
    ("Phoenix", "Arizona", US, 0.5),
    ("Seattle", "Washington", US, 0.8),
    ("Denver", "Colorado", US, 0.6),
    ("Miami", "Florida", US, 0.4),
    ("Atlanta", "Georgia", US, 0.5),
    ("Detroit", "Michigan", US, 0.55),
    ("Boston", "Massachusetts", US, 0.85),
    ("Nashville", "Tennessee", US, 0.25),
    ("Columbus", "Ohio", US, 0.45),
    ("Albany", "New York", US, 0.75),
    ("Manchester", "England", UK, 0.6),
    ("Glasgow", "Scotland", UK, 0.7),
    ("Cardiff", "Wales", UK, 0.55),
];

pub fn registry_csv() -> String {
    let mut registry = String::from(
        "id,name,url,country,state,ideology,factuality_score,credibility,traffic,failed_fact_checks,questionable,handles\n",
    );
    for (i, out) in OUTLETS.iter().enumerate() {
        writeln!(
            registry,
            "{},{} News,{},{},{},{},{},,high,{},false,{}",
            out.id,
            out.id,
            out.url(),
            out.country,
            out.state,
            out.ideology,
            3 + i % 6,
            i % 4,
            out.handle()
        )
        .unwrap();
    }
    registry
}

pub struct World {
    pub dir: PathBuf,
    pub config: PathBuf,
}

/// Write a complete synthetic corpus, registry, gazetteer and vote file
/// under `dir` together with a config that enables every analysis.
pub fn write_world(dir: &Path, users: usize, seed: u64) -> World {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    fs::write(dir.join("registry.csv"), registry_csv()).unwrap();

    let mut gazetteer = String::from("city,state,country\n");
    for (city, state, country, _) in PLACES {
        writeln!(gazetteer, "{city},{state},{country}").unwrap();
    }
    writeln!(gazetteer, "New York,New York,{US}").unwrap();
    writeln!(gazetteer, "London,England,{UK}").unwrap();
    writeln!(gazetteer, "London,Ontario,Canada").unwrap();
    fs::write(dir.join("gazetteer.csv"), gazetteer).unwrap();
    fs::write(
        dir.join("aliases.csv"),
        "alias,name\nUSA,United States\nUK,United Kingdom\n",
    )
    .unwrap();

    let mut votes = String::from("state,dem_votes,rep_votes\n");
    for (_, state, country, left) in PLACES {
        if *country == US {
            let total = 1_000_000.0;
            let dem = (total * (0.2 + 0.6 * left)).round();
            writeln!(votes, "{state},{dem},{}", total - dem).unwrap();
        }
    }
    fs::write(dir.join("votes.csv"), votes).unwrap();

    let mut lines = Vec::new();
    let mut tweet_id = 10_000u64;
    let mut ts = 1_600_000_000_000i64;
    let mut undelivered = 0u64;
    for u in 0..users {
        let &(city, state, country, left_share) = PLACES.choose(&mut rng).unwrap();
        let location = match rng.random_range(0..4) {
            0 => format!("{city}, {state}"),
            1 => city.to_string(),
            2 => format!("{city}, {}", if country == US { "USA" } else { "UK" }),
            _ => format!("somewhere near {city}"),
        };
        let location = if rng.random_range(0..20) == 0 {
            "London".to_string()
        } else {
            location
        };
        let left = rng.random_bool(left_share);
        let user = format!("{}", 500 + u);
        let n = rng.random_range(10..30);
        for _ in 0..n {
            tweet_id += 1;
            ts += rng.random_range(1..500);
            let pick = |rng: &mut ChaCha8Rng| -> &'static Outlet {
                let local = rng.random_bool(0.55);
                let aligned = rng.random_bool(0.85);
                let pool: Vec<&Outlet> = OUTLETS
                    .iter()
                    .filter(|o| (o.country == country) == local && (o.left() == left) == aligned)
                    .collect();
                let pool = if pool.is_empty() {
                    OUTLETS.iter().collect()
                } else {
                    pool
                };
                pool.choose(rng).unwrap()
            };
            let mut t = TweetSpec::default();
            match rng.random_range(0..7) {
                0 => t.retweet_of = Some(pick(&mut rng).handle()),
                1 => t.quote_of = Some(pick(&mut rng).handle()),
                2 => t.reply_to = Some(pick(&mut rng).handle()),
                3 => t
                    .urls
                    .push(format!("{}/story/{tweet_id}", pick(&mut rng).url())),
                4 => {
                    for _ in 0..rng.random_range(1..4) {
                        t.mentions.push(pick(&mut rng).handle());
                    }
                }
                5 => {
                    t.quote_of = Some(pick(&mut rng).handle());
                    t.mentions.push(pick(&mut rng).handle());
                    t.urls.push(pick(&mut rng).url());
                }
                _ => t.mentions.push("friend".into()),
            }
            lines.push(tweet_line(tweet_id, &user, &location, ts, &t));
            if rng.random_range(0..200) == 0 {
                undelivered += rng.random_range(1..20);
                lines.push(format!(
                    r#"{{"limit":{{"track":{undelivered},"timestamp_ms":"{ts}"}}}}"#
                ));
            }
            if rng.random_range(0..300) == 0 {
                lines.push("{\"truncated".into());
            }
        }
    }
    fs::write(dir.join("tweets.ndjson"), lines.join("\n") + "\n").unwrap();

    let config = dir.join("config.toml");
    fs::write(
        &config,
        r#"scheme = "weighted"
workers = 2
seed = 11

[paths]
tweets = "tweets.ndjson"
gazetteer = "gazetteer.csv"
aliases = "aliases.csv"
registry = "registry.csv"
votes = "votes.csv"
output = "run"

[cutoffs]
percentile = 0.02
threshold = 5.0

[clustering]
k = 4
seeds = [1, 2, 3]
k_min = 2
k_max = 6
fold = "seven"

[[pairs]]
local = "United States"
foreign = "United Kingdom"
k_sg = 3
k_tg = 2
seeds = [2, 3]

[[pairs]]
local = "United Kingdom"
foreign = "United States"
k_sg = 2
k_tg = 2
ablate = "Wire"

[regression]
country = "United States"
top_n = [5, 10]
folds = 4
lambdas = [0.01, 1.0]
"#,
    )
    .unwrap();
    World {
        dir: dir.to_path_buf(),
        config,
    }
}

pub const STAGES: &[&str] = &[
    "ingest", "geoparse", "matrix", "cluster", "pair", "regress", "report",
];

/// Every file under `run_dir`, relative path to contents, skipping
/// manifests (they carry timings).
pub fn snapshot(run_dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![run_dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                let rel = p.strip_prefix(run_dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}
