use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use mediaflow::clustering::{self, StabilityParams};
use mediaflow::crosscountry::{self, Predominant};
use mediaflow::geoparse::{self, LocationResolution};
use mediaflow::ingest::{TweetRecord, open_stream};
use mediaflow::interactions::{
    self, EntityKey, IdeologyFold, InteractionMatrix, KeyKind, MatrixSidecar, build_matrix,
    state_key,
};
use mediaflow::pipeline::{self, StreamOptions};
use mediaflow::registry::{CredibilityPolicy, HandleResolutionFixture, Registry, resolve_handles};
use mediaflow::regression::{self, DatasetParams, ModelSpec};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::CliError;
use crate::config::Config;
use crate::stage::Stage;

/// Geoparse output row.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct UserLocation {
    user_id: String,
    outcome: String,
    country: String,
    state: String,
}

fn load_records(path: &Path) -> Result<Vec<TweetRecord>, CliError> {
    let reader = BufReader::new(File::open(path)?);
    reader
        .lines()
        .map(|l| Ok(TweetRecord::from_json(&l?)?))
        .collect()
}

fn load_users(path: &Path) -> Result<BTreeMap<String, UserLocation>, CliError> {
    let mut out = BTreeMap::new();
    for row in csv::Reader::from_path(path)?.deserialize::<UserLocation>() {
        let row = row?;
        out.insert(row.user_id.clone(), row);
    }
    Ok(out)
}

fn load_registry(cfg: &Config, stage: &mut Stage) -> Result<Registry, CliError> {
    let path = stage.input(cfg.paths.require("registry")?)?;
    let mut registry = Registry::load(&path)?;
    registry.derive_credibility(CredibilityPolicy::default());
    if let Some(fixture) = &cfg.paths.handle_fixture {
        let fixture = HandleResolutionFixture::load(&stage.input(fixture)?)?;
        for idx in 0..registry.len() as u32 {
            if registry.get(idx).handles.is_empty() {
                let found = resolve_handles(registry.get(idx), &fixture)?;
                registry.set_handles(idx, found.handles)?;
            }
        }
    }
    Ok(registry)
}

fn load_matrix(stage: &mut Stage, name: &str) -> Result<InteractionMatrix, CliError> {
    let sidecar_path = stage.upstream_file("matrix", &format!("{name}.json"))?;
    let sidecar: MatrixSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)
        .map_err(|e| CliError::new("schema", format!("{name}.json: {e}")))?;
    let path = stage.upstream_file("matrix", &format!("{name}.csv"))?;
    Ok(InteractionMatrix::read_triplets(
        File::open(path)?,
        &sidecar,
    )?)
}

fn write_matrix(stage: &mut Stage, name: &str, m: &InteractionMatrix) -> Result<(), CliError> {
    m.write_triplets(stage.create(&format!("{name}.csv"))?)?;
    stage.write_json(&format!("{name}.json"), &m.sidecar())
}

pub fn ingest(cfg: &Config) -> Result<String, CliError> {
    let mut stage = Stage::begin(
        &cfg.paths.output,
        "ingest",
        json!({ "workers": cfg.workers }),
    )?;
    let tweets = stage.input(cfg.paths.require("tweets")?)?;
    let out = pipeline::process_stream(
        open_stream(&tweets)?,
        StreamOptions {
            workers: cfg.workers,
            keep_records: true,
            extract: None,
        },
    )?;
    let mut w = stage.create("records.ndjson")?;
    for r in &out.records {
        writeln!(w, "{}", r.to_json())?;
    }
    w.flush()?;
    drop(w);
    stage.write_json(
        "summary.json",
        &json!({ "counts": out.counts, "sampling": out.sampling }),
    )?;
    stage.commit(out.counts.lines)?;
    Ok(format!(
        "ingest: {} lines, {} tweets, sampling rate {:.4}",
        out.counts.lines, out.counts.tweets, out.sampling.rate
    ))
}

pub fn geoparse(cfg: &Config) -> Result<String, CliError> {
    let mut stage = Stage::begin(&cfg.paths.output, "geoparse", json!({}))?;
    let records = load_records(&stage.upstream_file("ingest", "records.ndjson")?)?;
    let rows = geoparse::read_gazetteer_csv(&stage.input(cfg.paths.require("gazetteer")?)?)?;
    let aliases = match &cfg.paths.aliases {
        Some(p) => geoparse::read_aliases_csv(&stage.input(p)?)?,
        None => Vec::new(),
    };
    let gazetteer = geoparse::build_gazetteer(&rows, &aliases)?;

    // The most recent profile location of each user.
    let mut latest: BTreeMap<&str, (i64, &str)> = BTreeMap::new();
    for r in &records {
        let entry = latest
            .entry(&r.author_id)
            .or_insert((r.created_at, &r.author_description));
        if r.created_at >= entry.0 {
            *entry = (r.created_at, &r.author_description);
        }
    }
    let resolved = geoparse::resolve_unique(&gazetteer, latest.values().map(|(_, d)| *d));
    let mut users_per_description: BTreeMap<&str, u64> = BTreeMap::new();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(stage.create("users.csv")?);
    for (user, (_, desc)) in &latest {
        *users_per_description.entry(desc).or_default() += 1;
        let r = &resolved[*desc];
        let outcome = match r {
            LocationResolution::Resolved { .. } => "resolved",
            LocationResolution::Ambiguous { .. } => "ambiguous",
            LocationResolution::Unknown => "unknown",
        };
        w.serialize(UserLocation {
            user_id: user.to_string(),
            outcome: outcome.into(),
            country: r.country().unwrap_or_default().into(),
            state: r.state().unwrap_or_default().into(),
        })?;
    }
    w.flush()?;
    drop(w);
    let stats = geoparse::corpus_stats(
        users_per_description
            .iter()
            .map(|(d, n)| (&resolved[*d], *n)),
    );
    stage.write_json("stats.json", &stats)?;
    stage.commit(latest.len() as u64)?;
    Ok(format!(
        "geoparse: {} users, {} resolved ({} with state), {} ambiguous, {} unknown",
        stats.users.total(),
        stats.users.resolved,
        stats.users.resolved_with_state,
        stats.users.ambiguous,
        stats.users.unknown
    ))
}

pub fn matrix(cfg: &Config) -> Result<String, CliError> {
    let params = json!({ "scheme": cfg.scheme, "percentile": cfg.cutoffs.percentile, "workers": cfg.workers });
    let mut stage = Stage::begin(&cfg.paths.output, "matrix", params)?;
    let records = load_records(&stage.upstream_file("ingest", "records.ndjson")?)?;
    let users = load_users(&stage.upstream_file("geoparse", "users.csv")?)?;
    let registry = load_registry(cfg, &mut stage)?;
    let handles = registry.handle_map()?;
    let events = pipeline::extract_all(&records, &handles, cfg.scheme, cfg.workers)?;
    let media_tweets = events
        .iter()
        .map(|e| &e.tweet_id)
        .collect::<BTreeSet<_>>()
        .len();

    let full = build_matrix(
        &events,
        KeyKind::User,
        KeyKind::Outlet,
        |e| Some(EntityKey::user(&e.user_id)),
        |e| Some(EntityKey::outlet(&registry.get(e.outlet).id)),
    )?
    .matrix;
    let (user_outlet, removed) = full.percentile_cutoff(cfg.cutoffs.percentile)?;

    let outlets = registry.by_id();
    let located = |u: &str| users.get(u).filter(|l| l.outcome == "resolved");
    let user_state = |u: &str| {
        located(u)
            .filter(|l| !l.state.is_empty())
            .map(|l| state_key(&l.country, &l.state))
    };
    let user_country = |u: &str| located(u).map(|l| l.country.clone());
    let outlet_state = |o: &str| {
        outlets
            .get(o)
            .and_then(|m| m.state.as_ref().map(|s| state_key(&m.country, s)))
    };
    let outlet_country = |o: &str| outlets.get(o).map(|m| m.country.clone());
    let outlet_ideology = |o: &str| outlets.get(o).map(|m| m.ideology.as_str().to_string());
    let same = |o: &str| Some(o.to_string());

    let (state_outlet, _) =
        user_outlet.aggregate(KeyKind::State, KeyKind::Outlet, user_state, same);
    let (state_state, _) =
        user_outlet.aggregate(KeyKind::State, KeyKind::State, user_state, outlet_state);
    let (country_outlet, _) =
        user_outlet.aggregate(KeyKind::Country, KeyKind::Outlet, user_country, same);
    let (country_country, _) = user_outlet.aggregate(
        KeyKind::Country,
        KeyKind::Country,
        user_country,
        outlet_country,
    );
    let (country_ideology, _) = user_outlet.aggregate(
        KeyKind::Country,
        KeyKind::Ideology,
        user_country,
        outlet_ideology,
    );

    for (name, m) in [
        ("user_outlet", &user_outlet),
        ("state_outlet", &state_outlet),
        ("state_state", &state_state),
        ("country_outlet", &country_outlet),
        ("country_country", &country_country),
        ("country_ideology", &country_ideology),
    ] {
        write_matrix(&mut stage, name, m)?;
    }
    for (name, m) in [
        ("state_state", &state_state),
        ("country_country", &country_country),
    ] {
        m.write_log10_triplets(stage.create(&format!("{name}.log10.csv"))?)?;
        stage.write_json(&format!("{name}.flow.json"), &interactions::info_flow(m)?)?;
    }
    stage.write_json(
        "summary.json",
        &json!({
            "tweets": records.len(),
            "media_tweets": media_tweets,
            "events": events.len(),
            "mass": full.total(),
            "users": full.row_count(),
            "removed_users": removed,
            "mass_after_cutoff": user_outlet.total(),
            "state_mass": state_outlet.total(),
            "country_mass": country_outlet.total(),
        }),
    )?;
    stage.commit(records.len() as u64)?;
    Ok(format!(
        "matrix: {} events from {} media tweets, {} users ({} removed by cutoff)",
        events.len(),
        media_tweets,
        user_outlet.row_count(),
        removed.len()
    ))
}

/// Consumption vectors of users reaching the threshold, in user order.
fn user_vectors(
    cfg: &Config,
    m: &InteractionMatrix,
    registry: &Registry,
    fold: IdeologyFold,
) -> (Vec<String>, Vec<Vec<f64>>) {
    let outlets = registry.by_id();
    let active = m.threshold_cutoff(cfg.cutoffs.threshold);
    let (vectors, _) =
        interactions::consumption_vectors(&active, |o| outlets.get(o).map(|m| m.ideology), fold);
    vectors.into_iter().unzip()
}

pub fn cluster(cfg: &Config) -> Result<String, CliError> {
    let Some(cc) = &cfg.clustering else {
        return Err(CliError::new(
            "config",
            "no [clustering] section configured",
        ));
    };
    let mut stage = Stage::begin(
        &cfg.paths.output,
        "cluster",
        json!({ "clustering": cc, "threshold": cfg.cutoffs.threshold, "seed": cfg.seed }),
    )?;
    let m = load_matrix(&mut stage, "user_outlet")?;
    let users = load_users(&stage.upstream_file("geoparse", "users.csv")?)?;
    let registry = load_registry(cfg, &mut stage)?;
    let (ids, points) = user_vectors(cfg, &m, &registry, cc.fold);
    let nationality: Vec<String> = ids
        .iter()
        .map(|u| {
            users
                .get(u)
                .filter(|l| l.outcome == "resolved")
                .map_or("unknown".to_string(), |l| l.country.clone())
        })
        .collect();

    let curve = clustering::metric_curve(&points, cc.k_min..=cc.k_max, &cc.seeds, cc.silhouette)?;
    clustering::write_curve_csv(&curve, stage.create("curve.csv")?)?;

    let c = clustering::kmeans(&points, cc.k, cfg.seed)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(stage.create("assignments.csv")?);
    w.write_record(["user_id", "cluster"])?;
    for (u, a) in ids.iter().zip(&c.assignments) {
        w.write_record([u.as_str(), &a.to_string()])?;
    }
    w.flush()?;
    drop(w);

    let stability = clustering::stability(
        &points,
        &nationality,
        cc.k,
        &cc.seeds,
        StabilityParams::default(),
    )?;
    let profiles = clustering::profile(&c, &points, &ids, &nationality, &m, &registry)?;
    stage.write_json(
        "report.json",
        &json!({
            "k": cc.k,
            "seed": cfg.seed,
            "users": ids.len(),
            "iterations": c.iterations_run,
            "distortion": clustering::distortion(&points, &c),
            "silhouette": clustering::silhouette_mean(&points, &c, cc.silhouette).ok(),
            "silhouette_orientation": cc.silhouette,
            "davies_bouldin": clustering::davies_bouldin(&points, &c.assignments).ok(),
            "centroids": c.centroids,
            "profiles": profiles,
        }),
    )?;
    stage.write_json("stability.json", &stability)?;
    stage.commit(ids.len() as u64)?;
    Ok(format!(
        "cluster: {} users, k={}, {} of {} groups robust across {} seeds",
        ids.len(),
        cc.k,
        stability.robust_count(),
        stability.groups.len(),
        cc.seeds.len()
    ))
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

pub fn pair(cfg: &Config) -> Result<String, CliError> {
    if cfg.pairs.is_empty() {
        return Err(CliError::new("config", "no [[pairs]] configured"));
    }
    let fold = cfg
        .clustering
        .as_ref()
        .map_or(IdeologyFold::Seven, |c| c.fold);
    let mut stage = Stage::begin(
        &cfg.paths.output,
        "pair",
        json!({ "pairs": cfg.pairs, "threshold": cfg.cutoffs.threshold, "seed": cfg.seed, "fold": fold }),
    )?;
    let m = load_matrix(&mut stage, "user_outlet")?;
    let users = load_users(&stage.upstream_file("geoparse", "users.csv")?)?;
    let registry = load_registry(cfg, &mut stage)?;
    let user_country: BTreeMap<String, String> = users
        .values()
        .filter(|l| l.outcome == "resolved")
        .map(|l| (l.user_id.clone(), l.country.clone()))
        .collect();

    let mut total_users = 0;
    let mut lines = Vec::new();
    for p in &cfg.pairs {
        let base = match &p.ablate {
            Some(outlet) => {
                if !m.column_keys().contains(outlet.as_str()) {
                    return Err(mediaflow::Error::UnknownOutlet(outlet.clone()).into());
                }
                m.without_columns(&BTreeSet::from([outlet.as_str()]))
            }
            None => m.clone(),
        };
        let (ids, local, foreign) = crosscountry::pair_vectors(
            &base,
            &user_country,
            &registry,
            &p.local,
            &p.foreign,
            cfg.cutoffs.threshold,
            fold,
        );
        let groups = crosscountry::build_groups(&ids, &local, &foreign, p.k_sg, p.k_tg, cfg.seed)?;
        let report = crosscountry::pair_report(&p.local, &p.foreign, &groups)?;
        let robustness = crosscountry::multi_seed_reports(
            &p.local, &p.foreign, &ids, &local, &foreign, p.k_sg, p.k_tg, &p.seeds,
        )?;

        let mut predominant: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for u in &groups.users {
            let label = |v: &Vec<f64>| {
                crosscountry::predominant_group(v, p.predominant_threshold).label(fold)
            };
            *predominant
                .entry(label(&local[u]))
                .or_default()
                .entry(label(&foreign[u]))
                .or_default() += 1;
        }
        let mixed = Predominant::Mixed.label(fold);

        let name = format!("{}__{}", slug(&p.local), slug(&p.foreign));
        stage.write_json(
            &format!("{name}.json"),
            &json!({
                "report": report,
                "assignments": groups.users.iter().zip(groups.sg.assignments.iter().zip(&groups.tg.assignments))
                    .map(|(u, (s, t))| json!({ "user_id": u, "sg": s, "tg": t }))
                    .collect::<Vec<_>>(),
                "robustness": robustness,
                "predominant": { "threshold": p.predominant_threshold, "mixed_label": mixed, "counts": predominant },
                "ablated": p.ablate,
            }),
        )?;
        crosscountry::write_risk_csv(
            &report.transitions,
            stage.create(&format!("{name}.risk.csv"))?,
        )?;
        total_users += report.users;
        lines.push(format!(
            "{}-{}: {} users ({} excluded)",
            p.local, p.foreign, report.users, report.excluded
        ));
    }
    stage.commit(total_users as u64)?;
    Ok(format!("pair: {}", lines.join("; ")))
}

pub fn regress(cfg: &Config) -> Result<String, CliError> {
    let Some(rc) = &cfg.regression else {
        return Err(CliError::new(
            "config",
            "no [regression] section configured",
        ));
    };
    let mut stage = Stage::begin(
        &cfg.paths.output,
        "regress",
        json!({ "regression": rc, "seed": cfg.seed }),
    )?;
    let m = load_matrix(&mut stage, "state_outlet")?;
    let registry = load_registry(cfg, &mut stage)?;
    let targets = regression::read_targets(File::open(stage.input(cfg.paths.require("votes")?)?)?)?;

    let mut results = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(stage.create("results.csv")?);
    results.write_record(["media_set", "model", "mean_r2"])?;
    let mut preds = Vec::new();
    let mut details = Vec::new();
    let mut best: Option<(String, String, f64)> = None;
    for &n in &rc.top_n {
        let params = DatasetParams {
            top_n: n,
            media_country: rc.media_country.clone(),
            log_scale: rc.log_scale,
        };
        let ds = regression::build_dataset(&m, &registry, &rc.country, &targets, &params);
        let set = format!("top{n}");
        let mut specs: Vec<ModelSpec> = rc
            .lambdas
            .iter()
            .map(|&lambda| ModelSpec::Ridge { lambda })
            .collect();
        specs.push(ModelSpec::Gbdt(rc.gbdt));
        specs.push(ModelSpec::Forest(rc.forest));

        let mut by_model: BTreeMap<&str, (ModelSpec, regression::CvReport)> = BTreeMap::new();
        for spec in specs {
            let cv = match regression::kfold_cv(&ds.x, &ds.y, &spec, rc.folds, cfg.seed) {
                Ok(cv) => cv,
                Err(mediaflow::Error::Singular) => continue,
                Err(e) => return Err(e.into()),
            };
            details.push(json!({ "media_set": set, "spec": spec, "folds": cv.folds, "mean": cv.mean, "warnings": cv.warnings }));
            let score = cv.mean.unwrap_or(f64::NEG_INFINITY);
            let keep = by_model
                .get(spec.name())
                .is_none_or(|(_, old)| score > old.mean.unwrap_or(f64::NEG_INFINITY));
            if keep {
                by_model.insert(spec.name(), (spec, cv));
            }
        }
        for (model, (_, cv)) in &by_model {
            let mean = cv.mean.map(|v| v.to_string()).unwrap_or_default();
            results.write_record([set.as_str(), model, &mean])?;
            if let Some(v) = cv.mean
                && best.as_ref().is_none_or(|b| v > b.2)
            {
                best = Some((set.clone(), model.to_string(), v));
            }
            for ((state, actual), predicted) in ds.states.iter().zip(&ds.y).zip(&cv.predictions) {
                preds.push([
                    set.clone(),
                    model.to_string(),
                    state.clone(),
                    actual.to_string(),
                    predicted.to_string(),
                ]);
            }
        }
        ds.write_features(stage.create(&format!("features_{set}.csv"))?)?;
    }
    results.flush()?;
    drop(results);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(stage.create("predictions.csv")?);
    w.write_record(["media_set", "model", "state", "actual", "predicted"])?;
    for p in &preds {
        w.write_record(p)?;
    }
    w.flush()?;
    drop(w);
    stage.write_json("cv.json", &details)?;
    stage.commit(targets.len() as u64)?;
    Ok(match best {
        Some((set, model, r2)) => format!("regress: best {model} on {set}, mean R² {r2:.4}"),
        None => "regress: no model produced a valid score".to_string(),
    })
}

pub fn report(cfg: &Config) -> Result<String, CliError> {
    let mut stage = Stage::begin(&cfg.paths.output, "report", json!({}))?;
    let mut analyses = serde_json::Map::new();
    let read_json = |stage: &mut Stage, s: &str, f: &str| -> Result<serde_json::Value, CliError> {
        let path = stage.upstream_file(s, f)?;
        serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| CliError::new("schema", e.to_string()))
    };
    if cfg.clustering.is_some() {
        let r = read_json(&mut stage, "cluster", "report.json")?;
        let s = read_json(&mut stage, "cluster", "stability.json")?;
        analyses.insert(
            "cluster".into(),
            json!({
                "k": r["k"], "users": r["users"], "distortion": r["distortion"],
                "silhouette": r["silhouette"], "davies_bouldin": r["davies_bouldin"],
                "robust_groups": s["groups"].as_array().map_or(0, |g| g.iter().filter(|g| g["robust"] == true).count()),
            }),
        );
    }
    if !cfg.pairs.is_empty() {
        let mut pairs = Vec::new();
        for p in &cfg.pairs {
            let r = read_json(
                &mut stage,
                "pair",
                &format!("{}__{}.json", slug(&p.local), slug(&p.foreign)),
            )?;
            pairs.push(json!({
                "local": p.local, "foreign": p.foreign,
                "users": r["report"]["users"], "risk": r["report"]["transitions"]["risk"],
            }));
        }
        analyses.insert("pairs".into(), serde_json::Value::Array(pairs));
    }
    if cfg.regression.is_some() {
        let path = stage.upstream_file("regress", "results.csv")?;
        let mut rows = Vec::new();
        for rec in csv::Reader::from_path(path)?.records() {
            let rec = rec?;
            rows.push(json!({ "media_set": &rec[0], "model": &rec[1], "mean_r2": rec[2].parse::<f64>().ok() }));
        }
        analyses.insert("regression".into(), serde_json::Value::Array(rows));
    }
    let count = analyses.len();
    stage.write_json("report.json", &json!({ "analyses": analyses }))?;
    stage.commit(count as u64)?;
    Ok(format!("report: {count} analyses"))
}
