//! Batched, multi-threaded ingest and extraction over a line stream.
//!
//! Lines are read sequentially in fixed-size batches; each batch is parsed
//! (and optionally turned into interaction events) on a worker pool, then
//! folded back in line order, so the output does not depend on the number
//! of workers.

use std::collections::BTreeMap;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{
    Parsed, SamplingReport, StreamMarker, TweetRecord, estimate_sampling_rate, parse_tweet,
};
use crate::interactions::{InteractionEvent, Scheme, extract_interactions};
use crate::registry::HandleMap;
use crate::{Error, Result};

pub const BATCH_LINES: usize = 16 * 1024;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestCounts {
    pub lines: u64,
    pub tweets: u64,
    /// Skipped lines per reason code.
    pub skipped: BTreeMap<String, u64>,
}

#[derive(Debug)]
pub struct StreamOutput {
    pub counts: IngestCounts,
    pub sampling: SamplingReport,
    /// Parsed tweets, when requested.
    pub records: Vec<TweetRecord>,
    /// Interaction events, when a handle map was given.
    pub events: Vec<InteractionEvent>,
    /// Tweets that referenced at least one registered outlet.
    pub media_tweets: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct StreamOptions<'a> {
    pub workers: usize,
    pub keep_records: bool,
    pub extract: Option<(&'a HandleMap, Scheme)>,
}

pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

enum LineResult {
    Tweet(Option<TweetRecord>, Vec<InteractionEvent>),
    Skipped(&'static str, Option<StreamMarker>),
}

fn process_line(line: &str, opts: &StreamOptions<'_>) -> LineResult {
    match parse_tweet(line) {
        Parsed::Tweet(t) => {
            let events = match opts.extract {
                Some((map, scheme)) => extract_interactions(&t, map, scheme),
                None => Vec::new(),
            };
            LineResult::Tweet(opts.keep_records.then_some(t), events)
        }
        Parsed::Skipped(skip) => LineResult::Skipped(skip.reason_code(), skip.marker()),
    }
}

/// Parse a whole stream, optionally extracting interaction events.
pub fn process_stream<R: BufRead>(mut input: R, opts: StreamOptions<'_>) -> Result<StreamOutput> {
    let pool = worker_pool(opts.workers)?;
    let mut counts = IngestCounts::default();
    let mut markers = Vec::new();
    let mut records = Vec::new();
    let mut events = Vec::new();
    let mut media_tweets = 0;
    let mut batch: Vec<String> = Vec::with_capacity(BATCH_LINES);
    let mut done = false;
    while !done {
        batch.clear();
        while batch.len() < BATCH_LINES {
            let mut line = String::new();
            if input.read_line(&mut line)? == 0 {
                done = true;
                break;
            }
            if !line.trim().is_empty() {
                batch.push(line);
            }
        }
        let results: Vec<LineResult> =
            pool.install(|| batch.par_iter().map(|l| process_line(l, &opts)).collect());
        counts.lines += results.len() as u64;
        for r in results {
            match r {
                LineResult::Tweet(record, ev) => {
                    counts.tweets += 1;
                    if !ev.is_empty() {
                        media_tweets += 1;
                    }
                    records.extend(record);
                    events.extend(ev);
                }
                LineResult::Skipped(code, marker) => {
                    *counts.skipped.entry(code.to_string()).or_default() += 1;
                    markers.extend(marker);
                }
            }
        }
    }
    let sampling = estimate_sampling_rate(counts.tweets, &markers)?;
    Ok(StreamOutput {
        counts,
        sampling,
        records,
        events,
        media_tweets,
    })
}

/// Extract events from already-parsed records on `workers` threads,
/// keeping record order.
pub fn extract_all(
    records: &[TweetRecord],
    handles: &HandleMap,
    scheme: Scheme,
    workers: usize,
) -> Result<Vec<InteractionEvent>> {
    let pool = worker_pool(workers)?;
    Ok(pool.install(|| {
        records
            .par_iter()
            .flat_map_iter(|r| extract_interactions(r, handles, scheme))
            .collect()
    }))
}
