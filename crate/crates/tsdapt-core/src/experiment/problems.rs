//! Enumeration of cross-person and cross-time adaptation problems.

use super::ExperimentError;
use crate::rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// One cross-person adaptation problem: a target and one sampled set of
/// source domains.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationProblem {
    pub target: String,
    pub sources: Vec<String>,
    pub set_index: u32,
}

/// Samples `sets_per_target` random source sets of size `n_sources` for
/// each of `targets_count` targets, deterministically in `seed`.
///
/// Targets never appear in their own source sets. When the domain pool
/// cannot supply enough targets or enough distinct source sets, fewer
/// problems are returned with a warning.
pub fn sample_adaptation_problems(
    domains: &[String],
    n_sources: usize,
    targets_count: usize,
    sets_per_target: usize,
    seed: u64,
) -> Result<Vec<AdaptationProblem>, ExperimentError> {
    if n_sources == 0 {
        return Err(ExperimentError::InvalidConfig("need at least one source per set".into()));
    }
    if n_sources >= domains.len() {
        return Err(ExperimentError::InvalidConfig(format!(
            "cannot sample {} sources plus a target from {} domains",
            n_sources,
            domains.len()
        )));
    }

    let mut pool: Vec<String> = domains.to_vec();
    pool.sort();
    let mut targets = pool.clone();
    targets.shuffle(&mut rng::stream(seed, "protocol/targets"));
    if targets.len() < targets_count {
        log::warn!(
            "only {} domains available for {} requested targets",
            targets.len(),
            targets_count
        );
    }
    targets.truncate(targets_count);

    let mut problems = Vec::new();
    for target in targets {
        let candidates: Vec<String> = pool.iter().filter(|d| **d != target).cloned().collect();
        let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
        let mut rng = rng::stream(seed, &format!("protocol/sources/{target}"));
        let mut attempts = 0usize;
        while seen.len() < sets_per_target && attempts < sets_per_target * 50 {
            attempts += 1;
            let mut set: Vec<String> = candidates
                .choose_multiple(&mut rng, n_sources)
                .cloned()
                .collect();
            set.sort();
            seen.insert(set);
        }
        if seen.len() < sets_per_target {
            log::warn!(
                "target {target}: only {} distinct source sets of size {n_sources} found",
                seen.len()
            );
        }
        for (set_index, sources) in seen.into_iter().enumerate() {
            problems.push(AdaptationProblem {
                target: target.clone(),
                sources,
                set_index: set_index as u32,
            });
        }
    }
    Ok(problems)
}

/// Direction of a cross-time pair: forward adapts an earlier week to a
/// later one, backward the reverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDirection {
    Forward,
    Backward,
}

/// One cross-time adaptation problem for a single person.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossTimePair {
    pub source_week: u32,
    pub target_week: u32,
    pub gap: u32,
}

/// All ordered week pairs in the given direction: `C(weeks, 2)` pairs,
/// grouped by gap from small to large.
pub fn enumerate_cross_time_problems(
    weeks: usize,
    direction: TimeDirection,
) -> Result<Vec<CrossTimePair>, ExperimentError> {
    if weeks < 2 {
        return Err(ExperimentError::InvalidConfig(format!(
            "cross-time adaptation needs at least 2 weeks, got {weeks}"
        )));
    }
    let mut pairs = Vec::with_capacity(weeks * (weeks - 1) / 2);
    for gap in 1..weeks {
        for start in 0..weeks - gap {
            let (a, b) = (start as u32, (start + gap) as u32);
            let (source_week, target_week) = match direction {
                TimeDirection::Forward => (a, b),
                TimeDirection::Backward => (b, a),
            };
            pairs.push(CrossTimePair {
                source_week,
                target_week,
                gap: gap as u32,
            });
        }
    }
    Ok(pairs)
}
