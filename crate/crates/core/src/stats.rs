//! Anonymous per-library monitoring aggregates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grading::drill_grade;
use crate::platform::PlatformConfig;
use crate::state::PlatformState;

pub const DEFAULT_STATS_TTL: u64 = 600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryStats {
    pub library_id: String,
    pub n_students: u64,
    pub total_attempts: u64,
    pub sets_aced_total: u64,
    pub collections_aced: u64,
    pub as_of: u64,
}

pub fn compute_library_stats(
    state: &PlatformState,
    config: &PlatformConfig,
    library_id: &str,
    now: u64,
) -> Result<LibraryStats> {
    if !state.stock.inventories.contains_key(library_id) {
        return Err(Error::not_found("library", library_id));
    }
    let mut stats = LibraryStats {
        library_id: library_id.to_string(),
        n_students: 0,
        total_attempts: 0,
        sets_aced_total: 0,
        collections_aced: 0,
        as_of: now,
    };
    let students = state
        .accounts
        .iter()
        .filter(|(_, info)| info.kind.is_student() && info.library_id.as_deref() == Some(library_id));
    for (student, _) in students {
        let Some(histories) = state.histories.get(student) else {
            continue;
        };
        let attempts: usize = histories.values().map(|h| h.len()).sum();
        if attempts == 0 {
            continue;
        }
        stats.n_students += 1;
        stats.total_attempts += attempts as u64;
        stats.sets_aced_total += histories
            .values()
            .filter(|h| drill_grade(h, &config.grading).aced)
            .count() as u64;
        let aced_any = config
            .collections
            .values()
            .any(|members| state.collection_progress(student, members, &config.grading).collection_aced);
        if aced_any {
            stats.collections_aced += 1;
        }
    }
    Ok(stats)
}

/// Per-library stats recomputed once they are `ttl` seconds old.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsCache {
    pub ttl: u64,
    entries: BTreeMap<String, LibraryStats>,
}

impl Default for StatsCache {
    fn default() -> Self {
        Self::new(DEFAULT_STATS_TTL)
    }
}

impl StatsCache {
    pub fn new(ttl: u64) -> Self {
        Self {
            ttl,
            entries: BTreeMap::new(),
        }
    }

    pub fn serve_stats(&mut self, state: &PlatformState, config: &PlatformConfig, now: u64) -> Vec<LibraryStats> {
        let ttl = self.ttl;
        self.entries.retain(|id, _| state.stock.inventories.contains_key(id));
        for library_id in state.stock.inventories.keys() {
            let fresh = self
                .entries
                .get(library_id)
                .is_some_and(|s| now.saturating_sub(s.as_of) < ttl);
            if !fresh {
                let stats = compute_library_stats(state, config, library_id, now).expect("library listed");
                self.entries.insert(library_id.clone(), stats);
            }
        }
        self.entries.values().cloned().collect()
    }
}
