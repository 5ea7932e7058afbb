//! Synthetic cohorts driven through the live platform.
//!
//! Each simulated student answers correctly with probability `ability`,
//! independently per answer. All answers go through [`Platform`], so grading,
//! reward emission and the ledger behave exactly as they do for real users.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grading::GradingConfig;
use crate::itemgen::{generate_drill_set, synthetic_pools, GenConfig, SetMeta};
use crate::ledger::{AccountKind, RewardRuleSet, Smly};
use crate::platform::{Platform, PlatformConfig};

pub const SIM_LIBRARY: &str = "SIM-LIB";
pub const SIM_COLLECTION: &str = "KCSE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum AnswerPolicy {
    /// Answer until the set is aced or `max_answers` is reached.
    UntilAce { max_answers: usize },
    Fixed { answers: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_students: usize,
    pub ability: f64,
    pub sets: usize,
    pub items_per_set: usize,
    pub policy: AnswerPolicy,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_students: 100,
            ability: 0.8,
            sets: 50,
            items_per_set: 100,
            policy: AnswerPolicy::UntilAce { max_answers: 200 },
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ability) {
            return Err(Error::InvalidConfig(format!("ability {} not in [0, 1]", self.ability)));
        }
        if self.sets == 0 || self.items_per_set == 0 {
            return Err(Error::InvalidConfig("need at least one set with one item".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentReport {
    pub student_id: String,
    pub attempts: u64,
    pub sets_aced: u64,
    pub collection_aced: bool,
    pub smly_earned: Smly,
    /// Final drill grade per set, in set order.
    pub grades: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_students: u64,
    pub total_attempts: u64,
    pub sets_aced_total: u64,
    pub collections_aced: u64,
    pub total_smly_earned: Smly,
    pub total_minted: Smly,
    pub mean_grade: f64,
    /// Students by mean final grade on the 0–10 scale, rounded to integer.
    pub grade_table: BTreeMap<u8, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub spec: CohortSpec,
    pub students: Vec<StudentReport>,
    pub aggregate: AggregateReport,
}

pub fn set_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(2);
    (1..=n).map(|i| format!("{SIM_COLLECTION}-{i:0width$}")).collect()
}

pub fn run_simulation(spec: &CohortSpec, grading: &GradingConfig, rewards: &RewardRuleSet) -> Result<SimulationReport> {
    Ok(simulate_platform(spec, grading, rewards)?.0)
}

/// Runs the cohort and also returns the platform it ran on.
pub fn simulate_platform(
    spec: &CohortSpec,
    grading: &GradingConfig,
    rewards: &RewardRuleSet,
) -> Result<(SimulationReport, Platform)> {
    spec.validate()?;
    let ids = set_ids(spec.sets);
    let config = PlatformConfig {
        grading: *grading,
        rewards: *rewards,
        collections: BTreeMap::from([(SIM_COLLECTION.to_string(), ids.clone())]),
        ..Default::default()
    };
    let mut platform = Platform::in_memory(config, spec.seed)?;
    let mut clock = 0u64;
    platform.register_library_with_tablets(SIM_LIBRARY, 10, clock)?;
    let pools = synthetic_pools(20, 30);
    for (i, id) in ids.iter().enumerate() {
        let cfg = GenConfig {
            n_items: spec.items_per_set,
            seed: spec.seed.wrapping_add(i as u64),
            ..Default::default()
        };
        let meta = SetMeta {
            id: id.clone(),
            title: id.clone(),
            header: "Check the most appropriate box.".into(),
        };
        platform.upload_drill_set(generate_drill_set(meta, &pools, &cfg)?, clock)?;
    }

    let mut students = Vec::with_capacity(spec.n_students);
    for s in 0..spec.n_students {
        let student_id = format!("S{}", s + 1);
        platform.create_account_with_id(&student_id, AccountKind::PreRegistered, Some(SIM_LIBRARY), clock)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(s as u64 + 1);
        let mut attempts = 0u64;
        for set_id in &ids {
            let mut answered = 0usize;
            loop {
                let done = match spec.policy {
                    AnswerPolicy::UntilAce { max_answers } => {
                        answered >= max_answers || platform.grade(&student_id, set_id)?.aced
                    }
                    AnswerPolicy::Fixed { answers } => answered >= answers,
                };
                if done {
                    break;
                }
                let item = platform.next_item(&student_id, set_id)?;
                let key = platform
                    .state()
                    .drill_set(set_id)?
                    .item(&item.id)
                    .and_then(|i| i.correct_index())
                    .expect("served item exists");
                let choice = if rng.gen_bool(spec.ability) {
                    key
                } else {
                    let wrong = rng.gen_range(0..item.options.len() - 1);
                    if wrong >= key {
                        wrong + 1
                    } else {
                        wrong
                    }
                };
                clock += 1;
                platform.submit_drill_answer(&student_id, set_id, &item.id, choice, clock)?;
                answered += 1;
                attempts += 1;
            }
        }
        let grades: Vec<f64> = ids
            .iter()
            .map(|id| platform.grade(&student_id, id).map(|g| g.grade))
            .collect::<Result<_>>()?;
        let progress = platform
            .state()
            .collection_progress(&student_id, &ids, &platform.config().grading);
        students.push(StudentReport {
            student_id: student_id.clone(),
            attempts,
            sets_aced: progress.sets_aced as u64,
            collection_aced: progress.collection_aced,
            smly_earned: platform.balance(&student_id)?,
            grades,
        });
    }

    let mut grade_table = BTreeMap::new();
    let mut grade_sum = 0.0;
    for s in &students {
        let mean = s.grades.iter().sum::<f64>() / s.grades.len() as f64;
        grade_sum += mean;
        *grade_table.entry((mean * 10.0).round() as u8).or_insert(0) += 1;
    }
    let aggregate = AggregateReport {
        n_students: students.len() as u64,
        total_attempts: students.iter().map(|s| s.attempts).sum(),
        sets_aced_total: students.iter().map(|s| s.sets_aced).sum(),
        collections_aced: students.iter().filter(|s| s.collection_aced).count() as u64,
        total_smly_earned: students.iter().map(|s| s.smly_earned).sum(),
        total_minted: platform.state().ledger.total_minted(),
        mean_grade: if students.is_empty() { 0.0 } else { grade_sum / students.len() as f64 },
        grade_table,
    };
    Ok((
        SimulationReport {
            spec: *spec,
            students,
            aggregate,
        },
        platform,
    ))
}
