//! Tapered drill grading, exam grading and course-grade combination.
//!
//! A drill grade is a weighted average over the most recent answers. The
//! window ("taper") starts at `base_window` answers and grows by
//! `error_growth` for every incorrect answer among the last `lookback`
//! answers, capped at `max_window`. Inside the window the newest answer has
//! weight `L`, the one before `L - 1`, down to `1` for the oldest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One graded answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerEntry {
    pub item_id: String,
    pub correct: bool,
    /// UTC seconds.
    pub timestamp: u64,
}

/// Append-only correctness sequence for one (student, drill set), oldest first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerHistory {
    entries: Vec<AnswerEntry>,
}

impl AnswerHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a history from bare correctness bits, all stamped at time 0.
    pub fn from_bits(bits: &[bool]) -> Self {
        let entries = bits
            .iter()
            .enumerate()
            .map(|(i, &correct)| AnswerEntry {
                item_id: format!("item-{i}"),
                correct,
                timestamp: 0,
            })
            .collect();
        Self { entries }
    }

    pub fn push(&mut self, item_id: impl Into<String>, correct: bool, timestamp: u64) -> Result<()> {
        self.check_time(timestamp)?;
        self.entries.push(AnswerEntry {
            item_id: item_id.into(),
            correct,
            timestamp,
        });
        Ok(())
    }

    pub(crate) fn check_time(&self, timestamp: u64) -> Result<()> {
        match self.entries.last() {
            Some(last) if timestamp < last.timestamp => Err(Error::NonMonotonicTime {
                now: timestamp,
                last: last.timestamp,
            }),
            _ => Ok(()),
        }
    }

    pub fn entries(&self) -> &[AnswerEntry] {
        &self.entries
    }

    pub fn bits(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.correct).collect()
    }

    /// Correctness of the last `n` answers (fewer if the history is shorter).
    pub fn tail_bits(&self, n: usize) -> Vec<bool> {
        let start = self.entries.len().saturating_sub(n);
        self.entries[start..].iter().map(|e| e.correct).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradingConfig {
    pub base_window: usize,
    pub max_window: usize,
    /// Window growth per incorrect answer inside the lookback.
    pub error_growth: usize,
    pub lookback: usize,
    pub ace_epsilon: f64,
}

impl Default for GradingConfig {
    fn default() -> Self {
        Self {
            base_window: 7,
            max_window: 30,
            error_growth: 2,
            lookback: 30,
            ace_epsilon: 1e-9,
        }
    }
}

impl GradingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_window < 1 || self.base_window > self.max_window {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= base_window ({}) <= max_window ({})",
                self.base_window, self.max_window
            )));
        }
        if self.lookback < self.max_window {
            return Err(Error::InvalidConfig(format!(
                "lookback ({}) must be at least max_window ({})",
                self.lookback, self.max_window
            )));
        }
        if !(self.ace_epsilon >= 0.0 && self.ace_epsilon < 1.0) {
            return Err(Error::InvalidConfig("ace_epsilon must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeState {
    pub grade: f64,
    /// Target taper length; the effective window is `min(answers, taper_len)`.
    pub taper_len: usize,
    pub complete: bool,
    pub aced: bool,
}

pub fn taper_length(history: &AnswerHistory, cfg: &GradingConfig) -> usize {
    taper_length_bits(&history.tail_bits(cfg.lookback), cfg)
}

pub fn taper_length_bits(bits: &[bool], cfg: &GradingConfig) -> usize {
    let lookback = bits.len().min(cfg.lookback);
    let errors = bits[bits.len() - lookback..].iter().filter(|&&c| !c).count();
    cfg.base_window
        .saturating_add(cfg.error_growth.saturating_mul(errors))
        .min(cfg.max_window)
}

pub fn drill_grade(history: &AnswerHistory, cfg: &GradingConfig) -> GradeState {
    grade_tail(&history.tail_bits(cfg.lookback), history.len(), cfg)
}

/// Numerator and denominator of the tapered grade; `(0, 0)` for no answers.
pub fn grade_fraction(bits: &[bool], cfg: &GradingConfig) -> (u64, u64) {
    let target = taper_length_bits(bits, cfg);
    let window = bits.len().min(target);
    let numerator = bits
        .iter()
        .rev()
        .take(window)
        .zip((1..=window as u64).rev())
        .filter(|(&correct, _)| correct)
        .map(|(_, weight)| weight)
        .sum();
    let window = window as u64;
    (numerator, window * (window + 1) / 2)
}

pub fn drill_grade_bits(bits: &[bool], cfg: &GradingConfig) -> GradeState {
    let keep = bits.len().min(cfg.lookback);
    grade_tail(&bits[bits.len() - keep..], bits.len(), cfg)
}

/// Grades a history of `total` answers given only its last
/// `min(total, lookback)` entries, which is all the taper ever reads.
pub fn grade_tail(tail: &[bool], total: usize, cfg: &GradingConfig) -> GradeState {
    debug_assert_eq!(tail.len(), total.min(cfg.lookback));
    let taper_len = taper_length_bits(tail, cfg);
    let (numerator, denominator) = grade_fraction(tail, cfg);
    let grade = if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    };
    let complete = total >= taper_len;
    GradeState {
        grade,
        taper_len,
        complete,
        aced: complete && grade >= 1.0 - cfg.ace_epsilon,
    }
}

/// Unweighted fraction correct over a fixed exam sequence.
pub fn exam_grade(responses: &[bool]) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::NoExamAnswers);
    }
    let correct = responses.iter().filter(|&&c| c).count();
    Ok(correct as f64 / responses.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CourseGradeConfig {
    pub final_weight: f64,
    pub pass_threshold: f64,
    pub interim_weights: BTreeMap<String, f64>,
}

impl Default for CourseGradeConfig {
    fn default() -> Self {
        Self {
            final_weight: 0.5,
            pass_threshold: 5.0,
            interim_weights: BTreeMap::from([("interim".to_string(), 1.0)]),
        }
    }
}

impl CourseGradeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.final_weight) {
            return Err(Error::InvalidConfig("final_weight must lie in [0, 1]".into()));
        }
        if self.interim_weights.values().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidConfig("interim weights must lie in [0, 1]".into()));
        }
        let total: f64 = self.interim_weights.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "interim weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "grade", rename_all = "snake_case")]
pub enum CourseOutcome {
    Pass,
    Fail,
    Numeric(f64),
}

fn check_grade(name: &str, grade: f64) -> Result<()> {
    if (0.0..=10.0).contains(&grade) {
        Ok(())
    } else {
        Err(Error::GradeOutOfRange(format!("{name} = {grade}")))
    }
}

pub fn interim_grade(components: &BTreeMap<String, f64>, cfg: &CourseGradeConfig) -> Result<f64> {
    cfg.validate()?;
    if let Some(extra) = components.keys().find(|k| !cfg.interim_weights.contains_key(*k)) {
        return Err(Error::InvalidConfig(format!("no weight for component `{extra}`")));
    }
    let mut interim = 0.0;
    for (id, weight) in &cfg.interim_weights {
        let grade = *components
            .get(id)
            .ok_or_else(|| Error::InvalidConfig(format!("missing component `{id}`")))?;
        check_grade(id, grade)?;
        interim += weight * grade;
    }
    Ok(interim)
}

/// Combines interim components and an optional final exam, honouring the
/// pass/fail exit option.
pub fn course_grade(
    components: &BTreeMap<String, f64>,
    final_grade: Option<f64>,
    cfg: &CourseGradeConfig,
    opted_out: bool,
) -> Result<CourseOutcome> {
    let interim = interim_grade(components, cfg)?;
    if opted_out {
        return Ok(if interim >= cfg.pass_threshold {
            CourseOutcome::Pass
        } else {
            CourseOutcome::Fail
        });
    }
    let final_grade = final_grade.ok_or(Error::MissingFinal)?;
    check_grade("final", final_grade)?;
    Ok(CourseOutcome::Numeric(
        cfg.final_weight * final_grade + (1.0 - cfg.final_weight) * interim,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionProgress {
    pub sets_aced: usize,
    pub total_attempts: usize,
    pub collection_aced: bool,
}

pub fn collection_progress(
    histories: &BTreeMap<String, AnswerHistory>,
    collection: &[String],
    cfg: &GradingConfig,
) -> CollectionProgress {
    let mut sets_aced = 0;
    let mut total_attempts = 0;
    for set in collection {
        if let Some(history) = histories.get(set) {
            total_attempts += history.len();
            if drill_grade(history, cfg).aced {
                sets_aced += 1;
            }
        }
    }
    CollectionProgress {
        sets_aced,
        total_attempts,
        collection_aced: !collection.is_empty() && sets_aced == collection.len(),
    }
}
