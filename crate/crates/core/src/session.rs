//! Drill-mode and exam-mode item serving.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grading::{drill_grade, exam_grade, AnswerHistory, GradeState, GradingConfig};
use crate::itemgen::{DrillSet, Item};
use crate::ledger::{RewardEvent, Smly};

pub const DEFAULT_RECENT_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Drill,
    Exam,
}

/// Unbounded practice on one drill set. Remembers the last `recent_window`
/// served items so they are not repeated back to back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrillSession {
    pub student_id: String,
    pub drillset_id: String,
    pub recent_window: usize,
    served: VecDeque<String>,
    pending: Option<String>,
}

impl DrillSession {
    pub fn new(student_id: impl Into<String>, drillset_id: impl Into<String>, recent_window: usize) -> Self {
        Self {
            student_id: student_id.into(),
            drillset_id: drillset_id.into(),
            recent_window,
            served: VecDeque::new(),
            pending: None,
        }
    }

    /// Most recently served item ids, oldest first.
    pub fn served(&self) -> impl Iterator<Item = &str> {
        self.served.iter().map(String::as_str)
    }

    /// The served item still awaiting an answer.
    pub fn pending(&self) -> Option<&str> {
        self.pending.as_deref()
    }

    pub fn take_pending(&mut self, item_id: &str) -> Result<()> {
        match &self.pending {
            Some(p) if p == item_id => {
                self.pending = None;
                Ok(())
            }
            _ => Err(Error::NoPendingItem),
        }
    }

    /// Draws uniformly among items not among the last
    /// `min(recent_window, |set| - 1)` served.
    pub fn next_drill_item<'s, R: Rng + ?Sized>(&mut self, set: &'s DrillSet, rng: &mut R) -> Result<&'s Item> {
        if set.is_empty() {
            return Err(Error::EmptyDrillSet);
        }
        let window = self.recent_window.min(set.len() - 1);
        let recent: Vec<&str> = self.served.iter().rev().take(window).map(String::as_str).collect();
        let candidates: Vec<&Item> = set
            .items
            .iter()
            .filter(|item| !recent.contains(&item.id.as_str()))
            .collect();
        let item = candidates[rng.gen_range(0..candidates.len())];
        self.served.push_back(item.id.clone());
        while self.served.len() > self.recent_window.max(1) {
            self.served.pop_front();
        }
        self.pending = Some(item.id.clone());
        Ok(item)
    }
}

/// A fixed sequence of distinct items answered once each, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamSession {
    pub exam_id: String,
    pub student_id: String,
    pub drillset_id: String,
    pub sequence: Vec<String>,
    pub responses: Vec<bool>,
}

/// Samples `n` distinct items without replacement; the order is fixed.
pub fn begin_exam<R: Rng + ?Sized>(set: &DrillSet, n: usize, rng: &mut R) -> Result<Vec<String>> {
    if n == 0 || n > set.len() {
        return Err(Error::InvalidExamSize {
            requested: n,
            available: set.len(),
        });
    }
    Ok(index::sample(rng, set.len(), n)
        .into_iter()
        .map(|i| set.items[i].id.clone())
        .collect())
}

impl ExamSession {
    pub fn cursor(&self) -> usize {
        self.responses.len()
    }

    pub fn finished(&self) -> bool {
        self.cursor() >= self.sequence.len()
    }

    pub fn current_item(&self) -> Option<&str> {
        self.sequence.get(self.cursor()).map(String::as_str)
    }

    /// Checks that `item_id` is the item at the cursor and returns its slot.
    pub fn expect_slot(&self, item_id: &str) -> Result<usize> {
        let cursor = self.cursor();
        if self.finished() || self.sequence[..cursor].iter().any(|id| id == item_id) {
            return Err(Error::ExamSlotAnswered);
        }
        if self.sequence[cursor] != item_id {
            return Err(Error::ExamOutOfOrder {
                expected: cursor,
                item_id: item_id.to_string(),
            });
        }
        Ok(cursor)
    }

    pub fn grade(&self) -> Result<f64> {
        exam_grade(&self.responses)
    }

    pub fn progress(&self) -> ExamProgress {
        ExamProgress {
            exam_id: self.exam_id.clone(),
            answered: self.cursor(),
            total: self.sequence.len(),
            finished: self.finished(),
            grade: if self.finished() { self.grade().ok() } else { None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamProgress {
    pub exam_id: String,
    pub answered: usize,
    pub total: usize,
    pub finished: bool,
    pub grade: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StoppingCriteria {
    pub min_answers: Option<usize>,
    pub min_grade: Option<f64>,
}

pub fn stopping_satisfied(history: &AnswerHistory, criteria: &StoppingCriteria, cfg: &GradingConfig) -> bool {
    let enough = criteria.min_answers.is_none_or(|n| history.len() >= n);
    let good = criteria.min_grade.is_none_or(|g| drill_grade(history, cfg).grade >= g);
    enough && good
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardGrant {
    pub rule: RewardEvent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collection_id: Option<String>,
    pub amount: Smly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerOutcome {
    pub correct: bool,
    pub correct_index: usize,
    pub explanation: String,
    pub grade_state: GradeState,
    pub rewards: Vec<RewardGrant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exam: Option<ExamProgress>,
}
