//! Platform state as a fold over the event log.
//!
//! [`PlatformState::apply`] is the only way state changes, both live and on
//! replay. It validates the whole event before touching anything, so a
//! rejected event leaves the state unchanged.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grading::{collection_progress, drill_grade, AnswerHistory, CollectionProgress, GradeState, GradingConfig};
use crate::itemgen::DrillSet;
use crate::ledger::{escrow_account, AccountKind, Ledger, RewardEvent, Tablet, TabletStatus, TabletStock};
use crate::session::ExamSession;
use crate::storage::{Event, EventRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountInfo {
    pub kind: AccountKind,
    pub library_id: Option<String>,
    pub token_hash: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlatformState {
    pub last_seq: u64,
    pub drill_sets: BTreeMap<String, DrillSet>,
    pub accounts: BTreeMap<String, AccountInfo>,
    pub ledger: Ledger,
    pub stock: TabletStock,
    /// student → drill set → history
    pub histories: BTreeMap<String, BTreeMap<String, AnswerHistory>>,
    pub exams: BTreeMap<String, ExamSession>,
    /// (student, drill set) pairs already paid a set-ace reward.
    pub awarded_sets: BTreeSet<(String, String)>,
    /// (student, collection) pairs already paid a collection-ace reward.
    pub awarded_collections: BTreeSet<(String, String)>,
}

fn invalid(seq: u64, err: Error) -> Error {
    match err {
        Error::InvalidEvent { .. } => err,
        other => Error::InvalidEvent {
            seq,
            message: other.to_string(),
        },
    }
}

impl PlatformState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn history(&self, student: &str, set: &str) -> Option<&AnswerHistory> {
        self.histories.get(student)?.get(set)
    }

    pub fn grade(&self, student: &str, set: &str, cfg: &GradingConfig) -> GradeState {
        match self.history(student, set) {
            Some(h) => drill_grade(h, cfg),
            None => drill_grade(&AnswerHistory::new(), cfg),
        }
    }

    pub fn collection_progress(&self, student: &str, collection: &[String], cfg: &GradingConfig) -> CollectionProgress {
        let empty = BTreeMap::new();
        collection_progress(self.histories.get(student).unwrap_or(&empty), collection, cfg)
    }

    pub fn student(&self, id: &str) -> Result<&AccountInfo> {
        match self.accounts.get(id) {
            Some(info) if info.kind.is_student() => Ok(info),
            Some(_) => Err(Error::Forbidden(format!("`{id}` is not a student account"))),
            None => Err(Error::not_found("account", id)),
        }
    }

    pub fn drill_set(&self, id: &str) -> Result<&DrillSet> {
        self.drill_sets.get(id).ok_or_else(|| Error::not_found("drill set", id))
    }

    /// Validates `event` as the record following `last_seq`.
    pub fn check(&self, seq: u64, timestamp: u64, event: &Event) -> Result<()> {
        if seq != self.last_seq + 1 {
            return Err(Error::SequenceGap {
                expected: self.last_seq + 1,
                found: seq,
            });
        }
        self.check_event(timestamp, event).map_err(|e| invalid(seq, e))
    }

    /// Validates `event` against the current state, returning the domain error.
    pub fn check_event(&self, timestamp: u64, event: &Event) -> Result<()> {
        match event {
            Event::AccountCreated {
                account_id,
                account_kind,
                library_id,
                ..
            } => {
                self.ledger.check_open(account_id)?;
                if *account_kind == AccountKind::TabletEscrow {
                    return Err(Error::Forbidden("escrow accounts are created with libraries".into()));
                }
                if let Some(lib) = library_id {
                    if !self.stock.inventories.contains_key(lib) {
                        return Err(Error::not_found("library", lib));
                    }
                }
                Ok(())
            }
            Event::LibraryRegistered { library_id, .. } => {
                self.stock.check_library(library_id)?;
                self.ledger.check_open(&escrow_account(library_id))
            }
            Event::TabletRegistered {
                tablet_id,
                library_id,
                payment_address,
                price,
            } => self.stock.check_tablet(&Tablet {
                id: tablet_id.clone(),
                library_id: library_id.clone(),
                payment_address: payment_address.clone(),
                price: *price,
                status: TabletStatus::Available,
            }),
            Event::TabletLent { tablet_id, .. } => self.stock.check_lend(tablet_id),
            Event::SetUploaded { drill_set } => {
                if self.drill_sets.contains_key(&drill_set.id) {
                    return Err(Error::AlreadyExists {
                        kind: "drill set",
                        id: drill_set.id.clone(),
                    });
                }
                drill_set.check()
            }
            Event::ExamStarted {
                exam_id,
                student_id,
                drillset_id,
                sequence,
            } => {
                if self.exams.contains_key(exam_id) {
                    return Err(Error::AlreadyExists {
                        kind: "exam",
                        id: exam_id.clone(),
                    });
                }
                self.student(student_id)?;
                let set = self.drill_set(drillset_id)?;
                let distinct: BTreeSet<&String> = sequence.iter().collect();
                if sequence.is_empty() || distinct.len() != sequence.len() {
                    return Err(Error::InvalidExamSize {
                        requested: sequence.len(),
                        available: set.len(),
                    });
                }
                if let Some(missing) = sequence.iter().find(|id| set.item(id).is_none()) {
                    return Err(Error::not_found("item", missing));
                }
                Ok(())
            }
            Event::Answer {
                student_id,
                drillset_id,
                item_id,
                selected_index,
                correct,
                exam_id,
                rewards,
            } => {
                self.student(student_id)?;
                let set = self.drill_set(drillset_id)?;
                let item = set.item(item_id).ok_or_else(|| Error::not_found("item", item_id))?;
                let option = item.options.get(*selected_index).ok_or(Error::IndexOutOfRange {
                    index: *selected_index,
                    options: item.options.len(),
                })?;
                if option.is_correct != *correct {
                    return Err(Error::InvalidConfig("recorded correctness disagrees with the item".into()));
                }
                if let Some(h) = self.history(student_id, drillset_id) {
                    h.check_time(timestamp)?;
                }
                if let Some(exam_id) = exam_id {
                    let exam = self.exams.get(exam_id).ok_or_else(|| Error::not_found("exam", exam_id))?;
                    if exam.student_id != *student_id || exam.drillset_id != *drillset_id {
                        return Err(Error::Forbidden("exam belongs to another student or set".into()));
                    }
                    exam.expect_slot(item_id)?;
                }
                for grant in rewards {
                    let fresh = match (grant.rule, &grant.collection_id) {
                        (RewardEvent::SetAced, None) => !self
                            .awarded_sets
                            .contains(&(student_id.clone(), drillset_id.clone())),
                        (RewardEvent::CollectionAced, Some(c)) => !self
                            .awarded_collections
                            .contains(&(student_id.clone(), c.clone())),
                        _ => false,
                    };
                    if !fresh {
                        return Err(Error::InvalidConfig(format!("duplicate or malformed {} reward", grant.rule)));
                    }
                }
                let total: u64 = rewards.iter().map(|g| g.amount).sum();
                if total > 0 {
                    self.ledger.check_transfer(crate::ledger::MINT, student_id, total)?;
                }
                Ok(())
            }
            Event::Reward { account_id, amount, .. } => {
                self.ledger.check_transfer(crate::ledger::MINT, account_id, *amount)
            }
            Event::Transfer { from, to, amount, .. } => self.ledger.check_transfer(from, to, *amount),
            Event::Purchase { student_id, payload } => {
                self.stock.check_purchase(&self.ledger, student_id, payload)
            }
        }
    }

    /// Validates and applies one record.
    pub fn apply(&mut self, record: &EventRecord) -> Result<()> {
        self.check(record.seq, record.timestamp, &record.event)?;
        let seq = record.seq;
        let ts = record.timestamp;
        let wrap = |e| invalid(seq, e);
        match &record.event {
            Event::AccountCreated {
                account_id,
                account_kind,
                library_id,
                token_hash,
            } => {
                self.ledger.open_account(account_id, *account_kind).map_err(wrap)?;
                self.accounts.insert(
                    account_id.clone(),
                    AccountInfo {
                        kind: *account_kind,
                        library_id: library_id.clone(),
                        token_hash: token_hash.clone(),
                    },
                );
            }
            Event::LibraryRegistered {
                library_id,
                tablet_count,
            } => {
                let escrow = escrow_account(library_id);
                self.stock.add_library(library_id, *tablet_count).map_err(wrap)?;
                self.ledger.open_account(&escrow, AccountKind::TabletEscrow).map_err(wrap)?;
                self.accounts.insert(
                    escrow,
                    AccountInfo {
                        kind: AccountKind::TabletEscrow,
                        library_id: Some(library_id.clone()),
                        token_hash: None,
                    },
                );
            }
            Event::TabletRegistered {
                tablet_id,
                library_id,
                payment_address,
                price,
            } => {
                self.stock
                    .add_tablet(Tablet {
                        id: tablet_id.clone(),
                        library_id: library_id.clone(),
                        payment_address: payment_address.clone(),
                        price: *price,
                        status: TabletStatus::Available,
                    })
                    .map_err(wrap)?;
            }
            Event::TabletLent { tablet_id, lent } => self.stock.set_lent(tablet_id, *lent).map_err(wrap)?,
            Event::SetUploaded { drill_set } => {
                self.drill_sets.insert(drill_set.id.clone(), drill_set.clone());
            }
            Event::ExamStarted {
                exam_id,
                student_id,
                drillset_id,
                sequence,
            } => {
                self.exams.insert(
                    exam_id.clone(),
                    ExamSession {
                        exam_id: exam_id.clone(),
                        student_id: student_id.clone(),
                        drillset_id: drillset_id.clone(),
                        sequence: sequence.clone(),
                        responses: Vec::new(),
                    },
                );
            }
            Event::Answer {
                student_id,
                drillset_id,
                item_id,
                correct,
                exam_id,
                rewards,
                ..
            } => {
                self.histories
                    .entry(student_id.clone())
                    .or_default()
                    .entry(drillset_id.clone())
                    .or_default()
                    .push(item_id.clone(), *correct, ts)
                    .map_err(wrap)?;
                if let Some(exam_id) = exam_id {
                    self.exams.get_mut(exam_id).expect("checked").responses.push(*correct);
                }
                for grant in rewards {
                    let memo = match &grant.collection_id {
                        Some(c) => {
                            self.awarded_collections.insert((student_id.clone(), c.clone()));
                            format!("{} {c}", grant.rule)
                        }
                        None => {
                            self.awarded_sets.insert((student_id.clone(), drillset_id.clone()));
                            format!("{} {drillset_id}", grant.rule)
                        }
                    };
                    if grant.amount > 0 {
                        self.ledger.mint(student_id, grant.amount, &memo, ts).map_err(wrap)?;
                    }
                }
            }
            Event::Reward {
                account_id,
                amount,
                memo,
            } => {
                self.ledger.mint(account_id, *amount, memo, ts).map_err(wrap)?;
            }
            Event::Transfer {
                from,
                to,
                amount,
                memo,
            } => {
                self.ledger.transfer(from, to, *amount, memo, ts).map_err(wrap)?;
            }
            Event::Purchase { student_id, payload } => {
                self.stock
                    .purchase_tablet(&mut self.ledger, student_id, payload, ts)
                    .map_err(wrap)?;
            }
        }
        self.last_seq = seq;
        Ok(())
    }
}

/// Folds a log through [`PlatformState::apply`].
pub fn replay(records: &[EventRecord]) -> Result<PlatformState> {
    let mut state = PlatformState::new();
    for record in records {
        state.apply(record)?;
    }
    Ok(state)
}
