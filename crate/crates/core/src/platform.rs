//! Live platform: every mutation becomes an [`Event`], is validated against
//! the current state, appended to the log and only then applied.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grading::{grade_tail, GradeState, GradingConfig};
use crate::itemgen::{DrillSet, PublicItem};
use crate::ledger::{
    default_payment_address, reward_for_event, AccountKind, PurchaseReceipt, RewardEvent, RewardRuleSet, Smly,
    Transaction, DEFAULT_TABLET_PRICE,
};
use crate::session::{begin_exam, AnswerOutcome, DrillSession, ExamSession, RewardGrant, DEFAULT_RECENT_WINDOW};
use crate::state::{replay, PlatformState};
use crate::storage::{Event, EventLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    pub grading: GradingConfig,
    pub rewards: RewardRuleSet,
    /// Collection id → member drill set ids.
    pub collections: BTreeMap<String, Vec<String>>,
    pub recent_window: usize,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            grading: GradingConfig::default(),
            rewards: RewardRuleSet::default(),
            collections: BTreeMap::new(),
            recent_window: DEFAULT_RECENT_WINDOW,
        }
    }
}

impl PlatformConfig {
    pub fn validate(&self) -> Result<()> {
        self.grading.validate()?;
        self.rewards.validate()?;
        if let Some((id, _)) = self.collections.iter().find(|(_, sets)| sets.is_empty()) {
            return Err(Error::InvalidConfig(format!("collection `{id}` is empty")));
        }
        Ok(())
    }
}

pub fn hash_token(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewAccount {
    pub account_id: String,
    pub kind: AccountKind,
    pub library_id: Option<String>,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamStart {
    pub exam_id: String,
    pub total: usize,
    pub item: PublicItem,
}

#[derive(Debug)]
pub struct Platform {
    config: PlatformConfig,
    state: PlatformState,
    log: EventLog,
    drill_sessions: HashMap<(String, String), DrillSession>,
    rng: ChaCha8Rng,
}

impl Platform {
    /// Rebuilds state from `log` and continues appending to it.
    pub fn new(config: PlatformConfig, log: EventLog, seed: u64) -> Result<Self> {
        config.validate()?;
        let state = replay(log.records())?;
        Ok(Self {
            config,
            state,
            log,
            drill_sessions: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn in_memory(config: PlatformConfig, seed: u64) -> Result<Self> {
        Self::new(config, EventLog::in_memory(), seed)
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn state(&self) -> &PlatformState {
        &self.state
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    fn commit(&mut self, now: u64, event: Event) -> Result<()> {
        self.state.check_event(now, &event)?;
        let record = self.log.append(now, event)?.clone();
        self.state.apply(&record)
    }

    pub fn register_library(&mut self, library_id: &str, tablet_count: u32, now: u64) -> Result<()> {
        self.commit(
            now,
            Event::LibraryRegistered {
                library_id: library_id.to_string(),
                tablet_count,
            },
        )
    }

    pub fn register_tablet(&mut self, tablet_id: &str, library_id: &str, price: Smly, now: u64) -> Result<()> {
        self.commit(
            now,
            Event::TabletRegistered {
                tablet_id: tablet_id.to_string(),
                library_id: library_id.to_string(),
                payment_address: default_payment_address(tablet_id),
                price,
            },
        )
    }

    /// Registers a library together with `tablet_count` tablets numbered
    /// `TBL-0001`, `TBL-0002`, … continuing the global sequence.
    pub fn register_library_with_tablets(&mut self, library_id: &str, tablet_count: u32, now: u64) -> Result<Vec<String>> {
        self.register_library(library_id, tablet_count, now)?;
        let mut ids = Vec::new();
        for _ in 0..tablet_count {
            let id = self.next_tablet_id();
            self.register_tablet(&id, library_id, DEFAULT_TABLET_PRICE, now)?;
            ids.push(id);
        }
        Ok(ids)
    }

    pub fn next_tablet_id(&self) -> String {
        let mut n = self.state.stock.tablets.len() + 1;
        loop {
            let id = format!("TBL-{n:04}");
            if !self.state.stock.tablets.contains_key(&id) {
                return id;
            }
            n += 1;
        }
    }

    pub fn set_tablet_lent(&mut self, tablet_id: &str, lent: bool, now: u64) -> Result<()> {
        self.commit(
            now,
            Event::TabletLent {
                tablet_id: tablet_id.to_string(),
                lent,
            },
        )
    }

    fn fresh_token(&mut self) -> String {
        let bytes: [u8; 24] = self.rng.gen();
        hex::encode(bytes)
    }

    /// Creates an account with an explicit id and issues its bearer token.
    pub fn create_account_with_id(
        &mut self,
        account_id: &str,
        kind: AccountKind,
        library_id: Option<&str>,
        now: u64,
    ) -> Result<NewAccount> {
        let token = self.fresh_token();
        self.commit(
            now,
            Event::AccountCreated {
                account_id: account_id.to_string(),
                account_kind: kind,
                library_id: library_id.map(str::to_string),
                token_hash: Some(hash_token(&token)),
            },
        )?;
        Ok(NewAccount {
            account_id: account_id.to_string(),
            kind,
            library_id: library_id.map(str::to_string),
            token,
        })
    }

    /// Creates an account with the next free `S<n>` id.
    pub fn create_account(&mut self, kind: AccountKind, library_id: Option<&str>, now: u64) -> Result<NewAccount> {
        let mut n = self.state.accounts.values().filter(|a| a.kind.is_student()).count() + 1;
        let id = loop {
            let id = format!("S{n}");
            if !self.state.accounts.contains_key(&id) {
                break id;
            }
            n += 1;
        };
        self.create_account_with_id(&id, kind, library_id, now)
    }

    pub fn authenticate(&self, token: &str) -> Option<&str> {
        let hash = hash_token(token);
        self.state
            .accounts
            .iter()
            .find(|(_, info)| info.token_hash.as_deref() == Some(hash.as_str()))
            .map(|(id, _)| id.as_str())
    }

    pub fn upload_drill_set(&mut self, set: DrillSet, now: u64) -> Result<()> {
        self.commit(now, Event::SetUploaded { drill_set: set })
    }

    /// Serves the next drill-mode item; it stays pending until answered.
    pub fn next_item(&mut self, student: &str, set_id: &str) -> Result<PublicItem> {
        self.state.student(student)?;
        let set = self.state.drill_set(set_id)?;
        let window = self.config.recent_window;
        let session = self
            .drill_sessions
            .entry((student.to_string(), set_id.to_string()))
            .or_insert_with(|| DrillSession::new(student, set_id, window));
        Ok(session.next_drill_item(set, &mut self.rng)?.redacted())
    }

    /// The pending drill item, if one was served and not yet answered.
    pub fn pending_item(&self, student: &str, set_id: &str) -> Option<PublicItem> {
        let session = self.drill_sessions.get(&(student.to_string(), set_id.to_string()))?;
        let set = self.state.drill_sets.get(set_id)?;
        Some(set.item(session.pending()?)?.redacted())
    }

    pub fn submit_drill_answer(
        &mut self,
        student: &str,
        set_id: &str,
        item_id: &str,
        selected_index: usize,
        now: u64,
    ) -> Result<AnswerOutcome> {
        let key = (student.to_string(), set_id.to_string());
        match self.drill_sessions.get(&key).and_then(DrillSession::pending) {
            Some(p) if p == item_id => {}
            _ => return Err(Error::NoPendingItem),
        }
        let outcome = self.record_answer(student, set_id, item_id, selected_index, now, None)?;
        self.drill_sessions
            .get_mut(&key)
            .expect("pending checked")
            .take_pending(item_id)?;
        Ok(outcome)
    }

    pub fn start_exam(&mut self, student: &str, set_id: &str, n: usize, now: u64) -> Result<ExamStart> {
        self.state.student(student)?;
        let set = self.state.drill_set(set_id)?;
        let sequence = begin_exam(set, n, &mut self.rng)?;
        let exam_id = format!("EX{}", self.state.exams.len() + 1);
        self.commit(
            now,
            Event::ExamStarted {
                exam_id: exam_id.clone(),
                student_id: student.to_string(),
                drillset_id: set_id.to_string(),
                sequence: sequence.clone(),
            },
        )?;
        let set = self.state.drill_set(set_id)?;
        Ok(ExamStart {
            exam_id,
            total: sequence.len(),
            item: set.item(&sequence[0]).expect("sampled from set").redacted(),
        })
    }

    pub fn exam(&self, exam_id: &str) -> Result<&ExamSession> {
        self.state.exams.get(exam_id).ok_or_else(|| Error::not_found("exam", exam_id))
    }

    /// The item at the exam cursor, if the exam is not finished.
    pub fn exam_current_item(&self, exam_id: &str) -> Result<Option<PublicItem>> {
        let exam = self.exam(exam_id)?;
        let set = self.state.drill_set(&exam.drillset_id)?;
        Ok(exam.current_item().and_then(|id| set.item(id)).map(|i| i.redacted()))
    }

    pub fn submit_exam_answer(
        &mut self,
        student: &str,
        exam_id: &str,
        item_id: &str,
        selected_index: usize,
        now: u64,
    ) -> Result<AnswerOutcome> {
        let exam = self.exam(exam_id)?;
        if exam.student_id != student {
            return Err(Error::Forbidden("exam belongs to another student".into()));
        }
        exam.expect_slot(item_id)?;
        let set_id = exam.drillset_id.clone();
        let mut outcome = self.record_answer(student, &set_id, item_id, selected_index, now, Some(exam_id))?;
        outcome.exam = Some(self.exam(exam_id)?.progress());
        Ok(outcome)
    }

    fn record_answer(
        &mut self,
        student: &str,
        set_id: &str,
        item_id: &str,
        selected_index: usize,
        now: u64,
        exam_id: Option<&str>,
    ) -> Result<AnswerOutcome> {
        let cfg = self.config.grading;
        let kind = self.state.student(student)?.kind;
        let set = self.state.drill_set(set_id)?;
        let item = set.item(item_id).ok_or_else(|| Error::not_found("item", item_id))?;
        let option = item.options.get(selected_index).ok_or(Error::IndexOutOfRange {
            index: selected_index,
            options: item.options.len(),
        })?;
        let correct = option.is_correct;
        let correct_index = item.correct_index().expect("items carry one key");
        let explanation = item.explanation.clone();

        let (mut tail, total) = self
            .state
            .history(student, set_id)
            .map(|h| (h.tail_bits(cfg.lookback), h.len()))
            .unwrap_or_default();
        let before = grade_tail(&tail, total, &cfg);
        tail.push(correct);
        if tail.len() > cfg.lookback {
            tail.remove(0);
        }
        let after = grade_tail(&tail, total + 1, &cfg);

        let rules = self.config.rewards;
        let mut rewards = Vec::new();
        let set_key = (student.to_string(), set_id.to_string());
        if after.aced && !before.aced && !self.state.awarded_sets.contains(&set_key) {
            rewards.push(RewardGrant {
                rule: RewardEvent::SetAced,
                collection_id: None,
                amount: reward_for_event(RewardEvent::SetAced, kind, &rules),
            });
        }
        if after.aced {
            for (collection_id, members) in &self.config.collections {
                if !members.iter().any(|m| m == set_id)
                    || self
                        .state
                        .awarded_collections
                        .contains(&(student.to_string(), collection_id.clone()))
                {
                    continue;
                }
                let all_aced = members
                    .iter()
                    .all(|m| m == set_id || self.state.grade(student, m, &cfg).aced);
                if all_aced {
                    rewards.push(RewardGrant {
                        rule: RewardEvent::CollectionAced,
                        collection_id: Some(collection_id.clone()),
                        amount: reward_for_event(RewardEvent::CollectionAced, kind, &rules),
                    });
                }
            }
        }

        self.commit(
            now,
            Event::Answer {
                student_id: student.to_string(),
                drillset_id: set_id.to_string(),
                item_id: item_id.to_string(),
                selected_index,
                correct,
                exam_id: exam_id.map(str::to_string),
                rewards: rewards.clone(),
            },
        )?;
        Ok(AnswerOutcome {
            correct,
            correct_index,
            explanation,
            grade_state: after,
            rewards,
            exam: None,
        })
    }

    pub fn grade(&self, student: &str, set_id: &str) -> Result<GradeState> {
        self.state.student(student)?;
        self.state.drill_set(set_id)?;
        Ok(self.state.grade(student, set_id, &self.config.grading))
    }

    pub fn balance(&self, account: &str) -> Result<Smly> {
        self.state.ledger.balance(account)
    }

    pub fn mint(&mut self, to: &str, amount: Smly, memo: &str, now: u64) -> Result<Transaction> {
        self.commit(
            now,
            Event::Reward {
                account_id: to.to_string(),
                amount,
                memo: memo.to_string(),
            },
        )?;
        Ok(self.last_transaction())
    }

    pub fn transfer(&mut self, from: &str, to: &str, amount: Smly, memo: &str, now: u64) -> Result<Transaction> {
        self.commit(
            now,
            Event::Transfer {
                from: from.to_string(),
                to: to.to_string(),
                amount,
                memo: memo.to_string(),
            },
        )?;
        Ok(self.last_transaction())
    }

    fn last_transaction(&self) -> Transaction {
        self.state.ledger.transactions().last().cloned().expect("transaction just recorded")
    }

    pub fn purchase(&mut self, student: &str, payload: &str, now: u64) -> Result<PurchaseReceipt> {
        self.commit(
            now,
            Event::Purchase {
                student_id: student.to_string(),
                payload: payload.to_string(),
            },
        )?;
        let tx = self.last_transaction();
        let tablet_id = payload.parse::<crate::ledger::PaymentPayload>()?.tablet_id;
        let tablet = self.state.stock.tablet(&tablet_id)?;
        Ok(PurchaseReceipt {
            tablet_id: tablet.id.clone(),
            library_id: tablet.library_id.clone(),
            student: student.to_string(),
            price: tablet.price,
            transaction_seq: tx.seq,
            balance_after: self.state.ledger.balance(student)?,
            tablet_count_after: self.state.stock.inventories[&tablet.library_id].tablet_count,
        })
    }
}
