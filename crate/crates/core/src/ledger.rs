//! Integer SMLY ledger, reward rules and the tablet purchase protocol.
//!
//! Balances are indivisible integer units. Tokens enter the system only by
//! minting (transactions whose source is [`MINT`]), so at every point the
//! sum of balances equals the total minted.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Smly = u64;

/// Source of newly minted tokens.
pub const MINT: &str = "MINT";

pub const DEFAULT_TABLET_PRICE: Smly = 1_000_000;
pub const FIRST_SALE_BONUS: u32 = 10;
pub const REPLENISH_PER_SALE: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountKind {
    PreRegistered,
    SelfRegistered,
    Charity,
    TabletEscrow,
}

impl AccountKind {
    pub fn is_student(self) -> bool {
        matches!(self, AccountKind::PreRegistered | AccountKind::SelfRegistered)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub id: String,
    pub kind: AccountKind,
    pub balance: Smly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub seq: u64,
    pub from: String,
    pub to: String,
    pub amount: Smly,
    pub memo: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardRuleSet {
    pub per_set_ace: Smly,
    pub per_collection_ace: Smly,
    pub self_registered_multiplier: f64,
}

impl Default for RewardRuleSet {
    fn default() -> Self {
        Self {
            per_set_ace: 10_000,
            per_collection_ace: 1_000_000,
            self_registered_multiplier: 0.0,
        }
    }
}

impl RewardRuleSet {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.self_registered_multiplier) {
            return Err(Error::InvalidConfig(
                "self_registered_multiplier must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardEvent {
    SetAced,
    CollectionAced,
}

impl fmt::Display for RewardEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardEvent::SetAced => "set_aced",
            RewardEvent::CollectionAced => "collection_aced",
        })
    }
}

pub fn reward_for_event(event: RewardEvent, kind: AccountKind, rules: &RewardRuleSet) -> Smly {
    let base = match event {
        RewardEvent::SetAced => rules.per_set_ace,
        RewardEvent::CollectionAced => rules.per_collection_ace,
    };
    match kind {
        AccountKind::PreRegistered => base,
        AccountKind::SelfRegistered => (base as f64 * rules.self_registered_multiplier).floor() as Smly,
        AccountKind::Charity | AccountKind::TabletEscrow => 0,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    accounts: BTreeMap<String, Account>,
    transactions: Vec<Transaction>,
    minted: Smly,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open_account(&mut self, id: &str, kind: AccountKind) -> Result<()> {
        self.check_open(id)?;
        self.accounts.insert(
            id.to_string(),
            Account {
                id: id.to_string(),
                kind,
                balance: 0,
            },
        );
        Ok(())
    }

    pub(crate) fn check_open(&self, id: &str) -> Result<()> {
        if id.is_empty() || id == MINT {
            return Err(Error::InvalidConfig(format!("invalid account id `{id}`")));
        }
        if self.accounts.contains_key(id) {
            return Err(Error::AlreadyExists {
                kind: "account",
                id: id.to_string(),
            });
        }
        Ok(())
    }

    pub fn account(&self, id: &str) -> Result<&Account> {
        self.accounts.get(id).ok_or_else(|| Error::not_found("account", id))
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.accounts.values()
    }

    pub fn balance(&self, id: &str) -> Result<Smly> {
        Ok(self.account(id)?.balance)
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn total_minted(&self) -> Smly {
        self.minted
    }

    pub fn total_balance(&self) -> Smly {
        self.accounts.values().map(|a| a.balance).sum()
    }

    /// Validates a transfer without applying it.
    pub fn check_transfer(&self, from: &str, to: &str, amount: Smly) -> Result<()> {
        if amount == 0 {
            return Err(Error::NonPositiveAmount);
        }
        if from == to {
            return Err(Error::SelfTransfer);
        }
        self.account(to)?;
        if from != MINT {
            let balance = self.balance(from)?;
            if balance < amount {
                return Err(Error::InsufficientFunds {
                    balance,
                    needed: amount,
                });
            }
        } else if self.minted.checked_add(amount).is_none() {
            return Err(Error::InvalidConfig("mint overflow".into()));
        }
        Ok(())
    }

    pub fn transfer(&mut self, from: &str, to: &str, amount: Smly, memo: &str, timestamp: u64) -> Result<Transaction> {
        self.check_transfer(from, to, amount)?;
        if from == MINT {
            self.minted += amount;
        } else {
            self.accounts.get_mut(from).expect("checked").balance -= amount;
        }
        self.accounts.get_mut(to).expect("checked").balance += amount;
        let tx = Transaction {
            seq: self.transactions.len() as u64 + 1,
            from: from.to_string(),
            to: to.to_string(),
            amount,
            memo: memo.to_string(),
            timestamp,
        };
        self.transactions.push(tx.clone());
        Ok(tx)
    }

    pub fn mint(&mut self, to: &str, amount: Smly, memo: &str, timestamp: u64) -> Result<Transaction> {
        self.transfer(MINT, to, amount, memo, timestamp)
    }

    /// Writes the transaction log as JSON Lines.
    pub fn write_transactions<W: Write>(&self, mut out: W) -> Result<()> {
        for tx in &self.transactions {
            serde_json::to_writer(&mut out, tx).map_err(|e| Error::Io(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Recomputes balances from a JSON Lines transaction log.
    pub fn balances_from_log<R: BufRead>(input: R) -> Result<BTreeMap<String, Smly>> {
        let mut txs = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let tx: Transaction = serde_json::from_str(&line).map_err(|e| Error::CorruptLog {
                line: i + 1,
                message: e.to_string(),
            })?;
            txs.push(tx);
        }
        replay_balances(&txs)
    }
}

/// Folds transactions into balances, rejecting anything the live ledger
/// would have refused. Accounts that never received funds are absent.
pub fn replay_balances(txs: &[Transaction]) -> Result<BTreeMap<String, Smly>> {
    let mut balances: BTreeMap<String, Smly> = BTreeMap::new();
    let mut last_seq = 0;
    for tx in txs {
        if tx.seq <= last_seq {
            return Err(Error::SequenceGap {
                expected: last_seq + 1,
                found: tx.seq,
            });
        }
        last_seq = tx.seq;
        if tx.amount == 0 {
            return Err(Error::NonPositiveAmount);
        }
        if tx.from != MINT {
            let balance = balances.entry(tx.from.clone()).or_default();
            if *balance < tx.amount {
                return Err(Error::InsufficientFunds {
                    balance: *balance,
                    needed: tx.amount,
                });
            }
            *balance -= tx.amount;
        }
        *balances.entry(tx.to.clone()).or_default() += tx.amount;
    }
    Ok(balances)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TabletStatus {
    Available,
    Lent,
    Sold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tablet {
    pub id: String,
    pub library_id: String,
    pub payment_address: String,
    pub price: Smly,
    pub status: TabletStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryInventory {
    pub library_id: String,
    pub tablet_count: u32,
    pub first_sale_bonus_paid: bool,
}

impl LibraryInventory {
    /// Stock after one sale: the sold tablet leaves, then the first sale
    /// brings a bonus batch and every later sale a single replacement.
    pub fn after_sale(&self) -> LibraryInventory {
        let restock = if self.first_sale_bonus_paid {
            REPLENISH_PER_SALE
        } else {
            FIRST_SALE_BONUS
        };
        LibraryInventory {
            library_id: self.library_id.clone(),
            tablet_count: self.tablet_count.saturating_sub(1) + restock,
            first_sale_bonus_paid: true,
        }
    }
}

pub fn escrow_account(library_id: &str) -> String {
    format!("escrow:{library_id}")
}

pub fn default_payment_address(tablet_id: &str) -> String {
    format!("ADDR-{tablet_id}")
}

/// The scan-to-pay payload printed on a tablet:
/// `smly:<payment_address>?amount=<price>&tablet=<id>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentPayload {
    pub payment_address: String,
    pub amount: Smly,
    pub tablet_id: String,
}

impl PaymentPayload {
    pub fn for_tablet(tablet: &Tablet) -> Self {
        Self {
            payment_address: tablet.payment_address.clone(),
            amount: tablet.price,
            tablet_id: tablet.id.clone(),
        }
    }
}

pub fn payment_payload(tablet: &Tablet) -> String {
    PaymentPayload::for_tablet(tablet).to_string()
}

impl fmt::Display for PaymentPayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "smly:{}?amount={}&tablet={}",
            self.payment_address, self.amount, self.tablet_id
        )
    }
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.contains(['?', '&', '=', ':']) && !s.chars().any(char::is_whitespace)
}

impl FromStr for PaymentPayload {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::MalformedPayload(msg.to_string());
        let rest = s.strip_prefix("smly:").ok_or_else(|| bad("missing `smly:` scheme"))?;
        let (address, query) = rest.split_once('?').ok_or_else(|| bad("missing query"))?;
        if !valid_token(address) {
            return Err(bad("invalid payment address"));
        }
        let (amount, tablet) = query.split_once('&').ok_or_else(|| bad("missing tablet parameter"))?;
        let amount = amount.strip_prefix("amount=").ok_or_else(|| bad("expected `amount=`"))?;
        let tablet_id = tablet.strip_prefix("tablet=").ok_or_else(|| bad("expected `tablet=`"))?;
        if amount.is_empty() || !amount.bytes().all(|b| b.is_ascii_digit()) || (amount.len() > 1 && amount.starts_with('0')) {
            return Err(bad("amount must be a canonical decimal integer"));
        }
        let amount: Smly = amount.parse().map_err(|_| bad("amount out of range"))?;
        if !valid_token(tablet_id) {
            return Err(bad("invalid tablet id"));
        }
        Ok(PaymentPayload {
            payment_address: address.to_string(),
            amount,
            tablet_id: tablet_id.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurchaseReceipt {
    pub tablet_id: String,
    pub library_id: String,
    pub student: String,
    pub price: Smly,
    pub transaction_seq: u64,
    pub balance_after: Smly,
    pub tablet_count_after: u32,
}

/// Tablets and per-library stock.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabletStock {
    pub tablets: BTreeMap<String, Tablet>,
    pub inventories: BTreeMap<String, LibraryInventory>,
}

impl TabletStock {
    pub fn check_library(&self, library_id: &str) -> Result<()> {
        if library_id.is_empty() || self.inventories.contains_key(library_id) {
            return Err(Error::AlreadyExists {
                kind: "library",
                id: library_id.to_string(),
            });
        }
        Ok(())
    }

    pub fn add_library(&mut self, library_id: &str, tablet_count: u32) -> Result<()> {
        self.check_library(library_id)?;
        self.inventories.insert(
            library_id.to_string(),
            LibraryInventory {
                library_id: library_id.to_string(),
                tablet_count,
                first_sale_bonus_paid: false,
            },
        );
        Ok(())
    }

    pub fn check_tablet(&self, tablet: &Tablet) -> Result<()> {
        if !self.inventories.contains_key(&tablet.library_id) {
            return Err(Error::not_found("library", &tablet.library_id));
        }
        if self.tablets.contains_key(&tablet.id) {
            return Err(Error::AlreadyExists { kind: "tablet", id: tablet.id.clone() });
        }
        if self.tablets.values().any(|t| t.payment_address == tablet.payment_address) {
            return Err(Error::AlreadyExists {
                kind: "payment address",
                id: tablet.payment_address.clone(),
            });
        }
        if tablet.price == 0 {
            return Err(Error::NonPositiveAmount);
        }
        let probe = PaymentPayload::for_tablet(tablet);
        if probe.to_string().parse::<PaymentPayload>().as_ref() != Ok(&probe) {
            return Err(Error::InvalidConfig(format!("tablet `{}` cannot be encoded as a payload", tablet.id)));
        }
        Ok(())
    }

    pub fn add_tablet(&mut self, tablet: Tablet) -> Result<()> {
        self.check_tablet(&tablet)?;
        self.tablets.insert(tablet.id.clone(), tablet);
        Ok(())
    }

    pub fn tablet(&self, id: &str) -> Result<&Tablet> {
        self.tablets.get(id).ok_or_else(|| Error::not_found("tablet", id))
    }

    pub fn set_lent(&mut self, id: &str, lent: bool) -> Result<()> {
        self.check_lend(id)?;
        let tablet = self.tablets.get_mut(id).expect("checked");
        tablet.status = if lent { TabletStatus::Lent } else { TabletStatus::Available };
        Ok(())
    }

    pub fn check_lend(&self, id: &str) -> Result<()> {
        if self.tablet(id)?.status == TabletStatus::Sold {
            return Err(Error::TabletSold(id.to_string()));
        }
        Ok(())
    }

    fn resolve(&self, payload: &str) -> Result<&Tablet> {
        let parsed: PaymentPayload = payload.parse()?;
        let tablet = self.tablet(&parsed.tablet_id)?;
        if tablet.payment_address != parsed.payment_address {
            return Err(Error::MalformedPayload("payment address does not match tablet".into()));
        }
        if tablet.price != parsed.amount {
            return Err(Error::MalformedPayload(format!(
                "amount {} does not match price {}",
                parsed.amount, tablet.price
            )));
        }
        if tablet.status == TabletStatus::Sold {
            return Err(Error::TabletSold(tablet.id.clone()));
        }
        Ok(tablet)
    }

    pub fn check_purchase(&self, ledger: &Ledger, student: &str, payload: &str) -> Result<()> {
        let tablet = self.resolve(payload)?;
        if !ledger.account(student)?.kind.is_student() {
            return Err(Error::Forbidden("only student accounts can buy tablets".into()));
        }
        ledger.check_transfer(student, &escrow_account(&tablet.library_id), tablet.price)
    }

    /// Pays for a tablet from a scanned payload. Either every effect lands
    /// (transfer, sold status, restock) or none does.
    pub fn purchase_tablet(
        &mut self,
        ledger: &mut Ledger,
        student: &str,
        payload: &str,
        timestamp: u64,
    ) -> Result<PurchaseReceipt> {
        self.check_purchase(ledger, student, payload)?;
        let tablet_id = self.resolve(payload)?.id.clone();
        let tablet = self.tablets.get_mut(&tablet_id).expect("resolved");
        let tx = ledger.transfer(
            student,
            &escrow_account(&tablet.library_id),
            tablet.price,
            &format!("purchase {}", tablet.id),
            timestamp,
        )?;
        tablet.status = TabletStatus::Sold;
        let inventory = self
            .inventories
            .get_mut(&tablet.library_id)
            .expect("tablet library registered");
        *inventory = inventory.after_sale();
        Ok(PurchaseReceipt {
            tablet_id: tablet.id.clone(),
            library_id: tablet.library_id.clone(),
            student: student.to_string(),
            price: tablet.price,
            transaction_seq: tx.seq,
            balance_after: ledger.balance(student)?,
            tablet_count_after: inventory.tablet_count,
        })
    }
}
