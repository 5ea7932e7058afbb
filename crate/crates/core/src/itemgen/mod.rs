//! Multiple-choice item generation.
//!
//! Two generators produce [`DrillSet`]s: [`generate_drill_set`] draws a
//! correct option and a truncated-Poisson number of distractors from curated
//! pools (optionally turning the item into a "None/All of the above" item),
//! and [`template::generate_from_template`] instantiates a parametric
//! question with random integer bindings.

pub mod expr;
pub mod poisson;
pub mod template;

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use expr::{evaluate, parse_expression, Expr};
pub use poisson::{sample_truncated_poisson, TruncatedPoisson};
pub use template::{generate_from_template, Template};

pub const NOTA_TEXT: &str = "None of the above";
pub const AOTA_TEXT: &str = "All of the above";

/// Index of the special option in NOTA/AOTA items.
pub const SPECIAL_INDEX: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub text: String,
    #[serde(default)]
    pub explanation: String,
}

impl PoolEntry {
    pub fn new(text: impl Into<String>, explanation: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            explanation: explanation.into(),
        }
    }
}

/// Pools file layout: `{"correct": [...], "distractors": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionPools {
    #[serde(rename = "correct")]
    pub correct_pool: Vec<PoolEntry>,
    #[serde(rename = "distractors")]
    pub distractor_pool: Vec<PoolEntry>,
}

impl OptionPools {
    pub fn validate(&self) -> Result<()> {
        if self.correct_pool.is_empty() {
            return Err(Error::InvalidPools("correct pool is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for entry in self.correct_pool.iter().chain(&self.distractor_pool) {
            if entry.text.trim().is_empty() {
                return Err(Error::InvalidPools("empty option text".into()));
            }
            if entry.text == NOTA_TEXT || entry.text == AOTA_TEXT {
                return Err(Error::InvalidPools(format!("reserved option text `{}`", entry.text)));
            }
            if !seen.insert(entry.text.as_str()) {
                return Err(Error::InvalidPools(format!("duplicate option text `{}`", entry.text)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    Plain,
    Nota,
    Aota,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemOption {
    pub text: String,
    pub is_correct: bool,
    pub kind: OptionKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub options: Vec<ItemOption>,
    pub explanation: String,
}

impl Item {
    pub fn correct_index(&self) -> Option<usize> {
        self.options.iter().position(|o| o.is_correct)
    }

    pub fn special_kind(&self) -> Option<OptionKind> {
        self.options
            .iter()
            .map(|o| o.kind)
            .find(|k| *k != OptionKind::Plain)
    }

    /// The item as shown to a student before answering.
    pub fn redacted(&self) -> PublicItem {
        PublicItem {
            id: self.id.clone(),
            options: self
                .options
                .iter()
                .map(|o| PublicOption {
                    text: o.text.clone(),
                    kind: o.kind,
                })
                .collect(),
        }
    }

    /// Checks the structural item invariants.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidPools(format!("item `{}`: {msg}", self.id)));
        if self.options.iter().filter(|o| o.is_correct).count() != 1 {
            return bad("must have exactly one correct option");
        }
        let texts: BTreeSet<&str> = self.options.iter().map(|o| o.text.as_str()).collect();
        if texts.len() != self.options.len() {
            return bad("duplicate option text");
        }
        let specials: Vec<usize> = self
            .options
            .iter()
            .enumerate()
            .filter(|(_, o)| o.kind != OptionKind::Plain)
            .map(|(i, _)| i)
            .collect();
        match specials.as_slice() {
            [] => Ok(()),
            [SPECIAL_INDEX] if self.options.len() == SPECIAL_INDEX + 1 => Ok(()),
            _ => bad("special option must be the fourth and last of four"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicOption {
    pub text: String,
    pub kind: OptionKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicItem {
    pub id: String,
    pub options: Vec<PublicOption>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_items: usize,
    pub lambda: f64,
    pub k_min: u32,
    pub k_max: u32,
    pub p_nota: f64,
    pub p_aota: f64,
    pub p_nota_correct: f64,
    pub p_aota_correct: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_items: 300,
            lambda: 3.0,
            k_min: 2,
            k_max: 7,
            p_nota: 0.217,
            p_aota: 0.197,
            p_nota_correct: 0.277,
            p_aota_correct: 0.321,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("p_nota", self.p_nota),
            ("p_aota", self.p_aota),
            ("p_nota_correct", self.p_nota_correct),
            ("p_aota_correct", self.p_aota_correct),
        ];
        for (name, p) in fractions {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} = {p} is not in [0, 1]")));
            }
        }
        if self.p_nota + self.p_aota > 1.0 {
            return Err(Error::InvalidConfig("p_nota + p_aota exceeds 1".into()));
        }
        if self.k_min > self.k_max {
            return Err(Error::InvalidRange {
                k_min: self.k_min,
                k_max: self.k_max,
            });
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidConfig("lambda must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Provenance {
    Pools {
        config: GenConfig,
        correct_pool: usize,
        distractor_pool: usize,
    },
    Template {
        seed: u64,
        n_items: usize,
        answer: String,
        distractors: Vec<String>,
    },
    Authored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrillSet {
    pub id: String,
    pub title: String,
    pub header: String,
    pub items: Vec<Item>,
    pub provenance: Provenance,
}

impl DrillSet {
    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for item in &self.items {
            if !ids.insert(item.id.as_str()) {
                return Err(Error::InvalidPools(format!("duplicate item id `{}`", item.id)));
            }
            item.check()?;
        }
        Ok(())
    }
}

fn plain(entry: &PoolEntry, is_correct: bool) -> ItemOption {
    ItemOption {
        text: entry.text.clone(),
        is_correct,
        kind: OptionKind::Plain,
    }
}

fn pick<'a, R: Rng + ?Sized>(pool: &'a [PoolEntry], n: usize, rng: &mut R) -> Vec<&'a PoolEntry> {
    index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| &pool[i])
        .collect()
}

fn ensure(pool: &'static str, entries: &[PoolEntry], needed: usize) -> Result<()> {
    if entries.len() < needed {
        return Err(Error::PoolTooSmall {
            pool,
            needed,
            available: entries.len(),
        });
    }
    Ok(())
}

/// One correct option plus `k ~ TruncatedPoisson(λ, k_min, k_max)` distinct
/// distractors, shuffled.
pub fn generate_plain_item<R: Rng + ?Sized>(
    id: impl Into<String>,
    pools: &OptionPools,
    cfg: &GenConfig,
    rng: &mut R,
) -> Result<Item> {
    ensure("correct", &pools.correct_pool, 1)?;
    ensure("distractor", &pools.distractor_pool, cfg.k_max as usize)?;
    let k = sample_truncated_poisson(cfg.lambda, cfg.k_min, cfg.k_max, rng)? as usize;
    let correct = &pools.correct_pool[rng.gen_range(0..pools.correct_pool.len())];
    let mut options = vec![plain(correct, true)];
    options.extend(pick(&pools.distractor_pool, k, rng).into_iter().map(|d| plain(d, false)));
    options.shuffle(rng);
    Ok(Item {
        id: id.into(),
        options,
        explanation: correct.explanation.clone(),
    })
}

fn joined_explanation(lead: &str, entries: &[&PoolEntry]) -> String {
    let mut text = lead.to_string();
    for e in entries.iter().filter(|e| !e.explanation.is_empty()) {
        text.push(' ');
        text.push_str(&e.explanation);
    }
    text
}

/// Four-option item whose last option is "None of the above" or "All of the
/// above". The special option is the answer key iff `special_correct`.
pub fn generate_special_item<R: Rng + ?Sized>(
    id: impl Into<String>,
    kind: OptionKind,
    special_correct: bool,
    pools: &OptionPools,
    rng: &mut R,
) -> Result<Item> {
    let (mut options, explanation) = match (kind, special_correct) {
        (OptionKind::Nota, true) => {
            ensure("distractor", &pools.distractor_pool, 3)?;
            let ds = pick(&pools.distractor_pool, 3, rng);
            let explanation = joined_explanation("None of the listed options is correct.", &ds);
            (ds.into_iter().map(|d| plain(d, false)).collect::<Vec<_>>(), explanation)
        }
        (OptionKind::Aota, true) => {
            ensure("correct", &pools.correct_pool, 3)?;
            let cs = pick(&pools.correct_pool, 3, rng);
            let explanation = joined_explanation("All of the listed options are correct.", &cs);
            (cs.into_iter().map(|c| plain(c, false)).collect(), explanation)
        }
        (OptionKind::Nota | OptionKind::Aota, false) => {
            ensure("correct", &pools.correct_pool, 1)?;
            ensure("distractor", &pools.distractor_pool, 2)?;
            let correct = &pools.correct_pool[rng.gen_range(0..pools.correct_pool.len())];
            let mut opts = vec![plain(correct, true)];
            opts.extend(pick(&pools.distractor_pool, 2, rng).into_iter().map(|d| plain(d, false)));
            (opts, correct.explanation.clone())
        }
        (OptionKind::Plain, _) => {
            return Err(Error::InvalidConfig("special item kind must be NOTA or AOTA".into()))
        }
    };
    options.shuffle(rng);
    options.push(ItemOption {
        text: if kind == OptionKind::Nota { NOTA_TEXT } else { AOTA_TEXT }.to_string(),
        is_correct: special_correct,
        kind,
    });
    Ok(Item {
        id: id.into(),
        options,
        explanation,
    })
}

/// Identity and header of a drill set being generated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetMeta {
    pub id: String,
    pub title: String,
    pub header: String,
}

pub fn item_id(set_id: &str, index: usize) -> String {
    format!("{set_id}-{:04}", index + 1)
}

/// Generates `cfg.n_items` items from the pools, deterministically from
/// `cfg.seed`.
pub fn generate_drill_set(meta: SetMeta, pools: &OptionPools, cfg: &GenConfig) -> Result<DrillSet> {
    cfg.validate()?;
    pools.validate()?;
    if cfg.n_items > 0 {
        ensure("distractor", &pools.distractor_pool, (cfg.k_max as usize).max(3))?;
        if cfg.p_aota > 0.0 && cfg.p_aota_correct > 0.0 {
            ensure("correct", &pools.correct_pool, 3)?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut items = Vec::with_capacity(cfg.n_items);
    for i in 0..cfg.n_items {
        let id = item_id(&meta.id, i);
        let u: f64 = rng.gen();
        let item = if u < cfg.p_nota {
            let correct = rng.gen_bool(cfg.p_nota_correct);
            generate_special_item(id, OptionKind::Nota, correct, pools, &mut rng)?
        } else if u < cfg.p_nota + cfg.p_aota {
            let correct = rng.gen_bool(cfg.p_aota_correct);
            generate_special_item(id, OptionKind::Aota, correct, pools, &mut rng)?
        } else {
            generate_plain_item(id, pools, cfg, &mut rng)?
        };
        items.push(item);
    }
    Ok(DrillSet {
        id: meta.id,
        title: meta.title,
        header: meta.header,
        items,
        provenance: Provenance::Pools {
            config: *cfg,
            correct_pool: pools.correct_pool.len(),
            distractor_pool: pools.distractor_pool.len(),
        },
    })
}

/// Numbered placeholder pools, handy for tests, benches and simulations.
pub fn synthetic_pools(n_correct: usize, n_distractors: usize) -> OptionPools {
    OptionPools {
        correct_pool: (1..=n_correct)
            .map(|i| PoolEntry::new(format!("Correct statement {i}"), format!("Statement {i} holds.")))
            .collect(),
        distractor_pool: (1..=n_distractors)
            .map(|i| PoolEntry::new(format!("Distractor {i}"), format!("Distractor {i} is false.")))
            .collect(),
    }
}
