use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::expr::{evaluate, parse_expression, Expr, RationalText};
use super::{item_id, DrillSet, Item, ItemOption, OptionKind, Provenance};
use crate::error::{Error, Result};

/// Redraws allowed per item before the template is declared degenerate.
pub const MAX_RETRIES: usize = 200;

/// Template file layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub header: String,
    pub body: String,
    /// Inclusive integer range per variable.
    pub vars: BTreeMap<String, (i64, i64)>,
    pub answer: String,
    pub distractors: Vec<String>,
    pub n_items: usize,
    #[serde(default)]
    pub seed: u64,
    /// Optional explanation text; may use `{var}` and `{answer}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

fn placeholders(text: &str) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| Error::InvalidTemplate(format!("unclosed `{{` in `{text}`")))?;
        out.insert(after[..close].trim().to_string());
        rest = &after[close + 1..];
    }
    Ok(out)
}

fn render(text: &str, values: &BTreeMap<String, String>) -> String {
    let mut out = text.to_string();
    for (name, value) in values {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

struct Compiled {
    answer: Expr,
    distractors: Vec<Expr>,
}

impl Template {
    fn compile(&self) -> Result<Compiled> {
        if self.distractors.is_empty() {
            return Err(Error::InvalidTemplate("at least one distractor expression is required".into()));
        }
        for (name, (lo, hi)) in &self.vars {
            if lo > hi {
                return Err(Error::InvalidTemplate(format!("empty range for `{name}`")));
            }
        }
        let declared = |name: &str| self.vars.contains_key(name);
        for name in placeholders(&self.body)? {
            if !declared(&name) {
                return Err(Error::InvalidTemplate(format!("undeclared placeholder `{{{name}}}`")));
            }
        }
        if let Some(expl) = &self.explanation {
            for name in placeholders(expl)? {
                if name != "answer" && !declared(&name) {
                    return Err(Error::InvalidTemplate(format!("undeclared placeholder `{{{name}}}`")));
                }
            }
        }
        let answer = parse_expression(&self.answer)?;
        let distractors = self
            .distractors
            .iter()
            .map(|d| parse_expression(d))
            .collect::<Result<Vec<_>>>()?;
        for expr in std::iter::once(&answer).chain(&distractors) {
            if let Some(name) = expr.variables().into_iter().find(|v| !declared(v)) {
                return Err(Error::InvalidTemplate(format!("undeclared variable `{name}`")));
            }
        }
        if let Some(i) = distractors.iter().position(|d| *d == answer) {
            return Err(Error::InvalidTemplate(format!(
                "distractor `{}` is identical to the answer",
                self.distractors[i]
            )));
        }
        Ok(Compiled {
            answer,
            distractors,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.compile().map(|_| ())
    }
}

fn draw_item<R: Rng + ?Sized>(
    tmpl: &Template,
    compiled: &Compiled,
    id: String,
    rng: &mut R,
) -> Result<Item> {
    for _ in 0..MAX_RETRIES {
        let ints: BTreeMap<String, i64> = tmpl
            .vars
            .iter()
            .map(|(name, &(lo, hi))| (name.clone(), rng.gen_range(lo..=hi)))
            .collect();
        let bindings: BTreeMap<String, BigRational> = ints
            .iter()
            .map(|(k, &v)| (k.clone(), BigRational::from_integer(BigInt::from(v))))
            .collect();
        // an expression that divides by zero for this draw makes the draw unusable
        let Ok(answer) = evaluate(&compiled.answer, &bindings) else {
            continue;
        };
        let mut seen = vec![answer.clone()];
        for expr in &compiled.distractors {
            if let Ok(value) = evaluate(expr, &bindings) {
                if !seen.contains(&value) {
                    seen.push(value);
                }
            }
        }
        if seen.len() < 3 {
            continue;
        }
        let answer_text = RationalText(&answer).to_string();
        let mut options: Vec<ItemOption> = seen
            .iter()
            .enumerate()
            .map(|(i, v)| ItemOption {
                text: RationalText(v).to_string(),
                is_correct: i == 0,
                kind: OptionKind::Plain,
            })
            .collect();
        options.shuffle(rng);

        let mut values: BTreeMap<String, String> =
            ints.iter().map(|(k, v)| (k.clone(), v.to_string())).collect();
        let body = render(&tmpl.body, &values);
        let explanation = match &tmpl.explanation {
            Some(text) => {
                values.insert("answer".into(), answer_text.clone());
                render(text, &values)
            }
            None => {
                let assignments: Vec<String> = ints.iter().map(|(k, v)| format!("{k} = {v}")).collect();
                format!("{} = {answer_text} with {}.", tmpl.answer, assignments.join(", "))
            }
        };
        return Ok(Item {
            id,
            options,
            explanation: format!("{body}\n{explanation}"),
        });
    }
    Err(Error::RetryBudgetExhausted(MAX_RETRIES))
}

/// Instantiates `tmpl.n_items` items from random variable bindings,
/// deterministically from `tmpl.seed`.
pub fn generate_from_template(tmpl: &Template) -> Result<DrillSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(tmpl.seed);
    generate_from_template_with(tmpl, &mut rng)
}

pub fn generate_from_template_with<R: Rng + ?Sized>(tmpl: &Template, rng: &mut R) -> Result<DrillSet> {
    let compiled = tmpl.compile()?;
    let items = (0..tmpl.n_items)
        .map(|i| draw_item(tmpl, &compiled, item_id(&tmpl.id, i), rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(DrillSet {
        id: tmpl.id.clone(),
        title: if tmpl.title.is_empty() { tmpl.id.clone() } else { tmpl.title.clone() },
        header: tmpl.header.clone(),
        items,
        provenance: Provenance::Template {
            seed: tmpl.seed,
            n_items: tmpl.n_items,
            answer: tmpl.answer.clone(),
            distractors: tmpl.distractors.clone(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addition(distractors: &[&str]) -> Template {
        Template {
            id: "ADD".into(),
            title: "Addition".into(),
            header: "Check the most appropriate box.".into(),
            body: "What is {a}+{b}?".into(),
            vars: BTreeMap::from([("a".into(), (1, 9)), ("b".into(), (1, 9))]),
            answer: "a+b".into(),
            distractors: distractors.iter().map(|s| s.to_string()).collect(),
            n_items: 40,
            seed: 42,
            explanation: None,
        }
    }

    #[test]
    fn fixed_bindings_dedupe_distractors() {
        let tmpl = Template {
            vars: BTreeMap::from([("a".into(), (2, 2)), ("b".into(), (3, 3))]),
            n_items: 1,
            ..addition(&["a+b+1", "a*b", "a-b"])
        };
        let set = generate_from_template(&tmpl).unwrap();
        let item = &set.items[0];
        let mut texts: Vec<&str> = item.options.iter().map(|o| o.text.as_str()).collect();
        texts.sort();
        assert_eq!(texts, vec!["-1", "5", "6"]);
        assert_eq!(item.options[item.correct_index().unwrap()].text, "5");
        assert!(item.explanation.contains("What is 2+3?"));
        assert!(item.explanation.contains("a+b = 5"));
    }

    #[test]
    fn collisions_never_survive() {
        let set = generate_from_template(&addition(&["a+b+1", "a*b", "a-b"])).unwrap();
        assert_eq!(set.items.len(), 40);
        for item in &set.items {
            item.check().unwrap();
            assert!(item.options.len() >= 3);
        }
    }

    #[test]
    fn identical_distractor_rejected() {
        assert!(matches!(generate_from_template(&addition(&["a+b"])), Err(Error::InvalidTemplate(_))));
    }

    #[test]
    fn always_colliding_distractor_exhausts_budget() {
        assert_eq!(
            generate_from_template(&addition(&["b+a", "a+b+0"])),
            Err(Error::RetryBudgetExhausted(MAX_RETRIES))
        );
    }

    #[test]
    fn deterministic_bytes() {
        let tmpl = addition(&["a+b+1", "a*b", "a-b"]);
        let a = serde_json::to_vec(&generate_from_template(&tmpl).unwrap()).unwrap();
        let b = serde_json::to_vec(&generate_from_template(&tmpl).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn undeclared_names_rejected() {
        let mut tmpl = addition(&["a*c", "a-b"]);
        assert!(tmpl.validate().is_err());
        tmpl = addition(&["a*b", "a-b"]);
        tmpl.body = "What is {a}+{z}?".into();
        assert!(tmpl.validate().is_err());
        tmpl = addition(&[]);
        assert!(tmpl.validate().is_err());
    }

    #[test]
    fn custom_explanation() {
        let tmpl = Template {
            explanation: Some("Add {a} and {b} to get {answer}.".into()),
            vars: BTreeMap::from([("a".into(), (4, 4)), ("b".into(), (5, 5))]),
            n_items: 1,
            ..addition(&["a*b", "a-b"])
        };
        let set = generate_from_template(&tmpl).unwrap();
        assert!(set.items[0].explanation.ends_with("Add 4 and 5 to get 9."));
    }

    #[test]
    fn fractional_answers_render_reduced() {
        let tmpl = Template {
            body: "What is {a}/{b}?".into(),
            vars: BTreeMap::from([("a".into(), (2, 2)), ("b".into(), (4, 4))]),
            answer: "a/b".into(),
            distractors: vec!["b/a".into(), "a*b".into()],
            n_items: 1,
            ..addition(&[])
        };
        let set = generate_from_template(&tmpl).unwrap();
        let item = &set.items[0];
        assert_eq!(item.options[item.correct_index().unwrap()].text, "1/2");
    }
}
