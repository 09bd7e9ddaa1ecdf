use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::genai::{PriceTable, Usage, UsageCost};

/// Token usage charged to one bug.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostItem {
    pub bug_id: String,
    pub usage: UsageCost,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelCost {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub dollar_cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub total: f64,
    /// Total divided by the number of distinct bugs.
    pub per_bug_average: f64,
    pub bugs: usize,
    pub per_model: BTreeMap<String, ModelCost>,
}

/// Reprices every item from the table; a model without a price is an error.
pub fn cost_summary(items: &[CostItem], prices: &PriceTable) -> Result<CostSummary, EvalError> {
    let mut summary = CostSummary::default();
    let mut bugs = BTreeSet::new();
    for item in items {
        let u = &item.usage;
        let priced = prices.cost(
            &u.model,
            Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            },
        )?;
        let m = summary.per_model.entry(u.model.clone()).or_default();
        m.calls += 1;
        m.prompt_tokens += u.prompt_tokens;
        m.completion_tokens += u.completion_tokens;
        m.dollar_cost += priced.dollar_cost;
        summary.total += priced.dollar_cost;
        bugs.insert(item.bug_id.as_str());
    }
    summary.bugs = bugs.len();
    if !bugs.is_empty() {
        summary.per_bug_average = summary.total / bugs.len() as f64;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genai::Price;

    fn item(bug: &str, model: &str, p: u64, c: u64) -> CostItem {
        CostItem {
            bug_id: bug.into(),
            usage: UsageCost {
                model: model.into(),
                prompt_tokens: p,
                completion_tokens: c,
                dollar_cost: 0.0,
            },
        }
    }

    fn table() -> PriceTable {
        PriceTable {
            models: [
                (
                    "a".to_owned(),
                    Price {
                        prompt: 1e-6,
                        completion: 0.0,
                    },
                ),
                (
                    "b".to_owned(),
                    Price {
                        prompt: 0.0,
                        completion: 2e-6,
                    },
                ),
            ]
            .into(),
        }
    }

    #[test]
    fn empty_is_zero() {
        let s = cost_summary(&[], &table()).unwrap();
        assert_eq!((s.total, s.per_bug_average), (0.0, 0.0));
    }

    #[test]
    fn two_attempts_on_one_bug() {
        let s = cost_summary(
            &[item("x", "a", 1000, 0), item("x", "a", 1000, 0)],
            &table(),
        )
        .unwrap();
        assert!((s.total - 0.002).abs() < 1e-12);
        assert!((s.per_bug_average - 0.002).abs() < 1e-12);
    }

    #[test]
    fn per_model_breakdown_and_missing_price() {
        let s = cost_summary(&[item("x", "a", 1000, 0), item("y", "b", 0, 500)], &table()).unwrap();
        assert_eq!(s.per_model.len(), 2);
        assert!((s.per_model["b"].dollar_cost - 0.001).abs() < 1e-12);
        assert!((s.per_bug_average - 0.001).abs() < 1e-12);
        assert!(cost_summary(&[item("x", "zzz", 1, 1)], &table()).is_err());
    }
}
