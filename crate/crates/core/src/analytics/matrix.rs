use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Role, TemplateCondition, Trace};

/// Mean assistant-token entropy for every (generator, evaluator) pair under
/// one formatting condition and persona.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossMatrix {
    pub condition: TemplateCondition,
    pub persona: Option<String>,
    pub generators: Vec<String>,
    pub evaluators: Vec<String>,
    /// `cells[g][e]`; `None` when no trace covers the pair.
    pub cells: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

impl CrossMatrix {
    pub fn cell(&self, generator: &str, evaluator: &str) -> Option<f64> {
        let g = self.generators.iter().position(|x| x == generator)?;
        let e = self.evaluators.iter().position(|x| x == evaluator)?;
        self.cells[g][e]
    }

    /// Per evaluator column: whether the self-generated cell is the column
    /// minimum. `None` when the diagonal cell is missing.
    pub fn diagonal_minimum_flags(&self) -> Vec<Option<bool>> {
        (0..self.evaluators.len())
            .map(|e| {
                let g = self.generators.iter().position(|x| *x == self.evaluators[e])?;
                let diag = self.cells[g][e]?;
                Some(
                    self.cells
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != g)
                        .filter_map(|(_, row)| row[e])
                        .all(|v| diag <= v),
                )
            })
            .collect()
    }
}

/// Builds one matrix per (condition, persona) group.
///
/// Cells pool the predicted entropy of every assistant-tagged token of the
/// group's traces. Values are sorted before summation so that the result
/// does not depend on trace order.
pub fn cross_matrices(traces: &[Trace], include_special: bool) -> Result<Vec<CrossMatrix>> {
    type Key = (TemplateCondition, Option<String>);
    let mut groups: BTreeMap<Key, BTreeMap<(String, String), Vec<f64>>> = BTreeMap::new();
    for t in traces {
        let m = &t.meta;
        if m.generator_id.is_empty() || m.evaluator_id.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "trace of model {} lacks generator or evaluator id",
                m.model_id
            )));
        }
        let cell = groups
            .entry((m.template_condition, m.persona.clone()))
            .or_default()
            .entry((m.generator_id.clone(), m.evaluator_id.clone()))
            .or_default();
        for r in &t.tokens {
            if r.role == Role::Assistant && (include_special || !t.is_special(r.token_id)) {
                cell.push(r.predicted_entropy);
            }
        }
    }
    let mut out = Vec::new();
    for ((condition, persona), cells) in groups {
        let generators: Vec<String> = cells.keys().map(|k| k.0.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let evaluators: Vec<String> = cells.keys().map(|k| k.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let mut m = CrossMatrix {
            condition,
            persona,
            cells: vec![vec![None; evaluators.len()]; generators.len()],
            counts: vec![vec![0; evaluators.len()]; generators.len()],
            generators,
            evaluators,
        };
        for ((g, e), mut values) in cells {
            if values.is_empty() {
                continue;
            }
            let gi = m.generators.iter().position(|x| *x == g).unwrap();
            let ei = m.evaluators.iter().position(|x| *x == e).unwrap();
            values.sort_by(f64::total_cmp);
            m.cells[gi][ei] = Some(values.iter().sum::<f64>() / values.len() as f64);
            m.counts[gi][ei] = values.len();
        }
        out.push(m);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfAdvantage {
    pub evaluator: String,
    pub self_h: f64,
    pub cross_mean: f64,
    pub cross_min: f64,
    pub cross_max: f64,
}

impl SelfAdvantage {
    /// `cross_mean − self_h`: positive when self-generated text reads as
    /// lower entropy.
    pub fn advantage(&self) -> f64 {
        self.cross_mean - self.self_h
    }
}

/// Self cell against the other generators' cells of the same column.
pub fn self_advantage(matrix: &CrossMatrix, evaluator: &str) -> Result<SelfAdvantage> {
    let e = matrix
        .evaluators
        .iter()
        .position(|x| x == evaluator)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown evaluator {evaluator}")))?;
    let self_h = matrix
        .cell(evaluator, evaluator)
        .ok_or_else(|| Error::Undefined(format!("no self cell for evaluator {evaluator}")))?;
    let cross: Vec<f64> = matrix
        .generators
        .iter()
        .zip(&matrix.cells)
        .filter(|(g, _)| g.as_str() != evaluator)
        .filter_map(|(_, row)| row[e])
        .collect();
    if cross.is_empty() {
        return Err(Error::Undefined(format!(
            "evaluator {evaluator} has no cross-generator cells"
        )));
    }
    Ok(SelfAdvantage {
        evaluator: evaluator.to_string(),
        self_h,
        cross_mean: cross.iter().sum::<f64>() / cross.len() as f64,
        cross_min: cross.iter().copied().fold(f64::INFINITY, f64::min),
        cross_max: cross.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Self-advantage per evaluator; undefined columns carry the reason.
pub fn self_advantages(matrix: &CrossMatrix) -> Vec<(String, std::result::Result<SelfAdvantage, String>)> {
    matrix
        .evaluators
        .iter()
        .map(|e| (e.clone(), self_advantage(matrix, e).map_err(|err| err.to_string())))
        .collect()
}

/// Aggregate of self-advantage over the evaluators of one class (a size
/// bucket or a training stage).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAdvantage {
    pub class: String,
    pub n_evaluators: usize,
    pub self_mean: f64,
    pub cross_mean: f64,
    /// Range of the cross cells over all evaluators of the class.
    pub cross_min: f64,
    pub cross_max: f64,
}

/// Groups evaluators by `class_of`, keeping the order classes first appear
/// in `order`. Evaluators without a class or an advantage are skipped.
pub fn class_advantages(
    advantages: &[SelfAdvantage],
    class_of: &BTreeMap<String, String>,
    order: &[String],
) -> Vec<ClassAdvantage> {
    let mut out = Vec::new();
    for class in order {
        let members: Vec<&SelfAdvantage> = advantages
            .iter()
            .filter(|a| class_of.get(&a.evaluator) == Some(class))
            .collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        out.push(ClassAdvantage {
            class: class.clone(),
            n_evaluators: members.len(),
            self_mean: members.iter().map(|a| a.self_h).sum::<f64>() / n,
            cross_mean: members.iter().map(|a| a.cross_mean).sum::<f64>() / n,
            cross_min: members.iter().map(|a| a.cross_min).fold(f64::INFINITY, f64::min),
            cross_max: members.iter().map(|a| a.cross_max).fold(f64::NEG_INFINITY, f64::max),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(ids: &[&str], cells: Vec<Vec<Option<f64>>>) -> CrossMatrix {
        let n = ids.len();
        CrossMatrix {
            condition: TemplateCondition::AssistantField,
            persona: None,
            generators: ids.iter().map(|s| s.to_string()).collect(),
            evaluators: ids.iter().map(|s| s.to_string()).collect(),
            cells,
            counts: vec![vec![1; n]; n],
        }
    }

    #[test]
    fn diagonal_flags() {
        let m = matrix(&["a", "b"], vec![vec![Some(0.1), Some(0.6)], vec![Some(0.5), Some(0.2)]]);
        assert_eq!(m.diagonal_minimum_flags(), vec![Some(true), Some(true)]);
        let m = matrix(&["a", "b"], vec![vec![Some(0.5), None], vec![Some(0.3), Some(0.2)]]);
        assert_eq!(m.diagonal_minimum_flags(), vec![Some(false), Some(true)]);
        let m = matrix(&["a", "b"], vec![vec![None, Some(0.1)], vec![Some(0.3), Some(0.2)]]);
        assert_eq!(m.diagonal_minimum_flags()[0], None);
    }

    #[test]
    fn advantage_column() {
        let m = matrix(
            &["a", "b", "c"],
            vec![
                vec![Some(0.2), None, None],
                vec![Some(0.5), None, None],
                vec![Some(0.7), None, None],
            ],
        );
        let a = self_advantage(&m, "a").unwrap();
        assert_eq!((a.self_h, a.cross_min, a.cross_max), (0.2, 0.5, 0.7));
        assert!((a.cross_mean - 0.6).abs() < 1e-15);
        assert!(matches!(self_advantage(&m, "b"), Err(Error::Undefined(_))));
    }

    #[test]
    fn single_generator_is_undefined() {
        let m = matrix(&["a"], vec![vec![Some(0.2)]]);
        assert!(matches!(self_advantage(&m, "a"), Err(Error::Undefined(_))));
    }
}
