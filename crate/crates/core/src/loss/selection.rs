use crate::error::{contract_err, Error, Result};
use crate::model::PredictionSnapshot;

/// Positive/negative selection rule for the contrastive term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum SelectionStrategy {
    /// Every other sample, split by true label.
    #[default]
    Global,
    /// Negatives restricted to samples predicted as the anchor's true label.
    HardLs,
    /// Negatives restricted to samples predicted as the anchor's predicted label.
    SoftLs,
    /// Soft-LS negatives, and positives restricted to the anchor's predicted label.
    LeakedLs,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 4] = [
        SelectionStrategy::Global,
        SelectionStrategy::HardLs,
        SelectionStrategy::SoftLs,
        SelectionStrategy::LeakedLs,
    ];
}

impl std::fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectionStrategy::Global => "global",
            SelectionStrategy::HardLs => "hard",
            SelectionStrategy::SoftLs => "soft",
            SelectionStrategy::LeakedLs => "leaked",
        })
    }
}

impl std::str::FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "global" => Ok(SelectionStrategy::Global),
            "hard" | "hard-ls" | "hardls" => Ok(SelectionStrategy::HardLs),
            "soft" | "soft-ls" | "softls" => Ok(SelectionStrategy::SoftLs),
            "leaked" | "leaked-ls" | "leakedls" => Ok(SelectionStrategy::LeakedLs),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Sets for one anchor, as slot indices into the `2N` pool (natural
/// `0..N`, adversarial `N..2N`). Both lists are ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionResult {
    pub anchor: usize,
    pub anchor_adv_slot: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Selection from raw labels and predictions; see [`select`].
pub fn select_with(
    strategy: SelectionStrategy,
    labels: &[usize],
    preds_nat: &[usize],
    preds_adv: &[usize],
    i: usize,
) -> Result<SelectionResult> {
    let n = labels.len();
    if preds_nat.len() != n || preds_adv.len() != n {
        return Err(contract_err!(
            "{} labels but {} natural and {} adversarial predictions",
            n,
            preds_nat.len(),
            preds_adv.len()
        ));
    }
    if i >= n {
        return Err(contract_err!("anchor {i} out of range for batch of {n}"));
    }
    let (y_i, p_i) = (labels[i], preds_nat[i]);
    let neg_target = match strategy {
        SelectionStrategy::Global => None,
        SelectionStrategy::HardLs => Some(y_i),
        SelectionStrategy::SoftLs | SelectionStrategy::LeakedLs => Some(p_i),
    };
    let pos_target = (strategy == SelectionStrategy::LeakedLs).then_some(p_i);
    let keep = |target: Option<usize>, pred: usize| target.is_none_or(|t| t == pred);

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut adv_pos = Vec::new();
    let mut adv_neg = Vec::new();
    for j in (0..n).filter(|&j| j != i) {
        if labels[j] == y_i {
            if keep(pos_target, preds_nat[j]) {
                positives.push(j);
            }
            if keep(pos_target, preds_adv[j]) {
                adv_pos.push(j + n);
            }
        } else {
            if keep(neg_target, preds_nat[j]) {
                negatives.push(j);
            }
            if keep(neg_target, preds_adv[j]) {
                adv_neg.push(j + n);
            }
        }
    }
    positives.extend(adv_pos);
    negatives.extend(adv_neg);
    Ok(SelectionResult {
        anchor: i,
        anchor_adv_slot: i + n,
        positives,
        negatives,
    })
}

/// Positive and negative sets of anchor `i` under `strategy`.
pub fn select(
    strategy: SelectionStrategy,
    labels: &[usize],
    snapshot: &PredictionSnapshot,
    i: usize,
) -> Result<SelectionResult> {
    select_with(strategy, labels, &snapshot.preds_nat, &snapshot.preds_adv, i)
}

pub fn select_all_with(
    strategy: SelectionStrategy,
    labels: &[usize],
    preds_nat: &[usize],
    preds_adv: &[usize],
) -> Result<Vec<SelectionResult>> {
    (0..labels.len())
        .map(|i| select_with(strategy, labels, preds_nat, preds_adv, i))
        .collect()
}

pub fn select_all(
    strategy: SelectionStrategy,
    labels: &[usize],
    snapshot: &PredictionSnapshot,
) -> Result<Vec<SelectionResult>> {
    select_all_with(strategy, labels, &snapshot.preds_nat, &snapshot.preds_adv)
}

/// Mean set sizes over anchors; positives count the anchor's adversarial slot.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SelectionCounts {
    pub positives: f64,
    pub negatives: f64,
}

pub fn counts_of(selections: &[SelectionResult]) -> SelectionCounts {
    if selections.is_empty() {
        return SelectionCounts::default();
    }
    let n = selections.len() as f64;
    SelectionCounts {
        positives: selections.iter().map(|s| (s.positives.len() + 1) as f64).sum::<f64>() / n,
        negatives: selections.iter().map(|s| s.negatives.len() as f64).sum::<f64>() / n,
    }
}

pub fn selection_stats_with(
    strategy: SelectionStrategy,
    labels: &[usize],
    preds_nat: &[usize],
    preds_adv: &[usize],
) -> Result<SelectionCounts> {
    if labels.len() < 2 {
        return Err(contract_err!("selection statistics need N >= 2"));
    }
    Ok(counts_of(&select_all_with(strategy, labels, preds_nat, preds_adv)?))
}

pub fn selection_stats(
    strategy: SelectionStrategy,
    labels: &[usize],
    snapshot: &PredictionSnapshot,
) -> Result<SelectionCounts> {
    selection_stats_with(strategy, labels, &snapshot.preds_nat, &snapshot.preds_adv)
}
