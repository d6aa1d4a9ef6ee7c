//! Selection-set sizes on synthetic label/prediction batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ascl_core::loss::{selection_stats_with, SelectionCounts, SelectionStrategy};

use crate::error::{Result, TrainError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticStats {
    pub strategy: SelectionStrategy,
    pub batch_size: usize,
    pub classes: usize,
    pub trials: usize,
    /// Probability that a natural prediction equals the label.
    pub pred_acc: f64,
    /// Probability that an adversarial prediction equals the label.
    pub adv_acc: f64,
    pub seed: u64,
}

impl Default for SyntheticStats {
    fn default() -> Self {
        Self {
            strategy: SelectionStrategy::Global,
            batch_size: 128,
            classes: 10,
            trials: 1000,
            pred_acc: 1.0,
            adv_acc: 1.0,
            seed: 0,
        }
    }
}

fn predict<R: Rng>(rng: &mut R, y: usize, classes: usize, acc: f64) -> usize {
    if classes < 2 || rng.random::<f64>() < acc {
        y
    } else {
        (y + rng.random_range(1..classes)) % classes
    }
}

/// Mean counts over `trials` batches with i.i.d. uniform labels; wrong
/// predictions pick one of the other classes uniformly.
pub fn synthetic_selection_stats(s: &SyntheticStats) -> Result<SelectionCounts> {
    if s.batch_size < 2 || s.classes == 0 || s.trials == 0 {
        return Err(TrainError::Config("need batch_size >= 2, classes >= 1, trials >= 1".into()));
    }
    for (name, p) in [("pred_acc", s.pred_acc), ("adv_acc", s.adv_acc)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(TrainError::Config(format!("{name} must lie in [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut total = SelectionCounts::default();
    for _ in 0..s.trials {
        let y: Vec<usize> = (0..s.batch_size).map(|_| rng.random_range(0..s.classes)).collect();
        let p: Vec<usize> = y.iter().map(|&l| predict(&mut rng, l, s.classes, s.pred_acc)).collect();
        let pa: Vec<usize> = y.iter().map(|&l| predict(&mut rng, l, s.classes, s.adv_acc)).collect();
        let c = selection_stats_with(s.strategy, &y, &p, &pa)?;
        total.positives += c.positives;
        total.negatives += c.negatives;
    }
    let t = s.trials as f64;
    Ok(SelectionCounts {
        positives: total.positives / t,
        negatives: total.negatives / t,
    })
}
