//! Grid sweeps over λ_scl × λ_vat × strategy.

use std::io::Write;

use rayon::prelude::*;

use ascl_core::adversary::AttackKind;
use ascl_core::data::Dataset;
use ascl_core::loss::SelectionStrategy;

use crate::config::RunConfig;
use crate::error::Result;
use crate::run::{train_on, RunOutput};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridCell {
    pub strategy: SelectionStrategy,
    pub lambda_scl: f64,
    pub lambda_vat: f64,
}

impl GridCell {
    /// Cartesian product in sorted order.
    pub fn grid(strategies: &[SelectionStrategy], lambda_scl: &[f64], lambda_vat: &[f64]) -> Vec<GridCell> {
        let mut cells = Vec::new();
        for &strategy in strategies {
            for &lambda_scl in lambda_scl {
                for &lambda_vat in lambda_vat {
                    cells.push(GridCell {
                        strategy,
                        lambda_scl,
                        lambda_vat,
                    });
                }
            }
        }
        cells.sort_by(|a, b| a.sort_key().partial_cmp(&b.sort_key()).expect("finite weights"));
        cells.dedup();
        cells
    }

    fn sort_key(&self) -> (String, f64, f64) {
        (self.strategy.to_string(), self.lambda_scl, self.lambda_vat)
    }

    fn label(&self) -> String {
        format!("{}-scl{}-vat{}", self.strategy, self.lambda_scl, self.lambda_vat)
    }

    /// `base` with this cell's strategy and weights.
    pub fn apply(&self, base: &RunConfig) -> Result<RunConfig> {
        base.with([
            ("strategy", self.strategy.to_string()),
            ("lambda_scl", self.lambda_scl.to_string()),
            ("lambda_vat", self.lambda_vat.to_string()),
        ])
    }
}

/// Final numbers of one trained cell.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct CellMetrics {
    pub nat_acc: f64,
    /// PGD robust accuracy of the final evaluation, or of the last epoch when
    /// the final evaluation has no PGD row.
    pub rob_acc: f64,
    pub mpgd_acc: Option<f64>,
    pub r_div: Option<f64>,
    pub d_a_plus: Option<f64>,
    pub d_a_minus: Option<f64>,
    /// Selection counts of the last training epoch.
    pub mean_pos: Option<f64>,
    pub mean_neg: Option<f64>,
}

impl CellMetrics {
    pub fn from_run(out: &RunOutput) -> Self {
        let test = out.last_test();
        let pgd = out.evaluation(AttackKind::Pgd);
        let nat = out
            .evaluation(AttackKind::None)
            .or(pgd)
            .and_then(|r| r.nat_acc)
            .or(test.and_then(|r| r.nat_acc));
        let div = pgd.or(test);
        let train = out.last_train();
        Self {
            nat_acc: nat.unwrap_or(f64::NAN),
            rob_acc: pgd.or(test).and_then(|r| r.rob_acc).unwrap_or(f64::NAN),
            mpgd_acc: out.evaluation(AttackKind::Mpgd).and_then(|r| r.rob_acc),
            r_div: div.and_then(|r| r.r_div),
            d_a_plus: div.and_then(|r| r.d_a_plus),
            d_a_minus: div.and_then(|r| r.d_a_minus),
            mean_pos: train.and_then(|r| r.mean_pos),
            mean_neg: train.and_then(|r| r.mean_neg),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub cell: GridCell,
    pub seed: u64,
    pub result: std::result::Result<CellMetrics, String>,
}

/// Builds the data from `base` once and runs every cell for every seed.
pub fn sweep(base: &RunConfig, cells: &[GridCell], seeds: &[u64]) -> Result<Vec<SweepOutcome>> {
    let (train, test) = base.datasets()?;
    Ok(sweep_on(base, cells, seeds, &train, &test))
}

/// Runs cells in parallel. All cells see the same seeds, so differences
/// between cells come from the grid alone. Failures are recorded per cell.
pub fn sweep_on(base: &RunConfig, cells: &[GridCell], seeds: &[u64], train: &Dataset, test: &Dataset) -> Vec<SweepOutcome> {
    let jobs: Vec<(GridCell, u64)> = cells.iter().flat_map(|&c| seeds.iter().map(move |&s| (c, s))).collect();
    let mut out: Vec<SweepOutcome> = jobs
        .par_iter()
        .map(|&(cell, seed)| {
            let result = (|| -> Result<CellMetrics> {
                let mut cfg = cell.apply(base)?.with([("seed", seed.to_string())])?;
                if let Some(dir) = &base.output_dir {
                    cfg.output_dir = Some(dir.join(format!("{}-seed{seed}", cell.label())));
                }
                Ok(CellMetrics::from_run(&train_on(&cfg, train, test)?))
            })()
            .map_err(|e| e.to_string());
            SweepOutcome { cell, seed, result }
        })
        .collect();
    out.sort_by(|a, b| {
        (a.cell.sort_key(), a.seed)
            .partial_cmp(&(b.cell.sort_key(), b.seed))
            .expect("finite weights")
    });
    out
}

pub const SWEEP_SUMMARY_HEADER: [&str; 14] = [
    "strategy",
    "lambda_scl",
    "lambda_vat",
    "seed",
    "status",
    "nat_acc",
    "rob_acc",
    "mpgd_acc",
    "r_div",
    "d_a_plus",
    "d_a_minus",
    "mean_pos",
    "mean_neg",
    "error",
];

pub fn write_sweep_summary<W: Write>(rows: &[SweepOutcome], w: W) -> Result<()> {
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_SUMMARY_HEADER)?;
    for r in rows {
        let mut rec = vec![
            r.cell.strategy.to_string(),
            r.cell.lambda_scl.to_string(),
            r.cell.lambda_vat.to_string(),
            r.seed.to_string(),
        ];
        match &r.result {
            Ok(m) => {
                rec.push("ok".into());
                rec.extend([
                    f(Some(m.nat_acc)),
                    f(Some(m.rob_acc)),
                    f(m.mpgd_acc),
                    f(m.r_div),
                    f(m.d_a_plus),
                    f(m.d_a_minus),
                    f(m.mean_pos),
                    f(m.mean_neg),
                    String::new(),
                ]);
            }
            Err(e) => {
                rec.push("failed".into());
                rec.extend(std::iter::repeat_n(String::new(), 8));
                rec.push(e.clone());
            }
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Seed-mean of a metric over successful runs of one cell.
pub fn seed_mean(rows: &[SweepOutcome], cell: &GridCell, metric: impl Fn(&CellMetrics) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.cell == *cell)
        .filter_map(|r| r.result.as_ref().ok().and_then(&metric))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
