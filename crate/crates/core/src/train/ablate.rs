use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train_on, MetricsReport, RunConfig};
use crate::error::{Error, Result};
use crate::world::Dataset;

pub const MIN_ABLATION_SEEDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub qa_accuracy: MeanStd,
    pub alignment_recall_at_1: MeanStd,
    pub attention_mass: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub with_alignment: MetricsReport,
    pub without_alignment: MetricsReport,
}

/// Paired comparison of training with and without the alignment term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub qa_accuracy_delta: f64,
    pub alignment_recall_delta: f64,
    /// With-alignment attention mass over the baseline's.
    pub attention_mass_ratio: f64,
    pub per_seed: Vec<SeedResult>,
}

fn field(r: &MetricsReport, name: &str, v: Option<f64>) -> Result<f64> {
    v.ok_or_else(|| Error::invalid("ablate", format!("eval split yields no {name} for {:?}", r.split)))
}

impl AblationReport {
    pub fn with_alignment(&self) -> &AblationRow {
        &self.rows[0]
    }

    pub fn without_alignment(&self) -> &AblationRow {
        &self.rows[1]
    }

    fn from_seeds(per_seed: Vec<SeedResult>) -> Result<Self> {
        let mut rows = Vec::with_capacity(2);
        for (variant, pick) in [
            ("with_alignment", (|s: &SeedResult| &s.with_alignment) as fn(&SeedResult) -> &MetricsReport),
            ("without_alignment", |s: &SeedResult| &s.without_alignment),
        ] {
            let (mut qa, mut recall, mut mass) = (Vec::new(), Vec::new(), Vec::new());
            for s in &per_seed {
                let r = pick(s);
                qa.push(field(r, "qa_accuracy", r.qa_accuracy)?);
                recall.push(field(r, "alignment_recall_at_1", r.alignment_recall_at_1)?);
                mass.push(field(r, "attention_mass", r.attention_mass)?);
            }
            rows.push(AblationRow {
                variant: variant.to_string(),
                qa_accuracy: MeanStd::of(&qa),
                alignment_recall_at_1: MeanStd::of(&recall),
                attention_mass: MeanStd::of(&mass),
            });
        }
        Ok(AblationReport {
            qa_accuracy_delta: rows[0].qa_accuracy.mean - rows[1].qa_accuracy.mean,
            alignment_recall_delta: rows[0].alignment_recall_at_1.mean - rows[1].alignment_recall_at_1.mean,
            attention_mass_ratio: rows[0].attention_mass.mean / rows[1].attention_mass.mean,
            rows,
            per_seed,
        })
    }

    /// Plain-text table: two variant rows, then deltas and the per-seed appendix.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>18} {:>24}", "variant", "qa_accuracy", "alignment_recall@1");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<20} {:>8.4} ± {:<7.4} {:>14.4} ± {:<7.4}",
                r.variant, r.qa_accuracy.mean, r.qa_accuracy.std, r.alignment_recall_at_1.mean, r.alignment_recall_at_1.std
            );
        }
        let _ = writeln!(
            s,
            "delta: qa_accuracy {:+.4}, alignment_recall@1 {:+.4}, attention mass ratio {:.3}",
            self.qa_accuracy_delta, self.alignment_recall_delta, self.attention_mass_ratio
        );
        let _ = writeln!(s, "per seed:");
        for p in &self.per_seed {
            let _ = writeln!(
                s,
                "  seed {:<6} with: qa {:.4} recall {:.4} | without: qa {:.4} recall {:.4}",
                p.seed,
                p.with_alignment.qa_accuracy.unwrap_or(f64::NAN),
                p.with_alignment.alignment_recall_at_1.unwrap_or(f64::NAN),
                p.without_alignment.qa_accuracy.unwrap_or(f64::NAN),
                p.without_alignment.alignment_recall_at_1.unwrap_or(f64::NAN),
            );
        }
        s
    }
}

/// Trains one run per (seed, ±alignment) on the same dataset. Run
/// directories are `<out_dir>/seed-<s>-{with,without}-align`.
pub fn run_ablation(base: &RunConfig, dataset: &Dataset, seeds: &[u64], out_dir: &Path) -> Result<AblationReport> {
    if seeds.len() < MIN_ABLATION_SEEDS {
        return Err(Error::config(
            "seeds",
            format!("ablation needs at least {MIN_ABLATION_SEEDS} seeds, got {}", seeds.len()),
        ));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut results = Vec::with_capacity(2);
        for align in [true, false] {
            let tag = if align { "with" } else { "without" };
            let config = RunConfig {
                seed,
                align,
                eval_each_epoch: false,
                output_dir: out_dir.join(format!("seed-{seed}-{tag}-align")),
                ..base.clone()
            };
            let outcome = train_on(&config, dataset)?;
            results.push(
                outcome
                    .final_eval
                    .ok_or_else(|| Error::invalid("ablate", "dataset has no eval split"))?,
            );
        }
        let without_alignment = results.pop().expect("two runs");
        let with_alignment = results.pop().expect("two runs");
        per_seed.push(SeedResult {
            seed,
            with_alignment,
            without_alignment,
        });
    }
    let report = AblationReport::from_seeds(per_seed)?;
    let path = out_dir.join("ablation.json");
    fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    let path = out_dir.join("ablation.txt");
    fs::write(&path, report.table()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
