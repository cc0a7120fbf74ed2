//! Ablation grids. Every cell is trained from the same seed on the same
//! split and scored on the test documents (the validation documents when no
//! test set is given).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use clap::ValueEnum;

use super::{CliConfig, CliError, Data};
use crate::baselines::SentenceBaseline;
use crate::embeddings::{CombineMode, ContextualStreamSet};
use crate::encoder::AttentionMode;
use crate::evalmetrics::{evaluate_documents, Averaging, EvalReport};
use crate::trainer::{self, TrainConfig};

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    /// Sentence baselines against the tagger without streams, with the
    /// first stream, and with all streams fused by CDME.
    Main,
    /// Attention variants.
    Attention,
    /// Every concatenated subset of streams, then DME and CDME.
    Streams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellKind {
    Model(TrainConfig),
    Baseline { context: bool, lambda: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub name: String,
    pub kind: CellKind,
}

fn model_cell(name: impl Into<String>, cfg: TrainConfig) -> Cell {
    Cell {
        name: name.into(),
        kind: CellKind::Model(cfg),
    }
}

fn with_streams(base: &TrainConfig, mode: CombineMode, streams: Vec<usize>) -> TrainConfig {
    TrainConfig {
        combine: Some(mode),
        streams,
        ..base.clone()
    }
}

/// The cells of `recipe`, given how many contextual streams are available.
pub fn grid(
    recipe: Recipe,
    base: &CliConfig,
    stream_count: Option<usize>,
) -> Result<Vec<Cell>, CliError> {
    let cfg = &base.train;
    let mut cells = Vec::new();
    match recipe {
        Recipe::Main => {
            if stream_count.is_some() {
                for (name, context) in [("sentence-only", false), ("sentence-context", true)] {
                    cells.push(Cell {
                        name: name.into(),
                        kind: CellKind::Baseline {
                            context,
                            lambda: base.baseline_lambda,
                        },
                    });
                }
            }
            cells.push(model_cell(
                "tagger",
                TrainConfig {
                    combine: None,
                    ..cfg.clone()
                },
            ));
            if let Some(n) = stream_count {
                cells.push(model_cell(
                    "tagger+stream0",
                    with_streams(cfg, CombineMode::Concat, vec![0]),
                ));
                if n > 1 {
                    cells.push(model_cell(
                        "tagger+cdme",
                        with_streams(cfg, CombineMode::Cdme, Vec::new()),
                    ));
                }
            }
        }
        Recipe::Attention => {
            for mode in [
                AttentionMode::None,
                AttentionMode::Weighted,
                AttentionMode::Unweighted,
            ] {
                let name = match mode {
                    AttentionMode::None => "no-attention".to_string(),
                    m => format!("{m}-attention"),
                };
                cells.push(model_cell(
                    name,
                    TrainConfig {
                        attention: mode,
                        ..cfg.clone()
                    },
                ));
            }
        }
        Recipe::Streams => {
            let n = stream_count.ok_or_else(|| {
                CliError::Usage("the streams recipe needs contextual streams".into())
            })?;
            if n == 0 || n > 16 {
                return Err(CliError::Data(format!("cannot enumerate {n} streams")));
            }
            let mut subsets: Vec<Vec<usize>> = (1u32..1 << n)
                .map(|mask| (0..n).filter(|&i| mask & (1 << i) != 0).collect())
                .collect();
            subsets.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
            for s in subsets {
                let ids: Vec<String> = s.iter().map(usize::to_string).collect();
                cells.push(model_cell(
                    format!("concat-{}[{}]", s.len(), ids.join(",")),
                    with_streams(cfg, CombineMode::Concat, s),
                ));
            }
            if n > 1 {
                for mode in [CombineMode::Dme, CombineMode::Cdme] {
                    cells.push(model_cell(
                        mode.to_string(),
                        with_streams(cfg, mode, Vec::new()),
                    ));
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub name: String,
    pub report: EvalReport,
}

fn file_name(cell: &str) -> String {
    cell.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Runs every cell of `recipe`, writing `<cell>.json` reports and
/// `summary.tsv` into `out`.
pub fn run_experiment(
    recipe: Recipe,
    base: &CliConfig,
    data: &Data,
    streams: Option<&ContextualStreamSet>,
    out: &Path,
    jobs: usize,
    mut progress: impl FnMut(&str),
) -> Result<Vec<CellResult>, CliError> {
    let cells = grid(recipe, base, streams.map(ContextualStreamSet::stream_count))?;
    let eval_docs = if data.test.is_empty() {
        &data.val
    } else {
        &data.test
    };
    if eval_docs.is_empty() {
        return Err(CliError::Data("no documents to evaluate on".into()));
    }
    fs::create_dir_all(out)?;
    let gold: Vec<_> = eval_docs.iter().map(|d| d.spans.clone()).collect();
    let mut results = Vec::with_capacity(cells.len());
    for cell in &cells {
        progress(&format!("cell {}", cell.name));
        let (pred, config_json) = match &cell.kind {
            CellKind::Model(cfg) => {
                let outcome = trainer::train_with_lookup(
                    &data.train,
                    &data.val,
                    streams,
                    cfg,
                    None,
                    |log| progress(&format!("  {log}")),
                )?;
                (
                    outcome.model.predict_all(eval_docs, streams, jobs)?,
                    serde_json::to_value(cfg)?,
                )
            }
            CellKind::Baseline { context, lambda } => {
                let set = streams.expect("baseline cells need streams");
                let model = SentenceBaseline::train(&data.train, set, *context, *lambda)?;
                let pred = eval_docs
                    .iter()
                    .map(|d| model.predict(d, set))
                    .collect::<Result<Vec<_>, _>>()?;
                (
                    pred,
                    serde_json::json!({"baseline": cell.name, "lambda": lambda}),
                )
            }
        };
        let report = evaluate_documents(&gold, &pred, Averaging::Micro)?;
        let mut json = report.to_json();
        json["cell"] = cell.name.clone().into();
        json["config"] = config_json;
        let mut text = serde_json::to_string_pretty(&json)?;
        text.push('\n');
        fs::write(out.join(format!("{}.json", file_name(&cell.name))), text)?;
        results.push(CellResult {
            name: cell.name.clone(),
            report,
        });
    }
    let mut tsv = String::from("cell\tP\tR\tF1\n");
    for r in &results {
        let s = &r.report.micro;
        let _ = writeln!(tsv, "{}\t{}\t{}\t{}", r.name, s.precision, s.recall, s.f1);
    }
    fs::write(out.join("summary.tsv"), tsv)?;
    Ok(results)
}

/// Fixed-width P/R/F1 table, one row per cell, in percent.
pub fn summary_table(results: &[CellResult]) -> String {
    let width = results
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(4)
        .max(4);
    let mut out = format!("{:<width$} {:>7} {:>7} {:>7}\n", "cell", "P", "R", "F1");
    for r in results {
        let s = &r.report.micro;
        let _ = writeln!(
            out,
            "{:<width$} {:>7.2} {:>7.2} {:>7.2}",
            r.name,
            100.0 * s.precision,
            100.0 * s.recall,
            100.0 * s.f1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(cells: &[Cell]) -> Vec<&str> {
        cells.iter().map(|c| c.name.as_str()).collect()
    }

    #[test]
    fn attention_grid() {
        let cells = grid(Recipe::Attention, &CliConfig::default(), None).unwrap();
        assert_eq!(
            names(&cells),
            ["no-attention", "weighted-attention", "unweighted-attention"]
        );
    }

    #[test]
    fn stream_grid_sizes() {
        let base = CliConfig::default();
        let one = grid(Recipe::Streams, &base, Some(1)).unwrap();
        assert_eq!(names(&one), ["concat-1[0]"]);
        let three = grid(Recipe::Streams, &base, Some(3)).unwrap();
        assert_eq!(three.len(), 7 + 2);
        assert_eq!(
            names(&three)[..4],
            ["concat-1[0]", "concat-1[1]", "concat-1[2]", "concat-2[0,1]"]
        );
        assert!(matches!(
            grid(Recipe::Streams, &base, None),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn main_grid_with_and_without_streams() {
        let base = CliConfig::default();
        assert_eq!(names(&grid(Recipe::Main, &base, None).unwrap()), ["tagger"]);
        assert_eq!(
            names(&grid(Recipe::Main, &base, Some(3)).unwrap()),
            [
                "sentence-only",
                "sentence-context",
                "tagger",
                "tagger+stream0",
                "tagger+cdme"
            ]
        );
    }
}
