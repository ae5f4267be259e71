use std::io::Write;
use std::path::Path;

use super::format::fmt_float;
use crate::error::{Error, Result};
use crate::trainer::LossCurve;

/// Comma-separated table with a header row and LF line endings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut csv = Self::default();
        csv.row(header.iter().map(|h| h.to_string()));
        csv
    }

    pub fn row(&mut self, cells: impl IntoIterator<Item = String>) {
        let cells: Vec<String> = cells.into_iter().collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(self.text.as_bytes())?;
        Ok(())
    }
}

/// Normalized final-window distances of one evaluation condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub condition: usize,
    pub ours: f64,
    pub random_network: f64,
    pub wrong_task_module: f64,
}

/// Zero-shot result of one seed: per-condition rows plus the baselines on
/// the same scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Column means in the order ours, random network, wrong task module.
    pub fn mean(&self) -> [f64; 3] {
        let n = self.rows.len().max(1) as f64;
        let mut m = [0.0; 3];
        for r in &self.rows {
            m[0] += r.ours;
            m[1] += r.random_network;
            m[2] += r.wrong_task_module;
        }
        m.map(|v| v / n)
    }
}

pub const ZEROSHOT_HEADER: [&str; 6] = ["config_hash", "seed", "condition", "ours", "random_network", "wrong_task_module"];

/// One row per condition and a `mean` row per seed, then an `all`/`mean`
/// row averaging every condition of every seed.
pub fn zeroshot_csv(reports: &[EvalReport]) -> Csv {
    let mut csv = Csv::new(&ZEROSHOT_HEADER);
    let mut all = Vec::new();
    for rep in reports {
        for r in &rep.rows {
            csv.row([
                rep.config_hash.clone(),
                rep.seed.to_string(),
                r.condition.to_string(),
                fmt_float(r.ours),
                fmt_float(r.random_network),
                fmt_float(r.wrong_task_module),
            ]);
            all.push(*r);
        }
        let m = rep.mean();
        csv.row(
            [rep.config_hash.clone(), rep.seed.to_string(), "mean".into()]
                .into_iter()
                .chain(m.map(fmt_float)),
        );
    }
    if let Some(first) = reports.first() {
        let pooled = EvalReport {
            config_hash: first.config_hash.clone(),
            seed: 0,
            rows: all,
        };
        csv.row(
            [first.config_hash.clone(), "all".into(), "mean".into()]
                .into_iter()
                .chain(pooled.mean().map(fmt_float)),
        );
    }
    csv
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    ComposedInit,
    WrongTaskInit,
    ScratchShaping,
    ScratchNoShaping,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::ComposedInit,
        Variant::WrongTaskInit,
        Variant::ScratchShaping,
        Variant::ScratchNoShaping,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::ComposedInit => "composed_init",
            Variant::WrongTaskInit => "wrong_task_init",
            Variant::ScratchShaping => "scratch_shaping",
            Variant::ScratchNoShaping => "scratch_no_shaping",
        }
    }

    pub fn parse(label: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.label() == label)
            .ok_or_else(|| Error::Config(format!("unknown fine-tune variant {label:?}")))
    }
}

/// Normalized task error before each fine-tuning iteration (and after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub variant: Variant,
    pub metric: Vec<f64>,
}

pub const FINETUNE_HEADER: [&str; 5] = ["config_hash", "seed", "variant", "iteration", "metric"];

pub fn finetune_csv(config_hash: &str, seed: u64, curves: &[LearningCurve]) -> Csv {
    let mut csv = Csv::new(&FINETUNE_HEADER);
    append_finetune_rows(&mut csv, config_hash, seed, curves);
    csv
}

pub fn append_finetune_rows(csv: &mut Csv, config_hash: &str, seed: u64, curves: &[LearningCurve]) {
    for c in curves {
        for (i, v) in c.metric.iter().enumerate() {
            csv.row([
                config_hash.to_string(),
                seed.to_string(),
                c.variant.label().to_string(),
                i.to_string(),
                fmt_float(*v),
            ]);
        }
    }
}

/// `epoch`, one column per world (`robot:task`), `total`.
pub fn loss_curve_csv(curve: &LossCurve) -> Csv {
    let header: Vec<String> = std::iter::once("epoch".to_string())
        .chain(curve.worlds.iter().map(|w| w.key()))
        .chain(std::iter::once("total".to_string()))
        .collect();
    let mut csv = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for (e, (row, total)) in curve.losses.iter().zip(curve.totals()).enumerate() {
        csv.row(
            std::iter::once(e.to_string())
                .chain(row.iter().map(|v| fmt_float(*v)))
                .chain(std::iter::once(fmt_float(total))),
        );
    }
    csv
}

/// One ablation cell: zero-shot mean and standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationCell {
    pub width: usize,
    pub rate: f64,
    pub mean: f64,
    pub std: f64,
}

pub const ABLATION_HEADER: [&str; 5] = ["config_hash", "width", "rate", "mean", "std"];

pub fn ablation_csv(config_hash: &str, cells: &[AblationCell]) -> Csv {
    let mut csv = Csv::new(&ABLATION_HEADER);
    for c in cells {
        csv.row([
            config_hash.to_string(),
            c.width.to_string(),
            fmt_float(c.rate),
            fmt_float(c.mean),
            fmt_float(c.std),
        ]);
    }
    csv
}
