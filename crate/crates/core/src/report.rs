//! Run artifacts on disk and their aggregation across runs.
//!
//! A run directory holds `run.json`, `losses.csv`, `label_accuracy.csv`,
//! `eval.csv`, `summary.csv` and `corrections.jsonl`. Aggregation over many
//! run directories produces `ablation.csv` and `curves.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossMode};
use crate::metrics::EvalRecord;
use crate::train::RunReport;

pub const RUN_META_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub mode: LossMode,
    pub lc_enabled: bool,
    pub seed: u64,
    /// Noise level of the training boxes, when known.
    pub sigma: Option<f64>,
}

impl RunMeta {
    /// `LB`, `MC`, `MC+LC`, ...
    pub fn label(&self) -> String {
        if self.lc_enabled {
            format!("{}+LC", self.mode)
        } else {
            self.mode.to_string()
        }
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn losses_csv(report: &RunReport) -> String {
    let mut out = format!("{}\n", LossBreakdown::CSV_HEADER);
    for e in &report.epochs {
        out.push_str(&e.loss.csv_row(e.epoch, report.mode));
        out.push('\n');
    }
    out
}

/// Epoch 0 holds the accuracy of the boxes as given.
pub fn label_accuracy_csv(report: &RunReport, lambda0: f64) -> String {
    let mut out = String::from("epoch,lambda,label_accuracy\n");
    if report.initial_label_accuracy.is_some() {
        writeln!(out, "0,{lambda0},{}", opt(report.initial_label_accuracy)).unwrap();
    }
    for e in &report.epochs {
        writeln!(out, "{},{},{}", e.epoch, e.lambda, opt(e.label_accuracy)).unwrap();
    }
    out
}

pub fn eval_csv(records: &[EvalRecord]) -> String {
    let mut out = format!("{}\n", EvalRecord::CSV_HEADER);
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn parse_eval_csv(text: &str) -> Result<Vec<EvalRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == EvalRecord::CSV_HEADER => {}
        _ => return Err(Error::parse(0, format!("expected header {:?}", EvalRecord::CSV_HEADER))),
    }
    let mut offset = text.find('\n').map_or(text.len(), |k| k + 1);
    let mut out = Vec::new();
    for line in lines {
        if !line.trim().is_empty() {
            out.push(EvalRecord::parse_csv_row(line).map_err(|e| match e {
                Error::Parse { message, .. } => Error::parse(offset, message),
                other => other,
            })?);
        }
        offset += line.len() + 1;
    }
    Ok(out)
}

/// `metric,mean,median` over the per-image records; HD skips missing values.
pub fn summary_csv(records: &[EvalRecord]) -> String {
    let dice: Vec<f64> = records.iter().map(|r| r.dice).collect();
    let iou: Vec<f64> = records.iter().map(|r| r.iou).collect();
    let hd: Vec<f64> = records.iter().filter_map(|r| r.hd).collect();
    let mut out = String::from("metric,mean,median\n");
    for (name, v) in [("dice", &dice), ("iou", &iou), ("hd", &hd)] {
        writeln!(out, "{name},{},{}", opt(mean(v)), opt(median(v))).unwrap();
    }
    out
}

pub fn corrections_jsonl(report: &RunReport) -> Result<String> {
    let mut out = String::new();
    for ev in &report.events {
        out.push_str(&ev.to_jsonl()?);
    }
    Ok(out)
}

pub fn write_run(dir: &Path, meta: &RunMeta, report: &RunReport, lambda0: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RUN_META_FILE), serde_json::to_string_pretty(meta)? + "\n")?;
    fs::write(dir.join("losses.csv"), losses_csv(report))?;
    fs::write(dir.join("label_accuracy.csv"), label_accuracy_csv(report, lambda0))?;
    fs::write(dir.join("eval.csv"), eval_csv(&report.eval))?;
    fs::write(dir.join("summary.csv"), summary_csv(&report.eval))?;
    fs::write(dir.join("corrections.jsonl"), corrections_jsonl(report)?)?;
    Ok(())
}

/// What aggregation needs from one run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub meta: RunMeta,
    pub eval: Vec<EvalRecord>,
    /// `(epoch, label_accuracy)`, epoch 0 first when present.
    pub accuracy: Vec<(usize, f64)>,
}

impl RunSummary {
    pub fn mean_dice(&self) -> Option<f64> {
        mean(&self.eval.iter().map(|r| r.dice).collect::<Vec<_>>())
    }
}

pub fn read_run(dir: &Path) -> Result<RunSummary> {
    let meta: RunMeta = serde_json::from_str(&fs::read_to_string(dir.join(RUN_META_FILE))?)?;
    let eval = parse_eval_csv(&fs::read_to_string(dir.join("eval.csv"))?)?;
    let mut accuracy = Vec::new();
    let text = fs::read_to_string(dir.join("label_accuracy.csv"))?;
    let mut offset = 0;
    for (k, line) in text.lines().enumerate() {
        if k > 0 && !line.trim().is_empty() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::parse(offset, format!("bad label_accuracy row {line:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            if !f[2].is_empty() {
                let epoch = f[0].parse().map_err(|_| bad())?;
                let acc = f[2].parse().map_err(|_| bad())?;
                accuracy.push((epoch, acc));
            }
        }
        offset += line.len() + 1;
    }
    Ok(RunSummary { meta, eval, accuracy })
}

/// `mode,lc,mean_dice,mean_iou,mean_hd`, one row per configuration; each
/// value is the mean over runs of the per-run mean.
pub fn ablation_csv(runs: &[RunSummary]) -> String {
    let mut groups: BTreeMap<(String, bool), Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.meta.mode.to_string(), r.meta.lc_enabled)).or_default().push(r);
    }
    let mut out = String::from("mode,lc,mean_dice,mean_iou,mean_hd\n");
    for ((mode, lc), group) in groups {
        let per_run = |f: &dyn Fn(&EvalRecord) -> Option<f64>| {
            let means: Vec<f64> = group
                .iter()
                .filter_map(|r| mean(&r.eval.iter().filter_map(f).collect::<Vec<_>>()))
                .collect();
            mean(&means)
        };
        let dice = per_run(&|e| Some(e.dice));
        let iou = per_run(&|e| Some(e.iou));
        let hd = per_run(&|e| e.hd);
        writeln!(out, "{mode},{lc},{},{},{}", opt(dice), opt(iou), opt(hd)).unwrap();
    }
    out
}

/// Long-format curves: `curve,config,x,y`.
///
/// `sigma_dice` maps noise level to mean test Dice; `label_accuracy` maps
/// epoch to mean label accuracy. Both average over runs sharing a configuration.
pub fn curves_csv(runs: &[RunSummary]) -> String {
    let mut sigma: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    let mut acc: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in runs {
        let label = r.meta.label();
        if let (Some(s), Some(d)) = (r.meta.sigma, r.mean_dice()) {
            // total order on non-negative floats via their bits
            sigma.entry((label.clone(), s.to_bits())).or_default().push(d);
        }
        for &(epoch, a) in &r.accuracy {
            acc.entry((label.clone(), epoch)).or_default().push(a);
        }
    }
    let mut out = String::from("curve,config,x,y\n");
    for ((label, bits), v) in sigma {
        writeln!(out, "sigma_dice,{label},{},{}", f64::from_bits(bits), opt(mean(&v))).unwrap();
    }
    for ((label, epoch), v) in acc {
        writeln!(out, "label_accuracy,{label},{epoch},{}", opt(mean(&v))).unwrap();
    }
    out
}

/// Reads every run directory and writes `ablation.csv` and `curves.csv` into `out`.
pub fn aggregate(run_dirs: &[impl AsRef<Path>], out: &Path) -> Result<Vec<RunSummary>> {
    if run_dirs.is_empty() {
        return Err(Error::Config("no run directories given".into()));
    }
    let runs = run_dirs.iter().map(|d| read_run(d.as_ref())).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("ablation.csv"), ablation_csv(&runs))?;
    fs::write(out.join("curves.csv"), curves_csv(&runs))?;
    Ok(runs)
}
