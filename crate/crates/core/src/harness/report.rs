//! Report rows, aggregates and their CSV/JSON serializations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_text, AblationRow, ConfigSnapshot, SweepTable};
use crate::error::Result;
use crate::manifest::ManifestCase;
use crate::metrics::{MetricConfig, MetricReport};

pub const NA: &str = "NA";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub patient_id: String,
    pub fraction: u32,
    pub prior_fraction: Option<u32>,
    pub dice: Option<f64>,
    pub nsd: Option<f64>,
    pub hd95: Option<f64>,
    pub asd: Option<f64>,
    pub unit: String,
    pub tau: f64,
    pub degenerate: Option<String>,
    pub confidence: Option<f64>,
    /// Connected components of the ground truth; the box prompt is their union.
    pub components: Option<usize>,
    pub bbox: Option<[usize; 6]>,
    pub status: String,
    pub error: Option<String>,
}

impl CaseRow {
    pub(super) fn new(case: &ManifestCase, metrics: MetricConfig) -> Self {
        CaseRow {
            case_id: case.case_id(),
            patient_id: case.patient_id.clone(),
            fraction: case.fraction_index,
            prior_fraction: None,
            dice: None,
            nsd: None,
            hd95: None,
            asd: None,
            unit: metrics.unit.as_str().into(),
            tau: metrics.tau,
            degenerate: None,
            confidence: None,
            components: None,
            bbox: None,
            status: "failed".into(),
            error: None,
        }
    }

    pub(super) fn finish(&mut self, outcome: Result<(MetricReport, f64)>) {
        match outcome {
            Ok((r, confidence)) => {
                self.dice = Some(r.dice);
                self.nsd = Some(r.nsd);
                self.hd95 = r.hd95;
                self.asd = r.asd;
                self.degenerate = Some(r.degenerate.as_str().into());
                self.confidence = Some(confidence);
                self.status = "ok".into();
            }
            Err(e) => self.error = Some(e.to_string()),
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Mean and population standard deviation over the defined values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Stat {
            mean: Some(mean),
            sd: Some(var.sqrt()),
            n,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub dice: Stat,
    pub nsd: Stat,
    pub hd95: Stat,
    pub asd: Stat,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cases: usize,
    pub ok: usize,
    pub failed: usize,
}

/// Aggregates over successful rows only.
pub fn aggregate(rows: &[CaseRow]) -> Aggregates {
    let col = |f: fn(&CaseRow) -> Option<f64>| -> Stat {
        let v: Vec<f64> = rows.iter().filter(|r| r.ok()).filter_map(f).collect();
        Stat::of(&v)
    };
    Aggregates {
        dice: col(|r| r.dice),
        nsd: col(|r| r.nsd),
        hd95: col(|r| r.hd95),
        asd: col(|r| r.asd),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ConfigSnapshot,
    pub summary: Summary,
    pub aggregates: Aggregates,
    pub rows: Vec<CaseRow>,
}

impl ExperimentReport {
    pub fn new(config: ConfigSnapshot, rows: Vec<CaseRow>) -> Self {
        let ok = rows.iter().filter(|r| r.ok()).count();
        ExperimentReport {
            config,
            summary: Summary {
                cases: rows.len(),
                ok,
                failed: rows.len() - ok,
            },
            aggregates: aggregate(&rows),
            rows,
        }
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        write_text(
            &out_dir.join("report.json"),
            &(serde_json::to_string_pretty(self)? + "\n"),
        )?;
        write_csv(&self.rows, &out_dir.join("report.csv"))
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn bbox_field(b: &Option<[usize; 6]>) -> String {
    b.map_or_else(
        || NA.to_string(),
        |b| {
            b.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        },
    )
}

pub const CSV_HEADER: [&str; 16] = [
    "case_id",
    "patient_id",
    "fraction",
    "prior_fraction",
    "dice",
    "nsd",
    "hd95",
    "asd",
    "unit",
    "tau",
    "degenerate",
    "confidence",
    "components",
    "bbox",
    "status",
    "error",
];

pub fn write_csv(rows: &[CaseRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.case_id.clone(),
            r.patient_id.clone(),
            r.fraction.to_string(),
            opt(&r.prior_fraction),
            opt(&r.dice),
            opt(&r.nsd),
            opt(&r.hd95),
            opt(&r.asd),
            r.unit.clone(),
            r.tau.to_string(),
            opt(&r.degenerate),
            opt(&r.confidence),
            opt(&r.components),
            bbox_field(&r.bbox),
            r.status.clone(),
            opt(&r.error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub(super) fn write_sweep(t: &SweepTable, out_dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out_dir.join("sweep.csv"))?;
    w.write_record(["backend", "level", "mean_dice", "sd_dice", "n"])?;
    for r in &t.rows {
        w.write_record([
            r.backend.clone(),
            r.level.to_string(),
            opt(&r.mean_dice),
            opt(&r.sd_dice),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out_dir.join("sweep_runs.csv"))?;
    w.write_record([
        "backend", "level", "case_id", "rep", "faces", "bbox", "dice", "error",
    ])?;
    for r in &t.runs {
        w.write_record([
            r.backend.clone(),
            r.level.to_string(),
            r.case_id.clone(),
            r.rep.to_string(),
            r.faces.to_string(),
            bbox_field(&r.bbox),
            opt(&r.dice),
            opt(&r.error),
        ])?;
    }
    w.flush()?;
    write_text(
        &out_dir.join("sweep.json"),
        &(serde_json::to_string_pretty(t)? + "\n"),
    )
}

pub(super) fn write_ablation(rows: &[AblationRow], out_dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out_dir.join("ablation.csv"))?;
    w.write_record([
        "config",
        "n_ok",
        "n_failed",
        "dice_mean",
        "dice_sd",
        "nsd_mean",
        "nsd_sd",
        "hd95_mean",
        "hd95_sd",
        "asd_mean",
        "asd_sd",
    ])?;
    for r in rows {
        let mut rec = vec![
            r.config.clone(),
            r.summary.ok.to_string(),
            r.summary.failed.to_string(),
        ];
        for s in [&r.dice, &r.nsd, &r.hd95, &r.asd] {
            rec.push(opt(&s.mean));
            rec.push(opt(&s.sd));
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_sd() {
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!(s.mean, Some(2.0));
        assert_eq!(s.sd, Some(1.0));
        assert_eq!(Stat::of(&[]), Stat::default());
    }
}
