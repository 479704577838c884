//! Dice, normalized surface Dice, HD95 and average surface distance.
//!
//! Empty-mask policy: both masks empty gives a perfect report flagged
//! `both_empty`; exactly one empty gives Dice = NSD = 0 with undefined
//! distances, flagged `one_empty`.

mod edt;
mod surface;

use serde::{Deserialize, Serialize};

pub use edt::squared_edt;
pub use surface::{
    surface_distances, surface_voxels, DistanceMode, SurfaceDistances, SurfaceSet, Unit,
};

use crate::error::{Error, Result};
use crate::volume::BinaryMask;

/// Default NSD tolerance.
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub tau: f64,
    pub unit: Unit,
    pub mode: DistanceMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            tau: DEFAULT_TAU,
            unit: Unit::Voxel,
            mode: DistanceMode::Edt,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    None,
    BothEmpty,
    OneEmpty,
}

impl Degenerate {
    pub fn as_str(self) -> &'static str {
        match self {
            Degenerate::None => "none",
            Degenerate::BothEmpty => "both_empty",
            Degenerate::OneEmpty => "one_empty",
        }
    }

    fn of(g: &BinaryMask, p: &BinaryMask) -> Self {
        match (g.is_empty(), p.is_empty()) {
            (true, true) => Degenerate::BothEmpty,
            (false, false) => Degenerate::None,
            _ => Degenerate::OneEmpty,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: f64,
    pub nsd: f64,
    /// `None` when exactly one mask is empty.
    pub hd95: Option<f64>,
    pub asd: Option<f64>,
    pub unit: Unit,
    pub tau: f64,
    pub degenerate: Degenerate,
}

/// `2 |G ∩ P| / (|G| + |P|)`; 1 when both are empty.
pub fn dice(g: &BinaryMask, p: &BinaryMask) -> Result<f64> {
    g.geometry.ensure_same_dims(&p.geometry)?;
    let (mut inter, mut sg, mut sp) = (0usize, 0usize, 0usize);
    for (&a, &b) in g.data.iter().zip(&p.data) {
        inter += (a & b) as usize;
        sg += a as usize;
        sp += b as usize;
    }
    if sg + sp == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (sg + sp) as f64)
}

/// Nearest-rank percentile of unsorted values: the `ceil(q/100 * n)`-th
/// smallest (1-based).
pub fn nearest_rank_percentile(values: &[f64], q: u32) -> f64 {
    assert!(!values.is_empty() && (1..=100).contains(&q));
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let rank = (q as usize * n).div_ceil(100);
    sorted[rank.max(1) - 1]
}

struct Shared {
    surface_g: usize,
    surface_p: usize,
    g_to_p: Vec<f64>,
    p_to_g: Vec<f64>,
}

fn shared(g: &BinaryMask, p: &BinaryMask, unit: Unit, mode: DistanceMode) -> Result<Shared> {
    let sg = surface_voxels(g);
    let sp = surface_voxels(p);
    let d = surface_distances(&sg, &sp, unit, mode)?;
    Ok(Shared {
        surface_g: sg.len(),
        surface_p: sp.len(),
        g_to_p: d.a_to_b_dist(),
        p_to_g: d.b_to_a_dist(),
    })
}

impl Shared {
    fn nsd(&self, tau: f64) -> f64 {
        let within = |v: &[f64]| v.iter().filter(|&&d| d <= tau).count();
        (within(&self.g_to_p) + within(&self.p_to_g)) as f64
            / (self.surface_g + self.surface_p) as f64
    }

    fn hd95(&self) -> f64 {
        nearest_rank_percentile(&self.g_to_p, 95).max(nearest_rank_percentile(&self.p_to_g, 95))
    }

    fn asd(&self) -> f64 {
        let total: f64 = self.g_to_p.iter().sum::<f64>() + self.p_to_g.iter().sum::<f64>();
        total / (self.surface_g + self.surface_p) as f64
    }
}

fn check_pair(g: &BinaryMask, p: &BinaryMask) -> Result<Degenerate> {
    g.geometry.ensure_same_dims(&p.geometry)?;
    Ok(Degenerate::of(g, p))
}

pub fn nsd(g: &BinaryMask, p: &BinaryMask, config: &MetricConfig) -> Result<f64> {
    match check_pair(g, p)? {
        Degenerate::BothEmpty => Ok(1.0),
        Degenerate::OneEmpty => Ok(0.0),
        Degenerate::None => Ok(shared(g, p, config.unit, config.mode)?.nsd(config.tau)),
    }
}

pub fn hd95(g: &BinaryMask, p: &BinaryMask, config: &MetricConfig) -> Result<f64> {
    match check_pair(g, p)? {
        Degenerate::BothEmpty => Ok(0.0),
        Degenerate::OneEmpty => Err(Error::UndefinedDistance),
        Degenerate::None => Ok(shared(g, p, config.unit, config.mode)?.hd95()),
    }
}

pub fn asd(g: &BinaryMask, p: &BinaryMask, config: &MetricConfig) -> Result<f64> {
    match check_pair(g, p)? {
        Degenerate::BothEmpty => Ok(0.0),
        Degenerate::OneEmpty => Err(Error::UndefinedDistance),
        Degenerate::None => Ok(shared(g, p, config.unit, config.mode)?.asd()),
    }
}

/// All four metrics from one surface extraction and one pair of distance
/// lists.
pub fn evaluate_case(
    g: &BinaryMask,
    p: &BinaryMask,
    config: &MetricConfig,
) -> Result<MetricReport> {
    let degenerate = check_pair(g, p)?;
    let (dice_v, nsd_v, hd, avg) = match degenerate {
        Degenerate::BothEmpty => (1.0, 1.0, Some(0.0), Some(0.0)),
        Degenerate::OneEmpty => (0.0, 0.0, None, None),
        Degenerate::None => {
            let s = shared(g, p, config.unit, config.mode)?;
            (
                dice(g, p)?,
                s.nsd(config.tau),
                Some(s.hd95()),
                Some(s.asd()),
            )
        }
    };
    Ok(MetricReport {
        dice: dice_v,
        nsd: nsd_v,
        hd95: hd,
        asd: avg,
        unit: config.unit,
        tau: config.tau,
        degenerate,
    })
}
