//! The segmenter contract: a request of file references and prompts in, a
//! binary mask and a confidence out.
//!
//! Two backends are built in: `propagate` (rigid registration of the prior
//! scan followed by mask propagation) and `prior-oracle` (the prior mask
//! clipped to the box prompt). Anything else runs out of process behind the
//! JSON-lines protocol in [`external`].

pub mod external;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bbox::BBox3;
use crate::error::{Error, Result};
use crate::nifti::{read_mask, read_volume};
use crate::registration::{propagate_mask, register_rigid, Metric, RegConfig};
use crate::volume::{BinaryMask, Geometry, Volume};

pub use external::{ExternalConfig, ExternalSegmenter};

/// Image inputs of one request. Absent entries travel as `null`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inputs {
    pub current: PathBuf,
    pub prior: Option<PathBuf>,
    pub prior_mask: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompts {
    pub bbox: Option<BBox3>,
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationRequest {
    pub case_id: String,
    pub inputs: Inputs,
    pub prompts: Prompts,
    /// Scratch directory for backends that write files.
    pub out_dir: PathBuf,
    pub options: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    pub case_id: String,
    pub mask: BinaryMask,
    pub confidence: f64,
}

pub trait Segmenter: Send + Sync {
    fn name(&self) -> &str;
    fn segment(&self, req: &SegmentationRequest) -> Result<SegmentationResult>;
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::MissingPrompt(format!("{what} is required by this backend")))
}

fn parse_option<T: FromStr>(req: &SegmentationRequest, key: &str) -> Result<Option<T>> {
    match req.options.get(key) {
        None => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|_| {
            Error::invalid_spec(
                format!("options.{key}"),
                format!("unrecognised value `{v}`"),
            )
        }),
    }
}

/// Which scan is held fixed by the propagation backend.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Current scan fixed, prior moving; the prior mask is pulled onto the
    /// current grid directly.
    #[default]
    CurrentToPrior,
    /// Prior fixed, current moving; the recovered transform is inverted.
    PriorToCurrent,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::CurrentToPrior => "current-to-prior",
            Direction::PriorToCurrent => "prior-to-current",
        }
    }
}

impl FromStr for Direction {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "current-to-prior" => Ok(Direction::CurrentToPrior),
            "prior-to-current" => Ok(Direction::PriorToCurrent),
            _ => Err(()),
        }
    }
}

fn parse_metric(s: &str) -> Option<Metric> {
    match s {
        "mse" => Some(Metric::Mse),
        "ncc" => Some(Metric::Ncc),
        _ => None,
    }
}

fn population_variance(v: &Volume) -> f64 {
    let n = v.data.len() as f64;
    let mean = v.data.iter().map(|&x| x as f64).sum::<f64>() / n;
    v.data
        .iter()
        .map(|&x| (x as f64 - mean).powi(2))
        .sum::<f64>()
        / n
}

/// Map a final registration cost to `[0, 1]`: `1 - mse / var(fixed)` for
/// MSE, the correlation itself for NCC.
pub fn registration_confidence(cost: f64, metric: Metric, fixed: &Volume) -> f64 {
    let c = match metric {
        Metric::Mse => {
            let var = population_variance(fixed);
            if var > 0.0 {
                1.0 - cost / var
            } else {
                0.0
            }
        }
        Metric::Ncc => 1.0 - cost,
    };
    if c.is_finite() {
        c.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Registration-only baseline. Options: `metric` (`mse`|`ncc`), `direction`.
#[derive(Clone, Debug, Default)]
pub struct Propagate {
    pub config: RegConfig,
}

impl Segmenter for Propagate {
    fn name(&self) -> &str {
        "propagate"
    }

    fn segment(&self, req: &SegmentationRequest) -> Result<SegmentationResult> {
        let mut config = self.config.clone();
        if let Some(m) = req.options.get("metric") {
            config.metric = parse_metric(m).ok_or_else(|| {
                Error::invalid_spec("options.metric", format!("unrecognised value `{m}`"))
            })?;
        }
        let direction: Direction = parse_option(req, "direction")?.unwrap_or_default();

        let current = read_volume(&req.inputs.current)?;
        let prior = read_volume(required(&req.inputs.prior, "prior image")?)?;
        let prior_mask = read_mask(required(&req.inputs.prior_mask, "prior mask")?)?;
        prior.geometry.ensure_same_dims(&prior_mask.geometry)?;

        let (mask, confidence) = match direction {
            Direction::CurrentToPrior => {
                let reg = register_rigid(&current, &prior, &config)?;
                let mask = propagate_mask(&prior_mask, &reg.transform, &current.geometry);
                (
                    mask,
                    registration_confidence(reg.final_cost, reg.metric, &current),
                )
            }
            Direction::PriorToCurrent => {
                let reg = register_rigid(&prior, &current, &config)?;
                let mask = propagate_mask(&prior_mask, &reg.transform.inverse(), &current.geometry);
                (
                    mask,
                    registration_confidence(reg.final_cost, reg.metric, &prior),
                )
            }
        };
        Ok(SegmentationResult {
            case_id: req.case_id.clone(),
            mask,
            confidence,
        })
    }
}

/// `mask ∩ box`, voxel by voxel.
pub fn clip_to_bbox(mask: &BinaryMask, b: &BBox3) -> BinaryMask {
    let mut out = BinaryMask::empty(mask.geometry.clone());
    for idx in 0..mask.data.len() {
        if mask.data[idx] != 0 && b.contains(mask.geometry.coords(idx)) {
            out.data[idx] = 1;
        }
    }
    out
}

/// Prior mask clipped to the box prompt. The mask comes from the mask prompt,
/// falling back to the `prior_mask` input.
#[derive(Clone, Copy, Debug, Default)]
pub struct PriorOracle;

impl Segmenter for PriorOracle {
    fn name(&self) -> &str {
        "prior-oracle"
    }

    fn segment(&self, req: &SegmentationRequest) -> Result<SegmentationResult> {
        let b = req
            .prompts
            .bbox
            .ok_or_else(|| Error::MissingPrompt("prior-oracle needs a box prompt".into()))?;
        let path = req
            .prompts
            .mask
            .as_ref()
            .or(req.inputs.prior_mask.as_ref())
            .ok_or_else(|| Error::MissingPrompt("prior-oracle needs a prior mask".into()))?;
        let prior = read_mask(path)?;
        Ok(SegmentationResult {
            case_id: req.case_id.clone(),
            mask: clip_to_bbox(&prior, &b),
            confidence: 1.0,
        })
    }
}

/// `propagate`, `prior-oracle` or `external:CMD`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackendSpec {
    Propagate,
    PriorOracle,
    External(String),
}

impl FromStr for BackendSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "propagate" => Ok(BackendSpec::Propagate),
            "prior-oracle" => Ok(BackendSpec::PriorOracle),
            _ => match s.strip_prefix("external:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(BackendSpec::External(cmd.to_string())),
                _ => Err(Error::invalid_spec(
                    "backend",
                    format!("expected propagate, prior-oracle or external:CMD, got `{s}`"),
                )),
            },
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Propagate => f.write_str("propagate"),
            BackendSpec::PriorOracle => f.write_str("prior-oracle"),
            BackendSpec::External(cmd) => write!(f, "external:{cmd}"),
        }
    }
}

impl BackendSpec {
    pub fn connect(&self, external: &ExternalConfig) -> Result<Box<dyn Segmenter>> {
        Ok(match self {
            BackendSpec::Propagate => Box::new(Propagate::default()),
            BackendSpec::PriorOracle => Box::new(PriorOracle),
            BackendSpec::External(cmd) => Box::new(ExternalSegmenter::spawn(cmd, external)?),
        })
    }
}

fn geometry_matches(a: &Geometry, b: &Geometry) -> bool {
    a.dims == b.dims
        && (0..3).all(|i| {
            (a.spacing[i] - b.spacing[i]).abs() <= 1e-6 && (a.origin[i] - b.origin[i]).abs() <= 1e-6
        })
}

/// Check the request invariants: every referenced file parses and the
/// prompts live on the current image's grid. Returns the current geometry.
pub fn validate_request(req: &SegmentationRequest) -> Result<Geometry> {
    let current = read_volume(&req.inputs.current)?.geometry;
    if let Some(p) = &req.inputs.prior {
        read_volume(p)?;
    }
    if let Some(p) = &req.inputs.prior_mask {
        read_mask(p)?;
    }
    if let Some(p) = &req.prompts.mask {
        current.ensure_same_dims(&read_mask(p)?.geometry)?;
    }
    if let Some(b) = &req.prompts.bbox {
        if !b.fits(current.dims) {
            return Err(Error::GeometryMismatch {
                expected: current.dims,
                found: b.max,
            });
        }
    }
    Ok(current)
}

/// Run a backend and enforce the result invariants; anything a backend gets
/// wrong comes back as [`Error::ProtocolViolation`].
pub fn segment(req: &SegmentationRequest, backend: &dyn Segmenter) -> Result<SegmentationResult> {
    let geometry = validate_request(req)?;
    let res = backend.segment(req)?;
    check_result(req, &geometry, &res)?;
    Ok(res)
}

pub(crate) fn check_result(
    req: &SegmentationRequest,
    geometry: &Geometry,
    res: &SegmentationResult,
) -> Result<()> {
    if res.case_id != req.case_id {
        return Err(Error::ProtocolViolation(format!(
            "result for case `{}` answers request `{}`",
            res.case_id, req.case_id
        )));
    }
    if !geometry_matches(&res.mask.geometry, geometry) {
        return Err(Error::ProtocolViolation(format!(
            "result mask geometry {:?} does not match the current image {:?}",
            res.mask.geometry, geometry
        )));
    }
    if let Some(i) = res.mask.data.iter().position(|&v| v > 1) {
        return Err(Error::ProtocolViolation(format!(
            "result mask voxel {i} is not binary"
        )));
    }
    if !(0.0..=1.0).contains(&res.confidence) {
        return Err(Error::ProtocolViolation(format!(
            "confidence {} is outside [0, 1]",
            res.confidence
        )));
    }
    Ok(())
}
