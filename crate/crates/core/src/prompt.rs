//! Prompt generation, augmentation and selection, plus assembly of the
//! three-channel prior-context input.
//!
//! Training-time augmentation perturbs the current-scan box (signed per-face
//! moves), erodes or dilates the prior mask, and then drops prompts according
//! to a categorical draw over four scenarios. Test-time augmentation only
//! jitters the box: a random non-empty subset of the four in-plane faces is
//! moved by `0..=max` voxels each, and both prompts are always kept.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::{expand_bbox, mask_bbox, BBox3, FaceDeltas};
use crate::error::{Error, Result};
use crate::morphology::{dilate, erode, Neighborhood, StructuringElement};
use crate::volume::{BinaryMask, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    Augmented,
}

/// Which prompts survived selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Both,
    BboxOnly,
    MaskOnly,
    None,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Both,
        Scenario::BboxOnly,
        Scenario::MaskOnly,
        Scenario::None,
    ];

    pub fn keeps_bbox(self) -> bool {
        matches!(self, Scenario::Both | Scenario::BboxOnly)
    }

    pub fn keeps_mask(self) -> bool {
        matches!(self, Scenario::Both | Scenario::MaskOnly)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphOp {
    Erode,
    Dilate,
}

/// What an augmentation step actually did.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedAugmentation {
    pub bbox_deltas: FaceDeltas,
    pub morph_op: MorphOp,
    pub morph_radius: u32,
}

/// A box prompt and/or a mask prompt on a grid of `dims`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptSet {
    pub dims: [usize; 3],
    pub bbox: Option<BBox3>,
    pub mask: Option<BinaryMask>,
    pub provenance: Provenance,
    pub selection: Scenario,
    pub applied: Option<AppliedAugmentation>,
}

/// Box from the current mask, mask prompt from the prior annotation.
pub fn generate_prompts(current_mask: &BinaryMask, prior_mask: &BinaryMask) -> Result<PromptSet> {
    current_mask
        .geometry
        .ensure_same_dims(&prior_mask.geometry)?;
    let bbox = mask_bbox(current_mask)?;
    Ok(PromptSet {
        dims: current_mask.dims(),
        bbox: Some(bbox),
        mask: Some(prior_mask.clone()),
        provenance: Provenance::Initial,
        selection: Scenario::Both,
        applied: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BboxMode {
    /// Signed per-face deltas in `[-max, +max]` on the four in-plane faces.
    Train,
    /// Subset-of-four-faces jitter; no mask augmentation, no dropout.
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionWeights {
    pub both: f64,
    pub bbox_only: f64,
    pub mask_only: f64,
    pub none: f64,
}

impl SelectionWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.both, self.bbox_only, self.mask_only, self.none]
    }

    pub fn from_array(w: [f64; 4]) -> Self {
        SelectionWeights {
            both: w[0],
            bbox_only: w[1],
            mask_only: w[2],
            none: w[3],
        }
    }

    pub fn weight(&self, s: Scenario) -> f64 {
        self.as_array()[Scenario::ALL.iter().position(|&x| x == s).unwrap()]
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Scenario {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (s, w) in Scenario::ALL.iter().zip(self.as_array()) {
            acc += w;
            if u < acc {
                return *s;
            }
        }
        // u landed in the rounding gap above the cumulative sum
        *Scenario::ALL
            .iter()
            .rev()
            .find(|s| self.weight(**s) > 0.0)
            .unwrap_or(&Scenario::Both)
    }
}

impl Default for SelectionWeights {
    fn default() -> Self {
        SelectionWeights {
            both: 0.4,
            bbox_only: 0.25,
            mask_only: 0.25,
            none: 0.1,
        }
    }
}

/// Augmentation policy. Serialized field names are part of the external
/// interface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugPolicy {
    pub bbox_max_px: u32,
    pub bbox_mode: BboxMode,
    pub morph_radius_range: [u32; 2],
    /// Probability of dilation (erosion otherwise).
    pub morph_op_prob: f64,
    pub selection_weights: SelectionWeights,
    pub seed: u64,
}

impl Default for AugPolicy {
    fn default() -> Self {
        AugPolicy {
            bbox_max_px: 5,
            bbox_mode: BboxMode::Train,
            morph_radius_range: [0, 2],
            morph_op_prob: 0.5,
            selection_weights: SelectionWeights::default(),
            seed: 0,
        }
    }
}

impl AugPolicy {
    pub fn test_time(bbox_max_px: u32, seed: u64) -> Self {
        AugPolicy {
            bbox_max_px,
            bbox_mode: BboxMode::Test,
            morph_radius_range: [0, 0],
            selection_weights: SelectionWeights::from_array([1.0, 0.0, 0.0, 0.0]),
            seed,
            ..AugPolicy::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.selection_weights.as_array();
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidPolicy(format!(
                "selection_weights must be nonnegative, got {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPolicy(format!(
                "selection_weights must sum to 1, got {sum}"
            )));
        }
        let [lo, hi] = self.morph_radius_range;
        if lo > hi {
            return Err(Error::InvalidPolicy(format!(
                "morph_radius_range [{lo}, {hi}] is empty"
            )));
        }
        if !(0.0..=1.0).contains(&self.morph_op_prob) {
            return Err(Error::InvalidPolicy(format!(
                "morph_op_prob {} is not a probability",
                self.morph_op_prob
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: AugPolicy = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Bitset over the four in-plane faces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaceSet(u8);

impl FaceSet {
    pub const LEFT: FaceSet = FaceSet(0b0001);
    pub const RIGHT: FaceSet = FaceSet(0b0010);
    pub const TOP: FaceSet = FaceSet(0b0100);
    pub const BOTTOM: FaceSet = FaceSet(0b1000);
    pub const ALL: FaceSet = FaceSet(0b1111);
    /// Left, right, top, bottom: the x0, x1, y0, y1 faces.
    pub const FACES: [FaceSet; 4] = [FaceSet::LEFT, FaceSet::RIGHT, FaceSet::TOP, FaceSet::BOTTOM];

    pub fn from_bits(bits: u8) -> Option<Self> {
        (1..=15).contains(&bits).then_some(FaceSet(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, face: FaceSet) -> bool {
        self.0 & face.0 == face.0
    }

    /// Uniform over the 15 non-empty subsets.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        FaceSet(rng.random_range(1..=15u8))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JitterMode {
    /// Random subset; per selected face a magnitude in `0..=max_px` and a
    /// random sign.
    Random,
    /// Expansion-only by exactly `level` voxels on the given faces, or on a
    /// random subset when `faces` is `None`.
    Sweep { level: u32, faces: Option<FaceSet> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Jitter {
    pub bbox: BBox3,
    pub faces: FaceSet,
    pub deltas: FaceDeltas,
}

fn deltas_for(faces: FaceSet, mut per_face: impl FnMut() -> i64) -> FaceDeltas {
    let mut d = [0i64; 4];
    for (slot, face) in d.iter_mut().zip(FaceSet::FACES) {
        if faces.contains(face) {
            *slot = per_face();
        }
    }
    FaceDeltas::in_plane(d[0], d[1], d[2], d[3])
}

/// Test-time box jitter. The z faces are never moved.
pub fn test_time_bbox_jitter<R: Rng + ?Sized>(
    b: &BBox3,
    max_px: u32,
    dims: [usize; 3],
    mode: JitterMode,
    rng: &mut R,
) -> Jitter {
    let (faces, deltas) = match mode {
        JitterMode::Random => {
            let faces = FaceSet::draw(rng);
            let deltas = deltas_for(faces, || {
                let magnitude = rng.random_range(0..=max_px) as i64;
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            });
            (faces, deltas)
        }
        JitterMode::Sweep { level, faces } => {
            let faces = faces.unwrap_or_else(|| FaceSet::draw(rng));
            (faces, deltas_for(faces, || level as i64))
        }
    };
    Jitter {
        bbox: expand_bbox(b, &deltas, dims),
        faces,
        deltas,
    }
}

/// Apply the policy to an initial prompt set. Deterministic given the rng
/// state; the rng is consumed in a fixed order (box, morphology, selection).
pub fn augment_prompts<R: Rng + ?Sized>(
    p: &PromptSet,
    policy: &AugPolicy,
    rng: &mut R,
) -> Result<PromptSet> {
    policy.validate()?;
    if p.provenance != Provenance::Initial {
        return Err(Error::InvalidPolicy(
            "augmentation expects an initial prompt set".into(),
        ));
    }
    let max = policy.bbox_max_px as i64;

    match policy.bbox_mode {
        BboxMode::Test => {
            let (bbox, deltas) = match p.bbox {
                Some(b) => {
                    let j = test_time_bbox_jitter(
                        &b,
                        policy.bbox_max_px,
                        p.dims,
                        JitterMode::Random,
                        rng,
                    );
                    (Some(j.bbox), j.deltas)
                }
                None => (None, FaceDeltas::default()),
            };
            Ok(PromptSet {
                dims: p.dims,
                bbox,
                mask: p.mask.clone(),
                provenance: Provenance::Augmented,
                selection: Scenario::Both,
                applied: Some(AppliedAugmentation {
                    bbox_deltas: deltas,
                    morph_op: MorphOp::Dilate,
                    morph_radius: 0,
                }),
            })
        }
        BboxMode::Train => {
            let deltas = FaceDeltas::in_plane(
                rng.random_range(-max..=max),
                rng.random_range(-max..=max),
                rng.random_range(-max..=max),
                rng.random_range(-max..=max),
            );
            let [lo, hi] = policy.morph_radius_range;
            let radius = rng.random_range(lo..=hi);
            let op = if rng.random_bool(policy.morph_op_prob) {
                MorphOp::Dilate
            } else {
                MorphOp::Erode
            };
            let scenario = policy.selection_weights.draw(rng);

            let bbox = p.bbox.map(|b| expand_bbox(&b, &deltas, p.dims));
            let mask = p.mask.as_ref().map(|m| {
                if radius == 0 {
                    return m.clone();
                }
                let se = StructuringElement {
                    kind: Neighborhood::Cross4InPlane,
                    radius,
                };
                match op {
                    MorphOp::Erode => erode(m, &se),
                    MorphOp::Dilate => dilate(m, &se),
                }
            });
            Ok(PromptSet {
                dims: p.dims,
                bbox: bbox.filter(|_| scenario.keeps_bbox()),
                mask: mask.filter(|_| scenario.keeps_mask()),
                provenance: Provenance::Augmented,
                selection: scenario,
                applied: Some(AppliedAugmentation {
                    bbox_deltas: deltas,
                    morph_op: op,
                    morph_radius: radius,
                }),
            })
        }
    }
}

/// Per-channel intensity normalization record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    /// Value mapped to 0 (0.5th percentile).
    pub low: f64,
    /// Value mapped to 1 (99.5th percentile).
    pub high: f64,
    /// True when `high <= low` and the channel was zeroed.
    pub constant: bool,
}

/// `(curMR, priMR, priSeg)` on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct InputStack {
    pub current: Volume,
    pub prior: Volume,
    pub prior_seg: Volume,
    pub normalization: [ChannelNorm; 2],
}

impl InputStack {
    pub fn channels(&self) -> [&Volume; 3] {
        [&self.current, &self.prior, &self.prior_seg]
    }
}

pub const CLIP_PERCENTILES: (f64, f64) = (0.5, 99.5);

/// Linear-interpolated percentile of unsorted data.
pub fn percentile(values: &[f32], q: f64) -> f64 {
    let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn normalize(v: &Volume) -> (Volume, ChannelNorm) {
    let low = percentile(&v.data, CLIP_PERCENTILES.0);
    let high = percentile(&v.data, CLIP_PERCENTILES.1);
    let constant = high <= low;
    let data = if constant {
        vec![0.0; v.data.len()]
    } else {
        v.data
            .iter()
            .map(|&x| ((x as f64).clamp(low, high) - low) / (high - low))
            .map(|x| x as f32)
            .collect()
    };
    (
        Volume {
            geometry: v.geometry.clone(),
            data,
        },
        ChannelNorm {
            low,
            high,
            constant,
        },
    )
}

pub fn assemble_input(
    current: &Volume,
    prior: &Volume,
    prior_seg: &BinaryMask,
) -> Result<InputStack> {
    current.geometry.ensure_same_dims(&prior.geometry)?;
    current.geometry.ensure_same_dims(&prior_seg.geometry)?;
    let (cur, cur_norm) = normalize(current);
    let (pri, pri_norm) = normalize(prior);
    Ok(InputStack {
        current: cur,
        prior: pri,
        prior_seg: prior_seg.to_volume(),
        normalization: [cur_norm, pri_norm],
    })
}

/// A scan in a patient's fraction sequence; fraction 0 is the simulation scan.
pub trait FractionEntry {
    fn patient_id(&self) -> &str;
    fn fraction_index(&self) -> u32;
}

/// The immediate prior of fraction `fraction`: fraction `n - 1`, which for the
/// first treatment fraction is the simulation scan.
pub fn select_prior<'a, T: FractionEntry>(
    entries: &'a [T],
    patient: &str,
    fraction: u32,
) -> Result<&'a T> {
    let missing = || Error::MissingPrior {
        patient: patient.to_string(),
        fraction,
    };
    let wanted = fraction.checked_sub(1).ok_or_else(missing)?;
    entries
        .iter()
        .find(|e| e.patient_id() == patient && e.fraction_index() == wanted)
        .ok_or_else(missing)
}
