//! Synthetic prior/current scan pairs with analytically known tumour masks.
//!
//! Anatomy is a linear intensity ramp plus an ellipsoidal tumour of fixed
//! contrast. A scan is rendered under a pose (a [`RigidTransform`] in the
//! registration convention: it maps the scan's points into the reference
//! anatomy), so the current-scan mask is evaluated exactly at each voxel
//! centre rather than resampled from the prior.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bbox::mask_bbox;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestCase, FORMAT_VERSION};
use crate::nifti::{write_mask, write_volume, Dtype};
use crate::registration::RigidTransform;
use crate::rng::{derive, stream};
use crate::volume::{BinaryMask, Geometry, Volume};

/// Minimum distance, in voxels, between the tumour and the grid edge.
pub const MARGIN_VOXELS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TumorSpec {
    pub center_mm: [f64; 3],
    pub radii_mm: [f64; 3],
    pub contrast: f64,
}

/// `base + gradient · (p - grid centre)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampSpec {
    pub base: f64,
    pub gradient: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub tumor: TumorSpec,
    pub background: RampSpec,
    pub noise_sigma: f64,
    /// Pose of the current scan (current points -> prior anatomy).
    pub transform: RigidTransform,
    /// Tumour size change from prior to current.
    pub radius_scale: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [40, 40, 24],
            spacing: [1.0, 1.0, 1.0],
            tumor: TumorSpec {
                center_mm: [19.5, 19.5, 11.5],
                radii_mm: [8.0, 5.5, 4.0],
                contrast: 60.0,
            },
            background: RampSpec {
                base: 100.0,
                gradient: [1.0, 0.6, 0.4],
            },
            noise_sigma: 2.0,
            transform: RigidTransform::identity(),
            radius_scale: 1.0,
            seed: 0,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::invalid_spec(field, format!("must be > 0, got {v}")));
    }
    Ok(())
}

fn finite(field: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid_spec(
            field,
            format!("must be finite, got {v:?}"),
        ));
    }
    Ok(())
}

impl PhantomSpec {
    /// Field-level checks (the margin check needs rendering and happens in
    /// [`generate_case`]).
    pub fn validate(&self) -> Result<()> {
        for (a, &d) in self.dims.iter().enumerate() {
            if d == 0 {
                return Err(Error::invalid_spec(format!("dims[{a}]"), "must be >= 1"));
            }
        }
        for (a, &s) in self.spacing.iter().enumerate() {
            positive(&format!("spacing[{a}]"), s)?;
        }
        for (a, &r) in self.tumor.radii_mm.iter().enumerate() {
            positive(&format!("tumor.radii_mm[{a}]"), r)?;
        }
        finite("tumor.center_mm", &self.tumor.center_mm)?;
        finite("tumor.contrast", &[self.tumor.contrast])?;
        finite("background.base", &[self.background.base])?;
        finite("background.gradient", &self.background.gradient)?;
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid_spec(
                "noise_sigma",
                format!("must be >= 0, got {}", self.noise_sigma),
            ));
        }
        positive("radius_scale", self.radius_scale)?;
        finite("transform", &self.transform.params())?;
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            dims: self.dims,
            spacing: self.spacing,
            origin: [0.0; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub image: Volume,
    pub mask: BinaryMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCase {
    pub prior: Scan,
    pub current: Scan,
    /// Current -> prior, i.e. what registering current (fixed) to prior
    /// (moving) should recover.
    pub truth: RigidTransform,
}

/// Lattice membership of the (scaled) ellipsoid, in reference coordinates.
pub fn inside_ellipsoid(q: [f64; 3], tumor: &TumorSpec, scale: f64) -> bool {
    let s: f64 = (0..3)
        .map(|a| ((q[a] - tumor.center_mm[a]) / (tumor.radii_mm[a] * scale)).powi(2))
        .sum();
    s <= 1.0
}

fn render(spec: &PhantomSpec, pose: &RigidTransform, scale: f64, noise_seed: u64) -> Result<Scan> {
    let g = spec.geometry();
    let center = g.center();
    let n = g.len();
    let mut data = vec![0f32; n];
    let mut mask = vec![0u8; n];
    for (idx, (v, m)) in data.iter_mut().zip(mask.iter_mut()).enumerate() {
        let p = g.world(g.coords(idx).map(|c| c as f64));
        let q = pose.apply(p, center);
        let inside = inside_ellipsoid(q, &spec.tumor, scale);
        let ramp = spec.background.base
            + (0..3)
                .map(|a| spec.background.gradient[a] * (q[a] - center[a]))
                .sum::<f64>();
        *v = (ramp + if inside { spec.tumor.contrast } else { 0.0 }) as f32;
        *m = inside as u8;
    }
    // noise goes on after the mask so labels stay clean
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        let mut rng = stream(noise_seed);
        for v in &mut data {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    let mask = BinaryMask {
        geometry: g.clone(),
        data: mask,
    };
    check_margin(&mask)?;
    Ok(Scan {
        image: Volume::new(g, data)?,
        mask,
    })
}

fn check_margin(mask: &BinaryMask) -> Result<()> {
    let b = mask_bbox(mask)
        .map_err(|_| Error::TumorOutOfBounds("tumour covers no voxel centre".into()))?;
    let dims = mask.dims();
    for a in 0..3 {
        if b.min[a] < MARGIN_VOXELS || b.max[a] + MARGIN_VOXELS > dims[a] {
            return Err(Error::TumorOutOfBounds(format!(
                "tumour box {:?}..{:?} is closer than {MARGIN_VOXELS} voxels to the edge of {dims:?}",
                b.min, b.max
            )));
        }
    }
    Ok(())
}

pub fn generate_case(spec: &PhantomSpec) -> Result<PhantomCase> {
    spec.validate()?;
    let prior = render(spec, &RigidTransform::identity(), 1.0, derive(spec.seed, 0))?;
    let current = render(
        spec,
        &spec.transform,
        spec.radius_scale,
        derive(spec.seed, 1),
    )?;
    Ok(PhantomCase {
        prior,
        current,
        truth: spec.transform,
    })
}

/// Ranges for per-fraction motion, drawn uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionRanges {
    pub max_translation_mm: f64,
    pub max_rotation_deg: f64,
    pub radius_scale_range: [f64; 2],
    /// Per-patient tumour centre offset from the template.
    pub center_jitter_mm: f64,
}

impl Default for MotionRanges {
    fn default() -> Self {
        MotionRanges {
            max_translation_mm: 3.0,
            max_rotation_deg: 3.0,
            radius_scale_range: [0.9, 1.1],
            center_jitter_mm: 2.0,
        }
    }
}

/// Input of `generate_manifest` and of the `phantom` CLI command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSuiteSpec {
    pub n_patients: usize,
    /// Treatment fractions per patient, not counting the simulation scan.
    pub fractions: u32,
    pub template: PhantomSpec,
    pub motion: MotionRanges,
    pub seed: u64,
}

impl Default for PhantomSuiteSpec {
    fn default() -> Self {
        PhantomSuiteSpec {
            n_patients: 2,
            fractions: 3,
            template: PhantomSpec::default(),
            motion: MotionRanges::default(),
            seed: 0,
        }
    }
}

impl PhantomSuiteSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::invalid_spec("n_patients", "must be >= 1"));
        }
        self.template.validate().map_err(|e| match e {
            Error::InvalidSpec { field, reason } => Error::InvalidSpec {
                field: format!("template.{field}"),
                reason,
            },
            other => other,
        })?;
        let m = &self.motion;
        for (name, v) in [
            ("motion.max_translation_mm", m.max_translation_mm),
            ("motion.max_rotation_deg", m.max_rotation_deg),
            ("motion.center_jitter_mm", m.center_jitter_mm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid_spec(name, format!("must be >= 0, got {v}")));
            }
        }
        let [lo, hi] = m.radius_scale_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::invalid_spec(
                "motion.radius_scale_range",
                format!("must satisfy 0 < lo <= hi, got [{lo}, {hi}]"),
            ));
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.random_range(-half_width..=half_width)
    }
}

/// Per-case ground-truth poses, written next to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseTruth {
    pub case_id: String,
    /// Pose relative to the patient's simulation scan (this scan -> simulation).
    pub pose: RigidTransform,
    pub radius_scale: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "truth.json";
const MAX_DRAWS: usize = 100;

/// Write a synthetic dataset under `out_dir`: per patient a simulation scan
/// (fraction 0) plus `fractions` treatment scans, each as an image/mask NIfTI
/// pair, with `manifest.json` and `truth.json`. Returns the manifest.
pub fn generate_manifest(
    suite: &PhantomSuiteSpec,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    suite.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io_at(out_dir, e))?;

    let mut cases = Vec::new();
    let mut truths = Vec::new();
    for patient in 0..suite.n_patients {
        let patient_id = format!("p{patient:03}");
        let mut rng = stream(derive(suite.seed, patient as u64));
        let mut anatomy = suite.template.clone();
        for c in &mut anatomy.tumor.center_mm {
            *c += uniform(&mut rng, suite.motion.center_jitter_mm);
        }
        let dir = out_dir.join(&patient_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io_at(&dir, e))?;

        for fraction in 0..=suite.fractions {
            let noise_seed = derive(derive(suite.seed, patient as u64), 1000 + fraction as u64);
            let (pose, scale, scan) = if fraction == 0 {
                let s = render(&anatomy, &RigidTransform::identity(), 1.0, noise_seed)?;
                (RigidTransform::identity(), 1.0, s)
            } else {
                draw_fraction(&anatomy, &suite.motion, &mut rng, noise_seed)?
            };
            let image_rel = PathBuf::from(&patient_id).join(format!("f{fraction}_image.nii"));
            let mask_rel = PathBuf::from(&patient_id).join(format!("f{fraction}_mask.nii"));
            write_volume(out_dir.join(&image_rel), &scan.image, Dtype::Float32, false)?;
            write_mask(out_dir.join(&mask_rel), &scan.mask)?;
            let case = ManifestCase {
                patient_id: patient_id.clone(),
                fraction_index: fraction,
                current_image: image_rel,
                current_mask: Some(mask_rel),
            };
            truths.push(CaseTruth {
                case_id: case.case_id(),
                pose,
                radius_scale: scale,
            });
            cases.push(case);
        }
    }

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        root: PathBuf::from("."),
        cases,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    let truth_path = out_dir.join(TRUTH_FILE);
    fs::write(&truth_path, serde_json::to_string_pretty(&truths)? + "\n")
        .map_err(|e| Error::io_at(&truth_path, e))?;
    Ok(DatasetManifest {
        root: out_dir.to_path_buf(),
        ..manifest
    })
}

fn draw_fraction<R: Rng>(
    anatomy: &PhantomSpec,
    motion: &MotionRanges,
    rng: &mut R,
    noise_seed: u64,
) -> Result<(RigidTransform, f64, Scan)> {
    let max_rot = motion.max_rotation_deg.to_radians();
    let [lo, hi] = motion.radius_scale_range;
    let mut last_err = None;
    for _ in 0..MAX_DRAWS {
        let pose = RigidTransform {
            rotation: std::array::from_fn(|_| uniform(rng, max_rot)),
            translation: std::array::from_fn(|_| uniform(rng, motion.max_translation_mm)),
        };
        let scale = if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        };
        match render(anatomy, &pose, scale, noise_seed) {
            Ok(scan) => return Ok((pose, scale, scan)),
            Err(e @ Error::TumorOutOfBounds(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_noise_free_case_is_unchanged() {
        let spec = PhantomSpec {
            noise_sigma: 0.0,
            ..PhantomSpec::default()
        };
        let case = generate_case(&spec).unwrap();
        assert_eq!(case.prior, case.current);
        assert_eq!(case.truth, RigidTransform::identity());
    }

    #[test]
    fn sphere_voxel_count_matches_lattice_enumeration() {
        // lattice points with x^2 + y^2 + z^2 <= 16, enumerated directly
        let mut expected = 0;
        for x in -4i32..=4 {
            for y in -4i32..=4 {
                for z in -4i32..=4 {
                    if x * x + y * y + z * z <= 16 {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(expected, 257);
        let spec = PhantomSpec {
            dims: [16, 16, 16],
            tumor: TumorSpec {
                center_mm: [8.0, 8.0, 8.0],
                radii_mm: [4.0; 3],
                contrast: 10.0,
            },
            ..PhantomSpec::default()
        };
        let case = generate_case(&spec).unwrap();
        assert_eq!(case.prior.mask.count(), 257);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = PhantomSpec {
            transform: RigidTransform {
                rotation: [0.0, 0.0, 0.05],
                translation: [1.0, -2.0, 0.5],
            },
            seed: 9,
            ..PhantomSpec::default()
        };
        let a = generate_case(&spec).unwrap();
        let b = generate_case(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_case(&PhantomSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.current.image, c.current.image);
        assert_eq!(a.current.mask, c.current.mask);
    }

    #[test]
    fn current_mask_is_analytic() {
        let spec = PhantomSpec {
            transform: RigidTransform::translation([-3.0, 0.0, 0.0]),
            noise_sigma: 0.0,
            ..PhantomSpec::default()
        };
        let case = generate_case(&spec).unwrap();
        // pulling from x - 3 moves the tumour +3 voxels along x
        let [nx, ny, nz] = spec.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 3..nx {
                    assert_eq!(
                        case.current.mask.get(i, j, k),
                        case.prior.mask.get(i - 3, j, k)
                    );
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_and_invalid_fields() {
        let near_edge = PhantomSpec {
            tumor: TumorSpec {
                center_mm: [3.0, 19.5, 11.5],
                ..PhantomSpec::default().tumor
            },
            ..PhantomSpec::default()
        };
        assert!(matches!(
            generate_case(&near_edge),
            Err(Error::TumorOutOfBounds(_))
        ));

        let mut bad = PhantomSpec::default();
        bad.tumor.radii_mm[1] = -2.0;
        match generate_case(&bad) {
            Err(Error::InvalidSpec { field, .. }) => assert_eq!(field, "tumor.radii_mm[1]"),
            other => panic!("{other:?}"),
        }
        let bad = PhantomSpec {
            noise_sigma: -1.0,
            ..PhantomSpec::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidSpec { .. })));
    }

    #[test]
    fn manifest_layout_and_reproducibility() {
        let dir = tempfile::tempdir().unwrap();
        let suite = PhantomSuiteSpec {
            template: PhantomSpec {
                dims: [24, 24, 16],
                tumor: TumorSpec {
                    center_mm: [11.5, 11.5, 7.5],
                    radii_mm: [4.0, 3.5, 3.0],
                    contrast: 50.0,
                },
                ..PhantomSpec::default()
            },
            ..PhantomSuiteSpec::default()
        };
        let m = generate_manifest(&suite, dir.path().join("a")).unwrap();
        assert_eq!(m.cases.len(), 8);
        let niftis = walk(&dir.path().join("a"));
        assert_eq!(niftis.len(), 16);
        let loaded = DatasetManifest::load(dir.path().join("a").join(MANIFEST_FILE)).unwrap();
        for p in ["p000", "p001"] {
            let prior = crate::prompt::select_prior(&loaded.cases, p, 1).unwrap();
            assert_eq!(prior.fraction_index, 0);
        }

        generate_manifest(&suite, dir.path().join("b")).unwrap();
        for rel in niftis {
            let a = fs::read(dir.path().join("a").join(&rel)).unwrap();
            let b = fs::read(dir.path().join("b").join(&rel)).unwrap();
            assert_eq!(a, b, "{}", rel.display());
        }
    }

    fn walk(root: &Path) -> Vec<PathBuf> {
        let mut out = vec![];
        for patient in fs::read_dir(root).unwrap() {
            let patient = patient.unwrap().path();
            if patient.is_dir() {
                for f in fs::read_dir(&patient).unwrap() {
                    out.push(f.unwrap().path().strip_prefix(root).unwrap().to_path_buf());
                }
            }
        }
        out.sort();
        out
    }
}
