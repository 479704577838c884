//! Experiment commands behind the CLI: evaluation, the box-expansion sweep,
//! the input ablation, phantom generation and single-pair metrics.
//!
//! Every case draws from its own seeded stream (`case_seed(seed, case_id)`)
//! and rows are emitted in `(patient_id, fraction)` order, so outputs do not
//! depend on the worker count.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::{mask_bbox, BBox3};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestCase};
use crate::metrics::{evaluate_case, MetricConfig, MetricReport};
use crate::nifti::read_mask;
use crate::phantom::{generate_manifest, PhantomSuiteSpec, MANIFEST_FILE};
use crate::prompt::{select_prior, test_time_bbox_jitter, AugPolicy, FaceSet, JitterMode};
use crate::rng::{case_seed, derive, stream};
use crate::segmenter::{
    segment, BackendSpec, Direction, ExternalConfig, Inputs, Prompts, SegmentationRequest,
    Segmenter,
};
use crate::volume::BinaryMask;

pub use report::{aggregate, write_csv, CaseRow, ExperimentReport, Stat, Summary};

/// Which optional channels are sent to the backend. The current image is
/// always sent; dropping `prior_mask` also drops the mask prompt, which is
/// the prior annotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputConfig {
    pub prior_image: bool,
    pub prior_mask: bool,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig::FULL
    }
}

impl InputConfig {
    pub const FULL: InputConfig = InputConfig {
        prior_image: true,
        prior_mask: true,
    };

    /// The four configurations containing the current image.
    pub const TABLE: [InputConfig; 4] = [
        InputConfig {
            prior_image: false,
            prior_mask: false,
        },
        InputConfig {
            prior_image: true,
            prior_mask: false,
        },
        InputConfig {
            prior_image: false,
            prior_mask: true,
        },
        InputConfig::FULL,
    ];

    pub fn name(&self) -> String {
        let mut s = String::from("curMR");
        if self.prior_image {
            s.push_str("+priMR");
        }
        if self.prior_mask {
            s.push_str("+priSeg");
        }
        s
    }
}

impl FromStr for InputConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut cur = false;
        let mut c = InputConfig {
            prior_image: false,
            prior_mask: false,
        };
        for part in s.split('+').map(str::trim) {
            match part {
                "curMR" => cur = true,
                "priMR" => c.prior_image = true,
                "priSeg" => c.prior_mask = true,
                _ => {
                    return Err(Error::invalid_spec(
                        "config",
                        format!("unknown input `{part}` in `{s}` (expected curMR, priMR, priSeg)"),
                    ))
                }
            }
        }
        if !cur {
            return Err(Error::invalid_spec(
                "config",
                format!("`{s}` must include curMR"),
            ));
        }
        Ok(c)
    }
}

/// Options shared by every dataset command.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub manifest: PathBuf,
    pub seed: u64,
    pub jitter_max: u32,
    pub metrics: MetricConfig,
    pub workers: usize,
    pub external: ExternalConfig,
}

impl RunOptions {
    pub fn new(manifest: impl Into<PathBuf>) -> Self {
        RunOptions {
            manifest: manifest.into(),
            seed: 0,
            jitter_max: 5,
            metrics: MetricConfig::default(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            external: ExternalConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.metrics.tau.is_finite() && self.metrics.tau >= 0.0) {
            return Err(Error::invalid_spec(
                "tau",
                format!("must be >= 0, got {}", self.metrics.tau),
            ));
        }
        if self.workers == 0 {
            return Err(Error::invalid_spec("workers", "must be >= 1"));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::invalid_spec("workers", e.to_string()))
    }
}

/// Reproduction record written with every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub command: String,
    pub manifest: PathBuf,
    pub backend: String,
    pub seed: u64,
    pub policy: AugPolicy,
    pub unit: String,
    pub tau: f64,
    pub distance_mode: crate::metrics::DistanceMode,
    pub inputs: String,
    /// Fixed/moving roles when the backend registers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registration_direction: Option<String>,
    pub bbox_source: String,
}

impl ConfigSnapshot {
    fn new(command: &str, opts: &RunOptions, backend: &BackendSpec, inputs: InputConfig) -> Self {
        ConfigSnapshot {
            command: command.into(),
            manifest: opts.manifest.clone(),
            backend: backend.to_string(),
            seed: opts.seed,
            policy: AugPolicy::test_time(opts.jitter_max, opts.seed),
            unit: opts.metrics.unit.as_str().into(),
            tau: opts.metrics.tau,
            distance_mode: opts.metrics.mode,
            inputs: inputs.name(),
            registration_direction: (*backend == BackendSpec::Propagate)
                .then(|| Direction::default().as_str().to_string()),
            bbox_source: "ground-truth current mask (union box), jittered".into(),
        }
    }
}

/// Everything needed to issue requests for one non-simulation case.
struct CaseContext<'a> {
    case: &'a ManifestCase,
    prior: &'a ManifestCase,
    gt: BinaryMask,
    gt_box: BBox3,
    components: usize,
}

fn load_context<'a>(m: &'a DatasetManifest, case: &'a ManifestCase) -> Result<CaseContext<'a>> {
    let prior = select_prior(&m.cases, &case.patient_id, case.fraction_index)?;
    let gt_path = case.current_mask.as_ref().ok_or_else(|| {
        Error::Manifest(format!("case {} has no ground-truth mask", case.case_id()))
    })?;
    let gt = read_mask(m.resolve(gt_path))?;
    let gt_box = mask_bbox(&gt)?;
    let components = count_components(&gt);
    Ok(CaseContext {
        case,
        prior,
        gt,
        gt_box,
        components,
    })
}

/// Face-connected foreground components.
pub fn count_components(mask: &BinaryMask) -> usize {
    let g = &mask.geometry;
    let mut seen = vec![false; mask.data.len()];
    let mut stack = Vec::new();
    let mut n = 0;
    for start in 0..mask.data.len() {
        if mask.data[start] == 0 || seen[start] {
            continue;
        }
        n += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let at = g.coords(idx);
            for off in [
                [1, 0, 0],
                [-1, 0, 0],
                [0, 1, 0],
                [0, -1, 0],
                [0, 0, 1],
                [0, 0, -1],
            ] {
                if let Some(nb) = g.offset(at, off) {
                    if mask.data[nb] != 0 && !seen[nb] {
                        seen[nb] = true;
                        stack.push(nb);
                    }
                }
            }
        }
    }
    n
}

/// Issue one request and score it against the ground truth.
fn run_request(
    m: &DatasetManifest,
    ctx: &CaseContext,
    bbox: BBox3,
    inputs: InputConfig,
    backend: &dyn Segmenter,
    metrics: &MetricConfig,
    scratch: PathBuf,
) -> Result<(MetricReport, f64)> {
    let prior_mask = if inputs.prior_mask {
        ctx.prior.current_mask.as_ref().map(|p| m.resolve(p))
    } else {
        None
    };
    let req = SegmentationRequest {
        case_id: ctx.case.case_id(),
        inputs: Inputs {
            current: m.resolve(&ctx.case.current_image),
            prior: inputs
                .prior_image
                .then(|| m.resolve(&ctx.prior.current_image)),
            prior_mask: prior_mask.clone(),
        },
        prompts: Prompts {
            bbox: Some(bbox),
            mask: prior_mask,
        },
        out_dir: scratch.clone(),
        options: Default::default(),
    };
    let res = segment(&req, backend);
    if scratch.exists() {
        let _ = fs::remove_dir_all(&scratch);
    }
    let res = res?;
    let report = evaluate_case(&ctx.gt, &res.mask, metrics)?;
    Ok((report, res.confidence))
}

fn load_manifest(opts: &RunOptions) -> Result<DatasetManifest> {
    opts.validate()?;
    DatasetManifest::load(&opts.manifest)
}

fn targets(m: &DatasetManifest) -> Vec<&ManifestCase> {
    m.sorted_cases()
        .into_iter()
        .filter(|c| c.fraction_index > 0)
        .collect()
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io_at(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io_at(p, e))
}

fn tidy_scratch(out_dir: &Path) {
    let _ = fs::remove_dir(out_dir.join("scratch"));
}

fn evaluate(
    m: &DatasetManifest,
    opts: &RunOptions,
    backend: &dyn Segmenter,
    inputs: InputConfig,
    out_dir: &Path,
) -> Result<Vec<CaseRow>> {
    let cases = targets(m);
    let pool = opts.pool()?;
    let rows = pool.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let case_id = case.case_id();
                let mut row = CaseRow::new(case, opts.metrics);
                let outcome = load_context(m, case).and_then(|ctx| {
                    row.prior_fraction = Some(ctx.prior.fraction_index);
                    row.components = Some(ctx.components);
                    let mut rng = stream(case_seed(opts.seed, &case_id));
                    let j = test_time_bbox_jitter(
                        &ctx.gt_box,
                        opts.jitter_max,
                        ctx.gt.dims(),
                        JitterMode::Random,
                        &mut rng,
                    );
                    row.bbox = Some(j.bbox.to_array());
                    let scratch = out_dir.join("scratch").join(&case_id);
                    run_request(m, &ctx, j.bbox, inputs, backend, &opts.metrics, scratch)
                });
                row.finish(outcome);
                row
            })
            .collect::<Vec<_>>()
    });
    tidy_scratch(out_dir);
    Ok(rows)
}

fn eval_with(
    m: &DatasetManifest,
    opts: &RunOptions,
    backend_spec: &BackendSpec,
    backend: &dyn Segmenter,
    inputs: InputConfig,
    out_dir: &Path,
    command: &str,
) -> Result<ExperimentReport> {
    create_dir(out_dir)?;
    let rows = evaluate(m, opts, backend, inputs, out_dir)?;
    let report = ExperimentReport::new(
        ConfigSnapshot::new(command, opts, backend_spec, inputs),
        rows,
    );
    report.write(out_dir)?;
    Ok(report)
}

/// Evaluate every non-simulation case; writes `report.json` and `report.csv`.
pub fn cmd_eval(
    opts: &RunOptions,
    backend: &BackendSpec,
    out_dir: &Path,
) -> Result<ExperimentReport> {
    let m = load_manifest(opts)?;
    let seg = backend.connect(&opts.external)?;
    eval_with(
        &m,
        opts,
        backend,
        seg.as_ref(),
        InputConfig::FULL,
        out_dir,
        "eval",
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub backend: String,
    pub level: u32,
    pub mean_dice: Option<f64>,
    pub sd_dice: Option<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub backend: String,
    pub level: u32,
    pub case_id: String,
    pub rep: u32,
    pub faces: u8,
    pub bbox: Option<[usize; 6]>,
    pub dice: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub config: ConfigSnapshot,
    pub levels: Vec<u32>,
    pub reps: u32,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<SweepRun>,
}

impl SweepTable {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn series(&self, backend: &str) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.backend == backend).collect()
    }
}

/// Expansion-only box sweep. Each `(case, rep)` draws one face subset that is
/// reused at every level, so levels differ only in the expansion amount.
/// Writes `sweep.csv`, `sweep_runs.csv` and `sweep.json`.
pub fn cmd_sweep(
    opts: &RunOptions,
    backends: &[BackendSpec],
    levels: &[u32],
    reps: u32,
    out_dir: &Path,
) -> Result<SweepTable> {
    if backends.is_empty() {
        return Err(Error::invalid_spec(
            "backend",
            "at least one backend is required",
        ));
    }
    if reps == 0 {
        return Err(Error::invalid_spec("reps", "must be >= 1"));
    }
    if levels.is_empty() {
        return Err(Error::invalid_spec("levels", "must not be empty"));
    }
    let m = load_manifest(opts)?;
    create_dir(out_dir)?;
    let cases = targets(&m);
    let contexts: Vec<Result<CaseContext>> = cases.iter().map(|c| load_context(&m, c)).collect();
    let pool = opts.pool()?;

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for spec in backends {
        let seg = spec.connect(&opts.external)?;
        let mut tasks = Vec::new();
        for (ci, ctx) in contexts.iter().enumerate() {
            for rep in 0..reps {
                let mut rng = stream(derive(
                    case_seed(opts.seed, &cases[ci].case_id()),
                    rep as u64,
                ));
                let faces = FaceSet::draw(&mut rng);
                for &level in levels {
                    tasks.push((ci, ctx, rep, faces, level));
                }
            }
        }
        let results: Vec<SweepRun> = pool.install(|| {
            tasks
                .par_iter()
                .map(|&(ci, ctx, rep, faces, level)| {
                    let case_id = cases[ci].case_id();
                    let mut run = SweepRun {
                        backend: spec.to_string(),
                        level,
                        case_id: case_id.clone(),
                        rep,
                        faces: faces.bits(),
                        bbox: None,
                        dice: None,
                        error: None,
                    };
                    let outcome = match ctx {
                        Err(e) => Err(Error::Manifest(e.to_string())),
                        Ok(ctx) => {
                            let mut unused = stream(0);
                            let j = test_time_bbox_jitter(
                                &ctx.gt_box,
                                level,
                                ctx.gt.dims(),
                                JitterMode::Sweep {
                                    level,
                                    faces: Some(faces),
                                },
                                &mut unused,
                            );
                            run.bbox = Some(j.bbox.to_array());
                            let scratch = out_dir
                                .join("scratch")
                                .join(format!("{case_id}-r{rep}-l{level}"));
                            run_request(
                                &m,
                                ctx,
                                j.bbox,
                                InputConfig::FULL,
                                seg.as_ref(),
                                &opts.metrics,
                                scratch,
                            )
                        }
                    };
                    match outcome {
                        Ok((r, _)) => run.dice = Some(r.dice),
                        Err(e) => run.error = Some(e.to_string()),
                    }
                    run
                })
                .collect()
        });
        for &level in levels {
            let dice: Vec<f64> = results
                .iter()
                .filter(|r| r.level == level)
                .filter_map(|r| r.dice)
                .collect();
            let s = Stat::of(&dice);
            rows.push(SweepRow {
                backend: spec.to_string(),
                level,
                mean_dice: s.mean,
                sd_dice: s.sd,
                n: s.n,
            });
        }
        runs.extend(results);
    }
    tidy_scratch(out_dir);

    let mut config = ConfigSnapshot::new("sweep", opts, &backends[0], InputConfig::FULL);
    config.backend = backends
        .iter()
        .map(|b| b.to_string())
        .collect::<Vec<_>>()
        .join(",");
    config.bbox_source =
        "ground-truth current mask (union box), expanded by level on a per-(case, rep) face subset"
            .into();
    let table = SweepTable {
        config,
        levels: levels.to_vec(),
        reps,
        rows,
        runs,
    };
    report::write_sweep(&table, out_dir)?;
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub summary: Summary,
    pub dice: Stat,
    pub nsd: Stat,
    pub hd95: Stat,
    pub asd: Stat,
}

/// One evaluation per input configuration, each in `out_dir/<config>/`, plus
/// `ablation.csv`.
pub fn cmd_ablate(
    opts: &RunOptions,
    backend: &BackendSpec,
    configs: &[InputConfig],
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    if configs.is_empty() {
        return Err(Error::invalid_spec(
            "config",
            "at least one configuration is required",
        ));
    }
    let m = load_manifest(opts)?;
    let seg = backend.connect(&opts.external)?;
    create_dir(out_dir)?;
    let mut rows = Vec::new();
    for &c in configs {
        let r = eval_with(
            &m,
            opts,
            backend,
            seg.as_ref(),
            c,
            &out_dir.join(c.name()),
            "ablate",
        )?;
        rows.push(AblationRow {
            config: c.name(),
            summary: r.summary.clone(),
            dice: r.aggregates.dice,
            nsd: r.aggregates.nsd,
            hd95: r.aggregates.hd95,
            asd: r.aggregates.asd,
        });
    }
    report::write_ablation(&rows, out_dir)?;
    Ok(rows)
}

/// Generate a phantom dataset from a JSON suite spec (or the default one) and
/// re-validate the written manifest.
pub fn cmd_phantom(spec_file: Option<&Path>, out_dir: &Path) -> Result<DatasetManifest> {
    let suite = match spec_file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io_at(p, e))?;
            serde_json::from_str::<PhantomSuiteSpec>(&text)
                .map_err(|e| Error::invalid_spec(p.display().to_string(), e.to_string()))?
        }
        None => PhantomSuiteSpec::default(),
    };
    generate_manifest(&suite, out_dir)?;
    DatasetManifest::load(out_dir.join(MANIFEST_FILE))
}

/// Metrics for one ground-truth / prediction pair.
pub fn cmd_metrics(gt: &Path, pred: &Path, config: &MetricConfig) -> Result<MetricReport> {
    let g = read_mask(gt)?;
    let p = read_mask(pred)?;
    evaluate_case(&g, &p, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_config_names() {
        let names: Vec<String> = InputConfig::TABLE.iter().map(|c| c.name()).collect();
        assert_eq!(
            names,
            ["curMR", "curMR+priMR", "curMR+priSeg", "curMR+priMR+priSeg"]
        );
        for c in InputConfig::TABLE {
            assert_eq!(c.name().parse::<InputConfig>().unwrap(), c);
        }
        assert!("priMR+priSeg".parse::<InputConfig>().is_err());
        assert!("curMR+ct".parse::<InputConfig>().is_err());
    }

    #[test]
    fn components() {
        let g = crate::volume::Geometry::unit([5, 5, 5]);
        let m = BinaryMask::from_voxels(g.clone(), &[[0, 0, 0], [1, 0, 0], [3, 3, 3], [4, 4, 4]]);
        assert_eq!(count_components(&m), 3);
        assert_eq!(count_components(&BinaryMask::empty(g)), 0);
    }
}
