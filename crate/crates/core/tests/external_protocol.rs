use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use artseg::bbox::mask_bbox;
use artseg::manifest::DatasetManifest;
use artseg::nifti::read_mask;
use artseg::phantom::{generate_manifest, PhantomSuiteSpec, MANIFEST_FILE};
use artseg::prompt::{select_prior, test_time_bbox_jitter, JitterMode};
use artseg::rng::stream;
use artseg::segmenter::external::Capability;
use artseg::segmenter::{
    segment, ExternalConfig, ExternalSegmenter, Inputs, PriorOracle, Prompts, SegmentationRequest,
    Segmenter,
};
use artseg::Error;

fn adapter(mode: &str) -> String {
    format!("{} {mode}", env!("CARGO_BIN_EXE_artseg-test-adapter"))
}

fn quick() -> ExternalConfig {
    ExternalConfig {
        handshake_timeout: Duration::from_secs(10),
        request_timeout: Duration::from_secs(10),
    }
}

struct Dataset {
    dir: tempfile::TempDir,
    manifest: DatasetManifest,
}

fn dataset(patients: usize, fractions: u32) -> Dataset {
    let dir = tempfile::tempdir().unwrap();
    let suite = PhantomSuiteSpec {
        n_patients: patients,
        fractions,
        ..PhantomSuiteSpec::default()
    };
    generate_manifest(&suite, dir.path().join("data")).unwrap();
    let manifest = DatasetManifest::load(dir.path().join("data").join(MANIFEST_FILE)).unwrap();
    Dataset { dir, manifest }
}

fn requests(d: &Dataset) -> Vec<SegmentationRequest> {
    let m = &d.manifest;
    let mut rng = stream(5);
    m.sorted_cases()
        .into_iter()
        .filter(|c| c.fraction_index > 0)
        .map(|c| {
            let prior = select_prior(&m.cases, &c.patient_id, c.fraction_index).unwrap();
            let gt = read_mask(m.resolve(c.current_mask.as_ref().unwrap())).unwrap();
            let j = test_time_bbox_jitter(
                &mask_bbox(&gt).unwrap(),
                5,
                gt.dims(),
                JitterMode::Random,
                &mut rng,
            );
            let prior_mask = m.resolve(prior.current_mask.as_ref().unwrap());
            SegmentationRequest {
                case_id: c.case_id(),
                inputs: Inputs {
                    current: m.resolve(&c.current_image),
                    prior: Some(m.resolve(&prior.current_image)),
                    prior_mask: Some(prior_mask.clone()),
                },
                prompts: Prompts {
                    bbox: Some(j.bbox),
                    mask: Some(prior_mask),
                },
                out_dir: d.dir.path().join("scratch").join(c.case_id()),
                options: BTreeMap::new(),
            }
        })
        .collect()
}

#[test]
fn handshake_reports_name_and_capabilities() {
    let ext = ExternalSegmenter::spawn(&adapter("prior-oracle"), &quick()).unwrap();
    assert_eq!(ext.name(), "test-adapter/prior-oracle");
    assert_eq!(
        ext.capabilities(),
        [Capability::Bbox, Capability::Mask, Capability::Prior]
    );
}

#[test]
fn external_prior_oracle_is_bit_identical_to_builtin() {
    let d = dataset(5, 2);
    let reqs = requests(&d);
    assert_eq!(reqs.len(), 10);
    let ext = ExternalSegmenter::spawn(&adapter("prior-oracle"), &quick()).unwrap();
    for req in &reqs {
        let a = segment(req, &PriorOracle).unwrap();
        let b = segment(req, &ext).unwrap();
        assert_eq!(a, b, "{}", req.case_id);
    }
}

#[test]
fn concurrent_callers_share_one_handle() {
    let d = dataset(2, 3);
    let reqs = requests(&d);
    let ext = Arc::new(ExternalSegmenter::spawn(&adapter("prior-oracle"), &quick()).unwrap());
    std::thread::scope(|s| {
        for req in &reqs {
            let ext = Arc::clone(&ext);
            s.spawn(move || {
                let got = segment(req, ext.as_ref()).unwrap();
                assert_eq!(got, segment(req, &PriorOracle).unwrap());
            });
        }
    });
}

#[test]
fn version_mismatch_both_ways() {
    for mode in ["ready-version2", "reject-version"] {
        match ExternalSegmenter::spawn(&adapter(mode), &quick()) {
            Err(Error::VersionMismatch(msg)) => assert!(!msg.is_empty()),
            Err(e) => panic!("{mode}: {e}"),
            Ok(_) => panic!("{mode}: handshake accepted"),
        }
    }
}

#[test]
fn crash_mid_request_is_backend_failure_with_stderr() {
    let d = dataset(1, 1);
    let req = &requests(&d)[0];
    let ext = ExternalSegmenter::spawn(&adapter("crash"), &quick()).unwrap();
    match segment(req, &ext) {
        Err(Error::BackendFailure { message, stderr }) => {
            assert!(message.contains("exited"), "{message}");
            assert!(
                stderr.contains("segmentation fault while handling p000_f1"),
                "{stderr}"
            );
        }
        other => panic!("{other:?}"),
    }
    // the handle stays failed
    assert!(matches!(
        segment(req, &ext),
        Err(Error::BackendFailure { .. })
    ));
}

#[test]
fn malformed_replies_are_protocol_violations() {
    let d = dataset(1, 1);
    let req = &requests(&d)[0];
    for mode in ["garbage", "nonbinary", "wrong-case"] {
        let ext = ExternalSegmenter::spawn(&adapter(mode), &quick()).unwrap();
        match segment(req, &ext) {
            Err(Error::ProtocolViolation(_)) => {}
            other => panic!("{mode}: {other:?}"),
        }
    }
}

#[test]
fn adapter_error_message_is_backend_failure() {
    let d = dataset(1, 1);
    let mut req = requests(&d).remove(0);
    req.prompts.mask = None;
    req.inputs.prior_mask = None;
    let ext = ExternalSegmenter::spawn(&adapter("prior-oracle"), &quick()).unwrap();
    match segment(&req, &ext) {
        Err(Error::BackendFailure { message, .. }) => {
            assert!(message.contains("prior mask"), "{message}")
        }
        other => panic!("{other:?}"),
    }
    // an error reply does not poison the handle
    let ok = requests(&d).remove(0);
    assert!(segment(&ok, &ext).is_ok());
}

#[test]
fn timeouts() {
    let d = dataset(1, 1);
    let req = &requests(&d)[0];
    let cfg = ExternalConfig {
        handshake_timeout: Duration::from_secs(10),
        request_timeout: Duration::from_millis(500),
    };
    let ext = ExternalSegmenter::spawn(&adapter("slow"), &cfg).unwrap();
    let t = Instant::now();
    assert!(matches!(
        segment(req, &ext),
        Err(Error::BackendFailure { .. })
    ));
    assert!(t.elapsed() < Duration::from_secs(5));

    let cfg = ExternalConfig {
        handshake_timeout: Duration::from_millis(500),
        ..quick()
    };
    assert!(matches!(
        ExternalSegmenter::spawn(&adapter("silent"), &cfg),
        Err(Error::HandshakeTimeout(_))
    ));
}

#[test]
fn spawn_failures() {
    let missing = Path::new("/nonexistent/adapter-binary");
    match ExternalSegmenter::spawn(&missing.display().to_string(), &quick()) {
        Err(Error::SpawnFailure { command, .. }) => assert_eq!(PathBuf::from(command), missing),
        other => panic!("{:?}", other.err()),
    }
    match ExternalSegmenter::spawn(&adapter("quit-early"), &quick()) {
        Err(Error::BackendFailure { stderr, .. }) => {
            assert!(stderr.contains("missing model weights"), "{stderr}")
        }
        other => panic!("{:?}", other.err()),
    }
}
