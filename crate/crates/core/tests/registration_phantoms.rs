use artseg::harness::{cmd_eval, RunOptions};
use artseg::metrics::{evaluate_case, MetricConfig};
use artseg::phantom::{
    generate_case, generate_manifest, MotionRanges, PhantomSpec, PhantomSuiteSpec, TumorSpec,
};
use artseg::registration::{propagate_mask, register_rigid, RegConfig, RigidTransform};
use artseg::segmenter::BackendSpec;

fn anatomy() -> PhantomSpec {
    PhantomSpec {
        dims: [40, 40, 28],
        tumor: TumorSpec {
            center_mm: [19.5, 19.5, 13.5],
            radii_mm: [10.0, 6.5, 4.5],
            contrast: 60.0,
        },
        ..PhantomSpec::default()
    }
}

#[test]
fn inverse_consistency() {
    for (seed, t) in [
        (
            1,
            RigidTransform {
                rotation: [0.03, -0.05, 0.06],
                translation: [2.5, -1.5, 1.0],
            },
        ),
        (
            2,
            RigidTransform {
                rotation: [-0.07, 0.02, -0.04],
                translation: [-3.0, 2.0, -2.0],
            },
        ),
    ] {
        let case = generate_case(&PhantomSpec {
            transform: t,
            seed,
            ..anatomy()
        })
        .unwrap();
        let cfg = RegConfig::default();
        let ab = register_rigid(&case.current.image, &case.prior.image, &cfg)
            .unwrap()
            .transform;
        let ba = register_rigid(&case.prior.image, &case.current.image, &cfg)
            .unwrap()
            .transform;
        // same grid, same centre: the composition should be the identity
        let round = ab.then(&ba);
        assert!(round.rotation_angle().to_degrees() < 1.0, "{round:?}");
        assert!(round.translation.iter().all(|v| v.abs() < 1.0), "{round:?}");
        for level in register_rigid(&case.current.image, &case.prior.image, &cfg)
            .unwrap()
            .levels
        {
            assert!(level.accepted_costs.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}

#[test]
fn propagated_mask_tracks_ground_truth() {
    let t = RigidTransform {
        rotation: [0.0, 0.0, 0.05],
        translation: [-4.0, 3.0, 1.0],
    };
    let case = generate_case(&PhantomSpec {
        transform: t,
        seed: 9,
        ..anatomy()
    })
    .unwrap();
    let reg = register_rigid(
        &case.current.image,
        &case.prior.image,
        &RegConfig::default(),
    )
    .unwrap();
    let mask = propagate_mask(
        &case.prior.mask,
        &reg.transform,
        &case.current.image.geometry,
    );
    let r = evaluate_case(&case.current.mask, &mask, &MetricConfig::default()).unwrap();
    assert!(r.dice > 0.9, "{r:?}");
}

#[test]
fn propagate_backend_on_translated_phantoms() {
    let dir = tempfile::tempdir().unwrap();
    let suite = PhantomSuiteSpec {
        n_patients: 3,
        fractions: 2,
        template: anatomy(),
        motion: MotionRanges {
            max_translation_mm: 5.0,
            max_rotation_deg: 0.0,
            radius_scale_range: [1.0, 1.0],
            center_jitter_mm: 2.0,
        },
        seed: 21,
    };
    generate_manifest(&suite, dir.path().join("data")).unwrap();
    let opts = RunOptions::new(dir.path().join("data/manifest.json"));
    let report = cmd_eval(&opts, &BackendSpec::Propagate, &dir.path().join("out")).unwrap();
    assert_eq!(report.summary.failed, 0);
    let mean = report.aggregates.dice.mean.unwrap();
    assert!(mean >= 0.9, "mean dice {mean}");
}
