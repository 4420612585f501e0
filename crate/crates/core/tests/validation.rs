use mavtrack_core::fixtures::{evaluate_fixture, validation_fixture, DECOYS};
use mavtrack_core::{calibrate, CalibrationConfig, ScanPatternConfig, Scene};

#[test]
fn genuine_history_is_accepted_and_decoys_rejected() {
    let model = calibrate(&Scene::default(), &ScanPatternConfig::default(), &CalibrationConfig::default(), 1).unwrap();
    let fx = validation_fixture(4, &model).unwrap();
    let (genuine, decoys) = evaluate_fixture(&fx, &model).unwrap();
    assert!(genuine.accepted, "{genuine:?}");
    assert!(genuine.mean_voxel_distance.unwrap() < 2.0 * fx.config.validator.voxel_size);
    assert_eq!(decoys.len(), DECOYS.len());
    for (name, r) in decoys {
        assert!(!r.accepted, "{name}: {r:?}");
        assert!(genuine.iou - r.iou >= 0.3, "{name}");
    }
}
