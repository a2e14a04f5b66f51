mod common;

use std::path::Path;

use common::tiny;
use depthcl::checkpoint::{decode_checkpoint, encode_checkpoint, load_strategy, save_checkpoint, save_strategy, Checkpoint};
use depthcl::dataset::{decode_dataset, encode_dataset, load_dataset, save_dataset};
use depthcl::harness::prepare_datasets;
use depthcl::record::{decode_record, encode_record};
use depthcl::FormatError;
use depthcl_core::continual::{StrategyConfig, StrategyKind, StrategyState, TrainConfig, TrainData};
use depthcl_core::data::{generate_domain, preset, SampleSource};
use depthcl_core::metrics::{EvalRecord, FrameMetrics};
use proptest::prelude::*;
use tempfile::tempdir;

const FIXTURE: &str = "tests/fixtures/rgbd-dense-16x16.dcl";

#[test]
fn golden_dataset_matches_the_generator() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(FIXTURE);
    let stored = load_dataset(&path).unwrap();
    let spec = preset("rgbd-dense").unwrap().with_size(16, 16);
    assert_eq!(stored, generate_domain(&spec, 2, 7).unwrap());
    assert_eq!(encode_dataset(&stored).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn dataset_round_trip_and_corruption() {
    let spec = preset("feature-track").unwrap().with_size(16, 16);
    let samples = generate_domain(&spec, 3, 1).unwrap();
    let dir = tempdir().unwrap();
    let path = dir.path().join("d.dcl");
    save_dataset(&samples, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), samples);

    let mut bytes = encode_dataset(&samples).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 1;
    assert!(matches!(decode_dataset(&bytes), Err(FormatError::Checksum)));
    assert!(matches!(decode_dataset(&bytes[..n - 40]), Err(FormatError::Truncated | FormatError::Checksum)));
    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(load_dataset(&path).unwrap_err().exit_code(), 4);
    assert_eq!(load_dataset(&dir.path().join("missing.dcl")).unwrap_err().exit_code(), 4);
}

#[test]
fn checkpoint_kind_is_checked() {
    let cfg = tiny(0, "finetune");
    let c = Checkpoint {
        net: cfg.net.clone(),
        params: cfg.net.init_params(0).unwrap(),
        seed: 0,
        datasets_trained: 0,
    };
    let bytes = encode_checkpoint(&c).unwrap();
    assert_eq!(decode_checkpoint(&bytes).unwrap(), c);
    let spec = preset("rgbd-dense").unwrap().with_size(16, 16);
    let data = encode_dataset(&generate_domain(&spec, 1, 0).unwrap()).unwrap();
    assert!(matches!(decode_checkpoint(&data), Err(FormatError::Kind { .. })));
}

#[test]
fn strategy_states_round_trip_for_every_kind() {
    let cfg = tiny(3, "finetune");
    let data = prepare_datasets(&cfg).unwrap();
    let sources: Vec<&dyn SampleSource> = data.iter().map(|d| &d.data as &dyn SampleSource).collect();
    let dir = tempdir().unwrap();
    for kind in StrategyKind::ALL {
        let mut sc = StrategyConfig::new(kind);
        sc.capacity = 4;
        sc.fisher_samples = 4;
        sc.multi_anchor = true;
        let mut state = StrategyState::new(sc).unwrap();
        let mut params = cfg.net.init_params(1).unwrap();
        let train = TrainConfig { batch_size: 4, max_steps: Some(2), ..TrainConfig::default() };
        for d in &data[..2] {
            let td = TrainData { source: &d.data, indices: &d.split.train };
            params = state.train_on_dataset(&cfg.net, &params, td, &train, 3).unwrap().0;
        }
        let path = dir.path().join(format!("{kind}.state"));
        save_strategy(&path, &state).unwrap();
        assert_eq!(load_strategy(&path, &sources).unwrap(), state, "{kind}");
        save_checkpoint(&dir.path().join("p.ckpt"), &Checkpoint { net: cfg.net.clone(), params: params.clone(), seed: 3, datasets_trained: 2 }).unwrap();
        // A buffer that refers to a dataset that is not supplied cannot load.
        if state.buffer.is_some() {
            assert!(load_strategy(&path, &sources[..1]).is_err());
        }
    }
}

fn metrics() -> impl Strategy<Value = FrameMetrics> {
    let v = || prop_oneof![0.0f64..1e4, Just(0.1 + 0.2), (0.0f64..1.0).prop_map(|x| x * 1e-300)];
    (v(), v(), v(), v()).prop_map(|(mae, rmse, imae, irmse)| FrameMetrics { mae, rmse, imae, irmse })
}

proptest! {
    #[test]
    fn record_round_trip_is_bit_exact(n in 1usize..6, fill in 0usize..22, values in proptest::collection::vec(metrics(), 21)) {
        let mut r = EvalRecord::new(n).unwrap();
        let mut i = 0;
        'outer: for k in 0..n {
            for j in 0..=k {
                if i >= fill { break 'outer; }
                r.set(j, k, values[i]).unwrap();
                i += 1;
            }
        }
        let back = decode_record(&encode_record(&r)).unwrap();
        prop_assert_eq!(back, r);
    }
}
