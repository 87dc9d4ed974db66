mod common;

use lfi_core::executor::{ExecError, Executor};
use lfi_core::graph::NodeSpec;
use lfi_core::methods::rejection::{sample_rejection, RejectionConfig};
use lfi_core::methods::InferenceError;
use lfi_core::store::{FaultPoint, Store, StoreError};
use std::sync::atomic::Ordering;

const SEED: u64 = 17;
const BS: usize = 50;

fn cfg() -> RejectionConfig {
    RejectionConfig::quantile(40, 0.1)
}

#[test]
fn changed_summary_reuses_stored_simulations() {
    let (reg, calls) = common::counting_registry();
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let spec = common::counted_ma2_spec();
    let cg = spec.compile_with(&reg).unwrap();

    calls.store(0, Ordering::SeqCst);
    let first = sample_rejection(
        &Executor::new(&cg, SEED, BS)
            .workers(4)
            .with_store(&store, vec!["sim".into()]),
        &cfg(),
    )
    .unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), first.n_sim as usize);
    assert_eq!(store.len() as u64, first.n_sim / BS as u64);

    let var = NodeSpec::summary("S1", "variance").parents(["sim"]);
    let changed = spec.replace_node("S1", var).unwrap().compile_with(&reg).unwrap();
    assert_eq!(changed.digest("sim"), cg.digest("sim"));
    assert_ne!(changed.digest("d"), cg.digest("d"));

    calls.store(0, Ordering::SeqCst);
    let reused = sample_rejection(
        &Executor::new(&changed, SEED, BS)
            .workers(2)
            .with_store(&store, vec!["sim".into()]),
        &cfg(),
    )
    .unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 0);

    let fresh = sample_rejection(&Executor::new(&changed, SEED, BS), &cfg()).unwrap();
    assert_eq!(
        serde_json::to_string(&reused).unwrap(),
        serde_json::to_string(&fresh).unwrap()
    );
    assert_ne!(reused.distances, first.distances);
}

#[test]
fn other_seed_or_batch_size_misses_the_store() {
    let (reg, calls) = common::counting_registry();
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let cg = common::counted_ma2_spec().compile_with(&reg).unwrap();
    let nodes = vec!["sim".to_string()];
    Executor::new(&cg, SEED, BS)
        .with_store(&store, nodes.clone())
        .run_indices(&[0, 1])
        .unwrap();

    calls.store(0, Ordering::SeqCst);
    Executor::new(&cg, SEED + 1, BS)
        .with_store(&store, nodes.clone())
        .run_batch(0)
        .unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), BS);
    calls.store(0, Ordering::SeqCst);
    Executor::new(&cg, SEED, BS / 2)
        .with_store(&store, nodes.clone())
        .run_batch(0)
        .unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), BS / 2);
    calls.store(0, Ordering::SeqCst);
    Executor::new(&cg, SEED, BS)
        .with_store(&store, nodes)
        .run_batch(1)
        .unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 0);
}

#[test]
fn tampered_blob_is_reported_not_used() {
    let (reg, _) = common::counting_registry();
    let dir = tempfile::tempdir().unwrap();
    let cg = common::counted_ma2_spec().compile_with(&reg).unwrap();
    {
        let store = Store::open(dir.path()).unwrap();
        Executor::new(&cg, SEED, BS)
            .with_store(&store, vec!["sim".into()])
            .run_batch(0)
            .unwrap();
    }
    let store = Store::open(dir.path()).unwrap();
    let entry = store.manifest().entries[0].clone();
    let blob = dir.path().join(&entry.path);
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[20] ^= 0x01;
    std::fs::write(&blob, &bytes).unwrap();

    let err = Executor::new(&cg, SEED, BS)
        .with_store(&store, vec!["sim".into()])
        .run_batch(0)
        .unwrap_err();
    assert!(
        matches!(err, ExecError::Store(StoreError::ChecksumMismatch(_))),
        "{err}"
    );
    assert!(matches!(Store::open(dir.path()), Err(StoreError::ChecksumMismatch(_))));
}

#[test]
fn interrupted_write_leaves_a_usable_store() {
    let (reg, _) = common::counting_registry();
    let cg = common::counted_ma2_spec().compile_with(&reg).unwrap();
    let fresh = sample_rejection(&Executor::new(&cg, SEED, BS), &cfg()).unwrap();

    for fault in [FaultPoint::BeforeBlobRename, FaultPoint::BeforeManifestRename] {
        let dir = tempfile::tempdir().unwrap();
        Executor::new(&cg, SEED, BS)
            .with_store(&Store::open(dir.path()).unwrap(), vec!["sim".into()])
            .run_batch(0)
            .unwrap();
        let store = Store::open(dir.path()).unwrap();
        let before = store.len();
        store.inject_fault(fault);
        let err = sample_rejection(
            &Executor::new(&cg, SEED, BS)
                .workers(3)
                .with_store(&store, vec!["sim".into()]),
            &cfg(),
        );
        assert!(
            matches!(err, Err(InferenceError::Exec(ExecError::Store(_)))),
            "{fault:?}"
        );
        drop(store);

        let reopened = Store::open(dir.path()).unwrap();
        assert!(reopened.len() >= before);
        let result = sample_rejection(
            &Executor::new(&cg, SEED, BS).with_store(&reopened, vec!["sim".into()]),
            &cfg(),
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&result).unwrap(),
            serde_json::to_string(&fresh).unwrap(),
            "{fault:?}"
        );
    }
}
