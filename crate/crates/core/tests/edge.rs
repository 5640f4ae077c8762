use std::sync::Arc;
use std::thread;

use energy_share::edge::{EdgeClient, EdgeError, EdgeServer, EdgeStore, SessionDataset};
use energy_share::protocol::TerminalReason;
use energy_share::scenario::{parse_scenario_str, run_scenario};

fn dataset(consumer: &str, seconds: u32) -> SessionDataset {
    let text = format!(
        "device.P.role = provider\ndevice.{consumer}.role = consumer\n\
         request.kind = duration\nrequest.value = {seconds}\n"
    );
    run_scenario(&parse_scenario_str(&text, "edge").unwrap())
        .unwrap()
        .dataset
        .unwrap()
}

#[test]
fn upload_is_idempotent_and_conflicts_are_detected() {
    let tmp = tempfile::tempdir().unwrap();
    let store = EdgeStore::open(tmp.path()).unwrap();
    let d = dataset("C", 10);
    let receipt = store.upload(&d).unwrap();
    assert_eq!(receipt.record_count, 11);
    assert_eq!(store.upload(&d).unwrap(), receipt);
    assert_eq!(store.list().len(), 1);

    let mut altered = dataset("C", 12);
    altered.session_id = d.session_id.clone();
    assert_eq!(
        store.upload(&altered),
        Err(EdgeError::ConflictingSession(d.session_id.clone()))
    );
    assert_eq!(store.get(&d.session_id).unwrap(), d);
}

#[test]
fn unknown_session_is_not_found() {
    let tmp = tempfile::tempdir().unwrap();
    let store = EdgeStore::open(tmp.path()).unwrap();
    assert_eq!(store.get("nope"), Err(EdgeError::NotFound("nope".into())));
}

#[test]
fn tampered_metrics_fail_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let store = EdgeStore::open(tmp.path()).unwrap();
    let mut d = dataset("C", 10);
    d.metrics.energy_loss_mah += 1.0;
    assert!(matches!(
        store.upload(&d),
        Err(EdgeError::ValidationFailed(_))
    ));
    let mut d = dataset("C", 10);
    d.records.remove(3);
    assert!(matches!(
        store.upload(&d),
        Err(EdgeError::ValidationFailed(_))
    ));
    assert!(store.list().is_empty());
}

#[test]
fn store_survives_reopen_and_keeps_upload_order() {
    let tmp = tempfile::tempdir().unwrap();
    let ids: Vec<String> = {
        let store = EdgeStore::open(tmp.path()).unwrap();
        ["Cb", "Ca", "Cc"]
            .iter()
            .map(|c| store.upload(&dataset(c, 5)).unwrap().session_id)
            .collect()
    };
    let store = EdgeStore::open(tmp.path()).unwrap();
    let listed: Vec<String> = store.list().into_iter().map(|s| s.session_id).collect();
    assert_eq!(listed, ids);
}

#[test]
fn interrupted_upload_leaves_no_session() {
    let tmp = tempfile::tempdir().unwrap();
    let d = dataset("C", 5);
    {
        let store = EdgeStore::open(tmp.path()).unwrap();
        store.upload(&d).unwrap();
    }
    // an index line without its terminating newline was never acknowledged
    let index = tmp.path().join("index.log");
    let mut text = std::fs::read_to_string(&index).unwrap();
    text.push_str("ghost deadbeef");
    std::fs::write(&index, text).unwrap();
    let store = EdgeStore::open(tmp.path()).unwrap();
    assert_eq!(store.list().len(), 1);
    assert!(matches!(store.get("ghost"), Err(EdgeError::NotFound(_))));
}

#[test]
fn concurrent_uploads_of_distinct_sessions() {
    let tmp = tempfile::tempdir().unwrap();
    let store = Arc::new(EdgeStore::open(tmp.path()).unwrap());
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let store = store.clone();
            thread::spawn(move || store.upload(&dataset(&format!("C{i}"), 5)).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(store.list().len(), 8);
}

#[test]
fn tcp_round_trip_is_byte_identical_across_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let d = dataset("C", 20);
    let server = EdgeServer::bind("127.0.0.1:0", tmp.path()).unwrap();
    let mut client = EdgeClient::connect(server.addr()).unwrap();
    let receipt = client.upload(&d).unwrap();
    assert_eq!(receipt.session_id, d.session_id);
    assert_eq!(client.upload(&d).unwrap(), receipt);
    let (meta, trace) = client.get_raw(&d.session_id).unwrap();
    assert_eq!(
        (meta.as_str(), trace.as_str()),
        (d.meta_text().as_str(), d.trace_text().as_str())
    );
    drop(client);
    server.shutdown();

    let server = EdgeServer::bind("127.0.0.1:0", tmp.path()).unwrap();
    let mut client = EdgeClient::connect(server.addr()).unwrap();
    let (meta2, trace2) = client.get_raw(&d.session_id).unwrap();
    assert_eq!((meta2, trace2), (meta, trace));
    assert_eq!(client.get(&d.session_id).unwrap(), d);
    let list = client.list().unwrap();
    assert_eq!(list.len(), 1);
    assert_eq!(list[0].terminal_reason, TerminalReason::DurationElapsed);
    assert_eq!(list[0].energy_loss_mah, d.metrics.energy_loss_mah);
    assert!(matches!(client.get("missing"), Err(EdgeError::NotFound(_))));
    server.shutdown();
}

#[test]
fn tcp_reports_conflicts() {
    let tmp = tempfile::tempdir().unwrap();
    let server = EdgeServer::bind("127.0.0.1:0", tmp.path()).unwrap();
    let mut client = EdgeClient::connect(server.addr()).unwrap();
    let d = dataset("C", 5);
    client.upload(&d).unwrap();
    let mut other = dataset("C", 6);
    other.session_id = d.session_id.clone();
    assert!(matches!(
        client.upload(&other),
        Err(EdgeError::ConflictingSession(_))
    ));
    let mut bad = dataset("C", 6);
    bad.metrics.consumer_gain_mah *= 2.0;
    assert!(matches!(
        client.upload(&bad),
        Err(EdgeError::ValidationFailed(_))
    ));
    server.shutdown();
}
