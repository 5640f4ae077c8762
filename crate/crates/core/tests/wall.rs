use energy_share::edge::EdgeServer;
use energy_share::monitor::check_trace;
use energy_share::protocol::TerminalReason;
use energy_share::scenario::{parse_scenario_str, run_scenario, upload, RunOutcome};
use energy_share::transport::ClockMode;

#[test]
fn wall_clock_session_over_tcp_uploads_to_edge() {
    let text = "scenario.clock = wall\nscenario.pace = 10\n\
                device.P1.role = provider\ndevice.P2.role = provider\ndevice.P2.position = 3,0\n\
                device.C.role = consumer\ndevice.C.position = 1,0\n\
                request.kind = duration\nrequest.value = 10\n";
    let report = run_scenario(&parse_scenario_str(text, "wall").unwrap()).unwrap();
    let RunOutcome::Session {
        provider_id,
        terminal_reason,
        ..
    } = &report.outcome
    else {
        panic!("no session: {:?}", report.outcome);
    };
    assert_eq!(provider_id, "P1");
    assert_eq!(*terminal_reason, TerminalReason::DurationElapsed);
    let d = report.dataset.as_ref().unwrap();
    assert_eq!(d.records.len(), 11);
    check_trace(&d.records, 1.0, ClockMode::Wall).unwrap();

    let tmp = tempfile::tempdir().unwrap();
    let edge = EdgeServer::bind("127.0.0.1:0", tmp.path()).unwrap();
    let receipt = upload(&report, &edge.addr().to_string()).unwrap();
    assert_eq!(receipt.record_count, 11);
    assert_eq!(edge.store().get(&d.session_id).unwrap(), *d);
    edge.shutdown();
}
