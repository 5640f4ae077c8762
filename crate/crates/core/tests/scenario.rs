use energy_share::battery::{
    predict_outcome, BatteryState, DrainParams, Technology, TechnologyParams,
};
use energy_share::monitor::{check_trace, expected_record_pairs, trace_csv};
use energy_share::protocol::{RequestKind, TerminalReason};
use energy_share::scenario::{
    compare, consumer_gain_per_minute_below_taper, load_run, parse_scenario_str, run_scenario,
    write_run, RunArtifact, RunOutcome, ScenarioError,
};
use energy_share::transport::ClockMode;

fn experiment(consumer_pct: u32, duration_s: u32, extra: &str) -> String {
    format!(
        "scenario.name = exp1\n\
         scenario.seed = 7\n\
         device.P1.role = provider\n\
         device.P1.start_level_pct = 100\n\
         device.P1.position = 0.02,0\n\
         device.C1.role = consumer\n\
         device.C1.start_level_pct = {consumer_pct}\n\
         request.kind = duration\n\
         request.value = {duration_s}\n{extra}"
    )
}

fn run(text: &str) -> energy_share::scenario::RunReport {
    run_scenario(&parse_scenario_str(text, "t").unwrap()).unwrap()
}

#[test]
fn experiment_one_shape() {
    let report = run(&experiment(40, 1800, ""));
    let d = report.dataset.as_ref().unwrap();
    assert_eq!(d.terminal_reason, TerminalReason::DurationElapsed);
    assert_eq!(d.records.len() as u64, expected_record_pairs(1800.0, 1.0));
    assert_eq!(d.records.len(), 1801);
    check_trace(&d.records, 1.0, ClockMode::Virtual).unwrap();
    d.validate().unwrap();
    assert_eq!(d.metrics.duration_s, 1800.0);
}

#[test]
fn virtual_runs_are_deterministic() {
    let a = run(&experiment(40, 1800, "transport.drop_probability = 0\n"));
    let b = run(&experiment(40, 1800, "transport.drop_probability = 0\n"));
    let (a, b) = (a.dataset.unwrap(), b.dataset.unwrap());
    assert_eq!(trace_csv(&a.records), trace_csv(&b.records));
}

#[test]
fn pacing_does_not_change_virtual_results() {
    let text = "scenario.name = short\ndevice.P.role = provider\ndevice.C.role = consumer\n\
                request.kind = duration\nrequest.value = 5\n";
    let fast = run(text);
    let paced = run(&format!("{text}scenario.pace = 1000\n"));
    assert_eq!(
        fast.dataset.unwrap().trace_text(),
        paced.dataset.unwrap().trace_text()
    );
}

#[test]
fn threshold_above_100_means_no_provider() {
    let report = run(&experiment(
        40,
        1800,
        "device.P1.accept_threshold_pct = 101\n",
    ));
    assert_eq!(report.outcome, RunOutcome::NoProviderAvailable);
    assert!(report.dataset.is_none());
}

#[test]
fn rejection_walks_to_next_provider() {
    let text = experiment(
        40,
        1800,
        "device.P1.accept_threshold_pct = 101\n\
         device.P2.role = provider\n\
         device.P2.position = 5,5\n",
    );
    let report = run(&text);
    match report.outcome {
        RunOutcome::Session {
            provider_id,
            terminal_reason,
            ..
        } => {
            assert_eq!(provider_id, "P2");
            assert_eq!(terminal_reason, TerminalReason::DurationElapsed);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn oversized_amount_depletes_provider() {
    // predict_outcome bounds what a 500 mAh provider can deliver
    let params = TechnologyParams::defaults(Technology::Cable);
    let provider = BatteryState::full(500.0).unwrap();
    let consumer = BatteryState::at_level(2915.0, 10.0).unwrap();
    let deliverable = 500.0 * params.efficiency;
    let amount = deliverable * 1.5;
    assert!(predict_outcome(
        provider,
        consumer,
        &params,
        DrainParams::none(),
        DrainParams::none(),
        RequestKind::Amount,
        amount,
        1.0
    )
    .is_err());

    let text = format!(
        "device.P.role = provider\ndevice.P.capacity_mah = 500\ndevice.P.baseline_ma = 0\n\
         device.C.role = consumer\ndevice.C.start_level_pct = 10\ndevice.C.baseline_ma = 0\n\
         technology.kind = cable\nrequest.kind = amount\nrequest.value = {amount}\n"
    );
    let report = run(&text);
    assert_eq!(
        report.outcome.terminal_reason(),
        Some(TerminalReason::ProviderDepleted)
    );
    let d = report.dataset.unwrap();
    assert!(d.metrics.consumer_gain_mah < amount);
    assert_eq!(d.records.last().unwrap().provider.battery_charge_mah, 0.0);
}

#[test]
fn amount_request_completes() {
    let text = "device.P.role = provider\ndevice.C.role = consumer\n\
                request.kind = amount\nrequest.value = 100\n";
    let report = run(text);
    let d = report.dataset.unwrap();
    assert_eq!(d.terminal_reason, TerminalReason::AmountDelivered);
    let ledger = report.ledger.unwrap();
    assert!(ledger.mah_in >= 100.0 * (1.0 - 1e-12));
}

#[test]
fn lossy_transport_still_yields_valid_prefix() {
    let mut lost = 0;
    for seed in 0..20 {
        let text = format!(
            "scenario.seed = {seed}\ndevice.P.role = provider\ndevice.C.role = consumer\n\
             transport.drop_probability = 0.05\nrequest.kind = duration\nrequest.value = 120\n"
        );
        let report = run(&text);
        if let Some(d) = &report.dataset {
            d.validate().unwrap();
            if d.terminal_reason == TerminalReason::TransportLost {
                lost += 1;
            }
        }
    }
    assert!(lost > 0);
}

#[test]
fn compare_requires_two_runs_with_equal_intervals() {
    let a = run(&experiment(40, 60, ""));
    let art = |id: &str, r: &energy_share::scenario::RunReport| RunArtifact {
        run_id: id.into(),
        dataset: r.dataset.clone().unwrap(),
    };
    assert!(matches!(
        compare(&[art("a", &a)]),
        Err(ScenarioError::IncompatibleRuns(_))
    ));
    let b = run(&experiment(40, 60, "monitor.interval_s = 2\n"));
    assert!(matches!(
        compare(&[art("a", &a), art("b", &b)]),
        Err(ScenarioError::IncompatibleRuns(_))
    ));
    let c = compare(&[art("a", &a), art("c", &a)]).unwrap();
    assert_eq!(c.rows.len(), 2);
    assert!(c
        .report_csv()
        .starts_with(energy_share::scenario::REPORT_CSV_HEADER));
    assert_eq!(c.levels_csv().lines().count(), 62);
}

#[test]
fn run_dirs_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run(&experiment(40, 30, ""));
    let dir = write_run(&report, tmp.path()).unwrap();
    let loaded = load_run(&dir).unwrap();
    assert_eq!(loaded.run_id, "exp1");
    assert_eq!(&loaded.dataset, report.dataset.as_ref().unwrap());
}

#[test]
fn gain_rate_is_independent_of_start_level_below_taper() {
    let rates: Vec<f64> = [10, 40, 70]
        .iter()
        .map(|lvl| {
            let r = run(&experiment(*lvl, 1800, ""));
            consumer_gain_per_minute_below_taper(r.dataset.as_ref().unwrap()).unwrap()
        })
        .collect();
    for r in &rates {
        assert!((r - rates[0]).abs() <= 1e-9 * rates[0]);
    }
}
