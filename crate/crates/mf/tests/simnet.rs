use mf::simnet::run_scenario;
use mf::simnet::scenario::Scenario;

fn scenario(text: &str) -> Scenario {
    Scenario::parse(text).unwrap()
}

const BASE: &str = "agents=10\nvariables=5\nperiod_ms=1000\nduration_ms=60000\n";

#[test]
fn traffic_is_conserved_on_every_link() {
    for text in [
        BASE.to_string(),
        format!("model=pull\n{BASE}"),
        "agents=5\nvariables=2\ntransport=datagram\nloss=0.3\nduration_ms=20000\n".into(),
        "agents=3\nvariables=2\nmanagers=2\ntransport=http-push\nduration_ms=20000\nkill manager-1 10000\n".into(),
    ] {
        let m = run_scenario(&scenario(&text)).metrics;
        assert!(m.conservation, "{text}");
        let sent: u64 = m.links.values().map(|l| l.bytes).sum();
        assert_eq!(sent, m.totals.manager_to_agent.bytes + m.totals.agent_to_manager.bytes);
    }
}

#[test]
fn same_seed_gives_identical_documents() {
    let text = "agents=6\nvariables=3\ntransport=datagram\nloss=0.1\nskew_ms=40\nduration_ms=30000\nseed=11\n";
    let a = run_scenario(&scenario(text)).metrics.to_json();
    let b = run_scenario(&scenario(text)).metrics.to_json();
    assert_eq!(a, b);
    let c = run_scenario(&scenario(&text.replace("seed=11", "seed=12"))).metrics.to_json();
    assert_ne!(a, c);
}

#[test]
fn push_steady_state_is_silent_from_the_manager() {
    let push = run_scenario(&scenario(BASE)).metrics;
    let pull = run_scenario(&scenario(&format!("model=pull\n{BASE}"))).metrics;
    assert_eq!(push.steady_state.manager_to_agent_bytes_excluding_sync, 0);
    assert!(pull.steady_state.manager_to_agent_bytes_excluding_sync > 0);
    let ratio = push.steady_state.manager_to_agent_bytes_excluding_sync as f64
        / pull.steady_state.manager_to_agent_bytes_excluding_sync as f64;
    assert!(ratio < 0.05);
    // pull keeps costing every second, push only until the subscriptions are in
    let start = (push.steady_state.start_ms / 1000 + 1) as usize;
    assert!(push.series.manager_to_agent_bytes_per_s[start..].iter().all(|b| *b == 0));
    assert!(pull.series.manager_to_agent_bytes_per_s[1..59].iter().all(|b| *b > 0));
    // both models deliver the data
    assert!(push.managers["manager-1"].availability.ratio > 0.99);
    assert!(pull.managers["manager-1"].availability.ratio > 0.99);
}

#[test]
fn pull_traffic_scales_with_agents_and_managers() {
    let one = run_scenario(&scenario(&format!("model=pull\n{BASE}"))).metrics;
    let agents = run_scenario(&scenario(&format!("model=pull\n{}", BASE.replace("agents=10", "agents=20")))).metrics;
    let managers = run_scenario(&scenario(&format!("model=pull\nmanagers=2\n{BASE}"))).metrics;
    let base = one.steady_state.manager_to_agent_bytes_excluding_sync as f64;
    for m in [&agents, &managers] {
        let r = m.steady_state.manager_to_agent_bytes_excluding_sync as f64 / base;
        assert!((r - 2.0).abs() < 0.02, "ratio {r}");
    }
    assert_eq!(one.managers["manager-1"].poll.order_violations, 0);
    assert_eq!(one.totals.manager_to_agent.connections, 10);
}

#[test]
fn push_steady_state_messages_are_only_sync_probes() {
    // http-push is excluded: every push is answered by an http response
    for transport in ["stream", "datagram"] {
        let text = format!("{BASE}transport={transport}\nsync_interval_ms=5000\n");
        let m = run_scenario(&scenario(&text)).metrics;
        assert!(m.steady_state.manager_to_agent_sync_messages > 0);
        assert_eq!(m.steady_state.manager_to_agent_messages, m.steady_state.manager_to_agent_sync_messages, "{transport}");
    }
}

#[test]
fn hot_standby_takes_over() {
    let text = "agents=4\nvariables=3\nmanagers=2\nduration_ms=30000\nkill manager-1 12000\n";
    let m = run_scenario(&scenario(text)).metrics;
    let hs = m.hot_standby.expect("standby metrics");
    assert!(hs.pre_kill_identical);
    assert!(hs.standby_superset);
    assert!(hs.standby_availability >= 0.99);
    assert!(!m.managers["manager-1"].alive_at_end);
    assert!(m.managers["manager-2"].alive_at_end);
}

#[test]
fn durable_reboot_needs_no_manager() {
    let text = "agents=2\nvariables=2\ntransport=datagram\nduration_ms=20000\nkill agent-1 5000\nrestore agent-1 8000\n";
    let out = run_scenario(&scenario(text));
    let r = &out.metrics.reboots[0];
    assert_eq!(r.storage, "durable");
    assert_eq!(r.manager_messages_after_restore, 0);
    assert_eq!(r.converged_after_ms, Some(0));
    assert!(r.subscriptions_match_repository);
}

#[test]
fn volatile_reboot_converges_through_resend() {
    for transport in ["stream", "datagram", "http-push"] {
        let text = format!(
            "agents=2\nvariables=2\nstorage=volatile\ntransport={transport}\nduration_ms=20000\nkill agent-1 5000\nrestore agent-1 8000\n"
        );
        let out = run_scenario(&scenario(&text));
        let r = &out.metrics.reboots[0];
        assert!(r.manager_messages_after_restore > 0);
        let converged = r.converged_after_ms.expect("converged");
        assert!(converged <= 2 * r.round_trip_ms, "{transport}: {converged} > 2x{}", r.round_trip_ms);
        assert!(r.subscriptions_match_repository);
        // oracle: the repository's records for the rebooted agent
        let mut want: Vec<_> = out.repository.iter().filter(|r| r.agent == "agent-1").map(|r| r.subscription.clone()).collect();
        let mut have = out.agent_subscriptions[0].clone();
        want.sort_by(|a, b| a.id.cmp(&b.id));
        have.sort_by(|a, b| a.id.cmp(&b.id));
        assert_eq!(have, want, "{transport}");
    }
}

#[test]
fn clock_offsets_are_recovered() {
    let text = "agents=4\nvariables=1\nskew_ms=250\nsync_interval_ms=5000\nduration_ms=30000\n";
    let m = run_scenario(&scenario(text)).metrics;
    for (agent, c) in &m.clocks {
        let est = c.estimated_offset_ms["manager-1"].expect("estimate");
        assert!((est - c.true_offset_ms).abs() <= 1, "{agent}: {est} vs {}", c.true_offset_ms);
        assert_eq!(c.true_offset_ms.abs(), 250);
    }
    assert!(m.sync.max_messages_per_agent_per_interval <= 2);
}

#[test]
fn datagram_loss_matches_configuration() {
    let text = "agents=20\nvariables=2\nperiod_ms=100\ntransport=datagram\nloss=0.2\nduration_ms=60000\n";
    let m = run_scenario(&scenario(text)).metrics;
    let n = m.loss.datagrams_sent as f64;
    assert!(n >= 10_000.0);
    let sigma = (n * 0.2 * 0.8).sqrt();
    let lost = m.managers["manager-1"].collector.lost as f64;
    assert!((lost - 0.2 * n).abs() <= 3.0 * sigma, "lost {lost} of {n}");
    assert!((m.loss.datagrams_dropped as f64 - 0.2 * n).abs() <= 3.0 * sigma);
    let a = &m.managers["manager-1"].availability;
    assert!((a.ratio - (1.0 - m.loss.realized)).abs() < 1e-9, "{} vs {}", a.ratio, 1.0 - m.loss.realized);
}
