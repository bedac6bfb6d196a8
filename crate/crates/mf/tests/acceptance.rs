//! Acceptance run: one line per criterion, nonzero exit if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mf::simnet::run_scenario;
use mf::simnet::scenario::Scenario;
use mf_core::manager::{
    tick_interval, ManagerCore, MemorySink, NoopRunner, SubscriptionRecord, DEVICE_RECOVERED, HEARTBEAT_MISSED,
};
use mf_core::mib::{well_known, Access, MibSchema, MibValue, Syntax, TableRow, VariableDef, VirtualMib};
use mf_core::subscription::{Endpoint, Subscription, Transport};
use mf_core::wire::{
    decode_message, encode_message, BindValue, Body, EncodingMode, ErrorCode, ManagementMessage, Status, VarBind,
};
use mf_core::Oid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scenario(text: &str) -> Scenario {
    Scenario::parse(text).expect("scenario")
}

const BANDWIDTH: &str = "agents=10\nvariables=5\nperiod_ms=1000\nduration_ms=60000\n";

fn push_bandwidth() -> Outcome {
    let t = Instant::now();
    let push = run_scenario(&scenario(&format!("{BANDWIDTH}transport=stream\n"))).metrics;
    let push_time = t.elapsed();
    let pull = run_scenario(&scenario(&format!("{BANDWIDTH}model=pull\n"))).metrics;
    let p = push.steady_state.manager_to_agent_bytes_excluding_sync;
    let q = pull.steady_state.manager_to_agent_bytes_excluding_sync;
    let ratio = if q == 0 { f64::INFINITY } else { p as f64 / q as f64 };
    outcome(
        ratio < 0.05 && push_time < Duration::from_secs(5),
        format!("push {p} B / pull {q} B = {ratio:.4} (< 0.05), simulated in {:.2}s (< 5s)", push_time.as_secs_f64()),
    )
}

fn push_steady_invariant() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for transport in ["stream", "datagram"] {
        let m = run_scenario(&scenario(&format!("{BANDWIDTH}transport={transport}\nsync_interval_ms=5000\n"))).metrics;
        let s = &m.steady_state;
        pass &= s.manager_to_agent_messages == s.manager_to_agent_sync_messages && s.manager_to_agent_sync_messages > 0;
        parts.push(format!("{transport}: {} messages, {} sync probes", s.manager_to_agent_messages, s.manager_to_agent_sync_messages));
    }
    outcome(pass, parts.join("; "))
}

const HB_PERIOD: u64 = 3_000;

struct HeartbeatRig {
    core: ManagerCore,
    sink: MemorySink,
    now: u64,
    seq: u64,
}

impl HeartbeatRig {
    fn new(t0: u64) -> Self {
        let mut core = ManagerCore::default();
        let sub = Subscription::new("hb", Endpoint::new("m", 1, Transport::Stream)).select(well_known::sys_object_id(), HB_PERIOD);
        core.add_subscription(SubscriptionRecord { agent: "dev".into(), subscription: sub }, t0);
        HeartbeatRig { core, sink: MemorySink::default(), now: t0, seq: 0 }
    }

    fn beat_at(&mut self, t: u64) {
        let step = tick_interval(HB_PERIOD);
        while self.now + step <= t {
            self.now += step;
            self.core.tick(self.now, &mut NoopRunner, &mut self.sink);
        }
        self.now = t;
        self.seq += 1;
        let bind = VarBind::new(well_known::sys_object_id(), MibValue::Oid(well_known::sys_object_id()));
        let msg = ManagementMessage::push_report("hb", self.seq, "dev", vec![bind], t);
        self.core.on_push(&msg, t, &mut NoopRunner, &mut self.sink);
    }

    fn count(&self, kind: &str) -> usize {
        self.core.correlator.events().iter().filter(|e| e.kind == kind).count()
    }
}

fn heartbeat_jitter() -> Outcome {
    let t0 = 1_000_000;
    let mut rig = HeartbeatRig::new(t0);
    let mut t = t0;
    for k in 0..100 {
        t += if k % 2 == 0 { 2_990 } else { 3_010 };
        rig.beat_at(t);
    }
    let jitter_events = rig.core.correlator.events().len();

    let mut rig = HeartbeatRig::new(t0);
    let mut t = t0;
    for _ in 0..10 {
        t += HB_PERIOD;
        rig.beat_at(t);
    }
    t += HB_PERIOD * 5 / 2 + 1;
    rig.beat_at(t);
    for _ in 0..10 {
        t += HB_PERIOD;
        rig.beat_at(t);
    }
    let missed = rig.count(HEARTBEAT_MISSED);
    let recovered = rig.count(DEVICE_RECOVERED);
    let total = rig.core.correlator.events().len();
    outcome(
        jitter_events == 0 && missed == 1 && recovered == 1 && total == 2,
        format!("jitter: {jitter_events} events; gap 2.5P+1ms: {missed} missed, {recovered} recovered, {total} total"),
    )
}

fn connection_economy() -> Outcome {
    let agents = 5;
    let text = format!("model=pull\nagents={agents}\nvariables=5\nperiod_ms=1000\nduration_ms=100000\nkeepalive_ms=15000\n");
    let m = run_scenario(&scenario(&text)).metrics;
    let mgr = &m.managers["manager-1"];
    let conns = m.totals.manager_to_agent.connections;
    let cycles = mgr.poll.cycles_completed;
    outcome(
        conns == agents && mgr.poll.order_violations == 0 && cycles == 100 * agents && mgr.poll.cycles_failed == 0,
        format!(
            "{conns} connections for {agents} agents, {cycles} cycles, {} failed, {} out-of-order responses",
            mgr.poll.cycles_failed, mgr.poll.order_violations
        ),
    )
}

const MIB_BASE: [u32; 7] = [1, 3, 6, 1, 4, 1, 4242];

fn random_mib(rng: &mut ChaCha8Rng) -> (VirtualMib, Vec<Oid>) {
    let mut vars = Vec::new();
    let mut instances = Vec::new();
    let mut prefixes = Vec::new();
    let tables: BTreeSet<u32> = (0..rng.random_range(1..5)).map(|_| rng.random_range(1..30)).collect();
    for t in &tables {
        let columns = rng.random_range(1..6u32);
        for c in 1..=columns {
            let arcs = [&MIB_BASE[..], &[*t, 1, c]].concat();
            vars.push(VariableDef {
                oid: Oid::from_slice(&arcs),
                name: format!("t{t}c{c}"),
                syntax: Syntax::Gauge,
                access: Access::ReadOnly,
                is_table_column: true,
                description: String::new(),
            });
            for _ in 0..rng.random_range(0..10) {
                let row: u32 = rng.random_range(1..100);
                instances.push((Oid::from_slice(&[&arcs[..], &[row]].concat()), MibValue::Gauge(rng.random())));
            }
        }
        prefixes.push(Oid::from_slice(&[&MIB_BASE[..], &[*t]].concat()));
        prefixes.push(Oid::from_slice(&[&MIB_BASE[..], &[*t, 1]].concat()));
    }
    for s in 0..rng.random_range(0..4u32) {
        let arcs = [&MIB_BASE[..], &[100 + s]].concat();
        vars.push(VariableDef {
            oid: Oid::from_slice(&arcs),
            name: format!("s{s}"),
            syntax: Syntax::Integer,
            access: Access::ReadWrite,
            is_table_column: false,
            description: String::new(),
        });
        instances.push((Oid::from_slice(&[&arcs[..], &[0]].concat()), MibValue::Integer(rng.random())));
    }
    let mut mib = VirtualMib::new(rng.random());
    mib.add_schema(MibSchema { name: "random".into(), variables: vars, notifications: Vec::new() }).expect("schema");
    for (oid, value) in instances {
        mib.insert(oid, value).expect("insert");
    }
    (mib, prefixes)
}

/// Rows as collected by repeated get-next from the prefix.
fn walk(mib: &VirtualMib, table: &Oid) -> BTreeSet<(u32, Oid, MibValue)> {
    let mut out = BTreeSet::new();
    let mut cur = table.clone();
    while let Ok((next, value)) = mib.get_next(&cur) {
        if !table.is_prefix_of(&next) {
            break;
        }
        out.insert((next.last_arc(), next.clone(), value));
        cur = next;
    }
    out
}

fn flatten(rows: Vec<TableRow>) -> BTreeSet<(u32, Oid, MibValue)> {
    rows.into_iter().flat_map(|r| r.columns.into_iter().map(move |(o, v)| (r.index, o, v))).collect()
}

fn table_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7ab1e);
    let mut mismatches = 0;
    let mut checked = 0;
    for _ in 0..100 {
        let (mib, prefixes) = random_mib(&mut rng);
        for p in prefixes {
            checked += 1;
            if mib.get_table(&p).map(flatten).ok() != Some(walk(&mib, &p)) {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("100 MIBs, {checked} tables, {mismatches} mismatches"))
}

fn random_oid(rng: &mut ChaCha8Rng) -> Oid {
    let mut arcs = vec![1, 3, 6, 1, rng.random_range(2..5)];
    for _ in 0..rng.random_range(1..7) {
        arcs.push(rng.random_range(0..300));
    }
    Oid::from_slice(&arcs)
}

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| rng.random_range(b' '..=b'~') as char).collect()
}

fn random_value(rng: &mut ChaCha8Rng) -> MibValue {
    match rng.random_range(0..6) {
        0 => MibValue::Integer(rng.random()),
        1 => MibValue::Counter32(rng.random()),
        2 => MibValue::Gauge(rng.random_range(0..1000)),
        3 => MibValue::TimeTicks(rng.random()),
        4 => MibValue::OctetString(random_text(rng, 24).into_bytes()),
        _ => MibValue::Oid(random_oid(rng)),
    }
}

fn random_bindings(rng: &mut ChaCha8Rng, errors: bool) -> Vec<VarBind> {
    (0..rng.random_range(0..40))
        .map(|_| {
            let oid = random_oid(rng);
            if errors && rng.random_bool(0.1) {
                VarBind { oid, value: BindValue::Error(ErrorCode::ALL[rng.random_range(0..ErrorCode::ALL.len())]) }
            } else {
                VarBind::new(oid, random_value(rng))
            }
        })
        .collect()
}

fn random_subscription(rng: &mut ChaCha8Rng) -> Subscription {
    let transports = [Transport::Stream, Transport::Datagram, Transport::HttpPush];
    let mut sub = Subscription::new(&format!("sub-{}", rng.random::<u16>()), Endpoint::new("10.0.0.1", rng.random(), transports[rng.random_range(0..3)]));
    for _ in 0..rng.random_range(0..20) {
        sub = sub.select(random_oid(rng), rng.random_range(100..100_000));
    }
    for n in ["linkDown", "linkUp", "coldStart"] {
        if rng.random_bool(0.3) {
            sub = sub.filter(n);
        }
    }
    sub.durable = rng.random();
    sub.created_at = rng.random_range(0..1 << 50);
    sub
}

fn random_message(rng: &mut ChaCha8Rng) -> ManagementMessage {
    let id = rng.random_range(0..1 << 40);
    let ts = rng.random_range(0..1 << 45);
    match rng.random_range(0..11) {
        0 => ManagementMessage::get_request(id, (0..rng.random_range(0..30)).map(|_| random_oid(rng)).collect(), ts),
        1 => ManagementMessage::get_table_request(id, vec![random_oid(rng)], ts),
        2 => ManagementMessage::set_request(id, random_bindings(rng, false), ts),
        3 => {
            let status = if rng.random_bool(0.8) { Status::Ok } else { Status::error(ErrorCode::NotFound, random_text(rng, 30)) };
            let body = match rng.random_range(0..3) {
                0 => Body::Bindings(random_bindings(rng, true)),
                1 => Body::Rows(
                    (0..rng.random_range(0..12))
                        .map(|i| TableRow {
                            index: i + 1,
                            columns: (1..rng.random_range(1..6)).map(|c| (Oid::from_slice(&[1, 3, 6, 1, 2, 1, 2, 2, 1, c, i + 1]), random_value(rng))).collect(),
                        })
                        .collect(),
                ),
                _ => Body::Empty,
            };
            ManagementMessage::response(id, status, body, ts)
        }
        4 | 5 => ManagementMessage::push_report(&format!("sub-{}", rng.random::<u8>()), id, &format!("agent-{}", rng.random::<u8>()), random_bindings(rng, true), ts),
        6 => ManagementMessage::notification("sub", id, "agent-1", "linkDown", random_bindings(rng, false), ts),
        7 => ManagementMessage::sync_probe(id, ts),
        8 => ManagementMessage::sync_reply(id, ts, ts + rng.random_range(0..100), ts + rng.random_range(100..200)),
        9 => ManagementMessage::subscribe_request(id, random_subscription(rng), ts),
        _ => ManagementMessage::subscribe_ack(id, &format!("sub-{}", rng.random::<u16>()), Status::Ok, ts),
    }
}

fn body_len(encoded: &[u8]) -> usize {
    let end = encoded.windows(4).position(|w| w == b"\r\n\r\n").expect("header end") + 4;
    encoded.len() - end
}

fn codec_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0dec);
    let mut failures = 0;
    let mut large = 0;
    let mut smaller = 0;
    for _ in 0..10_000 {
        let msg = random_message(&mut rng);
        let id = encode_message(&msg, EncodingMode::Identity).expect("encode");
        let de = encode_message(&msg, EncodingMode::Deflate).expect("encode");
        for bytes in [&id, &de] {
            if decode_message(bytes).as_ref() != Ok(&msg) {
                failures += 1;
            }
        }
        if body_len(&id) >= 256 {
            large += 1;
            if body_len(&de) < body_len(&id) {
                smaller += 1;
            }
        }
    }
    let share = if large == 0 { 0.0 } else { smaller as f64 / large as f64 };
    outcome(
        failures == 0 && large > 0 && share >= 0.95,
        format!("20000 roundtrips, {failures} failures; deflate smaller in {smaller}/{large} bodies >= 256 B ({:.1}%)", share * 100.0),
    )
}

fn reboot_recovery() -> Outcome {
    let durable = run_scenario(&scenario(
        "agents=3\nvariables=3\ntransport=datagram\nstorage=durable\nduration_ms=30000\nkill agent-1 10000\nrestore agent-1 15000\n",
    ));
    let volatile = run_scenario(&scenario(
        "agents=3\nvariables=3\ntransport=datagram\nstorage=volatile\nduration_ms=30000\nkill agent-1 10000\nrestore agent-1 15000\n",
    ));
    let d = &durable.metrics.reboots[0];
    let v = &volatile.metrics.reboots[0];
    let same = |out: &mf::simnet::SimOutcome| {
        let want: BTreeMap<String, Subscription> =
            out.repository.iter().filter(|r| r.agent == "agent-1").map(|r| (r.subscription.id.clone(), r.subscription.clone())).collect();
        let have: BTreeMap<String, Subscription> = out.agent_subscriptions[0].iter().map(|s| (s.id.clone(), s.clone())).collect();
        !want.is_empty() && want == have
    };
    let d_ok = d.manager_messages_after_restore == 0 && same(&durable);
    let v_ok = v.converged_after_ms.is_some_and(|c| c <= 2 * v.round_trip_ms) && same(&volatile);
    outcome(
        d_ok && v_ok,
        format!(
            "durable: {} manager messages, set equal {}; volatile: converged after {:?} ms (round trip {} ms), set equal {}",
            d.manager_messages_after_restore,
            same(&durable),
            v.converged_after_ms,
            v.round_trip_ms,
            same(&volatile)
        ),
    )
}

fn hot_standby() -> Outcome {
    let m = run_scenario(&scenario("agents=5\nvariables=3\nmanagers=2\nduration_ms=60000\nkill manager-1 30000\n")).metrics;
    match m.hot_standby {
        Some(hs) => outcome(
            hs.pre_kill_identical && hs.standby_availability >= 0.99,
            format!("pre-kill streams identical {}, standby availability {:.4}", hs.pre_kill_identical, hs.standby_availability),
        ),
        None => outcome(false, "no standby metrics".into()),
    }
}

fn clock_sync() -> Outcome {
    let text = "agents=4\nvariables=2\nskew_ms=250\nlatency_down_ms=7\nlatency_up_ms=7\nsync_interval_ms=5000\nduration_ms=60000\n";
    let m = run_scenario(&scenario(text)).metrics;
    let mut worst = 0i64;
    let mut missing = 0;
    for c in m.clocks.values() {
        for est in c.estimated_offset_ms.values() {
            match est {
                Some(e) => worst = worst.max((e - c.true_offset_ms).abs()),
                None => missing += 1,
            }
        }
    }
    let per = m.sync.max_messages_per_agent_per_interval;
    outcome(
        worst <= 1 && missing == 0 && per <= 2,
        format!("max |error| {worst} ms, {missing} agents without estimate, {per} sync messages per agent per interval"),
    )
}

fn datagram_loss() -> Outcome {
    let text = "agents=20\nvariables=2\nperiod_ms=100\ntransport=datagram\nloss=0.2\nduration_ms=60000\n";
    let m = run_scenario(&scenario(text)).metrics;
    let n = m.loss.datagrams_sent as f64;
    let lost = m.managers["manager-1"].collector.lost as f64;
    let sigma = (n * 0.2 * 0.8).sqrt();
    let z = (lost - 0.2 * n) / sigma;
    let avail = m.managers["manager-1"].availability.ratio;
    let diff = (avail - (1.0 - m.loss.realized)).abs();
    outcome(
        n >= 10_000.0 && z.abs() <= 3.0 && diff < 1e-12,
        format!(
            "{n} reports, collector lost {lost} (z = {z:.2}); availability {avail:.6} vs 1 - realized {:.6}",
            1.0 - m.loss.realized
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("det.scenario");
    std::fs::write(&path, "agents=8\nvariables=3\ntransport=datagram\nloss=0.1\nskew_ms=30\nmanagers=2\nduration_ms=30000\nseed=99\nkill manager-1 20000\n")
        .expect("write scenario");
    let mut docs = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        let ok = Command::new(env!("CARGO_BIN_EXE_mf"))
            .env("RUST_LOG", "warn")
            .args(["simulate", "--scenario"])
            .arg(&path)
            .arg("--out")
            .arg(&out)
            .status()
            .is_ok_and(|s| s.success());
        if !ok {
            return outcome(false, "simulate failed".into());
        }
        docs.push(std::fs::read(&out).unwrap_or_default());
    }
    outcome(!docs[0].is_empty() && docs[0] == docs[1], format!("two runs, {} and {} bytes, identical {}", docs[0].len(), docs[1].len(), docs[0] == docs[1]))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("push-bandwidth", push_bandwidth),
        ("push-steady-state", push_steady_invariant),
        ("heartbeat-jitter", heartbeat_jitter),
        ("connection-economy", connection_economy),
        ("table-retrieval", table_equivalence),
        ("codec", codec_roundtrip),
        ("reboot-recovery", reboot_recovery),
        ("hot-standby", hot_standby),
        ("clock-sync", clock_sync),
        ("datagram-loss", datagram_loss),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
