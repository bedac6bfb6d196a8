//! Runs a scenario over loopback with real daemons, threads and sockets.
//! Time is wall-clock and the result is not reproducible; the metrics
//! document has the same shape as the simulator's, with the traffic,
//! collector, clock and loss sections filled from the network tap.

use std::collections::BTreeMap;
use std::io;
use std::thread;
use std::time::{Duration, Instant};

use mf_core::agent::StorageMode;
use mf_core::manager::{generate_report, PollingDefinition, ReportSpec, SubscriptionRecord};
use mf_core::subscription::{Endpoint, Subscription};

use crate::agentd::{self, start_agent, AgentConfig, AgentError, AgentHandle};
use crate::http::{self, Request, JSON};
use crate::managerd::{start_manager, ManagerConfig, ManagerError, ManagerHandle};
use crate::repository::{Filter, Record, StoreName, TopologyNode};
use crate::simnet::meter::{Direction, TrafficClass};
use crate::simnet::metrics::*;
use crate::simnet::scenario::{FaultAction, Model, Role, Scenario};
use crate::simnet::variables::{variable_oids, SIM_INTERFACES};
use crate::tap::NetTap;

#[derive(Debug, thiserror::Error)]
pub enum RealNetError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Manager(#[from] ManagerError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("setting up {what}: {message}")]
    Setup { what: String, message: String },
}

fn agent_name(i: usize) -> String {
    format!("agent-{}", i + 1)
}

fn manager_name(m: usize) -> String {
    format!("manager-{}", m + 1)
}

struct Fleet {
    agent_cfgs: Vec<AgentConfig>,
    agents: Vec<Option<AgentHandle>>,
    manager_cfgs: Vec<ManagerConfig>,
    managers: Vec<Option<ManagerHandle>>,
}

impl Fleet {
    fn register_agents(&self, m: usize) {
        let Some(h) = &self.managers[m] else { return };
        for cfg in &self.agent_cfgs {
            let node = TopologyNode {
                device: cfg.device_id.clone(),
                host: cfg.bind.to_string(),
                port: cfg.listen_port,
                x: 0,
                y: 0,
                links: Vec::new(),
            };
            h.inspect(|core, repo| {
                let _ = repo.put(StoreName::Topology, Record::Topology(node.clone()));
                core.add_device(&node.device, agentd::wall_clock_ms());
            });
        }
    }
}

fn api_post(h: &ManagerHandle, path: &str, body: &impl serde::Serialize) -> Result<Vec<u8>, RealNetError> {
    let req = Request::new("POST", path).with_body(JSON, serde_json::to_vec(body).expect("json"));
    let resp = http::call(h.addr, &req, Duration::from_secs(5))?;
    if !(200..300).contains(&resp.status) {
        return Err(RealNetError::Setup { what: path.into(), message: String::from_utf8_lossy(&resp.body).into_owned() });
    }
    Ok(resp.body)
}

pub fn run_real_net(s: &Scenario) -> Result<Metrics, RealNetError> {
    let dir = tempfile::tempdir()?;
    let tap = NetTap::recording(s.loss, s.seed);
    let mut fleet = Fleet { agent_cfgs: Vec::new(), agents: Vec::new(), manager_cfgs: Vec::new(), managers: Vec::new() };
    for m in 0..s.managers {
        let mut cfg = ManagerConfig::new(&manager_name(m), dir.path().join(manager_name(m)));
        cfg.sync_interval_ms = s.sync_interval_ms;
        cfg.keepalive_ms = s.keepalive_ms;
        cfg.reconnect_ms = s.reconnect_ms;
        let h = start_manager(cfg.clone(), tap.clone())?;
        cfg.listen_port = h.addr.port();
        fleet.manager_cfgs.push(cfg);
        fleet.managers.push(Some(h));
    }
    let resend = fleet.managers[0].as_ref().map(|h| h.addr.to_string());
    for i in 0..s.agents {
        let mut cfg = AgentConfig {
            device_id: agent_name(i),
            storage_mode: s.storage,
            storage_path: (s.storage == StorageMode::Durable).then(|| dir.path().join(agent_name(i))),
            manager_resend_endpoint: resend.clone(),
            if_count: SIM_INTERFACES,
            seed: s.seed,
            keepalive_ms: s.keepalive_ms,
            clock_skew_ms: s.agent_skew(i),
            ..AgentConfig::default()
        };
        let h = start_agent(cfg.clone(), tap.clone())?;
        cfg.listen_port = h.http_addr.port();
        fleet.agent_cfgs.push(cfg);
        fleet.agents.push(Some(h));
    }
    for m in 0..s.managers {
        fleet.register_agents(m);
    }

    let oids = variable_oids(s.variables);
    let mut created_at: BTreeMap<String, u64> = BTreeMap::new();
    match s.model {
        Model::Pull => {
            for (m, h) in fleet.managers.iter().enumerate() {
                let Some(h) = h else { continue };
                for (i, cfg) in fleet.agent_cfgs.iter().enumerate() {
                    let def = PollingDefinition {
                        id: format!("poll-{}-{}", manager_name(m), agent_name(i)),
                        agent: agent_name(i),
                        host: cfg.bind.to_string(),
                        port: cfg.listen_port,
                        oids: oids.clone(),
                        table_oids: Vec::new(),
                        period_ms: s.period_ms,
                    };
                    api_post(h, "/api/polls", &def)?;
                }
            }
        }
        Model::Push => {
            let endpoints: Vec<Endpoint> = fleet.managers.iter().flatten().map(|h| h.endpoint(s.transport)).collect();
            for i in 0..s.agents {
                let mut sub = Subscription {
                    id: format!("sub-{}", agent_name(i)),
                    endpoints: endpoints.clone(),
                    selections: Vec::new(),
                    notification_filter: Default::default(),
                    durable: true,
                    created_at: 0,
                };
                for oid in &oids {
                    sub = sub.select(oid.clone(), s.period_ms);
                }
                let record = SubscriptionRecord { agent: agent_name(i), subscription: sub };
                let Some(primary) = &fleet.managers[0] else { continue };
                let body = api_post(primary, "/api/subscriptions", &record)?;
                let installed: SubscriptionRecord = serde_json::from_slice(&body)
                    .map_err(|e| RealNetError::Setup { what: "subscription".into(), message: e.to_string() })?;
                created_at.insert(installed.agent.clone(), installed.subscription.created_at);
                for h in fleet.managers.iter().skip(1).flatten() {
                    api_post(h, "/api/subscriptions?install=false", &installed)?;
                }
            }
        }
    }
    if s.model == Model::Push && s.transport == mf_core::subscription::Transport::Stream {
        // stream attaches are part of the subscription phase
        let deadline = Instant::now() + Duration::from_secs(5);
        while Instant::now() < deadline && fleet.managers.iter().flatten().any(|h| h.attached_streams() < s.agents) {
            thread::sleep(Duration::from_millis(10));
        }
    }
    let steady_start = tap.elapsed_ms();
    let started = Instant::now();
    let wall_start = agentd::wall_clock_ms() - steady_start;

    let mut faults = s.faults.clone();
    faults.sort_by_key(|f| f.at_ms);
    let mut reboots = Vec::new();
    for f in &faults {
        let at = Duration::from_millis(f.at_ms);
        if at >= Duration::from_millis(s.duration_ms) {
            break;
        }
        if let Some(wait) = at.checked_sub(started.elapsed()) {
            thread::sleep(wait);
        }
        let Some((role, idx)) = s.node_index(&f.who) else { continue };
        match (role, f.action) {
            (Role::Agent, FaultAction::Kill) => {
                if let Some(h) = fleet.agents[idx].take() {
                    h.stop();
                }
            }
            (Role::Agent, FaultAction::Restore) => {
                if fleet.agents[idx].is_none() {
                    let before = fleet.managers[0]
                        .as_ref()
                        .map(|h| h.inspect(|_, repo| repo.subscriptions().iter().filter(|r| r.agent == agent_name(idx)).count()))
                        .unwrap_or(0);
                    let h = start_agent(fleet.agent_cfgs[idx].clone(), tap.clone())?;
                    fleet.agents[idx] = Some(h);
                    reboots.push((idx, f.at_ms, before));
                }
            }
            (Role::Manager, FaultAction::Kill) => {
                if let Some(h) = fleet.managers[idx].take() {
                    h.stop();
                }
            }
            (Role::Manager, FaultAction::Restore) => {
                if fleet.managers[idx].is_none() {
                    fleet.managers[idx] = Some(start_manager(fleet.manager_cfgs[idx].clone(), tap.clone())?);
                }
            }
        }
    }
    if let Some(rest) = Duration::from_millis(s.duration_ms).checked_sub(started.elapsed()) {
        thread::sleep(rest);
    }
    let wall_end = agentd::wall_clock_ms();
    let end_ms = tap.elapsed_ms();

    let reboot_metrics: Vec<RebootMetrics> = reboots
        .iter()
        .map(|&(idx, at, before)| {
            let live = fleet.agents[idx].as_ref().map(|h| h.subscriptions()).unwrap_or_default();
            let repo: Vec<Subscription> = fleet.managers[0]
                .as_ref()
                .map(|h| h.inspect(|_, r| r.subscriptions()))
                .unwrap_or_default()
                .into_iter()
                .filter(|r| r.agent == agent_name(idx))
                .map(|r| r.subscription)
                .collect();
            let ids = |v: &[Subscription]| v.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
            RebootMetrics {
                agent: agent_name(idx),
                killed_at_ms: faults
                    .iter()
                    .filter(|f| f.action == FaultAction::Kill && f.who == agent_name(idx) && f.at_ms <= at)
                    .map(|f| f.at_ms)
                    .max(),
                restored_at_ms: at,
                storage: match s.storage {
                    StorageMode::Durable => "durable".into(),
                    StorageMode::Volatile => "volatile".into(),
                },
                subscriptions_before: before,
                converged_after_ms: None,
                round_trip_ms: 0,
                manager_messages_after_restore: 0,
                subscriptions_match_repository: ids(&live) == ids(&repo),
            }
        })
        .collect();

    let mut managers = BTreeMap::new();
    let mut clocks: BTreeMap<String, ClockMetrics> = (0..s.agents)
        .map(|i| (agent_name(i), ClockMetrics { true_offset_ms: s.agent_skew(i), estimated_offset_ms: BTreeMap::new() }))
        .collect();
    for (m, h) in fleet.managers.iter().enumerate() {
        let Some(h) = h else {
            managers.insert(manager_name(m), ManagerMetrics {
                alive_at_end: false,
                collector: Default::default(),
                samples_stored: 0,
                pulled_samples_stored: 0,
                notifications_stored: 0,
                availability: Availability::default(),
                poll: PollMetrics::default(),
                events_raised: 0,
            });
            continue;
        };
        let stats = h.stats();
        let samples = h.inspect(|core, repo| {
            core.collector.flush(repo);
            repo.samples(&Filter::all())
        });
        let notifications = h.inspect(|_, repo| repo.len(StoreName::PushedNotifications) as u64);
        let (mut received, mut expected) = (0, 0);
        for i in 0..s.agents {
            let device = agent_name(i);
            let first = match s.model {
                Model::Push => match created_at.get(&device) {
                    Some(c) => c + s.period_ms,
                    None => continue,
                },
                Model::Pull => wall_start + steady_start,
            };
            let count = wall_end.saturating_sub(first) / s.period_ms;
            if count == 0 {
                continue;
            }
            let from = first - s.period_ms / 2;
            let spec =
                ReportSpec { devices: vec![device], oids: oids.clone(), from, to: from + count * s.period_ms, resolution_ms: s.period_ms };
            for series in generate_report(&spec, &samples).series {
                received += series.received;
                expected += series.expected;
            }
        }
        for (agent, off) in &stats.offsets {
            if let Some(c) = clocks.get_mut(agent) {
                c.estimated_offset_ms.insert(manager_name(m), *off);
            }
        }
        managers.insert(manager_name(m), ManagerMetrics {
            alive_at_end: true,
            collector: stats.collector,
            samples_stored: samples.iter().filter(|x| !x.pulled).count() as u64,
            pulled_samples_stored: samples.iter().filter(|x| x.pulled).count() as u64,
            notifications_stored: notifications,
            availability: Availability {
                received_slots: received,
                expected_slots: expected,
                ratio: if expected == 0 { 0.0 } else { received as f64 / expected as f64 },
            },
            poll: PollMetrics {
                cycles_completed: stats.poll.cycles_completed,
                cycles_failed: stats.poll.cycles_failed,
                order_violations: stats.poll.order_violations,
            },
            events_raised: stats.events as u64,
        });
    }

    for h in fleet.agents.drain(..).flatten() {
        h.stop();
    }
    for h in fleet.managers.drain(..).flatten() {
        h.stop();
    }

    let meter = tap.meter().expect("recording tap");
    let seconds = end_ms.div_ceil(1000) as usize;
    let mut totals = Totals::default();
    for ((from, _), l) in meter.links() {
        let d = if from.starts_with("manager-") { &mut totals.manager_to_agent } else { &mut totals.agent_to_manager };
        d.bytes += l.bytes;
        d.messages += l.messages;
        d.sync_bytes += l.sync_bytes;
        d.sync_messages += l.sync_messages;
        d.connections += l.connections;
        d.sync_connections += l.sync_connections;
    }
    let mut steady = SteadyState { start_ms: steady_start, ..Default::default() };
    let mut probes = 0;
    let mut replies = 0;
    let mut per_interval: BTreeMap<(String, String, u64), u64> = BTreeMap::new();
    for t in meter.transmissions() {
        if t.class == TrafficClass::Sync {
            let (m, a) = if t.direction == Direction::ManagerToAgent { (&t.from, &t.to) } else { (&t.to, &t.from) };
            *per_interval.entry((m.clone(), a.clone(), t.time / s.sync_interval_ms)).or_default() += 1;
            match t.direction {
                Direction::ManagerToAgent => probes += 1,
                Direction::AgentToManager => replies += 1,
            }
        }
        if t.time <= steady_start {
            continue;
        }
        match t.direction {
            Direction::ManagerToAgent => {
                steady.manager_to_agent_messages += 1;
                if t.class == TrafficClass::Sync {
                    steady.manager_to_agent_sync_messages += 1;
                } else {
                    steady.manager_to_agent_bytes_excluding_sync += t.bytes;
                }
            }
            Direction::AgentToManager => steady.agent_to_manager_bytes += t.bytes,
        }
    }
    let datagrams = tap.datagrams();
    let all = |d| meter.per_second(d, true, seconds);
    let data = |d| meter.per_second(d, false, seconds);
    let (ad, au, dd, du) = (all(Direction::ManagerToAgent), all(Direction::AgentToManager), data(Direction::ManagerToAgent), data(Direction::AgentToManager));
    Ok(Metrics {
        scenario: s.clone(),
        end_ms,
        totals,
        steady_state: steady,
        series: ByteSeries {
            sync_bytes_per_s: (0..seconds).map(|i| ad[i] - dd[i] + au[i] - du[i]).collect(),
            manager_to_agent_bytes_per_s: dd,
            agent_to_manager_bytes_per_s: du,
        },
        links: meter.links().iter().map(|((f, t), l)| (format!("{f}->{t}"), l.clone())).collect(),
        conservation: meter.conserved(),
        operations: BTreeMap::new(),
        managers,
        clocks,
        sync: SyncMetrics {
            interval_ms: s.sync_interval_ms,
            probes,
            replies,
            max_messages_per_agent_per_interval: per_interval.values().copied().max().unwrap_or(0),
        },
        loss: LossMetrics {
            configured: s.loss,
            datagrams_sent: datagrams.0,
            datagrams_dropped: datagrams.1,
            realized: if datagrams.0 == 0 { 0.0 } else { datagrams.1 as f64 / datagrams.0 as f64 },
        },
        reboots: reboot_metrics,
        hot_standby: None,
        events: Vec::new(),
    })
}
