use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Duration;

use clap::{Parser, Subcommand};
use mf_core::manager::{generate_report, ReportSpec, SubscriptionRecord};
use mf_core::subscription::{Endpoint, Subscription, Transport};
use mf_core::wire::{BindValue, ManagementMessage, Status};
use mf_core::Oid;

use mf::agentd::{self, start_agent, AgentConfig};
use mf::http::{self, Request, JSON};
use mf::managerd::{start_manager, ManagerConfig};
use mf::repository::{dump_line, Filter, Repository, StoreName};
use mf::simnet::scenario::Scenario;
use mf::simnet::run_scenario;
use mf::tap::NetTap;

const TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Parser)]
#[command(name = "mf", version, about = "Push-model network management: agent, manager and tools")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the agent daemon.
    Agent {
        #[command(subcommand)]
        action: RunAction,
    },
    /// Run the manager daemon.
    Manager {
        #[command(subcommand)]
        action: RunAction,
    },
    /// Install a push subscription.
    Subscribe {
        /// Agent `host:port`, or the agent's device id when `--manager` is given.
        #[arg(long)]
        agent: String,
        #[arg(long, required = true)]
        oid: Vec<String>,
        #[arg(long)]
        period: u64,
        /// Manager endpoint the agent delivers to, `host:port`. Repeat for fan-out.
        #[arg(long, required = true)]
        endpoint: Vec<String>,
        #[arg(long, default_value = "stream")]
        transport: String,
        /// Go through this manager's API instead of talking to the agent.
        #[arg(long)]
        manager: Option<String>,
        #[arg(long)]
        id: Option<String>,
    },
    /// Read one variable from an agent.
    Poll {
        #[arg(long)]
        agent: String,
        #[arg(long)]
        oid: String,
    },
    /// Availability and value summary over stored samples.
    Report {
        #[arg(long)]
        from: u64,
        #[arg(long)]
        to: u64,
        #[arg(long)]
        device: Vec<String>,
        #[arg(long)]
        oid: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        resolution: u64,
        #[arg(long, conflicts_with = "manager")]
        repo: Option<PathBuf>,
        #[arg(long)]
        manager: Option<String>,
    },
    /// Run a scenario and write its metrics document.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run the daemons over loopback in real time instead.
        #[arg(long)]
        real_net: bool,
    },
    /// Print every record of a repository store, one per line.
    Dump {
        #[arg(long)]
        store: String,
        #[arg(long, default_value = "repo")]
        repo: PathBuf,
    },
}

#[derive(Subcommand)]
enum RunAction {
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mf: {e}");
            ExitCode::FAILURE
        }
    }
}

type BoxError = Box<dyn std::error::Error>;

fn parse_oids(oids: &[String]) -> Result<Vec<Oid>, BoxError> {
    oids.iter().map(|o| Oid::parse(o).map_err(|e| format!("oid `{o}`: {e}").into())).collect()
}

fn check_ack(ack: &ManagementMessage) -> Result<(), BoxError> {
    match &ack.status {
        Some(Status::Ok) => Ok(()),
        Some(Status::Error { code, reason }) => Err(format!("{code}: {reason}").into()),
        None => Err("reply carries no status".into()),
    }
}

fn run(cmd: Cmd) -> Result<(), BoxError> {
    match cmd {
        Cmd::Agent { action: RunAction::Run { config } } => {
            let h = start_agent(AgentConfig::load(&config)?, NetTap::disabled())?;
            println!("agent {} on {} (stream {})", h.device_id(), h.http_addr, h.stream_addr);
            h.wait();
        }
        Cmd::Manager { action: RunAction::Run { config } } => {
            let h = start_manager(ManagerConfig::load(&config)?, NetTap::disabled())?;
            println!("manager {} on {}", h.name(), h.addr);
            h.wait();
        }
        Cmd::Subscribe { agent, oid, period, endpoint, transport, manager, id } => {
            let transport = Transport::from_str(&transport).map_err(|_| format!("unknown transport `{transport}`"))?;
            let endpoints = endpoint
                .iter()
                .map(|e| mf::config::parse_host_port(e).map(|(h, p)| Endpoint::new(&h, p, transport)))
                .collect::<Result<Vec<_>, _>>()?;
            let mut sub = Subscription {
                id: id.unwrap_or_default(),
                endpoints,
                selections: Vec::new(),
                notification_filter: Default::default(),
                durable: true,
                created_at: 0,
            };
            for o in parse_oids(&oid)? {
                sub = sub.select(o, period);
            }
            match manager {
                Some(m) => {
                    let record = SubscriptionRecord { agent, subscription: sub };
                    let req = Request::new("POST", "/api/subscriptions").with_body(JSON, serde_json::to_vec(&record)?);
                    let resp = http::call(http::resolve(&m)?, &req, TIMEOUT)?;
                    let body = String::from_utf8_lossy(&resp.body);
                    if resp.status != 201 {
                        return Err(format!("manager answered {}: {body}", resp.status).into());
                    }
                    println!("{body}");
                }
                None => {
                    if sub.id.is_empty() {
                        sub.id = format!("cli-{}", agentd::wall_clock_ms());
                    }
                    sub.created_at = agentd::wall_clock_ms();
                    let id = sub.id.clone();
                    let msg = ManagementMessage::subscribe_request(1, sub, agentd::wall_clock_ms());
                    let req = Request::new("POST", "/mgmt/subscriptions").with_message(&msg);
                    let ack = http::call(http::resolve(&agent)?, &req, TIMEOUT)?.decode_message()?;
                    check_ack(&ack)?;
                    println!("subscribed {id}");
                }
            }
        }
        Cmd::Poll { agent, oid } => {
            let oid = Oid::parse(&oid).map_err(|e| format!("oid `{oid}`: {e}"))?;
            let req = Request::new("GET", &format!("/mgmt/mib/{oid}"));
            let reply = http::call(http::resolve(&agent)?, &req, TIMEOUT)?.decode_message()?;
            check_ack(&reply)?;
            for b in reply.body.bindings() {
                match &b.value {
                    BindValue::Value(v) => println!("{} = {v}", b.oid),
                    BindValue::Error(code) => println!("{} ! {code}", b.oid),
                }
            }
        }
        Cmd::Report { from, to, device, oid, resolution, repo, manager } => {
            if resolution == 0 {
                return Err("resolution must be positive".into());
            }
            let text = match manager {
                Some(m) => {
                    let mut q = format!("from={from}&to={to}&resolution={resolution}");
                    for d in &device {
                        q.push_str(&format!("&device={}", mf_core::pct::encode_str(d)));
                    }
                    for o in &oid {
                        q.push_str(&format!("&oid={o}"));
                    }
                    let resp = http::call(http::resolve(&m)?, &Request::new("GET", &format!("/api/report?{q}")), TIMEOUT)?;
                    if resp.status != 200 {
                        return Err(format!("manager answered {}: {}", resp.status, String::from_utf8_lossy(&resp.body)).into());
                    }
                    String::from_utf8(resp.body)?
                }
                None => {
                    let repo = Repository::open(repo.unwrap_or_else(|| PathBuf::from("repo")))?;
                    let spec = ReportSpec { devices: device, oids: parse_oids(&oid)?, from, to, resolution_ms: resolution };
                    let samples = repo.samples(&Filter { from: Some(from), to: Some(to), ..Filter::default() });
                    serde_json::to_string_pretty(&generate_report(&spec, &samples))?
                }
            };
            println!("{text}");
        }
        Cmd::Simulate { scenario, out, real_net } => {
            let s = Scenario::load(&scenario)?;
            let metrics = if real_net { mf::realnet::run_real_net(&s)? } else { run_scenario(&s).metrics };
            std::fs::write(&out, metrics.to_json())?;
        }
        Cmd::Dump { store, repo } => {
            let store = StoreName::from_str(&store)?;
            let repo = Repository::open(&repo)?;
            for r in repo.list(store, &Filter::all())? {
                println!("{}", dump_line(&r));
            }
        }
    }
    Ok(())
}
