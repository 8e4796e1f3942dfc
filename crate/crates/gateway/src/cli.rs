//! The `imo` command line.
//!
//! Exit status is 0 on success, 1 when the operation fails (the error
//! document goes to stderr) and 2 on a usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use imo_core::canonical::to_canonical_string;
use imo_core::digest::Digest;
use imo_core::ledger::verify_log;
use imo_core::pathfinder::{PlannerWeights, Restrictions};
use imo_core::registry::{EnvironmentSpec, ModelManifest, ModelRef};
use imo_core::sim::SimConfig;
use imo_core::workflow::TaskSpec;

use crate::client::Client;
use crate::config::ServeConfig;
use crate::envelope::{ErrorCode, ErrorEnvelope};

#[derive(Debug, Parser)]
#[command(name = "imo", version, about = "Publish, plan and settle models on an imo gateway")]
struct Cli {
    #[arg(long, global = true, env = "IMO_SERVER", default_value = "http://127.0.0.1:7070")]
    server: String,
    #[arg(long, global = true, env = "IMO_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Output::Table)]
    output: Output,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    /// Human-readable lines.
    Table,
    /// One key-sorted JSON document.
    Doc,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Upload a model directory and publish it as a new version.
    Push { dir: PathBuf },
    /// Download a model into a directory that `push` accepts.
    Pull {
        /// `name` or `name@version`.
        model: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search published models.
    Search {
        query: Vec<String>,
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// List the versions of a model.
    Versions { name: String },
    /// Republish an earlier version as the newest one.
    Rollback { name: String, target: u32 },
    /// Run the gateway.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        bind: Option<SocketAddr>,
    },
    /// Turn a plain-language request into a task.
    Interpret {
        #[arg(required = true)]
        text: Vec<String>,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        deadline_ms: Option<u64>,
    },
    /// Plan a task file.
    Plan {
        task: PathBuf,
        /// Restrict a subtask to one model: `subtask=name@version`.
        #[arg(long, value_parser = parse_binding)]
        pin: Vec<(String, ModelRef)>,
        /// Forbid a model for a subtask: `subtask=name@version`.
        #[arg(long, value_parser = parse_binding)]
        exclude: Vec<(String, ModelRef)>,
        #[arg(long)]
        submitter: Option<String>,
        #[arg(long)]
        beam_width: Option<usize>,
    },
    /// Execute a plan and score the run.
    Exec {
        /// A plan, or the response of `plan --output doc`.
        plan: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[arg(long, default_value = "")]
        input: String,
        /// Also rerun with this subtask's model forced to fail.
        #[arg(long)]
        probe: Option<String>,
    },
    /// Run a compute simulation.
    Sim {
        config: PathBuf,
        /// Record each provider's GPU-seconds on the ledger.
        #[arg(long)]
        post: bool,
    },
    #[command(subcommand)]
    Ledger(LedgerCommand),
}

#[derive(Debug, Subcommand)]
enum LedgerCommand {
    /// Check a ledger log file's hash chain locally.
    Verify { log: PathBuf },
    Balance { account: String },
    Open { account: String },
    /// Record a designer's revenue share for a model.
    Agree {
        #[arg(long)]
        model: String,
        #[arg(long)]
        designer: String,
        /// A fraction such as `1/3`.
        #[arg(long, value_parser = parse_share)]
        share: (u64, u64),
        #[arg(long)]
        effective_from: Option<u64>,
    },
    Contribute {
        provider: String,
        gpu_seconds: u64,
        #[arg(long, default_value = "manual")]
        source: String,
    },
    /// Distribute revenue earned by a model.
    Revenue {
        #[arg(long)]
        model: String,
        #[arg(long, allow_negative_numbers = true)]
        amount: i64,
        #[arg(long)]
        as_of: Option<u64>,
        /// Contribution record range `from..to`.
        #[arg(long, value_parser = parse_window)]
        window: Option<(u64, u64)>,
    },
    Records {
        #[arg(long, default_value_t = 0)]
        from: u64,
    },
}

fn parse_binding(s: &str) -> Result<(String, ModelRef), String> {
    let (sub, model) = s.split_once('=').ok_or("expected subtask=name@version")?;
    Ok((sub.to_string(), model.parse()?))
}

fn parse_share(s: &str) -> Result<(u64, u64), String> {
    let (n, d) = s.split_once('/').ok_or("expected a fraction such as 1/3")?;
    let n = n.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
    let d: u64 = d.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
    if d == 0 || n > d {
        return Err(format!("{s:?} is not a fraction in [0, 1]"));
    }
    Ok((n, d))
}

fn parse_window(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once("..").ok_or("expected from..to")?;
    let a = a.parse().map_err(|_| format!("bad start in {s:?}"))?;
    let b = b.parse().map_err(|_| format!("bad end in {s:?}"))?;
    Ok((a, b))
}

/// The `model.json` of a model directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDir {
    pub name: String,
    /// Weights file next to `model.json`.
    #[serde(default = "default_artifact")]
    pub artifact: String,
    #[serde(default)]
    pub capabilities: BTreeMap<String, f64>,
    #[serde(default)]
    pub cost_per_call: u64,
    pub latency_ms: u64,
    pub designer_account: String,
    #[serde(default)]
    pub dependencies: Vec<(String, String)>,
    #[serde(default)]
    pub changelog: String,
}

fn default_artifact() -> String {
    "weights.bin".into()
}

pub const MODEL_FILE: &str = "model.json";

struct Rendered {
    doc: Value,
    table: Option<String>,
}

impl From<Value> for Rendered {
    fn from(doc: Value) -> Self {
        Self { doc, table: None }
    }
}

/// A failed command: what to print and the status to exit with.
struct Failure {
    envelope: ErrorEnvelope,
    stdout: Option<Rendered>,
}

impl From<ErrorEnvelope> for Failure {
    fn from(envelope: ErrorEnvelope) -> Self {
        Self { envelope, stdout: None }
    }
}

impl From<crate::client::ClientError> for Failure {
    fn from(e: crate::client::ClientError) -> Self {
        e.envelope().into()
    }
}

fn local(code: ErrorCode, message: impl Into<String>) -> Failure {
    ErrorEnvelope { code, message: message.into(), detail: None }.into()
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| local(ErrorCode::NotFound, format!("cannot read {}: {e}", path.display())))
}

fn read_doc<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_slice(&read(path)?)
        .map_err(|e| local(ErrorCode::InvalidFormat, format!("{} is not a valid document: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| local(ErrorCode::Internal, format!("cannot write {}: {e}", path.display())))
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => to_canonical_string(other),
    }
}

fn table(v: &Value) -> String {
    match v {
        Value::Object(map) => map.iter().map(|(k, v)| format!("{k}\t{}\n", scalar(v))).collect(),
        Value::Array(items) => items
            .iter()
            .map(|item| match item {
                Value::Object(map) => {
                    let cells: Vec<String> = map.iter().map(|(k, v)| format!("{k}={}", scalar(v))).collect();
                    format!("{}\n", cells.join("\t"))
                }
                other => format!("{}\n", scalar(other)),
            })
            .collect(),
        other => format!("{}\n", scalar(other)),
    }
}

fn emit(out: &mut dyn Write, mode: Output, r: &Rendered) {
    let text = match (mode, &r.table) {
        (Output::Doc, _) => format!("{}\n", to_canonical_string(&r.doc)),
        (Output::Table, Some(t)) => format!("{t}\n"),
        (Output::Table, None) => table(&r.doc),
    };
    let _ = out.write_all(text.as_bytes());
}

/// Parse `args` (including the program name) and run the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    2
                }
            };
        }
    };
    let mode = cli.output;
    match run(cli, err) {
        Ok(r) => {
            emit(out, mode, &r);
            0
        }
        Err(f) => {
            if let Some(r) = &f.stdout {
                emit(out, mode, r);
            }
            let text = match mode {
                Output::Doc => format!("{}\n", to_canonical_string(&f.envelope)),
                Output::Table => {
                    let code = serde_json::to_value(f.envelope.code).map(|c| scalar(&c)).unwrap_or_default();
                    match &f.envelope.detail {
                        None => format!("error: {code}: {}\n", f.envelope.message),
                        Some(d) => format!("error: {code}: {} {}\n", f.envelope.message, to_canonical_string(d)),
                    }
                }
            };
            let _ = err.write_all(text.as_bytes());
            1
        }
    }
}

fn run(cli: Cli, err: &mut dyn Write) -> Result<Rendered, Failure> {
    let client = Client::new(&cli.server, cli.token.clone());
    match cli.command {
        Command::Push { dir } => push(&client, &dir),
        Command::Pull { model, out } => pull(&client, &model, &out),
        Command::Search { query, limit } => {
            let found: Value = client.get_query("/models", &[("q", query.join(" ")), ("limit", limit.to_string())])?;
            Ok(found.into())
        }
        Command::Versions { name } => Ok(client.get::<Value>(&format!("/models/{name}/versions"))?.into()),
        Command::Rollback { name, target } => {
            let m: ModelManifest = client.post(&format!("/models/{name}/rollback"), &json!({ "target": target }))?;
            Ok(Rendered { table: Some(m.model_ref().to_string()), doc: to_value(&m) })
        }
        Command::Serve { config, data_dir, bind } => serve(config, data_dir, bind, cli.token, err),
        Command::Interpret { text, budget, deadline_ms } => {
            let body = json!({ "text": text.join(" "), "budget": budget, "deadline_ms": deadline_ms });
            Ok(client.post::<_, Value>("/interpret", &body)?.into())
        }
        Command::Plan { task, pin, exclude, submitter, beam_width } => {
            let task: TaskSpec = read_doc(&task)?;
            let mut restrictions = Restrictions::default();
            for (s, m) in pin {
                restrictions.pin(&s, m);
            }
            for (s, m) in exclude {
                restrictions.exclude(&s, m);
            }
            let weights = beam_width.map(|beam_width| PlannerWeights { beam_width, ..PlannerWeights::default() });
            let body = json!({ "task": task, "weights": weights, "restrictions": restrictions, "submitter": submitter });
            let resp: Value = client.post("/plans", &body)?;
            let table = plan_table(&resp["plan"]);
            Ok(Rendered { doc: resp, table: Some(table) })
        }
        Command::Exec { plan, task, input, probe } => {
            let mut plan: Value = read_doc(&plan)?;
            if let Some(inner) = plan.get("plan").filter(|p| p.is_object()) {
                plan = inner.clone();
            }
            let task: Value = read_doc(&task)?;
            let body = json!({ "plan": plan, "task": task, "input": input, "probe": probe });
            let resp: Value = client.post("/execute", &body)?;
            let table = table(&resp["scorecard"]);
            Ok(Rendered { doc: resp, table: Some(table.trim_end().to_string()) })
        }
        Command::Sim { config, post } => {
            let config: SimConfig = read_doc(&config)?;
            Ok(client.post::<_, Value>("/sim/run", &json!({ "config": config, "post": post }))?.into())
        }
        Command::Ledger(cmd) => ledger(&client, cmd),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn plan_table(plan: &Value) -> String {
    let mut lines = Vec::new();
    if let Some(a) = plan["assignment"].as_object() {
        for (sid, m) in a {
            lines.push(format!("{sid}\t{}@{}", scalar(&m["name"]), scalar(&m["version"])));
        }
    }
    lines.push(format!("utility\t{}", scalar(&plan["utility"]["utility"])));
    lines.push(format!("feasible\t{}", scalar(&plan["utility"]["feasible"])));
    lines.join("\n")
}

fn push(client: &Client, dir: &Path) -> Result<Rendered, Failure> {
    let spec: ModelDir = read_doc(&dir.join(MODEL_FILE))?;
    let bytes = read(&dir.join(&spec.artifact))?;
    let env = EnvironmentSpec::new(spec.dependencies.clone()).map_err(|e| local(ErrorCode::InvalidFormat, e.to_string()))?;
    let digest = client.put_blob(&bytes)?;
    let body = json!({
        "blob_hash": digest,
        "capabilities": spec.capabilities,
        "cost_per_call": spec.cost_per_call,
        "latency_ms": spec.latency_ms,
        "designer_account": spec.designer_account,
        "env": env,
        "changelog": spec.changelog,
    });
    let m: ModelManifest = client.post(&format!("/models/{}/versions", spec.name), &body)?;
    Ok(Rendered { table: Some(m.model_ref().to_string()), doc: to_value(&m) })
}

fn pull(client: &Client, model: &str, out: &Path) -> Result<Rendered, Failure> {
    let (name, version) = match model.split_once('@') {
        Some((n, v)) => (n, v),
        None => (model, "latest"),
    };
    let m: ModelManifest = client.get(&format!("/models/{name}/versions/{version}"))?;
    let bytes = client.get_bytes(&format!("/blobs/{}", m.blob_hash))?;
    if Digest::of(&bytes) != m.blob_hash {
        return Err(local(ErrorCode::Internal, "downloaded blob does not match the manifest digest"));
    }
    fs::create_dir_all(out).map_err(|e| local(ErrorCode::Internal, format!("cannot create {}: {e}", out.display())))?;
    let spec = ModelDir {
        name: m.name.clone(),
        artifact: default_artifact(),
        capabilities: m.capabilities.clone(),
        cost_per_call: m.cost_per_call,
        latency_ms: m.latency_ms,
        designer_account: m.designer_account.clone(),
        dependencies: m.env.dependencies.clone(),
        changelog: m.changelog.clone(),
    };
    write_file(&out.join(&spec.artifact), &bytes)?;
    write_file(&out.join(MODEL_FILE), to_canonical_string(&spec).as_bytes())?;
    Ok(Rendered { table: Some(format!("{} -> {}", m.model_ref(), out.display())), doc: to_value(&m) })
}

fn serve(
    config: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    bind: Option<SocketAddr>,
    token: Option<String>,
    err: &mut dyn Write,
) -> Result<Rendered, Failure> {
    let mut c = match (config, data_dir) {
        (Some(p), _) => ServeConfig::load(&p).map_err(|e| local(ErrorCode::InvalidFormat, e.to_string()))?,
        (None, Some(d)) => ServeConfig::new(d),
        (None, None) => return Err(local(ErrorCode::InvalidFormat, "serve needs --config or --data-dir")),
    };
    if let Some(d) = bind {
        c.bind = d;
    }
    c.tokens.extend(token);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| local(ErrorCode::Internal, e.to_string()))?;
    let _ = writeln!(err, "listening on {}", c.bind);
    runtime.block_on(crate::server::serve(c)).map_err(|e| local(ErrorCode::Internal, e.to_string()))?;
    Ok(json!({ "status": "stopped" }).into())
}

fn ledger(client: &Client, cmd: LedgerCommand) -> Result<Rendered, Failure> {
    match cmd {
        LedgerCommand::Verify { log } => {
            let raw = read(&log)?;
            match verify_log(&raw) {
                Ok(records) => Ok(Rendered {
                    table: Some(format!("ok: {} records", records.len())),
                    doc: json!({ "valid": true, "records": records.len() }),
                }),
                Err(index) => Err(Failure {
                    envelope: ErrorEnvelope {
                        code: ErrorCode::InvalidFormat,
                        message: format!("ledger record {index} fails verification"),
                        detail: Some(json!({ "first_bad_index": index })),
                    },
                    stdout: Some(Rendered {
                        table: Some(format!("first bad record: {index}")),
                        doc: json!({ "valid": false, "first_bad_index": index }),
                    }),
                }),
            }
        }
        LedgerCommand::Balance { account } => {
            let v: Value = client.get(&format!("/ledger/accounts/{account}/balance"))?;
            let table = scalar(&v["balance"]);
            Ok(Rendered { doc: v, table: Some(table) })
        }
        LedgerCommand::Open { account } => {
            Ok(client.post::<_, Value>("/ledger/accounts", &json!({ "account": account }))?.into())
        }
        LedgerCommand::Agree { model, designer, share: (p_num, p_den), effective_from } => {
            let body = json!({
                "model": model, "designer": designer, "p_num": p_num, "p_den": p_den,
                "effective_from": effective_from,
            });
            Ok(client.post::<_, Value>("/ledger/agreements", &body)?.into())
        }
        LedgerCommand::Contribute { provider, gpu_seconds, source } => {
            let body = json!({ "provider": provider, "gpu_seconds": gpu_seconds, "source": source });
            Ok(client.post::<_, Value>("/ledger/contributions", &body)?.into())
        }
        LedgerCommand::Revenue { model, amount, as_of, window } => {
            let body = json!({ "model": model, "amount": amount, "as_of": as_of, "window": window });
            let v: Value = client.post("/ledger/revenue", &body)?;
            let table = table(&v["payouts"]).trim_end().to_string();
            Ok(Rendered { doc: v, table: Some(table) })
        }
        LedgerCommand::Records { from } => Ok(client.get::<Value>(&format!("/ledger/records?from={from}"))?.into()),
    }
}
