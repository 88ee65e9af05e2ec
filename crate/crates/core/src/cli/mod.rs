//! Command-line harness: generators, campaigns, networked endpoints and the
//! selftest. The `infocomp` binary is a thin wrapper around [`main`].

pub mod campaign;
pub mod gen;
pub mod selftest;

use std::ffi::OsString;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use campaign::{
    amortize_campaign, amortize_point, compress_campaign, cpj_campaign, info_report, load_dist,
    load_json, load_protocol, run_campaign, sample_campaign, write_outputs, CampaignOutput,
    CampaignParams, Engine, ExperimentConfig, TRIAL_TAG,
};
pub use selftest::{selftest, SelftestReport};

use crate::cpj::InstanceParams;
use crate::engine::Role;
use crate::error::{Error, Result};
use crate::prototree::{compression_test_protocol, ProtocolParams};
use crate::sharedrand::SharedSeed;
use crate::wire::{drive, Endpoint, EngineSpec, RoleInput};

pub const DEFAULT_SEED: &str = "00000000000000000000000000000001";

#[derive(Debug, Parser)]
#[command(
    name = "infocomp",
    version,
    about = "Interactive protocol compression: exact information costs and simulated compression"
)]
pub struct Cli {
    /// 128-bit master seed as 32 hex characters.
    #[arg(long, global = true, default_value = DEFAULT_SEED)]
    pub seed: SharedSeed,
    /// Output path (CSV for campaigns, JSON for `gen`); stdout if absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0.01)]
    pub eps: f64,
    #[arg(long, global = true, default_value_t = 10_000)]
    pub trials: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One-shot sampling of P by A with B holding Q.
    Sample {
        /// Distribution JSON (inline or file); a `{"p", "q"}` pair file also works.
        #[arg(long)]
        p: String,
        #[arg(long)]
        q: String,
    },
    /// Correlated pointer jumping path sampling.
    Cpj {
        #[arg(long)]
        instance: String,
    },
    /// Compression of a protocol with inputs drawn from a prior.
    Compress {
        #[arg(long)]
        protocol: String,
        #[arg(long)]
        mu: Option<String>,
    },
    /// Per-copy cost of compressing n parallel copies.
    Amortize {
        #[arg(long)]
        protocol: String,
        #[arg(long)]
        mu: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,4,16")]
        n_list: Vec<usize>,
    },
    /// Exact internal and external information cost and communication.
    Info {
        #[arg(long)]
        protocol: String,
        #[arg(long)]
        mu: Option<String>,
    },
    /// Seeded instance generation.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Runs one endpoint over TCP.
    Serve {
        #[arg(long)]
        role: Role,
        #[arg(long, conflicts_with = "connect", required_unless_present = "connect")]
        listen: Option<String>,
        #[arg(long)]
        connect: Option<String>,
        /// Engine spec JSON shared by both endpoints.
        #[arg(long)]
        engine: String,
        /// This role's private input JSON.
        #[arg(long)]
        input: String,
    },
    /// Exact identities, hard bounds and mutation checks.
    Selftest,
}

#[derive(Debug, Subcommand)]
pub enum GenKind {
    /// Q uniform on S_Q, P uniform on S_P ⊆ S_Q.
    UniformSubset {
        #[arg(long)]
        q_size: usize,
        #[arg(long)]
        p_size: usize,
        /// Universe size; defaults to |S_Q|.
        #[arg(long)]
        universe: Option<usize>,
    },
    RandomCpj {
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 2)]
        branching: usize,
        #[arg(long, default_value = "A")]
        first_owner: Role,
    },
    /// Random protocol bundled with a random prior.
    RandomProtocol {
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 4)]
        x_size: usize,
        #[arg(long, default_value_t = 4)]
        y_size: usize,
        #[arg(long, default_value_t = 1)]
        branches: usize,
        #[arg(long, default_value_t = 0.0)]
        leaf_prob: f64,
    },
    /// CPJ instance with ±1 leaves and a majority of at least `margin`.
    PromiseCpj {
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 2)]
        branching: usize,
        #[arg(long, default_value = "A")]
        first_owner: Role,
        #[arg(long, default_value_t = 0.95)]
        margin: f64,
    },
    /// The six-round test protocol (IC 2, CC 6) bundled with its prior.
    CompressionTest,
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
            {
                // a closed downstream pipe (e.g. `| head`) is not a failure
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn campaign(cli: &Cli, engine: Engine) -> Result<()> {
    let cfg = ExperimentConfig {
        engine,
        eps: cli.eps,
        trials: cli.trials,
        seed: cli.seed,
        out: cli.out.clone(),
    };
    let output = run_campaign(&cfg)?;
    match &cfg.out {
        Some(path) => {
            let summary_path = write_outputs(path, &output)?;
            eprintln!("wrote {} and {}", path.display(), summary_path.display());
            println!("{}", pretty(&output.summary).trim_end());
        }
        None => {
            print!("{}", output.csv);
            eprintln!("{}", pretty(&output.summary).trim_end());
        }
    }
    Ok(())
}

fn generate(cli: &Cli, kind: &GenKind) -> Result<()> {
    let seed = &cli.seed;
    let text = match kind {
        GenKind::UniformSubset {
            q_size,
            p_size,
            universe,
        } => pretty(&gen::uniform_subset(
            universe.unwrap_or(*q_size),
            *q_size,
            *p_size,
            seed,
        )?),
        GenKind::RandomCpj {
            depth,
            branching,
            first_owner,
        } => pretty(&gen::random_cpj(
            InstanceParams {
                depth: *depth,
                branching: *branching,
                first_owner: *first_owner,
            },
            seed,
        )?),
        GenKind::RandomProtocol {
            depth,
            x_size,
            y_size,
            branches,
            leaf_prob,
        } => {
            let params = ProtocolParams {
                depth: *depth,
                x_size: *x_size,
                y_size: *y_size,
                branches: *branches,
                leaf_prob: *leaf_prob,
            };
            pretty(&gen::random_protocol_with_prior(&params, seed)?)
        }
        GenKind::PromiseCpj {
            depth,
            branching,
            first_owner,
            margin,
        } => pretty(&gen::promise_cpj(
            InstanceParams {
                depth: *depth,
                branching: *branching,
                first_owner: *first_owner,
            },
            *margin,
            seed,
        )?),
        GenKind::CompressionTest => {
            let (protocol, mu) = compression_test_protocol();
            pretty(&gen::ProtocolBundle { protocol, mu })
        }
    };
    emit(&cli.out, &text)
}

// A `{"p", "q"}` pair file stands in for either role's sampler input.
fn role_input(arg: &str, role: Role) -> Result<RoleInput> {
    let value: serde_json::Value = load_json(arg)?;
    let key = match role {
        Role::A => "p",
        Role::B => "q",
    };
    let value = match value.get(key) {
        Some(v) if value.get("root").is_none() => v.clone(),
        _ => value,
    };
    serde_json::from_value(value).map_err(|e| Error::Input {
        origin: arg.into(),
        msg: e.to_string(),
    })
}

fn connect_with_retry(addr: &str) -> Result<TcpStream> {
    let mut last = None;
    for _ in 0..100 {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    Err(last.expect("at least one attempt").into())
}

#[derive(Serialize)]
struct ServeReport {
    role: Role,
    report: crate::wire::Report,
    stats: crate::wire::EndpointStats,
}

fn serve(
    cli: &Cli,
    role: Role,
    listen: &Option<String>,
    connect: &Option<String>,
    engine: &str,
    input: &str,
) -> Result<()> {
    let spec: EngineSpec = load_json(engine)?;
    let mut endpoint = Endpoint::new(&spec, role, &role_input(input, role)?, &cli.seed)?;
    let mut stream = match (listen, connect) {
        (Some(addr), _) => TcpListener::bind(addr)?.accept()?.0,
        (None, Some(addr)) => connect_with_retry(addr)?,
        (None, None) => {
            return Err(Error::InvalidParameter(
                "serve needs --listen or --connect".into(),
            ))
        }
    };
    stream.set_nodelay(true)?;
    let stats = drive(&mut endpoint, &mut stream)?;
    emit(
        &cli.out,
        &pretty(&ServeReport {
            role,
            report: endpoint.report(),
            stats,
        }),
    )
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Sample { p, q } => campaign(
            cli,
            Engine::Sample {
                p: p.clone(),
                q: q.clone(),
            },
        )?,
        Command::Cpj { instance } => campaign(
            cli,
            Engine::Cpj {
                instance: instance.clone(),
            },
        )?,
        Command::Compress { protocol, mu } => campaign(
            cli,
            Engine::Compress {
                protocol: protocol.clone(),
                mu: mu.clone(),
            },
        )?,
        Command::Amortize {
            protocol,
            mu,
            n_list,
        } => campaign(
            cli,
            Engine::Amortize {
                protocol: protocol.clone(),
                mu: mu.clone(),
                n_list: n_list.clone(),
            },
        )?,
        Command::Info { protocol, mu } => {
            let (pi, mu) = load_protocol(protocol, mu.as_deref())?;
            emit(&cli.out, &pretty(&info_report(&pi, &mu)?))?;
        }
        Command::Gen { kind } => generate(cli, kind)?,
        Command::Serve {
            role,
            listen,
            connect,
            engine,
            input,
        } => serve(cli, *role, listen, connect, engine, input)?,
        Command::Selftest => {
            let report = selftest(&cli.seed)?;
            print!("{report}");
            return Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            });
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Entry point for the binary.
pub fn main_from<I: IntoIterator<Item = T>, T: Into<OsString> + Clone>(args: I) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

pub fn main() -> ExitCode {
    main_from(std::env::args_os())
}
