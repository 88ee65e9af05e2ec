//! Two endpoints over an ordered, reliable byte stream.
//!
//! Each burst a party emits travels as one frame:
//!
//! ```text
//! +----------------------+-----------------------------------+
//! | bit_length: u16 (BE) | payload: ceil(bit_length/8) bytes |
//! +----------------------+-----------------------------------+
//! ```
//!
//! Payload bits are packed MSB first and the unused low bits of the last
//! byte are zero. `bit_length = 0` is a protocol error. Only `bit_length`
//! counts toward the accounted bits.
//!
//! A finished endpoint shuts down its write half and keeps reading until
//! the peer does the same, dropping whatever arrives. An endpoint that is
//! waiting and reads end-of-stream at a frame boundary marks the run as
//! desynchronised, matching [`crate::engine::run_local`].

use std::io::{self, ErrorKind, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::os::unix::net::UnixStream;
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::cpj::{instance_t_max, CpjInstance, CpjParty, SideWalker, Walker};
use crate::engine::{run_local, Party, Role, Step, Transfer};
use crate::error::{Error, Result};
use crate::info::{Dist, JointDist};
use crate::onesamp::{default_t_max, Receiver, SamplerConfig, Sender};
use crate::prototree::{protocol_t_max, ProtocolTree, ProtocolWalker};
use crate::sharedrand::SharedSeed;

pub const MAX_FRAME_BITS: usize = u16::MAX as usize;

pub fn encode_frame(bits: &Bits) -> Result<Vec<u8>> {
    if bits.is_empty() {
        return Err(Error::Protocol("frame with bit_length 0".into()));
    }
    if bits.len() > MAX_FRAME_BITS {
        return Err(Error::Protocol(format!(
            "burst of {} bits does not fit a frame",
            bits.len()
        )));
    }
    let mut out = Vec::with_capacity(2 + bits.len().div_ceil(8));
    out.extend_from_slice(&(bits.len() as u16).to_be_bytes());
    out.extend_from_slice(&bits.to_bytes());
    Ok(out)
}

pub fn write_frame<W: Write + ?Sized>(w: &mut W, bits: &Bits) -> Result<()> {
    w.write_all(&encode_frame(bits)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. `Ok(None)` on end-of-stream at a frame boundary.
pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> Result<Option<Bits>> {
    let mut header = [0u8; 2];
    let mut got = 0;
    while got < 2 {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Transport("truncated frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u16::from_be_bytes(header) as usize;
    if len == 0 {
        return Err(Error::Protocol("frame with bit_length 0".into()));
    }
    let mut payload = vec![0u8; len.div_ceil(8)];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Transport(format!(
            "truncated frame: expected {} payload bytes",
            payload.len()
        )),
        _ => e.into(),
    })?;
    let spare = payload.len() * 8 - len;
    if spare > 0 && payload[payload.len() - 1] & ((1u8 << spare) - 1) != 0 {
        return Err(Error::Transport("nonzero padding bits".into()));
    }
    Ok(Some(Bits::from_bytes(&payload, len)))
}

/// Byte stream whose write half can be closed independently.
pub trait Channel: Read + Write {
    fn close_write(&mut self) -> io::Result<()>;
}

impl Channel for UnixStream {
    fn close_write(&mut self) -> io::Result<()> {
        self.shutdown(Shutdown::Write)
    }
}

impl Channel for TcpStream {
    fn close_write(&mut self) -> io::Result<()> {
        self.shutdown(Shutdown::Write)
    }
}

/// Public parameters both endpoints are configured with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum EngineSpec {
    /// One-shot sampling; A holds `P`, B holds `Q`.
    Sample {
        eps: f64,
        t_max: u32,
        universe: usize,
    },
    /// Path sampling; each side holds its own distributions of one instance.
    Cpj { eps: f64, t_max: u32 },
    /// Compression of a fixed branch of a public protocol; A holds `x`, B
    /// holds `y`.
    Compress {
        eps: f64,
        t_max: u32,
        protocol: ProtocolTree,
        mu: JointDist,
        branch: usize,
    },
}

impl EngineSpec {
    /// Harness-side constructor that sees both inputs to fix `t_max`.
    pub fn sample_for(p: &Dist, q: &Dist, eps: f64) -> Self {
        EngineSpec::Sample {
            eps,
            t_max: default_t_max(p, q),
            universe: p.len(),
        }
    }

    pub fn cpj_for(f: &CpjInstance, eps: f64) -> Self {
        EngineSpec::Cpj {
            eps,
            t_max: instance_t_max(f),
        }
    }

    pub fn compress_for(
        pi: &ProtocolTree,
        mu: &JointDist,
        branch: usize,
        eps: f64,
    ) -> Result<Self> {
        Ok(EngineSpec::Compress {
            eps,
            t_max: protocol_t_max(pi, mu, 1)?,
            protocol: pi.clone(),
            mu: mu.clone(),
            branch,
        })
    }

    pub fn config(&self) -> Result<SamplerConfig> {
        let (eps, t_max) = match self {
            EngineSpec::Sample { eps, t_max, .. }
            | EngineSpec::Cpj { eps, t_max }
            | EngineSpec::Compress { eps, t_max, .. } => (*eps, *t_max),
        };
        Ok(SamplerConfig::new(eps)?.with_t_max(t_max))
    }
}

/// One role's private input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoleInput {
    Index(usize),
    Dist(Dist),
    Cpj(CpjInstance),
}

enum Player {
    Sender(Sender),
    Receiver(Receiver),
    Cpj(CpjParty<SideWalker>),
    Compress(CpjParty<ProtocolWalker>),
}

/// What an endpoint knows at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Sender {
        output: usize,
        k: u64,
        k_overflow: bool,
        rounds_t: u32,
        accepted: Option<bool>,
    },
    Receiver {
        output: Option<usize>,
        rounds_t: u32,
    },
    Walk {
        path: Vec<usize>,
        labels: Vec<String>,
        output: Option<i64>,
        reached_leaf: bool,
        aborted: bool,
        k_overflows: usize,
        max_t: u32,
    },
}

fn walk_report<W: Walker>(p: &CpjParty<W>) -> Report {
    Report::Walk {
        path: p.path().to_vec(),
        labels: p.labels().to_vec(),
        output: p.output(),
        reached_leaf: p.reached_leaf(),
        aborted: p.aborted(),
        k_overflows: p.records().iter().filter(|r| r.k_overflow).count(),
        max_t: p.records().iter().map(|r| r.final_t).max().unwrap_or(0),
    }
}

/// One role's engine state; built from the public spec and this role's
/// input only.
pub struct Endpoint {
    role: Role,
    player: Player,
}

fn wrong_input(engine: &str, role: Role) -> Error {
    Error::InvalidParameter(format!("{engine} engine: wrong input kind for role {role}"))
}

impl Endpoint {
    pub fn new(
        spec: &EngineSpec,
        role: Role,
        input: &RoleInput,
        seed: &SharedSeed,
    ) -> Result<Self> {
        let cfg = spec.config()?;
        let player = match (spec, input) {
            (EngineSpec::Sample { universe, .. }, RoleInput::Dist(d)) => {
                if d.len() != *universe {
                    return Err(Error::UniverseMismatch {
                        left: d.len(),
                        right: *universe,
                    });
                }
                match role {
                    Role::A => Player::Sender(Sender::new(d, seed, cfg)?),
                    Role::B => Player::Receiver(Receiver::new(d, seed, cfg)?),
                }
            }
            (EngineSpec::Cpj { .. }, RoleInput::Cpj(f)) => {
                let own = Arc::new(f.side(role));
                Player::Cpj(CpjParty::new(role, SideWalker::new(own, role), *seed, cfg)?)
            }
            (
                EngineSpec::Compress {
                    protocol,
                    mu,
                    branch,
                    ..
                },
                RoleInput::Index(v),
            ) => {
                let w = ProtocolWalker::new(Arc::new(protocol.clone()), mu, *branch, role, *v)?;
                Player::Compress(CpjParty::new(role, w, *seed, cfg)?)
            }
            (EngineSpec::Sample { .. }, _) => return Err(wrong_input("sample", role)),
            (EngineSpec::Cpj { .. }, _) => return Err(wrong_input("cpj", role)),
            (EngineSpec::Compress { .. }, _) => return Err(wrong_input("compress", role)),
        };
        Ok(Self { role, player })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn report(&self) -> Report {
        match &self.player {
            Player::Sender(s) => Report::Sender {
                output: s.output(),
                k: s.block(),
                k_overflow: s.k_overflow(),
                rounds_t: s.final_t(),
                accepted: s.accepted(),
            },
            Player::Receiver(r) => Report::Receiver {
                output: r.output(),
                rounds_t: r.final_t(),
            },
            Player::Cpj(p) => walk_report(p),
            Player::Compress(p) => walk_report(p),
        }
    }

    fn party(&mut self) -> &mut dyn Party {
        match &mut self.player {
            Player::Sender(s) => s,
            Player::Receiver(r) => r,
            Player::Cpj(p) => p,
            Player::Compress(p) => p,
        }
    }
}

impl Party for Endpoint {
    fn step(&mut self) -> Result<Step> {
        self.party().step()
    }
    fn deliver(&mut self, msg: &Bits) -> Result<()> {
        self.party().deliver(msg)
    }
}

/// Traffic seen by one endpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointStats {
    pub bits_sent: u64,
    pub frames_sent: u64,
    pub bits_received: u64,
    pub frames_received: u64,
    /// Hit end-of-stream while waiting for the peer.
    pub desync: bool,
}

/// Runs one party to completion over `chan`.
pub fn drive<C: Channel + ?Sized>(party: &mut dyn Party, chan: &mut C) -> Result<EndpointStats> {
    let mut stats = EndpointStats::default();
    loop {
        match party.step()? {
            Step::Send(msg) => {
                write_frame(chan, &msg)?;
                stats.bits_sent += msg.len() as u64;
                stats.frames_sent += 1;
            }
            Step::Await => match read_frame(chan)? {
                Some(msg) => {
                    stats.bits_received += msg.len() as u64;
                    stats.frames_received += 1;
                    party.deliver(&msg)?;
                }
                None => {
                    stats.desync = true;
                    break;
                }
            },
            Step::Done => break,
        }
    }
    chan.close_write()?;
    while let Some(msg) = read_frame(chan)? {
        stats.bits_received += msg.len() as u64;
        stats.frames_received += 1;
        party.deliver(&msg)?;
    }
    Ok(stats)
}

/// Outputs and accounting of a two-endpoint run, identical across
/// transports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRun {
    pub a: Report,
    pub b: Report,
    pub transfer: Transfer,
}

pub fn run_in_process(
    spec: &EngineSpec,
    input_a: &RoleInput,
    input_b: &RoleInput,
    seed: &SharedSeed,
) -> Result<WireRun> {
    let mut a = Endpoint::new(spec, Role::A, input_a, seed)?;
    let mut b = Endpoint::new(spec, Role::B, input_b, seed)?;
    let transfer = run_local(&mut a, &mut b)?;
    Ok(WireRun {
        a: a.report(),
        b: b.report(),
        transfer,
    })
}

/// Hosts each endpoint on its own thread, talking over `chan_a` and
/// `chan_b`, the two ends of one duplex stream.
pub fn run_over_channel<C: Channel + Send + 'static>(
    spec: &EngineSpec,
    input_a: &RoleInput,
    input_b: &RoleInput,
    seed: &SharedSeed,
    (chan_a, chan_b): (C, C),
) -> Result<WireRun> {
    let spawn = |role: Role, input: &RoleInput, mut chan: C| {
        let endpoint = Endpoint::new(spec, role, input, seed);
        thread::spawn(move || -> Result<(Report, EndpointStats)> {
            let mut endpoint = endpoint?;
            let stats = drive(&mut endpoint, &mut chan);
            if stats.is_err() {
                // unblock the peer before reporting
                let _ = chan.close_write();
            }
            Ok((endpoint.report(), stats?))
        })
    };
    let ha = spawn(Role::A, input_a, chan_a);
    let hb = spawn(Role::B, input_b, chan_b);
    let join = |h: thread::JoinHandle<Result<(Report, EndpointStats)>>| {
        h.join()
            .map_err(|_| Error::Transport("endpoint thread panicked".into()))?
    };
    let (ra, rb) = (join(ha), join(hb));
    let ((a, sa), (b, sb)) = (ra?, rb?);
    Ok(WireRun {
        a,
        b,
        transfer: Transfer {
            bits_a: sa.bits_sent,
            bits_b: sb.bits_sent,
            messages: sa.frames_sent + sb.frames_sent,
            desync: sa.desync || sb.desync,
        },
    })
}

/// [`run_over_channel`] on a fresh Unix socket pair.
pub fn run_over_socketpair(
    spec: &EngineSpec,
    input_a: &RoleInput,
    input_b: &RoleInput,
    seed: &SharedSeed,
) -> Result<WireRun> {
    run_over_channel(spec, input_a, input_b, seed, UnixStream::pair()?)
}
