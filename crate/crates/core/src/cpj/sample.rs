//! Path sampling: one sampler run per node, owner as sender.
//!
//! Node `d` of the path (root is `d = 0`) uses the sub-seed
//! `seed.derive(TAG_NODE, d)`. Every node of a run shares one
//! [`SamplerConfig`]. If a node's sampler ends with the `t_max` abort, both
//! players know it and stop. After a mismatch the two players walk
//! different branches; ownership alternates by depth, so their message
//! schedules stay aligned until one reaches a leaf.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{path_divergence, path_divergence_clamped, CpjInstance, CpjNode};
use crate::bits::Bits;
use crate::engine::{run_local, Party, Role, Step, Transfer};
use crate::error::{Error, Result};
use crate::info::Dist;
use crate::onesamp::{
    bound_from_ratio, Outcome, Receiver, SamplerConfig, Sender, DEFAULT_T_MAX_CAP,
};
use crate::sharedrand::SharedSeed;

/// Derivation tag for per-node sub-seeds.
pub const TAG_NODE: u64 = 0x11;

/// One player's view of a tree while walking it.
pub trait Walker {
    fn is_leaf(&self) -> bool;
    fn owner(&self) -> Role;
    /// This player's distribution over the current node's children.
    fn child_dist(&self) -> Result<Dist>;
    fn label(&self, child: usize) -> String;
    fn descend(&mut self, child: usize) -> Result<()>;
    fn output(&self) -> Option<i64>;
}

/// Walks a shared instance using only one side's distributions.
#[derive(Debug, Clone)]
pub struct SideWalker {
    inst: Arc<CpjInstance>,
    side: Role,
    path: Vec<usize>,
}

impl SideWalker {
    pub fn new(inst: Arc<CpjInstance>, side: Role) -> Self {
        Self {
            inst,
            side,
            path: Vec::new(),
        }
    }

    fn node(&self) -> &CpjNode {
        self.inst
            .node_at(&self.path)
            .expect("walker stays on the tree")
    }
}

impl Walker for SideWalker {
    fn is_leaf(&self) -> bool {
        self.node().is_leaf()
    }

    fn owner(&self) -> Role {
        self.node().owner().unwrap_or(Role::A)
    }

    fn child_dist(&self) -> Result<Dist> {
        self.node()
            .dist(self.side)
            .cloned()
            .ok_or_else(|| Error::InvalidInstance("leaf has no children".into()))
    }

    fn label(&self, child: usize) -> String {
        self.node().labels()[child].clone()
    }

    fn descend(&mut self, child: usize) -> Result<()> {
        if child >= self.node().children().len() {
            return Err(Error::Protocol(format!("child {child} out of range")));
        }
        self.path.push(child);
        Ok(())
    }

    fn output(&self) -> Option<i64> {
        self.node().output()
    }
}

/// Lazy product of walkers over instances of equal shape. Child `i` of a
/// product node is the mixed-radix tuple with component 0 most significant.
#[derive(Debug, Clone)]
pub struct ProductWalker<W> {
    parts: Vec<W>,
}

impl<W: Walker> ProductWalker<W> {
    pub fn new(parts: Vec<W>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidParameter("empty product".into()));
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[W] {
        &self.parts
    }

    fn radices(&self) -> Result<Vec<usize>> {
        self.parts
            .iter()
            .map(|w| w.child_dist().map(|d| d.len()))
            .collect()
    }

    /// Component child indices of product child `i`.
    pub fn split(&self, mut i: usize) -> Result<Vec<usize>> {
        let radices = self.radices()?;
        let mut out = vec![0; radices.len()];
        for (slot, r) in out.iter_mut().zip(&radices).rev() {
            *slot = i % r;
            i /= r;
        }
        if i != 0 {
            return Err(Error::Protocol("product child out of range".into()));
        }
        Ok(out)
    }
}

impl<W: Walker> Walker for ProductWalker<W> {
    fn is_leaf(&self) -> bool {
        self.parts[0].is_leaf()
    }

    fn owner(&self) -> Role {
        self.parts[0].owner()
    }

    fn child_dist(&self) -> Result<Dist> {
        let mut d = self.parts[0].child_dist()?;
        for w in &self.parts[1..] {
            if w.is_leaf() || w.owner() != self.owner() {
                return Err(Error::InvalidInstance(
                    "product components out of step".into(),
                ));
            }
            d = d.product(&w.child_dist()?);
        }
        Ok(d)
    }

    fn label(&self, child: usize) -> String {
        let idx = self.split(child).expect("valid child");
        self.parts
            .iter()
            .zip(idx)
            .map(|(w, i)| w.label(i))
            .collect()
    }

    fn descend(&mut self, child: usize) -> Result<()> {
        let idx = self.split(child)?;
        for (w, i) in self.parts.iter_mut().zip(idx) {
            w.descend(i)?;
        }
        Ok(())
    }

    fn output(&self) -> Option<i64> {
        if self.parts.len() == 1 {
            self.parts[0].output()
        } else {
            None
        }
    }
}

/// What one player saw at one node of its path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub owner: Role,
    /// Child taken; `None` when the node aborted.
    pub choice: Option<usize>,
    pub final_t: u32,
    /// Sender side only.
    pub k: Option<u64>,
    pub k_overflow: bool,
}

#[derive(Debug, Clone)]
enum Sub {
    Send(Sender),
    Recv(Receiver),
}

/// One player of a path-sampling run.
#[derive(Debug, Clone)]
pub struct CpjParty<W> {
    role: Role,
    walker: W,
    seed: SharedSeed,
    cfg: SamplerConfig,
    sub: Option<Sub>,
    path: Vec<usize>,
    labels: Vec<String>,
    records: Vec<NodeRecord>,
    aborted: bool,
}

impl<W: Walker> CpjParty<W> {
    pub fn new(role: Role, walker: W, seed: SharedSeed, cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            role,
            walker,
            seed,
            cfg,
            sub: None,
            path: Vec::new(),
            labels: Vec::new(),
            records: Vec::new(),
            aborted: false,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn path(&self) -> &[usize] {
        &self.path
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn records(&self) -> &[NodeRecord] {
        &self.records
    }

    pub fn aborted(&self) -> bool {
        self.aborted
    }

    pub fn walker(&self) -> &W {
        &self.walker
    }

    /// Whether the walk ended on a leaf.
    pub fn reached_leaf(&self) -> bool {
        !self.aborted && self.walker.is_leaf()
    }

    pub fn output(&self) -> Option<i64> {
        if self.reached_leaf() {
            self.walker.output()
        } else {
            None
        }
    }

    fn finish_sub(&mut self) -> Result<()> {
        let record = match self.sub.take() {
            Some(Sub::Send(s)) => NodeRecord {
                owner: self.role,
                choice: (s.accepted() != Some(false)).then(|| s.output()),
                final_t: s.final_t(),
                k: Some(s.block()),
                k_overflow: s.k_overflow(),
            },
            Some(Sub::Recv(r)) => NodeRecord {
                owner: self.role.other(),
                choice: r.output(),
                final_t: r.final_t(),
                k: None,
                k_overflow: false,
            },
            None => return Ok(()),
        };
        self.records.push(record);
        match record.choice {
            Some(c) => {
                self.labels.push(self.walker.label(c));
                self.walker.descend(c)?;
                self.path.push(c);
            }
            None => self.aborted = true,
        }
        Ok(())
    }

    /// Settles a finished node and opens the next one. `false` once the
    /// walk is over.
    fn prepare(&mut self) -> Result<bool> {
        let finished = match &self.sub {
            Some(Sub::Send(s)) => s.is_done(),
            Some(Sub::Recv(r)) => r.is_done(),
            None => false,
        };
        if finished {
            self.finish_sub()?;
        }
        if self.aborted || self.walker.is_leaf() {
            return Ok(false);
        }
        if self.sub.is_none() {
            let seed = self.seed.derive(TAG_NODE, self.path.len() as u64);
            let dist = self.walker.child_dist()?;
            self.sub = Some(if self.walker.owner() == self.role {
                Sub::Send(Sender::new(&dist, &seed, self.cfg)?)
            } else {
                Sub::Recv(Receiver::new(&dist, &seed, self.cfg)?)
            });
        }
        Ok(true)
    }
}

impl<W: Walker> Party for CpjParty<W> {
    fn step(&mut self) -> Result<Step> {
        loop {
            if !self.prepare()? {
                return Ok(Step::Done);
            }
            let step = match self.sub.as_mut().expect("prepared") {
                Sub::Send(s) => s.step()?,
                Sub::Recv(r) => r.step()?,
            };
            match step {
                Step::Done => continue,
                other => return Ok(other),
            }
        }
    }

    fn deliver(&mut self, msg: &Bits) -> Result<()> {
        if !self.prepare()? {
            return Ok(());
        }
        match self.sub.as_mut().expect("prepared") {
            Sub::Send(s) => s.deliver(msg),
            Sub::Recv(r) => r.deliver(msg),
        }
    }
}

/// Largest `log₂(owner / other)` over edges the correct distribution can
/// take; infinite if such an edge has no mass on the other side.
pub fn max_log_ratio(f: &CpjInstance) -> f64 {
    fn walk(v: &CpjNode) -> f64 {
        let mut worst: f64 = 0.0;
        if let CpjNode::Internal { children, .. } = v {
            let owner = v.owner().expect("internal");
            let own = v.dist(owner).expect("internal");
            let other = v.dist(owner.other()).expect("internal");
            for (i, c) in children.iter().enumerate() {
                let (p, q) = (own.get(i), other.get(i));
                if p > 0.0 {
                    worst = worst.max(if q > 0.0 {
                        (p / q).log2()
                    } else {
                        f64::INFINITY
                    });
                    worst = worst.max(walk(c));
                }
            }
        }
        worst
    }
    walk(f.root())
}

/// `⌈√ratio⌉ + 2`, or the cap for infinite ratios.
pub fn t_max_for_ratio(ratio: f64) -> u32 {
    if ratio.is_finite() {
        (ratio.max(0.0).sqrt().ceil() as u32 + 2).min(DEFAULT_T_MAX_CAP)
    } else {
        DEFAULT_T_MAX_CAP
    }
}

/// Largest per-node default `t_max` over reachable nodes.
pub fn instance_t_max(f: &CpjInstance) -> u32 {
    t_max_for_ratio(max_log_ratio(f))
}

/// Per-edge costs `log₂(owner / other)` along `path`, read from one walker
/// per side.
pub fn walker_path_costs<WA: Walker + Clone, WB: Walker + Clone>(
    wa: &WA,
    wb: &WB,
    path: &[usize],
) -> Result<Vec<f64>> {
    let (mut wa, mut wb) = (wa.clone(), wb.clone());
    let mut costs = Vec::with_capacity(path.len());
    for &c in path {
        let (da, db) = (wa.child_dist()?, wb.child_dist()?);
        let (own, other) = match wa.owner() {
            Role::A => (da.get(c), db.get(c)),
            Role::B => (db.get(c), da.get(c)),
        };
        costs.push(match (own > 0.0, other > 0.0) {
            (true, true) => (own / other).log2(),
            (true, false) => f64::INFINITY,
            (false, true) => f64::NEG_INFINITY,
            (false, false) => 0.0,
        });
        wa.descend(c)?;
        wb.descend(c)?;
    }
    Ok(costs)
}

/// `D(T) + 2k·log₂(1/ε) + 5√(k·D⁺(T)) + 9k`, where `D⁺` clamps each edge
/// at zero.
pub fn path_bound(divergence: f64, clamped: f64, k: usize, eps: f64) -> f64 {
    let k = k as f64;
    divergence + 2.0 * k * (1.0 / eps).log2() + 5.0 * (k * clamped.max(0.0)).sqrt() + 9.0 * k
}

/// Sum of per-node sampler bounds along a path, one term per edge cost.
pub fn per_node_bound(costs: &[f64], eps: f64) -> f64 {
    costs.iter().map(|&c| bound_from_ratio(c, eps)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub labels: Vec<String>,
    pub indices: Vec<usize>,
    pub output: Option<i64>,
    pub complete: bool,
    pub divergence_cost: f64,
}

impl PathSample {
    /// Concatenated labels; unique per leaf since labels are prefix-free.
    pub fn code(&self) -> String {
        self.labels.concat()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    pub bits_a: u64,
    pub bits_b: u64,
    pub nodes: usize,
    pub max_t: u32,
    pub k_overflows: usize,
    pub desync: bool,
    pub outcome: Outcome,
}

impl PathStats {
    pub fn total_bits(&self) -> u64 {
        self.bits_a + self.bits_b
    }
}

/// Runs two walkers against each other in process.
pub fn sample_path_with<WA: Walker, WB: Walker>(
    wa: WA,
    wb: WB,
    seed: &SharedSeed,
    cfg: SamplerConfig,
) -> Result<(CpjParty<WA>, CpjParty<WB>, PathStats)> {
    let mut a = CpjParty::new(Role::A, wa, *seed, cfg)?;
    let mut b = CpjParty::new(Role::B, wb, *seed, cfg)?;
    let transfer = run_local(&mut a, &mut b)?;
    let stats = path_stats(&a, &b, &transfer);
    Ok((a, b, stats))
}

/// Classifies a finished pair of players.
pub fn path_stats<WA: Walker, WB: Walker>(
    a: &CpjParty<WA>,
    b: &CpjParty<WB>,
    transfer: &Transfer,
) -> PathStats {
    let records = a.records().iter().chain(b.records());
    let k_overflows = a.records().iter().filter(|r| r.k_overflow).count()
        + b.records().iter().filter(|r| r.k_overflow).count();
    let outcome = if a.aborted() || b.aborted() {
        Outcome::AbortTMax
    } else if k_overflows > 0 {
        Outcome::AbortKOverflow
    } else if a.path() == b.path() && a.reached_leaf() && b.reached_leaf() {
        Outcome::Match
    } else {
        Outcome::Mismatch
    };
    PathStats {
        bits_a: transfer.bits_a,
        bits_b: transfer.bits_b,
        nodes: a.records().len().max(b.records().len()),
        max_t: records.map(|r| r.final_t).max().unwrap_or(0),
        k_overflows,
        desync: transfer.desync,
        outcome,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpjRun {
    pub a: PathSample,
    pub b: PathSample,
    pub stats: PathStats,
    /// Path bound evaluated on A's path.
    pub bound: f64,
}

fn path_sample(f: &CpjInstance, p: &CpjParty<SideWalker>) -> Result<PathSample> {
    Ok(PathSample {
        labels: p.labels().to_vec(),
        indices: p.path().to_vec(),
        output: p.output(),
        complete: p.reached_leaf(),
        divergence_cost: path_divergence(f, p.path())?,
    })
}

/// Samples a root-to-leaf path with the same `ε` at every node and
/// `t_max` from [`instance_t_max`].
pub fn sample_path(f: &CpjInstance, seed: &SharedSeed, eps: f64) -> Result<CpjRun> {
    let cfg = SamplerConfig::new(eps)?.with_t_max(instance_t_max(f));
    sample_path_cfg(&Arc::new(f.clone()), seed, cfg)
}

pub fn sample_path_cfg(
    f: &Arc<CpjInstance>,
    seed: &SharedSeed,
    cfg: SamplerConfig,
) -> Result<CpjRun> {
    let (a, b, stats) = sample_path_with(
        SideWalker::new(f.clone(), Role::A),
        SideWalker::new(f.clone(), Role::B),
        seed,
        cfg,
    )?;
    let pa = path_sample(f, &a)?;
    let pb = path_sample(f, &b)?;
    let clamped = path_divergence_clamped(f, a.path())?;
    let bound = path_bound(pa.divergence_cost, clamped, pa.indices.len(), cfg.eps);
    Ok(CpjRun {
        a: pa,
        b: pb,
        stats,
        bound,
    })
}
