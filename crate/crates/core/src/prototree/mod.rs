//! Two-party protocol trees and their exact information costs.
//!
//! A protocol is a finite list of public-randomness branches, each a tree
//! whose internal nodes are owned by one player and map the owner's input
//! to a distribution over children. Private coins are folded into those
//! distributions. Transcripts are (branch, leaf) pairs.

mod compress;
mod gen;
mod parallel;

pub use compress::{
    build_cpj, compress, compress_inputs, compress_with, draw_inputs, expected_cpj_divergence,
    protocol_max_log_ratio, protocol_t_max, CompressRun, ProtocolWalker, TAG_INPUTS,
};
pub use gen::{
    compression_test_protocol, correlated_prior, random_prior, random_protocol,
    unit_conditional_entropy_delta, ProtocolParams,
};
pub use parallel::{
    compress_copies, parallel_protocol, parallel_walkers, product_prior, single_copy_from_n,
    ParallelRun, TAG_COPY,
};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cpj::{check_prefix_free, default_labels};
use crate::engine::Role;
use crate::error::{Error, Result};
use crate::info::{Dist, JointDist, JointTable};

/// Default cap on `|X|·|Y|·|transcripts|`.
pub const STATE_CAP: usize = 1_000_000;

/// Denominators below this are treated as zero in posterior updates.
pub const POSTERIOR_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum PNode {
    Leaf {
        output: Option<i64>,
    },
    Internal {
        owner: Role,
        labels: Vec<String>,
        children: Vec<PNode>,
        /// Owner's input index → distribution over children.
        table: Vec<Dist>,
    },
}

impl PNode {
    pub fn leaf(output: i64) -> Self {
        PNode::Leaf {
            output: Some(output),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, PNode::Leaf { .. })
    }

    pub fn owner(&self) -> Option<Role> {
        match self {
            PNode::Internal { owner, .. } => Some(*owner),
            PNode::Leaf { .. } => None,
        }
    }

    pub fn children(&self) -> &[PNode] {
        match self {
            PNode::Internal { children, .. } => children,
            PNode::Leaf { .. } => &[],
        }
    }

    pub fn labels(&self) -> &[String] {
        match self {
            PNode::Internal { labels, .. } => labels,
            PNode::Leaf { .. } => &[],
        }
    }

    pub fn table(&self) -> &[Dist] {
        match self {
            PNode::Internal { table, .. } => table,
            PNode::Leaf { .. } => &[],
        }
    }

    pub fn output(&self) -> Option<i64> {
        match self {
            PNode::Leaf { output } => *output,
            PNode::Internal { .. } => None,
        }
    }

    pub fn depth(&self) -> usize {
        self.children()
            .iter()
            .map(|c| 1 + c.depth())
            .max()
            .unwrap_or(0)
    }

    fn min_depth(&self) -> usize {
        self.children()
            .iter()
            .map(|c| 1 + c.min_depth())
            .min()
            .unwrap_or(0)
    }

    fn max_bits(&self) -> usize {
        self.children()
            .iter()
            .zip(self.labels())
            .map(|(c, l)| l.len() + c.max_bits())
            .max()
            .unwrap_or(0)
    }

    fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children().iter().map(PNode::leaf_count).sum()
        }
    }

    pub fn node_at(&self, path: &[usize]) -> Option<&PNode> {
        let mut v = self;
        for &i in path {
            v = v.children().get(i)?;
        }
        Some(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub weight: f64,
    pub root: PNode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolTree {
    x_size: usize,
    y_size: usize,
    branches: Vec<Branch>,
}

fn validate_pnode(v: &PNode, x_size: usize, y_size: usize) -> Result<()> {
    if let PNode::Internal {
        owner,
        labels,
        children,
        table,
    } = v
    {
        if children.is_empty() {
            return Err(Error::InvalidProtocol(
                "internal node without children".into(),
            ));
        }
        if labels.len() != children.len() {
            return Err(Error::InvalidProtocol(format!(
                "{} labels for {} children",
                labels.len(),
                children.len()
            )));
        }
        check_prefix_free(labels).map_err(|e| Error::InvalidProtocol(e.to_string()))?;
        let inputs = match owner {
            Role::A => x_size,
            Role::B => y_size,
        };
        if table.len() != inputs {
            return Err(Error::InvalidProtocol(format!(
                "node owned by {owner} has {} table rows for {inputs} inputs",
                table.len()
            )));
        }
        if let Some(d) = table.iter().find(|d| d.len() != children.len()) {
            return Err(Error::InvalidProtocol(format!(
                "table row over {} children at a node with {}",
                d.len(),
                children.len()
            )));
        }
        for c in children {
            validate_pnode(c, x_size, y_size)?;
        }
    }
    Ok(())
}

impl ProtocolTree {
    pub fn new(x_size: usize, y_size: usize, branches: Vec<Branch>) -> Result<Self> {
        if x_size == 0 || y_size == 0 {
            return Err(Error::InvalidProtocol(
                "input universes must be non-empty".into(),
            ));
        }
        if branches.is_empty() {
            return Err(Error::InvalidProtocol("no branches".into()));
        }
        let weights = Dist::new(branches.iter().map(|b| b.weight).collect())
            .map_err(|e| Error::InvalidProtocol(format!("branch weights: {e}")))?;
        for b in &branches {
            validate_pnode(&b.root, x_size, y_size)?;
        }
        let branches = branches
            .into_iter()
            .zip(weights.probs())
            .map(|(b, &w)| Branch {
                weight: w,
                root: b.root,
            })
            .collect();
        Ok(Self {
            x_size,
            y_size,
            branches,
        })
    }

    /// Protocol without public randomness.
    pub fn single(x_size: usize, y_size: usize, root: PNode) -> Result<Self> {
        Self::new(x_size, y_size, vec![Branch { weight: 1.0, root }])
    }

    pub fn x_size(&self) -> usize {
        self.x_size
    }

    pub fn y_size(&self) -> usize {
        self.y_size
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch(&self, r: usize) -> Option<&PNode> {
        self.branches.get(r).map(|b| &b.root)
    }

    /// The protocol with public randomness fixed to `r`.
    pub fn fix_branch(&self, r: usize) -> Result<ProtocolTree> {
        let root = self
            .branch(r)
            .ok_or_else(|| Error::InvalidParameter(format!("no branch {r}")))?
            .clone();
        ProtocolTree::single(self.x_size, self.y_size, root)
    }

    pub fn depth(&self) -> usize {
        self.branches
            .iter()
            .map(|b| b.root.depth())
            .max()
            .unwrap_or(0)
    }

    /// Every branch has all leaves at the same depth and one owner per level.
    pub fn uniform_rounds(&self) -> Option<(usize, Vec<Role>)> {
        let depth = self.depth();
        let mut owners: Vec<Option<Role>> = vec![None; depth];
        fn walk(v: &PNode, d: usize, owners: &mut [Option<Role>]) -> bool {
            match v.owner() {
                None => true,
                Some(o) => {
                    if owners[d].is_some_and(|x| x != o) {
                        return false;
                    }
                    owners[d] = Some(o);
                    v.children().iter().all(|c| walk(c, d + 1, owners))
                }
            }
        }
        for b in &self.branches {
            if b.root.min_depth() != depth || !walk(&b.root, 0, &mut owners) {
                return None;
            }
        }
        Some((
            depth,
            owners
                .into_iter()
                .map(|o| o.expect("uniform depth"))
                .collect(),
        ))
    }

    fn check_prior(&self, mu: &JointDist) -> Result<()> {
        if mu.rows() != self.x_size || mu.cols() != self.y_size {
            return Err(Error::UniverseMismatch {
                left: mu.rows() * mu.cols(),
                right: self.x_size * self.y_size,
            });
        }
        Ok(())
    }
}

/// Sampled run of a protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub branch: usize,
    pub path: Vec<usize>,
    pub labels: Vec<String>,
    pub output: Option<i64>,
}

impl Transcript {
    /// Message bits, labels concatenated.
    pub fn bits(&self) -> String {
        self.labels.concat()
    }
}

/// Walks branch `r` sampling each node from the owner's row.
pub fn run_protocol<R: Rng>(
    pi: &ProtocolTree,
    x: usize,
    y: usize,
    r: usize,
    rng: &mut R,
) -> Result<Transcript> {
    if x >= pi.x_size || y >= pi.y_size {
        return Err(Error::InvalidParameter(format!(
            "input ({x}, {y}) out of range"
        )));
    }
    let mut v = pi
        .branch(r)
        .ok_or_else(|| Error::InvalidParameter(format!("no branch {r}")))?;
    let mut t = Transcript {
        branch: r,
        path: Vec::new(),
        labels: Vec::new(),
        output: None,
    };
    while let PNode::Internal {
        owner,
        labels,
        children,
        table,
    } = v
    {
        let d = &table[if *owner == Role::A { x } else { y }];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = d
            .probs()
            .iter()
            .rposition(|&p| p > 0.0)
            .expect("non-empty support");
        for (i, &p) in d.probs().iter().enumerate() {
            acc += p;
            if p > 0.0 && u < acc {
                pick = i;
                break;
            }
        }
        t.path.push(pick);
        t.labels.push(labels[pick].clone());
        v = &children[pick];
    }
    t.output = v.output();
    Ok(t)
}

/// Draws a branch index by weight.
pub fn sample_branch<R: Rng>(pi: &ProtocolTree, rng: &mut R) -> usize {
    sample_index(pi.branches.iter().map(|b| b.weight), rng)
}

pub(crate) fn sample_index<R: Rng>(
    weights: impl Iterator<Item = f64> + Clone,
    rng: &mut R,
) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Leaf of a transcript index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptInfo {
    pub branch: usize,
    pub path: Vec<usize>,
    pub bits: String,
    pub output: Option<i64>,
}

/// Exact joint law of `(X, Y, transcript)`.
#[derive(Debug, Clone)]
pub struct TranscriptDist {
    /// Axes `[X, Y, T]`.
    pub table: JointTable,
    pub transcripts: Vec<TranscriptInfo>,
}

impl TranscriptDist {
    pub fn transcript_index(&self, branch: usize, path: &[usize]) -> Option<usize> {
        self.transcripts
            .iter()
            .position(|t| t.branch == branch && t.path == path)
    }

    /// Marginal over transcripts.
    pub fn transcript_marginal(&self) -> Vec<f64> {
        self.table.marginal(&[2]).expect("axis 2").probs().to_vec()
    }

    /// Law of the transcript given the inputs, `None` if `μ(x, y) = 0`.
    pub fn given_inputs(&self, x: usize, y: usize) -> Option<Vec<f64>> {
        let shape = self.table.shape();
        let t = shape[2];
        let start = (x * shape[1] + y) * t;
        let row = &self.table.probs()[start..start + t];
        let z: f64 = row.iter().sum();
        (z > 0.0).then(|| row.iter().map(|p| p / z).collect())
    }

    /// Axes `[R, X, Y, T]`, splitting out the branch index.
    pub fn with_branch_axis(&self, branches: usize) -> Result<JointTable> {
        let shape = self.table.shape();
        let (nx, ny, nt) = (shape[0], shape[1], shape[2]);
        let mut probs = vec![0.0; branches * nx * ny * nt];
        for x in 0..nx {
            for y in 0..ny {
                for (t, info) in self.transcripts.iter().enumerate() {
                    let p = self.table.probs()[(x * ny + y) * nt + t];
                    probs[((info.branch * nx + x) * ny + y) * nt + t] = p;
                }
            }
        }
        JointTable::new(vec![branches, nx, ny, nt], probs)
    }
}

pub fn transcript_distribution(pi: &ProtocolTree, mu: &JointDist) -> Result<TranscriptDist> {
    transcript_distribution_capped(pi, mu, STATE_CAP)
}

pub fn transcript_distribution_capped(
    pi: &ProtocolTree,
    mu: &JointDist,
    cap: usize,
) -> Result<TranscriptDist> {
    pi.check_prior(mu)?;
    let leaves: usize = pi.branches.iter().map(|b| b.root.leaf_count()).sum();
    let states = pi.x_size.saturating_mul(pi.y_size).saturating_mul(leaves);
    if states > cap {
        return Err(Error::StateSpaceExceeded { states, cap });
    }

    let mut transcripts = Vec::with_capacity(leaves);
    fn list(
        v: &PNode,
        branch: usize,
        path: &mut Vec<usize>,
        bits: &mut String,
        out: &mut Vec<TranscriptInfo>,
    ) {
        match v {
            PNode::Leaf { output } => out.push(TranscriptInfo {
                branch,
                path: path.clone(),
                bits: bits.clone(),
                output: *output,
            }),
            PNode::Internal {
                children, labels, ..
            } => {
                for (i, (c, l)) in children.iter().zip(labels).enumerate() {
                    path.push(i);
                    bits.push_str(l);
                    list(c, branch, path, bits, out);
                    bits.truncate(bits.len() - l.len());
                    path.pop();
                }
            }
        }
    }
    for (r, b) in pi.branches.iter().enumerate() {
        list(
            &b.root,
            r,
            &mut Vec::new(),
            &mut String::new(),
            &mut transcripts,
        );
    }

    fn fill(v: &PNode, x: usize, y: usize, mass: f64, out: &mut [f64], next: &mut usize) {
        match v {
            PNode::Leaf { .. } => {
                out[*next] = mass;
                *next += 1;
            }
            PNode::Internal {
                owner,
                children,
                table,
                ..
            } => {
                let d = &table[if *owner == Role::A { x } else { y }];
                for (i, c) in children.iter().enumerate() {
                    fill(c, x, y, mass * d.get(i), out, next);
                }
            }
        }
    }
    let mut probs = vec![0.0; states];
    for x in 0..pi.x_size {
        for y in 0..pi.y_size {
            let m = mu.get(x, y);
            let row = &mut probs[(x * pi.y_size + y) * leaves..(x * pi.y_size + y + 1) * leaves];
            let mut next = 0;
            for b in &pi.branches {
                fill(&b.root, x, y, m * b.weight, row, &mut next);
            }
        }
    }
    Ok(TranscriptDist {
        table: JointTable::new(vec![pi.x_size, pi.y_size, leaves], probs)?,
        transcripts,
    })
}

/// `I(Π; X | Y) + I(Π; Y | X)`.
pub fn internal_info_cost(pi: &ProtocolTree, mu: &JointDist) -> Result<f64> {
    let t = transcript_distribution(pi, mu)?;
    internal_from(&t)
}

pub fn internal_from(t: &TranscriptDist) -> Result<f64> {
    Ok(t.table.conditional_mutual_information(&[2], &[0], &[1])?
        + t.table.conditional_mutual_information(&[2], &[1], &[0])?)
}

/// `I(XY; Π)`.
pub fn external_info_cost(pi: &ProtocolTree, mu: &JointDist) -> Result<f64> {
    let t = transcript_distribution(pi, mu)?;
    t.table.mutual_information(&[0, 1], &[2])
}

/// Largest number of message bits on any root-to-leaf path.
pub fn comm_complexity(pi: &ProtocolTree) -> usize {
    pi.branches
        .iter()
        .map(|b| b.root.max_bits())
        .max()
        .unwrap_or(0)
}

// JSON: {"inputs": {"x": nx, "y": ny}, "branches": [{"weight": w, "root": node}]}
// or {"inputs": ..., "root": node}; node = {"label"?, "owner", "table":
// {"<input>": [probs]}, "children": [...]} or {"label"?, "output"}.

#[derive(Debug, Serialize, Deserialize)]
struct RawInputs {
    x: usize,
    y: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawTable {
    Keyed(BTreeMap<String, Dist>),
    Rows(Vec<Dist>),
}

#[derive(Debug, Serialize, Deserialize)]
struct RawPNode {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    owner: Option<Role>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    table: Option<RawTable>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    children: Option<Vec<RawPNode>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    output: Option<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawBranch {
    weight: f64,
    root: RawPNode,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawProtocol {
    inputs: RawInputs,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    root: Option<RawPNode>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    branches: Option<Vec<RawBranch>>,
}

fn pnode_to_raw(v: &PNode, label: Option<String>) -> RawPNode {
    match v {
        PNode::Leaf { output } => RawPNode {
            label,
            owner: None,
            table: None,
            children: None,
            output: *output,
        },
        PNode::Internal {
            owner,
            labels,
            children,
            table,
        } => RawPNode {
            label,
            owner: Some(*owner),
            table: Some(RawTable::Keyed(
                table
                    .iter()
                    .enumerate()
                    .map(|(i, d)| (i.to_string(), d.clone()))
                    .collect(),
            )),
            children: Some(
                children
                    .iter()
                    .zip(labels)
                    .map(|(c, l)| pnode_to_raw(c, Some(l.clone())))
                    .collect(),
            ),
            output: None,
        },
    }
}

fn pnode_from_raw(raw: RawPNode, path: &str) -> Result<PNode> {
    let Some(kids) = raw.children else {
        if raw.owner.is_some() || raw.table.is_some() {
            return Err(Error::InvalidProtocol(format!(
                "{path}: leaf carries owner or table"
            )));
        }
        return Ok(PNode::Leaf { output: raw.output });
    };
    let owner = raw
        .owner
        .ok_or_else(|| Error::InvalidProtocol(format!("{path}: missing owner")))?;
    let table = match raw
        .table
        .ok_or_else(|| Error::InvalidProtocol(format!("{path}: missing table")))?
    {
        RawTable::Rows(rows) => rows,
        RawTable::Keyed(map) => {
            let mut rows: Vec<(usize, Dist)> = map
                .into_iter()
                .map(|(k, d)| {
                    k.parse::<usize>().map(|i| (i, d)).map_err(|_| {
                        Error::InvalidProtocol(format!(
                            "{path}: table key {k:?} is not an input index"
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            rows.sort_by_key(|(i, _)| *i);
            if rows.iter().enumerate().any(|(i, (k, _))| i != *k) {
                return Err(Error::InvalidProtocol(format!(
                    "{path}: table keys must be 0..n-1"
                )));
            }
            rows.into_iter().map(|(_, d)| d).collect()
        }
    };
    let defaults = default_labels(kids.len());
    let mut labels = Vec::with_capacity(kids.len());
    let mut children = Vec::with_capacity(kids.len());
    for (i, mut k) in kids.into_iter().enumerate() {
        let label = k.label.take().unwrap_or_else(|| defaults[i].clone());
        children.push(pnode_from_raw(k, &format!("{path}/{label}"))?);
        labels.push(label);
    }
    Ok(PNode::Internal {
        owner,
        labels,
        children,
        table,
    })
}

impl Serialize for ProtocolTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let inputs = RawInputs {
            x: self.x_size,
            y: self.y_size,
        };
        let raw = if self.branches.len() == 1 {
            RawProtocol {
                inputs,
                root: Some(pnode_to_raw(&self.branches[0].root, None)),
                branches: None,
            }
        } else {
            RawProtocol {
                inputs,
                root: None,
                branches: Some(
                    self.branches
                        .iter()
                        .map(|b| RawBranch {
                            weight: b.weight,
                            root: pnode_to_raw(&b.root, None),
                        })
                        .collect(),
                ),
            }
        };
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProtocolTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = RawProtocol::deserialize(d)?;
        let branches = match (raw.root, raw.branches) {
            (Some(root), None) => vec![Branch {
                weight: 1.0,
                root: pnode_from_raw(root, "root").map_err(D::Error::custom)?,
            }],
            (None, Some(bs)) => bs
                .into_iter()
                .enumerate()
                .map(|(i, b)| {
                    Ok(Branch {
                        weight: b.weight,
                        root: pnode_from_raw(b.root, &format!("branch {i}"))?,
                    })
                })
                .collect::<Result<_>>()
                .map_err(D::Error::custom)?,
            _ => {
                return Err(D::Error::custom(
                    "exactly one of \"root\" and \"branches\" is required",
                ))
            }
        };
        ProtocolTree::new(raw.inputs.x, raw.inputs.y, branches).map_err(D::Error::custom)
    }
}
