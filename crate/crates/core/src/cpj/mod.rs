//! Correlated pointer jumping.
//!
//! An instance is a rooted tree; each internal node carries two
//! distributions over its children, one known to each player, and is owned
//! by one of them. Ownership alternates level by level. The correct leaf
//! distribution follows the owner's distribution at every node.

mod gen;
mod sample;
mod solve;

pub use gen::{
    label_mass, promise_instance, promise_labels, random_instance, with_divergence_at_most,
    zero_divergence, InstanceParams,
};
pub use sample::{
    instance_t_max, max_log_ratio, path_bound, path_stats, per_node_bound, sample_path,
    sample_path_cfg, sample_path_with, t_max_for_ratio, walker_path_costs, CpjParty, CpjRun,
    NodeRecord, PathSample, PathStats, ProductWalker, SideWalker, Walker, TAG_NODE,
};
pub use solve::{replicas_for, solve_cpj, solve_cpj_n, SolveRun, SolveRunN};

use serde::{Deserialize, Serialize};

use crate::engine::Role;
use crate::error::{Error, Result};
use crate::info::Dist;

/// Cap on materialized product sizes.
pub const PRODUCT_NODE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum CpjNode {
    Leaf {
        output: Option<i64>,
    },
    Internal {
        owner: Role,
        labels: Vec<String>,
        children: Vec<CpjNode>,
        dist_a: Dist,
        dist_b: Dist,
    },
}

impl CpjNode {
    pub fn leaf(output: i64) -> Self {
        CpjNode::Leaf {
            output: Some(output),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, CpjNode::Leaf { .. })
    }

    pub fn owner(&self) -> Option<Role> {
        match self {
            CpjNode::Internal { owner, .. } => Some(*owner),
            CpjNode::Leaf { .. } => None,
        }
    }

    pub fn children(&self) -> &[CpjNode] {
        match self {
            CpjNode::Internal { children, .. } => children,
            CpjNode::Leaf { .. } => &[],
        }
    }

    pub fn labels(&self) -> &[String] {
        match self {
            CpjNode::Internal { labels, .. } => labels,
            CpjNode::Leaf { .. } => &[],
        }
    }

    pub fn output(&self) -> Option<i64> {
        match self {
            CpjNode::Leaf { output } => *output,
            CpjNode::Internal { .. } => None,
        }
    }

    /// The distribution held by `side`.
    pub fn dist(&self, side: Role) -> Option<&Dist> {
        match self {
            CpjNode::Internal { dist_a, dist_b, .. } => Some(match side {
                Role::A => dist_a,
                Role::B => dist_b,
            }),
            CpjNode::Leaf { .. } => None,
        }
    }

    /// The owner's distribution.
    pub fn owner_dist(&self) -> Option<&Dist> {
        self.owner().and_then(|o| self.dist(o))
    }

    fn depth(&self) -> usize {
        self.children()
            .iter()
            .map(|c| 1 + c.depth())
            .max()
            .unwrap_or(0)
    }

    fn min_leaf_depth(&self) -> usize {
        self.children()
            .iter()
            .map(|c| 1 + c.min_leaf_depth())
            .min()
            .unwrap_or(0)
    }

    fn count(&self) -> usize {
        1 + self.children().iter().map(CpjNode::count).sum::<usize>()
    }
}

/// Checks that labels are non-empty binary strings with no label a prefix
/// of another.
pub fn check_prefix_free(labels: &[String]) -> Result<()> {
    for (i, a) in labels.iter().enumerate() {
        if a.is_empty() || !a.bytes().all(|c| c == b'0' || c == b'1') {
            return Err(Error::InvalidInstance(format!(
                "label {a:?} is not a binary string"
            )));
        }
        for (j, b) in labels.iter().enumerate() {
            if i != j && b.starts_with(a.as_str()) {
                return Err(Error::InvalidInstance(format!(
                    "label {a:?} is a prefix of {b:?}"
                )));
            }
        }
    }
    Ok(())
}

/// Default child labels: `"0"`, `"1"` for two children, otherwise fixed-width
/// binary codes.
pub fn default_labels(n: usize) -> Vec<String> {
    let width = (usize::BITS - n.saturating_sub(1).leading_zeros()).max(1) as usize;
    (0..n).map(|i| format!("{i:0width$b}")).collect()
}

fn validate_node(node: &CpjNode, expected_owner: Role) -> Result<()> {
    if let CpjNode::Internal {
        owner,
        labels,
        children,
        dist_a,
        dist_b,
    } = node
    {
        if *owner != expected_owner {
            return Err(Error::InvalidInstance(format!(
                "node owned by {owner} where ownership alternation requires {expected_owner}"
            )));
        }
        if children.is_empty() {
            return Err(Error::InvalidInstance(
                "internal node without children".into(),
            ));
        }
        if labels.len() != children.len()
            || dist_a.len() != children.len()
            || dist_b.len() != children.len()
        {
            return Err(Error::InvalidInstance(format!(
                "node with {} children has {} labels, |distA| = {}, |distB| = {}",
                children.len(),
                labels.len(),
                dist_a.len(),
                dist_b.len()
            )));
        }
        check_prefix_free(labels)?;
        for c in children {
            validate_node(c, owner.other())?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpjInstance {
    root: CpjNode,
    rounds: usize,
}

impl CpjInstance {
    /// `rounds` defaults to the tree depth.
    pub fn new(root: CpjNode, rounds: Option<usize>) -> Result<Self> {
        let owner = root
            .owner()
            .ok_or_else(|| Error::InvalidInstance("root must be internal".into()))?;
        validate_node(&root, owner)?;
        let depth = root.depth();
        let rounds = rounds.unwrap_or(depth);
        if rounds < 1 || depth > rounds {
            return Err(Error::InvalidInstance(format!(
                "depth {depth} with rounds {rounds}"
            )));
        }
        Ok(Self { root, rounds })
    }

    pub fn root(&self) -> &CpjNode {
        &self.root
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn first_owner(&self) -> Role {
        self.root.owner().expect("validated")
    }

    pub fn node_count(&self) -> usize {
        self.root.count()
    }

    /// Every leaf sits at depth `rounds`.
    pub fn is_uniform_depth(&self) -> bool {
        self.root.min_leaf_depth() == self.rounds && self.root.depth() == self.rounds
    }

    /// Follows child indices from the root.
    pub fn node_at(&self, path: &[usize]) -> Option<&CpjNode> {
        let mut v = &self.root;
        for &i in path {
            v = v.children().get(i)?;
        }
        Some(v)
    }

    pub fn labels_of(&self, path: &[usize]) -> Option<Vec<String>> {
        let mut v = &self.root;
        let mut out = Vec::with_capacity(path.len());
        for &i in path {
            out.push(v.labels().get(i)?.clone());
            v = &v.children()[i];
        }
        Some(out)
    }

    /// Leaves in depth-first order with their index paths.
    pub fn leaves(&self) -> Vec<(Vec<usize>, Option<i64>)> {
        fn walk(v: &CpjNode, path: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, Option<i64>)>) {
            match v {
                CpjNode::Leaf { output } => out.push((path.clone(), *output)),
                CpjNode::Internal { children, .. } => {
                    for (i, c) in children.iter().enumerate() {
                        path.push(i);
                        walk(c, path, out);
                        path.pop();
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut Vec::new(), &mut out);
        out
    }

    /// Same tree with only one player's distributions kept meaningful; the
    /// other side is overwritten with the kept one.
    pub fn side(&self, side: Role) -> CpjInstance {
        fn strip(v: &CpjNode, side: Role) -> CpjNode {
            match v {
                CpjNode::Leaf { output } => CpjNode::Leaf { output: *output },
                CpjNode::Internal {
                    owner,
                    labels,
                    children,
                    ..
                } => {
                    let d = v.dist(side).expect("internal").clone();
                    CpjNode::Internal {
                        owner: *owner,
                        labels: labels.clone(),
                        children: children.iter().map(|c| strip(c, side)).collect(),
                        dist_a: d.clone(),
                        dist_b: d,
                    }
                }
            }
        }
        CpjInstance {
            root: strip(&self.root, side),
            rounds: self.rounds,
        }
    }
}

/// Signed divergence cost of child `w` of `v`: `log₂(owner(w) / other(w))`.
///
/// Infinite when only the owner gives `w` mass; zero when neither does.
pub fn edge_divergence(v: &CpjNode, w: usize) -> Result<f64> {
    let owner = v
        .owner()
        .ok_or_else(|| Error::InvalidInstance("leaf has no children".into()))?;
    let own = v.dist(owner).expect("internal").probs();
    let other = v.dist(owner.other()).expect("internal").probs();
    if w >= own.len() {
        return Err(Error::InvalidInstance(format!("child {w} out of range")));
    }
    let (num, den) = (own[w], other[w]);
    Ok(match (num > 0.0, den > 0.0) {
        (false, _) => {
            if den > 0.0 {
                f64::NEG_INFINITY
            } else {
                0.0
            }
        }
        (true, false) => f64::INFINITY,
        (true, true) => (num / den).log2(),
    })
}

/// Divergence cost of a root-to-node path given as child indices.
pub fn path_divergence(f: &CpjInstance, path: &[usize]) -> Result<f64> {
    let mut v = f.root();
    let mut total = 0.0;
    for &i in path {
        total += edge_divergence(v, i)?;
        v = v
            .children()
            .get(i)
            .ok_or_else(|| Error::InvalidInstance(format!("child {i} out of range")))?;
    }
    Ok(total)
}

/// Sum of `max(0, cost)` over the path's edges.
pub fn path_divergence_clamped(f: &CpjInstance, path: &[usize]) -> Result<f64> {
    let mut v = f.root();
    let mut total = 0.0;
    for &i in path {
        total += edge_divergence(v, i)?.max(0.0);
        v = &v.children()[i];
    }
    Ok(total)
}

/// Leaf distribution when every node follows its owner, aligned with
/// [`CpjInstance::leaves`].
pub fn correct_distribution(f: &CpjInstance) -> Dist {
    fn walk(v: &CpjNode, mass: f64, out: &mut Vec<f64>) {
        match v {
            CpjNode::Leaf { .. } => out.push(mass),
            CpjNode::Internal { children, .. } => {
                let d = v.owner_dist().expect("internal");
                for (i, c) in children.iter().enumerate() {
                    walk(c, mass * d.get(i), out);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(f.root(), 1.0, &mut out);
    Dist::from_weights(out).expect("owner distributions are normalized")
}

/// Expected divergence cost of a path drawn from the correct distribution.
pub fn instance_divergence(f: &CpjInstance) -> f64 {
    fn walk(v: &CpjNode) -> f64 {
        match v {
            CpjNode::Leaf { .. } => 0.0,
            CpjNode::Internal { children, .. } => {
                let d = v.owner_dist().expect("internal");
                let mut total = 0.0;
                for (i, c) in children.iter().enumerate() {
                    let p = d.get(i);
                    if p > 0.0 {
                        total += p * (edge_divergence(v, i).expect("in range") + walk(c));
                    }
                }
                total
            }
        }
    }
    walk(f.root())
}

/// Product of instances that share depth and first owner. Children of a
/// product node are all combinations of component children (component 0
/// most significant); labels concatenate; distributions multiply.
pub fn product_instance(instances: &[CpjInstance]) -> Result<CpjInstance> {
    let first = instances
        .first()
        .ok_or_else(|| Error::InvalidParameter("no instances".into()))?;
    for f in instances {
        if f.rounds() != first.rounds() || !f.is_uniform_depth() {
            return Err(Error::InvalidInstance(format!(
                "product needs every leaf at depth {}; got an instance of rounds {} (uniform: {})",
                first.rounds(),
                f.rounds(),
                f.is_uniform_depth()
            )));
        }
        if f.first_owner() != first.first_owner() {
            return Err(Error::InvalidInstance(
                "product components disagree on ownership".into(),
            ));
        }
    }
    let mut size = 1usize;
    let mut level = 1usize;
    for _ in 0..first.rounds() {
        let width: usize = instances
            .iter()
            .map(|f| f.root().children().len())
            .product();
        level = level.saturating_mul(width.max(1));
        size = size.saturating_add(level);
        if size > PRODUCT_NODE_CAP {
            return Err(Error::StateSpaceExceeded {
                states: size,
                cap: PRODUCT_NODE_CAP,
            });
        }
    }

    fn build(nodes: &[&CpjNode]) -> CpjNode {
        if nodes[0].is_leaf() {
            // Single-component products keep the output; wider ones cannot
            // fold several outputs into one value.
            let output = if nodes.len() == 1 {
                nodes[0].output()
            } else {
                None
            };
            return CpjNode::Leaf { output };
        }
        let owner = nodes[0].owner().expect("internal");
        let mut combos: Vec<(Vec<usize>, String, f64, f64)> =
            vec![(Vec::new(), String::new(), 1.0, 1.0)];
        for v in nodes {
            let (da, db) = (
                v.dist(Role::A).expect("internal"),
                v.dist(Role::B).expect("internal"),
            );
            let mut next = Vec::with_capacity(combos.len() * v.children().len());
            for (idx, label, pa, pb) in &combos {
                for (i, l) in v.labels().iter().enumerate() {
                    let mut idx = idx.clone();
                    idx.push(i);
                    next.push((idx, format!("{label}{l}"), pa * da.get(i), pb * db.get(i)));
                }
            }
            combos = next;
        }
        let children = combos
            .iter()
            .map(|(idx, ..)| {
                let kids: Vec<&CpjNode> = nodes
                    .iter()
                    .zip(idx)
                    .map(|(v, &i)| &v.children()[i])
                    .collect();
                build(&kids)
            })
            .collect();
        CpjNode::Internal {
            owner,
            labels: combos.iter().map(|c| c.1.clone()).collect(),
            children,
            dist_a: Dist::from_weights(combos.iter().map(|c| c.2).collect())
                .expect("product of distributions"),
            dist_b: Dist::from_weights(combos.iter().map(|c| c.3).collect())
                .expect("product of distributions"),
        }
    }

    let roots: Vec<&CpjNode> = instances.iter().map(CpjInstance::root).collect();
    CpjInstance::new(build(&roots), Some(first.rounds()))
}

// JSON: {"rounds": k, "root": node}; node = {"label"?, "owner", "distA",
// "distB", "children": [node...]} or {"label"?, "output"}.

#[derive(Debug, Serialize, Deserialize)]
struct RawNode {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    owner: Option<Role>,
    #[serde(rename = "distA", skip_serializing_if = "Option::is_none", default)]
    dist_a: Option<Dist>,
    #[serde(rename = "distB", skip_serializing_if = "Option::is_none", default)]
    dist_b: Option<Dist>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    children: Option<Vec<RawNode>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    output: Option<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawInstance {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    rounds: Option<usize>,
    root: RawNode,
}

fn to_raw(v: &CpjNode, label: Option<String>) -> RawNode {
    match v {
        CpjNode::Leaf { output } => RawNode {
            label,
            owner: None,
            dist_a: None,
            dist_b: None,
            children: None,
            output: *output,
        },
        CpjNode::Internal {
            owner,
            labels,
            children,
            dist_a,
            dist_b,
        } => RawNode {
            label,
            owner: Some(*owner),
            dist_a: Some(dist_a.clone()),
            dist_b: Some(dist_b.clone()),
            children: Some(
                children
                    .iter()
                    .zip(labels)
                    .map(|(c, l)| to_raw(c, Some(l.clone())))
                    .collect(),
            ),
            output: None,
        },
    }
}

fn from_raw(raw: RawNode, path: &str) -> Result<CpjNode> {
    match raw.children {
        None => {
            if raw.dist_a.is_some() || raw.dist_b.is_some() || raw.owner.is_some() {
                return Err(Error::InvalidInstance(format!(
                    "{path}: leaf carries owner or distributions"
                )));
            }
            Ok(CpjNode::Leaf { output: raw.output })
        }
        Some(kids) => {
            let owner = raw
                .owner
                .ok_or_else(|| Error::InvalidInstance(format!("{path}: missing owner")))?;
            let dist_a = raw
                .dist_a
                .ok_or_else(|| Error::InvalidInstance(format!("{path}: missing distA")))?;
            let dist_b = raw
                .dist_b
                .ok_or_else(|| Error::InvalidInstance(format!("{path}: missing distB")))?;
            let defaults = default_labels(kids.len());
            let mut labels = Vec::with_capacity(kids.len());
            let mut children = Vec::with_capacity(kids.len());
            for (i, mut k) in kids.into_iter().enumerate() {
                let label = k.label.take().unwrap_or_else(|| defaults[i].clone());
                children.push(from_raw(k, &format!("{path}/{label}"))?);
                labels.push(label);
            }
            Ok(CpjNode::Internal {
                owner,
                labels,
                children,
                dist_a,
                dist_b,
            })
        }
    }
}

impl Serialize for CpjInstance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawInstance {
            rounds: Some(self.rounds),
            root: to_raw(&self.root, None),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CpjInstance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawInstance::deserialize(d)?;
        let root = from_raw(raw.root, "root").map_err(serde::de::Error::custom)?;
        CpjInstance::new(root, raw.rounds).map_err(serde::de::Error::custom)
    }
}
