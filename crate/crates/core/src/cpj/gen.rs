//! Seeded instance generators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{correct_distribution, default_labels, instance_divergence, CpjInstance, CpjNode};
use crate::engine::Role;
use crate::error::{Error, Result};
use crate::info::Dist;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub depth: usize,
    pub branching: usize,
    pub first_owner: Role,
}

impl Default for InstanceParams {
    fn default() -> Self {
        Self {
            depth: 3,
            branching: 2,
            first_owner: Role::A,
        }
    }
}

impl InstanceParams {
    fn check(&self) -> Result<()> {
        if self.depth == 0 || self.branching < 2 {
            return Err(Error::InvalidParameter(format!(
                "depth {} / branching {} (need depth ≥ 1, branching ≥ 2)",
                self.depth, self.branching
            )));
        }
        let leaves = (self.branching as f64).powi(self.depth as i32);
        if leaves > 1e6 {
            return Err(Error::InvalidParameter(format!(
                "{leaves} leaves is too many"
            )));
        }
        Ok(())
    }
}

// Weights in [0.05, 1) keep every log-ratio within about ±4.3 bits for
// binary nodes.
fn random_dist<R: Rng>(rng: &mut R, n: usize) -> Dist {
    Dist::from_weights((0..n).map(|_| rng.random_range(0.05..1.0)).collect())
        .expect("positive weights")
}

/// Uniform-depth instance; leaf outputs are DFS leaf indices.
pub fn random_instance<R: Rng>(params: InstanceParams, rng: &mut R) -> Result<CpjInstance> {
    params.check()?;
    fn build<R: Rng>(
        p: &InstanceParams,
        depth: usize,
        owner: Role,
        next_leaf: &mut i64,
        rng: &mut R,
    ) -> CpjNode {
        if depth == p.depth {
            *next_leaf += 1;
            return CpjNode::leaf(*next_leaf - 1);
        }
        let dist_a = random_dist(rng, p.branching);
        let dist_b = random_dist(rng, p.branching);
        let children = (0..p.branching)
            .map(|_| build(p, depth + 1, owner.other(), next_leaf, rng))
            .collect();
        CpjNode::Internal {
            owner,
            labels: default_labels(p.branching),
            children,
            dist_a,
            dist_b,
        }
    }
    let root = build(&params, 0, params.first_owner, &mut 0, rng);
    CpjInstance::new(root, Some(params.depth))
}

fn map_nodes(v: &CpjNode, f: &mut impl FnMut(&CpjNode) -> CpjNode) -> CpjNode {
    match v {
        CpjNode::Leaf { .. } => f(v),
        CpjNode::Internal { children, .. } => {
            let mapped = f(v);
            match mapped {
                CpjNode::Internal {
                    owner,
                    labels,
                    dist_a,
                    dist_b,
                    ..
                } => CpjNode::Internal {
                    owner,
                    labels,
                    children: children.iter().map(|c| map_nodes(c, f)).collect(),
                    dist_a,
                    dist_b,
                },
                leaf => leaf,
            }
        }
    }
}

/// Moves the non-owner distribution a fraction `lambda` of the way from
/// the owner's distribution to its current value.
fn blend(f: &CpjInstance, lambda: f64) -> CpjInstance {
    let root = map_nodes(f.root(), &mut |v| match v {
        CpjNode::Leaf { output } => CpjNode::Leaf { output: *output },
        CpjNode::Internal {
            owner,
            labels,
            dist_a,
            dist_b,
            ..
        } => {
            let (own, other) = match owner {
                Role::A => (dist_a, dist_b),
                Role::B => (dist_b, dist_a),
            };
            let mixed = if lambda == 0.0 {
                own.clone()
            } else {
                Dist::from_weights(
                    own.probs()
                        .iter()
                        .zip(other.probs())
                        .map(|(p, q)| (1.0 - lambda) * p + lambda * q)
                        .collect(),
                )
                .expect("convex combination")
            };
            let (a, b) = match owner {
                Role::A => (own.clone(), mixed),
                Role::B => (mixed, own.clone()),
            };
            CpjNode::Internal {
                owner: *owner,
                labels: labels.clone(),
                children: Vec::new(),
                dist_a: a,
                dist_b: b,
            }
        }
    });
    CpjInstance::new(root, Some(f.rounds())).expect("shape unchanged")
}

/// Both players hold the owner's distribution everywhere.
pub fn zero_divergence(f: &CpjInstance) -> CpjInstance {
    blend(f, 0.0)
}

/// Pulls the non-owner distributions toward the owner's until the instance
/// divergence is at most `max_div`. Divergence is nondecreasing in the
/// blend weight, so bisection finds the largest admissible weight.
pub fn with_divergence_at_most(f: &CpjInstance, max_div: f64) -> CpjInstance {
    if instance_divergence(f) <= max_div {
        return f.clone();
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if instance_divergence(&blend(f, mid)) <= max_div {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    blend(f, lo)
}

/// Relabels leaves with `+1`/`-1` so that the correct distribution puts
/// mass at least `margin` on `+1`: leaves are taken by decreasing
/// probability until the margin is reached.
pub fn promise_labels(f: &CpjInstance, margin: f64) -> Result<CpjInstance> {
    if !(0.5..=1.0).contains(&margin) {
        return Err(Error::InvalidParameter(format!(
            "margin {margin} outside [1/2, 1]"
        )));
    }
    let probs = correct_distribution(f);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&i, &j| probs.get(j).total_cmp(&probs.get(i)));
    let mut plus = vec![false; probs.len()];
    let mut mass = 0.0;
    for &i in &order {
        if mass >= margin {
            break;
        }
        plus[i] = true;
        mass += probs.get(i);
    }
    let mut next = 0usize;
    let root = map_nodes(f.root(), &mut |v| match v {
        CpjNode::Leaf { .. } => {
            next += 1;
            CpjNode::leaf(if plus[next - 1] { 1 } else { -1 })
        }
        CpjNode::Internal {
            owner,
            labels,
            dist_a,
            dist_b,
            ..
        } => CpjNode::Internal {
            owner: *owner,
            labels: labels.clone(),
            children: Vec::new(),
            dist_a: dist_a.clone(),
            dist_b: dist_b.clone(),
        },
    });
    CpjInstance::new(root, Some(f.rounds()))
}

/// Random instance with promise labels at the given margin.
pub fn promise_instance<R: Rng>(
    params: InstanceParams,
    margin: f64,
    rng: &mut R,
) -> Result<CpjInstance> {
    promise_labels(&random_instance(params, rng)?, margin)
}

/// Probability of `value` among leaf outputs under the correct distribution.
pub fn label_mass(f: &CpjInstance, value: i64) -> f64 {
    correct_distribution(f)
        .probs()
        .iter()
        .zip(f.leaves())
        .filter(|(_, (_, out))| *out == Some(value))
        .map(|(p, _)| p)
        .sum()
}
