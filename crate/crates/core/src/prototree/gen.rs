//! Seeded protocol and prior generators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Branch, PNode, ProtocolTree};
use crate::cpj::default_labels;
use crate::engine::Role;
use crate::error::{Error, Result};
use crate::info::{entropy, Dist, JointDist};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Maximum depth.
    pub depth: usize,
    pub x_size: usize,
    pub y_size: usize,
    /// Number of public-randomness branches.
    pub branches: usize,
    /// Chance that a non-root node above full depth is a leaf.
    pub leaf_prob: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            depth: 3,
            x_size: 4,
            y_size: 4,
            branches: 1,
            leaf_prob: 0.0,
        }
    }
}

// Entries are zero with probability 0.15, so some transitions and prefixes
// are impossible.
fn sparse_weights<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(0.15) {
                0.0
            } else {
                rng.random::<f64>().powi(2) + 1e-3
            }
        })
        .collect();
    if w.iter().all(|&v| v == 0.0) {
        w[rng.random_range(0..n)] = 1.0;
    }
    w
}

pub fn random_protocol<R: Rng>(params: &ProtocolParams, rng: &mut R) -> Result<ProtocolTree> {
    if params.depth == 0 || params.x_size == 0 || params.y_size == 0 || params.branches == 0 {
        return Err(Error::InvalidParameter(
            "depth, input sizes and branches must be positive".into(),
        ));
    }
    fn build<R: Rng>(
        p: &ProtocolParams,
        depth: usize,
        owner: Role,
        next: &mut i64,
        rng: &mut R,
    ) -> PNode {
        if depth == p.depth || (depth > 0 && rng.random_bool(p.leaf_prob)) {
            *next += 1;
            return PNode::leaf(*next - 1);
        }
        let arity = if rng.random_bool(0.8) { 2 } else { 3 };
        let inputs = match owner {
            Role::A => p.x_size,
            Role::B => p.y_size,
        };
        let table = (0..inputs)
            .map(|_| Dist::from_weights(sparse_weights(rng, arity)).expect("positive weight"))
            .collect();
        let children = (0..arity)
            .map(|_| build(p, depth + 1, owner.other(), next, rng))
            .collect();
        PNode::Internal {
            owner,
            labels: default_labels(arity),
            children,
            table,
        }
    }
    let weights: Vec<f64> = (0..params.branches)
        .map(|_| rng.random_range(0.1..1.0))
        .collect();
    let total: f64 = weights.iter().sum();
    let branches = weights
        .into_iter()
        .map(|w| {
            let first = if rng.random_bool(0.5) {
                Role::A
            } else {
                Role::B
            };
            Branch {
                weight: w / total,
                root: build(params, 0, first, &mut 0, rng),
            }
        })
        .collect();
    ProtocolTree::new(params.x_size, params.y_size, branches)
}

pub fn random_prior<R: Rng>(x_size: usize, y_size: usize, rng: &mut R) -> JointDist {
    JointDist::new(x_size, y_size, {
        let w = sparse_weights(rng, x_size * y_size);
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    })
    .expect("normalized weights")
}

/// `X` uniform on `n` values; `Y = X` with probability `1 - delta`, else
/// uniform on the other `n - 1` values.
pub fn correlated_prior(n: usize, delta: f64) -> Result<JointDist> {
    if n < 2 || !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidParameter(format!("n = {n}, delta = {delta}")));
    }
    let mut probs = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            probs[x * n + y] = if x == y {
                1.0 - delta
            } else {
                delta / (n - 1) as f64
            } / n as f64;
        }
    }
    JointDist::new(n, n, probs)
}

/// Noise level at which [`correlated_prior`] on 4 values has
/// `H(X|Y) = H(Y|X) = 1`.
pub fn unit_conditional_entropy_delta() -> f64 {
    let f = |d: f64| {
        let h = entropy(&Dist::new(vec![d, 1.0 - d]).expect("valid"));
        h + d * 3f64.log2() - 1.0
    };
    let (mut lo, mut hi) = (0.0, 0.75);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Deterministic six-round protocol on 2-bit inputs: A sends the high bit
/// of `x`, B the high bit of `y`, then the low bits, then each side's
/// parity. The leaf output is `[x = y]`. Paired with the prior that makes
/// its internal information cost 2 bits; its communication is 6 bits.
pub fn compression_test_protocol() -> (ProtocolTree, JointDist) {
    fn bit(b: bool) -> Dist {
        Dist::point(2, b as usize).expect("two symbols")
    }
    // Round i: which party speaks and which bit of its input it reveals.
    fn message(round: usize, v: usize) -> bool {
        match round / 2 {
            0 => v >> 1 & 1 == 1,
            1 => v & 1 == 1,
            _ => (v >> 1 ^ v) & 1 == 1,
        }
    }
    fn build(round: usize, path: &mut Vec<usize>) -> PNode {
        if round == 6 {
            let x = path[0] << 1 | path[2];
            let y = path[1] << 1 | path[3];
            return PNode::leaf((x == y) as i64);
        }
        let owner = if round.is_multiple_of(2) {
            Role::A
        } else {
            Role::B
        };
        let children = (0..2)
            .map(|c| {
                path.push(c);
                let child = build(round + 1, path);
                path.pop();
                child
            })
            .collect();
        PNode::Internal {
            owner,
            labels: default_labels(2),
            children,
            table: (0..4).map(|v| bit(message(round, v))).collect(),
        }
    }
    let pi = ProtocolTree::single(4, 4, build(0, &mut Vec::new())).expect("well-formed");
    let mu = correlated_prior(4, unit_conditional_entropy_delta()).expect("valid parameters");
    (pi, mu)
}
