//! Protocols as correlated pointer jumping, and their compression.
//!
//! For fixed `(x, y, r)` the instance has the shape of branch `r`. At a node
//! owned by A, A's distribution is its own row for `x`, while B's is A's
//! row averaged over B's posterior on A's input given `y` and the path so
//! far; symmetrically for B's nodes. Each player tracks that posterior
//! itself, so a player's view needs only its own input and the prior.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_branch, sample_index, PNode, ProtocolTree, Transcript, POSTERIOR_GUARD};
use crate::cpj::{
    instance_divergence, max_log_ratio, path_bound, sample_path_with, t_max_for_ratio,
    walker_path_costs, CpjInstance, CpjNode, PathStats, Walker,
};
use crate::engine::Role;
use crate::error::{Error, Result};
use crate::info::{Dist, JointDist};
use crate::onesamp::SamplerConfig;
use crate::sharedrand::SharedSeed;

/// Derivation tag for the seed that draws `(r, x, y)` in [`compress`].
pub const TAG_INPUTS: u64 = 0x21;

/// One player's view of a protocol branch with a Bayes posterior over the
/// other player's input.
#[derive(Debug, Clone)]
pub struct ProtocolWalker {
    pi: Arc<ProtocolTree>,
    branch: usize,
    role: Role,
    input: usize,
    prior: Vec<f64>,
    belief: Vec<f64>,
    path: Vec<usize>,
}

fn normalized(w: &[f64]) -> Option<Vec<f64>> {
    let z: f64 = w.iter().sum();
    (z > POSTERIOR_GUARD).then(|| w.iter().map(|v| v / z).collect())
}

impl ProtocolWalker {
    pub fn new(
        pi: Arc<ProtocolTree>,
        mu: &JointDist,
        branch: usize,
        role: Role,
        input: usize,
    ) -> Result<Self> {
        if pi.branch(branch).is_none() {
            return Err(Error::InvalidParameter(format!("no branch {branch}")));
        }
        let (own, other) = match role {
            Role::A => (pi.x_size(), pi.y_size()),
            Role::B => (pi.y_size(), pi.x_size()),
        };
        if mu.rows() != pi.x_size() || mu.cols() != pi.y_size() {
            return Err(Error::UniverseMismatch {
                left: mu.rows() * mu.cols(),
                right: pi.x_size() * pi.y_size(),
            });
        }
        if input >= own {
            return Err(Error::InvalidParameter(format!(
                "input {input} out of range for {role}"
            )));
        }
        let row: Vec<f64> = (0..other)
            .map(|o| match role {
                Role::A => mu.get(input, o),
                Role::B => mu.get(o, input),
            })
            .collect();
        let prior = normalized(&row).unwrap_or_else(|| vec![1.0 / other as f64; other]);
        Ok(Self {
            pi,
            branch,
            role,
            input,
            belief: prior.clone(),
            prior,
            path: Vec::new(),
        })
    }

    fn node(&self) -> &PNode {
        self.pi
            .branch(self.branch)
            .and_then(|v| v.node_at(&self.path))
            .expect("walker stays on the tree")
    }

    /// Posterior over the other player's input.
    pub fn belief(&self) -> &[f64] {
        &self.belief
    }

    pub fn path(&self) -> &[usize] {
        &self.path
    }
}

impl Walker for ProtocolWalker {
    fn is_leaf(&self) -> bool {
        self.node().is_leaf()
    }

    fn owner(&self) -> Role {
        self.node().owner().unwrap_or(Role::A)
    }

    fn child_dist(&self) -> Result<Dist> {
        let v = self.node();
        let owner = v
            .owner()
            .ok_or_else(|| Error::InvalidProtocol("leaf has no children".into()))?;
        if owner == self.role {
            return Ok(v.table()[self.input].clone());
        }
        let mut mix = vec![0.0; v.children().len()];
        for (row, &w) in v.table().iter().zip(&self.belief) {
            if w > 0.0 {
                for (m, p) in mix.iter_mut().zip(row.probs()) {
                    *m += w * p;
                }
            }
        }
        Dist::from_weights(mix)
    }

    fn label(&self, child: usize) -> String {
        self.node().labels()[child].clone()
    }

    fn descend(&mut self, child: usize) -> Result<()> {
        let v = self.node();
        if child >= v.children().len() {
            return Err(Error::Protocol(format!("child {child} out of range")));
        }
        if v.owner() == Some(self.role.other()) {
            let updated: Vec<f64> = v
                .table()
                .iter()
                .zip(&self.belief)
                .map(|(row, w)| w * row.get(child))
                .collect();
            // Off the support of the prefix, fall back to the prior.
            self.belief = normalized(&updated).unwrap_or_else(|| self.prior.clone());
        }
        self.path.push(child);
        Ok(())
    }

    fn output(&self) -> Option<i64> {
        self.node().output()
    }
}

/// The pointer-jumping instance of `π` at `(x, y, r)`.
pub fn build_cpj(
    pi: &ProtocolTree,
    x: usize,
    y: usize,
    r: usize,
    mu: &JointDist,
) -> Result<CpjInstance> {
    if mu.get(x, y) <= 0.0 {
        return Err(Error::ZeroProbability(format!("μ({x}, {y}) = 0")));
    }
    let pi = Arc::new(pi.clone());
    let wa = ProtocolWalker::new(pi.clone(), mu, r, Role::A, x)?;
    let wb = ProtocolWalker::new(pi, mu, r, Role::B, y)?;
    if wa.is_leaf() {
        return Err(Error::InvalidProtocol(format!("branch {r} has no rounds")));
    }
    fn build(wa: &ProtocolWalker, wb: &ProtocolWalker) -> Result<CpjNode> {
        let v = wa.node();
        if v.is_leaf() {
            return Ok(CpjNode::Leaf { output: v.output() });
        }
        let mut children = Vec::with_capacity(v.children().len());
        for c in 0..v.children().len() {
            let (mut ca, mut cb) = (wa.clone(), wb.clone());
            ca.descend(c)?;
            cb.descend(c)?;
            children.push(build(&ca, &cb)?);
        }
        Ok(CpjNode::Internal {
            owner: wa.owner(),
            labels: v.labels().to_vec(),
            children,
            dist_a: wa.child_dist()?,
            dist_b: wb.child_dist()?,
        })
    }
    CpjInstance::new(build(&wa, &wb)?, None)
}

/// `E_{X,Y,R}[D(F_π(X, Y, R))]`, by enumeration. Branches without rounds
/// contribute zero.
pub fn expected_cpj_divergence(pi: &ProtocolTree, mu: &JointDist) -> Result<f64> {
    let mut total = 0.0;
    for (r, b) in pi.branches().iter().enumerate() {
        if b.root.is_leaf() || b.weight == 0.0 {
            continue;
        }
        for x in 0..pi.x_size() {
            for y in 0..pi.y_size() {
                let m = mu.get(x, y);
                if m > 0.0 {
                    total += b.weight * m * instance_divergence(&build_cpj(pi, x, y, r, mu)?);
                }
            }
        }
    }
    Ok(total)
}

/// Largest reachable owner/other log-ratio over every `(x, y, r)`.
pub fn protocol_max_log_ratio(pi: &ProtocolTree, mu: &JointDist) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (r, b) in pi.branches().iter().enumerate() {
        if b.root.is_leaf() || b.weight == 0.0 {
            continue;
        }
        for x in 0..pi.x_size() {
            for y in 0..pi.y_size() {
                if mu.get(x, y) > 0.0 {
                    worst = worst.max(max_log_ratio(&build_cpj(pi, x, y, r, mu)?));
                }
            }
        }
    }
    Ok(worst)
}

/// Public `t_max` for compressing `copies` parallel copies of `π`.
pub fn protocol_t_max(pi: &ProtocolTree, mu: &JointDist, copies: usize) -> Result<u32> {
    Ok(t_max_for_ratio(
        protocol_max_log_ratio(pi, mu)? * copies as f64,
    ))
}

pub(crate) fn sample_inputs<R: Rng>(mu: &JointDist, rng: &mut R) -> (usize, usize) {
    let i = sample_index(mu.probs().iter().copied(), rng);
    (i / mu.cols(), i % mu.cols())
}

/// Inputs drawn for a compression run; `r` is public, `x` and `y` go to A
/// and B respectively.
pub fn draw_inputs(pi: &ProtocolTree, mu: &JointDist, seed: &SharedSeed) -> (usize, usize, usize) {
    let mut rng = ChaCha8Rng::from_seed(seed.derive(TAG_INPUTS, 0).rng_seed());
    let r = sample_branch(pi, &mut rng);
    let (x, y) = sample_inputs(mu, &mut rng);
    (r, x, y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressRun {
    pub branch: usize,
    pub x: usize,
    pub y: usize,
    pub a: Transcript,
    pub b: Transcript,
    pub stats: PathStats,
    /// Divergence cost of A's path in `F_π(x, y, r)`.
    pub divergence_cost: f64,
    pub bound: f64,
}

/// Compresses one run of `π` with inputs drawn from `μ`.
pub fn compress(
    pi: &ProtocolTree,
    mu: &JointDist,
    eps: f64,
    seed: &SharedSeed,
) -> Result<CompressRun> {
    let cfg = SamplerConfig::new(eps)?.with_t_max(protocol_t_max(pi, mu, 1)?);
    compress_with(&Arc::new(pi.clone()), mu, seed, cfg)
}

pub fn compress_with(
    pi: &Arc<ProtocolTree>,
    mu: &JointDist,
    seed: &SharedSeed,
    cfg: SamplerConfig,
) -> Result<CompressRun> {
    let (r, x, y) = draw_inputs(pi, mu, seed);
    compress_inputs(pi, mu, r, x, y, seed, cfg)
}

/// Compression run on given inputs.
pub fn compress_inputs(
    pi: &Arc<ProtocolTree>,
    mu: &JointDist,
    r: usize,
    x: usize,
    y: usize,
    seed: &SharedSeed,
    cfg: SamplerConfig,
) -> Result<CompressRun> {
    let wa = ProtocolWalker::new(pi.clone(), mu, r, Role::A, x)?;
    let wb = ProtocolWalker::new(pi.clone(), mu, r, Role::B, y)?;
    let (a, b, stats) = sample_path_with(wa.clone(), wb.clone(), seed, cfg)?;
    let costs = walker_path_costs(&wa, &wb, a.path())?;
    let divergence_cost: f64 = costs.iter().sum();
    let clamped: f64 = costs.iter().map(|c| c.max(0.0)).sum();
    let transcript = |p: &crate::cpj::CpjParty<ProtocolWalker>| Transcript {
        branch: r,
        path: p.path().to_vec(),
        labels: p.labels().to_vec(),
        output: p.output(),
    };
    Ok(CompressRun {
        branch: r,
        x,
        y,
        a: transcript(&a),
        b: transcript(&b),
        stats,
        divergence_cost,
        bound: path_bound(divergence_cost, clamped, costs.len(), cfg.eps),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpj::Walker;
    use crate::prototree::{internal_info_cost, random_prior, random_protocol, ProtocolParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn divergence_matches_information_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let params = ProtocolParams {
                depth: 3,
                x_size: 3,
                y_size: 4,
                branches: 2,
                leaf_prob: 0.2,
            };
            let pi = random_protocol(&params, &mut rng).unwrap();
            let mu = random_prior(3, 4, &mut rng);
            let ic = internal_info_cost(&pi, &mu).unwrap();
            let div = expected_cpj_divergence(&pi, &mu).unwrap();
            assert_abs_diff_eq!(ic, div, epsilon = 1e-9);
        }
    }

    #[test]
    fn point_prior_gives_zero_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = ProtocolParams {
            depth: 3,
            x_size: 2,
            y_size: 2,
            branches: 1,
            leaf_prob: 0.0,
        };
        let pi = random_protocol(&params, &mut rng).unwrap();
        let mu = JointDist::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let f = build_cpj(&pi, 0, 1, 0, &mu).unwrap();
        assert!(instance_divergence(&f).abs() < 1e-12);
        assert!(build_cpj(&pi, 1, 1, 0, &mu).is_err());
    }

    #[test]
    fn owner_views_agree_with_the_protocol() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = ProtocolParams {
            depth: 4,
            x_size: 3,
            y_size: 3,
            branches: 1,
            leaf_prob: 0.0,
        };
        let pi = Arc::new(random_protocol(&params, &mut rng).unwrap());
        let mu = random_prior(3, 3, &mut rng);
        let mut wa = ProtocolWalker::new(pi.clone(), &mu, 0, Role::A, 1).unwrap();
        let mut wb = ProtocolWalker::new(pi.clone(), &mu, 0, Role::B, 2).unwrap();
        while !wa.is_leaf() {
            let owner_view = match wa.owner() {
                Role::A => wa.child_dist().unwrap(),
                Role::B => wb.child_dist().unwrap(),
            };
            let row = &wa.node().table()[if wa.owner() == Role::A { 1 } else { 2 }];
            assert_eq!(&owner_view, row);
            assert_abs_diff_eq!(wa.belief().iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(wb.belief().iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            wa.descend(0).unwrap();
            wb.descend(0).unwrap();
        }
    }
}
