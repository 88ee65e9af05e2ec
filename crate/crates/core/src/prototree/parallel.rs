//! Parallel copies of a protocol and single-copy extraction.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::compress::{draw_inputs, ProtocolWalker};
use super::{Branch, PNode, ProtocolTree, POSTERIOR_GUARD, STATE_CAP};
use crate::cpj::{
    path_bound, sample_path_with, walker_path_costs, PathStats, ProductWalker, Walker,
};
use crate::engine::Role;
use crate::error::{Error, Result};
use crate::info::{Dist, JointDist};
use crate::onesamp::SamplerConfig;
use crate::sharedrand::SharedSeed;

/// Derivation tag for the per-copy input seeds of [`compress_copies`].
pub const TAG_COPY: u64 = 0x22;

/// `μ^n` with copy 0 as the most significant digit on both axes.
pub fn product_prior(mu: &JointDist, n: usize) -> Result<JointDist> {
    let (nx, ny) = (mu.rows(), mu.cols());
    let rows = nx
        .checked_pow(n as u32)
        .filter(|r| r.saturating_mul(ny.pow(n as u32)) <= STATE_CAP);
    let Some(rows) = rows else {
        return Err(Error::StateSpaceExceeded {
            states: usize::MAX,
            cap: STATE_CAP,
        });
    };
    let cols = ny.pow(n as u32);
    let mut probs = vec![0.0; rows * cols];
    for xi in 0..rows {
        for yi in 0..cols {
            let (xs, ys) = (digits(xi, nx, n), digits(yi, ny, n));
            probs[xi * cols + yi] = xs.iter().zip(&ys).map(|(&x, &y)| mu.get(x, y)).product();
        }
    }
    JointDist::new(rows, cols, probs)
}

/// Base-`radix` digits of `v`, most significant first.
fn digits(mut v: usize, radix: usize, n: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    for d in out.iter_mut().rev() {
        *d = v % radix;
        v /= radix;
    }
    out
}

fn product_node(nodes: &[&PNode], x_size: usize, y_size: usize) -> PNode {
    if nodes[0].is_leaf() {
        let output = if nodes.len() == 1 {
            nodes[0].output()
        } else {
            None
        };
        return PNode::Leaf { output };
    }
    let owner = nodes[0].owner().expect("internal");
    let radix = if owner == Role::A { x_size } else { y_size };
    let n = nodes.len();
    let arities: Vec<usize> = nodes.iter().map(|v| v.children().len()).collect();
    let width: usize = arities.iter().product();
    let combos: Vec<Vec<usize>> = (0..width)
        .map(|mut i| {
            let mut idx = vec![0; n];
            for (slot, &a) in idx.iter_mut().zip(&arities).rev() {
                *slot = i % a;
                i /= a;
            }
            idx
        })
        .collect();
    let labels = combos
        .iter()
        .map(|idx| {
            nodes
                .iter()
                .zip(idx)
                .map(|(v, &i)| v.labels()[i].as_str())
                .collect()
        })
        .collect();
    let table = (0..radix.pow(n as u32))
        .map(|input| {
            let ins = digits(input, radix, n);
            let w = combos
                .iter()
                .map(|idx| {
                    nodes
                        .iter()
                        .zip(idx)
                        .zip(&ins)
                        .map(|((v, &c), &x)| v.table()[x].get(c))
                        .product()
                })
                .collect();
            Dist::from_weights(w).expect("product of rows")
        })
        .collect();
    let children = combos
        .iter()
        .map(|idx| {
            let kids: Vec<&PNode> = nodes
                .iter()
                .zip(idx)
                .map(|(v, &i)| &v.children()[i])
                .collect();
            product_node(&kids, x_size, y_size)
        })
        .collect();
    PNode::Internal {
        owner,
        labels,
        children,
        table,
    }
}

/// `π^n`: each round carries one message per copy; inputs and public
/// branches are tuples with copy 0 most significant.
pub fn parallel_protocol(pi: &ProtocolTree, n: usize) -> Result<ProtocolTree> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let (depth, _) = pi.uniform_rounds().ok_or_else(|| {
        Error::InvalidProtocol("parallel copies need one owner per round and uniform depth".into())
    })?;
    let max_arity = pi
        .branches()
        .iter()
        .map(|b| b.root.children().len())
        .max()
        .unwrap_or(1) as f64;
    let inputs = pi.x_size().max(pi.y_size()) as f64;
    let estimate = max_arity.powi((n * depth) as i32)
        * inputs.powi(n as i32)
        * (pi.branches().len() as f64).powi(n as i32);
    if estimate > STATE_CAP as f64 {
        return Err(Error::StateSpaceExceeded {
            states: estimate.min(usize::MAX as f64) as usize,
            cap: STATE_CAP,
        });
    }
    let nb = pi.branches().len();
    let branches = (0..nb.pow(n as u32))
        .map(|bi| {
            let bs = digits(bi, nb, n);
            let roots: Vec<&PNode> = bs.iter().map(|&b| &pi.branches()[b].root).collect();
            Branch {
                weight: bs.iter().map(|&b| pi.branches()[b].weight).product(),
                root: product_node(&roots, pi.x_size(), pi.y_size()),
            }
        })
        .collect();
    ProtocolTree::new(
        pi.x_size().pow(n as u32),
        pi.y_size().pow(n as u32),
        branches,
    )
}

/// Lazy views of `π^n` for given per-copy branches and inputs.
pub fn parallel_walkers(
    pi: &Arc<ProtocolTree>,
    mu: &JointDist,
    branches: &[usize],
    xs: &[usize],
    ys: &[usize],
) -> Result<(ProductWalker<ProtocolWalker>, ProductWalker<ProtocolWalker>)> {
    if branches.len() != xs.len() || xs.len() != ys.len() {
        return Err(Error::InvalidParameter(
            "one branch and one input pair per copy".into(),
        ));
    }
    let side = |role: Role, ins: &[usize]| -> Result<Vec<ProtocolWalker>> {
        branches
            .iter()
            .zip(ins)
            .map(|(&r, &v)| ProtocolWalker::new(pi.clone(), mu, r, role, v))
            .collect()
    };
    Ok((
        ProductWalker::new(side(Role::A, xs)?)?,
        ProductWalker::new(side(Role::B, ys)?)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelRun {
    pub branches: Vec<usize>,
    pub xs: Vec<usize>,
    pub ys: Vec<usize>,
    pub outputs_a: Vec<Option<i64>>,
    pub outputs_b: Vec<Option<i64>>,
    pub stats: PathStats,
    /// Divergence cost of A's path in the product instance.
    pub divergence_cost: f64,
    pub bound: f64,
}

impl ParallelRun {
    pub fn copies(&self) -> usize {
        self.xs.len()
    }
}

/// Compresses `n` independent copies of `π` on one path of the product.
/// Copy `i` draws its branch and inputs from `seed.derive(TAG_COPY, i)`.
pub fn compress_copies(
    pi: &Arc<ProtocolTree>,
    mu: &JointDist,
    n: usize,
    seed: &SharedSeed,
    cfg: SamplerConfig,
) -> Result<ParallelRun> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one copy".into()));
    }
    let draws: Vec<(usize, usize, usize)> = (0..n)
        .map(|i| draw_inputs(pi, mu, &seed.derive(TAG_COPY, i as u64)))
        .collect();
    let branches: Vec<usize> = draws.iter().map(|d| d.0).collect();
    let xs: Vec<usize> = draws.iter().map(|d| d.1).collect();
    let ys: Vec<usize> = draws.iter().map(|d| d.2).collect();
    let (wa, wb) = parallel_walkers(pi, mu, &branches, &xs, &ys)?;
    let (a, b, stats) = sample_path_with(wa.clone(), wb.clone(), seed, cfg)?;
    let costs = walker_path_costs(&wa, &wb, a.path())?;
    let divergence_cost: f64 = costs.iter().sum();
    let clamped: f64 = costs.iter().map(|c| c.max(0.0)).sum();
    let outputs = |w: &ProductWalker<ProtocolWalker>, done: bool| -> Vec<Option<i64>> {
        w.parts()
            .iter()
            .map(|p| if done { p.output() } else { None })
            .collect()
    };
    Ok(ParallelRun {
        outputs_a: outputs(a.walker(), a.reached_leaf()),
        outputs_b: outputs(b.walker(), b.reached_leaf()),
        branches,
        xs,
        ys,
        stats,
        divergence_cost,
        bound: path_bound(divergence_cost, clamped, costs.len(), cfg.eps),
    })
}

struct Embedding {
    n: usize,
    j: usize,
    nx: usize,
    ny: usize,
    x_before: usize,
    y_after: usize,
    /// Prior over A's private `x_{>j}` given the public `y_{>j}`.
    prior_a: Vec<f64>,
    /// Prior over B's private `y_{<j}` given the public `x_{<j}`.
    prior_b: Vec<f64>,
}

impl Embedding {
    fn full_x(&self, x: usize, k: usize) -> usize {
        (self.x_before * self.nx + x) * self.nx.pow((self.n - 1 - self.j) as u32) + k
    }

    fn full_y(&self, y: usize, k: usize) -> usize {
        (k * self.ny + y) * self.ny.pow((self.n - 1 - self.j) as u32) + self.y_after
    }
}

/// Posterior-weighted row mix; `like[k]` multiplies `prior[k]`.
fn mix_rows(prior: &[f64], like: &[f64], row: impl Fn(usize) -> Vec<f64>, width: usize) -> Dist {
    let mut w: Vec<f64> = prior.iter().zip(like).map(|(p, l)| p * l).collect();
    let z: f64 = w.iter().sum();
    if z <= POSTERIOR_GUARD {
        w = prior.to_vec();
    }
    let mut out = vec![0.0; width];
    for (k, &wk) in w.iter().enumerate() {
        if wk > 0.0 {
            for (o, p) in out.iter_mut().zip(row(k)) {
                *o += wk * p;
            }
        }
    }
    Dist::from_weights(out).expect("mixture of rows")
}

fn embed(v: &PNode, e: &Embedding, like_a: &[Vec<f64>], like_b: &[Vec<f64>]) -> PNode {
    let PNode::Internal {
        owner,
        labels,
        children,
        table,
    } = v
    else {
        return PNode::Leaf { output: v.output() };
    };
    let width = children.len();
    let new_table: Vec<Dist> = match owner {
        Role::A => (0..e.nx)
            .map(|x| {
                mix_rows(
                    &e.prior_a,
                    &like_a[x],
                    |k| table[e.full_x(x, k)].probs().to_vec(),
                    width,
                )
            })
            .collect(),
        Role::B => (0..e.ny)
            .map(|y| {
                mix_rows(
                    &e.prior_b,
                    &like_b[y],
                    |k| table[e.full_y(y, k)].probs().to_vec(),
                    width,
                )
            })
            .collect(),
    };
    let new_children = (0..width)
        .map(|c| {
            let step = |like: &[Vec<f64>], full: &dyn Fn(usize, usize) -> usize| -> Vec<Vec<f64>> {
                like.iter()
                    .enumerate()
                    .map(|(v, l)| {
                        let updated: Vec<f64> = l
                            .iter()
                            .enumerate()
                            .map(|(k, w)| w * table[full(v, k)].get(c))
                            .collect();
                        let z: f64 = updated.iter().sum();
                        if z > 0.0 {
                            updated.iter().map(|u| u / z).collect()
                        } else {
                            updated
                        }
                    })
                    .collect()
            };
            match owner {
                Role::A => embed(
                    &children[c],
                    e,
                    &step(like_a, &|x, k| e.full_x(x, k)),
                    like_b,
                ),
                Role::B => embed(
                    &children[c],
                    e,
                    like_a,
                    &step(like_b, &|y, k| e.full_y(y, k)),
                ),
            }
        })
        .collect();
    PNode::Internal {
        owner: *owner,
        labels: labels.clone(),
        children: new_children,
        table: new_table,
    }
}

/// The single-copy protocol `τ` extracted from a protocol `π_n` on `n`
/// copies: public `J`, `x_{<J}`, `y_{>J}`; A privately completes
/// `x_{>J}` given `y_{>J}`, B completes `y_{<J}` given `x_{<J}`; the real
/// inputs sit at coordinate `J`. Private completions are folded into the
/// node tables by Bayes' rule over the path.
pub fn single_copy_from_n(pi_n: &ProtocolTree, mu: &JointDist, n: usize) -> Result<ProtocolTree> {
    let (nx, ny) = (mu.rows(), mu.cols());
    if n == 0
        || nx.checked_pow(n as u32) != Some(pi_n.x_size())
        || ny.checked_pow(n as u32) != Some(pi_n.y_size())
    {
        return Err(Error::InvalidProtocol(format!(
            "protocol inputs {}×{} are not {n} copies of {nx}×{ny}",
            pi_n.x_size(),
            pi_n.y_size()
        )));
    }
    let (mx, my) = (mu.marginal_x(), mu.marginal_y());
    let mut branches = Vec::new();
    for j in 0..n {
        let after = n - 1 - j;
        for x_before in 0..nx.pow(j as u32) {
            let xb = digits(x_before, nx, j);
            let wx: f64 = xb.iter().map(|&x| mx.get(x)).product();
            if wx == 0.0 {
                continue;
            }
            for y_after in 0..ny.pow(after as u32) {
                let ya = digits(y_after, ny, after);
                let wy: f64 = ya.iter().map(|&y| my.get(y)).product();
                if wy == 0.0 {
                    continue;
                }
                let prior_a: Vec<f64> = (0..nx.pow(after as u32))
                    .map(|k| {
                        digits(k, nx, after)
                            .iter()
                            .zip(&ya)
                            .map(|(&x, &y)| mu.get(x, y) / my.get(y))
                            .product()
                    })
                    .collect();
                let prior_b: Vec<f64> = (0..ny.pow(j as u32))
                    .map(|k| {
                        digits(k, ny, j)
                            .iter()
                            .zip(&xb)
                            .map(|(&y, &x)| mu.get(x, y) / mx.get(x))
                            .product()
                    })
                    .collect();
                let e = Embedding {
                    n,
                    j,
                    nx,
                    ny,
                    x_before,
                    y_after,
                    prior_a,
                    prior_b,
                };
                let like_a = vec![vec![1.0; e.prior_a.len()]; nx];
                let like_b = vec![vec![1.0; e.prior_b.len()]; ny];
                for b in pi_n.branches() {
                    if b.weight == 0.0 {
                        continue;
                    }
                    branches.push(Branch {
                        weight: b.weight * wx * wy / n as f64,
                        root: embed(&b.root, &e, &like_a, &like_b),
                    });
                }
            }
        }
    }
    if branches.is_empty() {
        return Err(Error::ZeroProbability(
            "every public preamble has zero probability".into(),
        ));
    }
    ProtocolTree::new(nx, ny, branches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prototree::{
        comm_complexity, internal_info_cost, random_prior, random_protocol, ProtocolParams,
    };
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_params() -> ProtocolParams {
        ProtocolParams {
            depth: 2,
            x_size: 2,
            y_size: 2,
            branches: 1,
            leaf_prob: 0.0,
        }
    }

    fn alternating<R: rand::Rng>(rng: &mut R) -> ProtocolTree {
        loop {
            let pi = random_protocol(&uniform_params(), rng).unwrap();
            if pi.uniform_rounds().is_some() {
                return pi;
            }
        }
    }

    #[test]
    fn one_copy_is_the_protocol() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pi = alternating(&mut rng);
        assert_eq!(parallel_protocol(&pi, 1).unwrap(), pi);
    }

    #[test]
    fn information_adds_over_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..5 {
            let pi = alternating(&mut rng);
            let mu = random_prior(2, 2, &mut rng);
            let pi2 = parallel_protocol(&pi, 2).unwrap();
            let mu2 = product_prior(&mu, 2).unwrap();
            let one = internal_info_cost(&pi, &mu).unwrap();
            assert_abs_diff_eq!(
                internal_info_cost(&pi2, &mu2).unwrap(),
                2.0 * one,
                epsilon = 1e-9
            );
            assert_eq!(comm_complexity(&pi2), 2 * comm_complexity(&pi));
        }
    }

    #[test]
    fn extracted_copy_reveals_at_most_a_share() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let pi = alternating(&mut rng);
            let mu = random_prior(2, 2, &mut rng);
            let pi2 = parallel_protocol(&pi, 2).unwrap();
            let mu2 = product_prior(&mu, 2).unwrap();
            let tau = single_copy_from_n(&pi2, &mu, 2).unwrap();
            assert_eq!(comm_complexity(&tau), comm_complexity(&pi2));
            let ic_tau = internal_info_cost(&tau, &mu).unwrap();
            let ic_n = internal_info_cost(&pi2, &mu2).unwrap();
            assert!(ic_tau <= ic_n / 2.0 + 1e-9, "{ic_tau} > {}", ic_n / 2.0);
        }
    }

    #[test]
    fn one_copy_extraction_is_the_protocol() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let pi = alternating(&mut rng);
        let mu = random_prior(2, 2, &mut rng);
        let tau = single_copy_from_n(&pi, &mu, 1).unwrap();
        assert_abs_diff_eq!(
            internal_info_cost(&tau, &mu).unwrap(),
            internal_info_cost(&pi, &mu).unwrap(),
            epsilon = 1e-12
        );
    }
}
