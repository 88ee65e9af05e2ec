//! Brute-force reference computations, written against the public tree
//! accessors only.

#![allow(dead_code)]

use std::collections::HashMap;

use infocomp::cpj::{CpjInstance, CpjNode};
use infocomp::engine::Role;
use infocomp::info::JointDist;
use infocomp::prototree::{PNode, ProtocolTree};

/// Transcript key: branch index plus the message bits.
pub type Key = (usize, String);

/// `P[X = x, Y = y, T = t]` as a sparse map.
pub fn transcript_law(pi: &ProtocolTree, mu: &JointDist) -> HashMap<(usize, usize, Key), f64> {
    fn walk(
        v: &PNode,
        x: usize,
        y: usize,
        r: usize,
        bits: &mut String,
        mass: f64,
        out: &mut HashMap<(usize, usize, Key), f64>,
    ) {
        if mass == 0.0 {
            return;
        }
        if v.is_leaf() {
            *out.entry((x, y, (r, bits.clone()))).or_insert(0.0) += mass;
            return;
        }
        let row = match v.owner().expect("internal") {
            Role::A => &v.table()[x],
            Role::B => &v.table()[y],
        };
        for (i, c) in v.children().iter().enumerate() {
            let len = bits.len();
            bits.push_str(&v.labels()[i]);
            walk(c, x, y, r, bits, mass * row.get(i), out);
            bits.truncate(len);
        }
    }
    let mut out = HashMap::new();
    for (r, b) in pi.branches().iter().enumerate() {
        for x in 0..mu.rows() {
            for y in 0..mu.cols() {
                walk(
                    &b.root,
                    x,
                    y,
                    r,
                    &mut String::new(),
                    b.weight * mu.get(x, y),
                    &mut out,
                );
            }
        }
    }
    out
}

fn h(masses: impl Iterator<Item = f64>) -> f64 {
    masses.filter(|&p| p > 0.0).map(|p| -p * p.log2()).sum()
}

/// Entropy of the marginal picked out by `key`.
pub fn marginal_entropy<K: std::hash::Hash + Eq>(
    law: &HashMap<(usize, usize, Key), f64>,
    key: impl Fn(&(usize, usize, Key)) -> K,
) -> f64 {
    let mut m: HashMap<K, f64> = HashMap::new();
    for (k, &p) in law {
        *m.entry(key(k)).or_insert(0.0) += p;
    }
    h(m.into_values())
}

pub struct Costs {
    pub internal: f64,
    pub external: f64,
    /// `I(T; XY)`, `I(T; X)`, `I(T; Y | X)`.
    pub chain: (f64, f64, f64),
}

pub fn costs(pi: &ProtocolTree, mu: &JointDist) -> Costs {
    let law = transcript_law(pi, mu);
    let hx = marginal_entropy(&law, |k| k.0);
    let hy = marginal_entropy(&law, |k| k.1);
    let hxy = marginal_entropy(&law, |k| (k.0, k.1));
    let ht = marginal_entropy(&law, |k| k.2.clone());
    let htx = marginal_entropy(&law, |k| (k.0, k.2.clone()));
    let hty = marginal_entropy(&law, |k| (k.1, k.2.clone()));
    let htxy = marginal_entropy(&law, |k| k.clone());
    // I(T;X|Y) = H(TY) + H(XY) - H(Y) - H(TXY)
    let i_x = hty + hxy - hy - htxy;
    let i_y = htx + hxy - hx - htxy;
    let external = ht + hxy - htxy;
    Costs {
        internal: i_x + i_y,
        external,
        chain: (external, ht + hx - htx, i_y),
    }
}

/// Longest root-to-leaf message, in bits.
pub fn comm_complexity(pi: &ProtocolTree) -> usize {
    fn depth_bits(v: &PNode) -> usize {
        v.children()
            .iter()
            .zip(v.labels())
            .map(|(c, l)| l.len() + depth_bits(c))
            .max()
            .unwrap_or(0)
    }
    pi.branches()
        .iter()
        .map(|b| depth_bits(&b.root))
        .max()
        .unwrap_or(0)
}

/// Exact transcript law keyed by `(branch, bits)`.
pub fn transcript_marginal(pi: &ProtocolTree, mu: &JointDist) -> HashMap<Key, f64> {
    let mut m = HashMap::new();
    for ((_, _, t), p) in transcript_law(pi, mu) {
        *m.entry(t).or_insert(0.0) += p;
    }
    m
}

fn cpj_owner_dist(v: &CpjNode) -> &infocomp::info::Dist {
    v.dist(v.owner().expect("internal")).expect("internal")
}

/// Leaf law under the owners' distributions, keyed by index path.
pub fn correct_law(f: &CpjInstance) -> HashMap<Vec<usize>, f64> {
    fn walk(v: &CpjNode, path: &mut Vec<usize>, mass: f64, out: &mut HashMap<Vec<usize>, f64>) {
        if v.is_leaf() {
            out.insert(path.clone(), mass);
            return;
        }
        let d = cpj_owner_dist(v);
        for (i, c) in v.children().iter().enumerate() {
            path.push(i);
            walk(c, path, mass * d.get(i), out);
            path.pop();
        }
    }
    let mut out = HashMap::new();
    walk(f.root(), &mut Vec::new(), 1.0, &mut out);
    out
}

/// Signed divergence cost of an index path and its positive part.
pub fn path_cost(f: &CpjInstance, path: &[usize]) -> (f64, f64) {
    let mut v = f.root();
    let (mut total, mut clamped) = (0.0, 0.0);
    for &i in path {
        let owner = v.owner().expect("internal");
        let (p, q) = (
            v.dist(owner).unwrap().get(i),
            v.dist(owner.other()).unwrap().get(i),
        );
        let c = if p == 0.0 && q == 0.0 {
            0.0
        } else {
            (p / q).log2()
        };
        total += c;
        clamped += c.max(0.0);
        v = &v.children()[i];
    }
    (total, clamped)
}

/// Expected divergence cost of a path drawn from the correct law.
pub fn expected_divergence(f: &CpjInstance) -> f64 {
    correct_law(f)
        .iter()
        .filter(|(_, &p)| p > 0.0)
        .map(|(path, p)| p * path_cost(f, path).0)
        .sum()
}

/// Statistical distance between empirical counts and an exact law.
pub fn distance<K: std::hash::Hash + Eq + Clone>(
    counts: &HashMap<K, u64>,
    exact: &HashMap<K, f64>,
) -> f64 {
    let n: u64 = counts.values().sum();
    if n == 0 {
        return 1.0;
    }
    let mut keys: Vec<&K> = exact.keys().collect();
    keys.extend(counts.keys().filter(|k| !exact.contains_key(k)));
    0.5 * keys
        .into_iter()
        .map(|k| {
            (*counts.get(k).unwrap_or(&0) as f64 / n as f64 - exact.get(k).copied().unwrap_or(0.0))
                .abs()
        })
        .sum::<f64>()
}
