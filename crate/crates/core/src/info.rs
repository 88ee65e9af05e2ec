//! Exact information measures over finite distributions.
//!
//! All logarithms are base 2, so every quantity is in bits. Divergences that
//! blow up (`p(x) > 0`, `q(x) = 0`) come back as `f64::INFINITY` rather than
//! an error so callers can branch on `is_infinite()`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used for normalization checks.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// An ordered finite set of symbols, addressed by index `0..size`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Universe {
    symbols: Vec<String>,
}

impl Universe {
    /// Universe whose symbols are the decimal indices `"0"`, `"1"`, ...
    pub fn indexed(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidDistribution(
                "universe must be non-empty".into(),
            ));
        }
        Ok(Self {
            symbols: (0..size).map(|i| i.to_string()).collect(),
        })
    }

    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidDistribution(
                "universe must be non-empty".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &symbols {
            if !seen.insert(s.as_str()) {
                return Err(Error::InvalidDistribution(format!(
                    "duplicate symbol {s:?}"
                )));
            }
        }
        Ok(Self { symbols })
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }
}

fn check_normalized(probs: &mut [f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution(
            "empty probability vector".into(),
        ));
    }
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution(format!("entry {i} is {p}")));
        }
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidDistribution(format!(
            "probabilities sum to {total}"
        )));
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    Ok(())
}

/// Probability mass function over a universe of `len()` symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistRepr", into = "DistRepr")]
pub struct Dist {
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DistRepr {
    Sized { size: usize, probs: Vec<f64> },
    Bare(Vec<f64>),
}

impl TryFrom<DistRepr> for Dist {
    type Error = Error;

    fn try_from(repr: DistRepr) -> Result<Self> {
        match repr {
            DistRepr::Sized { size, probs } => {
                if size != probs.len() {
                    return Err(Error::InvalidDistribution(format!(
                        "size field {size} disagrees with {} probabilities",
                        probs.len()
                    )));
                }
                Dist::new(probs)
            }
            DistRepr::Bare(probs) => Dist::new(probs),
        }
    }
}

impl From<Dist> for DistRepr {
    fn from(d: Dist) -> Self {
        DistRepr::Sized {
            size: d.probs.len(),
            probs: d.probs,
        }
    }
}

impl Dist {
    /// Validates and renormalizes. The sum must already be within `1e-9` of one.
    pub fn new(mut probs: Vec<f64>) -> Result<Self> {
        check_normalized(&mut probs)?;
        Ok(Self { probs })
    }

    /// Normalizes arbitrary non-negative weights with a positive total.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("empty weight vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroProbability("weights sum to zero".into()));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidDistribution(
                "universe must be non-empty".into(),
            ));
        }
        Ok(Self {
            probs: vec![1.0 / size as f64; size],
        })
    }

    pub fn point(size: usize, at: usize) -> Result<Self> {
        if at >= size {
            return Err(Error::InvalidDistribution(format!(
                "point {at} outside universe of {size}"
            )));
        }
        let mut probs = vec![0.0; size];
        probs[at] = 1.0;
        Ok(Self { probs })
    }

    /// Uniform over the given subset of a `size`-symbol universe.
    pub fn uniform_on(size: usize, subset: &[usize]) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let mut probs = vec![0.0; size];
        for &i in subset {
            if i >= size {
                return Err(Error::InvalidDistribution(format!(
                    "index {i} outside universe"
                )));
            }
            probs[i] = 1.0;
        }
        Self::from_weights(probs)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs.get(i).copied().unwrap_or(0.0)
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }

    /// Product distribution; index `i * other.len() + j` holds `self[i] * other[j]`.
    pub fn product(&self, other: &Dist) -> Dist {
        let mut probs = Vec::with_capacity(self.len() * other.len());
        for &a in &self.probs {
            for &b in &other.probs {
                probs.push(a * b);
            }
        }
        Dist { probs }
    }

    /// Expected value of `f` under this distribution.
    pub fn expect(&self, mut f: impl FnMut(usize) -> f64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| p * f(i))
            .sum()
    }
}

fn same_universe(p: &Dist, q: &Dist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::UniverseMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

fn plogp_inv(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

pub fn entropy(d: &Dist) -> f64 {
    d.probs.iter().map(|&p| plogp_inv(p)).sum()
}

/// `D(p‖q)` in bits; `f64::INFINITY` when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &Dist, q: &Dist) -> Result<f64> {
    same_universe(p, q)?;
    let mut total = 0.0;
    for (&a, &b) in p.probs.iter().zip(&q.probs) {
        if a <= 0.0 {
            continue;
        }
        if b <= 0.0 {
            return Ok(f64::INFINITY);
        }
        total += a * (a / b).log2();
    }
    Ok(total)
}

pub fn statistical_distance(p: &Dist, q: &Dist) -> Result<f64> {
    same_universe(p, q)?;
    Ok(0.5
        * p.probs
            .iter()
            .zip(&q.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

/// Joint distribution of a pair, stored row-major (`x` selects the row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointRepr", into = "JointRepr")]
pub struct JointDist {
    rows: usize,
    cols: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JointRepr {
    rows: usize,
    cols: usize,
    probs: Vec<Vec<f64>>,
}

impl TryFrom<JointRepr> for JointDist {
    type Error = Error;

    fn try_from(repr: JointRepr) -> Result<Self> {
        if repr.probs.len() != repr.rows || repr.probs.iter().any(|r| r.len() != repr.cols) {
            return Err(Error::InvalidDistribution(format!(
                "joint matrix is not {}x{}",
                repr.rows, repr.cols
            )));
        }
        JointDist::new(repr.rows, repr.cols, repr.probs.concat())
    }
}

impl From<JointDist> for JointRepr {
    fn from(j: JointDist) -> Self {
        JointRepr {
            rows: j.rows,
            cols: j.cols,
            probs: j.probs.chunks(j.cols).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl JointDist {
    pub fn new(rows: usize, cols: usize, mut probs: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || probs.len() != rows * cols {
            return Err(Error::InvalidDistribution(format!(
                "expected {rows}x{cols} entries, got {}",
                probs.len()
            )));
        }
        check_normalized(&mut probs)?;
        Ok(Self { rows, cols, probs })
    }

    pub fn independent(px: &Dist, py: &Dist) -> Self {
        Self {
            rows: px.len(),
            cols: py.len(),
            probs: px.product(py).probs,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.probs[x * self.cols + y]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn marginal_x(&self) -> Dist {
        Dist {
            probs: self
                .probs
                .chunks(self.cols)
                .map(|r| r.iter().sum())
                .collect(),
        }
    }

    pub fn marginal_y(&self) -> Dist {
        let mut probs = vec![0.0; self.cols];
        for row in self.probs.chunks(self.cols) {
            for (acc, p) in probs.iter_mut().zip(row) {
                *acc += p;
            }
        }
        Dist { probs }
    }

    /// `Y | X = x`, or `None` when `x` has zero probability.
    pub fn conditional_y_given_x(&self, x: usize) -> Option<Dist> {
        let row = &self.probs[x * self.cols..(x + 1) * self.cols];
        Dist::from_weights(row.to_vec()).ok()
    }

    /// `X | Y = y`, or `None` when `y` has zero probability.
    pub fn conditional_x_given_y(&self, y: usize) -> Option<Dist> {
        let col = (0..self.rows).map(|x| self.get(x, y)).collect();
        Dist::from_weights(col).ok()
    }

    pub fn as_table(&self) -> JointTable {
        JointTable {
            shape: vec![self.rows, self.cols],
            probs: self.probs.clone(),
        }
    }
}

/// `I(X;Y) = H(X) - H(X|Y)` in bits.
pub fn mutual_information(j: &JointDist) -> f64 {
    let hx = entropy(&j.marginal_x());
    let py = j.marginal_y();
    let mut h_x_given_y = 0.0;
    for y in 0..j.cols {
        let w = py.get(y);
        if w <= 0.0 {
            continue;
        }
        let cond: f64 = (0..j.rows).map(|x| plogp_inv(j.get(x, y) / w)).sum();
        h_x_given_y += w * cond;
    }
    hx - h_x_given_y
}

/// Joint distribution over any number of finite axes, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    shape: Vec<usize>,
    probs: Vec<f64>,
}

impl JointTable {
    pub fn new(shape: Vec<usize>, mut probs: Vec<f64>) -> Result<Self> {
        let cells: usize = shape.iter().product();
        if shape.is_empty() || cells == 0 || probs.len() != cells {
            return Err(Error::InvalidDistribution(format!(
                "shape {shape:?} needs {cells} cells, got {}",
                probs.len()
            )));
        }
        check_normalized(&mut probs)?;
        Ok(Self { shape, probs })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for (axis, &n) in self.shape.iter().enumerate().rev() {
            out[axis] = flat % n;
            flat /= n;
        }
    }

    /// Marginal over `axes`, in the given order. Duplicate axes are an error.
    pub fn marginal(&self, axes: &[usize]) -> Result<JointTable> {
        let mut seen = vec![false; self.shape.len()];
        for &a in axes {
            if a >= self.shape.len() || std::mem::replace(&mut seen[a], true) {
                return Err(Error::InvalidParameter(format!("bad axis list {axes:?}")));
            }
        }
        let shape: Vec<usize> = if axes.is_empty() {
            vec![1]
        } else {
            axes.iter().map(|&a| self.shape[a]).collect()
        };
        let mut probs = vec![0.0; shape.iter().product()];
        let mut idx = vec![0; self.shape.len()];
        for (flat, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            self.unravel(flat, &mut idx);
            let mut target = 0;
            for &a in axes {
                target = target * self.shape[a] + idx[a];
            }
            probs[target] += p;
        }
        Ok(JointTable { shape, probs })
    }

    pub fn entropy(&self) -> f64 {
        self.probs.iter().map(|&p| plogp_inv(p)).sum()
    }

    /// `I(A;B|C)` for disjoint axis groups, computed cell by cell as
    /// `Σ p(a,b,c) log[p(a,b,c) p(c) / (p(a,c) p(b,c))]`.
    pub fn conditional_mutual_information(
        &self,
        a: &[usize],
        b: &[usize],
        c: &[usize],
    ) -> Result<f64> {
        let order: Vec<usize> = a.iter().chain(b).chain(c).copied().collect();
        let m = self.marginal(&order)?;
        let size = |g: &[usize]| g.iter().map(|&x| self.shape[x]).product::<usize>();
        let (na, nb, nc) = (size(a), size(b), size(c));
        let mut p_ac = vec![0.0; na * nc];
        let mut p_bc = vec![0.0; nb * nc];
        let mut p_c = vec![0.0; nc];
        for ia in 0..na {
            for ib in 0..nb {
                for ic in 0..nc {
                    let p = m.probs[(ia * nb + ib) * nc + ic];
                    p_ac[ia * nc + ic] += p;
                    p_bc[ib * nc + ic] += p;
                    p_c[ic] += p;
                }
            }
        }
        let mut total = 0.0;
        for ia in 0..na {
            for ib in 0..nb {
                for ic in 0..nc {
                    let p = m.probs[(ia * nb + ib) * nc + ic];
                    if p > 0.0 {
                        total +=
                            p * (p * p_c[ic] / (p_ac[ia * nc + ic] * p_bc[ib * nc + ic])).log2();
                    }
                }
            }
        }
        Ok(total)
    }

    pub fn mutual_information(&self, a: &[usize], b: &[usize]) -> Result<f64> {
        self.conditional_mutual_information(a, b, &[])
    }
}

/// `I(X;Y|Z)` on a three-way joint with axes `(X, Y, Z)`.
pub fn conditional_mutual_information(j3: &JointTable) -> Result<f64> {
    if j3.shape().len() != 3 {
        return Err(Error::InvalidParameter("expected a three-way joint".into()));
    }
    j3.conditional_mutual_information(&[0], &[1], &[2])
}
