//! Joint probability mass functions over named finite coordinates.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Total mass must be within this of 1.
pub const MASS_TOL: f64 = 1e-12;

/// A pmf over the product of named finite alphabets, stored row-major
/// (last coordinate fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    names: Vec<String>,
    alphabets: Vec<Vec<String>>,
    masses: Vec<f64>,
}

fn numbered(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

impl JointPmf {
    pub fn new(names: Vec<String>, alphabets: Vec<Vec<String>>, masses: Vec<f64>) -> Result<Self> {
        let pmf = Self::unnormalized(names, alphabets, masses)?;
        if let Some(m) = pmf.masses.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidPmf(format!("mass {m} is not a finite non-negative number")));
        }
        let total: f64 = pmf.masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidPmf(format!("masses sum to {total}")));
        }
        Ok(pmf)
    }

    /// Shape checks only; used for intermediate tables built in code.
    fn unnormalized(names: Vec<String>, alphabets: Vec<Vec<String>>, masses: Vec<f64>) -> Result<Self> {
        if names.len() != alphabets.len() {
            return Err(Error::Dimension(format!("{} names for {} alphabets", names.len(), alphabets.len())));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::DuplicateLabel(n.clone()));
            }
        }
        if alphabets.iter().any(|a| a.is_empty()) {
            return Err(Error::InvalidPmf("empty alphabet".into()));
        }
        let size: usize = alphabets.iter().map(|a| a.len()).product();
        if size != masses.len() {
            return Err(Error::Dimension(format!("table has {} entries, alphabets need {size}", masses.len())));
        }
        Ok(Self { names, alphabets, masses })
    }

    /// Alphabets labelled `0..n` for each named coordinate.
    pub fn from_sizes(names: &[&str], sizes: &[usize], masses: Vec<f64>) -> Result<Self> {
        Self::new(names.iter().map(|s| s.to_string()).collect(), sizes.iter().map(|&n| numbered(n)).collect(), masses)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn alphabets(&self) -> &[Vec<String>] {
        &self.alphabets
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn shape(&self) -> Vec<usize> {
        self.alphabets.iter().map(|a| a.len()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    fn strides(&self) -> Vec<usize> {
        let shape = self.shape();
        let mut strides = vec![1; shape.len()];
        for i in (0..shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        strides
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let flat: usize = index.iter().zip(self.strides()).map(|(i, s)| i * s).sum();
        self.masses[flat]
    }

    /// Calls `f(index, mass)` for every cell.
    pub fn for_each(&self, mut f: impl FnMut(&[usize], f64)) {
        let shape = self.shape();
        let mut idx = vec![0; shape.len()];
        for &m in &self.masses {
            f(&idx, m);
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    /// Marginal on `labels`, in the given order.
    pub fn marginal(&self, labels: &[&str]) -> Result<JointPmf> {
        let pos: Vec<usize> = labels.iter().map(|l| self.index_of(l)).collect::<Result<_>>()?;
        for (i, p) in pos.iter().enumerate() {
            if pos[..i].contains(p) {
                return Err(Error::DuplicateLabel(labels[i].to_string()));
            }
        }
        let shape = self.shape();
        let sizes: Vec<usize> = pos.iter().map(|&p| shape[p]).collect();
        let mut strides = vec![1; sizes.len()];
        for i in (0..sizes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * sizes[i + 1];
        }
        let mut out = vec![0.0; sizes.iter().product()];
        self.for_each(|idx, m| {
            let flat: usize = pos.iter().zip(&strides).map(|(&p, s)| idx[p] * s).sum();
            out[flat] += m;
        });
        Self::unnormalized(
            labels.iter().map(|s| s.to_string()).collect(),
            pos.iter().map(|&p| self.alphabets[p].clone()).collect(),
            out,
        )
    }

    /// Entropy in nats of the coordinates `labels` (0 for an empty set).
    pub fn entropy(&self, labels: &[&str]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let m = self.marginal(labels)?;
        Ok(m.masses.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum())
    }

    /// `I(A; B | C)` in nats.
    pub fn mutual_information(&self, a: &[&str], b: &[&str], c: &[&str]) -> Result<f64> {
        for (i, l) in a.iter().chain(b).chain(c).enumerate() {
            if a.iter().chain(b).chain(c).take(i).any(|x| x == l) {
                return Err(Error::DuplicateLabel(l.to_string()));
            }
        }
        let ac: Vec<&str> = a.iter().chain(c).copied().collect();
        let bc: Vec<&str> = b.iter().chain(c).copied().collect();
        let abc: Vec<&str> = a.iter().chain(b).chain(c).copied().collect();
        Ok(self.entropy(&ac)? + self.entropy(&bc)? - self.entropy(&abc)? - self.entropy(c)?)
    }

    /// Appends a coordinate drawn from `cond(parent values)`, a distribution
    /// over `alphabet`.
    pub fn extend(
        &self,
        name: &str,
        alphabet: Vec<String>,
        parents: &[&str],
        cond: impl Fn(&[usize]) -> Vec<f64>,
    ) -> Result<JointPmf> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::DuplicateLabel(name.to_string()));
        }
        let pos: Vec<usize> = parents.iter().map(|l| self.index_of(l)).collect::<Result<_>>()?;
        let k = alphabet.len();
        let mut out = Vec::with_capacity(self.masses.len() * k);
        let mut pv = vec![0; pos.len()];
        let mut bad = None;
        self.for_each(|idx, m| {
            for (v, &p) in pv.iter_mut().zip(&pos) {
                *v = idx[p];
            }
            let q = cond(&pv);
            if q.len() != k {
                bad = Some(q.len());
            }
            out.extend(q.iter().take(k).map(|x| m * x));
            out.extend(std::iter::repeat_n(0.0, k.saturating_sub(q.len())));
        });
        if let Some(len) = bad {
            return Err(Error::Dimension(format!("conditional of length {len} for alphabet of {k}")));
        }
        let mut names = self.names.clone();
        names.push(name.to_string());
        let mut alphabets = self.alphabets.clone();
        alphabets.push(alphabet);
        Self::new(names, alphabets, out)
    }

    /// Appends a deterministic function of existing coordinates.
    pub fn extend_fn(&self, name: &str, size: usize, parents: &[&str], f: impl Fn(&[usize]) -> usize) -> Result<JointPmf> {
        self.extend(name, numbered(size), parents, |pv| {
            let mut q = vec![0.0; size];
            q[f(pv)] = 1.0;
            q
        })
    }

    /// Product of two pmfs on disjoint coordinates.
    pub fn product(&self, other: &JointPmf) -> Result<JointPmf> {
        let mut names = self.names.clone();
        for n in &other.names {
            if names.contains(n) {
                return Err(Error::DuplicateLabel(n.clone()));
            }
            names.push(n.clone());
        }
        let mut alphabets = self.alphabets.clone();
        alphabets.extend(other.alphabets.iter().cloned());
        let masses = self.masses.iter().flat_map(|a| other.masses.iter().map(move |b| a * b)).collect();
        Self::new(names, alphabets, masses)
    }

    /// Same pmf with its coordinates renamed in order.
    pub fn renamed(&self, names: &[&str]) -> Result<JointPmf> {
        if names.len() != self.names.len() {
            return Err(Error::Dimension("rename needs one name per coordinate".into()));
        }
        Self::unnormalized(names.iter().map(|s| s.to_string()).collect(), self.alphabets.clone(), self.masses.clone())
    }

    /// JSON form `{"names": [...], "alphabets": [[...]], "table": nested arrays}`.
    pub fn to_json(&self) -> Value {
        fn nest(masses: &[f64], shape: &[usize]) -> Value {
            if shape.is_empty() {
                return Value::from(masses[0]);
            }
            let chunk = masses.len() / shape[0];
            Value::Array((0..shape[0]).map(|i| nest(&masses[i * chunk..(i + 1) * chunk], &shape[1..])).collect())
        }
        serde_json::json!({
            "names": self.names,
            "alphabets": self.alphabets,
            "table": nest(&self.masses, &self.shape()),
        })
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            names: Vec<String>,
            alphabets: Vec<Vec<String>>,
            table: Value,
        }
        let raw: Raw = serde_json::from_value(value.clone())?;
        let mut masses = Vec::new();
        flatten(&raw.table, &raw.alphabets.iter().map(|a| a.len()).collect::<Vec<_>>(), &mut masses)?;
        Self::new(raw.names, raw.alphabets, masses)
    }
}

fn flatten(v: &Value, shape: &[usize], out: &mut Vec<f64>) -> Result<()> {
    match (v, shape.first()) {
        (Value::Number(n), None) => {
            out.push(n.as_f64().ok_or_else(|| Error::InvalidPmf("bad number".into()))?);
            Ok(())
        }
        (Value::Array(items), Some(&n)) if items.len() == n => {
            items.iter().try_for_each(|item| flatten(item, &shape[1..], out))
        }
        _ => Err(Error::Dimension("table nesting does not match the alphabets".into())),
    }
}

impl Serialize for JointPmf {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for JointPmf {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        JointPmf::from_json(&v).map_err(serde::de::Error::custom)
    }
}

/// A discrete two-user channel `p(y | x1, x2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPmf {
    pub x1: Vec<String>,
    pub x2: Vec<String>,
    pub y: Vec<String>,
    /// `table[x1][x2][y]`.
    pub table: Vec<Vec<Vec<f64>>>,
}

impl ChannelPmf {
    pub fn new(x1: Vec<String>, x2: Vec<String>, y: Vec<String>, table: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let ch = Self { x1, x2, y, table };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x1.is_empty() || self.x2.is_empty() || self.y.is_empty() {
            return Err(Error::InvalidPmf("channel alphabets must be non-empty".into()));
        }
        if self.table.len() != self.x1.len() {
            return Err(Error::Dimension("channel table rows do not match x1".into()));
        }
        for row in &self.table {
            if row.len() != self.x2.len() {
                return Err(Error::Dimension("channel table columns do not match x2".into()));
            }
            for q in row {
                if q.len() != self.y.len() {
                    return Err(Error::Dimension("channel output row does not match y".into()));
                }
                if q.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidPmf("negative channel probability".into()));
                }
                let s: f64 = q.iter().sum();
                if (s - 1.0).abs() > MASS_TOL {
                    return Err(Error::InvalidPmf(format!("channel row sums to {s}")));
                }
            }
        }
        Ok(())
    }

    /// `Y = (X1, X2)` with `n`-ary inputs.
    pub fn noiseless(n: usize) -> Self {
        let mut table = vec![vec![vec![0.0; n * n]; n]; n];
        for (a, row) in table.iter_mut().enumerate() {
            for (b, q) in row.iter_mut().enumerate() {
                q[a * n + b] = 1.0;
            }
        }
        let y = (0..n).flat_map(|a| (0..n).map(move |b| format!("{a}{b}"))).collect();
        Self { x1: numbered(n), x2: numbered(n), y, table }
    }

    /// Binary inputs, `Y = X1 + X2` over the integers.
    pub fn binary_adder() -> Self {
        let mut table = vec![vec![vec![0.0; 3]; 2]; 2];
        for (a, row) in table.iter_mut().enumerate() {
            for (b, q) in row.iter_mut().enumerate() {
                q[a + b] = 1.0;
            }
        }
        Self { x1: numbered(2), x2: numbered(2), y: numbered(3), table }
    }

    /// Output independent of the inputs.
    pub fn useless(nx: usize, ny: usize) -> Self {
        Self { x1: numbered(nx), x2: numbered(nx), y: numbered(ny), table: vec![vec![vec![1.0 / ny as f64; ny]; nx]; nx] }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.x1.len(), self.x2.len(), self.y.len())
    }
}
