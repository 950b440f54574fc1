use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Default cap on the number of members an [`IndexSet`] may enumerate.
pub const DEFAULT_INDEX_CAP: usize = 10_000_000;

/// A tensor frequency `p = (p_1, ..., p_d)` with every component `>= 1`.
///
/// Ordering is lexicographic on the components.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(components: Vec<u32>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("multi-index must have at least one component"));
        }
        if components.contains(&0) {
            return Err(invalid(format!(
                "multi-index components must be >= 1, got {components:?}"
            )));
        }
        Ok(Self(components))
    }

    /// One-dimensional index `p`.
    pub fn single(p: u32) -> Result<Self> {
        Self::new(vec![p])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[u32] {
        &self.0
    }

    /// `|p|^2 = sum_k p_k^2`.
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|&c| f64::from(c) * f64::from(c)).sum()
    }

    pub fn max_component(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

impl TryFrom<Vec<u32>> for MultiIndex {
    type Error = Error;

    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MultiIndex> for Vec<u32> {
    fn from(p: MultiIndex) -> Self {
        p.0
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// The cutoff set `W_beta = { p in N^d : |p|^2 <= beta }`, enumerated
/// explicitly in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexSet {
    dim: usize,
    cutoff: f64,
    members: Vec<MultiIndex>,
}

impl IndexSet {
    pub fn new(dim: usize, cutoff: f64) -> Result<Self> {
        Self::with_cap(dim, cutoff, DEFAULT_INDEX_CAP)
    }

    pub fn with_cap(dim: usize, cutoff: f64, cap: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be >= 1"));
        }
        if !(cutoff >= 0.0) || !cutoff.is_finite() {
            return Err(invalid(format!(
                "cutoff must be finite and >= 0, got {cutoff}"
            )));
        }
        let mut members = Vec::new();
        let mut prefix = Vec::with_capacity(dim);
        enumerate(dim, cutoff, &mut prefix, 0.0, &mut members, cap)
            .map_err(|()| Error::ResourceLimit { cap, cutoff })?;
        Ok(Self {
            dim,
            cutoff,
            members,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn members(&self) -> &[MultiIndex] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, p: &MultiIndex) -> bool {
        p.dim() == self.dim && p.norm_sq() <= self.cutoff
    }

    /// Largest component over the members, 0 when empty.
    pub fn max_component(&self) -> u32 {
        self.members
            .iter()
            .map(MultiIndex::max_component)
            .max()
            .unwrap_or(0)
    }
}

fn enumerate(
    dim: usize,
    cutoff: f64,
    prefix: &mut Vec<u32>,
    used: f64,
    out: &mut Vec<MultiIndex>,
    cap: usize,
) -> std::result::Result<(), ()> {
    let remaining_axes = dim - prefix.len();
    if remaining_axes == 0 {
        if out.len() >= cap {
            return Err(());
        }
        out.push(MultiIndex(prefix.clone()));
        return Ok(());
    }
    // every later axis needs at least 1
    let budget = cutoff - used - (remaining_axes as f64 - 1.0);
    if budget < 1.0 {
        return Ok(());
    }
    let top = budget.sqrt().floor() as u32;
    for c in 1..=top {
        let sq = f64::from(c) * f64::from(c);
        if used + sq + (remaining_axes as f64 - 1.0) > cutoff {
            break;
        }
        prefix.push(c);
        enumerate(dim, cutoff, prefix, used + sq, out, cap)?;
        prefix.pop();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(dim: usize, cutoff: f64) -> Vec<Vec<u32>> {
        let top = cutoff.max(0.0).sqrt().floor() as u32 + 1;
        let mut out = Vec::new();
        let mut idx = vec![1u32; dim];
        loop {
            let s: f64 = idx.iter().map(|&c| f64::from(c * c)).sum();
            if s <= cutoff {
                out.push(idx.clone());
            }
            let mut k = dim;
            loop {
                if k == 0 {
                    out.sort();
                    return out;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] <= top {
                    break;
                }
                idx[k] = 1;
            }
        }
    }

    #[test]
    fn one_dimensional_examples() {
        let set = IndexSet::new(1, 9.5).unwrap();
        let got: Vec<_> = set.members().iter().map(|p| p.components()[0]).collect();
        assert_eq!(got, vec![1, 2, 3]);
        assert!(IndexSet::new(1, 0.5).unwrap().is_empty());
    }

    #[test]
    fn two_dimensional_beta_two() {
        let set = IndexSet::new(2, 2.0).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.members()[0].components(), &[1, 1]);
    }

    #[test]
    fn matches_brute_force_up_to_200() {
        for dim in 1..=3 {
            let mut prev = 0;
            for step in 0..=40 {
                let beta = step as f64 * 5.0;
                let set = IndexSet::new(dim, beta).unwrap();
                let got: Vec<Vec<u32>> = set
                    .members()
                    .iter()
                    .map(|p| p.components().to_vec())
                    .collect();
                assert_eq!(got, brute_force(dim, beta), "d={dim} beta={beta}");
                assert!(set.len() >= prev);
                prev = set.len();
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let err = IndexSet::with_cap(3, 400.0, 100).unwrap_err();
        assert!(matches!(err, Error::ResourceLimit { cap: 100, .. }));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(MultiIndex::new(vec![1, 0]).is_err());
        assert!(MultiIndex::new(vec![]).is_err());
        assert!(IndexSet::new(1, -1.0).is_err());
        assert!(IndexSet::new(0, 3.0).is_err());
    }

    #[test]
    fn cardinality_respects_volume_bound() {
        use statrs::function::gamma::gamma;
        use std::f64::consts::PI;
        for dim in 1..=3usize {
            for beta in [1.0, 4.0, 10.0, 50.0, 120.0, 200.0] {
                let d = dim as f64;
                let bound =
                    2.0 * PI.powf(d / 2.0) / (d * gamma(d / 2.0)) * f64::powf(beta, d / 2.0) + d;
                let n = IndexSet::new(dim, beta).unwrap().len() as f64;
                assert!(n <= bound, "d={dim} beta={beta}: {n} > {bound}");
            }
        }
    }
}
