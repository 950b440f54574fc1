use super::{IndexSet, ModalPlan, MultiIndex, OperatorSymbol, TensorGrid};
use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A finite sine series `sum_p c_p psi_p` on `(0, pi)^d`.
///
/// Serialized as `{"d": int, "coefficients": [{"p": [..], "c": float}]}` with
/// coefficients in lexicographic order of `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldRepr", into = "FieldRepr")]
pub struct SpectralField {
    dim: usize,
    coeffs: BTreeMap<MultiIndex, f64>,
}

/// Weight defining a spectral norm.
#[derive(Clone, Debug)]
pub enum Weight {
    /// `sqrt(sum |p|^(2 gamma) c_p^2)`.
    Sobolev(f64),
    /// `sqrt(sum |M(|p|)|^(2 gamma) e^(2 T M(|p|)) c_p^2)`.
    Gevrey {
        gamma: f64,
        horizon: f64,
        symbol: OperatorSymbol,
    },
}

impl SpectralField {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn from_pairs<I>(dim: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (MultiIndex, f64)>,
    {
        let mut f = Self::zero(dim);
        for (p, c) in pairs {
            f.add_to(p, c)?;
        }
        Ok(f)
    }

    /// Coefficients aligned with `members`.
    pub fn from_members(dim: usize, members: &[MultiIndex], values: &[f64]) -> Result<Self> {
        if members.len() != values.len() {
            return Err(invalid("one value per member required"));
        }
        Self::from_pairs(dim, members.iter().cloned().zip(values.iter().copied()))
    }

    /// Single mode `c * psi_p`.
    pub fn mode(p: MultiIndex, c: f64) -> Self {
        let dim = p.dim();
        let mut coeffs = BTreeMap::new();
        coeffs.insert(p, c);
        Self { dim, coeffs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn get(&self, p: &MultiIndex) -> f64 {
        self.coeffs.get(p).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, p: MultiIndex, c: f64) -> Result<()> {
        self.check_dim(&p)?;
        self.coeffs.insert(p, c);
        Ok(())
    }

    pub fn add_to(&mut self, p: MultiIndex, c: f64) -> Result<()> {
        self.check_dim(&p)?;
        *self.coeffs.entry(p).or_insert(0.0) += c;
        Ok(())
    }

    fn check_dim(&self, p: &MultiIndex) -> Result<()> {
        if p.dim() != self.dim {
            return Err(invalid(format!(
                "mode {p:?} does not match field dimension {}",
                self.dim
            )));
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.coeffs.iter().map(|(p, &c)| (p, c))
    }

    pub fn support(&self) -> impl Iterator<Item = &MultiIndex> {
        self.coeffs.keys()
    }

    /// Coefficients for `members`, zero where absent.
    pub fn values_on(&self, members: &[MultiIndex]) -> Vec<f64> {
        members.iter().map(|p| self.get(p)).collect()
    }

    /// Largest `|p|^2` in the support (0 when empty).
    pub fn max_norm_sq(&self) -> f64 {
        self.coeffs
            .keys()
            .map(MultiIndex::norm_sq)
            .fold(0.0, f64::max)
    }

    /// Orthogonal projection onto modes with `|p|^2 <= cutoff`.
    pub fn project(&self, cutoff: f64) -> Self {
        Self {
            dim: self.dim,
            coeffs: self
                .coeffs
                .iter()
                .filter(|(p, _)| p.norm_sq() <= cutoff)
                .map(|(p, &c)| (p.clone(), c))
                .collect(),
        }
    }

    /// Restriction to an explicit index set; modes absent from `self` are
    /// stored as zeros.
    pub fn restrict_to(&self, set: &IndexSet) -> Self {
        Self {
            dim: self.dim,
            coeffs: set
                .members()
                .iter()
                .map(|p| (p.clone(), self.get(p)))
                .collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            dim: self.dim,
            coeffs: self
                .coeffs
                .iter()
                .map(|(p, &c)| (p.clone(), a * c))
                .collect(),
        }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(invalid("field dimensions differ"));
        }
        let mut out = self.clone();
        for (p, c) in other.iter() {
            *out.coeffs.entry(p.clone()).or_insert(0.0) += a * c;
        }
        Ok(out)
    }

    /// Squared `L^2` distance via Parseval over the union of supports.
    pub fn distance_sq(&self, other: &Self) -> f64 {
        let mut total = 0.0;
        for (p, c) in &self.coeffs {
            let diff = c - other.get(p);
            total += diff * diff;
        }
        for (p, c) in &other.coeffs {
            if !self.coeffs.contains_key(p) {
                total += c * c;
            }
        }
        total
    }

    /// `L^2(Omega)` norm (Parseval).
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.values().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn weighted_norm(&self, weight: &Weight) -> Result<f64> {
        let total: f64 = match weight {
            Weight::Sobolev(gamma) => {
                if !(*gamma >= 0.0) {
                    return Err(invalid(format!("gamma must be >= 0, got {gamma}")));
                }
                self.coeffs
                    .iter()
                    .map(|(p, c)| p.norm_sq().powf(*gamma) * c * c)
                    .sum()
            }
            Weight::Gevrey {
                gamma,
                horizon,
                symbol,
            } => {
                if !(*gamma >= 0.0) {
                    return Err(invalid(format!("gamma must be >= 0, got {gamma}")));
                }
                self.coeffs
                    .iter()
                    .map(|(p, c)| {
                        let m = symbol.eval(p);
                        m.abs().powf(2.0 * gamma) * (2.0 * horizon * m).exp() * c * c
                    })
                    .sum()
            }
        };
        Ok(total.sqrt())
    }

    /// Pointwise value at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (p, c) in &self.coeffs {
            total += c * super::eigenfunction_eval(p, x)?;
        }
        Ok(total)
    }

    /// Values at every point of `grid` (row-major).
    pub fn synthesize(&self, grid: &TensorGrid) -> Result<Vec<f64>> {
        if grid.dim() != self.dim {
            return Err(invalid("grid and field dimensions differ"));
        }
        let members: Vec<MultiIndex> = self.coeffs.keys().cloned().collect();
        let plan = ModalPlan::new(grid.clone(), &members)?;
        let coeffs: Vec<f64> = self.coeffs.values().copied().collect();
        Ok(plan.synthesize(&coeffs))
    }
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldRepr {
    d: usize,
    coefficients: Vec<CoeffRepr>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoeffRepr {
    p: MultiIndex,
    c: f64,
}

impl TryFrom<FieldRepr> for SpectralField {
    type Error = Error;

    fn try_from(r: FieldRepr) -> Result<Self> {
        let mut f = SpectralField::zero(r.d);
        for CoeffRepr { p, c } in r.coefficients {
            if f.coeffs.contains_key(&p) {
                return Err(invalid(format!("duplicate coefficient for {p:?}")));
            }
            f.set(p, c)?;
        }
        Ok(f)
    }
}

impl From<SpectralField> for FieldRepr {
    fn from(f: SpectralField) -> Self {
        FieldRepr {
            d: f.dim,
            coefficients: f
                .coeffs
                .into_iter()
                .map(|(p, c)| CoeffRepr { p, c })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SINE_NORM;
    use proptest::prelude::*;
    use std::f64::consts::{E, PI};

    fn m(v: &[u32]) -> MultiIndex {
        MultiIndex::new(v.to_vec()).unwrap()
    }

    fn line_field(n: u32) -> SpectralField {
        SpectralField::from_pairs(1, (1..=n).map(|p| (m(&[p]), p as f64))).unwrap()
    }

    #[test]
    fn projection() {
        let f = line_field(5);
        let pr = f.project(4.0);
        let support: Vec<_> = pr.support().cloned().collect();
        assert_eq!(support, vec![m(&[1]), m(&[2])]);
        assert_eq!(pr.project(4.0), pr);
        assert!(f.project(0.0).is_empty());
    }

    #[test]
    fn synthesis_single_mode_and_zero() {
        let grid = TensorGrid::new(&[6]).unwrap();
        let f = SpectralField::mode(m(&[1]), 2.5);
        let vals = f.synthesize(&grid).unwrap();
        for (v, x) in vals.iter().zip(grid.axis(0)) {
            assert!((v - 2.5 * SINE_NORM * x.sin()).abs() < 1e-15);
        }
        assert_eq!(
            SpectralField::zero(1).synthesize(&grid).unwrap(),
            vec![0.0; 6]
        );
    }

    #[test]
    fn norms() {
        let f = SpectralField::mode(m(&[1, 2]), -3.0);
        let h = f.weighted_norm(&Weight::Sobolev(1.5)).unwrap();
        assert!((h - 5f64.powf(0.75) * 3.0).abs() < 1e-12);
        assert_eq!(
            SpectralField::zero(2)
                .weighted_norm(&Weight::Sobolev(1.0))
                .unwrap(),
            0.0
        );
        let g = SpectralField::mode(m(&[1]), 1.0)
            .weighted_norm(&Weight::Gevrey {
                gamma: 1.0,
                horizon: 1.0,
                symbol: OperatorSymbol::heat(),
            })
            .unwrap();
        assert!((g - E).abs() < 1e-14);
        assert!(f.weighted_norm(&Weight::Sobolev(-1.0)).is_err());
    }

    #[test]
    fn zero_weight_norm_matches_quadrature() {
        // Midpoint quadrature on a fine grid is exact for these band-limited products.
        let f = SpectralField::from_pairs(
            2,
            vec![(m(&[1, 1]), 0.7), (m(&[2, 3]), -0.2), (m(&[4, 1]), 0.05)],
        )
        .unwrap();
        let grid = TensorGrid::new(&[64, 64]).unwrap();
        let vals = f.synthesize(&grid).unwrap();
        let quad = (grid.weight() * vals.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let parseval = f.weighted_norm(&Weight::Sobolev(0.0)).unwrap();
        assert!((quad - parseval).abs() <= 1e-8 * parseval);
    }

    #[test]
    fn orthonormality_on_grid() {
        let grid = TensorGrid::new(&[6, 5]).unwrap();
        let set = IndexSet::new(2, 32.0).unwrap();
        let modes: Vec<_> = set
            .members()
            .iter()
            .filter(|p| p.components()[0] < 6 && p.components()[1] < 5)
            .cloned()
            .collect();
        let w = PI * PI / 30.0;
        for p in &modes {
            for q in &modes {
                let s: f64 = grid
                    .points()
                    .map(|x| {
                        super::super::eigenfunction_eval(p, &x).unwrap()
                            * super::super::eigenfunction_eval(q, &x).unwrap()
                    })
                    .sum();
                let expect = if p == q { 1.0 } else { 0.0 };
                assert!((w * s - expect).abs() < 1e-13, "{p:?} {q:?}");
            }
        }
    }

    #[test]
    fn json_layout() {
        let f = SpectralField::from_pairs(2, vec![(m(&[2, 1]), 0.5), (m(&[1, 3]), -1.0)]).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(
            s,
            r#"{"d":2,"coefficients":[{"p":[1,3],"c":-1.0},{"p":[2,1],"c":0.5}]}"#
        );
        let back: SpectralField = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<SpectralField>(
            r#"{"d":1,"coefficients":[{"p":[0],"c":1}]}"#
        )
        .is_err());
        assert!(serde_json::from_str::<SpectralField>(
            r#"{"d":1,"coefficients":[{"p":[1],"c":1},{"p":[1],"c":2}]}"#
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn synthesis_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64,
                               cf in prop::collection::vec(-1.0..1.0f64, 8),
                               cg in prop::collection::vec(-1.0..1.0f64, 8)) {
            let grid = TensorGrid::new(&[5, 4]).unwrap();
            let set = IndexSet::new(2, 13.0).unwrap();
            let f = SpectralField::from_members(2, set.members(), &cf[..set.len()]).unwrap();
            let g = SpectralField::from_members(2, set.members(), &cg[..set.len()]).unwrap();
            let comb = f.scaled(a).axpy(b, &g).unwrap();
            let lhs = comb.synthesize(&grid).unwrap();
            let vf = f.synthesize(&grid).unwrap();
            let vg = g.synthesize(&grid).unwrap();
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (a * vf[i] + b * vg[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn json_roundtrip(cs in prop::collection::vec((1u32..20, 1u32..20, -1e3..1e3f64), 0..12)) {
            let f = SpectralField::from_pairs(2, cs.into_iter().map(|(a, b, c)| (m(&[a, b]), c))).unwrap();
            let back: SpectralField = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
