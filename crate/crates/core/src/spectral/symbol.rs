use super::MultiIndex;
use crate::error::{invalid, Result};
use std::fmt;
use std::sync::Arc;

/// The family an [`OperatorSymbol`] belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymbolKind {
    /// `-Delta`: `M = s`.
    Heat,
    /// `Delta^2`: `M = s^2`.
    Biharmonic,
    /// `-Delta + Delta^2`: `M = s + s^2`.
    ExtendedFisherKolmogorov,
    /// `2 Delta + Delta^2`: `M = -2 s + s^2`.
    SwiftHohenberg,
    /// Caller-supplied monotone symbol.
    Custom,
}

type SymbolFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Eigenvalue `M(|p|)` of a spatial operator on the sine mode `p`, expressed
/// as a function of `s = |p|^2` and multiplied by a positive `scale`.
#[derive(Clone)]
pub struct OperatorSymbol {
    kind: SymbolKind,
    scale: f64,
    custom: Option<SymbolFn>,
    monotone_from: f64,
}

impl fmt::Debug for OperatorSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorSymbol")
            .field("kind", &self.kind)
            .field("scale", &self.scale)
            .finish()
    }
}

impl OperatorSymbol {
    fn builtin(kind: SymbolKind, monotone_from: f64) -> Self {
        Self {
            kind,
            scale: 1.0,
            custom: None,
            monotone_from,
        }
    }

    pub fn heat() -> Self {
        Self::builtin(SymbolKind::Heat, 0.0)
    }

    pub fn biharmonic() -> Self {
        Self::builtin(SymbolKind::Biharmonic, 0.0)
    }

    pub fn extended_fisher_kolmogorov() -> Self {
        Self::builtin(SymbolKind::ExtendedFisherKolmogorov, 0.0)
    }

    /// Non-decreasing only for `s >= 1`; every lattice value satisfies this.
    pub fn swift_hohenberg() -> Self {
        Self::builtin(SymbolKind::SwiftHohenberg, 1.0)
    }

    /// Wraps a caller-supplied symbol. The function is sampled at every
    /// integer `s` in `[monotone_from, check_up_to]` plus quarter points and
    /// rejected if it decreases anywhere on that range.
    pub fn custom<F>(f: F, monotone_from: f64, check_up_to: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(check_up_to > monotone_from) {
            return Err(invalid("custom symbol check range is empty"));
        }
        let mut prev = f(monotone_from);
        let mut s = monotone_from;
        while s < check_up_to {
            s = (s + 0.25).min(check_up_to);
            let v = f(s);
            if !v.is_finite() || v < prev {
                return Err(invalid(format!(
                    "custom symbol is not non-decreasing near s = {s} ({prev} -> {v})"
                )));
            }
            prev = v;
        }
        Ok(Self {
            kind: SymbolKind::Custom,
            scale: 1.0,
            custom: Some(Arc::new(f)),
            monotone_from,
        })
    }

    /// Multiplies the symbol by `c > 0`.
    pub fn scaled(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(invalid(format!("symbol scale must be positive, got {c}")));
        }
        self.scale *= c;
        Ok(self)
    }

    pub fn kind(&self) -> SymbolKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Smallest `s` from which the symbol is non-decreasing.
    pub fn monotone_from(&self) -> f64 {
        self.monotone_from
    }

    /// `M` as a function of `s = |p|^2`.
    pub fn eval_s(&self, s: f64) -> f64 {
        let base = match self.kind {
            SymbolKind::Heat => s,
            SymbolKind::Biharmonic => s * s,
            SymbolKind::ExtendedFisherKolmogorov => s + s * s,
            SymbolKind::SwiftHohenberg => -2.0 * s + s * s,
            SymbolKind::Custom => (self.custom.as_ref().expect("custom symbol"))(s),
        };
        self.scale * base
    }

    pub fn eval(&self, p: &MultiIndex) -> f64 {
        self.eval_s(p.norm_sq())
    }

    /// Solves `M(s) = target` for `s` by bisection on the monotone branch.
    ///
    /// Returns the left end of the branch when the target lies below it.
    pub fn invert(&self, target: f64, tol: f64) -> Result<f64> {
        if !target.is_finite() {
            return Err(invalid(format!("cannot invert symbol at {target}")));
        }
        let lo0 = self.monotone_from;
        if self.eval_s(lo0) >= target {
            return Ok(lo0);
        }
        let mut lo = lo0;
        let mut hi = lo0.max(1.0);
        while self.eval_s(hi) < target {
            lo = hi;
            hi *= 2.0;
            if hi > 1e300 {
                return Err(invalid(format!(
                    "symbol does not reach {target}; it cannot be inverted"
                )));
            }
        }
        while hi - lo > tol * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if self.eval_s(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `M(|p|)` for the given operator.
pub fn symbol_eval(op: &OperatorSymbol, p: &MultiIndex) -> f64 {
    op.eval(p)
}
