//! Stationary kernel families on 1-D inputs.
//!
//! Conventions:
//!
//! * squared exponential: `μ·exp(−(x−x′)²/L²)` (no factor of two);
//! * Gibbs: `μ·√(2 l(x) l(x′) / (l(x)² + l(x′)²))·exp(−(x−x′)²/(l(x)² + l(x′)²))`
//!   with `l` a piecewise-constant [`LengthScaleTable`]. With a constant `l`
//!   this reduces to `μ·exp(−(x−x′)²/(2l²))`.

use nalgebra::DMatrix;

use crate::error::{param_err, Error, Result};

/// Anything that yields a prior covariance between two scalar inputs.
pub trait Covariance: Send + Sync {
    fn cov(&self, x1: f64, x2: f64) -> Result<f64>;

    /// `K(xs, ys)`.
    fn cov_matrix(&self, xs: &[f64], ys: &[f64]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(xs.len(), ys.len());
        for (i, &a) in xs.iter().enumerate() {
            for (j, &b) in ys.iter().enumerate() {
                m[(i, j)] = self.cov(a, b)?;
            }
        }
        Ok(m)
    }

    /// `K(xs, xs)`, built from the lower triangle (`cov(xs[i], xs[j])`, `j ≤ i`)
    /// and mirrored so the result is exactly symmetric.
    fn cov_sym(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        let n = xs.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.cov(xs[i], xs[j])?;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }
}

impl<C: Covariance + ?Sized> Covariance for &C {
    fn cov(&self, x1: f64, x2: f64) -> Result<f64> {
        (**self).cov(x1, x2)
    }

    fn cov_matrix(&self, xs: &[f64], ys: &[f64]) -> Result<DMatrix<f64>> {
        (**self).cov_matrix(xs, ys)
    }

    fn cov_sym(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        (**self).cov_sym(xs)
    }
}

impl<C: Covariance + ?Sized> Covariance for Box<C> {
    fn cov(&self, x1: f64, x2: f64) -> Result<f64> {
        (**self).cov(x1, x2)
    }

    fn cov_matrix(&self, xs: &[f64], ys: &[f64]) -> Result<DMatrix<f64>> {
        (**self).cov_matrix(xs, ys)
    }

    fn cov_sym(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        (**self).cov_sym(xs)
    }
}

/// A covariance with matrices precomputed for fixed location sets. Requests
/// for other locations fall through to the wrapped kernel.
#[derive(Debug, Clone)]
pub struct Cached<C> {
    inner: C,
    sym: Vec<(Vec<f64>, DMatrix<f64>)>,
    cross: Vec<(Vec<f64>, Vec<f64>, DMatrix<f64>)>,
}

impl<C: Covariance> Cached<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            sym: Vec::new(),
            cross: Vec::new(),
        }
    }

    pub fn with_sym(mut self, xs: &[f64]) -> Result<Self> {
        let m = self.inner.cov_sym(xs)?;
        self.sym.push((xs.to_vec(), m));
        Ok(self)
    }

    pub fn with_cross(mut self, xs: &[f64], ys: &[f64]) -> Result<Self> {
        let m = self.inner.cov_matrix(xs, ys)?;
        self.cross.push((xs.to_vec(), ys.to_vec(), m));
        Ok(self)
    }
}

impl<C: Covariance> Covariance for Cached<C> {
    fn cov(&self, x1: f64, x2: f64) -> Result<f64> {
        self.inner.cov(x1, x2)
    }

    fn cov_matrix(&self, xs: &[f64], ys: &[f64]) -> Result<DMatrix<f64>> {
        match self.cross.iter().find(|(a, b, _)| a == xs && b == ys) {
            Some((_, _, m)) => Ok(m.clone()),
            None => self.inner.cov_matrix(xs, ys),
        }
    }

    fn cov_sym(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        match self.sym.iter().find(|(a, _)| a == xs) {
            Some((_, m)) => Ok(m.clone()),
            None => self.inner.cov_sym(xs),
        }
    }
}

/// Pointwise sum of two covariance sources (`K_s = K_f + K_e`).
#[derive(Debug, Clone, Copy)]
pub struct SumCov<A, B>(pub A, pub B);

impl<A: Covariance, B: Covariance> Covariance for SumCov<A, B> {
    fn cov(&self, x1: f64, x2: f64) -> Result<f64> {
        Ok(self.0.cov(x1, x2)? + self.1.cov(x1, x2)?)
    }

    fn cov_matrix(&self, xs: &[f64], ys: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.0.cov_matrix(xs, ys)? + self.1.cov_matrix(xs, ys)?)
    }

    fn cov_sym(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.0.cov_sym(xs)? + self.1.cov_sym(xs)?)
    }
}

/// Piecewise-constant length-scale function.
///
/// Segment `k` covers `(breaks[k-1], breaks[k]]`; the first segment extends
/// to −∞ and the last to +∞, so the whole real line is covered.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthScaleTable {
    breaks: Vec<f64>,
    scales: Vec<f64>,
}

impl LengthScaleTable {
    pub fn new(breaks: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        if scales.len() != breaks.len() + 1 {
            return Err(param_err(format!(
                "length-scale table needs {} scales for {} breaks, got {}",
                breaks.len() + 1,
                breaks.len(),
                scales.len()
            )));
        }
        if breaks.iter().any(|b| !b.is_finite()) || breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(param_err("length-scale breaks must be finite and strictly increasing"));
        }
        if let Some(l) = scales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(param_err(format!("length scale must be positive, got {l}")));
        }
        Ok(Self { breaks, scales })
    }

    pub fn constant(l: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![l])
    }

    pub fn lookup(&self, x: f64) -> f64 {
        let k = self.breaks.partition_point(|b| *b < x);
        self.scales[k]
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }
}

/// A kernel family together with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    SquaredExponential { mu: f64, length: f64 },
    Gibbs { mu: f64, lengths: LengthScaleTable },
    Constant { mu: f64 },
    Zero,
    WhiteNoise { variance: f64 },
}

impl KernelSpec {
    pub fn squared_exponential(mu: f64, length: f64) -> Result<Self> {
        let k = Self::SquaredExponential { mu, length };
        k.validate()?;
        Ok(k)
    }

    pub fn gibbs(mu: f64, lengths: LengthScaleTable) -> Result<Self> {
        let k = Self::Gibbs { mu, lengths };
        k.validate()?;
        Ok(k)
    }

    pub fn constant(mu: f64) -> Result<Self> {
        let k = Self::Constant { mu };
        k.validate()?;
        Ok(k)
    }

    pub fn white_noise(variance: f64) -> Result<Self> {
        let k = Self::WhiteNoise { variance };
        k.validate()?;
        Ok(k)
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::SquaredExponential { .. } => "squared_exponential",
            Self::Gibbs { .. } => "gibbs",
            Self::Constant { .. } => "constant",
            Self::Zero => "zero",
            Self::WhiteNoise { .. } => "white_noise",
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn scale(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(param_err(format!("{name} must be finite and >= 0, got {v}")))
            }
        }
        match self {
            Self::SquaredExponential { mu, length } => {
                scale("mu", *mu)?;
                if !(length.is_finite() && *length > 0.0) {
                    return Err(param_err(format!("length scale must be positive, got {length}")));
                }
                Ok(())
            }
            // Tables are validated on construction.
            Self::Gibbs { mu, .. } => scale("mu", *mu),
            Self::Constant { mu } => scale("mu", *mu),
            Self::Zero => Ok(()),
            Self::WhiteNoise { variance } => scale("noise variance", *variance),
        }
    }

    /// `𝕂(x1, x2)`.
    pub fn eval(&self, x1: f64, x2: f64) -> Result<f64> {
        self.validate()?;
        Ok(self.eval_unchecked(x1, x2))
    }

    fn eval_unchecked(&self, x1: f64, x2: f64) -> f64 {
        match self {
            Self::SquaredExponential { mu, length } => {
                let d = (x1 - x2) / length;
                mu * (-d * d).exp()
            }
            Self::Gibbs { mu, lengths } => {
                let (l1, l2) = (lengths.lookup(x1), lengths.lookup(x2));
                let s = l1 * l1 + l2 * l2;
                let pre = if l1 == l2 { 1.0 } else { (2.0 * (l1 * l2) / s).sqrt() };
                let d = x1 - x2;
                mu * pre * (-d * d / s).exp()
            }
            Self::Constant { mu } => *mu,
            Self::Zero => 0.0,
            Self::WhiteNoise { variance } => {
                if x1 == x2 {
                    *variance
                } else {
                    0.0
                }
            }
        }
    }

    pub fn supports_derivatives(&self) -> bool {
        !matches!(self, Self::WhiteNoise { .. })
    }

    fn derivative_guard(&self) -> Result<()> {
        self.validate()?;
        if self.supports_derivatives() {
            Ok(())
        } else {
            Err(Error::Unsupported(format!(
                "{} kernel has no analytic derivatives",
                self.family()
            )))
        }
    }

    /// `∂𝕂/∂x1`. For Gibbs kernels the length scale is taken as locally
    /// constant, which is exact away from the table's break points.
    pub fn eval_d1(&self, x1: f64, x2: f64) -> Result<f64> {
        self.derivative_guard()?;
        let k = self.eval_unchecked(x1, x2);
        Ok(match self.exponent_scale(x1, x2) {
            Some(s) => -2.0 * (x1 - x2) / s * k,
            None => 0.0,
        })
    }

    /// `∂²𝕂/∂x1∂x2`.
    pub fn eval_d12(&self, x1: f64, x2: f64) -> Result<f64> {
        self.derivative_guard()?;
        let k = self.eval_unchecked(x1, x2);
        Ok(match self.exponent_scale(x1, x2) {
            Some(s) => {
                let d = x1 - x2;
                (2.0 / s - 4.0 * d * d / (s * s)) * k
            }
            None => 0.0,
        })
    }

    /// The `s` in `exp(−Δ²/s)`, or `None` for families constant in Δ.
    fn exponent_scale(&self, x1: f64, x2: f64) -> Option<f64> {
        match self {
            Self::SquaredExponential { length, .. } => Some(length * length),
            Self::Gibbs { lengths, .. } => {
                let (l1, l2) = (lengths.lookup(x1), lengths.lookup(x2));
                Some(l1 * l1 + l2 * l2)
            }
            _ => None,
        }
    }

    /// Gram matrix `K(xs, ys)`.
    pub fn gram(&self, xs: &[f64], ys: &[f64]) -> Result<GramMatrix> {
        self.validate()?;
        if xs == ys {
            return Ok(GramMatrix::new(self.cov_sym(xs)?, xs.to_vec(), ys.to_vec()));
        }
        Ok(GramMatrix::new(self.cov_matrix(xs, ys)?, xs.to_vec(), ys.to_vec()))
    }
}

impl Covariance for KernelSpec {
    fn cov(&self, x1: f64, x2: f64) -> Result<f64> {
        self.eval(x1, x2)
    }

    fn cov_matrix(&self, xs: &[f64], ys: &[f64]) -> Result<DMatrix<f64>> {
        self.validate()?;
        Ok(DMatrix::from_fn(xs.len(), ys.len(), |i, j| {
            self.eval_unchecked(xs[i], ys[j])
        }))
    }

    fn cov_sym(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        self.validate()?;
        let n = xs.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_unchecked(xs[i], xs[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }
}

/// A covariance matrix together with the locations indexing its rows and
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub row_points: Vec<f64>,
    pub col_points: Vec<f64>,
}

impl GramMatrix {
    pub fn new(values: DMatrix<f64>, row_points: Vec<f64>, col_points: Vec<f64>) -> Self {
        debug_assert_eq!(values.nrows(), row_points.len());
        debug_assert_eq!(values.ncols(), col_points.len());
        Self {
            values,
            row_points,
            col_points,
        }
    }

    /// Gram of any covariance source over `xs × ys`.
    pub fn of<C: Covariance + ?Sized>(k: &C, xs: &[f64], ys: &[f64]) -> Result<Self> {
        let values = if xs == ys {
            k.cov_sym(xs)?
        } else {
            k.cov_matrix(xs, ys)?
        };
        Ok(Self::new(values, xs.to_vec(), ys.to_vec()))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.values.amax().max(f64::MIN_POSITIVE);
        self.values.nrows() == self.values.ncols()
            && (&self.values - self.values.transpose()).amax() <= rel_tol * scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use proptest::prelude::*;

    fn se(mu: f64, l: f64) -> KernelSpec {
        KernelSpec::squared_exponential(mu, l).unwrap()
    }

    fn gibbs_35_15() -> KernelSpec {
        KernelSpec::gibbs(1.0, LengthScaleTable::new(vec![130.0], vec![35.0, 15.0]).unwrap()).unwrap()
    }

    #[test]
    fn se_zero_distance_is_mu() {
        assert_eq!(se(2.0, 3.0).eval(4.2, 4.2).unwrap(), 2.0);
    }

    #[test]
    fn se_unit_distance() {
        let v = se(1.0, 1.0).eval(0.0, 1.0).unwrap();
        assert!((v - 0.367_879_441_171_442_33).abs() < 1e-15);
    }

    #[test]
    fn gibbs_constant_length_is_plain_se_with_half() {
        let k = KernelSpec::gibbs(1.0, LengthScaleTable::constant(4.0).unwrap()).unwrap();
        let v = k.eval(1.0, 3.5).unwrap();
        assert!((v - (-(2.5f64).powi(2) / 32.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn gibbs_prefactor_across_change() {
        // sqrt(2·35·15 / (35² + 15²)) = sqrt(1050/1450), evaluated by hand.
        let k = gibbs_35_15();
        let v = k.eval(130.0, 130.0 + 1e-9).unwrap();
        assert!((v - 0.850_962_943_396_763_1).abs() < 1e-9, "{v}");
        assert!(v < 1.0);
    }

    #[test]
    fn gibbs_table_half_open_lookup() {
        let t = LengthScaleTable::new(vec![130.0], vec![35.0, 15.0]).unwrap();
        assert_eq!(t.lookup(130.0), 35.0);
        assert_eq!(t.lookup(130.001), 15.0);
        assert_eq!(t.lookup(-1e9), 35.0);
    }

    #[test]
    fn white_noise_only_on_diagonal() {
        let k = KernelSpec::white_noise(0.3).unwrap();
        assert_eq!(k.eval(1.0, 1.0).unwrap(), 0.3);
        assert_eq!(k.eval(1.0, 1.0 + 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(KernelSpec::squared_exponential(1.0, 0.0).is_err());
        assert!(KernelSpec::squared_exponential(-1.0, 1.0).is_err());
        let bad = KernelSpec::SquaredExponential { mu: 1.0, length: -2.0 };
        assert!(matches!(bad.eval(0.0, 1.0), Err(Error::Parameter(_))));
        assert!(LengthScaleTable::new(vec![1.0], vec![1.0]).is_err());
        assert!(LengthScaleTable::new(vec![2.0, 1.0], vec![1.0, 1.0, 1.0]).is_err());
        assert!(LengthScaleTable::new(vec![], vec![0.0]).is_err());
        assert!(KernelSpec::constant(0.0).is_ok());
        assert!(KernelSpec::white_noise(0.0).is_ok());
    }

    #[test]
    fn zero_and_small_grams() {
        let xs = [0.0, 1.0, 2.5];
        let g = KernelSpec::Zero.gram(&xs, &xs).unwrap();
        assert!(g.values.iter().all(|v| *v == 0.0));
        let g = se(3.0, 1.0).gram(&[7.0], &[7.0]).unwrap();
        assert_eq!(g.values, DMatrix::from_element(1, 1, 3.0));
    }

    #[test]
    fn three_point_se_gram_is_psd() {
        let xs = [0.0, 0.3, 2.0];
        let g = se(1.5, 0.7).gram(&xs, &xs).unwrap();
        assert!(min_eigenvalue(&g.values) >= 0.0);
        assert!(g.is_symmetric(1e-12));
    }

    #[test]
    fn derivative_values() {
        let k = se(1.0, 1.0);
        assert_eq!(k.eval_d1(0.4, 0.4).unwrap(), 0.0);
        assert!((k.eval_d12(0.4, 0.4).unwrap() - 2.0).abs() < 1e-15);
        let c = KernelSpec::constant(2.0).unwrap();
        assert_eq!(c.eval_d1(0.0, 5.0).unwrap(), 0.0);
        assert_eq!(c.eval_d12(0.0, 5.0).unwrap(), 0.0);
        let w = KernelSpec::white_noise(1.0).unwrap();
        assert!(matches!(w.eval_d1(0.0, 0.0), Err(Error::Unsupported(_))));
    }

    fn arb_kernel() -> impl Strategy<Value = KernelSpec> {
        prop_oneof![
            (0.0..5.0f64, 0.1..20.0f64).prop_map(|(m, l)| se(m, l)),
            (0.0..5.0f64, 0.5..20.0f64, 0.5..20.0f64, -5.0..5.0f64).prop_map(|(m, l1, l2, b)| {
                KernelSpec::gibbs(m, LengthScaleTable::new(vec![b], vec![l1, l2]).unwrap()).unwrap()
            }),
            (0.0..5.0f64).prop_map(|m| KernelSpec::constant(m).unwrap()),
            Just(KernelSpec::Zero),
            (0.0..5.0f64).prop_map(|v| KernelSpec::white_noise(v).unwrap()),
        ]
    }

    fn arb_diff_kernel() -> impl Strategy<Value = KernelSpec> {
        prop_oneof![
            (0.1..5.0f64, 0.5..20.0f64).prop_map(|(m, l)| se(m, l)),
            (0.1..5.0f64, 0.5..20.0f64).prop_map(|(m, l)| {
                KernelSpec::gibbs(m, LengthScaleTable::constant(l).unwrap()).unwrap()
            }),
            (0.0..5.0f64).prop_map(|m| KernelSpec::constant(m).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn symmetric(k in arb_kernel(), a in -20.0..20.0f64, b in -20.0..20.0f64) {
            prop_assert_eq!(k.eval(a, b).unwrap(), k.eval(b, a).unwrap());
        }

        #[test]
        fn gram_is_psd(k in arb_kernel(), xs in proptest::collection::vec(-30.0..30.0f64, 1..50)) {
            let g = k.gram(&xs, &xs).unwrap().values;
            let trace = g.trace();
            prop_assert!(min_eigenvalue(&g) >= -1e-8 * trace.max(1e-300));
        }

        #[test]
        fn derivatives_match_finite_differences(
            k in arb_diff_kernel(), a in -10.0..10.0f64, b in -10.0..10.0f64,
        ) {
            let h = 1e-5;
            let f = |x1: f64, x2: f64| k.eval(x1, x2).unwrap();
            let fd1 = (f(a + h, b) - f(a - h, b)) / (2.0 * h);
            let d1 = k.eval_d1(a, b).unwrap();
            prop_assert!((d1 - fd1).abs() <= 1e-5 * (1.0 + d1.abs()), "d1 {} vs {}", d1, fd1);
            let fd12 = (f(a + h, b + h) - f(a + h, b - h) - f(a - h, b + h) + f(a - h, b - h)) / (4.0 * h * h);
            let d12 = k.eval_d12(a, b).unwrap();
            prop_assert!((d12 - fd12).abs() <= 1e-5 * (1.0 + d12.abs()) + 1e-5, "d12 {} vs {}", d12, fd12);
        }

        #[test]
        fn gibbs_prefactor_bounded(l1 in 0.1..100.0f64, l2 in 0.1..100.0f64) {
            let k = KernelSpec::gibbs(1.0, LengthScaleTable::new(vec![0.0], vec![l1, l2]).unwrap()).unwrap();
            // Zero distance isolates the prefactor.
            let v = k.eval(-1e-300, 1e-300).unwrap();
            prop_assert!(v <= 1.0);
            if l1 == l2 { prop_assert_eq!(v, 1.0); } else { prop_assert!(v < 1.0); }
        }
    }
}
