//! Zero-mean GP regression: single and dual-process posteriors, log evidence
//! and prior sampling.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{param_err, Error, Result};
use crate::kernels::Covariance;
use crate::linalg::{dot, Cholesky};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Observations `y` at strictly increasing locations `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    t: Vec<f64>,
    y: Vec<f64>,
}

impl TimeSeries {
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if t.len() != y.len() {
            return Err(Error::Data(format!("{} locations but {} values", t.len(), y.len())));
        }
        if let Some(i) = t.iter().chain(&y).position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite entry at index {}", i % t.len().max(1))));
        }
        if let Some(i) = t.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "locations must be strictly increasing (t[{}] = {} >= t[{}] = {})",
                i,
                t[i],
                i + 1,
                t[i + 1]
            )));
        }
        Ok(Self { t, y })
    }

    pub fn empty() -> Self {
        Self { t: Vec::new(), y: Vec::new() }
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// The first `n` observations.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            t: self.t[..n].to_vec(),
            y: self.y[..n].to_vec(),
        }
    }

    /// Last minus first location, zero for fewer than two points.
    pub fn span(&self) -> f64 {
        match (self.t.first(), self.t.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

/// Marginal Gaussian beliefs at a set of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEstimate {
    pub mean: Vec<f64>,
    /// Clamped at zero.
    pub variance: Vec<f64>,
    /// Full covariance, when requested. Its diagonal equals `variance`.
    pub cov: Option<DMatrix<f64>>,
}

impl PosteriorEstimate {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Self {
        Self {
            mean,
            variance: variance.into_iter().map(|v| v.max(0.0)).collect(),
            cov: None,
        }
    }

    pub fn with_cov(mean: Vec<f64>, mut cov: DMatrix<f64>) -> Self {
        for i in 0..cov.nrows() {
            cov[(i, i)] = cov[(i, i)].max(0.0);
        }
        Self {
            mean,
            variance: cov.diagonal().iter().cloned().collect(),
            cov: Some(cov),
        }
    }

    pub fn std(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// `[K(X, X) + σ² I] = L Lᵀ` factored once, with `α = L⁻¹ y`.
#[derive(Debug, Clone)]
pub struct Conditioner {
    t: Vec<f64>,
    y: Vec<f64>,
    chol: Cholesky,
    alpha: Vec<f64>,
}

impl Conditioner {
    pub fn new<C: Covariance + ?Sized>(train: &TimeSeries, k: &C, noise: f64) -> Result<Self> {
        check_noise(noise)?;
        let mut kxx = k.cov_sym(train.t())?;
        for i in 0..kxx.nrows() {
            kxx[(i, i)] += noise;
        }
        let chol = Cholesky::factor(&kxx)?;
        let alpha = chol.solve_lower(train.y());
        Ok(Self {
            t: train.t().to_vec(),
            y: train.y().to_vec(),
            chol,
            alpha,
        })
    }

    /// Append one observation. The result is bit-identical to
    /// [`Conditioner::new`] on the extended series: the factor grows by one
    /// row when no jitter was needed, otherwise it is rebuilt.
    pub fn push<C: Covariance + ?Sized>(&mut self, k: &C, t: f64, y: f64, noise: f64) -> Result<()> {
        let mut row: Vec<f64> = k.cov_matrix(&[t], &self.t)?.iter().cloned().collect();
        row.push(k.cov(t, t)? + noise);
        self.push_with_row(k, t, y, noise, row)
    }

    /// [`Conditioner::push`] with the precomputed row
    /// `[k(t, t_0), …, k(t, t_{n-1}), k(t, t) + noise]`.
    pub fn push_with_row<C: Covariance + ?Sized>(&mut self, k: &C, t: f64, y: f64, noise: f64, row: Vec<f64>) -> Result<()> {
        if let Some(last) = self.t.last() {
            if !(t > *last) {
                return Err(Error::Data(format!("location {t} does not follow {last}")));
            }
        }
        if row.len() != self.t.len() + 1 {
            return Err(param_err("precomputed row must have length len() + 1"));
        }
        self.t.push(t);
        self.y.push(y);
        if self.chol.jitter() == 0.0 && self.chol.push_row(&row) {
            // Forward substitution is row-local, so only the new entry changes.
            let i = self.alpha.len();
            let li = self.chol.row(i);
            let s = y - dot(&li[..i], &self.alpha);
            self.alpha.push(s / li[i]);
            return Ok(());
        }
        let series = TimeSeries::new(std::mem::take(&mut self.t), std::mem::take(&mut self.y))?;
        *self = Self::new(&series, k, noise)?;
        Ok(())
    }

    /// Mean and variance (or full covariance) of the component with kernel
    /// `k_part`, whose prior is part of the conditioned sum.
    pub fn predict<C: Covariance + ?Sized>(&self, k_part: &C, xs: &[f64], full_cov: bool) -> Result<PosteriorEstimate> {
        let cross = k_part.cov_matrix(xs, &self.t)?;
        let m = xs.len();
        // V = L⁻¹ K(X, X*), one column per query point; mean = Vᵀ L⁻¹ y.
        let v: Vec<Vec<f64>> = (0..m)
            .map(|i| self.chol.solve_lower(&cross.row(i).iter().cloned().collect::<Vec<_>>()))
            .collect();
        let mean: Vec<f64> = v.iter().map(|vi| dot(vi, &self.alpha)).collect();
        if full_cov {
            let mut cov = k_part.cov_sym(xs)?;
            for a in 0..m {
                for b in 0..=a {
                    let s = dot(&v[a], &v[b]);
                    cov[(a, b)] -= s;
                    if a != b {
                        cov[(b, a)] = cov[(a, b)];
                    }
                }
            }
            Ok(PosteriorEstimate::with_cov(mean, cov))
        } else {
            let var = xs
                .iter()
                .zip(&v)
                .map(|(x, vi)| Ok(k_part.cov(*x, *x)? - dot(vi, vi)))
                .collect::<Result<Vec<_>>>()?;
            Ok(PosteriorEstimate::new(mean, var))
        }
    }

    /// Posterior mean and variance at one point of a component, given its
    /// cross covariances with the training locations and its prior variance.
    pub fn predict_point(&self, cross: &[f64], prior_var: f64) -> PosteriorEstimate {
        let v = self.chol.solve_lower(cross);
        PosteriorEstimate::new(vec![dot(&v, &self.alpha)], vec![prior_var - dot(&v, &v)])
    }

    /// Marginal posteriors of two components with kernels `k_a` and `k_b`
    /// and of their sum, which must be the conditioned kernel.
    pub fn predict_split<A: Covariance + ?Sized, B: Covariance + ?Sized>(
        &self,
        k_a: &A,
        k_b: &B,
        xs: &[f64],
    ) -> Result<(PosteriorEstimate, PosteriorEstimate, PosteriorEstimate)> {
        let cross_a = k_a.cov_matrix(xs, &self.t)?;
        let cross_b = k_b.cov_matrix(xs, &self.t)?;
        let m = xs.len();
        let mut out = [
            (Vec::with_capacity(m), Vec::with_capacity(m)),
            (Vec::with_capacity(m), Vec::with_capacity(m)),
            (Vec::with_capacity(m), Vec::with_capacity(m)),
        ];
        for (i, x) in xs.iter().enumerate() {
            let va = self.chol.solve_lower(&cross_a.row(i).iter().cloned().collect::<Vec<_>>());
            let vb = self.chol.solve_lower(&cross_b.row(i).iter().cloned().collect::<Vec<_>>());
            let vs: Vec<f64> = va.iter().zip(&vb).map(|(p, q)| p + q).collect();
            let (pa, pb) = (k_a.cov(*x, *x)?, k_b.cov(*x, *x)?);
            for (o, (v, prior)) in out.iter_mut().zip([(&va, pa), (&vb, pb), (&vs, pa + pb)]) {
                o.0.push(dot(v, &self.alpha));
                o.1.push(prior - dot(v, v));
            }
        }
        let [a, b, s] = out.map(|(mean, var)| PosteriorEstimate::new(mean, var));
        Ok((a, b, s))
    }

    /// `log N(y; 0, K + σ²I)`.
    pub fn log_evidence(&self) -> f64 {
        let n = self.t.len() as f64;
        let quad = dot(&self.alpha, &self.alpha);
        let half_logdet: f64 = (0..self.chol.dim()).map(|i| self.chol.pivot(i).ln()).sum();
        -0.5 * quad - half_logdet - 0.5 * n * LN_2PI
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn factor(&self) -> &Cholesky {
        &self.chol
    }
}

fn check_noise(noise: f64) -> Result<()> {
    if noise.is_finite() && noise >= 0.0 {
        Ok(())
    } else {
        Err(param_err(format!("noise variance must be >= 0, got {noise}")))
    }
}

/// Posterior marginals at `xs`.
pub fn posterior<C: Covariance + ?Sized>(train: &TimeSeries, xs: &[f64], k: &C, noise: f64) -> Result<PosteriorEstimate> {
    Conditioner::new(train, k, noise)?.predict(k, xs, false)
}

/// Posterior with the full query covariance.
pub fn posterior_full<C: Covariance + ?Sized>(
    train: &TimeSeries,
    xs: &[f64],
    k: &C,
    noise: f64,
) -> Result<PosteriorEstimate> {
    Conditioner::new(train, k, noise)?.predict(k, xs, true)
}

/// Separate posteriors of the real process `f` and the fault process `e`
/// when `y = f + e + ε`.
pub fn dual_posterior<F: Covariance, E: Covariance>(
    train: &TimeSeries,
    xs: &[f64],
    k_f: &F,
    k_e: &E,
    noise: f64,
    full_cov: bool,
) -> Result<(PosteriorEstimate, PosteriorEstimate)> {
    let k_s = crate::kernels::SumCov(k_f, k_e);
    let cond = Conditioner::new(train, &k_s, noise)?;
    Ok((cond.predict(k_f, xs, full_cov)?, cond.predict(k_e, xs, full_cov)?))
}

/// `log p(y | X)` under `K + σ²I`.
pub fn log_evidence<C: Covariance + ?Sized>(train: &TimeSeries, k: &C, noise: f64) -> Result<f64> {
    Ok(Conditioner::new(train, k, noise)?.log_evidence())
}

/// Reusable sampler for `N(0, K(X, X))`.
///
/// Points with exactly zero prior variance are left out of the factor, so
/// they are exactly zero in every draw; the rest goes through the jittered
/// Cholesky factorization.
#[derive(Debug, Clone)]
pub struct PriorSampler {
    n: usize,
    active: Vec<usize>,
    chol: Cholesky,
}

impl PriorSampler {
    pub fn new<C: Covariance + ?Sized>(k: &C, xs: &[f64]) -> Result<Self> {
        let gram = k.cov_sym(xs)?;
        let active: Vec<usize> = (0..xs.len()).filter(|&i| gram[(i, i)] != 0.0).collect();
        let sub = DMatrix::from_fn(active.len(), active.len(), |i, j| gram[(active[i], active[j])]);
        Ok(Self {
            n: xs.len(),
            chol: Cholesky::factor(&sub)?,
            active,
        })
    }

    /// Consumes `n` standard normals from `rng` regardless of how many
    /// points are active.
    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n).map(|_| StandardNormal.sample(rng)).collect();
        let mut out = vec![0.0; self.n];
        for (i, &row) in self.active.iter().enumerate() {
            out[row] = self.chol.row(i).iter().zip(&z).map(|(l, zj)| l * zj).sum();
        }
        out
    }
}

/// One draw from `N(0, K(X, X))`, deterministic in `seed`.
pub fn sample_prior<C: Covariance + ?Sized>(k: &C, xs: &[f64], seed: u64) -> Result<Vec<f64>> {
    let mut rng = crate::rng_from_seed(seed);
    Ok(PriorSampler::new(k, xs)?.draw(&mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelSpec, SumCov};
    use proptest::prelude::*;

    fn se(mu: f64, l: f64) -> KernelSpec {
        KernelSpec::squared_exponential(mu, l).unwrap()
    }

    /// Dense joint-Gaussian conditioning with explicit inverses.
    fn oracle(kf: &KernelSpec, ke: &KernelSpec, t: &[f64], y: &[f64], xs: &[f64], s2: f64) -> (Vec<f64>, DMatrix<f64>) {
        let ks = SumCov(kf, ke);
        let mut kyy = ks.cov_sym(t).unwrap();
        for i in 0..t.len() {
            kyy[(i, i)] += s2;
        }
        let inv = kyy.try_inverse().unwrap();
        let kfy = kf.cov_matrix(xs, t).unwrap();
        let yv = nalgebra::DVector::from_column_slice(y);
        let mean = &kfy * &inv * yv;
        let cov = kf.cov_sym(xs).unwrap() - &kfy * &inv * kfy.transpose();
        (mean.iter().cloned().collect(), cov)
    }

    #[test]
    fn time_series_validation() {
        assert!(TimeSeries::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(TimeSeries::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(TimeSeries::new(vec![0.0, f64::NAN], vec![1.0, 1.0]).is_err());
        assert!(TimeSeries::new(vec![0.0, 1.0], vec![1.0, f64::INFINITY]).is_err());
        assert_eq!(TimeSeries::new(vec![0.0, 2.5], vec![1.0, 1.0]).unwrap().span(), 2.5);
    }

    #[test]
    fn empty_training_set_gives_prior() {
        let k = se(2.0, 1.0);
        let p = posterior_full(&TimeSeries::empty(), &[0.0, 1.0], &k, 0.1).unwrap();
        assert_eq!(p.mean, vec![0.0, 0.0]);
        assert_eq!(p.cov.unwrap(), k.cov_sym(&[0.0, 1.0]).unwrap());
    }

    #[test]
    fn noiseless_interpolation() {
        let ts = TimeSeries::new(vec![0.0, 1.0, 3.0], vec![0.5, -1.0, 2.0]).unwrap();
        let p = posterior(&ts, ts.t(), &se(1.0, 1.0), 0.0).unwrap();
        for (m, y) in p.mean.iter().zip(ts.y()) {
            assert!((m - y).abs() < 1e-10);
        }
        assert!(p.variance.iter().all(|v| *v < 1e-10));
    }

    #[test]
    fn single_point_closed_form() {
        let ts = TimeSeries::new(vec![0.0], vec![1.0]).unwrap();
        let p = posterior(&ts, &[1.0], &se(1.0, 1.0), 0.1).unwrap();
        assert!((p.mean[0] - 0.334_435_855_610_402_1).abs() < 1e-15, "{}", p.mean[0]);
        let e2 = (-2.0f64).exp();
        assert!((p.variance[0] - (1.0 - e2 / 1.1)).abs() < 1e-15);
    }

    #[test]
    fn zero_fault_kernel_dual() {
        let ts = TimeSeries::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 2.0]).unwrap();
        let kf = se(1.0, 2.0);
        let (f, e) = dual_posterior(&ts, &[0.5, 1.5], &kf, &KernelSpec::Zero, 0.1, true).unwrap();
        let p = posterior(&ts, &[0.5, 1.5], &kf, 0.1).unwrap();
        assert_eq!(f.mean, p.mean);
        assert_eq!(e.mean, vec![0.0, 0.0]);
        assert!(e.cov.unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn four_point_dual_against_joint_oracle() {
        let t = [0.0, 1.0, 2.5, 4.0];
        let y = [0.3, -0.2, 1.1, 0.7];
        let ts = TimeSeries::new(t.to_vec(), y.to_vec()).unwrap();
        let kf = se(1.0, 2.0);
        let ke = se(0.5, 0.7);
        let xs = [0.5, 2.0, 3.9];
        let (f, e) = dual_posterior(&ts, &xs, &kf, &ke, 0.05, true).unwrap();
        let (mf, cf) = oracle(&kf, &ke, &t, &y, &xs, 0.05);
        let (me, ce) = oracle(&ke, &kf, &t, &y, &xs, 0.05);
        for i in 0..3 {
            assert!((f.mean[i] - mf[i]).abs() < 1e-10);
            assert!((e.mean[i] - me[i]).abs() < 1e-10);
        }
        assert!((f.cov.unwrap() - cf).amax() < 1e-10);
        assert!((e.cov.unwrap() - ce).amax() < 1e-10);
    }

    #[test]
    fn log_evidence_trivial_and_dense() {
        let ts = TimeSeries::new(vec![0.0], vec![0.0]).unwrap();
        let v = log_evidence(&ts, &KernelSpec::Zero, 1.0).unwrap();
        assert!((v + 0.5 * LN_2PI).abs() < 1e-15);

        let t = [0.0, 0.7, 2.0];
        let y = [1.0, 0.2, -0.4];
        let k = se(1.5, 1.2);
        let mut c = k.cov_sym(&t).unwrap();
        for i in 0..3 {
            c[(i, i)] += 0.2;
        }
        let yv = nalgebra::DVector::from_column_slice(&y);
        let quad = (yv.transpose() * c.clone().try_inverse().unwrap() * &yv)[(0, 0)];
        let expect = -0.5 * quad - 0.5 * c.determinant().ln() - 1.5 * LN_2PI;
        let got = log_evidence(&TimeSeries::new(t.to_vec(), y.to_vec()).unwrap(), &k, 0.2).unwrap();
        assert!((got - expect).abs() < 1e-10);
    }

    #[test]
    fn sample_prior_determinism_and_zero() {
        let xs = [0.0, 1.0, 2.0];
        assert_eq!(sample_prior(&KernelSpec::Zero, &xs, 3).unwrap(), vec![0.0; 3]);
        let k = se(1.0, 1.0);
        assert_eq!(sample_prior(&k, &xs, 7).unwrap(), sample_prior(&k, &xs, 7).unwrap());
        assert_ne!(sample_prior(&k, &xs, 7).unwrap(), sample_prior(&k, &xs, 8).unwrap());
    }

    #[test]
    fn push_matches_fresh_conditioner() {
        let t = [0.0, 0.5, 1.3, 2.0, 4.0];
        let y = [0.1, 0.4, -0.3, 0.0, 1.0];
        let k = SumCov(se(1.0, 1.5), se(0.3, 0.4));
        let mut inc = Conditioner::new(&TimeSeries::empty(), &k, 1e-3).unwrap();
        for i in 0..t.len() {
            inc.push(&k, t[i], y[i], 1e-3).unwrap();
            let full = Conditioner::new(&TimeSeries::new(t[..=i].to_vec(), y[..=i].to_vec()).unwrap(), &k, 1e-3).unwrap();
            assert_eq!(inc.factor(), full.factor());
            assert_eq!(inc.log_evidence().to_bits(), full.log_evidence().to_bits());
            assert_eq!(inc.predict(&k.0, &[1.0], false).unwrap(), full.predict(&k.0, &[1.0], false).unwrap());
        }
        assert!(inc.push(&k, 3.0, 0.0, 1e-3).is_err());
    }

    #[test]
    fn push_falls_back_when_jitter_is_needed() {
        // Constant kernel, no noise: singular after the first point.
        let k = KernelSpec::constant(1.0).unwrap();
        let t = [0.0, 1.0, 2.0];
        let y = [1.0, 1.0, 1.0];
        let mut inc = Conditioner::new(&TimeSeries::empty(), &k, 0.0).unwrap();
        for i in 0..3 {
            inc.push(&k, t[i], y[i], 0.0).unwrap();
            let full = Conditioner::new(&TimeSeries::new(t[..=i].to_vec(), y[..=i].to_vec()).unwrap(), &k, 0.0).unwrap();
            assert_eq!(inc.factor(), full.factor());
        }
        assert!(inc.factor().jitter() > 0.0);
    }

    #[test]
    fn indefinite_matrix_cannot_be_sampled() {
        struct Bad;
        impl Covariance for Bad {
            fn cov(&self, a: f64, b: f64) -> Result<f64> {
                Ok(if a == b { 1.0 } else { -1.0 })
            }
        }
        assert!(PriorSampler::new(&Bad, &[0.0, 1.0, 2.0]).is_err());
    }

    #[allow(clippy::type_complexity)]
    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64, f64, f64, f64, f64)> {
        (1usize..=8, 1usize..=8).prop_flat_map(|(n, m)| {
            (
                proptest::collection::vec(0.2..1.5f64, n),
                proptest::collection::vec(-2.0..2.0f64, n),
                proptest::collection::vec(-1.0..10.0f64, m),
                0.2..3.0f64,
                0.3..4.0f64,
                0.0..2.0f64,
                0.3..4.0f64,
                1e-3..0.5f64,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn posterior_matches_oracle_and_dual_sums((gaps, y, xs, mf, lf, me, le, s2) in instance()) {
            let mut t = Vec::new();
            let mut at = 0.0;
            for g in gaps { at += g; t.push(at); }
            let ts = TimeSeries::new(t.clone(), y.clone()).unwrap();
            let kf = se(mf, lf);
            let ke = se(me, le);
            let p = posterior_full(&ts, &xs, &kf, s2).unwrap();
            let (om, oc) = oracle(&kf, &KernelSpec::Zero, &t, &y, &xs, s2);
            for i in 0..xs.len() {
                prop_assert!((p.mean[i] - om[i]).abs() <= 1e-10);
                prop_assert!(p.variance[i] <= kf.eval(xs[i], xs[i]).unwrap() + 1e-10);
            }
            let cov = p.cov.unwrap();
            for i in 0..xs.len() {
                for j in 0..xs.len() {
                    let o = if i == j { oc[(i, j)].max(0.0) } else { oc[(i, j)] };
                    prop_assert!((cov[(i, j)] - o).abs() <= 1e-10);
                }
            }
            let (f, e) = dual_posterior(&ts, &xs, &kf, &ke, s2, false).unwrap();
            let s = posterior(&ts, &xs, &SumCov(&kf, &ke), s2).unwrap();
            for i in 0..xs.len() {
                prop_assert!((f.mean[i] + e.mean[i] - s.mean[i]).abs() <= 1e-10);
            }
        }
    }
}
