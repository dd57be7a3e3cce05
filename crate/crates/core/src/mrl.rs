//! Markov Region Link (MRL) covariance.
//!
//! The input line is cut into regions at ordered boundaries. Each region `r`
//! has its own kernel `K_r`, possibly from a different family than its
//! neighbours. Region interiors are conditionally independent given the
//! process at the boundaries, and the boundary process has a prescribed
//! covariance `K_B`. For a point pair in the same region
//!
//! ```text
//! K(x, x') = K_r(x, x') + g_r(x) [K_B − K_r(B, B)] g_r(x')ᵀ,   g_r(x) = K_r(x, B) K_r(B, B)⁻¹
//! ```
//!
//! and for points in different regions `K(x, x') = g_r(x) K_B[B_r, B_s] g_s(x')ᵀ`.
//!
//! A boundary is linked by value ([`Link::Value`]), by value and first
//! derivative ([`Link::Slope`]), or not at all ([`Link::Cut`]); a cut makes the
//! neighbouring regions independent and lets the process jump there.
//!
//! With more than one linked boundary the boundary values form a Gauss–Markov
//! chain. Each boundary keeps its own `K_B` as its marginal covariance, and two
//! consecutive boundaries are correlated through the region between them with
//! the correlation that region's kernel implies. When every `K_B` equals the
//! adjacent regions' own boundary covariance the chain reproduces each region
//! kernel exactly.

use nalgebra::DMatrix;

use crate::error::{param_err, Error, Result};
use crate::kernels::{Covariance, GramMatrix, KernelSpec};
use crate::linalg::{sym_pinv, sym_pinv_sqrt, sym_sqrt, Cholesky};

/// How two neighbouring regions are joined at a boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Link {
    /// Value continuity, boundary variance `variance`.
    Value { variance: f64 },
    /// Value and first-derivative continuity; `K_B = diag(variance, slope_variance)`.
    Slope { variance: f64, slope_variance: f64 },
    /// No link: regions on either side are independent.
    Cut,
}

impl Link {
    /// Continuity order, `None` for a cut.
    pub fn order(&self) -> Option<u8> {
        match self {
            Self::Value { .. } => Some(0),
            Self::Slope { .. } => Some(1),
            Self::Cut => None,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Self::Value { .. } => 1,
            Self::Slope { .. } => 2,
            Self::Cut => 0,
        }
    }

    /// The boundary covariance block `K_B`.
    pub fn block(&self) -> DMatrix<f64> {
        match *self {
            Self::Value { variance } => DMatrix::from_element(1, 1, variance),
            Self::Slope {
                variance,
                slope_variance,
            } => DMatrix::from_row_slice(2, 2, &[variance, 0.0, 0.0, slope_variance]),
            Self::Cut => DMatrix::zeros(0, 0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        match *self {
            Self::Value { variance } if !ok(variance) => {
                Err(param_err(format!("boundary variance must be >= 0, got {variance}")))
            }
            Self::Slope {
                variance,
                slope_variance,
            } if !ok(variance) || !ok(slope_variance) => Err(param_err(format!(
                "boundary variances must be >= 0, got ({variance}, {slope_variance})"
            ))),
            _ => Ok(()),
        }
    }
}

/// Boundaries, per-region kernels and boundary links defining one MRL prior.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionModel {
    boundaries: Vec<f64>,
    regions: Vec<KernelSpec>,
    links: Vec<Link>,
}

impl RegionModel {
    pub fn new(boundaries: Vec<f64>, regions: Vec<KernelSpec>, links: Vec<Link>) -> Result<Self> {
        if regions.len() != boundaries.len() + 1 {
            return Err(param_err(format!(
                "{} boundaries need {} region kernels, got {}",
                boundaries.len(),
                boundaries.len() + 1,
                regions.len()
            )));
        }
        if links.len() != boundaries.len() {
            return Err(param_err("one link per boundary required"));
        }
        if boundaries.iter().any(|b| !b.is_finite()) || boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(param_err("boundaries must be finite and strictly increasing"));
        }
        for k in &regions {
            k.validate()?;
        }
        for (i, link) in links.iter().enumerate() {
            link.validate()?;
            if matches!(link, Link::Slope { .. }) {
                for k in [&regions[i], &regions[i + 1]] {
                    if !k.supports_derivatives() {
                        return Err(Error::Unsupported(format!(
                            "slope continuity at {} needs derivatives of the {} kernel",
                            boundaries[i],
                            k.family()
                        )));
                    }
                }
            }
        }
        Ok(Self {
            boundaries,
            regions,
            links,
        })
    }

    /// Two regions joined at `boundary`.
    pub fn two_region(left: KernelSpec, right: KernelSpec, boundary: f64, link: Link) -> Result<Self> {
        Self::new(vec![boundary], vec![left, right], vec![link])
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn regions(&self) -> &[KernelSpec] {
        &self.regions
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// Region index of `x`; a point on a boundary belongs to the region on
    /// its left.
    pub fn region_of(&self, x: f64) -> usize {
        self.boundaries.partition_point(|b| *b < x)
    }

    /// The same model with every `K_B` replaced by the left region's own
    /// boundary covariance, i.e. the "matching" configuration.
    pub fn with_matching_boundaries(&self) -> Result<Self> {
        let links = self
            .links
            .iter()
            .enumerate()
            .map(|(i, link)| {
                let b = self.boundaries[i];
                let k = &self.regions[i];
                Ok(match link {
                    Link::Value { .. } => Link::Value { variance: k.eval(b, b)? },
                    Link::Slope { .. } => Link::Slope {
                        variance: k.eval(b, b)?,
                        slope_variance: k.eval_d12(b, b)?,
                    },
                    Link::Cut => Link::Cut,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.boundaries.clone(), self.regions.clone(), links)
    }
}

/// One coordinate of the boundary process: the value or the slope at a boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Comp {
    at: f64,
    slope: bool,
}

/// `Cov` between two augmented coordinates under a single kernel.
fn aug_cov(k: &KernelSpec, a: Comp, b: Comp) -> Result<f64> {
    match (a.slope, b.slope) {
        (false, false) => k.eval(a.at, b.at),
        // Cov(f'(a), f(b)) = ∂K(a, b)/∂a.
        (true, false) => k.eval_d1(a.at, b.at),
        (false, true) => k.eval_d1(b.at, a.at),
        (true, true) => k.eval_d12(a.at, b.at),
    }
}

/// `Cov(f(x), coordinate)` under a single kernel.
fn point_cov(k: &KernelSpec, x: f64, c: Comp) -> Result<f64> {
    aug_cov(k, Comp { at: x, slope: false }, c)
}

fn comps_of(boundary: f64, link: &Link) -> Vec<Comp> {
    let mut out = Vec::with_capacity(2);
    if link.dim() >= 1 {
        out.push(Comp { at: boundary, slope: false });
    }
    if link.dim() == 2 {
        out.push(Comp { at: boundary, slope: true });
    }
    out
}

fn aug_block(k: &KernelSpec, a: &[Comp], b: &[Comp]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(a.len(), b.len());
    for (i, ca) in a.iter().enumerate() {
        for (j, cb) in b.iter().enumerate() {
            m[(i, j)] = aug_cov(k, *ca, *cb)?;
        }
    }
    Ok(m)
}

/// Inverse of a region's boundary covariance used for the gains.
///
/// Coordinates whose prior variance is exactly zero are dropped (their gain
/// is zero); the remaining block must be positive definite.
fn gain_inverse(kbb: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = kbb.nrows();
    let keep: Vec<usize> = (0..n).filter(|&i| kbb[(i, i)] != 0.0).collect();
    let mut inv = DMatrix::zeros(n, n);
    if keep.is_empty() {
        return Ok(inv);
    }
    let sub = DMatrix::from_fn(keep.len(), keep.len(), |i, j| kbb[(keep[i], keep[j])]);
    let chol = Cholesky::factor_exact(&sub, 0.0)
        .ok_or_else(|| Error::Conditioning(format!("{}x{} block {:?}", sub.nrows(), sub.ncols(), sub.as_slice())))?;
    for (cj, &j) in keep.iter().enumerate() {
        let mut e = vec![0.0; keep.len()];
        e[cj] = 1.0;
        let col = chol.solve(&e);
        for (ci, &i) in keep.iter().enumerate() {
            inv[(i, j)] = col[ci];
        }
    }
    Ok(inv)
}

#[derive(Debug, Clone)]
struct RegionCond {
    /// Indices into the global boundary coordinate list.
    comps: Vec<usize>,
    kernel: KernelSpec,
    /// Pseudo-inverse of `K_r(B_r, B_r)`.
    kbb_inv: DMatrix<f64>,
    /// `K_B[B_r, B_r] − K_r(B_r, B_r)`.
    correction: DMatrix<f64>,
}

#[derive(Debug, Clone)]
enum Rep {
    Boundary(usize),
    Region { r: usize, x: f64, g: Vec<f64> },
}

/// Precomputed MRL covariance for a [`RegionModel`] with any number of
/// boundaries.
#[derive(Debug, Clone)]
pub struct MrlKernel {
    model: RegionModel,
    comps: Vec<Comp>,
    /// Offset of each boundary's coordinates in `comps` (`None` for cuts).
    offsets: Vec<Option<usize>>,
    joint: DMatrix<f64>,
    regions: Vec<RegionCond>,
}

impl MrlKernel {
    pub fn new(model: RegionModel) -> Result<Self> {
        let nb = model.boundaries.len();
        let mut comps = Vec::new();
        let mut offsets = Vec::with_capacity(nb);
        for (b, link) in model.boundaries.iter().zip(&model.links) {
            if link.order().is_some() {
                offsets.push(Some(comps.len()));
                comps.extend(comps_of(*b, link));
            } else {
                offsets.push(None);
            }
        }
        let nc = comps.len();
        let node = |k: usize| -> std::ops::Range<usize> {
            let o = offsets[k].expect("linked boundary");
            o..o + model.links[k].dim()
        };

        // Joint covariance of all boundary coordinates, built left to right.
        let mut joint = DMatrix::<f64>::zeros(nc, nc);
        let mut chain_start: Option<usize> = None;
        for k in 0..nb {
            if offsets[k].is_none() {
                chain_start = None;
                continue;
            }
            let rk = node(k);
            let block = model.links[k].block();
            joint.view_mut((rk.start, rk.start), (rk.len(), rk.len())).copy_from(&block);
            match chain_start {
                None => chain_start = Some(k),
                Some(first) => {
                    // Region k lies between boundaries k-1 and k.
                    let kernel = &model.regions[k];
                    let rp = node(k - 1);
                    let left = &comps[rp.clone()];
                    let right = &comps[rk.clone()];
                    let k_ll = aug_block(kernel, left, left)?;
                    let k_rr = aug_block(kernel, right, right)?;
                    let k_lr = aug_block(kernel, left, right)?;
                    let prev_block = joint.view((rp.start, rp.start), (rp.len(), rp.len())).into_owned();
                    let normalized = sym_pinv_sqrt(&k_ll) * k_lr * sym_pinv_sqrt(&k_rr);
                    let cross = sym_sqrt(&prev_block) * normalized * sym_sqrt(&block);
                    joint.view_mut((rp.start, rk.start), (rp.len(), rk.len())).copy_from(&cross);
                    joint
                        .view_mut((rk.start, rp.start), (rk.len(), rp.len()))
                        .copy_from(&cross.transpose());
                    // Markov propagation to earlier boundaries of the same chain.
                    let prev_pinv = sym_pinv(&prev_block);
                    for j in first..k - 1 {
                        let rj = node(j);
                        let c_jp = joint.view((rj.start, rp.start), (rj.len(), rp.len())).into_owned();
                        let c_jk = c_jp * &prev_pinv * &cross;
                        joint.view_mut((rj.start, rk.start), (rj.len(), rk.len())).copy_from(&c_jk);
                        joint
                            .view_mut((rk.start, rj.start), (rk.len(), rj.len()))
                            .copy_from(&c_jk.transpose());
                    }
                }
            }
        }

        let mut regions = Vec::with_capacity(nb + 1);
        for (r, kernel) in model.regions.iter().enumerate() {
            let mut idx = Vec::new();
            if r > 0 {
                if let Some(o) = offsets[r - 1] {
                    idx.extend(o..o + model.links[r - 1].dim());
                }
            }
            if r < nb {
                if let Some(o) = offsets[r] {
                    idx.extend(o..o + model.links[r].dim());
                }
            }
            let local: Vec<Comp> = idx.iter().map(|&i| comps[i]).collect();
            let kbb = aug_block(kernel, &local, &local)?;
            let kbb_inv = gain_inverse(&kbb)?;
            let c_loc = DMatrix::from_fn(idx.len(), idx.len(), |i, j| joint[(idx[i], idx[j])]);
            regions.push(RegionCond {
                comps: idx,
                kernel: kernel.clone(),
                kbb_inv,
                correction: c_loc - kbb,
            });
        }

        Ok(Self {
            model,
            comps,
            offsets,
            joint,
            regions,
        })
    }

    pub fn model(&self) -> &RegionModel {
        &self.model
    }

    /// Joint covariance of the boundary coordinates (values, and slopes where
    /// linked), ordered by boundary.
    pub fn boundary_covariance(&self) -> &DMatrix<f64> {
        &self.joint
    }

    fn rep(&self, x: f64) -> Result<Rep> {
        let r = self.model.region_of(x);
        if r < self.model.boundaries.len() && self.model.boundaries[r] == x {
            if let Some(o) = self.offsets[r] {
                return Ok(Rep::Boundary(o));
            }
        }
        let cond = &self.regions[r];
        let k_xb: Vec<f64> = cond
            .comps
            .iter()
            .map(|&c| point_cov(&cond.kernel, x, self.comps[c]))
            .collect::<Result<_>>()?;
        let n = k_xb.len();
        let g = (0..n)
            .map(|j| (0..n).map(|i| k_xb[i] * cond.kbb_inv[(i, j)]).sum())
            .collect();
        Ok(Rep::Region { r, x, g })
    }

    fn pair(&self, a: &Rep, b: &Rep) -> Result<f64> {
        Ok(match (a, b) {
            (Rep::Boundary(i), Rep::Boundary(j)) => self.joint[(*i, *j)],
            (Rep::Boundary(i), Rep::Region { r, g, .. }) => {
                let comps = &self.regions[*r].comps;
                g.iter().zip(comps).map(|(gj, &c)| self.joint[(*i, c)] * gj).sum()
            }
            (Rep::Region { r, g, .. }, Rep::Boundary(j)) => {
                let comps = &self.regions[*r].comps;
                g.iter().zip(comps).map(|(gi, &c)| gi * self.joint[(c, *j)]).sum()
            }
            (Rep::Region { r: r1, x: x1, g: g1 }, Rep::Region { r: r2, x: x2, g: g2 }) => {
                if r1 == r2 {
                    let cond = &self.regions[*r1];
                    let mut s = cond.kernel.eval(*x1, *x2)?;
                    for (a, ga) in g1.iter().enumerate() {
                        for (b, gb) in g2.iter().enumerate() {
                            s += ga * cond.correction[(a, b)] * gb;
                        }
                    }
                    s
                } else {
                    let c1 = &self.regions[*r1].comps;
                    let c2 = &self.regions[*r2].comps;
                    let mut s = 0.0;
                    for (a, ga) in g1.iter().enumerate() {
                        for (b, gb) in g2.iter().enumerate() {
                            s += ga * self.joint[(c1[a], c2[b])] * gb;
                        }
                    }
                    s
                }
            }
        })
    }

    /// Gram matrix `K(xs, ys)`.
    pub fn gram(&self, xs: &[f64], ys: &[f64]) -> Result<GramMatrix> {
        GramMatrix::of(self, xs, ys)
    }
}

impl Covariance for MrlKernel {
    fn cov(&self, x1: f64, x2: f64) -> Result<f64> {
        self.pair(&self.rep(x1)?, &self.rep(x2)?)
    }

    fn cov_matrix(&self, xs: &[f64], ys: &[f64]) -> Result<DMatrix<f64>> {
        let ra: Vec<Rep> = xs.iter().map(|x| self.rep(*x)).collect::<Result<_>>()?;
        let rb: Vec<Rep> = ys.iter().map(|x| self.rep(*x)).collect::<Result<_>>()?;
        let mut m = DMatrix::zeros(xs.len(), ys.len());
        for (i, a) in ra.iter().enumerate() {
            for (j, b) in rb.iter().enumerate() {
                m[(i, j)] = self.pair(a, b)?;
            }
        }
        Ok(m)
    }

    fn cov_sym(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        let reps: Vec<Rep> = xs.iter().map(|x| self.rep(*x)).collect::<Result<_>>()?;
        let n = xs.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.pair(&reps[i], &reps[j])?;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }
}

/// Pointwise two-region MRL covariance.
pub fn mrl_eval(x1: f64, x2: f64, model: &RegionModel) -> Result<f64> {
    if model.boundaries.len() != 1 {
        return Err(param_err(format!(
            "pointwise evaluation needs exactly one boundary, model has {}",
            model.boundaries.len()
        )));
    }
    MrlKernel::new(model.clone())?.cov(x1, x2)
}

/// Prior covariance of `(f(x_B), f'(x_B))` together with the cross blocks to
/// a region's points.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBoundary {
    /// `[[K, ∂Kᵀ], [∂K, ∂∂K]]` at the boundary point.
    pub k_b: DMatrix<f64>,
    /// `K(X_r, x_B)`, one row per region point.
    pub value_cross: DMatrix<f64>,
    /// `∂K(x_B, X_r)`: derivative with respect to the boundary argument,
    /// one column per region point.
    pub slope_cross: DMatrix<f64>,
}

pub fn augment_derivative(spec: &KernelSpec, xb: f64, xr: &[f64]) -> Result<AugmentedBoundary> {
    if !spec.supports_derivatives() {
        return Err(Error::Unsupported(format!("{} kernel has no derivatives", spec.family())));
    }
    let k_b = DMatrix::from_row_slice(
        2,
        2,
        &[
            spec.eval(xb, xb)?,
            spec.eval_d1(xb, xb)?,
            spec.eval_d1(xb, xb)?,
            spec.eval_d12(xb, xb)?,
        ],
    );
    let mut value_cross = DMatrix::zeros(xr.len(), 1);
    let mut slope_cross = DMatrix::zeros(1, xr.len());
    for (i, x) in xr.iter().enumerate() {
        value_cross[(i, 0)] = spec.eval(*x, xb)?;
        slope_cross[(0, i)] = spec.eval_d1(xb, *x)?;
    }
    Ok(AugmentedBoundary {
        k_b,
        value_cross,
        slope_cross,
    })
}

/// Gain and corrected covariance for one region conditioned on `K_B`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConditioning {
    /// `G_r = K_r(X_r, B) K_r(B, B)⁻¹`.
    pub gain: DMatrix<f64>,
    /// `K*_r(X_r, X_r) = K_r + G_r [K_B − K_r(B, B)] G_rᵀ`.
    pub corrected: DMatrix<f64>,
    /// `K*_r(X_r, B) = K_r(X_r, B) + G_r [K_B − K_r(B, B)]`.
    pub corrected_cross: DMatrix<f64>,
}

/// Condition a region kernel on the boundary covariance `k_b` at `xb`.
/// `k_b` is 1×1 (value) or 2×2 (value and slope).
pub fn condition_region(spec: &KernelSpec, xr: &[f64], xb: f64, k_b: &DMatrix<f64>) -> Result<BoundaryConditioning> {
    let d = k_b.nrows();
    let (kbb, cross) = match d {
        1 => (
            DMatrix::from_element(1, 1, spec.eval(xb, xb)?),
            spec.cov_matrix(xr, &[xb])?,
        ),
        2 => {
            let aug = augment_derivative(spec, xb, xr)?;
            let mut cross = DMatrix::zeros(xr.len(), 2);
            cross.set_column(0, &aug.value_cross.column(0));
            cross.set_column(1, &aug.slope_cross.row(0).transpose());
            (aug.k_b, cross)
        }
        _ => return Err(param_err("boundary covariance must be 1x1 or 2x2")),
    };
    let gain = &cross * sym_pinv(&kbb);
    let diff = k_b - &kbb;
    let corrected = spec.cov_sym(xr)? + &gain * &diff * gain.transpose();
    let corrected_cross = cross + &gain * diff;
    Ok(BoundaryConditioning {
        gain,
        corrected,
        corrected_cross,
    })
}

/// Global two-region prior over the stacked points `(X1, XB, X2)`, built
/// block by block:
///
/// ```text
/// [ K*_1(X1,X1)   K*_1(X1,XB)   D          ]
/// [ ·             K_B           K*_2(X2,XB)ᵀ]
/// [ Dᵀ            ·             K*_2(X2,X2)]      D = G_1 K_B G_2ᵀ
/// ```
///
/// `xb` may be empty (the boundary process is then latent) or hold the
/// single change-point.
pub fn assemble_global(model: &RegionModel, x1: &[f64], xb: &[f64], x2: &[f64]) -> Result<GramMatrix> {
    if model.boundaries.len() != 1 {
        return Err(param_err("assemble_global needs a single boundary"));
    }
    let b = model.boundaries[0];
    let link = model.links[0];
    if link == Link::Cut {
        return Err(param_err("assemble_global needs a linked boundary"));
    }
    if xb.iter().any(|x| *x != b) || xb.len() > 1 {
        return Err(param_err(format!("boundary set must be empty or [{b}]")));
    }
    if x1.iter().any(|x| *x >= b) || x2.iter().any(|x| *x <= b) {
        return Err(param_err("X1 must lie left of the boundary and X2 right of it"));
    }
    let k_b = link.block();
    let c1 = condition_region(&model.regions[0], x1, b, &k_b)?;
    let c2 = condition_region(&model.regions[1], x2, b, &k_b)?;
    let d = &c1.gain * &k_b * c2.gain.transpose();

    let (n1, nb, n2) = (x1.len(), xb.len(), x2.len());
    let n = n1 + nb + n2;
    let mut m = DMatrix::zeros(n, n);
    m.view_mut((0, 0), (n1, n1)).copy_from(&c1.corrected);
    m.view_mut((n1 + nb, n1 + nb), (n2, n2)).copy_from(&c2.corrected);
    m.view_mut((0, n1 + nb), (n1, n2)).copy_from(&d);
    m.view_mut((n1 + nb, 0), (n2, n1)).copy_from(&d.transpose());
    if nb == 1 {
        m[(n1, n1)] = k_b[(0, 0)];
        for i in 0..n1 {
            m[(i, n1)] = c1.corrected_cross[(i, 0)];
            m[(n1, i)] = c1.corrected_cross[(i, 0)];
        }
        for j in 0..n2 {
            m[(n1 + 1 + j, n1)] = c2.corrected_cross[(j, 0)];
            m[(n1, n1 + 1 + j)] = c2.corrected_cross[(j, 0)];
        }
    }
    let points: Vec<f64> = x1.iter().chain(xb).chain(x2).cloned().collect();
    Ok(GramMatrix::new(m, points.clone(), points))
}

/// Covariance of the chained MRL prior at `xs` (sorted).
pub fn chain_regions(model: &RegionModel, xs: &[f64]) -> Result<GramMatrix> {
    if model.boundaries.is_empty() {
        return Err(param_err("chain_regions needs at least one boundary"));
    }
    if xs.windows(2).any(|w| w[0] > w[1]) {
        return Err(param_err("locations must be sorted"));
    }
    MrlKernel::new(model.clone())?.gram(xs, xs)
}
