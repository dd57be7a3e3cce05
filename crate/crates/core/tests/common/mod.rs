//! Independent reference implementations shared by the integration tests and
//! the acceptance runner. Nothing here calls into the library's covariance
//! assembly; kernels are re-evaluated from closed forms.
#![allow(dead_code)]

use mrl_gp::{KernelSpec, Link, RegionModel};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Closed-form stationary kernels used by the oracles.
#[derive(Debug, Clone, Copy)]
pub enum Kern {
    /// `mu exp(-(a-b)^2 / l^2)`.
    Se { mu: f64, l: f64 },
    Const { mu: f64 },
}

impl Kern {
    pub fn spec(&self) -> KernelSpec {
        match *self {
            Kern::Se { mu, l } => KernelSpec::squared_exponential(mu, l).unwrap(),
            Kern::Const { mu } => KernelSpec::Constant { mu },
        }
    }

    pub fn k(&self, a: f64, b: f64) -> f64 {
        match *self {
            Kern::Se { mu, l } => mu * (-((a - b) / l).powi(2)).exp(),
            Kern::Const { mu } => mu,
        }
    }

    /// `Cov(f(a), f'(b))`.
    fn k_vd(&self, a: f64, b: f64) -> f64 {
        match *self {
            Kern::Se { l, .. } => 2.0 * (a - b) / (l * l) * self.k(a, b),
            Kern::Const { .. } => 0.0,
        }
    }

    /// `Cov(f'(a), f'(b))`.
    fn k_dd(&self, a: f64, b: f64) -> f64 {
        match *self {
            Kern::Se { l, .. } => {
                let d = a - b;
                (2.0 / (l * l) - 4.0 * d * d / l.powi(4)) * self.k(a, b)
            }
            Kern::Const { .. } => 0.0,
        }
    }
}

/// One MRL test instance: kernels, boundaries, links and query points.
#[derive(Debug, Clone)]
pub struct MrlInstance {
    pub regions: Vec<Kern>,
    pub boundaries: Vec<f64>,
    pub links: Vec<Link>,
    pub points: Vec<f64>,
}

impl MrlInstance {
    pub fn model(&self) -> RegionModel {
        RegionModel::new(
            self.boundaries.clone(),
            self.regions.iter().map(Kern::spec).collect(),
            self.links.clone(),
        )
        .unwrap()
    }
}

/// Five small fixed instances: value links across SE and constant regions,
/// a three-region chain, a slope link, and a chain broken by a cut.
pub fn mrl_instances() -> Vec<MrlInstance> {
    let se = |mu, l| Kern::Se { mu, l };
    vec![
        MrlInstance {
            regions: vec![se(1.0, 3.0), se(2.0, 1.0)],
            boundaries: vec![0.0],
            links: vec![Link::Value { variance: 0.7 }],
            points: vec![-2.0, -0.5, 0.0, 0.4, 1.5],
        },
        MrlInstance {
            regions: vec![se(1.5, 2.0), Kern::Const { mu: 0.5 }],
            boundaries: vec![1.0],
            links: vec![Link::Value { variance: 1.2 }],
            points: vec![-1.0, 0.5, 1.0, 2.0, 4.0],
        },
        MrlInstance {
            regions: vec![se(1.0, 2.0), se(0.5, 1.0), se(2.0, 3.0)],
            boundaries: vec![0.0, 2.0],
            links: vec![Link::Value { variance: 0.8 }, Link::Value { variance: 1.5 }],
            points: vec![-1.0, 0.0, 0.7, 1.5, 2.0, 3.5],
        },
        MrlInstance {
            regions: vec![se(1.0, 2.0), se(1.5, 1.0)],
            boundaries: vec![0.0],
            links: vec![Link::Slope {
                variance: 0.9,
                slope_variance: 0.4,
            }],
            points: vec![-1.5, -0.3, 0.0, 0.3, 1.2],
        },
        MrlInstance {
            regions: vec![se(1.0, 1.5), se(0.8, 2.0), se(1.2, 1.5), Kern::Const { mu: 0.3 }],
            boundaries: vec![-1.0, 1.0, 3.0],
            links: vec![
                Link::Cut,
                Link::Slope {
                    variance: 1.1,
                    slope_variance: 0.6,
                },
                Link::Value { variance: 0.5 },
            ],
            points: vec![-2.0, 0.0, 1.0, 2.0, 3.0, 4.0],
        },
    ]
}

/// `V diag(sqrt(max(λ, 0))) Vᵀ`, any symmetric PSD matrix.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let e = m.clone().symmetric_eigen();
    let d = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
fn psd_pinv(m: &DMatrix<f64>, power: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let e = m.clone().symmetric_eigen();
    let top = e.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let d = e
        .eigenvalues
        .map(|v| if v > 1e-12 * top { v.powf(-power) } else { 0.0 });
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

/// A boundary coordinate: value or slope at a boundary location.
#[derive(Debug, Clone, Copy)]
struct Coord {
    x: f64,
    slope: bool,
}

fn coords(b: f64, link: &Link) -> Vec<Coord> {
    match link {
        Link::Value { .. } => vec![Coord { x: b, slope: false }],
        Link::Slope { .. } => vec![Coord { x: b, slope: false }, Coord { x: b, slope: true }],
        Link::Cut => vec![],
    }
}

/// Covariance of a point or boundary coordinate with a coordinate, under `k`.
fn kc(k: &Kern, a: Coord, b: Coord) -> f64 {
    match (a.slope, b.slope) {
        (false, false) => k.k(a.x, b.x),
        (false, true) => k.k_vd(a.x, b.x),
        (true, false) => k.k_vd(b.x, a.x),
        (true, true) => k.k_dd(a.x, b.x),
    }
}

fn gram(k: &Kern, a: &[Coord], b: &[Coord]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| kc(k, a[i], b[j]))
}

/// Samples `f` at the instance's points from the graphical model: linked
/// boundaries form a Gauss-Markov chain with marginal covariance `K_B` at
/// each node and correlation through the region between consecutive nodes;
/// given the boundary values, each region is an independent Gaussian
/// conditioned on its adjacent boundaries under its own kernel. Returns the
/// empirical second-moment matrix over `draws` samples.
pub fn mrl_sampling_oracle(inst: &MrlInstance, draws: usize, seed: u64) -> DMatrix<f64> {
    let nb = inst.boundaries.len();
    let node_coords: Vec<Vec<Coord>> = (0..nb).map(|i| coords(inst.boundaries[i], &inst.links[i])).collect();
    let offsets: Vec<usize> = node_coords
        .iter()
        .scan(0, |acc, c| {
            let o = *acc;
            *acc += c.len();
            Some(o)
        })
        .collect();
    let dim_b: usize = node_coords.iter().map(Vec::len).sum();

    // Chain transitions b_k = A_k b_{k-1} + Q_k^{1/2} z.
    struct Step {
        prev: Option<usize>,
        a: DMatrix<f64>,
        q_sqrt: DMatrix<f64>,
    }
    let mut steps: Vec<Option<Step>> = Vec::new();
    for i in 0..nb {
        if node_coords[i].is_empty() {
            steps.push(None);
            continue;
        }
        let kb = inst.links[i].block();
        let prev = (i > 0 && !node_coords[i - 1].is_empty()).then(|| i - 1);
        let step = match prev {
            None => Step {
                prev,
                a: DMatrix::zeros(kb.nrows(), 0),
                q_sqrt: psd_sqrt(&kb),
            },
            Some(p) => {
                let region = &inst.regions[i];
                let (cl, cr) = (&node_coords[p], &node_coords[i]);
                let corr = psd_pinv(&gram(region, cl, cl), 0.5)
                    * gram(region, cl, cr)
                    * psd_pinv(&gram(region, cr, cr), 0.5);
                let kb_prev = inst.links[p].block();
                let c = psd_sqrt(&kb_prev) * corr * psd_sqrt(&kb);
                let a = c.transpose() * psd_pinv(&kb_prev, 1.0);
                let q = &kb - &a * &c;
                Step {
                    prev,
                    a,
                    q_sqrt: psd_sqrt(&(0.5 * (&q + q.transpose()))),
                }
            }
        };
        steps.push(Some(step));
    }

    // Point i is either a boundary coordinate or belongs to one region.
    enum Source {
        Boundary(usize),
        Region(usize, usize),
    }
    let mut sources = Vec::new();
    let mut region_points: Vec<Vec<f64>> = vec![Vec::new(); inst.regions.len()];
    for &x in &inst.points {
        if let Some(i) = inst.boundaries.iter().position(|&b| b == x) {
            assert!(!node_coords[i].is_empty(), "oracle points must avoid cut boundaries");
            sources.push(Source::Boundary(offsets[i]));
            continue;
        }
        let r = inst.boundaries.iter().filter(|&&b| b < x).count();
        sources.push(Source::Region(r, region_points[r].len()));
        region_points[r].push(x);
    }

    // Per region: gain onto its adjacent boundary coordinates and residual factor.
    struct RegionDraw {
        cols: Vec<usize>,
        gain: DMatrix<f64>,
        resid_sqrt: DMatrix<f64>,
    }
    let mut regions = Vec::new();
    for (r, xs) in region_points.iter().enumerate() {
        let k = &inst.regions[r];
        let mut bc = Vec::new();
        let mut cols = Vec::new();
        for i in [r.wrapping_sub(1), r] {
            if i < nb {
                for (j, c) in node_coords[i].iter().enumerate() {
                    bc.push(*c);
                    cols.push(offsets[i] + j);
                }
            }
        }
        let pc: Vec<Coord> = xs.iter().map(|&x| Coord { x, slope: false }).collect();
        let kxx = gram(k, &pc, &pc);
        let kxb = gram(k, &pc, &bc);
        let gain = &kxb * psd_pinv(&gram(k, &bc, &bc), 1.0);
        let resid = kxx - &gain * kxb.transpose();
        regions.push(RegionDraw {
            cols,
            gain,
            resid_sqrt: psd_sqrt(&(0.5 * (&resid + resid.transpose()))),
        });
    }

    let n = inst.points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(dim_b);
    let mut f = vec![0.0; n];
    let normals = |m: usize, rng: &mut ChaCha8Rng| DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
    for _ in 0..draws {
        for i in 0..nb {
            let Some(step) = &steps[i] else { continue };
            let d = node_coords[i].len();
            let mut v = &step.q_sqrt * normals(d, &mut rng);
            if let Some(p) = step.prev {
                let prev = b.rows(offsets[p], node_coords[p].len()).clone_owned();
                v += &step.a * prev;
            }
            b.rows_mut(offsets[i], d).copy_from(&v);
        }
        let region_draws: Vec<DVector<f64>> = regions
            .iter()
            .map(|rd| {
                let bv = DVector::from_iterator(rd.cols.len(), rd.cols.iter().map(|&c| b[c]));
                &rd.gain * bv + &rd.resid_sqrt * normals(rd.gain.nrows(), &mut rng)
            })
            .collect();
        for (i, s) in sources.iter().enumerate() {
            f[i] = match *s {
                Source::Boundary(c) => b[c],
                Source::Region(r, j) => region_draws[r][j],
            };
        }
        for i in 0..n {
            for j in 0..=i {
                acc[(i, j)] += f[i] * f[j];
            }
        }
    }
    let inv = 1.0 / draws as f64;
    DMatrix::from_fn(n, n, |i, j| acc[(i.max(j), i.min(j))] * inv)
}

/// Largest `|emp - exact| / se` over all entries, with the standard error of
/// a zero-mean second-moment estimate, `sqrt((Σii Σjj + Σij²) / N)`.
pub fn max_standardized_error(exact: &DMatrix<f64>, emp: &DMatrix<f64>, draws: usize) -> f64 {
    let n = exact.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let se = ((exact[(i, i)] * exact[(j, j)] + exact[(i, j)].powi(2)) / draws as f64).sqrt();
            let z = (emp[(i, j)] - exact[(i, j)]).abs() / se;
            worst = worst.max(z);
        }
    }
    worst
}

/// Dense joint-Gaussian conditioning: mean and covariance of `f(xs)` given
/// `y = f(t) + ε`, `ε ~ N(0, noise I)`, via an LU solve of the joint system.
pub fn dense_condition(
    k_tt: &DMatrix<f64>,
    k_xt: &DMatrix<f64>,
    k_xx: &DMatrix<f64>,
    y: &[f64],
    noise: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = k_tt.nrows();
    let a = k_tt + DMatrix::identity(n, n) * noise;
    let lu = a.lu();
    let alpha = lu.solve(&DVector::from_column_slice(y)).unwrap();
    let w = lu.solve(&k_xt.transpose()).unwrap();
    (k_xt * alpha, k_xx - k_xt * w)
}

/// Random sorted, well-separated locations in `[0, span)`.
pub fn random_points<R: rand::Rng>(rng: &mut R, n: usize, span: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * span).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    v
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
pub mod criteria;
