//! Empirical covering numbers of RKHS balls on finite point sets.
//!
//! On points `x_1..x_m` the ball `{f : |f|_H <= R}` restricted to the
//! sample is the ellipsoid `{K c : c^T K c <= R^2}`. In the eigenbasis of
//! `K = V diag(s) V^T` put `y_l = sqrt(s_l / m) z_l` with `|z| <= R`; then
//! the empirical distance `d_2(f, g)` is the Euclidean distance of the `y`
//! coordinates and the ball becomes an axis-aligned ellipsoid with
//! semi-axes `R sqrt(s_l / m)`.
//!
//! [`cover_ball`] first tries a certified construction: a grid whose cell
//! centres are within `delta` (`eps / 4`, or `eps / 2` when the finer grid
//! is too large) of every ball point they stand for, thinned by greedy
//! farthest-point selection at radius `eps - delta`. Every function in the
//! ball is then within `eps` of a centre. When the grid would be too large the net
//! falls back to greedy selection over a seeded sample of the ball, which
//! only covers the sample.
//!
//! [`additive_net`] builds the product net for an additive kernel: sums of
//! one centre per block cover the additive ball at radius `s eps`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::Points;
use crate::error::{Error, Result};
use crate::kernels::{gram, BlockLayout, KernelSpec};

/// Grid resolutions tried for certified nets, as fractions of `eps`.
/// Finer grids give smaller nets but more cells.
const CERT_FRACTIONS: [f64; 2] = [0.25, 0.5];

/// Root-mean-square distance of two value vectors.
pub fn empirical_distance(f_vals: &[f64], g_vals: &[f64]) -> Result<f64> {
    if f_vals.len() != g_vals.len() {
        return Err(Error::input(format!(
            "value vectors of length {} and {}",
            f_vals.len(),
            g_vals.len()
        )));
    }
    if f_vals.is_empty() {
        return Err(Error::input("empirical distance on an empty sample"));
    }
    let ss: f64 = f_vals.iter().zip(g_vals).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / f_vals.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalNet {
    centers: Vec<Vec<f64>>,
    radius: f64,
    points: Points,
    certified: bool,
}

impl EmpiricalNet {
    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    /// Whether coverage is guaranteed for the whole ball rather than only
    /// for the sample the net was built from.
    pub fn certified(&self) -> bool {
        self.certified
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn log_count(&self) -> f64 {
        (self.centers.len() as f64).ln()
    }

    /// Distance from `f_vals` to the nearest centre.
    pub fn distance_to(&self, f_vals: &[f64]) -> Result<f64> {
        let mut best = f64::INFINITY;
        for c in &self.centers {
            best = best.min(empirical_distance(f_vals, c)?);
        }
        Ok(best)
    }

    pub fn covers(&self, f_vals: &[f64]) -> Result<bool> {
        Ok(self.distance_to(f_vals)? <= self.radius * (1.0 + 1e-12))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverOptions {
    /// Ball samples for the uncertified fallback.
    pub samples: usize,
    pub seed: u64,
    /// Largest certification grid attempted.
    pub grid_cap: usize,
}

impl Default for CoverOptions {
    fn default() -> Self {
        CoverOptions {
            samples: 20_000,
            seed: 0,
            grid_cap: 200_000,
        }
    }
}

/// The RKHS ball geometry on a fixed point set.
#[derive(Debug, Clone)]
pub struct BallGeometry {
    /// `sqrt(s_l / m)` for the positive eigenvalues, descending.
    axes: Vec<f64>,
    /// Matching eigenvectors of `K`, scaled by `sqrt(m)`, as columns.
    basis: DMatrix<f64>,
    points: Points,
}

impl BallGeometry {
    pub fn new(spec: &KernelSpec, points: &Points) -> Result<Self> {
        let k = gram(spec, points)?.into_entries();
        let m = points.len();
        let eig = SymmetricEigen::new(k);
        let top = eig.eigenvalues.max().max(0.0);
        let mut order: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i] > 1e-12 * top).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let scale = (m as f64).sqrt();
        let axes = order.iter().map(|&i| (eig.eigenvalues[i] / m as f64).sqrt()).collect();
        let basis = DMatrix::from_fn(m, order.len(), |p, l| eig.eigenvectors[(p, order[l])] * scale);
        Ok(BallGeometry {
            axes,
            basis,
            points: points.clone(),
        })
    }

    /// Number of directions the ball extends in.
    pub fn rank(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[f64] {
        &self.axes
    }

    /// Function values on the points for ellipsoid coordinates `y`.
    pub fn values(&self, y: &[f64]) -> Vec<f64> {
        let m = self.basis.nrows();
        (0..m)
            .map(|p| y.iter().enumerate().map(|(l, yl)| self.basis[(p, l)] * yl).sum())
            .collect()
    }

    /// Uniform draw from the ball of radius `radius`, in ellipsoid coordinates.
    pub fn sample_coords(&self, radius: f64, rng: &mut impl Rng) -> Vec<f64> {
        let k = self.rank();
        if k == 0 {
            return Vec::new();
        }
        let g: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rho = rng.random::<f64>().powf(1.0 / k as f64);
        g.iter()
            .zip(&self.axes)
            .map(|(gl, a)| (a * (rho * gl / norm)) * radius)
            .collect()
    }

    pub fn sample_values(&self, radius: f64, rng: &mut impl Rng) -> Vec<f64> {
        let y = self.sample_coords(radius, rng);
        self.values(&y)
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy farthest-point selection: indices of centres such that every
/// pool element is within `radius` of one of them.
fn farthest_point_net(pool: &[Vec<f64>], radius: f64) -> Vec<usize> {
    if pool.is_empty() {
        return Vec::new();
    }
    let r2 = radius * radius;
    let mut centers = vec![0usize];
    let mut nearest: Vec<f64> = pool.par_iter().map(|p| dist_sq(p, &pool[0])).collect();
    loop {
        // ties resolve to the lowest index so the result is deterministic
        let (far, d2) = nearest
            .par_iter()
            .copied()
            .enumerate()
            .reduce(
                || (usize::MAX, f64::NEG_INFINITY),
                |a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a },
            );
        if d2 <= r2 {
            return centers;
        }
        centers.push(far);
        let c = &pool[far];
        nearest.par_iter_mut().zip(pool.par_iter()).for_each(|(n, p)| {
            let d = dist_sq(p, c);
            if d < *n {
                *n = d;
            }
        });
    }
}

/// Cell centres of a grid covering the ellipsoid with semi-axes
/// `semi_axes`, each within `delta` of every ellipsoid point it stands
/// for. Only cells meeting the ellipsoid are kept. `None` if more than
/// `cap` cells would be needed.
fn certification_grid(semi_axes: &[f64], delta: f64, cap: usize) -> Option<Vec<Vec<f64>>> {
    let k = semi_axes.len();
    // axes no longer than delta / 2 are dropped; they add at most that much
    let active = semi_axes.iter().take_while(|&&a| a > 0.5 * delta).count();
    let tail = if active < k { semi_axes[active] } else { 0.0 };
    if active == 0 {
        return Some(vec![vec![0.0; k]]);
    }
    let h = 2.0 * (delta * delta - tail * tail).sqrt() / (active as f64).sqrt();
    let half_counts: Vec<usize> = semi_axes[..active]
        .iter()
        .map(|a| (a / h).ceil().max(1.0) as usize)
        .collect();

    struct Walk<'a> {
        axes: &'a [f64],
        half_counts: &'a [usize],
        h: f64,
        cap: usize,
        full_dim: usize,
        prefix: Vec<f64>,
        cells: Vec<Vec<f64>>,
    }

    impl Walk<'_> {
        // depth-first over axes, pruning cells whose nearest point to the
        // origin already leaves the ellipsoid
        fn visit(&mut self, axis: usize, used: f64) -> bool {
            if axis == self.half_counts.len() {
                if self.cells.len() == self.cap {
                    return false;
                }
                let mut full = self.prefix.clone();
                full.resize(self.full_dim, 0.0);
                self.cells.push(full);
                return true;
            }
            let c = self.half_counts[axis];
            let a = self.axes[axis];
            for i in 0..2 * c {
                let centre = (i as f64 - c as f64 + 0.5) * self.h;
                let near = (centre.abs() - 0.5 * self.h).max(0.0);
                let next = used + (near / a) * (near / a);
                if next > 1.0 {
                    continue;
                }
                self.prefix.push(centre);
                let ok = self.visit(axis + 1, next);
                self.prefix.pop();
                if !ok {
                    return false;
                }
            }
            true
        }
    }

    let mut walk = Walk {
        axes: semi_axes,
        half_counts: &half_counts,
        h,
        cap,
        full_dim: k,
        prefix: Vec::with_capacity(active),
        cells: Vec::new(),
    };
    if walk.visit(0, 0.0) {
        Some(walk.cells)
    } else {
        None
    }
}

/// Covering net of the radius-`radius` RKHS ball on `points` at empirical
/// radius `eps`, with the default sample size and the given seed.
pub fn cover_ball(spec: &KernelSpec, points: &Points, radius: f64, eps: f64, seed: u64) -> Result<EmpiricalNet> {
    cover_ball_with(
        spec,
        points,
        radius,
        eps,
        &CoverOptions {
            seed,
            ..CoverOptions::default()
        },
    )
}

pub fn cover_ball_with(
    spec: &KernelSpec,
    points: &Points,
    radius: f64,
    eps: f64,
    opts: &CoverOptions,
) -> Result<EmpiricalNet> {
    let geom = BallGeometry::new(spec, points)?;
    cover_geometry(&geom, radius, eps, opts)
}

pub fn cover_geometry(geom: &BallGeometry, radius: f64, eps: f64, opts: &CoverOptions) -> Result<EmpiricalNet> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::input(format!("covering radius must be positive, got {eps}")));
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::input(format!("ball radius must be nonnegative, got {radius}")));
    }
    let m = geom.points.len();
    if radius == 0.0 || geom.rank() == 0 {
        return Ok(EmpiricalNet {
            centers: vec![vec![0.0; m]],
            radius: eps,
            points: geom.points.clone(),
            certified: true,
        });
    }
    let semi_axes: Vec<f64> = geom.axes.iter().map(|a| a * radius).collect();
    // the zero function seeds the greedy selection
    let origin = vec![0.0; geom.rank()];
    let grid = CERT_FRACTIONS.iter().find_map(|&frac| {
        let delta = frac * eps;
        certification_grid(&semi_axes, delta, opts.grid_cap).map(|cells| (cells, eps - delta))
    });
    let (pool, working, certified) = match grid {
        Some((cells, working)) => (std::iter::once(origin).chain(cells).collect::<Vec<_>>(), working, true),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let samples = std::iter::once(origin)
                .chain((0..opts.samples.max(1)).map(|_| geom.sample_coords(radius, &mut rng)))
                .collect::<Vec<_>>();
            (samples, eps, false)
        }
    };
    let chosen = farthest_point_net(&pool, working);
    let centers = chosen.iter().map(|&i| geom.values(&pool[i])).collect();
    Ok(EmpiricalNet {
        centers,
        radius: eps,
        points: geom.points.clone(),
        certified,
    })
}

/// Product net for an additive kernel: every sum of one centre per block.
/// The block nets must be built on the block projections of one common
/// point set; the result covers the additive ball at the summed radius.
pub fn additive_net(nets: &[EmpiricalNet], layout: &BlockLayout) -> Result<EmpiricalNet> {
    if nets.len() != layout.num_blocks() {
        return Err(Error::input(format!(
            "{} block nets for {} blocks",
            nets.len(),
            layout.num_blocks()
        )));
    }
    let m = nets[0].points.len();
    for (net, &w) in nets.iter().zip(layout.dims()) {
        if net.points.len() != m {
            return Err(Error::input("block nets are built on different numbers of points"));
        }
        if net.points.dim() != w {
            return Err(Error::input("block net dimension does not match the layout"));
        }
        if net.centers.is_empty() {
            return Err(Error::input("empty block net"));
        }
    }
    let total = nets
        .iter()
        .try_fold(1usize, |acc, n| acc.checked_mul(n.len()))
        .filter(|&t| t.saturating_mul(m) <= 200_000_000)
        .ok_or_else(|| Error::input("product net too large to materialize"))?;

    let mut flat = Vec::with_capacity(m * layout.total_dim());
    for p in 0..m {
        for net in nets {
            flat.extend_from_slice(net.points.row(p));
        }
    }
    let points = Points::new(layout.total_dim(), flat)?;

    let mut centers = Vec::with_capacity(total);
    let mut idx = vec![0usize; nets.len()];
    for _ in 0..total {
        let mut c = vec![0.0; m];
        for (net, &i) in nets.iter().zip(&idx) {
            for (a, b) in c.iter_mut().zip(&net.centers[i]) {
                *a += b;
            }
        }
        centers.push(c);
        for j in (0..idx.len()).rev() {
            idx[j] += 1;
            if idx[j] < nets[j].len() {
                break;
            }
            idx[j] = 0;
        }
    }
    Ok(EmpiricalNet {
        centers,
        radius: nets.iter().map(|n| n.radius).sum(),
        points,
        certified: nets.iter().all(|n| n.certified),
    })
}

/// One line of a capacity report. `block` is `None` for the additive row.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityRow {
    pub eps: f64,
    pub block: Option<usize>,
    pub log_count: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityReport {
    pub rows: Vec<CapacityRow>,
    /// `|N(B_R, eps)| == |N(B_1, eps / R)|` for every block and `eps`.
    pub homogeneity: bool,
    /// Additive log-count equals the sum of block log-counts.
    pub construction: bool,
}

/// Compares block and product-net log-counts with the supplied capacity
/// constants `(c_zeta, zeta)`.
///
/// Block rows use the bound `c_zeta (R / eps)^zeta`; the additive row sits
/// at covering radius `s eps` and uses `s^{1+zeta} c_zeta (R / (s eps))^zeta`.
/// The bound columns are informational; `construction` and `homogeneity`
/// are the exact checks.
#[allow(clippy::too_many_arguments)]
pub fn check_capacity_bound(
    components: &[KernelSpec],
    layout: &BlockLayout,
    points: &Points,
    radius: f64,
    eps_grid: &[f64],
    c_zeta: f64,
    zeta: f64,
    opts: &CoverOptions,
) -> Result<CapacityReport> {
    if components.len() != layout.num_blocks() {
        return Err(Error::input("one component kernel per block required"));
    }
    if points.dim() != layout.total_dim() {
        return Err(Error::input("points do not match the layout dimension"));
    }
    if !(radius >= 1.0) {
        return Err(Error::input("ball radius must be at least 1"));
    }
    let s = layout.num_blocks() as f64;
    let geoms = layout
        .ranges()
        .zip(components)
        .map(|(r, k)| BallGeometry::new(k, &points.project(r.start, r.len())?))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut homogeneity = true;
    let mut construction = true;
    for &eps in eps_grid {
        let mut block_logs = Vec::new();
        for (j, g) in geoms.iter().enumerate() {
            let net = cover_geometry(g, radius, eps, opts)?;
            let unit = cover_geometry(g, 1.0, eps / radius, opts)?;
            homogeneity &= net.len() == unit.len();
            let bound = c_zeta * (radius / eps).powf(zeta);
            rows.push(CapacityRow {
                eps,
                block: Some(j),
                log_count: net.log_count(),
                bound,
                pass: net.log_count() <= bound,
            });
            block_logs.push(net.log_count());
        }
        let counts: Vec<usize> = block_logs.iter().map(|l| l.exp().round() as usize).collect();
        let product: f64 = counts.iter().map(|&c| c as f64).product();
        let log_count = product.ln();
        let sum: f64 = block_logs.iter().sum();
        let identity = (log_count - sum).abs() <= 1e-12 * (1.0 + sum.abs());
        construction &= identity;
        let bound = s.powf(1.0 + zeta) * c_zeta * (radius / (s * eps)).powf(zeta);
        rows.push(CapacityRow {
            eps,
            block: None,
            log_count,
            bound,
            pass: identity && log_count <= bound,
        });
    }
    Ok(CapacityReport {
        rows,
        homogeneity,
        construction,
    })
}

/// Draws `count` functions `f = f_1 + ... + f_s` with every block norm at
/// most `radius`, returning the block value vectors of each draw.
pub fn sample_additive_ball(
    geoms: &[BallGeometry],
    radius: f64,
    count: usize,
    seed: u64,
) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| geoms.iter().map(|g| g.sample_values(radius, &mut rng)).collect())
        .collect()
}
