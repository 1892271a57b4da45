//! Mercer kernels and their additive / product compositions over
//! contiguous coordinate blocks.
//!
//! Serialized form (used inside model files):
//!
//! ```json
//! {"type":"additive","dims":[1,1],"components":[
//!     {"type":"gaussian","sigma":1.0},
//!     {"type":"sobolev_min"}]}
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::Points;
use crate::error::{Error, Result};

/// Widths `d_1..d_s` of the coordinate blocks; block `j` covers the
/// coordinates `offset(j)..offset(j) + d_j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockLayout {
    dims: Vec<usize>,
}

impl BlockLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::input("block layout needs at least one block"));
        }
        if dims.contains(&0) {
            return Err(Error::input("block widths must be positive"));
        }
        Ok(BlockLayout { dims })
    }

    /// `s` blocks of width one.
    pub fn unit(s: usize) -> Result<Self> {
        BlockLayout::new(vec![1; s])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn offset(&self, block: usize) -> usize {
        self.dims[..block].iter().sum()
    }

    /// Coordinate ranges of every block, in order.
    pub fn ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.dims.iter().scan(0usize, |start, &w| {
            let r = *start..*start + w;
            *start += w;
            Some(r)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(-|u - v|^2 / sigma^2)` on a block of any width.
    Gaussian { sigma: f64 },
    /// `1 + min(u, v)` on `[0, 1]`, the first-order Sobolev kernel.
    SobolevMin,
    Additive {
        dims: BlockLayout,
        components: Vec<KernelSpec>,
    },
    Product {
        dims: BlockLayout,
        components: Vec<KernelSpec>,
    },
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        let spec = KernelSpec::Gaussian { sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn additive(layout: BlockLayout, components: Vec<KernelSpec>) -> Result<Self> {
        let spec = KernelSpec::Additive {
            dims: layout,
            components,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn product(layout: BlockLayout, components: Vec<KernelSpec>) -> Result<Self> {
        let spec = KernelSpec::Product {
            dims: layout,
            components,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The same Gaussian on every block of `layout`, summed.
    pub fn additive_gaussian(layout: BlockLayout, sigma: f64) -> Result<Self> {
        let components = vec![KernelSpec::Gaussian { sigma }; layout.num_blocks()];
        KernelSpec::additive(layout, components)
    }

    /// The same Gaussian on every block of `layout`, multiplied.
    pub fn product_gaussian(layout: BlockLayout, sigma: f64) -> Result<Self> {
        let components = vec![KernelSpec::Gaussian { sigma }; layout.num_blocks()];
        KernelSpec::product(layout, components)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Gaussian { sigma } => {
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(Error::input(format!("gaussian sigma must be positive, got {sigma}")));
                }
                Ok(())
            }
            KernelSpec::SobolevMin => Ok(()),
            KernelSpec::Additive { dims, components } | KernelSpec::Product { dims, components } => {
                BlockLayout::new(dims.dims.clone())?;
                if dims.num_blocks() != components.len() {
                    return Err(Error::input(format!(
                        "{} blocks but {} component kernels",
                        dims.num_blocks(),
                        components.len()
                    )));
                }
                for (c, &w) in components.iter().zip(dims.dims()) {
                    c.validate()?;
                    if let Some(expected) = c.input_dim() {
                        if expected != w {
                            return Err(Error::input(format!(
                                "component expects dimension {expected} but its block has width {w}"
                            )));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Required input dimension; `None` for kernels defined on any `R^d`.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            KernelSpec::Gaussian { .. } => None,
            KernelSpec::SobolevMin => Some(1),
            KernelSpec::Additive { dims, .. } | KernelSpec::Product { dims, .. } => {
                Some(dims.total_dim())
            }
        }
    }

    /// Block structure, if this is a composite kernel.
    pub fn layout(&self) -> Option<&BlockLayout> {
        match self {
            KernelSpec::Additive { dims, .. } | KernelSpec::Product { dims, .. } => Some(dims),
            _ => None,
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self.input_dim() {
            Some(d) if d != dim => Err(Error::input(format!(
                "kernel expects dimension {d}, got {dim}"
            ))),
            _ if dim == 0 => Err(Error::input("zero-dimensional input")),
            _ => Ok(()),
        }
    }

    /// `sup_x sqrt(k(x, x))` on the kernel's domain (`[0,1]` for Sobolev),
    /// summed over blocks for additive kernels.
    pub fn kappa(&self) -> f64 {
        match self {
            KernelSpec::Gaussian { .. } => 1.0,
            KernelSpec::SobolevMin => 2f64.sqrt(),
            KernelSpec::Additive { components, .. } => components.iter().map(|c| c.kappa()).sum(),
            KernelSpec::Product { components, .. } => {
                components.iter().map(|c| c.kappa()).product()
            }
        }
    }

    /// Kernel value without dimension checks. Callers guarantee matching
    /// slice lengths.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], xp: &[f64]) -> f64 {
        match self {
            KernelSpec::Gaussian { sigma } => {
                let sq: f64 = x.iter().zip(xp).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (sigma * sigma)).exp()
            }
            KernelSpec::SobolevMin => 1.0 + x[0].min(xp[0]),
            KernelSpec::Additive { dims, components } => dims
                .ranges()
                .zip(components)
                .map(|(r, c)| c.eval_unchecked(&x[r.clone()], &xp[r]))
                .sum(),
            KernelSpec::Product { dims, components } => dims
                .ranges()
                .zip(components)
                .map(|(r, c)| c.eval_unchecked(&x[r.clone()], &xp[r]))
                .product(),
        }
    }

    pub fn eval(&self, x: &[f64], xp: &[f64]) -> Result<f64> {
        if x.len() != xp.len() {
            return Err(Error::input(format!(
                "points of dimension {} and {}",
                x.len(),
                xp.len()
            )));
        }
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x, xp))
    }
}

/// Symmetric matrix `K[i][l] = k(x_i, x_l)` together with its inputs.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    spec: KernelSpec,
    points: Points,
}

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Minimum eigenvalue is at least `-1e-8 * trace / n`.
    pub fn is_psd(&self) -> bool {
        let n = self.size() as f64;
        self.min_eigenvalue() >= -1e-8 * self.trace() / n
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }
}

pub fn gram(spec: &KernelSpec, points: &Points) -> Result<GramMatrix> {
    spec.validate()?;
    if points.is_empty() {
        return Err(Error::input("Gram matrix of an empty point set"));
    }
    spec.check_dim(points.dim())?;
    let n = points.len();
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        let xi = points.row(i);
        for l in 0..=i {
            let v = spec.eval_unchecked(xi, points.row(l));
            if !v.is_finite() {
                return Err(Error::numeric(format!("non-finite Gram entry at ({i}, {l})")));
            }
            entries[(i, l)] = v;
            entries[(l, i)] = v;
        }
    }
    Ok(GramMatrix {
        entries,
        spec: spec.clone(),
        points: points.clone(),
    })
}

/// Squared RKHS norm `c^T K c` of `f = sum_i c_i k(x_i, .)`.
pub fn rkhs_norm_sq(coeffs: &[f64], gram: &GramMatrix) -> Result<f64> {
    quad_form(coeffs, gram.entries())
}

pub(crate) fn quad_form(coeffs: &[f64], k: &DMatrix<f64>) -> Result<f64> {
    if coeffs.len() != k.nrows() {
        return Err(Error::input(format!(
            "{} coefficients for a {}x{} Gram matrix",
            coeffs.len(),
            k.nrows(),
            k.ncols()
        )));
    }
    let c = DVector::from_column_slice(coeffs);
    let v = c.dot(&(k * &c));
    if v < -1e-8 {
        return Err(Error::numeric(format!("negative squared norm {v:e}; kernel not PSD")));
    }
    Ok(v.max(0.0))
}
