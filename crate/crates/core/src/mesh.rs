//! Tensor-product meshes of the unit cube.
//!
//! An [`Axis`] is a partition `0 = x_0 < x_1 < ... < x_M = 1` with steps
//! `h_i = x_i - x_{i-1}` (`i = 1..=M`) and half-steps
//! `hbar_i = (h_i + h_{i+1}) / 2` (`i = 1..=M-1`). A [`TensorMesh`] is the
//! product of `d >= 2` axes. Nodes are stored row-major with axis 0 slowest,
//! boundary nodes included, so a [`MeshFunction`] carries its Dirichlet
//! values explicitly.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    coords: Vec<f64>,
    steps: Vec<f64>,
    half_steps: Vec<f64>,
}

impl Axis {
    /// Uniform partition with `m` cells.
    pub fn uniform(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid(format!(
                "an axis needs at least 2 cells, got {m}"
            )));
        }
        let coords = (0..=m).map(|i| i as f64 / m as f64).collect();
        Ok(Self::from_valid_coords(coords))
    }

    /// Uniform partition with every interior point moved by a uniform draw
    /// from `[-p/m, p/m]`. All steps then lie in `[(1-2p)/m, (1+2p)/m]`.
    pub fn random(m: usize, max_perturbation: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(m, max_perturbation, &mut rng)
    }

    pub(crate) fn random_with<R: Rng + ?Sized>(
        m: usize,
        max_perturbation: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid(format!(
                "an axis needs at least 2 cells, got {m}"
            )));
        }
        if !(0.0..0.5).contains(&max_perturbation) {
            return Err(Error::invalid(format!(
                "perturbation must lie in [0, 0.5), got {max_perturbation}"
            )));
        }
        let scale = max_perturbation / m as f64;
        let mut coords = Vec::with_capacity(m + 1);
        coords.push(0.0);
        for i in 1..m {
            let delta = if scale > 0.0 {
                rng.random_range(-scale..=scale)
            } else {
                0.0
            };
            coords.push(i as f64 / m as f64 + delta);
        }
        coords.push(1.0);
        Ok(Self::from_valid_coords(coords))
    }

    /// Validates a user-supplied partition.
    pub fn from_coords(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 3 {
            return Err(Error::mesh(format!(
                "an axis needs at least 3 points, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::mesh("coordinates must be finite"));
        }
        if coords[0] != 0.0 {
            return Err(Error::mesh(format!(
                "first coordinate must be 0, got {}",
                coords[0]
            )));
        }
        let last = coords[coords.len() - 1];
        if last != 1.0 {
            return Err(Error::mesh(format!("last coordinate must be 1, got {last}")));
        }
        if let Some(i) = coords.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::mesh(format!(
                "coordinates must be strictly increasing (x[{}] = {} >= x[{}] = {})",
                i,
                coords[i],
                i + 1,
                coords[i + 1]
            )));
        }
        Ok(Self::from_valid_coords(coords))
    }

    fn from_valid_coords(coords: Vec<f64>) -> Self {
        let steps: Vec<f64> = coords.windows(2).map(|w| w[1] - w[0]).collect();
        let half_steps = steps.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        Self {
            coords,
            steps,
            half_steps,
        }
    }

    /// Number of cells `M`.
    pub fn cells(&self) -> usize {
        self.steps.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// `h_1..h_M`.
    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// `hbar_1..hbar_{M-1}`.
    pub fn half_steps(&self) -> &[f64] {
        &self.half_steps
    }

    pub fn x(&self, i: usize) -> f64 {
        self.coords[i]
    }

    /// `h_i` for `1 <= i <= M`.
    #[inline]
    pub fn h(&self, i: usize) -> f64 {
        self.steps[i - 1]
    }

    /// `hbar_i` for `1 <= i <= M-1`.
    #[inline]
    pub fn hbar(&self, i: usize) -> f64 {
        self.half_steps[i - 1]
    }

    pub fn min_step(&self) -> f64 {
        self.steps.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_step(&self) -> f64 {
        self.steps.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorMesh {
    axes: Vec<Axis>,
    node_strides: Vec<usize>,
    interior_strides: Vec<usize>,
}

/// Axis-aligned control volume around an interior node.
#[derive(Debug, Clone, PartialEq)]
pub struct CellBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CellBox {
    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }
}

impl TensorMesh {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.len() < 2 {
            return Err(Error::invalid(format!(
                "mesh dimension must be at least 2, got {}",
                axes.len()
            )));
        }
        let d = axes.len();
        let mut node_strides = vec![1; d];
        let mut interior_strides = vec![1; d];
        for a in (0..d - 1).rev() {
            node_strides[a] = node_strides[a + 1] * (axes[a + 1].cells() + 1);
            interior_strides[a] = interior_strides[a + 1] * (axes[a + 1].cells() - 1);
        }
        Ok(Self {
            axes,
            node_strides,
            interior_strides,
        })
    }

    pub fn uniform(dim: usize, m: usize) -> Result<Self> {
        Self::new((0..dim).map(|_| Axis::uniform(m)).collect::<Result<_>>()?)
    }

    /// Independent random axes drawn from one seeded stream, axis 0 first.
    pub fn random(cells: &[usize], max_perturbation: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axes = cells
            .iter()
            .map(|&m| Axis::random_with(m, max_perturbation, &mut rng))
            .collect::<Result<_>>()?;
        Self::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, a: usize) -> &Axis {
        &self.axes[a]
    }

    /// Cells per axis.
    pub fn cells(&self) -> Vec<usize> {
        self.axes.iter().map(Axis::cells).collect()
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.cells() + 1).product()
    }

    pub fn interior_count(&self) -> usize {
        self.axes.iter().map(|a| a.cells() - 1).product()
    }

    pub fn quasi_uniformity_ratio(&self) -> f64 {
        let max = self.max_step();
        let min = self
            .axes
            .iter()
            .map(Axis::min_step)
            .fold(f64::INFINITY, f64::min);
        max / min
    }

    /// Largest step over all axes.
    pub fn max_step(&self) -> f64 {
        self.axes.iter().map(Axis::max_step).fold(0.0, f64::max)
    }

    #[inline]
    pub fn node_stride(&self, a: usize) -> usize {
        self.node_strides[a]
    }

    #[inline]
    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.node_strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for (a, s) in self.node_strides.iter().enumerate() {
            idx[a] = flat / s;
            flat %= s;
        }
        idx
    }

    /// Position of an interior node in the interior-only ordering.
    #[inline]
    pub fn interior_flat(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.interior_strides)
            .map(|(i, s)| (i - 1) * s)
            .sum()
    }

    pub fn interior_multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for (a, s) in self.interior_strides.iter().enumerate() {
            idx[a] = flat / s + 1;
            flat %= s;
        }
        idx
    }

    pub fn is_interior(&self, idx: &[usize]) -> bool {
        idx.iter()
            .zip(&self.axes)
            .all(|(&i, ax)| i >= 1 && i < ax.cells())
    }

    pub fn point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().zip(&self.axes).map(|(&i, ax)| ax.x(i)).collect()
    }

    /// `prod_a hbar_{idx_a}`, the control volume of an interior node.
    pub fn volume(&self, idx: &[usize]) -> f64 {
        idx.iter()
            .zip(&self.axes)
            .map(|(&i, ax)| ax.hbar(i))
            .product()
    }

    /// Control volume of an interior node: `(x_i - h_i/2, x_i + h_{i+1}/2)` per axis.
    pub fn cell_of(&self, idx: &[usize]) -> Result<CellBox> {
        if idx.len() != self.dim() {
            return Err(Error::invalid(format!(
                "node index has {} components, mesh has dimension {}",
                idx.len(),
                self.dim()
            )));
        }
        if !self.is_interior(idx) {
            return Err(Error::invalid(format!("node {idx:?} is not interior")));
        }
        let (lower, upper) = idx
            .iter()
            .zip(&self.axes)
            .map(|(&i, ax)| (ax.x(i) - ax.h(i) / 2.0, ax.x(i) + ax.h(i + 1) / 2.0))
            .unzip();
        Ok(CellBox { lower, upper })
    }

    /// Row-major iterator over every node.
    pub fn nodes(&self) -> IndexBox {
        IndexBox::new(
            vec![0; self.dim()],
            self.cells().iter().map(|m| m + 1).collect(),
        )
    }

    /// Row-major iterator over interior nodes; its order matches `interior_flat`.
    pub fn interior_nodes(&self) -> IndexBox {
        IndexBox::new(
            vec![1; self.dim()],
            self.cells().iter().map(|m| m - 1).collect(),
        )
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse_text(&text).map_err(|(line, message)| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("dim {}\n", self.dim());
        for ax in &self.axes {
            let _ = writeln!(out, "axis {}", ax.cells());
            let line: Vec<String> = ax.coords().iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parses the text format; errors carry the 1-based line number.
    pub fn parse_text(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut tokens = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .flat_map(|(n, l)| l.split_whitespace().map(move |t| (n, t)));
        let last_line = text.lines().count().max(1);

        let (dim_line, dim) = expect_count(&mut tokens, "dim", last_line)?;
        if dim < 2 {
            return Err((dim_line, format!("dimension must be at least 2, got {dim}")));
        }
        let mut axes = Vec::with_capacity(dim);
        for _ in 0..dim {
            let (axis_line, m) = expect_count(&mut tokens, "axis", last_line)?;
            let mut coords = Vec::with_capacity(m + 1);
            for _ in 0..=m {
                let (n, tok) = tokens
                    .next()
                    .ok_or((last_line, format!("axis needs {} coordinates", m + 1)))?;
                let x = tok
                    .parse::<f64>()
                    .map_err(|_| (n, format!("invalid coordinate `{tok}`")))?;
                coords.push(x);
            }
            let axis = Axis::from_coords(coords).map_err(|e| (axis_line, e.to_string()))?;
            axes.push(axis);
        }
        if let Some((n, tok)) = tokens.next() {
            return Err((n, format!("unexpected `{tok}` after {dim} axis blocks")));
        }
        Self::new(axes).map_err(|e| (dim_line, e.to_string()))
    }
}

fn expect_count<'a>(
    tokens: &mut impl Iterator<Item = (usize, &'a str)>,
    keyword: &str,
    last_line: usize,
) -> std::result::Result<(usize, usize), (usize, String)> {
    let (n, word) = tokens
        .next()
        .ok_or((last_line, format!("expected `{keyword}`, found end of file")))?;
    if word != keyword {
        return Err((n, format!("expected `{keyword}`, found `{word}`")));
    }
    let (n, value) = tokens
        .next()
        .ok_or((n, format!("missing count after `{keyword}`")))?;
    let value = value
        .parse::<usize>()
        .map_err(|_| (n, format!("invalid count `{value}`")))?;
    Ok((n, value))
}

/// Row-major walk over the box `start[a] ..= start[a] + extent[a] - 1`.
#[derive(Debug, Clone)]
pub struct IndexBox {
    current: Vec<usize>,
    start: Vec<usize>,
    extent: Vec<usize>,
    remaining: usize,
}

impl IndexBox {
    pub fn new(start: Vec<usize>, extent: Vec<usize>) -> Self {
        let remaining = extent.iter().product();
        Self {
            current: start.clone(),
            start,
            extent,
            remaining,
        }
    }
}

impl Iterator for IndexBox {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.remaining == 0 {
            return None;
        }
        let out = self.current.clone();
        self.remaining -= 1;
        for a in (0..self.current.len()).rev() {
            self.current[a] += 1;
            if self.current[a] < self.start[a] + self.extent[a] {
                break;
            }
            self.current[a] = self.start[a];
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for IndexBox {}

/// Real values on every node of a mesh.
#[derive(Debug, Clone)]
pub struct MeshFunction {
    mesh: Arc<TensorMesh>,
    values: Vec<f64>,
}

impl PartialEq for MeshFunction {
    fn eq(&self, other: &Self) -> bool {
        self.same_mesh(other) && self.values == other.values
    }
}

impl MeshFunction {
    pub fn zeros(mesh: Arc<TensorMesh>) -> Self {
        let n = mesh.node_count();
        Self {
            mesh,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(mesh: Arc<TensorMesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return Err(Error::invalid(format!(
                "mesh function needs {} values, got {}",
                mesh.node_count(),
                values.len()
            )));
        }
        Ok(Self { mesh, values })
    }

    /// Samples `f` at every node.
    pub fn from_fn(mesh: Arc<TensorMesh>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = mesh.nodes().map(|idx| f(&mesh.point(&idx))).collect();
        Self { mesh, values }
    }

    /// Interior values given in interior order; boundary set to zero.
    pub fn from_interior(mesh: Arc<TensorMesh>, interior: &[f64]) -> Result<Self> {
        if interior.len() != mesh.interior_count() {
            return Err(Error::invalid(format!(
                "expected {} interior values, got {}",
                mesh.interior_count(),
                interior.len()
            )));
        }
        let mut v = Self::zeros(mesh);
        let mesh = Arc::clone(&v.mesh);
        for (idx, &x) in mesh.interior_nodes().zip(interior) {
            v.values[mesh.flat(&idx)] = x;
        }
        Ok(v)
    }

    pub fn mesh(&self) -> &Arc<TensorMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.values[self.mesh.flat(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let k = self.mesh.flat(idx);
        self.values[k] = value;
    }

    /// Interior values in interior order.
    pub fn interior_values(&self) -> Vec<f64> {
        self.mesh
            .interior_nodes()
            .map(|idx| self.values[self.mesh.flat(&idx)])
            .collect()
    }

    pub fn same_mesh(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh
    }

    pub(crate) fn check_same_mesh(&self, other: &Self) -> Result<()> {
        if self.same_mesh(other) {
            Ok(())
        } else {
            Err(Error::MeshMismatch)
        }
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_same_mesh(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self {
            mesh: Arc::clone(&self.mesh),
            values,
        })
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            mesh: Arc::clone(&self.mesh),
            values: self.values.iter().map(|x| a * x).collect(),
        }
    }

    /// Zeroes every boundary node.
    pub fn clear_boundary(&mut self) {
        let mesh = Arc::clone(&self.mesh);
        for (k, idx) in mesh.nodes().enumerate() {
            if !mesh.is_interior(&idx) {
                self.values[k] = 0.0;
            }
        }
    }
}
