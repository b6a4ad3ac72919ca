//! Computational domain, measurement segment and structured grids.
//!
//! The domain is the unit square (or the unit cube, which is only used for
//! quadrature checks of the singular functions). The measurement boundary
//! `Γ_M` is the flat piece `B_{eps0}(xbar) ∩ ∂Ω` of the bottom edge, whose
//! outward normal is `-e_d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point2 = [f64; 2];

/// Boundary condition attached to one edge of the square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    /// Controlled Dirichlet data.
    Dirichlet,
    /// Homogeneous natural condition `n·(a∇u + b) = 0` on an inaccessible part.
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Bottom,
    Right,
    Top,
    Left,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Bottom, Edge::Right, Edge::Top, Edge::Left];

    pub fn outward_normal(self) -> Point2 {
        match self {
            Edge::Bottom => [0.0, -1.0],
            Edge::Right => [1.0, 0.0],
            Edge::Top => [0.0, 1.0],
            Edge::Left => [-1.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BcLabels {
    pub bottom: BcKind,
    pub right: BcKind,
    pub top: BcKind,
    pub left: BcKind,
}

impl Default for BcLabels {
    fn default() -> Self {
        Self {
            bottom: BcKind::Dirichlet,
            right: BcKind::Dirichlet,
            top: BcKind::Dirichlet,
            left: BcKind::Dirichlet,
        }
    }
}

impl BcLabels {
    pub fn get(&self, edge: Edge) -> BcKind {
        match edge {
            Edge::Bottom => self.bottom,
            Edge::Right => self.right,
            Edge::Top => self.top,
            Edge::Left => self.left,
        }
    }
}

/// Unit square (or cube) with a flat measurement segment on the bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub dim: usize,
    /// Foot point on the bottom edge (`xbar[dim-1] == 0`).
    pub xbar: Vec<f64>,
    /// Half-width of the flat measurement segment.
    pub eps0: f64,
    /// Final time.
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default)]
    pub bc_labels: BcLabels,
}

impl Default for Domain {
    fn default() -> Self {
        Self {
            dim: 2,
            xbar: vec![0.5, 0.0],
            eps0: 0.25,
            t_final: 1.0,
            bc_labels: BcLabels::default(),
        }
    }
}

impl Domain {
    pub fn new(dim: usize, xbar: &[f64], eps0: f64, t_final: f64) -> Result<Self> {
        let d = Self {
            dim,
            xbar: xbar.to_vec(),
            eps0,
            t_final,
            bc_labels: BcLabels::default(),
        };
        d.validate()?;
        Ok(d)
    }

    /// The unit cube with `xbar = (0.5, 0.5, 0)`, used for 3-D quadrature.
    pub fn unit_cube() -> Self {
        Self {
            dim: 3,
            xbar: vec![0.5, 0.5, 0.0],
            ..Self::default()
        }
    }

    pub fn with_bc(mut self, labels: BcLabels) -> Result<Self> {
        self.bc_labels = labels;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::InvalidInput(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.xbar.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "xbar has {} components but dim = {}",
                self.xbar.len(),
                self.dim
            )));
        }
        if !(self.eps0 > 0.0) {
            return Err(Error::OutOfRange {
                what: "eps0",
                value: self.eps0,
                range: "(0, ∞)".into(),
            });
        }
        if !(self.t_final > 0.0) {
            return Err(Error::OutOfRange {
                what: "T",
                value: self.t_final,
                range: "(0, ∞)".into(),
            });
        }
        if self.xbar[self.dim - 1] != 0.0 {
            return Err(Error::InvalidInput("xbar must lie on the bottom boundary".into()));
        }
        for k in 0..self.dim - 1 {
            let x = self.xbar[k];
            if x - self.eps0 < 0.0 || x + self.eps0 > 1.0 {
                return Err(Error::InvalidInput(format!(
                    "measurement segment around xbar[{k}] = {x} with eps0 = {} leaves the flat edge",
                    self.eps0
                )));
            }
        }
        if self.bc_labels.bottom != BcKind::Dirichlet {
            return Err(Error::InvalidInput(
                "the bottom edge carries the measurement segment and must be Dirichlet".into(),
            ));
        }
        Ok(())
    }

    /// Outward unit normal at `xbar`, i.e. `-e_d`.
    pub fn normal(&self) -> Vec<f64> {
        let mut n = vec![0.0; self.dim];
        n[self.dim - 1] = -1.0;
        n
    }

    pub fn xbar2(&self) -> Point2 {
        [self.xbar[0], self.xbar[1]]
    }

    /// Length (area for `dim = 3`) of `Γ_M`.
    pub fn gamma_m_measure(&self) -> f64 {
        match self.dim {
            2 => 2.0 * self.eps0,
            _ => std::f64::consts::PI * self.eps0 * self.eps0,
        }
    }

    /// Whether a point of the closed bottom boundary belongs to `Γ_M`.
    pub fn on_gamma_m(&self, x: &[f64]) -> bool {
        x[self.dim - 1] == 0.0 && dist(x, &self.xbar) <= self.eps0 * (1.0 + 1e-12)
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The exterior point `xbar + eps·n(xbar)`.
pub fn exterior_point(domain: &Domain, eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps <= domain.eps0 * (1.0 + 1e-12)) {
        return Err(Error::OutOfRange {
            what: "eps",
            value: eps,
            range: format!("(0, {}]", domain.eps0),
        });
    }
    let n = domain.normal();
    Ok(domain.xbar.iter().zip(&n).map(|(x, n)| x + eps * n).collect())
}

/// Whether the open ball `B_r(center)` misses the open unit square/cube.
pub fn ball_misses_domain(center: &[f64], r: f64) -> bool {
    // distance from the center to the closed box
    let d2: f64 = center
        .iter()
        .map(|&c| {
            let q = c.clamp(0.0, 1.0);
            (c - q) * (c - q)
        })
        .sum();
    d2.sqrt() >= r * (1.0 - 1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    GammaM,
    /// Boundary node outside `Γ_M`; corners report the first edge in
    /// `Edge::ALL` order that contains them.
    Boundary(Edge),
}

/// Tensor-product (rectilinear) grid of the unit square with bilinear cells.
///
/// Node `(i, j)` sits at `(xs[i], ys[j])` and has index `j * (nx + 1) + i`.
#[derive(Debug, Clone)]
pub struct Grid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub domain: Domain,
    classes: Vec<NodeClass>,
    dirichlet: Vec<bool>,
    volume_weights: Vec<f64>,
    boundary_weights: Vec<f64>,
    gamma_m_weights: Vec<f64>,
}

impl Grid {
    /// Uniform grid with `n_cells` cells per axis.
    pub fn uniform(domain: &Domain, n_cells: usize) -> Result<Self> {
        if n_cells < 8 {
            return Err(Error::OutOfRange {
                what: "n_cells",
                value: n_cells as f64,
                range: "[8, ∞)".into(),
            });
        }
        let xs: Vec<f64> = (0..=n_cells).map(|i| i as f64 / n_cells as f64).collect();
        Self::from_coordinates(domain, xs.clone(), xs)
    }

    /// Rectilinear grid refined around `xbar`: spacing `h_fine` within
    /// `radius` of the foot point, geometric growth by `growth` beyond, capped
    /// at `h_coarse`. `xbar ± eps0` are inserted as nodes.
    pub fn graded(
        domain: &Domain,
        h_fine: f64,
        radius: f64,
        h_coarse: f64,
        growth: f64,
    ) -> Result<Self> {
        domain.validate()?;
        if !(h_fine > 0.0 && h_coarse >= h_fine && growth > 1.0) {
            return Err(Error::InvalidInput(format!(
                "graded grid needs 0 < h_fine <= h_coarse and growth > 1 (got {h_fine}, {h_coarse}, {growth})"
            )));
        }
        let xb = domain.xbar[0];
        let xs = graded_axis(0.0, 1.0, xb, h_fine, radius, h_coarse, growth, &[
            xb - domain.eps0,
            xb + domain.eps0,
        ]);
        let ys = graded_axis(0.0, 1.0, 0.0, h_fine, radius, h_coarse, growth, &[]);
        Self::from_coordinates(domain, xs, ys)
    }

    pub fn from_coordinates(domain: &Domain, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        domain.validate()?;
        if domain.dim != 2 {
            return Err(Error::InvalidInput("grids exist only for dim = 2".into()));
        }
        let ok_axis = |v: &[f64]| {
            v.len() >= 2
                && v[0] == 0.0
                && *v.last().unwrap() == 1.0
                && v.windows(2).all(|w| w[1] > w[0])
        };
        if !ok_axis(&xs) || !ok_axis(&ys) {
            return Err(Error::InvalidInput(
                "grid coordinates must increase strictly from 0 to 1".into(),
            ));
        }
        let nx = xs.len() - 1;
        let ny = ys.len() - 1;
        let n_nodes = (nx + 1) * (ny + 1);
        let mut classes = Vec::with_capacity(n_nodes);
        let mut dirichlet = Vec::with_capacity(n_nodes);
        let labels = domain.bc_labels;
        for j in 0..=ny {
            for i in 0..=nx {
                let on = [j == 0, i == nx, j == ny, i == 0];
                let x = [xs[i], ys[j]];
                let class = if !on.iter().any(|&b| b) {
                    NodeClass::Interior
                } else if j == 0 && domain.on_gamma_m(&x) {
                    NodeClass::GammaM
                } else {
                    let k = on.iter().position(|&b| b).unwrap();
                    NodeClass::Boundary(Edge::ALL[k])
                };
                classes.push(class);
                let is_dir = Edge::ALL
                    .iter()
                    .zip(on)
                    .any(|(&e, b)| b && labels.get(e) == BcKind::Dirichlet);
                dirichlet.push(is_dir);
            }
        }

        let half_widths = |v: &[f64]| -> Vec<f64> {
            let n = v.len();
            (0..n)
                .map(|k| {
                    let l = if k > 0 { v[k] - v[k - 1] } else { 0.0 };
                    let r = if k + 1 < n { v[k + 1] - v[k] } else { 0.0 };
                    0.5 * (l + r)
                })
                .collect()
        };
        let wx = half_widths(&xs);
        let wy = half_widths(&ys);
        let mut volume_weights = vec![0.0; n_nodes];
        let mut boundary_weights = vec![0.0; n_nodes];
        for j in 0..=ny {
            for i in 0..=nx {
                let k = j * (nx + 1) + i;
                volume_weights[k] = wx[i] * wy[j];
                if j == 0 || j == ny {
                    boundary_weights[k] += wx[i];
                }
                if i == 0 || i == nx {
                    boundary_weights[k] += wy[j];
                }
            }
        }

        // Γ_M weights: trapezoid on the cells inside the segment, partial end
        // cells credited to the last node inside.
        let (lo, hi) = (domain.xbar[0] - domain.eps0, domain.xbar[0] + domain.eps0);
        let mut gamma_m_weights = vec![0.0; n_nodes];
        let inside: Vec<usize> = (0..=nx).filter(|&i| classes[i] == NodeClass::GammaM).collect();
        if let (Some(&first), Some(&last)) = (inside.first(), inside.last()) {
            for w in inside.windows(2) {
                let len = xs[w[1]] - xs[w[0]];
                gamma_m_weights[w[0]] += 0.5 * len;
                gamma_m_weights[w[1]] += 0.5 * len;
            }
            gamma_m_weights[first] += (xs[first] - lo).max(0.0);
            gamma_m_weights[last] += (hi - xs[last]).max(0.0);
        }

        let grid = Self {
            xs,
            ys,
            domain: domain.clone(),
            classes,
            dirichlet,
            volume_weights,
            boundary_weights,
            gamma_m_weights,
        };
        if grid.gamma_m_nodes().len() < 4 {
            return Err(Error::Unresolved(format!(
                "only {} nodes fall on Γ_M (eps0 = {}); at least 4 are required",
                grid.gamma_m_nodes().len(),
                domain.eps0
            )));
        }
        Ok(grid)
    }

    pub fn nx(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn ny(&self) -> usize {
        self.ys.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn n_cells(&self) -> usize {
        self.nx() * self.ny()
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.nx() + 1) + i
    }

    #[inline]
    pub fn node_ij(&self, k: usize) -> (usize, usize) {
        (k % (self.nx() + 1), k / (self.nx() + 1))
    }

    #[inline]
    pub fn coord(&self, k: usize) -> Point2 {
        let (i, j) = self.node_ij(k);
        [self.xs[i], self.ys[j]]
    }

    pub fn class(&self, k: usize) -> NodeClass {
        self.classes[k]
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        self.classes[k] != NodeClass::Interior
    }

    pub fn is_dirichlet(&self, k: usize) -> bool {
        self.dirichlet[k]
    }

    pub fn volume_weights(&self) -> &[f64] {
        &self.volume_weights
    }

    pub fn boundary_weights(&self) -> &[f64] {
        &self.boundary_weights
    }

    pub fn gamma_m_weights(&self) -> &[f64] {
        &self.gamma_m_weights
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&k| !self.is_boundary(k)).collect()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&k| self.is_boundary(k)).collect()
    }

    pub fn gamma_m_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&k| self.classes[k] == NodeClass::GammaM)
            .collect()
    }

    /// Smallest and largest cell edge length.
    pub fn spacing_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for v in [&self.xs, &self.ys] {
            for w in v.windows(2) {
                let h = w[1] - w[0];
                lo = lo.min(h);
                hi = hi.max(h);
            }
        }
        (lo, hi)
    }

    /// Cell `(i, j)` containing `x` (closed on the upper side at the boundary).
    pub fn locate(&self, x: Point2) -> (usize, usize) {
        (locate_axis(&self.xs, x[0]), locate_axis(&self.ys, x[1]))
    }

    /// Bilinear interpolation of nodal values at `x`.
    pub fn interpolate(&self, values: &[f64], x: Point2) -> f64 {
        let (i, j) = self.locate(x);
        let (cell, xi, eta) = self.local(i, j, x);
        let s = shape(xi, eta);
        cell.iter().zip(s).map(|(&k, w)| values[k] * w).sum()
    }

    /// Gradient of the bilinear interpolant at `x`.
    pub fn interpolate_gradient(&self, values: &[f64], x: Point2) -> Point2 {
        let (i, j) = self.locate(x);
        let (cell, xi, eta) = self.local(i, j, x);
        let hx = self.xs[i + 1] - self.xs[i];
        let hy = self.ys[j + 1] - self.ys[j];
        let g = shape_grad(xi, eta);
        let mut out = [0.0; 2];
        for (&k, gk) in cell.iter().zip(g) {
            out[0] += values[k] * gk[0] / hx;
            out[1] += values[k] * gk[1] / hy;
        }
        out
    }

    /// Node indices of cell `(i, j)` in counter-clockwise order starting at
    /// the lower-left corner.
    #[inline]
    pub fn cell_nodes(&self, i: usize, j: usize) -> [usize; 4] {
        let n0 = self.node(i, j);
        let n3 = self.node(i, j + 1);
        [n0, n0 + 1, n3 + 1, n3]
    }

    fn local(&self, i: usize, j: usize, x: Point2) -> ([usize; 4], f64, f64) {
        let xi = (x[0] - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        let eta = (x[1] - self.ys[j]) / (self.ys[j + 1] - self.ys[j]);
        (self.cell_nodes(i, j), xi, eta)
    }
}

fn locate_axis(v: &[f64], x: f64) -> usize {
    let n = v.len() - 1;
    match v.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
        Ok(k) => k.min(n - 1),
        Err(k) => k.saturating_sub(1).min(n - 1),
    }
}

/// Bilinear shape functions on the reference square `[0,1]²`, ordered as
/// `Grid::cell_nodes`.
#[inline]
pub fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [
        (1.0 - xi) * (1.0 - eta),
        xi * (1.0 - eta),
        xi * eta,
        (1.0 - xi) * eta,
    ]
}

/// Reference gradients of [`shape`].
#[inline]
pub fn shape_grad(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - eta), -(1.0 - xi)],
        [1.0 - eta, -xi],
        [eta, xi],
        [-eta, 1.0 - xi],
    ]
}

#[allow(clippy::too_many_arguments)]
fn graded_axis(
    lo: f64,
    hi: f64,
    focus: f64,
    h_fine: f64,
    radius: f64,
    h_coarse: f64,
    growth: f64,
    pins: &[f64],
) -> Vec<f64> {
    // one-sided sequence of offsets from the focus
    let side = |extent: f64| -> Vec<f64> {
        let mut out = vec![0.0];
        let mut r = 0.0;
        let mut h = h_fine;
        while r < extent - 1e-12 {
            if r >= radius {
                h = (h * growth).min(h_coarse);
            }
            r += h;
            out.push(r.min(extent));
        }
        // merge a sliver last cell into its neighbour
        let n = out.len();
        if n >= 3 && out[n - 1] - out[n - 2] < 0.3 * (out[n - 2] - out[n - 3]) {
            out.remove(n - 2);
        }
        out
    };
    let mut pts = Vec::new();
    if focus > lo {
        pts.extend(side(focus - lo).into_iter().map(|r| focus - r));
    }
    if focus < hi {
        pts.extend(side(hi - focus).into_iter().map(|r| focus + r));
    }
    pts.push(lo);
    pts.push(hi);
    pts.iter_mut().for_each(|p| *p = p.clamp(lo, hi));
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    for &p in pins {
        if !(p > lo && p < hi) {
            continue;
        }
        // drop nodes that would leave a sliver next to the pin
        let k = pts.partition_point(|&q| q < p);
        let h = pts[k.min(pts.len() - 1)] - pts[k.saturating_sub(1)];
        pts.retain(|&q| q == lo || q == hi || (q - p).abs() >= 0.3 * h);
        let k = pts.partition_point(|&q| q < p);
        pts.insert(k, p);
    }
    // split cells that grew past the cap
    let mut out = vec![pts[0]];
    for w in pts.windows(2) {
        let n = ((w[1] - w[0]) / h_coarse - 1e-9).ceil().max(1.0) as usize;
        for m in 1..=n {
            out.push(if m == n { w[1] } else { w[0] + (w[1] - w[0]) * m as f64 / n as f64 });
        }
    }
    out
}
