//! Conforming Cartesian meshes for the microscopic domain `Ω_ε` and for the
//! limit domain `Ω⁺ ∪ Σ ∪ Ω⁻`.

use serde::{Deserialize, Serialize};

use super::channel::{Channel, ChannelMeasures};
use super::GeometryError;

/// Period `ε` with `1/ε ∈ ℕ`, stored by its reciprocal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Eps {
    inv: u32,
}

impl Eps {
    pub fn from_inverse(inv: u32) -> Result<Self, GeometryError> {
        if inv == 0 {
            return Err(GeometryError::InvalidEps(f64::INFINITY));
        }
        Ok(Eps { inv })
    }

    pub fn from_value(eps: f64) -> Result<Self, GeometryError> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(GeometryError::InvalidEps(eps));
        }
        let inv = 1.0 / eps;
        let r = inv.round();
        if (inv - r).abs() > 1e-9 * r {
            return Err(GeometryError::InvalidEps(eps));
        }
        Ok(Eps { inv: r as u32 })
    }

    pub fn inverse(self) -> u32 {
        self.inv
    }

    pub fn value(self) -> f64 {
        1.0 / self.inv as f64
    }
}

/// The index set `I_ε` of channel copies along `Σ = (0, L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerLattice {
    pub eps: Eps,
    pub sigma_length: u32,
}

impl LayerLattice {
    pub fn len(&self) -> usize {
        (self.sigma_length * self.eps.inverse()) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        0..self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    BulkPlus,
    BulkMinus,
    Channel,
    Void,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaceKind {
    /// between two active cells of the same subdomain
    Interior,
    /// bulk⁺/channel interface `S⁺_{*,ε}`
    TopInterface,
    /// bulk⁻/channel interface `S⁻_{*,ε}`
    BottomInterface,
    /// lateral channel wall `N_ε`
    Lateral,
    /// outer Neumann boundary `∂_N Ω_ε`
    Outer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X1,
    Xn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveCell {
    pub i: usize,
    pub j: usize,
    pub kind: CellKind,
    pub center: [f64; 2],
    /// fast variable `y = x/ε` reduced into the standard cell (channel cells only)
    pub fast: Option<[f64; 2]>,
}

/// A face touching at least one active cell. `b` is `None` on boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub a: usize,
    pub b: Option<usize>,
    pub kind: FaceKind,
    pub normal: Axis,
    pub midpoint: [f64; 2],
    /// fast coordinate of the midpoint, for faces on channel cells
    pub fast: Option<[f64; 2]>,
}

/// One `Σ`-column's cells on either side of the layer: the first bulk cell
/// and the layer cell it touches (if that layer cell is a channel cell).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerContact {
    pub bulk: usize,
    pub channel: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroMesh {
    pub eps: Eps,
    pub m: u32,
    pub h: f64,
    pub height: f64,
    pub sigma_length: u32,
    pub nx: usize,
    pub ny: usize,
    pub lattice: LayerLattice,
    pub channel_measures: ChannelMeasures,
    cells_per_period: usize,
    grid: Vec<Option<usize>>,
    cells: Vec<ActiveCell>,
    faces: Vec<Face>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceStats {
    pub interior: usize,
    pub top_interface: usize,
    pub bottom_interface: usize,
    pub lateral: usize,
    pub outer: usize,
    pub top_interface_length: f64,
    pub bottom_interface_length: f64,
    pub lateral_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshStats {
    pub eps: f64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub lattice_cells: usize,
    pub bulk_plus_cells: usize,
    pub bulk_minus_cells: usize,
    pub channel_cells: usize,
    pub void_cells: usize,
    pub channel_area: f64,
    pub faces: FaceStats,
}

fn integral_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let k = r.round();
    ((r - k).abs() <= 1e-9 * k.max(1.0) && k >= 1.0).then_some(k as usize)
}

/// Build the microscopic mesh with spacing `h = ε / (m q)`.
pub fn build_micro_mesh(
    channel: &Channel,
    eps: Eps,
    m: u32,
    height: f64,
    sigma_length: u32,
) -> Result<MicroMesh, GeometryError> {
    if m == 0 || sigma_length == 0 {
        return Err(GeometryError::NonConformingResolution(
            "m and the Σ-length must be positive".into(),
        ));
    }
    let q = channel.den() as usize;
    let mq = m as usize * q;
    let inv = eps.inverse() as usize;
    let h = 1.0 / (inv * mq) as f64;
    let nx = sigma_length as usize * inv * mq;
    let half_rows = integral_ratio(height, h).ok_or_else(|| {
        GeometryError::NonConformingResolution(format!("H = {height} is not a multiple of h = {h}"))
    })?;
    if half_rows <= mq {
        return Err(GeometryError::NonConformingResolution(format!(
            "H = {height} must exceed ε = {}",
            eps.value()
        )));
    }
    let ny = 2 * half_rows;
    let layer_lo = half_rows - mq;
    let layer_hi = half_rows + mq;

    let kind_at = |i: usize, j: usize| -> CellKind {
        if j >= layer_hi {
            CellKind::BulkPlus
        } else if j < layer_lo {
            CellKind::BulkMinus
        } else {
            let a = (i % mq) / m as usize;
            let b = (j - layer_lo) / m as usize;
            if channel.contains_square(a as i64, b as i64) {
                CellKind::Channel
            } else {
                CellKind::Void
            }
        }
    };
    let fast_at = |i: usize, j: usize| -> [f64; 2] {
        [
            ((i % mq) as f64 + 0.5) / mq as f64,
            -1.0 + ((j - layer_lo) as f64 + 0.5) / mq as f64,
        ]
    };

    let mut grid = vec![None; nx * ny];
    let mut cells = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let kind = kind_at(i, j);
            if kind == CellKind::Void {
                continue;
            }
            grid[j * nx + i] = Some(cells.len());
            cells.push(ActiveCell {
                i,
                j,
                kind,
                center: [(i as f64 + 0.5) * h, -height + (j as f64 + 0.5) * h],
                fast: (kind == CellKind::Channel).then(|| fast_at(i, j)),
            });
        }
    }

    let at = |i: isize, j: isize| -> (Option<usize>, CellKind) {
        if i < 0 || j < 0 || i as usize >= nx || j as usize >= ny {
            (None, CellKind::Void)
        } else {
            let (i, j) = (i as usize, j as usize);
            (grid[j * nx + i], kind_at(i, j))
        }
    };

    let mut faces = Vec::new();
    let mut push_face = |lo: (Option<usize>, CellKind),
                         hi: (Option<usize>, CellKind),
                         normal: Axis,
                         midpoint: [f64; 2],
                         fast: Option<[f64; 2]>| {
        let (a, ka, b, kb) = match (lo.0, hi.0) {
            (None, None) => return,
            (Some(a), b) => (a, lo.1, b, hi.1),
            (None, Some(b)) => (b, hi.1, None, lo.1),
        };
        let kind = match (ka, b.map(|_| kb)) {
            (CellKind::Channel, None) => FaceKind::Lateral,
            (_, None) => FaceKind::Outer,
            (x, Some(y)) if x == y => FaceKind::Interior,
            (CellKind::BulkPlus, Some(CellKind::Channel))
            | (CellKind::Channel, Some(CellKind::BulkPlus)) => FaceKind::TopInterface,
            (CellKind::BulkMinus, Some(CellKind::Channel))
            | (CellKind::Channel, Some(CellKind::BulkMinus)) => FaceKind::BottomInterface,
            _ => unreachable!("bulk⁺ and bulk⁻ cells are never adjacent"),
        };
        let fast = if ka == CellKind::Channel || (b.is_some() && kb == CellKind::Channel) {
            fast
        } else {
            None
        };
        faces.push(Face {
            a,
            b,
            kind,
            normal,
            midpoint,
            fast,
        });
    };

    let in_layer = |j: usize| j >= layer_lo && j < layer_hi;
    // faces normal to x1, on the grid line x1 = i h
    for j in 0..ny {
        for i in 0..=nx {
            let lo = at(i as isize - 1, j as isize);
            let hi = at(i as isize, j as isize);
            let fast = in_layer(j).then(|| {
                let il = i % mq;
                // a wall sitting on a period boundary belongs to the right-hand copy
                let ybar = if il == 0 && lo.1 == CellKind::Channel {
                    1.0
                } else {
                    il as f64 / mq as f64
                };
                [ybar, -1.0 + ((j - layer_lo) as f64 + 0.5) / mq as f64]
            });
            push_face(
                lo,
                hi,
                Axis::X1,
                [i as f64 * h, -height + (j as f64 + 0.5) * h],
                fast,
            );
        }
    }
    // faces normal to xn, on the grid line xn = -H + j h
    for j in 0..=ny {
        for i in 0..nx {
            let lo = at(i as isize, j as isize - 1);
            let hi = at(i as isize, j as isize);
            let fast = (j >= layer_lo && j <= layer_hi).then(|| {
                [
                    ((i % mq) as f64 + 0.5) / mq as f64,
                    -1.0 + (j - layer_lo) as f64 / mq as f64,
                ]
            });
            push_face(
                lo,
                hi,
                Axis::Xn,
                [(i as f64 + 0.5) * h, -height + j as f64 * h],
                fast,
            );
        }
    }

    Ok(MicroMesh {
        eps,
        m,
        h,
        height,
        sigma_length,
        nx,
        ny,
        lattice: LayerLattice { eps, sigma_length },
        channel_measures: channel.measures(),
        cells_per_period: mq,
        grid,
        cells,
        faces,
    })
}

impl MicroMesh {
    pub fn cells(&self) -> &[ActiveCell] {
        &self.cells
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn n_active(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    pub fn cells_per_period(&self) -> usize {
        self.cells_per_period
    }

    pub fn active_at(&self, i: usize, j: usize) -> Option<usize> {
        self.grid.get(j * self.nx + i).copied().flatten()
    }

    /// Lattice index `k ∈ I_ε` of the period containing column `i`.
    pub fn lattice_index(&self, i: usize) -> usize {
        i / self.cells_per_period
    }

    pub fn faces_of_kind(&self, kind: FaceKind) -> impl Iterator<Item = &Face> + '_ {
        self.faces.iter().filter(move |f| f.kind == kind)
    }

    /// Row index of the lowest bulk⁺ row and of the highest bulk⁻ row.
    fn layer_rows(&self) -> (usize, usize) {
        let half = self.ny / 2;
        (
            half + self.cells_per_period,
            half - self.cells_per_period - 1,
        )
    }

    /// Contacts of each `Σ`-column with the layer from above (`S⁺_ε`).
    pub fn top_contacts(&self) -> Vec<LayerContact> {
        let (jp, _) = self.layer_rows();
        (0..self.nx)
            .map(|i| LayerContact {
                bulk: self.active_at(i, jp).expect("bulk⁺ cell"),
                channel: self.active_at(i, jp - 1),
            })
            .collect()
    }

    /// Contacts of each `Σ`-column with the layer from below (`S⁻_ε`).
    pub fn bottom_contacts(&self) -> Vec<LayerContact> {
        let (_, jm) = self.layer_rows();
        (0..self.nx)
            .map(|i| LayerContact {
                bulk: self.active_at(i, jm).expect("bulk⁻ cell"),
                channel: self.active_at(i, jm + 1),
            })
            .collect()
    }

    pub fn count(&self, kind: CellKind) -> usize {
        if kind == CellKind::Void {
            let layer_cells = self.nx * 2 * self.cells_per_period;
            return layer_cells - self.count(CellKind::Channel);
        }
        self.cells.iter().filter(|c| c.kind == kind).count()
    }

    pub fn stats(&self) -> MeshStats {
        let count = |k| self.faces_of_kind(k).count();
        let len = |k| self.faces_of_kind(k).count() as f64 * self.h;
        let channel_cells = self.count(CellKind::Channel);
        MeshStats {
            eps: self.eps.value(),
            h: self.h,
            nx: self.nx,
            ny: self.ny,
            lattice_cells: self.lattice.len(),
            bulk_plus_cells: self.count(CellKind::BulkPlus),
            bulk_minus_cells: self.count(CellKind::BulkMinus),
            channel_cells,
            void_cells: self.count(CellKind::Void),
            channel_area: channel_cells as f64 * self.cell_area(),
            faces: FaceStats {
                interior: count(FaceKind::Interior),
                top_interface: count(FaceKind::TopInterface),
                bottom_interface: count(FaceKind::BottomInterface),
                lateral: count(FaceKind::Lateral),
                outer: count(FaceKind::Outer),
                top_interface_length: len(FaceKind::TopInterface),
                bottom_interface_length: len(FaceKind::BottomInterface),
                lateral_length: len(FaceKind::Lateral),
            },
        }
    }
}

/// Grids for the limit problem: bulk cells of size `h` on `Ω±` and one
/// interface unknown per `Σ`-cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroMesh {
    pub h: f64,
    pub height: f64,
    pub sigma_length: u32,
    pub nx: usize,
    /// rows per bulk side
    pub ny: usize,
}

impl MacroMesh {
    pub fn n_bulk(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_unknowns(&self) -> usize {
        2 * self.n_bulk() + self.nx
    }

    /// Unknown index of bulk⁺ cell `(i, j)`, `j = 0` adjacent to `Σ`.
    pub fn plus(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Unknown index of bulk⁻ cell `(i, j)`, `j = 0` adjacent to `Σ`.
    pub fn minus(&self, i: usize, j: usize) -> usize {
        self.n_bulk() + j * self.nx + i
    }

    pub fn interface(&self, i: usize) -> usize {
        2 * self.n_bulk() + i
    }

    pub fn x1(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h
    }

    /// Distance of row `j`'s centres from `Σ`.
    pub fn row_offset(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h
    }
}

pub fn build_macro_mesh(
    h: f64,
    height: f64,
    sigma_length: u32,
) -> Result<MacroMesh, GeometryError> {
    if !(h > 0.0) || sigma_length == 0 {
        return Err(GeometryError::NonConformingResolution(format!(
            "invalid h_macro = {h}"
        )));
    }
    let nx = integral_ratio(sigma_length as f64, h).ok_or_else(|| {
        GeometryError::NonConformingResolution(format!(
            "|Σ| = {sigma_length} is not a multiple of h = {h}"
        ))
    })?;
    let ny = integral_ratio(height, h).ok_or_else(|| {
        GeometryError::NonConformingResolution(format!("H = {height} is not a multiple of h = {h}"))
    })?;
    Ok(MacroMesh {
        h: sigma_length as f64 / nx as f64,
        height,
        sigma_length,
        nx,
        ny,
    })
}
