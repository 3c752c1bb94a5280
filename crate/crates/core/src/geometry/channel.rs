//! The standard channel `Z* ⊂ Z = (0,1) × (-1,1)` as a finite union of
//! axis-aligned rectangles with corners on a `1/q` grid.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::GeometryError;

pub type Rational = Ratio<i64>;

/// Raw channel description as read from JSON:
/// `{"rects": [[y1lo, y1hi, ynlo, ynhi], ...], "den": q}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub rects: Vec<[f64; 4]>,
    pub den: u32,
}

impl ChannelSpec {
    pub fn new(rects: Vec<[f64; 4]>, den: u32) -> Self {
        ChannelSpec { rects, den }
    }

    /// The single straight channel `(a, b) × (-1, 1)`.
    pub fn straight(a: f64, b: f64, den: u32) -> Self {
        ChannelSpec::new(vec![[a, b, -1.0, 1.0]], den)
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Rectangle in units of `1/q`: `[y1lo, y1hi) × [ynlo, ynhi)` with the
/// `y_n` numerators shifted so that `y_n = -1` maps to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridRect {
    pub y1: (i64, i64),
    pub yn: (i64, i64),
}

/// Exact measures of a validated channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelMeasures {
    /// `|Z*|`
    pub area: Rational,
    /// `|N|`, the lateral boundary length
    pub lateral: Rational,
    /// `|S*+|`
    pub top: Rational,
    /// `|S*-|`
    pub bottom: Rational,
    /// distance of `N` from the cell walls `ȳ = 0` and `ȳ = 1`
    pub wall_distance: Rational,
}

impl ChannelMeasures {
    pub fn area_f64(&self) -> f64 {
        to_f64(self.area)
    }
    pub fn lateral_f64(&self) -> f64 {
        to_f64(self.lateral)
    }
    pub fn top_f64(&self) -> f64 {
        to_f64(self.top)
    }
    pub fn bottom_f64(&self) -> f64 {
        to_f64(self.bottom)
    }
}

pub fn to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Which side of a unit raster square a boundary edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSide {
    Left,
    Right,
    Bottom,
    Top,
}

/// Classification of a raster boundary edge of `Z*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeClass {
    TopFace,
    BottomFace,
    Lateral,
}

/// A validated channel. The `q × 2q` raster of `1/q` squares represents
/// `Z*` exactly because all rectangle corners lie on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    spec: ChannelSpec,
    q: i64,
    rects: Vec<GridRect>,
    raster: Vec<bool>,
}

impl Channel {
    pub fn spec(&self) -> &ChannelSpec {
        &self.spec
    }

    pub fn den(&self) -> u32 {
        self.q as u32
    }

    pub fn grid_rects(&self) -> &[GridRect] {
        &self.rects
    }

    /// Raster square `(a, b)`, `a ∈ [0, q)` along `ȳ`, `b ∈ [0, 2q)` along `y_n`.
    pub fn contains_square(&self, a: i64, b: i64) -> bool {
        if a < 0 || b < 0 || a >= self.q || b >= 2 * self.q {
            return false;
        }
        self.raster[(b * self.q + a) as usize]
    }

    /// Point membership in the closure of `Z*`, with `ȳ` taken as given
    /// (no periodic reduction).
    pub fn contains_closed(&self, y: [f64; 2], tol: f64) -> bool {
        let q = self.q as f64;
        self.rects.iter().any(|r| {
            let (a0, a1) = (r.y1.0 as f64 / q, r.y1.1 as f64 / q);
            let (b0, b1) = (r.yn.0 as f64 / q - 1.0, r.yn.1 as f64 / q - 1.0);
            y[0] >= a0 - tol && y[0] <= a1 + tol && y[1] >= b0 - tol && y[1] <= b1 + tol
        })
    }

    /// Every boundary edge of the raster, as `(a, b, side, class)`.
    pub fn boundary_edges(&self) -> Vec<(i64, i64, EdgeSide, EdgeClass)> {
        let q = self.q;
        let mut out = Vec::new();
        for b in 0..2 * q {
            for a in 0..q {
                if !self.contains_square(a, b) {
                    continue;
                }
                if !self.contains_square(a - 1, b) {
                    out.push((a, b, EdgeSide::Left, EdgeClass::Lateral));
                }
                if !self.contains_square(a + 1, b) {
                    out.push((a, b, EdgeSide::Right, EdgeClass::Lateral));
                }
                if b == 0 {
                    out.push((a, b, EdgeSide::Bottom, EdgeClass::BottomFace));
                } else if !self.contains_square(a, b - 1) {
                    out.push((a, b, EdgeSide::Bottom, EdgeClass::Lateral));
                }
                if b == 2 * q - 1 {
                    out.push((a, b, EdgeSide::Top, EdgeClass::TopFace));
                } else if !self.contains_square(a, b + 1) {
                    out.push((a, b, EdgeSide::Top, EdgeClass::Lateral));
                }
            }
        }
        out
    }

    /// Exact area, lateral length, face lengths and wall distance.
    pub fn measures(&self) -> ChannelMeasures {
        channel_measures(self)
    }
}

/// Validate a channel description.
pub fn build_channel(spec: &ChannelSpec) -> Result<Channel, GeometryError> {
    if spec.rects.is_empty() {
        return Err(GeometryError::EmptyChannel);
    }
    if spec.den == 0 {
        return Err(GeometryError::InvalidDenominator);
    }
    let q = spec.den as i64;
    let qf = q as f64;
    let snap = |v: f64, idx: usize| -> Result<i64, GeometryError> {
        let s = v * qf;
        let r = s.round();
        if (s - r).abs() > 1e-9 {
            Err(GeometryError::OffGridCorner {
                rect: idx,
                value: v,
            })
        } else {
            Ok(r as i64)
        }
    };
    let mut rects = Vec::with_capacity(spec.rects.len());
    for (idx, r) in spec.rects.iter().enumerate() {
        let y1 = (snap(r[0], idx)?, snap(r[1], idx)?);
        let yn = (snap(r[2], idx)? + q, snap(r[3], idx)? + q);
        if y1.0 >= y1.1 || yn.0 >= yn.1 || y1.0 < 0 || y1.1 > q || yn.0 < 0 || yn.1 > 2 * q {
            return Err(GeometryError::InvalidRect { rect: idx });
        }
        rects.push(GridRect { y1, yn });
    }

    if !rects_connected(&rects) {
        return Err(GeometryError::DisconnectedChannel);
    }
    if rects.iter().any(|r| r.y1.0 == 0 || r.y1.1 == q) {
        return Err(GeometryError::ChannelTouchesCellWall);
    }
    if !rects.iter().any(|r| r.yn.1 == 2 * q) || !rects.iter().any(|r| r.yn.0 == 0) {
        return Err(GeometryError::EmptyTopBottomFace);
    }

    let mut raster = vec![false; (2 * q * q) as usize];
    for r in &rects {
        for b in r.yn.0..r.yn.1 {
            for a in r.y1.0..r.y1.1 {
                raster[(b * q + a) as usize] = true;
            }
        }
    }
    Ok(Channel {
        spec: spec.clone(),
        q,
        rects,
        raster,
    })
}

/// Connectivity of the rectangle adjacency graph: two rectangles are joined
/// when their closures share a segment of positive length (or overlap).
fn rects_connected(rects: &[GridRect]) -> bool {
    let n = rects.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let (r, s) = (rects[i], rects[j]);
            let ix = r.y1.1.min(s.y1.1) - r.y1.0.max(s.y1.0);
            let iy = r.yn.1.min(s.yn.1) - r.yn.0.max(s.yn.0);
            if ix >= 0 && iy >= 0 && (ix > 0 || iy > 0) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let root = find(&mut parent, 0);
    (0..n).all(|i| find(&mut parent, i) == root)
}

/// Exact rational measures of the rectilinear union.
pub fn channel_measures(ch: &Channel) -> ChannelMeasures {
    let q = ch.q;
    let squares = ch.raster.iter().filter(|&&s| s).count() as i64;
    let (mut lateral, mut top, mut bottom) = (0i64, 0i64, 0i64);
    for (_, _, _, class) in ch.boundary_edges() {
        match class {
            EdgeClass::Lateral => lateral += 1,
            EdgeClass::TopFace => top += 1,
            EdgeClass::BottomFace => bottom += 1,
        }
    }
    let wall = ch
        .rects
        .iter()
        .map(|r| r.y1.0.min(q - r.y1.1))
        .min()
        .unwrap_or(0);
    ChannelMeasures {
        area: Rational::new(squares, q * q),
        lateral: Rational::new(lateral, q),
        top: Rational::new(top, q),
        bottom: Rational::new(bottom, q),
        wall_distance: Rational::new(wall, q),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hourglass() -> ChannelSpec {
        ChannelSpec::new(vec![[0.25, 0.75, 0.0, 1.0], [0.375, 0.625, -1.0, 0.0]], 8)
    }

    #[test]
    fn straight_channel_is_valid_with_quarter_wall_distance() {
        let ch = build_channel(&ChannelSpec::straight(0.25, 0.75, 4)).unwrap();
        let m = ch.measures();
        assert_eq!(m.wall_distance, Rational::new(1, 4));
        assert_eq!(m.area, Rational::from_integer(1));
        assert_eq!(m.top, Rational::new(1, 2));
        assert_eq!(m.bottom, Rational::new(1, 2));
        assert_eq!(m.lateral, Rational::from_integer(4));
    }

    #[test]
    fn full_cell_touches_wall() {
        let err = build_channel(&ChannelSpec::straight(0.0, 1.0, 1)).unwrap_err();
        assert_eq!(err, GeometryError::ChannelTouchesCellWall);
    }

    #[test]
    fn hourglass_is_connected_and_measured() {
        let ch = build_channel(&hourglass()).unwrap();
        let m = ch.measures();
        assert_eq!(m.area, Rational::new(3, 4));
        // vertical sides 1 + 1 + 1 + 1, shoulders 1/8 + 1/8
        assert_eq!(m.lateral, Rational::new(17, 4));
        assert_eq!(m.top, Rational::new(1, 2));
        assert_eq!(m.bottom, Rational::new(1, 4));
    }

    #[test]
    fn corner_contact_is_disconnected() {
        let spec = ChannelSpec::new(vec![[0.25, 0.5, 0.0, 1.0], [0.5, 0.75, -1.0, 0.0]], 4);
        assert_eq!(
            build_channel(&spec).unwrap_err(),
            GeometryError::DisconnectedChannel
        );
    }

    #[test]
    fn missing_face_and_off_grid() {
        let spec = ChannelSpec::new(vec![[0.25, 0.75, -0.5, 1.0]], 4);
        assert_eq!(
            build_channel(&spec).unwrap_err(),
            GeometryError::EmptyTopBottomFace
        );
        let spec = ChannelSpec::new(vec![[0.3, 0.75, -1.0, 1.0]], 4);
        assert!(matches!(
            build_channel(&spec).unwrap_err(),
            GeometryError::OffGridCorner { rect: 0, .. }
        ));
        assert_eq!(
            build_channel(&ChannelSpec::new(vec![], 4)).unwrap_err(),
            GeometryError::EmptyChannel
        );
        let spec = ChannelSpec::new(vec![[0.75, 0.25, -1.0, 1.0]], 4);
        assert_eq!(
            build_channel(&spec).unwrap_err(),
            GeometryError::InvalidRect { rect: 0 }
        );
    }

    #[test]
    fn json_spec_parses() {
        let spec = ChannelSpec::from_json(r#"{"rects": [[0.25, 0.75, -1, 1]], "den": 4}"#).unwrap();
        assert_eq!(spec, ChannelSpec::straight(0.25, 0.75, 4));
    }

    #[test]
    fn closed_membership_includes_boundary() {
        let ch = build_channel(&ChannelSpec::straight(0.25, 0.75, 4)).unwrap();
        assert!(ch.contains_closed([0.25, 1.0], 1e-12));
        assert!(!ch.contains_closed([0.2, 0.0], 1e-12));
    }
}
