//! Standard cell, channel shape, the ε-periodic layer and conforming meshes.

mod channel;
mod mesh;

pub use channel::{
    build_channel, channel_measures, to_f64, Channel, ChannelMeasures, ChannelSpec, EdgeClass,
    EdgeSide, GridRect, Rational,
};
pub use mesh::{
    build_macro_mesh, build_micro_mesh, ActiveCell, Axis, CellKind, Eps, Face, FaceKind, FaceStats,
    LayerContact, LayerLattice, MacroMesh, MeshStats, MicroMesh,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("channel has no rectangles")]
    EmptyChannel,
    #[error("grid denominator must be positive")]
    InvalidDenominator,
    #[error("rectangle {rect} is empty or leaves the standard cell")]
    InvalidRect { rect: usize },
    #[error("corner value {value} of rectangle {rect} is not on the 1/q grid")]
    OffGridCorner { rect: usize, value: f64 },
    #[error("channel rectangles do not form a connected region")]
    DisconnectedChannel,
    #[error("channel must reach both y_n = 1 and y_n = -1")]
    EmptyTopBottomFace,
    #[error("lateral channel boundary touches the cell wall")]
    ChannelTouchesCellWall,
    #[error("non-conforming resolution: {0}")]
    NonConformingResolution(String),
    #[error("ε = {0} does not satisfy 1/ε ∈ ℕ")]
    InvalidEps(f64),
}
