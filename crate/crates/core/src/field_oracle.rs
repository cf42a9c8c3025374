//! Ground-truth coil fields and the lookup-table field model.
//!
//! Each physical coil is a bundle of `num_turns` identical current loops
//! stacked along the coil axis, evaluated with the closed-form Biot–Savart
//! law for straight segments. Coils are described in a canonical frame (the
//! north face, axis along +y) and rotated onto their face.
//!
//! The default winding is a racetrack loop that is long in z. Its in-plane
//! field is then essentially two-dimensional, which is what a planar FEA
//! export of the workspace would contain. Circular loops are also supported.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Domain, FieldModel, UnitResponse};
use crate::math::{rotation, Mat2, Vec2};
use crate::{MU0, WORKSPACE_HALF};

pub const GRID_FORMAT: &str = "magctl-grid/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    North,
    East,
    South,
    West,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::North, Face::East, Face::South, Face::West];

    /// Rotation (rad) that carries the canonical north-face frame onto this face.
    pub fn rotation(self) -> f64 {
        match self {
            Face::North => 0.0,
            Face::East => -PI / 2.0,
            Face::South => PI,
            Face::West => PI / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    /// Distance of the coil center from the workspace origin (mm).
    pub fn center_offset(self) -> f64 {
        match self {
            SizeClass::Small => 57.69,
            SizeClass::Medium => 71.295,
            SizeClass::Large => 90.925,
        }
    }

    /// Radius of the disk, centered on the coil, that covers the workspace (mm).
    pub fn disk_radius(self) -> f64 {
        match self {
            SizeClass::Small => 118.731,
            SizeClass::Medium => 136.186,
            SizeClass::Large => 165.341,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape")]
pub enum Winding {
    /// Circular loop in the plane normal to the coil axis.
    Circular,
    /// Rectangular loop of half-width `loop_radius` and full `height` along z (mm).
    Racetrack { height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoilSpec {
    pub face: Face,
    pub size_class: SizeClass,
    /// Distance from the workspace origin to the workspace-facing end of the winding (mm).
    pub center_offset: f64,
    pub loop_radius: f64,
    pub num_turns: u32,
    /// The winding occupies `[center_offset, center_offset + axial_extent]` along the axis (mm).
    pub axial_extent: f64,
    pub winding: Winding,
    /// Chords per circular loop; racetrack sides are exact straight segments.
    pub segments_per_loop: u32,
}

impl CoilSpec {
    /// Default surrogate coil for a face and size class.
    pub fn preset(face: Face, size_class: SizeClass) -> Self {
        let (loop_radius, axial_extent) = match size_class {
            SizeClass::Small => (90.0, 20.0),
            SizeClass::Medium => (80.0, 30.0),
            SizeClass::Large => (70.0, 40.0),
        };
        Self {
            face,
            size_class,
            center_offset: size_class.center_offset(),
            loop_radius,
            num_turns: 100,
            axial_extent,
            winding: Winding::Racetrack { height: 1000.0 },
            segments_per_loop: 64,
        }
    }

    /// A single circular loop, mostly useful for checking against closed forms.
    pub fn circular_loop(face: Face, center_offset: f64, loop_radius: f64, segments: u32) -> Self {
        Self {
            face,
            size_class: SizeClass::Small,
            center_offset,
            loop_radius,
            num_turns: 1,
            axial_extent: 0.0,
            winding: Winding::Circular,
            segments_per_loop: segments,
        }
    }

    /// The eight active coils ordered (north, east, south, west) × (small, large).
    pub fn default_set() -> Vec<CoilSpec> {
        Face::ALL
            .iter()
            .flat_map(|&f| {
                [
                    CoilSpec::preset(f, SizeClass::Small),
                    CoilSpec::preset(f, SizeClass::Large),
                ]
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center_offset > WORKSPACE_HALF) {
            return Err(Error::Config(format!(
                "coil center offset {} mm must lie outside the workspace",
                self.center_offset
            )));
        }
        if self.num_turns < 1 || !(self.loop_radius > 0.0) || self.axial_extent < 0.0 {
            return Err(Error::Config(
                "coil needs at least one turn and a positive radius".into(),
            ));
        }
        match self.winding {
            Winding::Circular if self.segments_per_loop < 64 => Err(Error::Config(format!(
                "circular loops need at least 64 segments, got {}",
                self.segments_per_loop
            ))),
            Winding::Racetrack { height } if !(height > 0.0) => {
                Err(Error::Config("racetrack height must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Center of the coil's disk frame in canonical coordinates (mm).
    pub fn canonical_center(&self) -> Vec2 {
        Vec2::new(0.0, self.center_offset)
    }

    pub fn label(&self) -> String {
        format!("{:?}-{:?}", self.face, self.size_class).to_lowercase()
    }
}

struct Segment {
    a: Vector3<f64>,
    b: Vector3<f64>,
}

/// Conductor segments of one coil in its canonical frame (metres).
pub struct Conductor {
    face_rotation: f64,
    segments: Vec<Segment>,
}

impl Conductor {
    pub fn new(coil: &CoilSpec) -> Result<Self> {
        coil.validate()?;
        let r = coil.loop_radius * 1e-3;
        let outline: Vec<(f64, f64)> = match coil.winding {
            Winding::Circular => (0..coil.segments_per_loop)
                .map(|i| {
                    let phi = 2.0 * PI * i as f64 / coil.segments_per_loop as f64;
                    (r * phi.cos(), -r * phi.sin())
                })
                .collect(),
            Winding::Racetrack { height } => {
                let h = 0.5 * height * 1e-3;
                vec![(r, h), (r, -h), (-r, -h), (-r, h)]
            }
        };
        let turns = coil.num_turns as usize;
        let mut segments = Vec::with_capacity(turns * outline.len());
        for j in 0..turns {
            let y = (coil.center_offset + (j as f64 + 0.5) / turns as f64 * coil.axial_extent) * 1e-3;
            for i in 0..outline.len() {
                let (x0, z0) = outline[i];
                let (x1, z1) = outline[(i + 1) % outline.len()];
                segments.push(Segment {
                    a: Vector3::new(x0, y, z0),
                    b: Vector3::new(x1, y, z1),
                });
            }
        }
        Ok(Self {
            face_rotation: coil.face.rotation(),
            segments,
        })
    }

    /// Unit-current in-plane field at a workspace point (mm) in world coordinates.
    pub fn field(&self, point: Vec2) -> Result<Vec2> {
        let rot = rotation(self.face_rotation);
        let local = rot.transpose() * point;
        let b = self.canonical_field(local)?;
        Ok(rot * b)
    }

    fn canonical_field(&self, point_mm: Vec2) -> Result<Vec2> {
        let p = Vector3::new(point_mm.x * 1e-3, point_mm.y * 1e-3, 0.0);
        let mut acc = Vector3::zeros();
        for seg in &self.segments {
            let r1 = p - seg.a;
            let r2 = p - seg.b;
            let r0 = seg.b - seg.a;
            let cross = r1.cross(&r2);
            let c2 = cross.norm_squared();
            let len2 = r0.norm_squared();
            // |r1 × r2| = distance to the segment's line × |r0|
            if c2 <= 1e-18 * len2 {
                let t = r1.dot(&r0) / len2;
                if (-1e-12..=1.0 + 1e-12).contains(&t) {
                    return Err(Error::SingularEvaluation {
                        x: point_mm.x,
                        y: point_mm.y,
                    });
                }
                continue;
            }
            let k = r0.dot(&(r1 / r1.norm() - r2 / r2.norm())) / c2;
            acc += cross * k;
        }
        acc *= MU0 / (4.0 * PI);
        let planar = acc.x.hypot(acc.y);
        debug_assert!(
            acc.z.abs() <= 1e-9 * planar + 1e-18,
            "out-of-plane field {} at z = 0",
            acc.z
        );
        Ok(Vec2::new(acc.x, acc.y))
    }
}

/// Unit-current in-plane field (T/A) of `coil` at `point` (mm, z = 0 plane).
pub fn biot_savart_unit_field(coil: &CoilSpec, point: Vec2) -> Result<Vec2> {
    Conductor::new(coil)?.field(point)
}

/// Regular node lattice in the workspace plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridGeometry {
    /// Lattice covering the full workspace square at the given spacing.
    pub fn workspace(spacing: f64) -> Result<Self> {
        let cells = 2.0 * WORKSPACE_HALF / spacing;
        if !(spacing > 0.0) || (cells - cells.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "spacing {spacing} mm does not divide the workspace edge"
            )));
        }
        let n = cells.round() as usize + 1;
        Ok(Self {
            origin: [-WORKSPACE_HALF, -WORKSPACE_HALF],
            spacing,
            nx: n,
            ny: n,
        })
    }

    pub fn node(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(
            self.origin[0] + ix as f64 * self.spacing,
            self.origin[1] + iy as f64 * self.spacing,
        )
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn domain(&self) -> Domain {
        Domain {
            min: Vec2::new(self.origin[0], self.origin[1]),
            max: Vec2::new(
                self.origin[0] + (self.nx - 1) as f64 * self.spacing,
                self.origin[1] + (self.ny - 1) as f64 * self.spacing,
            ),
        }
    }

    pub fn covers_workspace(&self) -> bool {
        let d = self.domain();
        let eps = 1e-9;
        d.min.x <= -WORKSPACE_HALF + eps
            && d.min.y <= -WORKSPACE_HALF + eps
            && d.max.x >= WORKSPACE_HALF - eps
            && d.max.y >= WORKSPACE_HALF - eps
    }
}

/// Unit-current field samples on a regular grid, node arrays row-major in y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSampleGrid {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coil: Option<CoilSpec>,
    pub geometry: GridGeometry,
    pub bx: Vec<f64>,
    pub by: Vec<f64>,
}

impl FieldSampleGrid {
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.geometry.nx + ix
    }

    pub fn node(&self, ix: usize, iy: usize) -> Vec2 {
        self.geometry.node(ix, iy)
    }

    pub fn value(&self, ix: usize, iy: usize) -> Vec2 {
        let i = self.index(ix, iy);
        Vec2::new(self.bx[i], self.by[i])
    }

    /// All nodes paired with their field values.
    pub fn samples(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let g = self.geometry;
        (0..g.ny).flat_map(move |iy| (0..g.nx).map(move |ix| (self.node(ix, iy), self.value(ix, iy))))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != GRID_FORMAT {
            return Err(Error::Format(format!("unknown grid format tag {:?}", self.format)));
        }
        let n = self.geometry.len();
        if self.geometry.nx < 2 || self.geometry.ny < 2 || !(self.geometry.spacing > 0.0) {
            return Err(Error::Format(
                "grid needs at least 2×2 nodes and positive spacing".into(),
            ));
        }
        if self.bx.len() != n || self.by.len() != n {
            return Err(Error::Format(format!(
                "grid declares {n} nodes but carries {} / {} values",
                self.bx.len(),
                self.by.len()
            )));
        }
        if self.bx.iter().chain(&self.by).any(|v| !v.is_finite()) {
            return Err(Error::Format("grid contains non-finite field values".into()));
        }
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let grid: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        grid.validate()?;
        Ok(grid)
    }

    /// RMS of the central-difference divergence over interior nodes divided by
    /// the RMS Frobenius norm of the central-difference gradient.
    pub fn divergence_ratio(&self) -> f64 {
        let g = self.geometry;
        let h = 2.0 * g.spacing * 1e-3;
        let (mut div2, mut grad2, mut count) = (0.0, 0.0, 0usize);
        for iy in 1..g.ny - 1 {
            for ix in 1..g.nx - 1 {
                let dx = (self.value(ix + 1, iy) - self.value(ix - 1, iy)) / h;
                let dy = (self.value(ix, iy + 1) - self.value(ix, iy - 1)) / h;
                let div = dx.x + dy.y;
                div2 += div * div;
                grad2 += dx.norm_squared() + dy.norm_squared();
                count += 1;
            }
        }
        if count == 0 || grad2 == 0.0 {
            return f64::NAN;
        }
        (div2 / count as f64).sqrt() / (grad2 / count as f64).sqrt()
    }
}

/// Samples the unit-current field of `coil` at every node of `geometry`.
pub fn sample_grid(coil: &CoilSpec, geometry: GridGeometry) -> Result<FieldSampleGrid> {
    if !geometry.covers_workspace() {
        return Err(Error::Config("sample grid must cover the full workspace".into()));
    }
    let conductor = Conductor::new(coil)?;
    let values: Vec<Vec2> = (0..geometry.len())
        .into_par_iter()
        .map(|i| conductor.field(geometry.node(i % geometry.nx, i / geometry.nx)))
        .collect::<Result<_>>()?;
    Ok(FieldSampleGrid {
        format: GRID_FORMAT.to_string(),
        coil: Some(*coil),
        geometry,
        bx: values.iter().map(|v| v.x).collect(),
        by: values.iter().map(|v| v.y).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Bilinear,
}

/// One coil's field table plus its precomputed gradient tables (T/m),
/// ordered `[∂Bx/∂x, ∂Bx/∂y, ∂By/∂x, ∂By/∂y]`.
#[derive(Debug, Clone)]
pub struct LookupCoil {
    pub grid: FieldSampleGrid,
    pub gradient: [Vec<f64>; 4],
}

/// Grid lookup-table field model, superposed linearly over coils.
#[derive(Debug, Clone)]
pub struct LookupFieldModel {
    pub coils: Vec<LookupCoil>,
    pub scheme: Interpolation,
    geometry: GridGeometry,
}

impl LookupFieldModel {
    /// Samples every coil and derives gradient tables from the field oracle
    /// by central differences with step `h_mm`.
    pub fn from_coils(coils: &[CoilSpec], geometry: GridGeometry, h_mm: f64) -> Result<Self> {
        let coils = coils
            .iter()
            .map(|coil| {
                let grid = sample_grid(coil, geometry)?;
                let conductor = Conductor::new(coil)?;
                let grads: Vec<Mat2> = (0..geometry.len())
                    .into_par_iter()
                    .map(|i| {
                        let p = geometry.node(i % geometry.nx, i / geometry.nx);
                        let ex = Vec2::new(h_mm, 0.0);
                        let ey = Vec2::new(0.0, h_mm);
                        let scale = 1.0 / (2.0 * h_mm * 1e-3);
                        let dx = (conductor.field(p + ex)? - conductor.field(p - ex)?) * scale;
                        let dy = (conductor.field(p + ey)? - conductor.field(p - ey)?) * scale;
                        Ok(Mat2::new(dx.x, dy.x, dx.y, dy.y))
                    })
                    .collect::<Result<_>>()?;
                Ok(LookupCoil {
                    grid,
                    gradient: split_gradients(&grads),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            coils,
            scheme: Interpolation::Bilinear,
            geometry,
        })
    }

    /// Builds a model from imported grids; gradient tables come from finite
    /// differences of the grid itself (central inside, one-sided at edges).
    pub fn from_grids(grids: Vec<FieldSampleGrid>) -> Result<Self> {
        let geometry = grids
            .first()
            .ok_or_else(|| Error::Config("lookup model needs at least one grid".into()))?
            .geometry;
        let coils = grids
            .into_iter()
            .map(|grid| {
                grid.validate()?;
                if grid.geometry != geometry {
                    return Err(Error::Config("all lookup grids must share one geometry".into()));
                }
                let g = grid.geometry;
                let h = g.spacing * 1e-3;
                let mut grads = Vec::with_capacity(g.len());
                for iy in 0..g.ny {
                    for ix in 0..g.nx {
                        let (x0, x1) = (ix.saturating_sub(1), (ix + 1).min(g.nx - 1));
                        let (y0, y1) = (iy.saturating_sub(1), (iy + 1).min(g.ny - 1));
                        let dx = (grid.value(x1, iy) - grid.value(x0, iy)) / ((x1 - x0) as f64 * h);
                        let dy = (grid.value(ix, y1) - grid.value(ix, y0)) / ((y1 - y0) as f64 * h);
                        grads.push(Mat2::new(dx.x, dy.x, dx.y, dy.y));
                    }
                }
                Ok(LookupCoil {
                    gradient: split_gradients(&grads),
                    grid,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            coils,
            scheme: Interpolation::Bilinear,
            geometry,
        })
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    /// Field at `point` for the given currents (T); fails outside the grid hull.
    pub fn lookup_eval(&self, point: Vec2, currents: &[f64]) -> Result<Vec2> {
        self.field(point, currents)
    }

    fn cell(&self, point: Vec2) -> Result<(usize, usize, f64, f64)> {
        let g = self.geometry;
        let eps = 1e-9;
        let fx = (point.x - g.origin[0]) / g.spacing;
        let fy = (point.y - g.origin[1]) / g.spacing;
        let (mx, my) = ((g.nx - 1) as f64, (g.ny - 1) as f64);
        if !(fx >= -eps && fx <= mx + eps && fy >= -eps && fy <= my + eps) {
            return Err(Error::OutOfBounds { x: point.x, y: point.y });
        }
        let ix = (fx.floor().max(0.0) as usize).min(g.nx - 2);
        let iy = (fy.floor().max(0.0) as usize).min(g.ny - 2);
        Ok((
            ix,
            iy,
            (fx - ix as f64).clamp(0.0, 1.0),
            (fy - iy as f64).clamp(0.0, 1.0),
        ))
    }
}

fn split_gradients(grads: &[Mat2]) -> [Vec<f64>; 4] {
    [
        grads.iter().map(|g| g[(0, 0)]).collect(),
        grads.iter().map(|g| g[(0, 1)]).collect(),
        grads.iter().map(|g| g[(1, 0)]).collect(),
        grads.iter().map(|g| g[(1, 1)]).collect(),
    ]
}

impl FieldModel for LookupFieldModel {
    fn coil_count(&self) -> usize {
        self.coils.len()
    }

    fn domain(&self) -> Domain {
        self.geometry.domain()
    }

    fn unit_responses(&self, point: Vec2, out: &mut [UnitResponse], hessian: bool) -> Result<()> {
        let (ix, iy, tx, ty) = self.cell(point)?;
        let nx = self.geometry.nx;
        let i00 = iy * nx + ix;
        let (i10, i01, i11) = (i00 + 1, i00 + nx, i00 + nx + 1);
        let w = [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty];
        let inv_h = 1.0 / (self.geometry.spacing * 1e-3);
        let interp = |t: &[f64]| w[0] * t[i00] + w[1] * t[i10] + w[2] * t[i01] + w[3] * t[i11];
        let d_dx = |t: &[f64]| ((t[i10] - t[i00]) * (1.0 - ty) + (t[i11] - t[i01]) * ty) * inv_h;
        let d_dy = |t: &[f64]| ((t[i01] - t[i00]) * (1.0 - tx) + (t[i11] - t[i10]) * tx) * inv_h;
        for (coil, r) in self.coils.iter().zip(out.iter_mut()) {
            let g = &coil.gradient;
            r.field = Vec2::new(interp(&coil.grid.bx), interp(&coil.grid.by));
            r.gradient = Mat2::new(interp(&g[0]), interp(&g[1]), interp(&g[2]), interp(&g[3]));
            if hessian {
                r.hessian = [
                    Mat2::new(d_dx(&g[0]), d_dx(&g[1]), d_dx(&g[2]), d_dx(&g[3])),
                    Mat2::new(d_dy(&g[0]), d_dy(&g[1]), d_dy(&g[2]), d_dy(&g[3])),
                ];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_north() -> CoilSpec {
        CoilSpec::preset(Face::North, SizeClass::Small)
    }

    #[test]
    fn on_axis_field_is_axial() {
        for coil in [small_north(), CoilSpec::circular_loop(Face::North, 60.0, 25.0, 64)] {
            let b = biot_savart_unit_field(&coil, Vec2::new(0.0, 10.0)).unwrap();
            assert!(b.x.abs() <= 1e-15 * b.y.abs().max(1e-30), "bx = {}", b.x);
            assert!(b.y > 0.0);
        }
    }

    #[test]
    fn mirror_symmetry_about_axis() {
        let c = Conductor::new(&small_north()).unwrap();
        for &(x, y) in &[(12.0, -30.0), (40.0, 45.0), (3.5, 0.25)] {
            let b = c.field(Vec2::new(x, y)).unwrap();
            let m = c.field(Vec2::new(-x, y)).unwrap();
            assert!((b.x + m.x).abs() <= 1e-12 * b.norm());
            assert!((b.y - m.y).abs() <= 1e-12 * b.norm());
        }
    }

    #[test]
    fn circular_loop_matches_on_axis_closed_form() {
        // B = μ0 R² / (2 (R² + d²)^{3/2}) per ampere-turn, polygon error O(1/n²).
        let (r, offset) = (25e-3, 60e-3);
        let coil = CoilSpec::circular_loop(Face::North, 60.0, 25.0, 2048);
        for &y in &[0.0, -20.0, 30.0] {
            let d = offset - y * 1e-3;
            let expected = MU0 * r * r / (2.0 * (r * r + d * d).powf(1.5));
            let b = biot_savart_unit_field(&coil, Vec2::new(0.0, y)).unwrap();
            assert!(((b.y - expected) / expected).abs() < 1e-5, "{} vs {}", b.y, expected);
        }
        let coarse = CoilSpec::circular_loop(Face::North, 60.0, 25.0, 64);
        let b = biot_savart_unit_field(&coarse, Vec2::zeros()).unwrap();
        let expected = MU0 * r * r / (2.0 * (r * r + offset * offset).powf(1.5));
        assert!(((b.y - expected) / expected).abs() < 2e-3);
    }

    #[test]
    fn point_on_conductor_is_singular() {
        // A circular loop of radius 55 mm at y = 60 crosses the plane at (±55, 60):
        // outside the workspace, so evaluate the conductor directly.
        let coil = CoilSpec::circular_loop(Face::North, 60.0, 55.0, 64);
        let c = Conductor::new(&coil).unwrap();
        assert!(matches!(
            c.field(Vec2::new(55.0, 60.0)),
            Err(Error::SingularEvaluation { .. })
        ));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut c = small_north();
        c.center_offset = 40.0;
        assert!(c.validate().is_err());
        let mut c = CoilSpec::circular_loop(Face::North, 60.0, 25.0, 32);
        assert!(c.validate().is_err());
        c.segments_per_loop = 64;
        c.num_turns = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn workspace_grid_counts() {
        let g = GridGeometry::workspace(2.0).unwrap();
        assert_eq!((g.nx, g.ny, g.len()), (51, 51, 2601));
        assert!(GridGeometry::workspace(3.0).is_err());
    }

    #[test]
    fn grid_sampling_is_deterministic() {
        let g = GridGeometry::workspace(10.0).unwrap();
        let a = sample_grid(&small_north(), g).unwrap();
        let b = sample_grid(&small_north(), g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn east_grid_is_rotated_north_grid() {
        // Rotate-then-evaluate oracle: east(p) = R(−90°) · north(R(+90°) p).
        let g = GridGeometry::workspace(5.0).unwrap();
        let north = Conductor::new(&small_north()).unwrap();
        let east = sample_grid(&CoilSpec::preset(Face::East, SizeClass::Small), g).unwrap();
        let r = rotation(-PI / 2.0);
        for (p, b) in east.samples() {
            let expected = r * north.field(r.transpose() * p).unwrap();
            assert!((b - expected).norm() <= 1e-12 * expected.norm().max(1e-12));
        }
    }

    #[test]
    fn grid_json_round_trip_is_lossless() {
        let g = GridGeometry::workspace(10.0).unwrap();
        let grid = sample_grid(&small_north(), g).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.json");
        grid.write_json(&path).unwrap();
        let back = FieldSampleGrid::read_json(&path).unwrap();
        assert_eq!(grid, back);
    }

    #[test]
    fn lookup_node_identity_and_bounds() {
        let g = GridGeometry::workspace(10.0).unwrap();
        let coils = [small_north(), CoilSpec::preset(Face::West, SizeClass::Large)];
        let model = LookupFieldModel::from_coils(&coils, g, 1e-3).unwrap();
        let currents = [1.5, -0.5];
        let p = g.node(3, 7);
        let expected = coils
            .iter()
            .zip(currents)
            .map(|(c, i)| biot_savart_unit_field(c, p).unwrap() * i)
            .fold(Vec2::zeros(), |a, b| a + b);
        let got = model.lookup_eval(p, &currents).unwrap();
        assert!((got - expected).norm() <= 1e-15 * expected.norm());
        assert_eq!(
            model.lookup_eval(Vec2::new(3.0, -7.0), &[0.0, 0.0]).unwrap(),
            Vec2::zeros()
        );
        assert!(matches!(
            model.lookup_eval(Vec2::new(50.5, 0.0), &currents),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(model.lookup_eval(Vec2::new(50.0, -50.0), &currents).is_ok());
        let one = model.lookup_eval(Vec2::new(3.3, 1.7), &currents).unwrap();
        let two = model.lookup_eval(Vec2::new(3.3, 1.7), &[3.0, -1.0]).unwrap();
        assert!((two - one * 2.0).norm() <= 1e-15 * one.norm());
    }

    #[test]
    fn surrogate_is_nearly_solenoidal_in_plane() {
        let g = GridGeometry::workspace(2.0).unwrap();
        for class in [SizeClass::Small, SizeClass::Large] {
            let grid = sample_grid(&CoilSpec::preset(Face::North, class), g).unwrap();
            let ratio = grid.divergence_ratio();
            assert!(ratio <= 0.01, "{class:?}: divergence ratio {ratio}");
        }
    }
}
