//! Declarative phantoms: an amplitude field times an indicator built from
//! an ordered list of signed shape primitives.
//!
//! Later shapes override earlier ones where they overlap, so
//! `[add A, add B, subtract C]` is the union of A and B with C carved out.
//! The smooth blob primitive contributes a C-infinity radial profile
//! instead of a hard indicator, for spectral test functions.

use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{CstError, Result};
use crate::grid::{GridSpec, ImageGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Disk { center: (f64, f64), radius: f64 },
    /// Axis lengths before rotation; `angle` rotates counterclockwise.
    Ellipse { center: (f64, f64), semi_axes: (f64, f64), angle: f64 },
    Rect { center: (f64, f64), half_extents: (f64, f64), angle: f64 },
    Polygon { vertices: Vec<(f64, f64)> },
    /// exp(1 - 1/(1 - (r/radius)^2)) inside `radius`, identically 0 outside.
    Blob { center: (f64, f64), radius: f64 },
    /// Gaussian profile exp(-r^2 / 2 sigma^2) truncated at `radius`; with
    /// radius at 8 sigma the cut sits below double-precision resolution of
    /// the spectrum.
    GaussianBlob { center: (f64, f64), sigma: f64, radius: f64 },
}

impl Shape {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Disk { radius, .. } => *radius > 0.0,
            Shape::Ellipse { semi_axes, .. } => semi_axes.0 > 0.0 && semi_axes.1 > 0.0,
            Shape::Rect { half_extents, .. } => half_extents.0 > 0.0 && half_extents.1 > 0.0,
            Shape::Polygon { vertices } => vertices.len() >= 3,
            Shape::Blob { radius, .. } => *radius > 0.0,
            Shape::GaussianBlob { sigma, radius, .. } => *sigma > 0.0 && *radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(CstError::InvalidParameter(format!("degenerate shape {self:?}")))
        }
    }

    /// Membership weight at (x, y): 0/1 for hard shapes, smooth for blobs.
    fn coverage(&self, x: f64, y: f64) -> f64 {
        match self {
            Shape::Disk { center, radius } => {
                let (dx, dy) = (x - center.0, y - center.1);
                if dx * dx + dy * dy < radius * radius { 1.0 } else { 0.0 }
            }
            Shape::Ellipse { center, semi_axes, angle } => {
                let (dx, dy) = rotate_back(x - center.0, y - center.1, *angle);
                let q = (dx / semi_axes.0).powi(2) + (dy / semi_axes.1).powi(2);
                if q < 1.0 { 1.0 } else { 0.0 }
            }
            Shape::Rect { center, half_extents, angle } => {
                let (dx, dy) = rotate_back(x - center.0, y - center.1, *angle);
                if dx.abs() < half_extents.0 && dy.abs() < half_extents.1 { 1.0 } else { 0.0 }
            }
            Shape::Polygon { vertices } => {
                if point_in_polygon(x, y, vertices) { 1.0 } else { 0.0 }
            }
            Shape::Blob { center, radius } => {
                let (dx, dy) = (x - center.0, y - center.1);
                let q = (dx * dx + dy * dy) / (radius * radius);
                if q < 1.0 { (1.0 - 1.0 / (1.0 - q)).exp() } else { 0.0 }
            }
            Shape::GaussianBlob { center, sigma, radius } => {
                let (dx, dy) = (x - center.0, y - center.1);
                let r2 = dx * dx + dy * dy;
                if r2 < radius * radius {
                    (-0.5 * r2 / (sigma * sigma)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Outer radius bound |center| + reach, for the unit-ball check.
    fn outer_radius(&self) -> f64 {
        match self {
            Shape::Disk { center, radius } => center.0.hypot(center.1) + radius,
            Shape::Ellipse { center, semi_axes, .. } => {
                center.0.hypot(center.1) + semi_axes.0.max(semi_axes.1)
            }
            Shape::Rect { center, half_extents, .. } => {
                center.0.hypot(center.1) + half_extents.0.hypot(half_extents.1)
            }
            Shape::Polygon { vertices } => vertices
                .iter()
                .map(|&(x, y)| x.hypot(y))
                .fold(0.0, f64::max),
            Shape::Blob { center, radius } => center.0.hypot(center.1) + radius,
            Shape::GaussianBlob { center, radius, .. } => center.0.hypot(center.1) + radius,
        }
    }
}

fn rotate_back(x: f64, y: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * x + s * y, -s * x + c * y)
}

fn point_in_polygon(x: f64, y: f64, vs: &[(f64, f64)]) -> bool {
    // Even-odd rule ray cast.
    let mut inside = false;
    let n = vs.len();
    for i in 0..n {
        let (x1, y1) = vs[i];
        let (x2, y2) = vs[(i + 1) % n];
        if (y1 > y) != (y2 > y) {
            let x_cross = x1 + (y - y1) / (y2 - y1) * (x2 - x1);
            if x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Add,
    Subtract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedShape {
    pub shape: Shape,
    pub sign: Sign,
}

/// Smooth amplitude u on the support; constant or polynomial in (x, y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Amplitude {
    Constant { value: f64 },
    /// Terms (cx, px, py): sum of cx * x^px * y^py.
    Polynomial { terms: Vec<(f64, u32, u32)> },
}

impl Amplitude {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Amplitude::Constant { value } => *value,
            Amplitude::Polynomial { terms } => terms
                .iter()
                .map(|&(c, px, py)| c * x.powi(px as i32) * y.powi(py as i32))
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shapes: Vec<SignedShape>,
    pub amplitude: Amplitude,
    /// When set, rasterization rejects non-positive amplitudes on the support.
    #[serde(default)]
    pub positive: bool,
}

impl PhantomSpec {
    pub fn new(shapes: Vec<SignedShape>, amplitude: Amplitude) -> Self {
        PhantomSpec { shapes, amplitude, positive: false }
    }

    pub fn constant(shapes: Vec<SignedShape>, value: f64) -> Self {
        PhantomSpec::new(shapes, Amplitude::Constant { value })
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.shapes {
            s.shape.validate()?;
        }
        Ok(())
    }

    /// Worst-case support radius over added shapes.
    pub fn outer_radius(&self) -> f64 {
        self.shapes
            .iter()
            .filter(|s| s.sign == Sign::Add)
            .map(|s| s.shape.outer_radius())
            .fold(0.0, f64::max)
    }

    /// Combined membership weight of the ordered shape list at (x, y).
    pub fn coverage(&self, x: f64, y: f64) -> f64 {
        let mut cov = 0.0;
        for s in &self.shapes {
            let c = s.shape.coverage(x, y);
            let target = match s.sign {
                Sign::Add => 1.0,
                Sign::Subtract => 0.0,
            };
            // Later shapes override earlier ones where they cover the point.
            cov = c * target + (1.0 - c) * cov;
        }
        cov
    }

    /// Pointwise field value u(x) * coverage(x).
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let cov = self.coverage(x, y);
        if cov == 0.0 {
            0.0
        } else {
            cov * self.amplitude.eval(x, y)
        }
    }
}

/// Anti-aliasing mode for rasterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterMode {
    /// Evaluate at the cell center only (exact-indicator oracle mode).
    Exact,
    /// Average a k x k subsample lattice per cell.
    Subsample(usize),
}

impl Default for RasterMode {
    fn default() -> Self {
        RasterMode::Subsample(4)
    }
}

/// Rasterize the phantom at cell centers, optionally anti-aliased.
pub fn rasterize(spec: &PhantomSpec, grid: GridSpec, mode: RasterMode) -> Result<ImageGrid> {
    spec.validate()?;
    let (dx, dy) = (grid.dx(), grid.dy());
    let mut values = Vec::with_capacity(grid.len());
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let (cx, cy) = grid.center(ix, iy);
            let v = match mode {
                RasterMode::Exact => spec.eval(cx, cy),
                RasterMode::Subsample(k) => {
                    let k = k.max(1);
                    let mut acc = 0.0;
                    for sy in 0..k {
                        for sx in 0..k {
                            let x = cx + ((sx as f64 + 0.5) / k as f64 - 0.5) * dx;
                            let y = cy + ((sy as f64 + 0.5) / k as f64 - 0.5) * dy;
                            acc += spec.eval(x, y);
                        }
                    }
                    acc / (k * k) as f64
                }
            };
            if spec.positive && spec.coverage(cx, cy) > 0.0 && spec.amplitude.eval(cx, cy) <= 0.0
            {
                return Err(CstError::InvalidParameter(
                    "amplitude not positive on support".into(),
                ));
            }
            values.push(v);
        }
    }
    ImageGrid::new(grid, values)
}

/// Named phantoms used throughout the tests and the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinPhantom {
    /// Simply connected, with convex and concave boundary arcs.
    NonConvex,
    /// Outer ellipse minus inner ellipse: two boundary components.
    EllipticAnnulus,
    /// Indicator of [-1/2, 1/2]^2.
    Square,
    /// Indicator of the unit disk.
    Disk,
    /// Narrow smooth bump, off-center, for spectral oracles.
    Gaussian,
}

impl BuiltinPhantom {
    pub const ALL: [BuiltinPhantom; 5] = [
        BuiltinPhantom::NonConvex,
        BuiltinPhantom::EllipticAnnulus,
        BuiltinPhantom::Square,
        BuiltinPhantom::Disk,
        BuiltinPhantom::Gaussian,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinPhantom::NonConvex => "non_convex",
            BuiltinPhantom::EllipticAnnulus => "elliptic_annulus",
            BuiltinPhantom::Square => "square",
            BuiltinPhantom::Disk => "disk",
            BuiltinPhantom::Gaussian => "gaussian",
        }
    }

    pub fn spec(&self) -> PhantomSpec {
        use Sign::*;
        let add = |shape| SignedShape { shape, sign: Add };
        let sub = |shape| SignedShape { shape, sign: Subtract };
        match self {
            // Two overlapping disks with a bite taken out of the lower-right
            // boundary: one simply connected region whose boundary has both
            // convex arcs and a concave notch.
            BuiltinPhantom::NonConvex => PhantomSpec::constant(
                vec![
                    add(Shape::Disk { center: (-0.12, 0.0), radius: 0.55 }),
                    add(Shape::Disk { center: (0.28, 0.22), radius: 0.38 }),
                    sub(Shape::Disk { center: (0.32, -0.38), radius: 0.26 }),
                ],
                1.0,
            ),
            BuiltinPhantom::EllipticAnnulus => PhantomSpec::constant(
                vec![
                    add(Shape::Ellipse {
                        center: (0.0, 0.0),
                        semi_axes: (0.75, 0.55),
                        angle: 0.0,
                    }),
                    sub(Shape::Ellipse {
                        center: (0.0, 0.0),
                        semi_axes: (0.45, 0.25),
                        angle: 0.0,
                    }),
                ],
                1.0,
            ),
            BuiltinPhantom::Square => PhantomSpec::constant(
                vec![add(Shape::Rect {
                    center: (0.0, 0.0),
                    half_extents: (0.5, 0.5),
                    angle: 0.0,
                })],
                1.0,
            ),
            BuiltinPhantom::Disk => PhantomSpec::constant(
                vec![add(Shape::Disk { center: (0.0, 0.0), radius: 1.0 })],
                1.0,
            ),
            // Off-center so odd angular Fourier components do not vanish by
            // symmetry alone; narrow enough to carry mid-band energy.
            BuiltinPhantom::Gaussian => PhantomSpec::constant(
                vec![add(Shape::GaussianBlob {
                    center: (0.12, -0.06),
                    sigma: 0.06,
                    radius: 0.48,
                })],
                1.0,
            ),
        }
    }
}

impl FromStr for BuiltinPhantom {
    type Err = CstError;

    fn from_str(s: &str) -> Result<Self> {
        BuiltinPhantom::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| CstError::InvalidParameter(format!("unknown phantom '{s}'")))
    }
}

/// Shorthand: rasterize a builtin on the square domain at n x n, anti-aliased.
pub fn builtin_raster(which: BuiltinPhantom, n: usize) -> ImageGrid {
    rasterize(&which.spec(), GridSpec::square(n), RasterMode::default())
        .expect("builtin phantoms are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Connected components of a boolean mask under 4-connectivity.
    fn component_count(mask: &[bool], nx: usize, ny: usize) -> usize {
        let mut seen = vec![false; mask.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..mask.len() {
            if !mask[start] || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(p) = stack.pop() {
                let (ix, iy) = (p % nx, p / nx);
                let mut push = |q: usize| {
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                };
                if ix > 0 {
                    push(p - 1);
                }
                if ix + 1 < nx {
                    push(p + 1);
                }
                if iy > 0 {
                    push(p - nx);
                }
                if iy + 1 < ny {
                    push(p + nx);
                }
            }
        }
        count
    }

    fn raster_mask(img: &ImageGrid) -> Vec<bool> {
        img.values().iter().map(|&v| v > 0.5).collect()
    }

    #[test]
    fn disk_raster_area_matches_analytic() {
        let spec = PhantomSpec::constant(
            vec![SignedShape {
                shape: Shape::Disk { center: (0.0, 0.0), radius: 0.5 },
                sign: Sign::Add,
            }],
            1.0,
        );
        let img = rasterize(&spec, GridSpec::square(200), RasterMode::Exact).unwrap();
        let frac = img.values().iter().filter(|&&v| v > 0.0).count() as f64
            / img.values().len() as f64;
        let want = std::f64::consts::PI * 0.25 / 4.0;
        assert!(
            (frac - want).abs() / want < 0.01,
            "covered fraction {frac} vs analytic {want}"
        );
        // Anti-aliased coverage mass matches the area even tighter.
        let aa = rasterize(&spec, GridSpec::square(200), RasterMode::default()).unwrap();
        let mass = aa.values().iter().sum::<f64>() / aa.values().len() as f64;
        assert!((mass - want).abs() / want < 0.001, "mass {mass} vs {want}");
    }

    #[test]
    fn empty_spec_rasterizes_to_zero() {
        let spec = PhantomSpec::constant(vec![], 1.0);
        let img = rasterize(&spec, GridSpec::square(32), RasterMode::default()).unwrap();
        assert!(img.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_shape_rejected() {
        let spec = PhantomSpec::constant(
            vec![SignedShape {
                shape: Shape::Disk { center: (0.0, 0.0), radius: -0.5 },
                sign: Sign::Add,
            }],
            1.0,
        );
        assert!(rasterize(&spec, GridSpec::square(8), RasterMode::Exact).is_err());
    }

    #[test]
    fn annulus_membership() {
        let spec = PhantomSpec::constant(
            vec![
                SignedShape {
                    shape: Shape::Ellipse {
                        center: (0.0, 0.0),
                        semi_axes: (0.7, 0.5),
                        angle: 0.0,
                    },
                    sign: Sign::Add,
                },
                SignedShape {
                    shape: Shape::Ellipse {
                        center: (0.0, 0.0),
                        semi_axes: (0.45, 0.25),
                        angle: 0.0,
                    },
                    sign: Sign::Subtract,
                },
            ],
            1.0,
        );
        assert_eq!(spec.eval(0.0, 0.0), 0.0);
        assert_eq!(spec.eval(0.55, 0.0), 1.0);
    }

    #[test]
    fn rasterize_monotone_under_inclusion() {
        let disk = |r| {
            PhantomSpec::constant(
                vec![SignedShape {
                    shape: Shape::Disk { center: (0.1, -0.05), radius: r },
                    sign: Sign::Add,
                }],
                1.0,
            )
        };
        let small = rasterize(&disk(0.3), GridSpec::square(64), RasterMode::default()).unwrap();
        let big = rasterize(&disk(0.6), GridSpec::square(64), RasterMode::default()).unwrap();
        for (a, b) in small.values().iter().zip(big.values()) {
            assert!(a <= b);
        }
    }

    #[test]
    fn square_indicator_values() {
        let img = builtin_raster(BuiltinPhantom::Square, 200);
        assert_eq!(img.value_at(0.0, 0.0), 1.0);
        assert_eq!(img.value_at(0.6, 0.0), 0.0);
    }

    #[test]
    fn builtin_supports_inside_unit_disk() {
        // Exact rasters sample the geometric support; anti-aliasing can
        // smear partial coverage into cells whose centers sit just outside.
        for p in BuiltinPhantom::ALL {
            let img =
                rasterize(&p.spec(), GridSpec::square(200), RasterMode::Exact).unwrap();
            let mut max_r: f64 = 0.0;
            for iy in 0..img.ny() {
                for ix in 0..img.nx() {
                    if img.get(ix, iy) != 0.0 {
                        let (x, y) = img.spec().center(ix, iy);
                        max_r = max_r.max(x.hypot(y));
                    }
                }
            }
            assert!(max_r < 1.0, "{}: support radius {max_r}", p.name());
        }
    }

    #[test]
    fn annulus_complement_has_two_components() {
        let img = builtin_raster(BuiltinPhantom::EllipticAnnulus, 200);
        let mask = raster_mask(&img);
        let complement: Vec<bool> = mask.iter().map(|&m| !m).collect();
        assert_eq!(component_count(&complement, img.nx(), img.ny()), 2);
        assert_eq!(component_count(&mask, img.nx(), img.ny()), 1);
    }

    #[test]
    fn non_convex_is_simply_connected() {
        let img = builtin_raster(BuiltinPhantom::NonConvex, 200);
        let mask = raster_mask(&img);
        let complement: Vec<bool> = mask.iter().map(|&m| !m).collect();
        // One support component and no hole: complement is a single piece.
        assert_eq!(component_count(&mask, img.nx(), img.ny()), 1);
        assert_eq!(component_count(&complement, img.nx(), img.ny()), 1);
    }

    #[test]
    fn non_convex_has_concavity_witness() {
        let img = builtin_raster(BuiltinPhantom::NonConvex, 200);
        // A convex set contains the midpoint of any two member points.
        let pts: Vec<(usize, usize)> = (0..img.ny())
            .flat_map(|iy| (0..img.nx()).map(move |ix| (ix, iy)))
            .filter(|&(ix, iy)| img.get(ix, iy) > 0.5)
            .collect();
        let mut found = false;
        'outer: for step in [37usize, 61, 101] {
            for (k, &(ax, ay)) in pts.iter().enumerate().step_by(step) {
                for &(bx, by) in pts.iter().skip(k + 1).step_by(step) {
                    let (mx, my) = ((ax + bx) / 2, (ay + by) / 2);
                    if img.get(mx, my) < 0.5 {
                        found = true;
                        break 'outer;
                    }
                }
            }
        }
        assert!(found, "expected a midpoint outside the support");
    }

    #[test]
    fn positive_flag_rejects_vanishing_amplitude() {
        let mut spec = PhantomSpec::new(
            vec![SignedShape {
                shape: Shape::Disk { center: (0.0, 0.0), radius: 0.5 },
                sign: Sign::Add,
            }],
            // Vanishes along x = 0, inside the support.
            Amplitude::Polynomial { terms: vec![(1.0, 1, 0)] },
        );
        spec.positive = true;
        assert!(rasterize(&spec, GridSpec::square(32), RasterMode::Exact).is_err());
        spec.positive = false;
        assert!(rasterize(&spec, GridSpec::square(32), RasterMode::Exact).is_ok());
    }

    #[test]
    fn unknown_builtin_rejected() {
        assert!("blobfish".parse::<BuiltinPhantom>().is_err());
        assert_eq!(
            "non_convex".parse::<BuiltinPhantom>().unwrap(),
            BuiltinPhantom::NonConvex
        );
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = BuiltinPhantom::NonConvex.spec();
        let text = serde_json::to_string(&spec).unwrap();
        let back: PhantomSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }
}
