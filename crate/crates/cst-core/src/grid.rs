//! Physical-coordinate rectangular grids, sampling, and scan geometry.
//!
//! Images are stored row-major, x-fastest, with sample points at cell
//! centers `xmin + (i + 1/2) dx`. All value containers are immutable after
//! construction from the caller's point of view; operations are pure.

use serde::{Deserialize, Serialize};

use crate::error::{CstError, Result};

/// Dimensions and bounds of an image grid, without the values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, bounds: (f64, f64, f64, f64)) -> Result<Self> {
        let (xmin, xmax, ymin, ymax) = bounds;
        if nx < 2 || ny < 2 {
            return Err(CstError::InvalidParameter(format!(
                "grid must be at least 2x2, got {nx}x{ny}"
            )));
        }
        if !(xmax > xmin && ymax > ymin) || !xmin.is_finite() || !xmax.is_finite()
            || !ymin.is_finite() || !ymax.is_finite()
        {
            return Err(CstError::InvalidParameter(format!(
                "bad bounds [{xmin},{xmax}]x[{ymin},{ymax}]"
            )));
        }
        Ok(GridSpec { nx, ny, xmin, xmax, ymin, ymax })
    }

    /// Square grid on [-1,1]^2, the standard reconstruction domain.
    pub fn square(n: usize) -> Self {
        GridSpec::new(n, n, (-1.0, 1.0, -1.0, 1.0)).expect("n >= 2")
    }

    pub fn dx(&self) -> f64 {
        (self.xmax - self.xmin) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.ymax - self.ymin) / self.ny as f64
    }

    /// Center of cell (ix, iy).
    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.xmin + (ix as f64 + 0.5) * self.dx(),
            self.ymin + (iy as f64 + 0.5) * self.dy(),
        )
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }

    /// Radius of the smallest origin-centered disk containing the domain.
    pub fn corner_radius(&self) -> f64 {
        let xs = [self.xmin.abs(), self.xmax.abs()];
        let ys = [self.ymin.abs(), self.ymax.abs()];
        let x = xs[0].max(xs[1]);
        let y = ys[0].max(ys[1]);
        x.hypot(y)
    }
}

/// 2-D scalar field on a rectangular domain with physical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

/// Bilinear interpolation footprint: four (flat index, weight) pairs.
pub type BilinearStencil = [(usize, f64); 4];

impl ImageGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(CstError::DimensionMismatch(format!(
                "expected {} values for {}x{} grid, got {}",
                spec.len(),
                spec.nx,
                spec.ny,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CstError::NonFinite("image values must be finite".into()));
        }
        Ok(ImageGrid { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        ImageGrid { spec, values: vec![0.0; spec.len()] }
    }

    /// Build from a function of physical coordinates, evaluated at centers.
    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(spec.len());
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                let (x, y) = spec.center(ix, iy);
                values.push(f(x, y));
            }
        }
        ImageGrid { spec, values }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn nx(&self) -> usize {
        self.spec.nx
    }

    pub fn ny(&self) -> usize {
        self.spec.ny
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
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.spec.nx + ix
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.spec.nx + ix]
    }

    /// Value at the cell whose center is nearest to (x, y); 0 outside.
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        if !self.spec.contains(x, y) {
            return 0.0;
        }
        let ix = (((x - self.spec.xmin) / self.spec.dx()).floor() as isize)
            .clamp(0, self.spec.nx as isize - 1) as usize;
        let iy = (((y - self.spec.ymin) / self.spec.dy()).floor() as isize)
            .clamp(0, self.spec.ny as isize - 1) as usize;
        self.get(ix, iy)
    }

    /// Bilinear interpolation weights at (x, y), or `None` outside the
    /// domain. Inside the outer half-cell margin the interpolation
    /// coordinate is clamped to the center lattice (constant extension).
    #[inline]
    pub fn bilinear_stencil(&self, x: f64, y: f64) -> Option<BilinearStencil> {
        let s = &self.spec;
        if !s.contains(x, y) {
            return None;
        }
        let u = ((x - s.xmin) / s.dx() - 0.5).clamp(0.0, (s.nx - 1) as f64);
        let v = ((y - s.ymin) / s.dy() - 0.5).clamp(0.0, (s.ny - 1) as f64);
        let i0 = (u.floor() as usize).min(s.nx - 2);
        let j0 = (v.floor() as usize).min(s.ny - 2);
        let fx = u - i0 as f64;
        let fy = v - j0 as f64;
        let base = j0 * s.nx + i0;
        Some([
            (base, (1.0 - fx) * (1.0 - fy)),
            (base + 1, fx * (1.0 - fy)),
            (base + s.nx, (1.0 - fx) * fy),
            (base + s.nx + 1, fx * fy),
        ])
    }

    /// Bilinear interpolation of the field at (x, y); 0 outside the domain.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        self.sampler().sample(x, y)
    }

    /// Sampler with precomputed reciprocals for quadrature inner loops.
    pub fn sampler(&self) -> Sampler<'_> {
        Sampler {
            values: &self.values,
            nx: self.spec.nx,
            ny: self.spec.ny,
            xmin: self.spec.xmin,
            xmax: self.spec.xmax,
            ymin: self.spec.ymin,
            ymax: self.spec.ymax,
            inv_dx: 1.0 / self.spec.dx(),
            inv_dy: 1.0 / self.spec.dy(),
        }
    }

    /// Index bounding box of nonzero values, inflated by one cell, as
    /// physical coordinates. `None` for an all-zero image. Rays clipped to
    /// this box integrate the field exactly: bilinear interpolation is
    /// identically zero outside it.
    pub fn support_box(&self) -> Option<(f64, f64, f64, f64)> {
        let s = &self.spec;
        let (mut i0, mut i1, mut j0, mut j1) = (usize::MAX, 0usize, usize::MAX, 0usize);
        for iy in 0..s.ny {
            let row = &self.values[iy * s.nx..(iy + 1) * s.nx];
            if let Some(first) = row.iter().position(|&v| v != 0.0) {
                let last = s.nx - 1 - row.iter().rev().position(|&v| v != 0.0).unwrap();
                i0 = i0.min(first);
                i1 = i1.max(last);
                j0 = j0.min(iy);
                j1 = j1.max(iy);
            }
        }
        if i0 == usize::MAX {
            return None;
        }
        // One extra cell so that every bilinear footprint touching a nonzero
        // cell lies inside the box; clamp to the domain.
        let x0 = (s.xmin + (i0 as f64 - 1.0) * s.dx()).max(s.xmin);
        let x1 = (s.xmin + (i1 as f64 + 2.0) * s.dx()).min(s.xmax);
        let y0 = (s.ymin + (j0 as f64 - 1.0) * s.dy()).max(s.ymin);
        let y1 = (s.ymin + (j1 as f64 + 2.0) * s.dy()).min(s.ymax);
        Some((x0, x1, y0, y1))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Borrowed view of an image with precomputed interpolation constants.
#[derive(Debug, Clone, Copy)]
pub struct Sampler<'a> {
    values: &'a [f64],
    nx: usize,
    ny: usize,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    inv_dx: f64,
    inv_dy: f64,
}

impl Sampler<'_> {
    /// Same contract as [`ImageGrid::sample_bilinear`].
    #[inline(always)]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        if x < self.xmin || x > self.xmax || y < self.ymin || y > self.ymax {
            return 0.0;
        }
        let u = ((x - self.xmin) * self.inv_dx - 0.5).clamp(0.0, (self.nx - 1) as f64);
        let v = ((y - self.ymin) * self.inv_dy - 0.5).clamp(0.0, (self.ny - 1) as f64);
        let i0 = (u as usize).min(self.nx - 2);
        let j0 = (v as usize).min(self.ny - 2);
        let fx = u - i0 as f64;
        let fy = v - j0 as f64;
        let base = j0 * self.nx + i0;
        let top = self.values[base] * (1.0 - fx) + self.values[base + 1] * fx;
        let bot = self.values[base + self.nx] * (1.0 - fx) + self.values[base + self.nx + 1] * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Interpolation footprint at (x, y); same geometry as
    /// [`ImageGrid::bilinear_stencil`].
    #[inline(always)]
    pub fn stencil(&self, x: f64, y: f64) -> Option<([usize; 4], [f64; 4])> {
        if x < self.xmin || x > self.xmax || y < self.ymin || y > self.ymax {
            return None;
        }
        let u = ((x - self.xmin) * self.inv_dx - 0.5).clamp(0.0, (self.nx - 1) as f64);
        let v = ((y - self.ymin) * self.inv_dy - 0.5).clamp(0.0, (self.ny - 1) as f64);
        let i0 = (u as usize).min(self.nx - 2);
        let j0 = (v as usize).min(self.ny - 2);
        let fx = u - i0 as f64;
        let fy = v - j0 as f64;
        let base = j0 * self.nx + i0;
        Some((
            [base, base + 1, base + self.nx, base + self.nx + 1],
            [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
        ))
    }
}

/// Sampling ranges and counts for the (s, theta) scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub ns: usize,
    pub ntheta: usize,
    pub smin: f64,
    pub smax: f64,
    pub thetamin: f64,
    pub thetamax: f64,
}

impl ScanGeometry {
    pub fn new(
        ns: usize,
        ntheta: usize,
        s_range: (f64, f64),
        theta_range: (f64, f64),
    ) -> Result<Self> {
        if ns < 2 || ntheta < 2 {
            return Err(CstError::InvalidParameter(format!(
                "scan needs ns, ntheta >= 2, got {ns}, {ntheta}"
            )));
        }
        if !(s_range.1 > s_range.0 && theta_range.1 > theta_range.0) {
            return Err(CstError::InvalidParameter("empty scan range".into()));
        }
        Ok(ScanGeometry {
            ns,
            ntheta,
            smin: s_range.0,
            smax: s_range.1,
            thetamin: theta_range.0,
            thetamax: theta_range.1,
        })
    }

    /// 282 offsets on [-sqrt(2), sqrt(2)], 360 angles on [0, 2 pi).
    pub fn standard() -> Self {
        let r = std::f64::consts::SQRT_2;
        ScanGeometry::new(282, 360, (-r, r), (0.0, 2.0 * std::f64::consts::PI))
            .expect("valid standard geometry")
    }

    pub fn ds(&self) -> f64 {
        (self.smax - self.smin) / (self.ns - 1) as f64
    }

    pub fn dtheta(&self) -> f64 {
        (self.thetamax - self.thetamin) / self.ntheta as f64
    }

    /// Offset of sample i; samples are uniform including both endpoints.
    pub fn s(&self, i: usize) -> f64 {
        self.smin + i as f64 * self.ds()
    }

    /// Angle of sample j; the upper endpoint is excluded (periodic axis).
    pub fn theta(&self, j: usize) -> f64 {
        self.thetamin + j as f64 * self.dtheta()
    }

    pub fn len(&self) -> usize {
        self.ns * self.ntheta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scalar field over (s, theta) samples, row-major, s-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    geom: ScanGeometry,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn new(geom: ScanGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geom.len() {
            return Err(CstError::DimensionMismatch(format!(
                "expected {} values for {}x{} sinogram, got {}",
                geom.len(),
                geom.ns,
                geom.ntheta,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CstError::NonFinite("sinogram values must be finite".into()));
        }
        Ok(Sinogram { geom, values })
    }

    pub fn zeros(geom: ScanGeometry) -> Self {
        Sinogram { geom, values: vec![0.0; geom.len()] }
    }

    pub fn geom(&self) -> &ScanGeometry {
        &self.geom
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn idx(&self, i_s: usize, j_theta: usize) -> usize {
        j_theta * self.geom.ns + i_s
    }

    #[inline]
    pub fn get(&self, i_s: usize, j_theta: usize) -> f64 {
        self.values[self.idx(i_s, j_theta)]
    }

    /// One angle's data: the `ns` samples at column j.
    pub fn column(&self, j_theta: usize) -> &[f64] {
        &self.values[j_theta * self.geom.ns..(j_theta + 1) * self.geom.ns]
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_reproduces_constants() {
        let g = ImageGrid::from_fn(GridSpec::square(16), |_, _| 1.0);
        for &(x, y) in &[(0.0, 0.0), (0.3, -0.7), (0.99, 0.99), (-1.0, 1.0)] {
            assert!((g.sample_bilinear(x, y) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bilinear_outside_domain_is_zero() {
        let g = ImageGrid::from_fn(GridSpec::square(8), |_, _| 3.0);
        assert_eq!(g.sample_bilinear(10.0, 10.0), 0.0);
        assert_eq!(g.sample_bilinear(0.0, -1.001), 0.0);
    }

    #[test]
    fn bilinear_two_by_two_hand_value() {
        // Values {0,1,0,1} on [0,1]^2: columns alternate, so the center
        // interpolates to 1/2.
        let spec = GridSpec::new(2, 2, (0.0, 1.0, 0.0, 1.0)).unwrap();
        let g = ImageGrid::new(spec, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((g.sample_bilinear(0.5, 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bilinear_exact_on_affine_interior() {
        let g = ImageGrid::from_fn(GridSpec::square(32), |x, y| 2.0 * x - 3.0 * y + 1.0);
        // Interior of the center lattice hull, away from the clamped margin.
        for &(x, y) in &[(0.123, -0.456), (0.0, 0.0), (0.87, 0.91), (-0.9, -0.2)] {
            let want = 2.0 * x - 3.0 * y + 1.0;
            assert!((g.sample_bilinear(x, y) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn support_box_covers_nonzeros() {
        let mut g = ImageGrid::zeros(GridSpec::square(20));
        assert!(g.support_box().is_none());
        let i = g.idx(10, 5);
        g.values_mut()[i] = 2.0;
        let (x0, x1, y0, y1) = g.support_box().unwrap();
        let (cx, cy) = g.spec().center(10, 5);
        assert!(x0 < cx && cx < x1 && y0 < cy && cy < y1);
        // Bilinear interpolation vanishes outside the box.
        assert_eq!(g.sample_bilinear(x0 - 0.05, cy), 0.0);
    }

    #[test]
    fn scan_geometry_standard_matches_defaults() {
        let geom = ScanGeometry::standard();
        assert_eq!(geom.ns, 282);
        assert_eq!(geom.ntheta, 360);
        assert!((geom.smax - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!((geom.theta(90) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn bilinear_is_a_convex_combination(
            values in proptest::collection::vec(-100.0f64..100.0, 64),
            x in -1.2f64..1.2,
            y in -1.2f64..1.2,
        ) {
            let g = ImageGrid::new(GridSpec::square(8), values).unwrap();
            let v = g.sample_bilinear(x, y);
            if g.spec().contains(x, y) {
                let lo = g.values().iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = g.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                proptest::prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            } else {
                proptest::prop_assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn invalid_constructions_rejected() {
        assert!(GridSpec::new(1, 8, (-1.0, 1.0, -1.0, 1.0)).is_err());
        assert!(GridSpec::new(8, 8, (1.0, -1.0, -1.0, 1.0)).is_err());
        assert!(ImageGrid::new(GridSpec::square(4), vec![0.0; 15]).is_err());
        assert!(ImageGrid::new(GridSpec::square(2), vec![f64::NAN; 4]).is_err());
        assert!(ScanGeometry::new(1, 10, (0.0, 1.0), (0.0, 1.0)).is_err());
    }
}
