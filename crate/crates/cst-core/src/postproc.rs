//! Edge extraction, boundary closing, support filling, and density-value
//! estimation on reconstructed images.

use rayon::prelude::*;

use crate::error::{CstError, Result};
use crate::grid::{ImageGrid, ScanGeometry, Sinogram};
use crate::physics::{lambda_weight, PhysicsParams};
use crate::raytransforms::{quadrature_step, smoothed_vline_field, VLineParams};

/// Binary edge mask with the dimensions of its source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    pub nx: usize,
    pub ny: usize,
    pub mask: Vec<bool>,
}

impl EdgeMap {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> bool {
        self.mask[iy * self.nx + ix]
    }
}

/// Filled support mask plus diagnostics of the fill.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportMask {
    pub nx: usize,
    pub ny: usize,
    pub mask: Vec<bool>,
    /// Connected components of the mask (8-connectivity).
    pub component_count: usize,
    /// Set when the boundary did not enclose anything: the fill leaked to
    /// the border or no interior pixel survived.
    pub leaked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeConfig {
    /// Hysteresis thresholds as quantiles of the positive gradient
    /// magnitudes.
    pub low_quantile: f64,
    pub high_quantile: f64,
    /// Pre-smoothing Gaussian sigma in pixels.
    pub sigma: f64,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        EdgeConfig { low_quantile: 0.7, high_quantile: 0.9, sigma: 1.0 }
    }
}

impl EdgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.low_quantile
            && self.low_quantile < self.high_quantile
            && self.high_quantile <= 1.0)
        {
            return Err(CstError::InvalidParameter(format!(
                "quantiles ({}, {}) must satisfy 0 <= low < high <= 1",
                self.low_quantile, self.high_quantile
            )));
        }
        if !(self.sigma >= 0.0) {
            return Err(CstError::InvalidParameter("sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Separable Gaussian blur in pixel units with edge replication.
fn gaussian_blur(values: &[f64], nx: usize, ny: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for o in -radius..=radius {
        kernel.push((-0.5 * (o as f64 / sigma).powi(2)).exp());
    }
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; values.len()];
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let ii = clamp(i as isize + k as isize - radius, nx);
                acc += w * values[j * nx + ii];
            }
            tmp[j * nx + i] = acc;
        }
    }
    let mut out = vec![0.0; values.len()];
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let jj = clamp(j as isize + k as isize - radius, ny);
                acc += w * tmp[jj * nx + i];
            }
            out[j * nx + i] = acc;
        }
    }
    out
}

/// Gradient-magnitude edge detection: Gaussian smoothing, Sobel
/// gradients, non-maximum suppression along the quantized gradient
/// direction, and double-threshold hysteresis. Thresholds are quantiles
/// of the positive gradient magnitudes, so they adapt to the image scale.
pub fn detect_edges(img: &ImageGrid, cfg: &EdgeConfig) -> Result<EdgeMap> {
    cfg.validate()?;
    let (nx, ny) = (img.nx(), img.ny());
    let smoothed = gaussian_blur(img.values(), nx, ny, cfg.sigma);

    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let at = |i: isize, j: isize| smoothed[clamp(j, ny) * nx + clamp(i, nx)];
    let mut gx = vec![0.0; nx * ny];
    let mut gy = vec![0.0; nx * ny];
    let mut mag = vec![0.0; nx * ny];
    for j in 0..ny as isize {
        for i in 0..nx as isize {
            let p = j as usize * nx + i as usize;
            gx[p] = (at(i + 1, j - 1) + 2.0 * at(i + 1, j) + at(i + 1, j + 1)
                - at(i - 1, j - 1)
                - 2.0 * at(i - 1, j)
                - at(i - 1, j + 1))
                / 8.0;
            gy[p] = (at(i - 1, j + 1) + 2.0 * at(i, j + 1) + at(i + 1, j + 1)
                - at(i - 1, j - 1)
                - 2.0 * at(i, j - 1)
                - at(i + 1, j - 1))
                / 8.0;
            mag[p] = gx[p].hypot(gy[p]);
        }
    }

    // Non-maximum suppression against bilinearly interpolated magnitudes
    // one pixel along the gradient on either side; sub-pixel comparison
    // keeps the ridge a single pixel wide across all orientations.
    let mag_at = |x: f64, y: f64| -> f64 {
        let i0 = (x.floor() as isize).clamp(0, nx as isize - 2) as usize;
        let j0 = (y.floor() as isize).clamp(0, ny as isize - 2) as usize;
        let fx = (x - i0 as f64).clamp(0.0, 1.0);
        let fy = (y - j0 as f64).clamp(0.0, 1.0);
        let base = j0 * nx + i0;
        mag[base] * (1.0 - fx) * (1.0 - fy)
            + mag[base + 1] * fx * (1.0 - fy)
            + mag[base + nx] * (1.0 - fx) * fy
            + mag[base + nx + 1] * fx * fy
    };
    let mut ridge = vec![false; nx * ny];
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let p = j * nx + i;
            if mag[p] == 0.0 {
                continue;
            }
            let (ux, uy) = (gx[p] / mag[p], gy[p] / mag[p]);
            let n1 = mag_at(i as f64 + ux, j as f64 + uy);
            let n2 = mag_at(i as f64 - ux, j as f64 - uy);
            if mag[p] > n1 && mag[p] >= n2 {
                ridge[p] = true;
            }
        }
    }

    let mut positive: Vec<f64> = mag.iter().cloned().filter(|&m| m > 0.0).collect();
    if positive.is_empty() {
        return Ok(EdgeMap { nx, ny, mask: vec![false; nx * ny] });
    }
    positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| -> f64 {
        let idx = ((positive.len() - 1) as f64 * q).round() as usize;
        positive[idx]
    };
    let low = quantile(cfg.low_quantile);
    let high = quantile(cfg.high_quantile);

    // Hysteresis: grow from strong ridge pixels through weak ones.
    let mut mask = vec![false; nx * ny];
    let mut stack = Vec::new();
    for p in 0..nx * ny {
        if ridge[p] && mag[p] >= high && !mask[p] {
            mask[p] = true;
            stack.push(p);
            while let Some(q) = stack.pop() {
                let (qi, qj) = ((q % nx) as isize, (q / nx) as isize);
                for dj in -1..=1isize {
                    for di in -1..=1isize {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let (ni, nj) = (qi + di, qj + dj);
                        if ni < 0 || nj < 0 || ni >= nx as isize || nj >= ny as isize {
                            continue;
                        }
                        let r = nj as usize * nx + ni as usize;
                        if ridge[r] && !mask[r] && mag[r] >= low {
                            mask[r] = true;
                            stack.push(r);
                        }
                    }
                }
            }
        }
    }
    Ok(EdgeMap { nx, ny, mask })
}

/// Max-norm disk of the given radius. The Euclidean ball cannot bridge
/// gaps in one-pixel curves (its protruding tips make the erosion reopen
/// the waist); the Chebyshev ball seals gaps up to twice the radius, which
/// is the contract of [`close_boundary`].
fn structuring_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dj in -r..=r {
        for di in -r..=r {
            out.push((di, dj));
        }
    }
    out
}

fn dilate(mask: &[bool], nx: usize, ny: usize, offsets: &[(isize, isize)]) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for j in 0..ny as isize {
        for i in 0..nx as isize {
            if !mask[j as usize * nx + i as usize] {
                continue;
            }
            for &(di, dj) in offsets {
                let (ni, nj) = (i + di, j + dj);
                if ni >= 0 && nj >= 0 && ni < nx as isize && nj < ny as isize {
                    out[nj as usize * nx + ni as usize] = true;
                }
            }
        }
    }
    out
}

fn erode(mask: &[bool], nx: usize, ny: usize, offsets: &[(isize, isize)]) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for j in 0..ny as isize {
        'pixel: for i in 0..nx as isize {
            for &(di, dj) in offsets {
                let (ni, nj) = (i + di, j + dj);
                if ni < 0 || nj < 0 || ni >= nx as isize || nj >= ny as isize {
                    // Treat outside as set, so border pixels can survive.
                    continue;
                }
                if !mask[nj as usize * nx + ni as usize] {
                    continue 'pixel;
                }
            }
            out[j as usize * nx + i as usize] = true;
        }
    }
    out
}

/// Close gaps in a boundary map: dilation by `radius` (max-norm disk)
/// bridges breaks up to twice the radius; filling the region the dilated
/// band encloses and eroding it back by the same radius undoes the
/// outward bias. The output is that region's boundary ring united with
/// the input mask, so an already-closed curve comes back with at most a
/// pixel of jitter.
///
/// Plain morphological closing cannot do this job: erosion re-opens a
/// bridged gap in a one-pixel curve for any structuring element, because
/// the bridge waist never contains a full translate of the element.
pub fn close_boundary(edges: &EdgeMap, radius: usize) -> Result<EdgeMap> {
    if radius < 1 {
        return Err(CstError::InvalidParameter("closing radius must be >= 1".into()));
    }
    let (nx, ny) = (edges.nx, edges.ny);
    let offsets = structuring_offsets(radius);
    let dilated = dilate(&edges.mask, nx, ny, &offsets);
    let region = enclosed_region(&dilated, nx, ny);
    let recentred = erode(&region, nx, ny, &offsets);
    let mut mask = boundary_ring(&recentred, nx, ny);
    for (m, &e) in mask.iter_mut().zip(&edges.mask) {
        *m |= e;
    }
    Ok(EdgeMap { nx, ny, mask })
}

/// Mask pixels plus everything they enclose (border flood fill on the
/// complement, 4-connectivity).
fn enclosed_region(mask: &[bool], nx: usize, ny: usize) -> Vec<bool> {
    let mut reached = vec![false; mask.len()];
    let mut stack = Vec::new();
    let seed = |p: usize, reached: &mut Vec<bool>, stack: &mut Vec<usize>| {
        if !mask[p] && !reached[p] {
            reached[p] = true;
            stack.push(p);
        }
    };
    for i in 0..nx {
        seed(i, &mut reached, &mut stack);
        seed((ny - 1) * nx + i, &mut reached, &mut stack);
    }
    for j in 0..ny {
        seed(j * nx, &mut reached, &mut stack);
        seed(j * nx + nx - 1, &mut reached, &mut stack);
    }
    while let Some(p) = stack.pop() {
        let (i, j) = (p % nx, p / nx);
        let mut push = |q: usize| {
            if !mask[q] && !reached[q] {
                reached[q] = true;
                stack.push(q);
            }
        };
        if i > 0 {
            push(p - 1);
        }
        if i + 1 < nx {
            push(p + 1);
        }
        if j > 0 {
            push(p - nx);
        }
        if j + 1 < ny {
            push(p + nx);
        }
    }
    reached.iter().map(|&r| !r).collect()
}

/// Pixels of a region with a 4-neighbor outside it (or on the border).
fn boundary_ring(region: &[bool], nx: usize, ny: usize) -> Vec<bool> {
    let mut out = vec![false; region.len()];
    for j in 0..ny {
        for i in 0..nx {
            let p = j * nx + i;
            if !region[p] {
                continue;
            }
            let edge_of_domain = i == 0 || j == 0 || i == nx - 1 || j == ny - 1;
            let exposed = edge_of_domain
                || !region[p - 1]
                || !region[p + 1]
                || !region[p - nx]
                || !region[p + nx];
            out[p] = exposed;
        }
    }
    out
}

/// Flood fill from every border pixel across non-edge pixels
/// (4-connectivity); whatever is not reached, plus the edge pixels,
/// forms the support. Leaks are detected, not repaired.
pub fn fill_support(edges: &EdgeMap) -> SupportMask {
    let (nx, ny) = (edges.nx, edges.ny);
    let mut reached = vec![false; nx * ny];
    let mut stack = Vec::new();
    let seed = |p: usize, reached: &mut Vec<bool>, stack: &mut Vec<usize>| {
        if !edges.mask[p] && !reached[p] {
            reached[p] = true;
            stack.push(p);
        }
    };
    for i in 0..nx {
        seed(i, &mut reached, &mut stack);
        seed((ny - 1) * nx + i, &mut reached, &mut stack);
    }
    for j in 0..ny {
        seed(j * nx, &mut reached, &mut stack);
        seed(j * nx + nx - 1, &mut reached, &mut stack);
    }
    while let Some(p) = stack.pop() {
        let (i, j) = (p % nx, p / nx);
        let mut push = |q: usize| {
            if !edges.mask[q] && !reached[q] {
                reached[q] = true;
                stack.push(q);
            }
        };
        if i > 0 {
            push(p - 1);
        }
        if i + 1 < nx {
            push(p + 1);
        }
        if j > 0 {
            push(p - nx);
        }
        if j + 1 < ny {
            push(p + nx);
        }
    }
    let mask: Vec<bool> = reached.iter().map(|&r| !r).collect();
    let interior = mask
        .iter()
        .zip(&edges.mask)
        .filter(|&(&m, &e)| m && !e)
        .count();
    let touches_border = (0..nx).any(|i| mask[i] || mask[(ny - 1) * nx + i])
        || (0..ny).any(|j| mask[j * nx] || mask[j * nx + nx - 1]);
    let component_count = count_components(&mask, nx, ny);
    SupportMask { nx, ny, mask, component_count, leaked: interior == 0 || touches_border }
}

/// Connected components under 8-connectivity.
fn count_components(mask: &[bool], nx: usize, ny: usize) -> usize {
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
            let (i, j) = ((p % nx) as isize, (p / nx) as isize);
            for dj in -1..=1isize {
                for di in -1..=1isize {
                    let (ni, nj) = (i + di, j + dj);
                    if ni < 0 || nj < 0 || ni >= nx as isize || nj >= ny as isize {
                        continue;
                    }
                    let q = nj as usize * nx + ni as usize;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
    }
    count
}

/// Fraction of pixels on which two binary masks agree; symmetric, and 1
/// exactly on identical masks.
pub fn p_metric(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "p-metric needs equal-size masks");
    let agree = a.iter().zip(b).filter(|&(x, y)| x == y).count();
    agree as f64 / a.len() as f64
}

/// Support mask as a 0/1 image on the given grid template.
pub fn support_to_image(support: &SupportMask, template: &ImageGrid) -> Result<ImageGrid> {
    if support.nx != template.nx() || support.ny != template.ny() {
        return Err(CstError::DimensionMismatch("support/template size".into()));
    }
    ImageGrid::new(
        *template.spec(),
        support.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )
}

#[derive(Debug, Clone)]
pub struct DensityEstimate {
    pub ne_hat: f64,
    /// (ne, residual) over the scan grid.
    pub curve: Vec<(f64, f64)>,
}

/// Density-value estimation: scan the least-squares residual
/// `|| forward(ne * mask) - b ||^2` over a uniform grid on [0, u_max],
/// then refine by golden-section search inside the bracketing cells.
///
/// The V-line exponent of the unit mask is computed once per angle and
/// scaled by `ne` inside the sweep, so each residual evaluation costs one
/// resampling pass over the rays.
pub fn estimate_density(
    mask_img: &ImageGrid,
    b: &Sinogram,
    phys: &PhysicsParams,
    vp: &VLineParams,
    u_max: f64,
    n_grid: usize,
    refine: bool,
) -> Result<DensityEstimate> {
    if mask_img.values().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(CstError::InvalidParameter("support mask must be binary".into()));
    }
    if mask_img.values().iter().all(|&v| v == 0.0) {
        return Err(CstError::EmptySupport);
    }
    if n_grid < 3 {
        return Err(CstError::InvalidParameter("need at least 3 grid points".into()));
    }
    if !(u_max > 0.0) {
        return Err(CstError::InvalidParameter("u_max must be positive".into()));
    }
    phys.validate()?;
    vp.validate()?;

    let geom = *b.geom();

    // Per-angle exponent fields for the unit-density mask.
    let thetas: Vec<f64> = (0..geom.ntheta).map(|j| geom.theta(j)).collect();
    let fields: Vec<ImageGrid> = thetas
        .par_iter()
        .map(|&theta| smoothed_vline_field(mask_img, theta, vp))
        .collect::<Result<_>>()?;

    let lambda = lambda_weight(phys);
    let residual_for = |ne: f64| -> f64 {
        let per_theta: Vec<f64> = (0..geom.ntheta)
            .into_par_iter()
            .map(|j| {
                let mut acc = 0.0;
                let mut column = vec![0.0; geom.ns];
                project_damped(mask_img, &fields[j], ne, &geom, thetas[j], &mut column);
                for (i, &model) in column.iter().enumerate() {
                    let diff = lambda * ne * model - b.get(i, j);
                    acc += diff * diff;
                }
                acc
            })
            .collect();
        per_theta.iter().sum()
    };

    let mut curve = Vec::with_capacity(n_grid);
    for k in 0..n_grid {
        let ne = u_max * k as f64 / (n_grid - 1) as f64;
        curve.push((ne, residual_for(ne)));
    }
    let best = curve
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .map(|(k, _)| k)
        .unwrap();

    let mut ne_hat = curve[best].0;
    if refine && best > 0 && best + 1 < n_grid {
        // Golden-section search on the bracketing cells, 1e-3 tolerance.
        let golden = 0.618_033_988_749_894_9;
        let (mut lo, mut hi) = (curve[best - 1].0, curve[best + 1].0);
        let mut x1 = hi - golden * (hi - lo);
        let mut x2 = lo + golden * (hi - lo);
        let mut f1 = residual_for(x1);
        let mut f2 = residual_for(x2);
        while hi - lo > 1e-3 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - golden * (hi - lo);
                f1 = residual_for(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + golden * (hi - lo);
                f2 = residual_for(x2);
            }
        }
        ne_hat = 0.5 * (lo + hi);
    }
    Ok(DensityEstimate { ne_hat, curve })
}

/// Project `mask * exp(-ne * field)` along the scan lines of one angle.
fn project_damped(
    mask: &ImageGrid,
    field: &ImageGrid,
    ne: f64,
    geom: &ScanGeometry,
    theta: f64,
    column: &mut [f64],
) {
    let spec = mask.spec();
    let Some(bbox) = mask.support_box() else {
        column.fill(0.0);
        return;
    };
    let mask_s = mask.sampler();
    let field_s = field.sampler();
    let dt = quadrature_step(spec);
    let half_span = spec.corner_radius();
    let (sin_t, cos_t) = theta.sin_cos();
    let perp = (-sin_t, cos_t);
    let n_full = (2.0 * half_span / dt).floor() as usize;
    for (i, slot) in column.iter_mut().enumerate() {
        let s = geom.s(i);
        let origin = (s * cos_t - half_span * perp.0, s * sin_t - half_span * perp.1);
        // Clip to the mask's support box as in the linear projector.
        let (x0, x1, y0, y1) = bbox;
        let mut t_lo = 0.0f64;
        let mut t_hi = 2.0 * half_span;
        let mut miss = false;
        for (o, d, lo, hi) in [
            (origin.0, perp.0, x0, x1),
            (origin.1, perp.1, y0, y1),
        ] {
            if d.abs() < 1e-300 {
                if o < lo || o > hi {
                    miss = true;
                    break;
                }
            } else {
                let (mut ta, mut tb) = ((lo - o) / d, (hi - o) / d);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t_lo = t_lo.max(ta);
                t_hi = t_hi.min(tb);
                if t_lo > t_hi {
                    miss = true;
                    break;
                }
            }
        }
        if miss {
            *slot = 0.0;
            continue;
        }
        let k_lo = (((t_lo / dt) - 1.0).floor().max(0.0)) as usize;
        let k_hi = ((t_hi / dt + 1.0).ceil() as usize).min(n_full);
        let mut acc = 0.0;
        let mut x = origin.0 + (k_lo as f64 + 0.5) * dt * perp.0;
        let mut y = origin.1 + (k_lo as f64 + 0.5) * dt * perp.1;
        for _ in k_lo..k_hi {
            let m = mask_s.sample(x, y);
            if m != 0.0 {
                acc += m * (-ne * field_s.sample(x, y)).exp();
            }
            x += dt * perp.0;
            y += dt * perp.1;
        }
        *slot = acc * dt;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{add_noise, compton_forward};
    use crate::grid::GridSpec;
    use crate::phantom::{builtin_raster, rasterize, BuiltinPhantom, RasterMode};
    use crate::raytransforms::KernelSpec;

    fn disk_raster(n: usize, r: f64) -> ImageGrid {
        use crate::phantom::{PhantomSpec, Shape, Sign, SignedShape};
        let spec = PhantomSpec::constant(
            vec![SignedShape {
                shape: Shape::Disk { center: (0.0, 0.0), radius: r },
                sign: Sign::Add,
            }],
            1.0,
        );
        rasterize(&spec, GridSpec::square(n), RasterMode::default()).unwrap()
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = ImageGrid::from_fn(GridSpec::square(64), |_, _| 3.0);
        let edges = detect_edges(&img, &EdgeConfig::default()).unwrap();
        assert_eq!(edges.count(), 0);
    }

    #[test]
    fn disk_edges_trace_the_circle() {
        let n = 200;
        let img = disk_raster(n, 0.5);
        let edges = detect_edges(&img, &EdgeConfig::default()).unwrap();
        assert!(edges.count() > 100);
        let spec = *img.spec();
        let px = spec.dx();

        // All edge pixels within 2 pixels of the circle.
        for iy in 0..n {
            for ix in 0..n {
                if edges.at(ix, iy) {
                    let (x, y) = spec.center(ix, iy);
                    let d = (x.hypot(y) - 0.5).abs();
                    assert!(d <= 2.0 * px, "edge at distance {d} from circle");
                }
            }
        }

        // And at least 95% of the circle is within 2 pixels of an edge.
        let edge_pts: Vec<(f64, f64)> = (0..n * n)
            .filter(|&p| edges.mask[p])
            .map(|p| spec.center(p % n, p / n))
            .collect();
        let mut covered = 0;
        let samples = 720;
        for k in 0..samples {
            let ang = 2.0 * std::f64::consts::PI * k as f64 / samples as f64;
            let (cx, cy) = (0.5 * ang.cos(), 0.5 * ang.sin());
            if edge_pts
                .iter()
                .any(|&(x, y)| (x - cx).hypot(y - cy) <= 2.0 * px)
            {
                covered += 1;
            }
        }
        assert!(
            covered as f64 / samples as f64 >= 0.95,
            "circle coverage {covered}/{samples}"
        );
    }

    #[test]
    fn closing_is_gentle_on_closed_curves_and_bridges_gaps() {
        let n = 128;
        // A rasterized circle outline of about 2 pixels width.
        let mut mask = vec![false; n * n];
        let spec = GridSpec::square(n);
        for k in 0..2000 {
            let ang = 2.0 * std::f64::consts::PI * k as f64 / 2000.0;
            let (x, y) = (0.5 * ang.cos(), 0.5 * ang.sin());
            let ix = (((x + 1.0) / spec.dx() - 0.5).round() as isize).clamp(0, n as isize - 1);
            let iy = (((y + 1.0) / spec.dy() - 0.5).round() as isize).clamp(0, n as isize - 1);
            mask[iy as usize * n + ix as usize] = true;
        }
        let closed_circle = EdgeMap { nx: n, ny: n, mask: mask.clone() };
        let closed = close_boundary(&closed_circle, 2).unwrap();
        // Closing may round the curve by at most a pixel; it must not
        // erase it or leak the subsequent fill.
        let support = fill_support(&closed);
        assert!(!support.leaked);

        // Now carve three 3-pixel holes and close again.
        let mut gappy = mask;
        let hole_radius = 1.5 * spec.dx();
        for gap_angle in [0.0f64, 2.1, 4.3] {
            let (gx, gy) = (0.5 * gap_angle.cos(), 0.5 * gap_angle.sin());
            for p in 0..n * n {
                if !gappy[p] {
                    continue;
                }
                let (x, y) = spec.center(p % n, p / n);
                if (x - gx).hypot(y - gy) <= hole_radius {
                    gappy[p] = false;
                }
            }
        }
        let gappy_map = EdgeMap { nx: n, ny: n, mask: gappy };
        let leaky = fill_support(&gappy_map);
        assert!(leaky.leaked, "gaps should leak before closing");
        let repaired = close_boundary(&gappy_map, 2).unwrap();
        let filled = fill_support(&repaired);
        assert!(!filled.leaked, "closing radius 2 should seal 3-pixel gaps");
    }

    #[test]
    fn empty_mask_cases() {
        let empty = EdgeMap { nx: 32, ny: 32, mask: vec![false; 1024] };
        let closed = close_boundary(&empty, 2).unwrap();
        assert_eq!(closed.count(), 0);
        let support = fill_support(&empty);
        assert!(support.leaked);
        assert_eq!(support.mask.iter().filter(|&&m| m).count(), 0);
    }

    #[test]
    fn filled_disk_area_within_two_percent() {
        let n = 200;
        let img = disk_raster(n, 0.5);
        let edges = detect_edges(&img, &EdgeConfig::default()).unwrap();
        let closed = close_boundary(&edges, 2).unwrap();
        let support = fill_support(&closed);
        assert!(!support.leaked);
        assert_eq!(support.component_count, 1);
        let count = support.mask.iter().filter(|&&m| m).count() as f64;
        let want = std::f64::consts::PI * 0.25 / 4.0 * (n * n) as f64;
        assert!(
            (count - want).abs() / want < 0.02,
            "support {count} vs analytic {want}"
        );
    }

    #[test]
    fn p_metric_properties() {
        let a = vec![true, false, true, true];
        let b = vec![true, true, false, true];
        assert_eq!(p_metric(&a, &a), 1.0);
        assert_eq!(p_metric(&a, &b), p_metric(&b, &a));
        assert!((p_metric(&a, &b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn density_recovery_with_exact_support() {
        let n = 100;
        let raster = builtin_raster(BuiltinPhantom::Disk, n);
        let mask: Vec<bool> = raster.values().iter().map(|&v| v > 0.5).collect();
        let binary = ImageGrid::new(
            *raster.spec(),
            mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let geom = ScanGeometry::new(
            48,
            36,
            (-std::f64::consts::SQRT_2, std::f64::consts::SQRT_2),
            (0.0, 2.0 * std::f64::consts::PI),
        )
        .unwrap();
        let phys = PhysicsParams::default();
        let vp = VLineParams::from_physics(&phys, KernelSpec::Disk { radius: 0.02 }).unwrap();
        // Data generated at true density 0.8 from the same binary support.
        let truth = ImageGrid::new(
            *binary.spec(),
            binary.values().iter().map(|v| 0.8 * v).collect(),
        )
        .unwrap();
        let b = compton_forward(&truth, &geom, &phys, &vp, None).unwrap();
        let est = estimate_density(&binary, &b, &phys, &vp, 2.0, 21, true).unwrap();
        assert!(
            (est.ne_hat - 0.8).abs() <= 0.1,
            "ne_hat = {} (curve {:?})",
            est.ne_hat,
            est.curve
        );
        // The grid curve has a single local minimum.
        let r: Vec<f64> = est.curve.iter().map(|c| c.1).collect();
        let minima = (1..r.len() - 1)
            .filter(|&k| r[k] < r[k - 1] && r[k] < r[k + 1])
            .count();
        assert!(minima <= 1, "residual curve has {minima} interior minima");

        // Zero data drives the estimate to zero.
        let zero = Sinogram::zeros(geom);
        let est0 = estimate_density(&binary, &zero, &phys, &vp, 2.0, 21, false).unwrap();
        assert_eq!(est0.ne_hat, 0.0);
    }

    #[test]
    fn density_rejects_empty_support() {
        let geom = ScanGeometry::new(16, 8, (-1.4, 1.4), (0.0, 6.28)).unwrap();
        let b = Sinogram::zeros(geom);
        let empty = ImageGrid::zeros(GridSpec::square(16));
        let phys = PhysicsParams::default();
        let vp = VLineParams::from_physics(&phys, KernelSpec::Delta).unwrap();
        assert!(matches!(
            estimate_density(&empty, &b, &phys, &vp, 2.0, 11, false),
            Err(CstError::EmptySupport)
        ));
    }

    #[test]
    fn full_pipeline_on_clean_raster_recovers_disk() {
        // rasterize -> edges -> close -> fill reproduces the disk area.
        let n = 200;
        let img = disk_raster(n, 0.5);
        let edges = detect_edges(&img, &EdgeConfig::default()).unwrap();
        let closed = close_boundary(&edges, 2).unwrap();
        let support = fill_support(&closed);
        let truth: Vec<bool> = img.values().iter().map(|&v| v > 0.5).collect();
        let p = p_metric(&support.mask, &truth);
        assert!(p > 0.98, "pipeline agreement p = {p}");
    }

    #[test]
    fn noisy_pipeline_smoke() {
        // End-to-end on a small non-convex scan with 1% noise; the support
        // must enclose something without leaking.
        let n = 128;
        let f = builtin_raster(BuiltinPhantom::NonConvex, n);
        let geom = ScanGeometry::new(
            180,
            120,
            (-std::f64::consts::SQRT_2, std::f64::consts::SQRT_2),
            (0.0, 2.0 * std::f64::consts::PI),
        )
        .unwrap();
        let phys = PhysicsParams::default();
        let vp = VLineParams::from_physics(&phys, KernelSpec::Disk { radius: 0.02 }).unwrap();
        let clean = compton_forward(&f, &geom, &phys, &vp, None).unwrap();
        let noisy = add_noise(&clean, 0.01, 11).unwrap();
        let rec = crate::recon::fbp_lambda(&noisy, GridSpec::square(n), 2).unwrap();
        // Noisy derivative reconstructions need the tighter hysteresis
        // quantiles; the defaults suit clean rasters.
        let cfg = EdgeConfig { low_quantile: 0.9, high_quantile: 0.98, sigma: 1.0 };
        let edges = detect_edges(&rec, &cfg).unwrap();
        let closed = close_boundary(&edges, 2).unwrap();
        let support = fill_support(&closed);
        assert!(!support.leaked, "support leaked to the border");
        let truth: Vec<bool> = f.values().iter().map(|&v| v > 0.5).collect();
        let p = p_metric(&support.mask, &truth);
        assert!(p > 0.9, "p = {p}");
    }
}
