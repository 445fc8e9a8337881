//! Non-linear Compton forward model and the additive noise model.
//!
//! The scattered intensity along a scan line is the line integral of the
//! density multiplied by exp(-V), where V is the smoothed V-line field of
//! the density itself at the scan angle. The exponent field is computed
//! once per angle and reused across all offsets.

use rayon::prelude::*;

use crate::error::{CstError, Result};
use crate::grid::{ImageGrid, ScanGeometry, Sinogram};
use crate::physics::{lambda_weight, PhysicsParams};
use crate::raytransforms::{
    convolve_kernel, quadrature_step, radon_forward, radon_project_angle, smoothed_vline_field,
    vline_field_where, VLineParams, WeightField,
};
use crate::rng::Xoshiro256pp;

fn check_consistent(phys: &PhysicsParams, vp: &VLineParams) -> Result<()> {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()));
    if close(phys.atten_in, vp.a) && close(phys.atten_out, vp.b) && close(phys.psi, vp.psi) {
        Ok(())
    } else {
        Err(CstError::InvalidParameter(
            "V-line params disagree with physics (a, b, psi must match)".into(),
        ))
    }
}

/// Non-linear forward data: for each angle, integrate
/// `lambda * w * f * exp(-V_theta)` along the scan lines, with `V_theta`
/// the smoothed V-line field of `f` at that angle.
pub fn compton_forward(
    f: &ImageGrid,
    geom: &ScanGeometry,
    phys: &PhysicsParams,
    vp: &VLineParams,
    weight: Option<WeightField>,
) -> Result<Sinogram> {
    phys.validate()?;
    vp.validate()?;
    check_consistent(phys, vp)?;
    if f.values().iter().any(|&v| v < 0.0) {
        return Err(CstError::InvalidParameter(
            "forward model requires a non-negative density".into(),
        ));
    }
    let lambda = lambda_weight(phys);

    // Linear limit: zero leg weights leave the exponent identically zero.
    if vp.a == 0.0 && vp.b == 0.0 {
        let mut sino = radon_forward(f, geom, weight);
        for v in sino.values_mut() {
            *v *= lambda;
        }
        return Ok(sino);
    }

    // The damped image f * exp(-V) vanishes wherever f does, so the
    // exponent field is only evaluated on the kernel-dilated support of f.
    let spec = *f.spec();
    let cell = spec.dx().min(spec.dy());
    let dilate = (vp.kernel.support_radius() / cell).ceil() as isize + 1;
    let keep_rows = dilated_row_intervals(f, dilate);

    let mut values = vec![0.0; geom.len()];
    values
        .par_chunks_mut(geom.ns)
        .enumerate()
        .try_for_each(|(j, column)| -> Result<()> {
            let theta = geom.theta(j);
            let raw = vline_field_where(f, theta, vp, |ix, iy| {
                keep_rows[iy].is_some_and(|(lo, hi)| ix >= lo && ix <= hi)
            });
            let v_field = convolve_kernel(&raw, &vp.kernel)?;
            let mut damped = vec![0.0; spec.len()];
            for ((d, fv), vv) in damped.iter_mut().zip(f.values()).zip(v_field.values()) {
                if *fv != 0.0 {
                    *d = fv * (-vv).exp();
                }
            }
            let damped = ImageGrid::new(spec, damped)?;
            radon_project_angle(&damped, geom, theta, weight, column);
            for slot in column.iter_mut() {
                *slot *= lambda;
            }
            Ok(())
        })?;
    Sinogram::new(*geom, values)
}

/// Per-row index interval covering all nonzero pixels within `dilate` rows,
/// widened by `dilate` columns: a cheap superset of the dilated support.
fn dilated_row_intervals(f: &ImageGrid, dilate: isize) -> Vec<Option<(usize, usize)>> {
    let (nx, ny) = (f.nx() as isize, f.ny() as isize);
    let mut raw: Vec<Option<(isize, isize)>> = Vec::with_capacity(ny as usize);
    for iy in 0..ny as usize {
        let row = &f.values()[iy * nx as usize..(iy + 1) * nx as usize];
        raw.push(row.iter().position(|&v| v != 0.0).map(|first| {
            let last = nx as usize - 1 - row.iter().rev().position(|&v| v != 0.0).unwrap();
            (first as isize, last as isize)
        }));
    }
    (0..ny)
        .map(|iy| {
            let mut merged: Option<(isize, isize)> = None;
            for jy in (iy - dilate).max(0)..=(iy + dilate).min(ny - 1) {
                if let Some((lo, hi)) = raw[jy as usize] {
                    merged = Some(match merged {
                        None => (lo, hi),
                        Some((a, b)) => (a.min(lo), b.max(hi)),
                    });
                }
            }
            merged.map(|(lo, hi)| {
                (
                    (lo - dilate).max(0) as usize,
                    ((hi + dilate).min(nx - 1)) as usize,
                )
            })
        })
        .collect()
}

/// Additive Gaussian noise scaled to a relative level: adds
/// `gamma * ||b|| / sqrt(k)` times i.i.d. standard normals, `k` the sample
/// count. Deterministic for a fixed seed; entries are drawn in storage
/// order from a single stream.
pub fn add_noise(b: &Sinogram, gamma: f64, seed: u64) -> Result<Sinogram> {
    if gamma < 0.0 {
        return Err(CstError::InvalidParameter("gamma must be non-negative".into()));
    }
    if gamma == 0.0 {
        return Ok(b.clone());
    }
    let k = b.values().len();
    let scale = gamma * b.norm_l2() / (k as f64).sqrt();
    let mut rng = Xoshiro256pp::seed_from_u64(seed);
    let values = b
        .values()
        .iter()
        .map(|&v| v + scale * rng.next_standard_normal())
        .collect();
    Sinogram::new(*b.geom(), values)
}

/// Where lines tangent to the mask's support sit, per angle: the maximum
/// of `x . Theta` over support pixel centers.
pub fn tangent_offset(mask: &ImageGrid, theta: f64) -> Option<f64> {
    let (sin_t, cos_t) = theta.sin_cos();
    let mut best: Option<f64> = None;
    for iy in 0..mask.ny() {
        for ix in 0..mask.nx() {
            if mask.get(ix, iy) != 0.0 {
                let (x, y) = mask.spec().center(ix, iy);
                let s = x * cos_t + y * sin_t;
                best = Some(best.map_or(s, |b: f64| b.max(s)));
            }
        }
    }
    best
}

/// Near-tangent probe lines: offsets `s_tangent(theta) - depth` for each
/// probe angle, depths up to two pixels on the side where the support lies.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    /// (s, theta) pairs.
    pub lines: Vec<(f64, f64)>,
}

pub fn near_tangent_probes(
    mask: &ImageGrid,
    geom: &ScanGeometry,
    n_angles: usize,
) -> Result<ProbeSet> {
    if n_angles == 0 {
        return Err(CstError::EmptyCurve);
    }
    let pixel = mask.spec().dx().min(mask.spec().dy());
    let mut lines = Vec::new();
    for k in 0..n_angles {
        let theta = geom.thetamin
            + (geom.thetamax - geom.thetamin) * k as f64 / n_angles as f64;
        if let Some(s_t) = tangent_offset(mask, theta) {
            for depth in [1.0, 2.0] {
                lines.push((s_t - depth * pixel, theta));
            }
        }
    }
    if lines.is_empty() {
        return Err(CstError::EmptySupport);
    }
    Ok(ProbeSet { lines })
}

/// Evaluates the non-linear forward data of `ne * mask` at the probe lines
/// for each density value in `ne_grid`. Returns one row per density:
/// `(ne, probe values)`.
pub fn density_response_curve(
    mask: &ImageGrid,
    phys: &PhysicsParams,
    vp: &VLineParams,
    ne_grid: &[f64],
    probes: &ProbeSet,
) -> Result<Vec<(f64, Vec<f64>)>> {
    phys.validate()?;
    vp.validate()?;
    check_consistent(phys, vp)?;
    if probes.lines.is_empty() {
        return Err(CstError::EmptyCurve);
    }
    if mask.values().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(CstError::InvalidParameter("mask must be binary".into()));
    }
    if mask.support_box().is_none() {
        return Err(CstError::EmptySupport);
    }
    let lambda = lambda_weight(phys);
    let spec = *mask.spec();
    let dt = quadrature_step(&spec);
    let half_span = spec.corner_radius();

    // V-line field of the unit-density support is computed once per probe
    // angle; scaling the density scales the exponent linearly.
    let mut angles: Vec<f64> = probes.lines.iter().map(|&(_, t)| t).collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    angles.dedup();
    let fields: Vec<(f64, ImageGrid)> = angles
        .par_iter()
        .map(|&theta| Ok((theta, smoothed_vline_field(mask, theta, vp)?)))
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(ne_grid.len());
    for &ne in ne_grid {
        let mut row = Vec::with_capacity(probes.lines.len());
        for &(s, theta) in &probes.lines {
            let v_field = &fields
                .iter()
                .find(|(t, _)| *t == theta)
                .expect("probe angle has a field")
                .1;
            let (sin_t, cos_t) = theta.sin_cos();
            let perp = (-sin_t, cos_t);
            let origin = (s * cos_t - half_span * perp.0, s * sin_t - half_span * perp.1);
            // Midpoint quadrature of ne * mask * exp(-ne * V) along the line.
            let n_full = (2.0 * half_span / dt).floor() as usize;
            let mut acc = 0.0;
            for k in 0..n_full {
                let t = (k as f64 + 0.5) * dt;
                let x = (origin.0 + t * perp.0, origin.1 + t * perp.1);
                let m = mask.sample_bilinear(x.0, x.1);
                if m != 0.0 {
                    let v = v_field.sample_bilinear(x.0, x.1);
                    acc += dt * m * (-ne * v).exp();
                }
            }
            row.push(lambda * ne * acc);
        }
        out.push((ne, row));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{builtin_raster, BuiltinPhantom};
    use crate::raytransforms::KernelSpec;

    fn binarize(img: &ImageGrid) -> ImageGrid {
        ImageGrid::new(
            *img.spec(),
            img.values().iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap()
    }

    fn default_setup(n: usize) -> (ImageGrid, ScanGeometry, PhysicsParams, VLineParams) {
        let f = builtin_raster(BuiltinPhantom::Disk, n);
        let geom = ScanGeometry::new(
            64,
            48,
            (-std::f64::consts::SQRT_2, std::f64::consts::SQRT_2),
            (0.0, 2.0 * std::f64::consts::PI),
        )
        .unwrap();
        let phys = PhysicsParams::default();
        let vp = VLineParams::from_physics(&phys, KernelSpec::Disk { radius: 0.02 }).unwrap();
        (f, geom, phys, vp)
    }

    #[test]
    fn linear_limit_matches_radon() {
        let (f, geom, mut phys, _) = default_setup(100);
        phys.atten_in = 0.0;
        phys.atten_out = 0.0;
        let vp = VLineParams::from_physics(&phys, KernelSpec::Delta).unwrap();
        let nl = compton_forward(&f, &geom, &phys, &vp, None).unwrap();
        let lin = radon_forward(&f, &geom, None);
        let num: f64 = nl
            .values()
            .iter()
            .zip(lin.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den = lin.norm_l2();
        assert!(num / den <= 1e-10, "relative error {}", num / den);
    }

    #[test]
    fn attenuation_only_damps() {
        let (f, geom, phys, vp) = default_setup(100);
        let nl = compton_forward(&f, &geom, &phys, &vp, None).unwrap();
        let lin = radon_forward(&f, &geom, None);
        let lambda = lambda_weight(&phys);
        for (a, b) in nl.values().iter().zip(lin.values()) {
            assert!(*a >= 0.0);
            assert!(*a <= lambda * b + 1e-12);
        }
    }

    #[test]
    fn stronger_attenuation_decreases_data() {
        let (f, geom, mut phys, _) = default_setup(100);
        let vp1 = VLineParams::from_physics(&phys, KernelSpec::Delta).unwrap();
        let low = compton_forward(&f, &geom, &phys, &vp1, None).unwrap();
        phys.atten_in = 2.0;
        phys.atten_out = 2.0;
        let vp2 = VLineParams::from_physics(&phys, KernelSpec::Delta).unwrap();
        let high = compton_forward(&f, &geom, &phys, &vp2, None).unwrap();
        let mut checked = 0usize;
        for (lo, hi) in low.values().iter().zip(high.values()) {
            if *lo > 1e-6 {
                assert!(hi < lo, "{hi} !< {lo}");
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn negative_density_rejected() {
        let (mut f, geom, phys, vp) = default_setup(64);
        f.values_mut()[0] = -1.0;
        assert!(compton_forward(&f, &geom, &phys, &vp, None).is_err());
    }

    #[test]
    fn inconsistent_vline_params_rejected() {
        let (f, geom, phys, _) = default_setup(64);
        let vp = VLineParams::new(2.0, 1.0, phys.psi, 4.0, KernelSpec::Delta).unwrap();
        assert!(matches!(
            compton_forward(&f, &geom, &phys, &vp, None),
            Err(CstError::InvalidParameter(_))
        ));
    }

    #[test]
    fn rotational_symmetry_of_disk_data() {
        let (f, geom, phys, vp) = default_setup(200);
        let sino = compton_forward(&f, &geom, &phys, &vp, None).unwrap();
        // Rows of constant s stay constant across theta up to raster
        // anisotropy; the tight 0.5% RMS bound at the standard scan is
        // asserted in the acceptance suite, this coarse scan gets a margin.
        for i in (0..geom.ns).step_by(3) {
            if geom.s(i).abs() > 0.6 {
                continue;
            }
            let row: Vec<f64> = (0..geom.ntheta).map(|j| sino.get(i, j)).collect();
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            if mean < 1e-6 {
                continue;
            }
            let rms = (row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / row.len() as f64)
                .sqrt()
                / mean;
            assert!(rms < 0.01, "s index {i}: rms deviation {rms}");
            for v in row {
                assert!(
                    (v - mean).abs() / mean < 0.025,
                    "s index {i}: {v} vs mean {mean}"
                );
            }
        }
    }

    #[test]
    fn zero_gamma_noise_is_identity() {
        let (f, geom, phys, vp) = default_setup(64);
        let sino = compton_forward(&f, &geom, &phys, &vp, None).unwrap();
        let noisy = add_noise(&sino, 0.0, 99).unwrap();
        assert_eq!(sino.values(), noisy.values());
    }

    #[test]
    fn noise_level_concentrates_near_gamma() {
        let geom = ScanGeometry::standard();
        // Any fixed non-trivial data vector works for the scaling check.
        let b = Sinogram::new(
            geom,
            (0..geom.len()).map(|i| ((i % 97) as f64) * 0.1 + 1.0).collect(),
        )
        .unwrap();
        let gamma = 0.01;
        let mut within = 0usize;
        let n_seeds = 100;
        let mut sum_ratio = 0.0;
        for seed in 0..n_seeds {
            let noisy = add_noise(&b, gamma, seed).unwrap();
            let diff: f64 = noisy
                .values()
                .iter()
                .zip(b.values())
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
                .sqrt();
            let ratio = diff / b.norm_l2();
            sum_ratio += ratio;
            if ratio >= 0.9 * gamma && ratio <= 1.1 * gamma {
                within += 1;
            }
        }
        assert!(within >= 99, "only {within}/100 seeds inside [0.9, 1.1] gamma");
        let mean = sum_ratio / n_seeds as f64;
        assert!((mean - gamma).abs() / gamma < 0.02, "mean ratio {mean}");
    }

    #[test]
    fn equal_seeds_identical_different_seeds_decorrelated() {
        let geom = ScanGeometry::new(60, 40, (-1.4, 1.4), (0.0, 6.28)).unwrap();
        let b = Sinogram::new(geom, vec![1.0; geom.len()]).unwrap();
        let n1 = add_noise(&b, 0.05, 7).unwrap();
        let n2 = add_noise(&b, 0.05, 7).unwrap();
        assert_eq!(n1.values(), n2.values());
        let n3 = add_noise(&b, 0.05, 8).unwrap();
        let d1: Vec<f64> = n1.values().iter().zip(b.values()).map(|(a, c)| a - c).collect();
        let d3: Vec<f64> = n3.values().iter().zip(b.values()).map(|(a, c)| a - c).collect();
        let dot: f64 = d1.iter().zip(&d3).map(|(a, c)| a * c).sum();
        let corr = dot
            / (d1.iter().map(|v| v * v).sum::<f64>().sqrt()
                * d3.iter().map(|v| v * v).sum::<f64>().sqrt());
        assert!(corr.abs() < 0.05, "correlation {corr}");
    }

    #[test]
    fn probe_monotonicity_and_saturation() {
        let mask = binarize(&builtin_raster(BuiltinPhantom::Disk, 128));
        let geom = ScanGeometry::new(
            64,
            32,
            (-std::f64::consts::SQRT_2, std::f64::consts::SQRT_2),
            (0.0, 2.0 * std::f64::consts::PI),
        )
        .unwrap();
        let phys = PhysicsParams::default();
        let vp = VLineParams::from_physics(&phys, KernelSpec::Disk { radius: 0.02 }).unwrap();
        let probes = near_tangent_probes(&mask, &geom, 6).unwrap();
        let ne_grid: Vec<f64> = (0..21).map(|i| i as f64 * 0.1).collect();
        let rows = density_response_curve(&mask, &phys, &vp, &ne_grid, &probes).unwrap();

        // ne = 0 gives identically zero probe values.
        assert!(rows[0].1.iter().all(|&v| v == 0.0));
        // Near-tangent values increase strictly in ne.
        for p in 0..probes.lines.len() {
            for w in rows.windows(2) {
                assert!(
                    w[1].1[p] > w[0].1[p],
                    "probe {p}: {} !> {} at ne = {}",
                    w[1].1[p],
                    w[0].1[p],
                    w[1].0
                );
            }
        }

        // A chord through the center saturates: the value eventually falls.
        let deep = ProbeSet { lines: vec![(0.0, 0.0)] };
        let rows = density_response_curve(&mask, &phys, &vp, &ne_grid, &deep).unwrap();
        let vals: Vec<f64> = rows.iter().map(|r| r.1[0]).collect();
        let max_at = vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(max_at < vals.len() - 1, "no saturation on the deep chord");
        assert!(vals[vals.len() - 1] < vals[max_at]);
    }
}
