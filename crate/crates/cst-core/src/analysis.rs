//! Fourier-side diagnostics: Sobolev-order estimation from spectral
//! decay, angular Fourier components of the V-line transform, local
//! singularity-order maps of sinograms, and edge-strength ratios.
//!
//! Sobolev orders read off a discrete spectrum are only trustworthy in a
//! band away from both DC and the raster scale; all fits here use
//! |xi| in [Nyquist/8, Nyquist/2] and report a fit residual alongside the
//! order. The flag thresholds and window sizes are calibration constants
//! of this toolkit, not universal values.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{CstError, Result};
use crate::grid::{GridSpec, ImageGrid, ScanGeometry, Sinogram};
use crate::raytransforms::{vline_field, KernelSpec, VLineParams};
use crate::recon::derivative_s;

pub type C64 = Complex<f64>;

/// Fit band for spectral decay estimates, as fractions of the Nyquist
/// radius.
pub const FIT_BAND: (f64, f64) = (0.125, 0.5);

/// Dead band around the H^1 flag threshold of the singularity map.
pub const ORDER_DEAD_BAND: f64 = 0.15;

// ---------------------------------------------------------------------------
// FFT helpers

/// Unnormalized forward 2-D DFT in row-major layout.
pub fn fft_2d(values: &[C64], nx: usize, ny: usize, inverse: bool) -> Vec<C64> {
    assert_eq!(values.len(), nx * ny);
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(nx)
    } else {
        planner.plan_fft_forward(nx)
    };
    let col_fft = if inverse {
        planner.plan_fft_inverse(ny)
    } else {
        planner.plan_fft_forward(ny)
    };
    let mut out = values.to_vec();
    out.par_chunks_mut(nx).for_each(|row| row_fft.process(row));
    // Transpose, transform columns as rows, transpose back.
    let mut t = vec![C64::new(0.0, 0.0); nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            t[i * ny + j] = out[j * nx + i];
        }
    }
    t.par_chunks_mut(ny).for_each(|col| col_fft.process(col));
    for j in 0..ny {
        for i in 0..nx {
            out[j * nx + i] = t[i * ny + j];
        }
    }
    if inverse {
        let scale = 1.0 / (nx * ny) as f64;
        for v in &mut out {
            *v *= scale;
        }
    }
    out
}

/// Signed frequency of DFT index k out of n samples with spacing d,
/// in radians per unit length.
#[inline]
fn fft_freq(k: usize, n: usize, d: f64) -> f64 {
    let ks = if k <= n / 2 { k as isize } else { k as isize - n as isize };
    2.0 * std::f64::consts::PI * ks as f64 / (n as f64 * d)
}

fn require_square_cells(spec: &GridSpec) -> Result<()> {
    if (spec.dx() - spec.dy()).abs() > 1e-12 * spec.dx() {
        return Err(CstError::InvalidParameter(
            "spectral diagnostics require square cells".into(),
        ));
    }
    Ok(())
}

/// Continuum-scaled spectrum F = h^2 DFT(f); approximates the Fourier
/// transform of the field at the lattice frequencies.
pub fn image_spectrum(img: &ImageGrid) -> Vec<C64> {
    let h2 = img.spec().dx() * img.spec().dy();
    let complex: Vec<C64> = img.values().iter().map(|&v| C64::new(v * h2, 0.0)).collect();
    fft_2d(&complex, img.nx(), img.ny(), false)
}

/// Power spectrum after a separable Hann taper. Fields that do not decay
/// toward the domain boundary otherwise alias a wrap-around jump into
/// every band; the taper is smooth, so interior singularity orders are
/// unchanged.
fn tapered_power(img: &ImageGrid) -> Vec<f64> {
    let (nx, ny) = (img.nx(), img.ny());
    let h2 = img.spec().dx() * img.spec().dy();
    let hann =
        |m: usize, n: usize| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * m as f64 / n as f64).cos());
    let mut tapered = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            tapered.push(C64::new(img.values()[j * nx + i] * hann(i, nx) * hann(j, ny) * h2, 0.0));
        }
    }
    fft_2d(&tapered, nx, ny, false).iter().map(|c| c.norm_sqr()).collect()
}

/// Fitted decay order of a field through the tapered spectrum.
pub fn fitted_order_tapered(img: &ImageGrid) -> Result<f64> {
    require_square_cells(img.spec())?;
    let power = tapered_power(img);
    if power.iter().sum::<f64>() == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(fitted_order_from_power(img.spec(), &power).0)
}

/// Per-mode |xi| for the grid's DFT lattice.
fn mode_radii(spec: &GridSpec) -> Vec<f64> {
    let (nx, ny) = (spec.nx, spec.ny);
    let (dx, dy) = (spec.dx(), spec.dy());
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let fy = fft_freq(j, ny, dy);
        for i in 0..nx {
            let fx = fft_freq(i, nx, dx);
            out.push(fx.hypot(fy));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Sobolev partial norms and fitted order

#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Dyadic frequency radii, ascending, up to Nyquist.
    pub cutoffs: Vec<f64>,
    /// Weighted energy integral over |xi| <= cutoff, per cutoff.
    pub partial_norms: Vec<f64>,
    /// Order at which the log-log growth of shell energy crosses zero;
    /// +infinity for spectra decaying faster than every order probed.
    pub fitted_order: f64,
    /// RMS residual of the log-log line fit at the fitted order.
    pub fit_residual: f64,
}

/// Least-squares slope and RMS residual of y against x.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (xv, yv) in x.iter().zip(y) {
        sxx += (xv - mx) * (xv - mx);
        sxy += (xv - mx) * (yv - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss = 0.0;
    for (xv, yv) in x.iter().zip(y) {
        let e = yv - (slope * xv + intercept);
        ss += e * e;
    }
    (slope, (ss / n).sqrt())
}

/// Shell decomposition of a spectrum for the order fit: quarter-octave
/// radii inside the fit band, with per-shell mode lists.
struct ShellSet {
    /// ln of the geometric shell centers.
    ln_centers: Vec<f64>,
    /// (sum of |F|^2, mode (1 + |xi|^2) values) per shell member.
    members: Vec<Vec<(f64, f64)>>,
}

fn build_shells(spec: &GridSpec, power: &[f64]) -> ShellSet {
    let nyquist = std::f64::consts::PI / spec.dx();
    let lo = FIT_BAND.0 * nyquist;
    let hi = FIT_BAND.1 * nyquist;
    let steps_per_octave = 4;
    let n_shells = 2 * steps_per_octave; // two octaves in the band
    let ratio = (hi / lo).powf(1.0 / n_shells as f64);
    let edges: Vec<f64> = (0..=n_shells).map(|m| lo * ratio.powi(m as i32)).collect();

    let radii = mode_radii(spec);
    let mut members: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_shells];
    for (idx, (&r, &p)) in radii.iter().zip(power).enumerate() {
        let _ = idx;
        if r < lo || r >= hi || p == 0.0 {
            continue;
        }
        let m = ((r / lo).ln() / ratio.ln()).floor() as usize;
        let m = m.min(n_shells - 1);
        members[m].push((p, 1.0 + r * r));
    }
    let ln_centers = (0..n_shells)
        .map(|m| (edges[m] * edges[m + 1]).sqrt().ln())
        .collect();
    ShellSet { ln_centers, members }
}

impl ShellSet {
    /// Log-log slope of shell energy at Sobolev weight alpha.
    fn slope_at(&self, alpha: f64) -> Option<(f64, f64)> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (lc, shell) in self.ln_centers.iter().zip(&self.members) {
            if shell.is_empty() {
                continue;
            }
            let e: f64 = shell.iter().map(|&(p, w)| p * w.powf(alpha)).sum();
            if e > 0.0 {
                xs.push(*lc);
                ys.push(e.ln());
            }
        }
        if xs.len() < 3 {
            return None;
        }
        Some(line_fit(&xs, &ys))
    }
}

/// Order estimate from a spectrum: bisect the weight exponent until the
/// shell-energy slope over the fit band crosses zero.
fn fitted_order_from_power(spec: &GridSpec, power: &[f64]) -> (f64, f64) {
    let shells = build_shells(spec, power);
    let (mut lo, mut hi) = (-3.0f64, 9.0f64);
    let slope_of = |a: f64| shells.slope_at(a);
    let Some((slo, _)) = slope_of(lo) else {
        return (f64::INFINITY, 0.0);
    };
    let Some((shi, _)) = slope_of(hi) else {
        return (f64::INFINITY, 0.0);
    };
    if shi < 0.0 {
        // Decays faster than every probed order: effectively smooth.
        return (f64::INFINITY, 0.0);
    }
    if slo > 0.0 {
        return (f64::NEG_INFINITY, 0.0);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        match slope_of(mid) {
            Some((s, _)) if s < 0.0 => lo = mid,
            Some(_) => hi = mid,
            None => break,
        }
    }
    let order = 0.5 * (lo + hi);
    let resid = slope_of(order).map_or(f64::INFINITY, |(_, r)| r);
    (order, resid)
}

/// Discrete Sobolev diagnostics of an image: weighted partial spectral
/// sums at dyadic cutoffs plus a fitted decay order.
///
/// The alpha = 0 partial norm at the largest cutoff equals the quadrature
/// L2 energy of the image (discrete Parseval identity).
pub fn sobolev_partial_norms(img: &ImageGrid, alpha: f64) -> Result<SpectralReport> {
    require_square_cells(img.spec())?;
    if img.values().iter().any(|v| !v.is_finite()) {
        return Err(CstError::NonFinite("image for spectral analysis".into()));
    }
    let spec = *img.spec();
    let spectrum = image_spectrum(img);
    let power: Vec<f64> = spectrum.iter().map(|c| c.norm_sqr()).collect();
    let radii = mode_radii(&spec);
    // Plancherel measure of one DFT mode for the continuum-scaled spectrum.
    let lx = spec.xmax - spec.xmin;
    let ly = spec.ymax - spec.ymin;
    let mode_measure = (2.0 * std::f64::consts::PI / lx) * (2.0 * std::f64::consts::PI / ly)
        / (2.0 * std::f64::consts::PI).powi(2);

    let nyquist = std::f64::consts::PI / spec.dx();
    // sqrt(2) covers the corner modes of the square lattice.
    let top = nyquist * std::f64::consts::SQRT_2;
    let mut cutoffs: Vec<f64> = (0..6).map(|m| top / 2f64.powi(5 - m)).collect();
    cutoffs.push(top * (1.0 + 1e-12));
    let partial_norms: Vec<f64> = cutoffs
        .iter()
        .map(|&c| {
            radii
                .iter()
                .zip(&power)
                .filter(|&(&r, _)| r <= c)
                .map(|(&r, &p)| (1.0 + r * r).powf(alpha) * p * mode_measure)
                .sum()
        })
        .collect();

    let total: f64 = power.iter().sum();
    let (fitted_order, fit_residual) = if total == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        fitted_order_from_power(&spec, &power)
    };
    Ok(SpectralReport { cutoffs, partial_norms, fitted_order, fit_residual })
}

/// Fitted Sobolev orders of a field and of its pointwise V-line field at
/// a fixed orientation. Requires the delta kernel, so the smoothing under
/// test is the transform's own. Both orders come from tapered spectra:
/// the V-line field does not vanish at the domain boundary, and an
/// untapered transform would measure the wrap-around jump instead of the
/// field.
pub fn vline_smoothing_report(
    f: &ImageGrid,
    phi: f64,
    p: &VLineParams,
) -> Result<(f64, f64)> {
    p.validate()?;
    if !matches!(p.kernel, KernelSpec::Delta) {
        return Err(CstError::InvalidParameter(
            "smoothing report requires the delta kernel".into(),
        ));
    }
    let order_f = fitted_order_tapered(f)?;
    let vf = vline_field(f, phi, p);
    let order_vf = fitted_order_tapered(&vf)?;
    Ok((order_f, order_vf))
}

// ---------------------------------------------------------------------------
// Angular Fourier components of the V-line transform

#[derive(Debug, Clone)]
pub struct VlineFourier {
    pub spec: GridSpec,
    pub k_max: usize,
    /// Measured coefficient fields in space, one per k in 0..=k_max:
    /// (1/2pi) integral of the V-line field against e^{-i k phi}.
    pub measured: Vec<Vec<C64>>,
    /// Closed-form coefficient spectra on the DFT lattice (DC mode zeroed).
    pub predicted: Vec<Vec<C64>>,
}

/// Angular Fourier decomposition of the V-line transform, measured by
/// quadrature over `nphi` orientations and compared against the
/// closed-form spectrum `(a + b e^{2ik psi}) e^{-ik(phi_xi + pi/2)}
/// fhat(xi) / |xi|`.
///
/// The k-dependent phase of the closed form depends on the angular series
/// sign convention; magnitude comparisons are convention-free, and the
/// k = 0 component is real so it can be compared directly.
pub fn vline_fourier_coefficients(
    f: &ImageGrid,
    p: &VLineParams,
    k_max: usize,
    nphi: usize,
) -> Result<VlineFourier> {
    p.validate()?;
    require_square_cells(f.spec())?;
    if !matches!(p.kernel, KernelSpec::Delta) {
        return Err(CstError::InvalidParameter(
            "Fourier decomposition requires the delta kernel".into(),
        ));
    }
    if 2 * k_max >= nphi {
        return Err(CstError::InvalidParameter(format!(
            "k_max = {k_max} needs more than {nphi} orientations"
        )));
    }
    let spec = *f.spec();
    let n = spec.len();
    let mut measured = vec![vec![C64::new(0.0, 0.0); n]; k_max + 1];
    let dphi = 2.0 * std::f64::consts::PI / nphi as f64;

    // Accumulate the angular quadrature one orientation at a time; each
    // field is independent, so process orientations in parallel chunks
    // and reduce in fixed order.
    const CHUNK: usize = 16;
    let chunks: Vec<usize> = (0..nphi.div_ceil(CHUNK)).collect();
    let partials: Vec<Vec<Vec<C64>>> = chunks
        .par_iter()
        .map(|&chunk| {
            let mut acc = vec![vec![C64::new(0.0, 0.0); n]; k_max + 1];
            let j_end = ((chunk + 1) * CHUNK).min(nphi);
            for j in chunk * CHUNK..j_end {
                let phi = j as f64 * dphi;
                let field = vline_field(f, phi, p);
                for (k, acc_k) in acc.iter_mut().enumerate() {
                    let w = C64::from_polar(
                        dphi / (2.0 * std::f64::consts::PI),
                        -(k as f64) * phi,
                    );
                    for (slot, &v) in acc_k.iter_mut().zip(field.values()) {
                        *slot += w * v;
                    }
                }
            }
            acc
        })
        .collect();
    for partial in partials {
        for (k, part_k) in partial.into_iter().enumerate() {
            for (slot, v) in measured[k].iter_mut().zip(part_k) {
                *slot += v;
            }
        }
    }

    let fhat = image_spectrum(f);
    let (nx, ny) = (spec.nx, spec.ny);
    let (dx, dy) = (spec.dx(), spec.dy());
    let mut predicted = vec![vec![C64::new(0.0, 0.0); n]; k_max + 1];
    for j in 0..ny {
        let fy = fft_freq(j, ny, dy);
        for i in 0..nx {
            let fx = fft_freq(i, nx, dx);
            let r = fx.hypot(fy);
            if r == 0.0 {
                continue;
            }
            let phi_xi = fy.atan2(fx);
            let base = fhat[j * nx + i] / r;
            for (k, pred_k) in predicted.iter_mut().enumerate() {
                let kf = k as f64;
                let leg = C64::new(p.a, 0.0)
                    + C64::from_polar(p.b, 2.0 * kf * p.psi);
                let phase = C64::from_polar(1.0, -kf * (phi_xi + std::f64::consts::FRAC_PI_2));
                pred_k[j * nx + i] = leg * phase * base;
            }
        }
    }
    Ok(VlineFourier { spec, k_max, measured, predicted })
}

/// Direct convolution with the 1/|y| kernel, the closed-form shape of the
/// angle-averaged V-line transform, treating the image as piecewise
/// constant on cells. Near offsets use the exact cell integral of the
/// kernel (the midpoint value of so steep a kernel is off by percent
/// levels several cells out); far offsets use the midpoint value.
pub fn convolve_inverse_distance(f: &ImageGrid) -> Result<ImageGrid> {
    require_square_cells(f.spec())?;
    let spec = *f.spec();
    let h = spec.dx();
    let cell = h * h;

    // Corner integral of 1/|y| over [0,a] x [0,b].
    let corner = |a: f64, b: f64| -> f64 {
        if a == 0.0 || b == 0.0 {
            return 0.0;
        }
        let sa = a.signum();
        let sb = b.signum();
        let (a, b) = (a.abs(), b.abs());
        sa * sb * (a * (b / a).asinh() + b * (a / b).asinh())
    };
    let cell_integral = |di: i64, dj: i64| -> f64 {
        let (x1, x2) = ((di as f64 - 0.5) * h, (di as f64 + 0.5) * h);
        let (y1, y2) = ((dj as f64 - 0.5) * h, (dj as f64 + 0.5) * h);
        corner(x2, y2) - corner(x1, y2) - corner(x2, y1) + corner(x1, y1)
    };
    const NEAR: i64 = 4;
    let near_size = (2 * NEAR + 1) as usize;
    let mut near_table = vec![0.0; near_size * near_size];
    for dj in -NEAR..=NEAR {
        for di in -NEAR..=NEAR {
            near_table[((dj + NEAR) as usize) * near_size + (di + NEAR) as usize] =
                cell_integral(di, dj);
        }
    }

    let sources: Vec<(i64, i64, f64)> = (0..spec.len())
        .filter(|&q| f.values()[q] != 0.0)
        .map(|q| ((q % spec.nx) as i64, (q / spec.nx) as i64, f.values()[q]))
        .collect();
    let mut out = vec![0.0; spec.len()];
    out.par_chunks_mut(spec.nx).enumerate().for_each(|(jy, row)| {
        for (jx, slot) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(qx, qy, v) in &sources {
                let di = jx as i64 - qx;
                let dj = jy as i64 - qy;
                if di.abs() <= NEAR && dj.abs() <= NEAR {
                    acc += v
                        * near_table
                            [((dj + NEAR) as usize) * near_size + (di + NEAR) as usize];
                } else {
                    acc += v * cell / ((di as f64 * h).hypot(dj as f64 * h));
                }
            }
            *slot = acc;
        }
    });
    ImageGrid::new(spec, out)
}

/// Windowed continuum-scaled spectrum of a complex field: a separable
/// Hann taper suppresses wrap-around leakage from slowly decaying tails.
pub fn windowed_spectrum(field: &[C64], spec: &GridSpec) -> Vec<C64> {
    let (nx, ny) = (spec.nx, spec.ny);
    let h2 = spec.dx() * spec.dy();
    let hann = |m: usize, n: usize| -> f64 {
        0.5 * (1.0
            - (2.0 * std::f64::consts::PI * m as f64 / n as f64).cos())
    };
    let mut tapered = Vec::with_capacity(field.len());
    for j in 0..ny {
        for i in 0..nx {
            tapered.push(field[j * nx + i] * hann(i, nx) * hann(j, ny) * h2);
        }
    }
    fft_2d(&tapered, nx, ny, false)
}

/// Relative L2 magnitude error between two spectra over the fit band.
pub fn midband_relative_error(a: &[C64], b: &[C64], spec: &GridSpec) -> f64 {
    let radii = mode_radii(spec);
    let nyquist = std::f64::consts::PI / spec.dx();
    let (lo, hi) = (FIT_BAND.0 * nyquist, FIT_BAND.1 * nyquist);
    let mut num = 0.0;
    let mut den = 0.0;
    for ((av, bv), &r) in a.iter().zip(b).zip(&radii) {
        if r >= lo && r <= hi {
            let d = av.norm() - bv.norm();
            num += d * d;
            den += bv.norm_sqr();
        }
    }
    (num / den).sqrt()
}

/// Reconstruct the spatial field whose continuum-scaled DFT equals the
/// given spectrum.
pub fn spectrum_to_field(spectrum: &[C64], spec: &GridSpec) -> Vec<C64> {
    let h2 = spec.dx() * spec.dy();
    let scaled: Vec<C64> = spectrum.iter().map(|c| c / h2).collect();
    fft_2d(&scaled, spec.nx, spec.ny, true)
}

// ---------------------------------------------------------------------------
// Local singularity order along sinogram columns

#[derive(Debug, Clone)]
pub struct SingularityOrderMap {
    pub ns: usize,
    pub ntheta: usize,
    /// Local 1-D Sobolev order estimate per (s, theta) bin, s-fastest.
    pub orders: Vec<f64>,
    /// RMS residual of the per-bin decay fit.
    pub residuals: Vec<f64>,
    /// Windowed energy in the fit band per bin.
    pub band_energy: Vec<f64>,
    pub valid: Vec<bool>,
    /// Tangency flags: low order, trustworthy fit, and locally maximal
    /// high-band energy.
    pub flagged: Vec<bool>,
}

/// Calibration constants of the windowed decay estimator. The fit band
/// starts above the window's detrending-affected modes and stops at a
/// quarter of the sampling rate: data simulated from rasters is smeared
/// over one or two bins, so the top octave measures that smearing rather
/// than the singularity.
const SING_BAND: (usize, usize) = (2, 8);
/// Flag threshold: the H^1 dividing line, the dead band, and a further
/// 0.1 allowance for the upward bias the windowed estimator shows on
/// singularities that arrive smeared over a bin or two by rasterized
/// simulation; measured on desk-scale scans of analytic phantoms.
const SING_FLAG_ORDER: f64 = 1.0 + ORDER_DEAD_BAND + 0.10;
const SING_RESID_MAX: f64 = 0.9;
/// Fraction of the column's strongest band energy below which a bin is
/// considered featureless.
const SING_ENERGY_FLOOR: f64 = 1e-2;
/// Prominence of the second difference over its column median required
/// of a flag location, and the neighborhood of the local-maximum test.
const SING_D2_PROMINENCE: f64 = 6.0;

/// Local singularity-order map of a sinogram: per bin, a Hann-windowed,
/// detrended segment of the offset profile is Fourier transformed and the
/// band decay exponent p of |coefficients| gives the order estimate
/// p - 1/2.
///
/// The windowed estimate localizes an order no better than a fraction of
/// the window, so the tangency flag pairs the order gate (below the H^1
/// line plus dead band, trustworthy fit, band energy above a floor) with
/// a sharp locator: the bin's second difference must be a prominent local
/// maximum of the column. That pins flags to the singular bins instead of
/// every window that sees them.
pub fn singularity_order_map(b: &Sinogram, window: usize) -> Result<SingularityOrderMap> {
    let scale = (window as f64 / 64.0).max(0.5);
    let lo = ((SING_BAND.0 as f64 * scale).round() as usize).max(2);
    let hi = ((SING_BAND.1 as f64 * scale).round() as usize).max(lo + 2);
    singularity_order_map_tuned(b, window, (lo, hi.min(window / 2)))
}

/// [`singularity_order_map`] with an explicit fit band (in window
/// harmonics); the default band is the calibrated choice.
pub fn singularity_order_map_tuned(
    b: &Sinogram,
    window: usize,
    band_harmonics: (usize, usize),
) -> Result<SingularityOrderMap> {
    if window < 16 || !window.is_power_of_two() {
        return Err(CstError::InvalidParameter(
            "window must be a power of two, at least 16".into(),
        ));
    }
    if band_harmonics.0 < 1 || band_harmonics.1 <= band_harmonics.0
        || band_harmonics.1 > window / 2
    {
        return Err(CstError::InvalidParameter("bad fit band".into()));
    }
    let geom = *b.geom();
    let (ns, ntheta) = (geom.ns, geom.ntheta);
    let half = window / 2;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(window);
    let hann: Vec<f64> = (0..window)
        .map(|m| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * m as f64 / window as f64).cos()))
        .collect();
    let band: Vec<usize> = (band_harmonics.0..=band_harmonics.1).collect();
    let ln_k: Vec<f64> = band.iter().map(|&k| (k as f64).ln()).collect();

    type ColumnStats = (Vec<f64>, Vec<f64>, Vec<bool>, Vec<f64>);
    let columns: Vec<ColumnStats> = (0..ntheta)
        .into_par_iter()
        .map(|j| {
            let col = b.column(j);
            let mut orders = vec![f64::INFINITY; ns];
            let mut resids = vec![0.0; ns];
            let mut valid = vec![false; ns];
            let mut hi_energy = vec![0.0; ns];
            let mut buf = vec![C64::new(0.0, 0.0); window];
            for center in 0..ns {
                let start = center as isize - half as isize;
                let in_range = (0..window)
                    .filter(|&m| {
                        let idx = start + m as isize;
                        idx >= 0 && (idx as usize) < ns
                    })
                    .count();
                if in_range < window / 2 {
                    continue;
                }
                valid[center] = true;

                // Edge-replicated segment (zero padding would fabricate a
                // jump at the array boundary), linear detrend, Hann taper.
                let seg: Vec<f64> = (0..window)
                    .map(|m| {
                        let idx = (start + m as isize).clamp(0, ns as isize - 1);
                        col[idx as usize]
                    })
                    .collect();
                let xs: Vec<f64> = (0..window).map(|m| m as f64).collect();
                let (slope, _) = line_fit(&xs, &seg);
                let mean_x = (window as f64 - 1.0) / 2.0;
                let mean_y = seg.iter().sum::<f64>() / window as f64;
                for (m, v) in buf.iter_mut().enumerate() {
                    let detrended = seg[m] - (mean_y + slope * (m as f64 - mean_x));
                    *v = C64::new(detrended * hann[m], 0.0);
                }
                fft.process(&mut buf);

                let energy: f64 = band.iter().map(|&k| buf[k].norm_sqr()).sum();
                // Segments that are flat up to rounding (all-zero or pure
                // constant/linear) carry no information; leave them at the
                // smooth sentinel instead of fitting rounding noise.
                let seg_scale = seg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if energy.sqrt() <= 1e-10 * seg_scale + 1e-300 {
                    continue;
                }
                hi_energy[center] = energy;
                let ln_mag: Vec<f64> = band
                    .iter()
                    .map(|&k| buf[k].norm().max(1e-300).ln())
                    .collect();
                let (decay, resid) = line_fit(&ln_k, &ln_mag);
                // |c_k| ~ k^{-p} gives slope -p; order = p - 1/2.
                orders[center] = -decay - 0.5;
                resids[center] = resid;
            }
            (orders, resids, valid, hi_energy)
        })
        .collect();

    let mut orders = Vec::with_capacity(ns * ntheta);
    let mut residuals = Vec::with_capacity(ns * ntheta);
    let mut band_energy = Vec::with_capacity(ns * ntheta);
    let mut valid = Vec::with_capacity(ns * ntheta);
    let mut flagged = Vec::with_capacity(ns * ntheta);
    for (j, (col_orders, col_resids, col_valid, col_energy)) in columns.iter().enumerate() {
        let peak_energy = col_energy.iter().cloned().fold(0.0f64, f64::max);
        let col = b.column(j);
        let mut d2 = vec![0.0; ns];
        for i in 1..ns - 1 {
            d2[i] = (col[i + 1] - 2.0 * col[i] + col[i - 1]).abs();
        }
        let mut sorted = d2.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d2_median = sorted[ns / 2];
        for center in 0..ns {
            let mut flag = false;
            if col_valid[center]
                && col_orders[center] < SING_FLAG_ORDER
                && col_resids[center] < SING_RESID_MAX
                && col_energy[center] > SING_ENERGY_FLOOR * peak_energy
                && d2[center] > SING_D2_PROMINENCE * d2_median
            {
                // The locator reach scales with the window so curvature
                // shoulders inboard of a singularity defer to it.
                let reach = (window / 4).max(4);
                let lo = center.saturating_sub(reach);
                let hi = (center + reach + 1).min(ns);
                if d2[lo..hi].iter().all(|&v| v <= d2[center]) {
                    flag = true;
                }
            }
            flagged.push(flag);
        }
        orders.extend_from_slice(col_orders);
        residuals.extend_from_slice(col_resids);
        band_energy.extend_from_slice(col_energy);
        valid.extend_from_slice(col_valid);
    }
    Ok(SingularityOrderMap { ns, ntheta, orders, residuals, band_energy, valid, flagged })
}

// ---------------------------------------------------------------------------
// Edge strength ratios along tangency curves

/// Bins (s index, theta index) where lines are tangent to an origin-
/// centered ellipse with the given semi-axes: s = +/- support(theta).
pub fn ellipse_tangency_bins(geom: &ScanGeometry, semi_axes: (f64, f64)) -> Vec<(usize, usize)> {
    let (a, bx) = semi_axes;
    let mut bins = Vec::with_capacity(2 * geom.ntheta);
    for j in 0..geom.ntheta {
        let t = geom.theta(j);
        let s_t = ((a * t.cos()).powi(2) + (bx * t.sin()).powi(2)).sqrt();
        for s in [s_t, -s_t] {
            let i = ((s - geom.smin) / geom.ds()).round();
            if i >= 0.0 && (i as usize) < geom.ns {
                bins.push((i as usize, j));
            }
        }
    }
    bins
}

/// Median |d^2/ds^2 data| along the inner curve divided by the same along
/// the outer curve, for each sinogram. Attenuation shows up as the
/// non-linear ratio falling below the linear one.
pub fn edge_strength_ratio(
    b_nonlinear: &Sinogram,
    b_linear: &Sinogram,
    inner: &[(usize, usize)],
    outer: &[(usize, usize)],
) -> Result<(f64, f64)> {
    if inner.is_empty() || outer.is_empty() {
        return Err(CstError::EmptyCurve);
    }
    let ratio = |b: &Sinogram| -> Result<f64> {
        let d2 = derivative_s(b, 2)?;
        let median = |bins: &[(usize, usize)]| -> f64 {
            let mut vals: Vec<f64> = bins.iter().map(|&(i, j)| d2.get(i, j).abs()).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals[vals.len() / 2]
        };
        Ok(median(inner) / median(outer))
    };
    Ok((ratio(b_nonlinear)?, ratio(b_linear)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{builtin_raster, BuiltinPhantom};

    #[test]
    fn parseval_at_alpha_zero() {
        let img = builtin_raster(BuiltinPhantom::NonConvex, 128);
        let report = sobolev_partial_norms(&img, 0.0).unwrap();
        let total = *report.partial_norms.last().unwrap();
        let h2 = img.spec().dx() * img.spec().dy();
        let energy: f64 = img.values().iter().map(|v| v * v).sum::<f64>() * h2;
        assert!(
            (total - energy).abs() / energy < 1e-10,
            "spectral {total} vs spatial {energy}"
        );
        // Partial norms are non-decreasing and cutoffs increasing.
        for w in report.partial_norms.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for w in report.cutoffs.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn amplitude_scaling_covariance() {
        let img = builtin_raster(BuiltinPhantom::Disk, 96);
        let scaled = ImageGrid::new(
            *img.spec(),
            img.values().iter().map(|v| 3.0 * v).collect(),
        )
        .unwrap();
        let r1 = sobolev_partial_norms(&img, 0.7).unwrap();
        let r2 = sobolev_partial_norms(&scaled, 0.7).unwrap();
        for (a, b) in r1.partial_norms.iter().zip(&r2.partial_norms) {
            if *a > 0.0 {
                assert!((b / a - 9.0).abs() < 1e-9);
            }
        }
        assert!((r1.fitted_order - r2.fitted_order).abs() < 1e-9);
    }

    #[test]
    fn disk_order_is_near_one_half() {
        let img = builtin_raster(BuiltinPhantom::Disk, 200);
        let report = sobolev_partial_norms(&img, 0.0).unwrap();
        assert!(
            (0.35..=0.65).contains(&report.fitted_order),
            "disk fitted order {}",
            report.fitted_order
        );
    }

    #[test]
    fn smooth_bump_converges_at_alpha_four() {
        // Exact center sampling keeps the raster spectrum clean down to
        // the bump's own decay; box-averaged anti-aliasing would add a
        // broadband floor above it near Nyquist.
        use crate::phantom::{rasterize, RasterMode};
        let img = rasterize(
            &BuiltinPhantom::Gaussian.spec(),
            GridSpec::square(200),
            RasterMode::Exact,
        )
        .unwrap();
        let report = sobolev_partial_norms(&img, 4.0).unwrap();
        let total = *report.partial_norms.last().unwrap();
        // Tail beyond the second-to-last dyadic cutoff carries under 1%.
        let tail = total - report.partial_norms[report.partial_norms.len() - 2];
        assert!(tail / total < 0.01, "tail fraction {}", tail / total);
        // Spectrum decays faster than any order the fit can probe.
        assert!(
            report.fitted_order.is_infinite(),
            "fitted order {}",
            report.fitted_order
        );
    }

    #[test]
    fn fourier_coefficients_linear_in_the_image() {
        let grid = GridSpec::square(64);
        use crate::phantom::{rasterize, RasterMode};
        let f1 = rasterize(&BuiltinPhantom::Gaussian.spec(), grid, RasterMode::Exact).unwrap();
        let f2 = builtin_raster(BuiltinPhantom::Square, 64);
        let combo = ImageGrid::new(
            grid,
            f1.values()
                .iter()
                .zip(f2.values())
                .map(|(a, b)| 1.5 * a + 0.5 * b)
                .collect(),
        )
        .unwrap();
        let p = VLineParams::new(1.0, 0.8, 0.9, 4.0, KernelSpec::Delta).unwrap();
        assert!(vline_fourier_coefficients(&f1, &p, 16, 32).is_err());
        let fa = vline_fourier_coefficients(&f1, &p, 2, 32).unwrap();
        let fb = vline_fourier_coefficients(&f2, &p, 2, 32).unwrap();
        let fc = vline_fourier_coefficients(&combo, &p, 2, 32).unwrap();
        for k in 0..=2 {
            let scale = fc.measured[k]
                .iter()
                .map(|c| c.norm())
                .fold(0.0f64, f64::max)
                .max(1e-300);
            for ((a, b), c) in fa.measured[k].iter().zip(&fb.measured[k]).zip(&fc.measured[k]) {
                let expect = 1.5 * a + 0.5 * b;
                assert!((expect - c).norm() <= 1e-8 * scale, "k = {k}");
            }
        }
    }

    #[test]
    fn order_estimates_ignore_constant_offsets() {
        // Detrending removes DC: adding a constant to the sinogram leaves
        // the order map unchanged.
        let geom = ScanGeometry::new(128, 2, (-1.0, 1.0), (0.0, 1.0)).unwrap();
        let values: Vec<f64> = (0..geom.len())
            .map(|k| {
                let s = geom.s(k % geom.ns);
                if s < 0.2 { 1.3 } else { 0.0 }
            })
            .collect();
        let b1 = Sinogram::new(geom, values.clone()).unwrap();
        let b2 = Sinogram::new(geom, values.iter().map(|v| v + 42.0).collect()).unwrap();
        let m1 = singularity_order_map(&b1, 16).unwrap();
        let m2 = singularity_order_map(&b2, 16).unwrap();
        for (a, b) in m1.orders.iter().zip(&m2.orders) {
            match (a.is_finite(), b.is_finite()) {
                (true, true) => assert!((a - b).abs() < 1e-6, "{a} vs {b}"),
                (fa, fb) => assert_eq!(fa, fb, "{a} vs {b}"),
            }
        }
        assert_eq!(m1.flagged, m2.flagged);
    }

    #[test]
    fn bad_estimator_windows_rejected() {
        let geom = ScanGeometry::new(64, 4, (-1.0, 1.0), (0.0, 1.0)).unwrap();
        let b = Sinogram::zeros(geom);
        assert!(singularity_order_map(&b, 20).is_err());
        assert!(singularity_order_map(&b, 8).is_err());
        assert!(singularity_order_map_tuned(&b, 32, (5, 3)).is_err());
        assert!(singularity_order_map(&b, 32).is_ok());
    }

    #[test]
    fn identical_sinograms_give_equal_ratios() {
        let geom = ScanGeometry::standard();
        let b = Sinogram::new(
            geom,
            (0..geom.len()).map(|k| ((k % 131) as f64 * 0.37).sin().abs()).collect(),
        )
        .unwrap();
        let outer = ellipse_tangency_bins(&geom, (0.7, 0.7));
        let inner = ellipse_tangency_bins(&geom, (0.3, 0.3));
        let (rnl, rlin) = edge_strength_ratio(&b, &b, &inner, &outer).unwrap();
        assert_eq!(rnl, rlin);
        assert!(matches!(
            edge_strength_ratio(&b, &b, &[], &outer),
            Err(crate::error::CstError::EmptyCurve)
        ));
    }

    #[test]
    fn concentric_disks_have_comparable_linear_edges() {
        use crate::phantom::{PhantomSpec, Shape, Sign, SignedShape};
        // Equal-contrast annulus between two concentric circles.
        let spec = PhantomSpec::constant(
            vec![
                SignedShape {
                    shape: Shape::Disk { center: (0.0, 0.0), radius: 0.7 },
                    sign: Sign::Add,
                },
                SignedShape {
                    shape: Shape::Disk { center: (0.0, 0.0), radius: 0.4 },
                    sign: Sign::Subtract,
                },
            ],
            1.0,
        );
        use crate::phantom::{rasterize, RasterMode};
        let img = rasterize(&spec, GridSpec::square(200), RasterMode::default()).unwrap();
        let geom = ScanGeometry::standard();
        let lin = crate::raytransforms::radon_forward(&img, &geom, None);
        let outer = ellipse_tangency_bins(&geom, (0.7, 0.7));
        let inner = ellipse_tangency_bins(&geom, (0.4, 0.4));
        let (_, ratio_lin) = edge_strength_ratio(&lin, &lin, &inner, &outer).unwrap();
        assert!(ratio_lin > 0.3, "linear ratio {ratio_lin}");
    }

    #[test]
    fn zero_image_reports_infinite_order() {
        let img = ImageGrid::zeros(GridSpec::square(64));
        let report = sobolev_partial_norms(&img, 0.0).unwrap();
        assert!(report.fitted_order.is_infinite());
        let p = VLineParams::new(1.0, 1.0, std::f64::consts::FRAC_PI_4, 4.0, KernelSpec::Delta)
            .unwrap();
        let (of, ovf) = vline_smoothing_report(&img, 0.3, &p).unwrap();
        assert!(of.is_infinite() && ovf.is_infinite());
    }
}
