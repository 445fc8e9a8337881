//! Implementations of the pipeline commands.

use std::path::PathBuf;

use clap::{Args, Subcommand};
use serde::Serialize;

use cst_core::analysis;
use cst_core::error::{CstError, Result};
use cst_core::forward::{add_noise, compton_forward};
use cst_core::grid::{GridSpec, ImageGrid, ScanGeometry};
use cst_core::io;
use cst_core::phantom::{rasterize, BuiltinPhantom, PhantomSpec, RasterMode};
use cst_core::physics::{LambdaMode, PhysicsParams};
use cst_core::postproc;
use cst_core::raytransforms::{radon_forward, KernelSpec, VLineParams};
use cst_core::recon::{self, ReconConfig, ReconMethod};

use crate::manifest::ManifestBuilder;

fn ensure_out_dir(dir: &PathBuf) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Shared physics / V-line flags.
#[derive(Args, Debug, Clone, Serialize)]
pub struct PhysicsArgs {
    /// Source energy in MeV.
    #[arg(long, default_value_t = 1.17)]
    energy: f64,
    /// Opening half-angle psi in radians (default pi/4).
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_4)]
    psi: f64,
    /// Incoming-leg attenuation weight.
    #[arg(long = "atten-a", default_value_t = 1.0)]
    atten_a: f64,
    /// Outgoing-leg attenuation weight.
    #[arg(long = "atten-b", default_value_t = 1.0)]
    atten_b: f64,
    /// Constant scan weight lambda.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Derive lambda from the Klein-Nishina cross section instead.
    #[arg(long)]
    klein_nishina: bool,
    /// Source intensity used with --klein-nishina.
    #[arg(long, default_value_t = 1.0)]
    intensity: f64,
    /// Smoothing kernel: delta | disk | gaussian.
    #[arg(long, default_value = "disk")]
    kernel: String,
    /// Disk radius or Gaussian sigma of the kernel, in length units.
    #[arg(long, default_value_t = 0.02)]
    kernel_radius: f64,
    /// V-line leg length.
    #[arg(long, default_value_t = 4.0)]
    nu: f64,
}

impl PhysicsArgs {
    fn physics(&self) -> PhysicsParams {
        PhysicsParams {
            energy_mev: self.energy,
            psi: self.psi,
            atten_in: self.atten_a,
            atten_out: self.atten_b,
            intensity: self.intensity,
            lambda_mode: if self.klein_nishina {
                LambdaMode::KleinNishina
            } else {
                LambdaMode::Constant { value: self.lambda }
            },
            ..PhysicsParams::default()
        }
    }

    fn kernel(&self) -> Result<KernelSpec> {
        match self.kernel.as_str() {
            "delta" => Ok(KernelSpec::Delta),
            "disk" => Ok(KernelSpec::Disk { radius: self.kernel_radius }),
            "gaussian" => Ok(KernelSpec::Gaussian { sigma: self.kernel_radius }),
            other => Err(CstError::InvalidParameter(format!("unknown kernel '{other}'"))),
        }
    }

    fn vline(&self) -> Result<VLineParams> {
        VLineParams::new(self.atten_a, self.atten_b, self.psi, self.nu, self.kernel()?)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Builtin phantom name.
    #[arg(long, default_value = "non_convex")]
    phantom: String,
    /// JSON phantom spec file (overrides --phantom).
    #[arg(long)]
    phantom_file: Option<PathBuf>,
    /// Image resolution (N x N).
    #[arg(long, default_value_t = 200)]
    nx: usize,
    /// Offset samples.
    #[arg(long, default_value_t = 282)]
    ns: usize,
    /// Angle samples.
    #[arg(long, default_value_t = 360)]
    ntheta: usize,
    /// Relative noise level.
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    phys: PhysicsArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn load_phantom(name: &str, file: &Option<PathBuf>) -> Result<PhantomSpec> {
    match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(name.parse::<BuiltinPhantom>()?.spec()),
    }
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    ensure_out_dir(&args.out_dir)?;
    let mut manifest = ManifestBuilder::new("simulate", serde_json::to_value(&args)?);
    manifest.seed(args.seed);

    let spec = load_phantom(&args.phantom, &args.phantom_file)?;
    let grid = GridSpec::square(args.nx);
    let image = rasterize(&spec, grid, RasterMode::default())?;
    let geom = ScanGeometry::new(
        args.ns,
        args.ntheta,
        (-std::f64::consts::SQRT_2, std::f64::consts::SQRT_2),
        (0.0, 2.0 * std::f64::consts::PI),
    )?;
    let phys = args.phys.physics();
    let vp = args.phys.vline()?;

    let nonlinear = compton_forward(&image, &geom, &phys, &vp, None)?;
    let linear = radon_forward(&image, &geom, None);
    let noisy = add_noise(&nonlinear, args.gamma, args.seed)?;

    let paths = [
        ("phantom.img", &image),
    ];
    for (name, img) in paths {
        let path = args.out_dir.join(name);
        io::write_image(&path, img)?;
        manifest.output(path);
    }
    for (name, sino) in [
        ("nonlinear.sin", &nonlinear),
        ("linear.sin", &linear),
        ("noisy.sin", &noisy),
    ] {
        let path = args.out_dir.join(name);
        io::write_sinogram(&path, sino)?;
        manifest.output(path);
    }
    manifest.write(&args.out_dir)?;
    println!("wrote nonlinear/linear/noisy sinograms to {}", args.out_dir.display());
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct ReconstructArgs {
    /// Input sinogram file.
    #[arg(long)]
    input: PathBuf,
    /// fbp | landweber | tv.
    #[arg(long, default_value = "fbp")]
    method: String,
    /// Output image resolution (N x N).
    #[arg(long, default_value_t = 200)]
    nx: usize,
    #[arg(long)]
    iters: Option<usize>,
    /// Landweber step as a multiple of 1/||A||^2.
    #[arg(long, default_value_t = 1.0)]
    relax: f64,
    #[arg(long, default_value_t = 1.0)]
    tv_lambda: f64,
    #[arg(long, default_value_t = 0.01)]
    tv_beta: f64,
    /// Penalize the single global square root instead of per-pixel TV.
    #[arg(long)]
    tv_global_sqrt: bool,
    /// Offset-derivative order for fbp (1 or 2).
    #[arg(long, default_value_t = 2)]
    deriv_order: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

pub fn reconstruct(args: ReconstructArgs) -> Result<()> {
    ensure_out_dir(&args.out_dir)?;
    let mut manifest = ManifestBuilder::new("reconstruct", serde_json::to_value(&args)?);
    manifest.input(args.input.clone());

    let sino = io::read_sinogram(&args.input)?;
    let method: ReconMethod = args.method.parse()?;
    let mut cfg = match method {
        ReconMethod::FbpLambda => ReconConfig::fbp(),
        ReconMethod::Landweber => ReconConfig::landweber(),
        ReconMethod::Tv => ReconConfig::tv(),
    };
    cfg.relax = args.relax;
    cfg.tv_lambda = args.tv_lambda;
    cfg.tv_beta = args.tv_beta;
    cfg.deriv_order = args.deriv_order;
    cfg.tv_global_sqrt = args.tv_global_sqrt;
    if let Some(iters) = args.iters {
        cfg.iterations = iters;
    }
    let result = recon::reconstruct(&sino, GridSpec::square(args.nx), &cfg)?;

    let img_path = args.out_dir.join(format!("recon_{}.img", args.method));
    io::write_image(&img_path, &result.image)?;
    manifest.output(img_path);
    let pgm_path = args.out_dir.join(format!("recon_{}.pgm", args.method));
    io::export_pgm(&pgm_path, &result.image, io::PgmRange::Auto)?;
    manifest.output(pgm_path);
    if !result.trace.is_empty() {
        let trace_path = args.out_dir.join(format!("recon_{}_trace.csv", args.method));
        let iters: Vec<f64> = (0..result.trace.len()).map(|i| i as f64).collect();
        io::export_csv(&trace_path, &[("iteration", &iters), ("value", &result.trace)])?;
        manifest.output(trace_path);
    }
    manifest.write(&args.out_dir)?;
    println!("wrote reconstruction for method {}", args.method);
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct EdgesArgs {
    /// Input reconstructed image.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    low_q: f64,
    #[arg(long, default_value_t = 0.9)]
    high_q: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

pub fn edges(args: EdgesArgs) -> Result<()> {
    ensure_out_dir(&args.out_dir)?;
    let mut manifest = ManifestBuilder::new("edges", serde_json::to_value(&args)?);
    manifest.input(args.input.clone());
    let img = io::read_image(&args.input)?;
    let cfg = postproc::EdgeConfig {
        low_quantile: args.low_q,
        high_quantile: args.high_q,
        sigma: args.sigma,
    };
    let edges = postproc::detect_edges(&img, &cfg)?;
    let mask = ImageGrid::new(
        *img.spec(),
        edges.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )?;
    let path = args.out_dir.join("edges.img");
    io::write_image(&path, &mask)?;
    manifest.output(path);
    let pgm = args.out_dir.join("edges.pgm");
    io::export_pgm(&pgm, &mask, io::PgmRange::Fixed(0.0, 1.0))?;
    manifest.output(pgm);
    manifest.write(&args.out_dir)?;
    println!("edge pixels: {}", edges.count());
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct SupportArgs {
    /// Input edge-map image (0/1 values).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    close_radius: usize,
    /// Builtin phantom to score the mask against (prints the p value).
    #[arg(long)]
    truth_phantom: Option<String>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

pub fn support(args: SupportArgs) -> Result<()> {
    ensure_out_dir(&args.out_dir)?;
    let mut manifest = ManifestBuilder::new("support", serde_json::to_value(&args)?);
    manifest.input(args.input.clone());
    let img = io::read_image(&args.input)?;
    let edge_map = postproc::EdgeMap {
        nx: img.nx(),
        ny: img.ny(),
        mask: img.values().iter().map(|&v| v != 0.0).collect(),
    };
    let closed = postproc::close_boundary(&edge_map, args.close_radius)?;
    let support = postproc::fill_support(&closed);

    let mask_img = postproc::support_to_image(&support, &img)?;
    let path = args.out_dir.join("support.img");
    io::write_image(&path, &mask_img)?;
    manifest.output(path);
    let pgm = args.out_dir.join("support.pgm");
    io::export_pgm(&pgm, &mask_img, io::PgmRange::Fixed(0.0, 1.0))?;
    manifest.output(pgm);
    manifest.write(&args.out_dir)?;

    if let Some(name) = &args.truth_phantom {
        let spec = name.parse::<BuiltinPhantom>()?.spec();
        let truth_img = rasterize(&spec, *img.spec(), RasterMode::default())?;
        let truth: Vec<bool> = truth_img.values().iter().map(|&v| v > 0.5).collect();
        let p = postproc::p_metric(&support.mask, &truth);
        println!("p = {p:.4}");
    }
    if support.leaked {
        return Err(CstError::InvalidParameter(
            "boundary not closed: support leaked to the border".into(),
        ));
    }
    println!(
        "support components: {}, pixels: {}",
        support.component_count,
        support.mask.iter().filter(|&&m| m).count()
    );
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct DensityArgs {
    /// Support mask image (0/1 values).
    #[arg(long)]
    support: PathBuf,
    /// Measured sinogram.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    umax: f64,
    #[arg(long, default_value_t = 201)]
    ngrid: usize,
    /// Skip the golden-section refinement of the grid minimum.
    #[arg(long)]
    no_refine: bool,
    #[command(flatten)]
    phys: PhysicsArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

pub fn density(args: DensityArgs) -> Result<()> {
    ensure_out_dir(&args.out_dir)?;
    let mut manifest = ManifestBuilder::new("density", serde_json::to_value(&args)?);
    manifest.input(args.support.clone());
    manifest.input(args.data.clone());

    let mask = io::read_image(&args.support)?;
    let data = io::read_sinogram(&args.data)?;
    let phys = args.phys.physics();
    let vp = args.phys.vline()?;
    let est = postproc::estimate_density(
        &mask,
        &data,
        &phys,
        &vp,
        args.umax,
        args.ngrid,
        !args.no_refine,
    )?;

    let ne: Vec<f64> = est.curve.iter().map(|c| c.0).collect();
    let residual: Vec<f64> = est.curve.iter().map(|c| c.1).collect();
    let path = args.out_dir.join("density_curve.csv");
    io::export_csv(&path, &[("ne", &ne), ("residual", &residual)])?;
    manifest.output(path);
    manifest.write(&args.out_dir)?;
    println!("{}", est.ne_hat);
    Ok(())
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Sobolev partial norms and fitted decay order of an image.
    Sobolev(SobolevArgs),
    /// Angular Fourier components of the V-line transform of a phantom.
    VlineFourier(VlineFourierArgs),
    /// Local singularity-order map of a sinogram.
    SingOrder(SingOrderArgs),
    /// Edge-strength ratio between two sinograms along tangency curves.
    EdgeRatio(EdgeRatioArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct SobolevArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct VlineFourierArgs {
    #[arg(long, default_value = "gaussian")]
    phantom: String,
    #[arg(long, default_value_t = 200)]
    nx: usize,
    #[arg(long, default_value_t = 4)]
    kmax: usize,
    #[arg(long, default_value_t = 256)]
    nphi: usize,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_4)]
    psi: f64,
    #[arg(long, default_value_t = 8.0)]
    nu: f64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SingOrderArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 32)]
    window: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EdgeRatioArgs {
    #[arg(long)]
    nonlinear: PathBuf,
    #[arg(long)]
    linear: PathBuf,
    /// Outer ellipse semi-axes "a,b".
    #[arg(long, default_value = "0.75,0.55")]
    outer: String,
    /// Inner ellipse semi-axes "a,b".
    #[arg(long, default_value = "0.45,0.25")]
    inner: String,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn parse_axes(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(CstError::InvalidParameter(format!("bad semi-axes '{text}'")));
    }
    let a = parts[0]
        .trim()
        .parse()
        .map_err(|_| CstError::InvalidParameter(format!("bad number in '{text}'")))?;
    let b = parts[1]
        .trim()
        .parse()
        .map_err(|_| CstError::InvalidParameter(format!("bad number in '{text}'")))?;
    Ok((a, b))
}

pub fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Sobolev(args) => {
            ensure_out_dir(&args.out_dir)?;
            let mut manifest = ManifestBuilder::new("analyze-sobolev", serde_json::to_value(&args)?);
            manifest.input(args.input.clone());
            let img = io::read_image(&args.input)?;
            let report = analysis::sobolev_partial_norms(&img, args.alpha)?;
            let path = args.out_dir.join("sobolev.csv");
            io::export_csv(
                &path,
                &[("cutoff", &report.cutoffs), ("partial_norm", &report.partial_norms)],
            )?;
            manifest.output(path);
            manifest.write(&args.out_dir)?;
            println!("fitted_order = {}", report.fitted_order);
        }
        AnalyzeCommand::VlineFourier(args) => {
            ensure_out_dir(&args.out_dir)?;
            let mut manifest =
                ManifestBuilder::new("analyze-vline-fourier", serde_json::to_value(&args)?);
            let spec = args.phantom.parse::<BuiltinPhantom>()?.spec();
            let img = rasterize(&spec, GridSpec::square(args.nx), RasterMode::Exact)?;
            let vp = VLineParams::new(args.a, args.b, args.psi, args.nu, KernelSpec::Delta)?;
            let four = analysis::vline_fourier_coefficients(&img, &vp, args.kmax, args.nphi)?;
            let grid = *img.spec();
            let ks: Vec<f64> = (0..=args.kmax).map(|k| k as f64).collect();
            let mut norms = Vec::new();
            let mut errors = Vec::new();
            for k in 0..=args.kmax {
                let m_spec = analysis::windowed_spectrum(&four.measured[k], &grid);
                let p_field = analysis::spectrum_to_field(&four.predicted[k], &grid);
                let p_spec = analysis::windowed_spectrum(&p_field, &grid);
                norms.push(four.measured[k].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt());
                errors.push(analysis::midband_relative_error(&m_spec, &p_spec, &grid));
            }
            let path = args.out_dir.join("vline_fourier.csv");
            io::export_csv(
                &path,
                &[("k", &ks), ("measured_norm", &norms), ("midband_rel_error", &errors)],
            )?;
            manifest.output(path);
            manifest.write(&args.out_dir)?;
            for k in 0..=args.kmax {
                println!("k = {k}: norm {:.6e}, mid-band error {:.4}", norms[k], errors[k]);
            }
        }
        AnalyzeCommand::SingOrder(args) => {
            ensure_out_dir(&args.out_dir)?;
            let mut manifest =
                ManifestBuilder::new("analyze-sing-order", serde_json::to_value(&args)?);
            manifest.input(args.input.clone());
            let sino = io::read_sinogram(&args.input)?;
            let map = analysis::singularity_order_map(&sino, args.window)?;
            let mut s_idx = Vec::new();
            let mut t_idx = Vec::new();
            let mut orders = Vec::new();
            let mut resids = Vec::new();
            let mut flags = Vec::new();
            for j in 0..map.ntheta {
                for i in 0..map.ns {
                    let p = j * map.ns + i;
                    s_idx.push(i as f64);
                    t_idx.push(j as f64);
                    orders.push(map.orders[p]);
                    resids.push(map.residuals[p]);
                    flags.push(if map.flagged[p] { 1.0 } else { 0.0 });
                }
            }
            let path = args.out_dir.join("sing_order.csv");
            io::export_csv(
                &path,
                &[
                    ("s_index", &s_idx),
                    ("theta_index", &t_idx),
                    ("order", &orders),
                    ("fit_residual", &resids),
                    ("flagged", &flags),
                ],
            )?;
            manifest.output(path);
            manifest.write(&args.out_dir)?;
            let flagged = map.flagged.iter().filter(|&&f| f).count();
            println!("flagged bins: {flagged}");
        }
        AnalyzeCommand::EdgeRatio(args) => {
            ensure_out_dir(&args.out_dir)?;
            let mut manifest =
                ManifestBuilder::new("analyze-edge-ratio", serde_json::to_value(&args)?);
            manifest.input(args.nonlinear.clone());
            manifest.input(args.linear.clone());
            let nl = io::read_sinogram(&args.nonlinear)?;
            let lin = io::read_sinogram(&args.linear)?;
            let outer_axes = parse_axes(&args.outer)?;
            let inner_axes = parse_axes(&args.inner)?;
            let outer = analysis::ellipse_tangency_bins(nl.geom(), outer_axes);
            let inner = analysis::ellipse_tangency_bins(nl.geom(), inner_axes);
            let (ratio_nl, ratio_lin) = analysis::edge_strength_ratio(&nl, &lin, &inner, &outer)?;
            let report = serde_json::json!({
                "ratio_nonlinear": ratio_nl,
                "ratio_linear": ratio_lin,
            });
            let path = args.out_dir.join("edge_ratio.json");
            io::atomic_write(&path, &serde_json::to_vec_pretty(&report)?)?;
            manifest.output(path);
            manifest.write(&args.out_dir)?;
            println!("ratio_nl = {ratio_nl:.4}, ratio_lin = {ratio_lin:.4}");
        }
    }
    Ok(())
}
