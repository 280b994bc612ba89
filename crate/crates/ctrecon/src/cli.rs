//! `ctrecon` command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ctrecon_core::fbp::Apodization;
use ctrecon_core::metrics::snr;
use ctrecon_core::net::forward_net;
use ctrecon_core::phantom::{analytic_sinogram, rasterize};
use ctrecon_core::projector::{certify_normal_convolution, forward, RadonNormal, SpectralBand};
use ctrecon_core::sparse::{estimate_lipschitz, ista_report, tv_admm_report, SolverConfig, TvMode};
use ctrecon_core::{Geometry, Image, Rng, Sinogram};

use crate::experiment::{fbp, run_experiment, train_network, Dataset, RunOptions, Scaling};
use crate::formats::{
    read_image, read_phantom, read_sinogram, read_weights, write_history_csv, write_image, write_pgm, write_phantom,
    write_sinogram, write_solver_log_csv, write_weights, PgmDepth, Window,
};
use crate::manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "ctrecon", version, about = "Sparse-view CT: FBP, ISTA, TV-ADMM and a residual U-net")]
pub struct Cli {
    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Experiment manifest (flat TOML); desk-scale defaults otherwise.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate phantoms, full-view sinograms and ground-truth images.
    GenData,
    /// Project a phantom file to a sinogram.
    Project(ProjectArgs),
    /// Filtered back projection of test sinograms.
    Fbp(ReconArgs),
    /// TV-regularized ADMM reconstruction of test sinograms.
    Tv(SolverArgs),
    /// Haar-wavelet ISTA/FISTA reconstruction of test sinograms.
    Ista(SolverArgs),
    /// Train the residual U-net at one subsampling factor.
    Train(TrainArgs),
    /// Run the full method comparison and write the result tables.
    Eval(EvalArgs),
    /// Check that the normal operator of the projector acts as a convolution.
    Certify(CertifyArgs),
    /// Time the main kernels.
    Bench(GeometryArgs),
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub phantom: PathBuf,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub side: Option<usize>,
    /// Rasterize and apply the discrete projector instead of exact line
    /// integrals.
    #[arg(long)]
    pub discrete: bool,
}

#[derive(Debug, Args)]
pub struct ReconArgs {
    /// Sinogram file or directory of `.sino` files; defaults to the test
    /// set written by `gen-data` under the output directory.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Keep this many evenly spaced views.
    #[arg(long)]
    pub views: Option<usize>,
    /// Ramp apodization: none, hann or cosine; defaults to the manifest's.
    #[arg(long)]
    pub filter: Option<Apodization>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[command(flatten)]
    pub recon: ReconArgs,
    /// Regularization weight relative to the Lipschitz bound `L`.
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long)]
    pub iters: Option<usize>,
    /// TV flavour: isotropic or anisotropic.
    #[arg(long)]
    pub mode: Option<TvMode>,
    /// Plain ISTA instead of the accelerated variant.
    #[arg(long)]
    pub no_fista: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Subsampling factor; defaults to the manifest's first.
    #[arg(long)]
    pub factor: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Use these weights for the network instead of training.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Probes on a ring around the centre pixel.
    #[arg(long, default_value_t = 5)]
    pub probes: usize,
}

/// Parses `argv` and runs; returns the process exit code.
pub fn run(argv: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn manifest(cli: &Cli) -> Result<Manifest> {
    let mut m = match &cli.manifest {
        Some(p) => Manifest::load(p)?,
        None => Manifest::default(),
    };
    if let Some(s) = cli.seed {
        m.seed = s;
    }
    Ok(m)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let m = manifest(cli)?;
    let out = cli.out_dir.as_path();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match &cli.command {
        Command::GenData => gen_data(&m, out),
        Command::Project(a) => project(&m, out, a),
        Command::Fbp(a) => recon(&m, out, a, "fbp", None),
        Command::Tv(a) => recon(&m, out, &a.recon, "tv", Some(a)),
        Command::Ista(a) => recon(&m, out, &a.recon, "ista", Some(a)),
        Command::Train(a) => train(&m, out, a),
        Command::Eval(a) => eval(&m, out, a),
        Command::Certify(a) => certify(&m, out, a),
        Command::Bench(a) => bench(&m, out, a),
    }
}

fn gen_data(m: &Manifest, out: &Path) -> Result<()> {
    let data = Dataset::generate(m)?;
    for (split, set) in [("train", &data.train), ("test", &data.test)] {
        let dir = out.join("data").join(split);
        fs::create_dir_all(&dir)?;
        for inst in set {
            let stem = dir.join(format!("{:04}", inst.id));
            write_phantom(&stem.with_extension("phantom"), &inst.phantom)?;
            write_sinogram(&stem.with_extension("sino"), &inst.sinogram)?;
            write_image(&stem.with_extension("truth.img"), &inst.truth)?;
            write_pgm(&stem.with_extension("truth.pgm"), &inst.truth, Window::fit(&inst.truth), PgmDepth::Sixteen)?;
            let raster = inst.raster()?;
            write_pgm(&stem.with_extension("phantom.pgm"), &raster, Window::fit(&raster), PgmDepth::Eight)?;
        }
    }
    fs::write(out.join("data").join("manifest.toml"), m.render())?;
    println!(
        "wrote {} training and {} test instances to {}",
        data.train.len(),
        data.test.len(),
        out.join("data").display()
    );
    Ok(())
}

fn project(m: &Manifest, out: &Path, a: &ProjectArgs) -> Result<()> {
    let phantom = read_phantom(&a.phantom)?;
    let side = a.side.unwrap_or(m.image_side);
    let g = Geometry::parallel(side, a.views.unwrap_or(m.full_views))?;
    if (g.fov_radius() - phantom.fov_radius()).abs() > 1e-12 {
        bail!("phantom field of view {} does not match the geometry's {}", phantom.fov_radius(), g.fov_radius());
    }
    let sino = if a.discrete { forward(&rasterize(&phantom, side)?, &g)? } else { analytic_sinogram(&phantom, &g) };
    let stem = a.phantom.file_stem().and_then(|s| s.to_str()).unwrap_or("phantom");
    let path = out.join(format!("{stem}.sino"));
    write_sinogram(&path, &sino)?;
    println!("wrote {} ({} views x {} bins)", path.display(), g.n_views(), g.n_bins());
    Ok(())
}

/// Keeps `n` views at indices `floor(i * total / n)`.
pub fn select_views(sino: &Sinogram, n: usize) -> Result<Sinogram> {
    let g = sino.geometry();
    let total = g.n_views();
    if n == 0 || n > total {
        bail!("cannot keep {n} of {total} views");
    }
    let idx: Vec<usize> = (0..n).map(|i| i * total / n).collect();
    let geometry = g.select_views(&idx)?;
    let values = idx.iter().flat_map(|&i| sino.view(i).iter().copied()).collect();
    Ok(Sinogram::from_values(geometry, values)?)
}

/// Sinogram paths with the ground-truth image next to each, if present.
fn inputs(out: &Path, input: Option<&Path>) -> Result<Vec<(PathBuf, Option<PathBuf>)>> {
    let default = out.join("data").join("test");
    let src = input.unwrap_or(&default);
    let mut files: Vec<PathBuf> = if src.is_dir() {
        fs::read_dir(src)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "sino"))
            .collect()
    } else if src.is_file() {
        vec![src.to_path_buf()]
    } else {
        bail!("no input at {} (run `ctrecon gen-data` first or pass --input)", src.display());
    };
    files.sort();
    if files.is_empty() {
        bail!("no .sino files in {}", src.display());
    }
    Ok(files
        .into_iter()
        .map(|p| {
            let truth = p.with_extension("truth.img");
            let truth = truth.is_file().then_some(truth);
            (p, truth)
        })
        .collect())
}

fn recon(m: &Manifest, out: &Path, a: &ReconArgs, method: &str, solver: Option<&SolverArgs>) -> Result<()> {
    let apod = match a.filter {
        Some(f) => f,
        None => m.input_apodization()?,
    };
    let dir = out.join(method);
    fs::create_dir_all(&dir)?;
    let mut csv = String::from("input,views,snr_db,iterations,seconds\n");
    let mut lipschitz = None;
    for (path, truth_path) in inputs(out, a.input.as_deref())? {
        let full = read_sinogram(&path)?;
        let sino = match a.views {
            Some(n) => select_views(&full, n)?,
            None => full,
        };
        let g = sino.geometry().clone();
        let started = Instant::now();
        let (image, iterations) = match solver {
            None => (fbp(&sino, apod, g.image_side())?, 0),
            Some(s) => {
                let l = match lipschitz {
                    Some(l) => l,
                    None => *lipschitz.insert(estimate_lipschitz(&g, 50, &mut Rng::new(m.seed))?),
                };
                let base = SolverConfig { step_inverse: l, lambda: s.lambda * l, ..Default::default() };
                let report = if method == "tv" {
                    let cfg = SolverConfig {
                        rho: m.tv_rho * l,
                        max_iters: s.iters.unwrap_or(m.tv_max_iters),
                        tol: m.tv_tol,
                        cg_tol: m.tv_cg_tol,
                        tv_mode: s.mode.unwrap_or(m.tv_mode()?),
                        ..base
                    };
                    tv_admm_report(&sino, &cfg)?
                } else {
                    let cfg = SolverConfig {
                        max_iters: s.iters.unwrap_or(m.ista_max_iters),
                        fista: !s.no_fista,
                        tol: 1e-6,
                        ..base
                    };
                    ista_report(&sino, &cfg)?
                };
                let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
                write_solver_log_csv(&dir.join(format!("{stem}_log.csv")), &report.history)?;
                (report.image, report.iterations)
            }
        };
        let seconds = started.elapsed().as_secs_f64();
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        write_image(&dir.join(format!("{stem}.img")), &image)?;
        let truth = truth_path.map(|p| read_image(&p)).transpose()?;
        let window = truth.as_ref().map_or_else(|| Window::fit(&image), Window::fit);
        write_pgm(&dir.join(format!("{stem}.pgm")), &image, window, PgmDepth::Eight)?;
        let snr_db = match &truth {
            Some(t) => format!("{:.6}", snr(t, &image)?),
            None => String::new(),
        };
        csv.push_str(&format!("{stem},{},{snr_db},{iterations},{seconds:.4}\n", g.n_views()));
    }
    let path = out.join(format!("{method}.csv"));
    fs::write(&path, &csv)?;
    print!("{csv}");
    println!("wrote {} and images under {}", path.display(), dir.display());
    Ok(())
}

fn train(m: &Manifest, out: &Path, a: &TrainArgs) -> Result<()> {
    let mut m = m.clone();
    if let Some(e) = a.epochs {
        m.epochs = e;
    }
    let factor = a.factor.unwrap_or(m.factors[0]);
    m.factors = vec![factor];
    m.methods = vec!["cnn".into()];
    m.validate()?;
    let data = Dataset::generate(&m)?;
    let scaling = Scaling::fit(data.train.iter().map(|i| &i.truth), m.scale_max);
    let started = Instant::now();
    let (params, history) = train_network(&m, &data, factor, &scaling, |e| {
        println!(
            "epoch {:>3}  lr {:.5}  loss {:.4e}  ({:.0} s)",
            e.epoch,
            e.learning_rate,
            e.train_loss,
            started.elapsed().as_secs_f64()
        )
    })?;
    let weights = out.join(format!("cnn_x{factor}.weights"));
    write_weights(&weights, &params)?;
    write_history_csv(&out.join(format!("cnn_x{factor}_history.csv")), &history)?;
    let mut gain = 0.0;
    for inst in &data.test {
        let x = fbp(&inst.subsampled(factor)?, m.input_apodization()?, m.image_side)?;
        let y = scaling.invert(&forward_net(&params, &scaling.apply(&x))?);
        gain += snr(&inst.truth, &y)? - snr(&inst.truth, &x)?;
    }
    println!(
        "wrote {}; mean test SNR gain over the input FBP {:.2} dB",
        weights.display(),
        gain / data.test.len() as f64
    );
    Ok(())
}

fn eval(m: &Manifest, out: &Path, a: &EvalArgs) -> Result<()> {
    let weights = a.weights.as_deref().map(read_weights).transpose()?;
    let opts = RunOptions { out_dir: Some(out), weights: weights.as_ref(), verbose: true };
    let table = run_experiment(m, &opts)?;
    print!("{}", table.summary_csv());
    if !table.failures.is_empty() {
        bail!("{} reconstructions failed; see {}", table.failures.len(), out.join("run.log").display());
    }
    Ok(())
}

fn geometry(m: &Manifest, a: &GeometryArgs) -> Result<Geometry> {
    Ok(Geometry::parallel(a.side.unwrap_or(m.image_side), a.views.unwrap_or(m.full_views))?)
}

/// The centre pixel plus `count - 1` probes on a ring of radius `side / 8`.
pub fn ring_probes(side: usize, count: usize) -> Vec<(usize, usize)> {
    let c = side / 2;
    let r = (side / 8) as f64;
    let mut probes = vec![(c, c)];
    for k in 1..count {
        let t = 2.0 * std::f64::consts::PI * (k - 1) as f64 / (count - 1) as f64;
        let row = (c as f64 + r * t.sin()).round() as usize;
        let col = (c as f64 + r * t.cos()).round() as usize;
        probes.push((row, col));
    }
    probes
}

fn certify(m: &Manifest, out: &Path, a: &CertifyArgs) -> Result<()> {
    let g = geometry(m, &a.geometry)?;
    let side = g.image_side();
    let op = RadonNormal::new(g.clone());
    let report = certify_normal_convolution(&op, &ring_probes(side, a.probes), SpectralBand::default())?;
    let mut csv = String::from("frequency,magnitude\n");
    for (f, v) in &report.spectrum {
        csv.push_str(&format!("{f},{v}\n"));
    }
    fs::write(out.join("certify_spectrum.csv"), csv)?;
    println!("geometry: {side}x{side}, {} views, {} bins", g.n_views(), g.n_bins());
    println!("shift-invariance score: {:.4}", report.shift_invariance);
    println!("spectral slope ({:.3}-{:.3} cycles/pixel): {:.3}", report.band.lo, report.band.hi, report.spectral_slope);
    Ok(())
}

fn bench(m: &Manifest, out: &Path, a: &GeometryArgs) -> Result<()> {
    let g = geometry(m, a)?;
    let side = g.image_side();
    let mut rng = Rng::new(m.seed);
    let image = Image::from_values(side, g.pixel_spacing(), (0..side * side).map(|_| rng.next_f64()).collect())?;
    let sino = forward(&image, &g)?;
    let time = |reps: usize, f: &mut dyn FnMut() -> Result<()>| -> Result<f64> {
        let t = Instant::now();
        for _ in 0..reps {
            f()?;
        }
        Ok(t.elapsed().as_secs_f64() / reps as f64)
    };
    let mut rows = vec![
        ("forward", time(10, &mut || forward(&image, &g).map(drop).map_err(Into::into))?),
        (
            "adjoint",
            time(10, &mut || {
                drop(ctrecon_core::projector::adjoint(&sino));
                Ok(())
            })?,
        ),
        ("fbp", time(10, &mut || fbp(&sino, Apodization::Hann, side).map(drop))?),
    ];
    let l = estimate_lipschitz(&g, 30, &mut rng)?;
    let cfg = SolverConfig {
        step_inverse: l,
        lambda: 1e-3 * l,
        rho: m.tv_rho * l,
        max_iters: 20,
        tol: 0.0,
        cg_tol: m.tv_cg_tol,
        ..Default::default()
    };
    rows.push(("tv_admm_20_iters", time(1, &mut || tv_admm_report(&sino, &cfg).map(drop).map_err(Into::into))?));
    if side % (1 << m.net_depth) == 0 {
        let mut net = ctrecon_core::net::NetworkParams::<f32>::unet(m.net_depth, m.net_base)?;
        net.he_init(&mut rng);
        rows.push(("cnn_forward", time(5, &mut || forward_net(&net, &image).map(drop).map_err(Into::into))?));
    }
    let mut csv = String::from("kernel,seconds\n");
    for (name, s) in &rows {
        println!("{name:<18} {:>10.3} ms", s * 1e3);
        csv.push_str(&format!("{name},{s:.6}\n"));
    }
    fs::write(out.join("bench.csv"), csv)?;
    Ok(())
}
