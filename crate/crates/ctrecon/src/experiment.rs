//! Dataset generation and the three-way method comparison.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use ctrecon_core::fbp::{fbp_reconstruct, make_ramp, subsample_views, Apodization};
use ctrecon_core::metrics::snr;
use ctrecon_core::net::{forward_net, train_with, EpochRecord, NetworkParams};
use ctrecon_core::phantom::{analytic_sinogram, random_phantom, rasterize, Phantom};
use ctrecon_core::sparse::{
    estimate_lipschitz, golden_section_max, ista_reconstruct, tv_admm_reconstruct, SolverConfig,
};
use ctrecon_core::{Geometry, Image, Rng, Sinogram};

use crate::formats::{write_history_csv, write_pgm, write_weights, PgmDepth, Window};
use crate::manifest::Manifest;

/// Stream tags for [`Rng::derive`].
const PHANTOM_STREAM: u64 = 0;
const LIPSCHITZ_STREAM: u64 = 1 << 32;
const NET_INIT_STREAM: u64 = 2 << 32;
const NET_TRAIN_STREAM: u64 = 3 << 32;

pub struct Instance {
    pub id: usize,
    pub phantom: Phantom,
    /// Full-view analytic sinogram.
    pub sinogram: Sinogram,
    /// Full-view FBP, the reference every method is scored against.
    pub truth: Image,
}

impl Instance {
    pub fn generate(m: &Manifest, geometry: &Geometry, id: usize) -> Result<Self> {
        let mut rng = Rng::derive(m.seed, PHANTOM_STREAM + id as u64);
        let phantom = random_phantom(&mut rng, (m.ellipses_min, m.ellipses_max), geometry.fov_radius())?;
        let sinogram = analytic_sinogram(&phantom, geometry);
        let truth = fbp(&sinogram, m.truth_apodization()?, m.image_side)?;
        Ok(Instance { id, phantom, sinogram, truth })
    }

    pub fn raster(&self) -> Result<Image> {
        Ok(rasterize(&self.phantom, self.truth.side())?)
    }

    pub fn subsampled(&self, factor: usize) -> Result<Sinogram> {
        Ok(subsample_views(&self.sinogram, factor)?)
    }
}

pub fn fbp(sino: &Sinogram, apod: Apodization, side: usize) -> Result<Image> {
    let g = sino.geometry();
    let filter = make_ramp(g.n_bins(), g.det_spacing(), apod)?;
    Ok(fbp_reconstruct(sino, &filter, side)?)
}

pub struct Dataset {
    pub geometry: Geometry,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
}

impl Dataset {
    pub fn generate(m: &Manifest) -> Result<Self> {
        let geometry = m.geometry()?;
        let make = |ids: std::ops::Range<usize>| {
            ids.map(|id| Instance::generate(m, &geometry, id)).collect::<Result<Vec<_>>>()
        };
        Ok(Dataset { train: make(m.train_ids())?, test: make(m.test_ids())?, geometry: geometry.clone() })
    }
}

/// Affine map taking `[lo, hi]` onto `[0, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub lo: f64,
    pub hi: f64,
    pub max: f64,
}

impl Scaling {
    /// Fitted to the range of the given images.
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a Image>, max: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for im in images {
            for &v in im.values() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !(hi > lo) {
            hi = lo + 1.0;
        }
        Scaling { lo, hi, max }
    }

    pub fn apply(&self, im: &Image) -> Image {
        let s = self.max / (self.hi - self.lo);
        let values = im.values().iter().map(|v| (v - self.lo) * s).collect();
        Image::from_values(im.side(), im.pixel_spacing(), values).unwrap()
    }

    pub fn invert(&self, im: &Image) -> Image {
        let s = (self.hi - self.lo) / self.max;
        let values = im.values().iter().map(|v| v * s + self.lo).collect();
        Image::from_values(im.side(), im.pixel_spacing(), values).unwrap()
    }
}

/// Training pairs `(scaled sparse FBP, scaled full-view FBP)`.
pub fn network_pairs(instances: &[Instance], inputs: &[Image], scaling: &Scaling) -> Vec<(Image, Image)> {
    instances.iter().zip(inputs).map(|(inst, x)| (scaling.apply(x), scaling.apply(&inst.truth))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub factor: usize,
    pub views: usize,
    pub instance: usize,
    /// NaN when the reconstruction failed.
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub method: String,
    pub factor: usize,
    pub images: usize,
    /// Per-image reconstruction time; excludes tuning and training.
    pub seconds_per_image: f64,
    /// Tuning or training time.
    pub setup_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub timings: Vec<Timing>,
    /// `method factor instance: error` for every failed reconstruction.
    pub failures: Vec<String>,
    /// Chosen `lambda / L` per (method, factor).
    pub lambdas: Vec<(String, usize, f64)>,
}

impl ResultTable {
    pub fn mean_snr(&self, method: &str, factor: usize) -> Option<f64> {
        let v: Vec<f64> =
            self.rows.iter().filter(|r| r.method == method && r.factor == factor).map(|r| r.snr_db).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn snrs(&self, method: &str, factor: usize) -> Vec<f64> {
        self.rows.iter().filter(|r| r.method == method && r.factor == factor).map(|r| r.snr_db).collect()
    }

    pub fn timing(&self, method: &str, factor: usize) -> Option<&Timing> {
        self.timings.iter().find(|t| t.method == method && t.factor == factor)
    }

    /// `method,factor,views,instance,snr_db`, one row per test image.
    pub fn results_csv(&self) -> String {
        let mut s = String::from("method,factor,views,instance,snr_db\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{:.6}", r.method, r.factor, r.views, r.instance, r.snr_db);
        }
        s
    }

    /// `method,factor,views,images,mean_snr_db`.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,factor,views,images,mean_snr_db\n");
        let mut seen: Vec<(&str, usize)> = Vec::new();
        for r in &self.rows {
            if seen.contains(&(&r.method, r.factor)) {
                continue;
            }
            seen.push((&r.method, r.factor));
            let n = self.rows.iter().filter(|q| q.method == r.method && q.factor == r.factor).count();
            let mean = self.mean_snr(&r.method, r.factor).unwrap();
            let _ = writeln!(s, "{},{},{},{n},{mean:.6}", r.method, r.factor, r.views);
        }
        s
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from("method,factor,images,seconds_per_image,setup_seconds\n");
        for t in &self.timings {
            let _ =
                writeln!(s, "{},{},{},{:.6},{:.3}", t.method, t.factor, t.images, t.seconds_per_image, t.setup_seconds);
        }
        s
    }
}

/// Where progress lines and audit records go.
pub struct RunLog {
    text: String,
    echo: bool,
}

impl RunLog {
    pub fn new(echo: bool) -> Self {
        RunLog { text: String::new(), echo }
    }

    pub fn line(&mut self, s: impl AsRef<str>) {
        let s = s.as_ref();
        if self.echo {
            eprintln!("{s}");
        }
        self.text.push_str(s);
        self.text.push('\n');
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

fn id_list(instances: &[Instance]) -> String {
    instances.iter().map(|i| i.id.to_string()).collect::<Vec<_>>().join(",")
}

/// Solver settings for a tuned method at `lambda = ratio * L`.
fn solver_config(m: &Manifest, method: &str, lipschitz: f64, ratio: f64) -> Result<SolverConfig> {
    let base = SolverConfig { step_inverse: lipschitz, lambda: ratio * lipschitz, ..Default::default() };
    Ok(match method {
        "tv" => SolverConfig {
            rho: m.tv_rho * lipschitz,
            max_iters: m.tv_max_iters,
            tol: m.tv_tol,
            cg_tol: m.tv_cg_tol,
            tv_mode: m.tv_mode()?,
            ..base
        },
        _ => SolverConfig { max_iters: m.ista_max_iters, fista: true, tol: 1e-6, ..base },
    })
}

fn solve(method: &str, sino: &Sinogram, config: &SolverConfig) -> Result<Image> {
    Ok(match method {
        "tv" => tv_admm_reconstruct(sino, config)?,
        _ => ista_reconstruct(sino, config)?,
    })
}

/// Golden-section search over `log10(lambda / L)` maximizing the mean SNR
/// on `instances` (training data only). Returns `lambda / L`.
pub fn tune_lambda(m: &Manifest, method: &str, instances: &[Instance], factor: usize, lipschitz: f64) -> Result<f64> {
    let sinos = instances.iter().map(|i| i.subsampled(factor)).collect::<Result<Vec<_>>>()?;
    let score = |t: f64| -> f64 {
        let ratio = 10f64.powf(t);
        let mut total = 0.0;
        for (inst, s) in instances.iter().zip(&sinos) {
            let Ok(cfg) = solver_config(m, method, lipschitz, ratio) else { return f64::NEG_INFINITY };
            match solve(method, s, &cfg).and_then(|x| Ok(snr(&inst.truth, &x)?)) {
                Ok(v) => total += v,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        total / instances.len() as f64
    };
    let (t, _) = golden_section_max(score, m.lambda_log10_min, m.lambda_log10_max, m.search_evals);
    Ok(10f64.powf(t))
}

/// Trains a fresh network on the training instances at one factor.
pub fn train_network(
    m: &Manifest,
    dataset: &Dataset,
    factor: usize,
    scaling: &Scaling,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(NetworkParams<f32>, Vec<EpochRecord>)> {
    let apod = m.input_apodization()?;
    let inputs =
        dataset.train.iter().map(|i| fbp(&i.subsampled(factor)?, apod, m.image_side)).collect::<Result<Vec<_>>>()?;
    let pairs = network_pairs(&dataset.train, &inputs, scaling);
    let mut params = NetworkParams::<f32>::unet(m.net_depth, m.net_base)?;
    params.he_init(&mut Rng::derive(m.seed, NET_INIT_STREAM + factor as u64));
    let cfg = m.train_config(Rng::derive(m.seed, NET_TRAIN_STREAM + factor as u64).next_u64());
    let report = train_with(&mut params, &pairs, &[], &cfg, &mut on_epoch)?;
    if let Some(a) = report.aborted {
        anyhow::bail!("training stopped by a non-finite loss at epoch {} step {}", a.epoch, a.step);
    }
    Ok((params, report.history))
}

/// Options that do not change result bytes.
#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    /// Write CSVs, the run log, weights and images here.
    pub out_dir: Option<&'a Path>,
    /// Use these weights for every factor instead of training.
    pub weights: Option<&'a NetworkParams<f32>>,
    /// Echo progress to stderr.
    pub verbose: bool,
}

/// Runs every configured method on the test instances at every factor and
/// scores them against the full-view FBP.
pub fn run_experiment(m: &Manifest, opts: &RunOptions) -> Result<ResultTable> {
    m.validate()?;
    let mut log = RunLog::new(opts.verbose);
    log.line(format!("manifest seed={} side={} views={} factors={:?}", m.seed, m.image_side, m.full_views, m.factors));
    let dataset = Dataset::generate(m)?;
    log.line(format!("train instances={}", id_list(&dataset.train)));
    log.line(format!("test instances={}", id_list(&dataset.test)));
    let apod = m.input_apodization()?;
    let mut table = ResultTable::default();
    let scaling = Scaling::fit(dataset.train.iter().map(|i| &i.truth), m.scale_max);
    if m.uses("cnn") {
        log.line(format!("network scaling lo={:e} hi={:e} max={}", scaling.lo, scaling.hi, scaling.max));
    }
    let images_dir = opts.out_dir.filter(|_| m.export_images).map(|d| d.join("images"));
    if let Some(dir) = &images_dir {
        fs::create_dir_all(dir)?;
        for inst in &dataset.test {
            let w = Window::fit(&inst.truth);
            write_pgm(&dir.join(format!("{:04}_truth.pgm", inst.id)), &inst.truth, w, PgmDepth::Eight)?;
            let raster = inst.raster()?;
            write_pgm(
                &dir.join(format!("{:04}_phantom.pgm", inst.id)),
                &raster,
                Window::fit(&raster),
                PgmDepth::Eight,
            )?;
        }
    }

    for &factor in &m.factors {
        let sparse: Vec<Sinogram> = dataset.test.iter().map(|i| i.subsampled(factor)).collect::<Result<_>>()?;
        let views = sparse[0].geometry().n_views();
        log.line(format!("factor {factor}: {views} views"));
        let record = |table: &mut ResultTable, method: &str, inst: &Instance, out: Result<Image>| {
            let snr_db = match out.and_then(|x| {
                if let Some(dir) = &images_dir {
                    let path = dir.join(format!("{:04}_{method}_x{factor}.pgm", inst.id));
                    write_pgm(&path, &x, Window::fit(&inst.truth), PgmDepth::Eight)?;
                }
                Ok(snr(&inst.truth, &x)?)
            }) {
                Ok(v) => v,
                Err(e) => {
                    table.failures.push(format!("{method} x{factor} instance {}: {e:#}", inst.id));
                    f64::NAN
                }
            };
            table.rows.push(ResultRow { method: method.into(), factor, views, instance: inst.id, snr_db });
        };

        for method in ["fbp", "ista", "tv", "cnn"].into_iter().filter(|x| m.uses(x)) {
            let setup = Instant::now();
            let started;
            match method {
                "fbp" => {
                    started = Instant::now();
                    for (inst, s) in dataset.test.iter().zip(&sparse) {
                        record(&mut table, method, inst, fbp(s, apod, m.image_side));
                    }
                }
                "ista" | "tv" => {
                    let mut rng = Rng::derive(m.seed, LIPSCHITZ_STREAM + factor as u64);
                    let lipschitz = estimate_lipschitz(sparse[0].geometry(), 50, &mut rng)?;
                    let tuning = &dataset.train[..m.tune_count];
                    log.line(format!("{method} x{factor} tune instances={}", id_list(tuning)));
                    let ratio = tune_lambda(m, method, tuning, factor, lipschitz)?;
                    log.line(format!("{method} x{factor} lambda/L={ratio:e} L={lipschitz:e}"));
                    table.lambdas.push((method.into(), factor, ratio));
                    let cfg = solver_config(m, method, lipschitz, ratio)?;
                    started = Instant::now();
                    for (inst, s) in dataset.test.iter().zip(&sparse) {
                        log.line(format!("{method} x{factor} test instance={}", inst.id));
                        record(&mut table, method, inst, solve(method, s, &cfg));
                    }
                }
                _ => {
                    let trained;
                    let params = match opts.weights {
                        Some(p) => {
                            log.line(format!("cnn x{factor} using supplied weights"));
                            p
                        }
                        None => {
                            log.line(format!("cnn x{factor} train instances={}", id_list(&dataset.train)));
                            let (p, history) = train_network(m, &dataset, factor, &scaling, |e| {
                                log.line(format!(
                                    "cnn x{factor} epoch {} lr={:e} loss={:e}",
                                    e.epoch, e.learning_rate, e.train_loss
                                ))
                            })?;
                            if let Some(dir) = opts.out_dir {
                                write_weights(&dir.join(format!("cnn_x{factor}.weights")), &p)?;
                                write_history_csv(&dir.join(format!("cnn_x{factor}_history.csv")), &history)?;
                            }
                            trained = p;
                            &trained
                        }
                    };
                    started = Instant::now();
                    for (inst, s) in dataset.test.iter().zip(&sparse) {
                        let out = fbp(s, apod, m.image_side)
                            .and_then(|x| Ok(forward_net(params, &scaling.apply(&x))?))
                            .map(|y| scaling.invert(&y));
                        record(&mut table, method, inst, out);
                    }
                }
            }
            let per_image = started.elapsed().as_secs_f64() / dataset.test.len() as f64;
            let setup_seconds = (started - setup).as_secs_f64();
            table.timings.push(Timing {
                method: method.into(),
                factor,
                images: dataset.test.len(),
                seconds_per_image: per_image,
                setup_seconds,
            });
        }
    }

    for f in &table.failures {
        log.line(format!("FAILED {f}"));
    }
    if let Some(dir) = opts.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("results.csv"), table.results_csv())?;
        fs::write(dir.join("summary.csv"), table.summary_csv())?;
        fs::write(dir.join("timings.csv"), table.timings_csv())?;
        fs::write(dir.join("manifest.toml"), m.render())?;
        let mut f = fs::File::create(dir.join("run.log")).context("creating run log")?;
        f.write_all(log.text().as_bytes())?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Manifest {
        Manifest {
            image_side: 32,
            full_views: 30,
            factors: vec![1, 5],
            train_count: 3,
            test_count: 2,
            methods: vec!["fbp".into(), "tv".into()],
            tune_count: 2,
            search_evals: 3,
            tv_max_iters: 40,
            export_images: false,
            ..Default::default()
        }
    }

    #[test]
    fn scaling_round_trips() {
        let a = Image::from_values(2, 1.0, vec![-1.0, 0.0, 2.0, 3.0]).unwrap();
        let s = Scaling::fit([&a], 10.0);
        let b = s.apply(&a);
        assert_eq!(b.values(), &[0.0, 2.5, 7.5, 10.0]);
        let back = s.invert(&b);
        assert!(back.values().iter().zip(a.values()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn instances_are_reproducible_and_distinct() {
        let m = tiny();
        let g = m.geometry().unwrap();
        let a = Instance::generate(&m, &g, 1).unwrap();
        let b = Instance::generate(&m, &g, 1).unwrap();
        let c = Instance::generate(&m, &g, 2).unwrap();
        assert_eq!(a.phantom, b.phantom);
        assert_eq!(a.truth, b.truth);
        assert_ne!(a.phantom, c.phantom);
    }

    #[test]
    fn factor_one_fbp_row_hits_the_cap() {
        let t = run_experiment(&tiny(), &RunOptions::default()).unwrap();
        assert!(t.failures.is_empty(), "{:?}", t.failures);
        assert!(t.snrs("fbp", 1).iter().all(|&v| v == ctrecon_core::metrics::SNR_CAP_DB));
        assert_eq!(t.snrs("tv", 5).len(), 2);
        // test ids follow the training ids
        assert!(t.rows.iter().all(|r| r.instance >= 3));
        assert_eq!(t.lambdas.len(), 2);
    }
}
