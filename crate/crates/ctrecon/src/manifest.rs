use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ctrecon_core::fbp::Apodization;
use ctrecon_core::net::TrainConfig;
use ctrecon_core::sparse::TvMode;
use ctrecon_core::Geometry;
use serde::{Deserialize, Serialize};

/// Everything that determines an experiment's output. Stored as flat TOML
/// (`key = value` lines); missing keys take the desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub image_side: usize,
    pub full_views: usize,
    /// View subsampling factors; factor `k` keeps views `0, k, 2k, ...`.
    pub factors: Vec<usize>,
    pub train_count: usize,
    pub test_count: usize,
    pub ellipses_min: usize,
    pub ellipses_max: usize,
    /// Apodization of the subsampled FBPs (network inputs and baseline).
    pub input_filter: String,
    /// Apodization of the full-view FBP used as ground truth.
    pub truth_filter: String,
    /// Any of `fbp`, `ista`, `tv`, `cnn`.
    pub methods: Vec<String>,
    /// Network images are mapped affinely so the training targets span
    /// `[0, scale_max]`.
    pub scale_max: f64,
    pub export_images: bool,

    pub tv_mode: String,
    /// Training instances used to tune the regularization weight.
    pub tune_count: usize,
    /// Search interval for `log10(lambda / L)`.
    pub lambda_log10_min: f64,
    pub lambda_log10_max: f64,
    pub search_evals: usize,
    /// ADMM penalty relative to `L`.
    pub tv_rho: f64,
    pub tv_max_iters: usize,
    pub tv_tol: f64,
    pub tv_cg_tol: f64,
    pub ista_max_iters: usize,

    pub net_depth: usize,
    pub net_base: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub clip: f64,
    pub flips: bool,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            seed: 2016,
            image_side: 64,
            full_views: 90,
            factors: vec![7, 20],
            train_count: 200,
            test_count: 25,
            ellipses_min: 3,
            ellipses_max: 8,
            input_filter: "hann".into(),
            truth_filter: "hann".into(),
            methods: vec!["fbp".into(), "tv".into(), "cnn".into()],
            scale_max: 10.0,
            export_images: true,
            tv_mode: "isotropic".into(),
            tune_count: 10,
            lambda_log10_min: -5.0,
            lambda_log10_max: -1.0,
            search_evals: 8,
            tv_rho: 0.03,
            tv_max_iters: 300,
            tv_tol: 1e-3,
            tv_cg_tol: 1e-3,
            ista_max_iters: 150,
            net_depth: 3,
            net_base: 16,
            epochs: 30,
            lr_start: 0.01,
            lr_end: 0.001,
            momentum: 0.99,
            clip: 1e-2,
            flips: true,
        }
    }
}

pub const METHODS: [&str; 4] = ["fbp", "ista", "tv", "cnn"];

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).context("malformed manifest")?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        Manifest::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("manifest fields are plain values")
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_side < 16 || self.full_views == 0 {
            bail!("image_side must be >= 16 and full_views > 0");
        }
        if self.factors.is_empty() || self.factors.iter().any(|&f| f == 0 || f > self.full_views) {
            bail!("factors {:?} must lie in 1..={}", self.factors, self.full_views);
        }
        if self.test_count == 0 {
            bail!("test_count must be positive");
        }
        if self.ellipses_min == 0 || self.ellipses_min > self.ellipses_max {
            bail!("bad ellipse count range {}..={}", self.ellipses_min, self.ellipses_max);
        }
        self.input_apodization()?;
        self.truth_apodization()?;
        self.tv_mode()?;
        for m in &self.methods {
            if !METHODS.contains(&m.as_str()) {
                bail!("unknown method `{m}` (expected one of {METHODS:?})");
            }
        }
        let tuned = self.uses("tv") || self.uses("ista");
        if tuned && (self.tune_count == 0 || self.tune_count > self.train_count) {
            bail!("tune_count {} must lie in 1..=train_count ({})", self.tune_count, self.train_count);
        }
        if tuned && !(self.lambda_log10_min < self.lambda_log10_max && self.search_evals >= 2) {
            bail!("bad regularization search interval");
        }
        if self.uses("cnn") {
            if self.train_count == 0 {
                bail!("the cnn method needs training data");
            }
            if !self.image_side.is_multiple_of(1 << self.net_depth) {
                bail!("image_side {} is not divisible by 2^net_depth", self.image_side);
            }
            if !(self.scale_max > 0.0) {
                bail!("scale_max must be positive");
            }
            self.train_config(0).validate()?;
        }
        Ok(())
    }

    pub fn uses(&self, method: &str) -> bool {
        self.methods.iter().any(|m| m == method)
    }

    pub fn input_apodization(&self) -> Result<Apodization> {
        Ok(self.input_filter.parse()?)
    }

    pub fn truth_apodization(&self) -> Result<Apodization> {
        Ok(self.truth_filter.parse()?)
    }

    pub fn tv_mode(&self) -> Result<TvMode> {
        Ok(self.tv_mode.parse()?)
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Ok(Geometry::parallel(self.image_side, self.full_views)?)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            momentum: self.momentum,
            clip: self.clip,
            flips: self.flips,
            seed,
        }
    }

    /// Instance ids: training `0..train_count`, test after them.
    pub fn train_ids(&self) -> std::ops::Range<usize> {
        0..self.train_count
    }

    pub fn test_ids(&self) -> std::ops::Range<usize> {
        self.train_count..self.train_count + self.test_count
    }
}
