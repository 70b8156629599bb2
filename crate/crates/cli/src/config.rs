//! Run configuration: one TOML file, overridable from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pseudopair::imgcore::RawDims;
use pseudopair::mapper::{HeadSpec, TrainConfig};
use pseudopair::otmatch::{
    DescriptorSpec, PairGraphConfig, SinkhornConfig, DEFAULT_ALPHA, DEFAULT_OUTER_ITERS,
};
use pseudopair::rawproc::RawProcConfig;
use pseudopair::stitcher::DEFAULT_BORDER;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of RAW patches (`*.raw` with `*.json` sidecars).
    pub source_raw: Option<PathBuf>,
    /// Directory of target RGB patches (PNG or JPEG).
    pub target_rgb: Option<PathBuf>,
    /// EMB1 containers keyed by image or patch id.
    pub source_embeddings: Option<PathBuf>,
    pub target_embeddings: Option<PathBuf>,
    /// Ground-truth RGB for each source patch; enables the `eval` stage.
    pub reference_rgb: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StitchConfig {
    pub border: usize,
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self {
            border: DEFAULT_BORDER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub alpha: f64,
    pub outer_iters: usize,
    pub sinkhorn: SinkhornConfig,
    pub descriptor: DescriptorSpec,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            outer_iters: DEFAULT_OUTER_ITERS,
            sinkhorn: SinkhornConfig::default(),
            descriptor: DescriptorSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Head architecture, e.g. `residual_cnn`, `lut3d:9`, `cnn:128+ccm`.
    pub head: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            head: "residual_cnn".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives head initialization, pair sampling and shuffling.
    pub seed: u64,
    /// Rayon worker count; 0 keeps the default.
    pub threads: usize,
    pub paths: Paths,
    /// Used when RAW patches carry no JSON sidecar.
    pub raw_dims: Option<RawDims>,
    pub rawproc: RawProcConfig,
    pub stitch: StitchConfig,
    pub matching: MatchConfig,
    pub pairs: PairGraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub source_raw: Option<PathBuf>,
    #[arg(long)]
    pub target_rgb: Option<PathBuf>,
    #[arg(long)]
    pub source_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub target_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub reference_rgb: Option<PathBuf>,
    /// Run directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    /// Learning rate for both stages.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

impl RunConfig {
    pub fn load(overrides: &Overrides) -> anyhow::Result<Self> {
        let mut cfg = match &overrides.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let mut cfg: RunConfig =
                    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.paths.resolve_against(base);
                cfg
            }
            None => RunConfig::default(),
        };
        cfg.apply(overrides);
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        let p = &mut self.paths;
        for (slot, value) in [
            (&mut p.source_raw, &o.source_raw),
            (&mut p.target_rgb, &o.target_rgb),
            (&mut p.source_embeddings, &o.source_embeddings),
            (&mut p.target_embeddings, &o.target_embeddings),
            (&mut p.reference_rgb, &o.reference_rgb),
            (&mut p.output, &o.out),
        ] {
            if value.is_some() {
                slot.clone_from(value);
            }
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.threads {
            self.threads = t;
        }
        if let Some(h) = &o.head {
            self.model.head.clone_from(h);
        }
        if let Some(e) = o.stage1_epochs {
            self.train.stage1.epochs = e;
        }
        if let Some(e) = o.stage2_epochs {
            self.train.stage2.epochs = e;
        }
        if let Some(lr) = o.lr {
            self.train.stage1.lr = lr;
            self.train.stage2.lr = lr;
        }
        if let Some(b) = o.batch_size {
            self.train.batch_size = b;
        }
        // one seed for the whole run
        self.train.seed = self.seed;
    }

    pub fn head_spec(&self) -> anyhow::Result<HeadSpec> {
        let spec: HeadSpec = self.model.head.parse()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn output(&self) -> &Path {
        self.paths.output.as_deref().expect("validated")
    }

    /// Checks values and that every referenced path exists.
    pub fn validate(&self) -> anyhow::Result<()> {
        let p = &self.paths;
        let Some(src) = &p.source_raw else {
            bail!("no source RAW directory given")
        };
        let Some(tgt) = &p.target_rgb else {
            bail!("no target RGB directory given")
        };
        if p.output.is_none() {
            bail!("no output directory given");
        }
        for dir in [Some(src), Some(tgt), p.reference_rgb.as_ref()]
            .into_iter()
            .flatten()
        {
            if !dir.is_dir() {
                bail!("{} is not a directory", dir.display());
            }
        }
        for file in [&p.source_embeddings, &p.target_embeddings].into_iter().flatten() {
            if !file.is_file() {
                bail!("embedding file {} does not exist", file.display());
            }
        }
        if p.source_embeddings.is_some() != p.target_embeddings.is_some() {
            bail!("embeddings must be given for both domains or neither");
        }
        self.rawproc.validate()?;
        if self.stitch.border == 0 {
            bail!("stitch border must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.matching.alpha) {
            bail!("alpha must lie in [0, 1], got {}", self.matching.alpha);
        }
        if self.matching.outer_iters == 0 {
            bail!("outer_iters must be at least 1");
        }
        self.matching.sinkhorn.validate()?;
        self.pairs.sinkhorn.validate()?;
        if self.pairs.top_images == 0 || self.pairs.candidates == 0 {
            bail!("pairs.top_images and pairs.candidates must be positive");
        }
        self.head_spec()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

impl Paths {
    fn resolve_against(&mut self, base: &Path) {
        for slot in [
            &mut self.source_raw,
            &mut self.target_rgb,
            &mut self.source_embeddings,
            &mut self.target_embeddings,
            &mut self.reference_rgb,
            &mut self.output,
        ] {
            if let Some(p) = slot.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}
