//! Stage orchestration. Each stage reads the dataset and upstream outputs,
//! writes its own directory under the run directory, and records a report
//! whose inputs include the current output hashes of its upstream stages.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use pseudopair::imgcore::{load_raw, load_rgb, read_embeddings, save_png, EmbeddingSet, RawPatch, RgbImage};
use pseudopair::mapper::{infer, load_checkpoint, save_checkpoint, train};
use pseudopair::otmatch::{
    build_costs_from_vectors, build_pair_graph, composite_descriptor, fgw_match, uniform, Mat, PairGraph,
    PatchIndex,
};
use pseudopair::quality::evaluate;
use pseudopair::rawproc::preprocess;
use pseudopair::stitcher::{
    assemble, score_layouts, score_map_raw, score_map_rgb, select_layout, LayoutCandidate,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::dataset::{Manifest, RunManifest};
use crate::preview::{assemble_with_gaps, side_by_side};
use crate::report::{digest_of, sha256_file, sha256_json, write_json, StageReport, Status};

pub const RAW_EXTS: &[&str] = &["raw"];
pub const RGB_EXTS: &[&str] = &["png", "jpg", "jpeg"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Preprocess,
    Stitch,
    MatchImages,
    BuildPairs,
    Train,
    Infer,
    Eval,
    Preview,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Preprocess,
        Stage::Stitch,
        Stage::MatchImages,
        Stage::BuildPairs,
        Stage::Train,
        Stage::Infer,
        Stage::Eval,
        Stage::Preview,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Stitch => "stitch",
            Stage::MatchImages => "match-images",
            Stage::BuildPairs => "build-pairs",
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Eval => "eval",
            Stage::Preview => "preview",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Preprocess => &[],
            Stage::Stitch => &[Stage::Preprocess],
            Stage::MatchImages => &[Stage::Stitch],
            Stage::BuildPairs => &[Stage::Stitch, Stage::MatchImages],
            Stage::Train => &[Stage::Preprocess, Stage::Stitch, Stage::BuildPairs],
            Stage::Infer => &[Stage::Preprocess, Stage::Train],
            Stage::Eval => &[Stage::Infer],
            Stage::Preview => &[Stage::Stitch, Stage::Infer],
        }
    }

    fn dir(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Stitch => "stitch",
            Stage::MatchImages => "match",
            Stage::BuildPairs => "pairs",
            Stage::Train => "train",
            Stage::Infer => "predictions",
            Stage::Eval => "eval",
            Stage::Preview => "preview",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Errors that should map to the validation exit code.
#[derive(Debug)]
pub struct ValidationError(pub anyhow::Error);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ValidationError {}

fn invalid(e: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(ValidationError(e))
}

/// What a stage produced.
struct StageOutput {
    files: Vec<PathBuf>,
    details: serde_json::Value,
    warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePlan {
    pub source_ids: Vec<String>,
    pub target_ids: Vec<String>,
    pub plan: Vec<Vec<f64>>,
    /// Fused objective after the product initialization and each outer iterate.
    pub objectives: Vec<f64>,
    pub converged: bool,
    pub violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StitchReport {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "R")]
    pub rows: usize,
    #[serde(rename = "C")]
    pub cols: usize,
    pub score: f64,
    pub all_candidate_scores: Vec<LayoutCandidate>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Domain {
    Source,
    Target,
}

impl Domain {
    fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

pub struct Pipeline {
    cfg: RunConfig,
    run_dir: PathBuf,
    discovered: RunManifest,
    raws: OnceLock<Vec<RawPatch>>,
    pseudo: OnceLock<Vec<RgbImage>>,
    targets: OnceLock<Vec<RgbImage>>,
    embeddings: OnceLock<Option<(EmbeddingSet, EmbeddingSet)>>,
}

impl Pipeline {
    /// Validates the configuration and discovers the dataset. Every failure
    /// here is a validation error.
    pub fn new(cfg: RunConfig) -> anyhow::Result<Self> {
        cfg.validate().map_err(invalid)?;
        let source =
            Manifest::discover(cfg.paths.source_raw.as_deref().unwrap(), RAW_EXTS).map_err(invalid)?;
        let target =
            Manifest::discover(cfg.paths.target_rgb.as_deref().unwrap(), RGB_EXTS).map_err(invalid)?;
        if cfg.paths.source_embeddings.is_none() && !cfg.matching.descriptor.color_statistics {
            return Err(invalid(anyhow!(
                "descriptors would be empty: give embeddings or enable matching.descriptor.color_statistics"
            )));
        }
        Ok(Self {
            run_dir: cfg.output().to_path_buf(),
            cfg,
            discovered: RunManifest { source, target },
            raws: OnceLock::new(),
            pseudo: OnceLock::new(),
            targets: OnceLock::new(),
            embeddings: OnceLock::new(),
        })
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    /// Writes the effective configuration next to the reports.
    pub fn snapshot_config(&self) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.run_dir)?;
        std::fs::write(self.run_dir.join("config.toml"), self.cfg.to_toml())?;
        Ok(())
    }

    /// Runs `stage` unless its report is current. Upstream reports must exist.
    pub fn execute(&self, stage: Stage) -> anyhow::Result<StageReport> {
        let (inputs, mut warnings) = self.inputs_for(stage)?;
        let input_digest = digest_of(&inputs);
        if let Some(prev) = StageReport::load(&self.run_dir, stage.name()) {
            if prev.is_current(&self.run_dir, &input_digest) {
                eprintln!("[{stage}] up to date, skipped");
                return Ok(prev);
            }
        }
        eprintln!("[{stage}] running");
        let start = Instant::now();
        let dir = self.run_dir.join(stage.dir());
        if dir.exists() {
            std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        std::fs::create_dir_all(&dir)?;
        let result = self.run_stage(stage);
        let mut report = StageReport {
            stage: stage.name().into(),
            status: Status::Ok,
            seed: self.cfg.seed,
            inputs,
            input_digest,
            outputs: BTreeMap::new(),
            output_digest: String::new(),
            elapsed_ms: 0,
            warnings: Vec::new(),
            error: None,
            details: serde_json::Value::Null,
        };
        let outcome = result.and_then(|out| {
            for file in &out.files {
                let rel = file.strip_prefix(&self.run_dir).unwrap_or(file);
                report
                    .outputs
                    .insert(rel.to_string_lossy().into_owned(), sha256_file(file)?);
            }
            warnings.extend(out.warnings);
            report.details = out.details;
            Ok(())
        });
        report.output_digest = digest_of(&report.outputs);
        report.elapsed_ms = start.elapsed().as_millis();
        report.warnings = warnings;
        for w in &report.warnings {
            eprintln!("[{stage}] warning: {w}");
        }
        if let Err(e) = outcome {
            report.status = Status::Failed;
            report.error = Some(format!("{e:#}"));
            report.save(&self.run_dir)?;
            return Err(e.context(format!("stage `{stage}` failed")));
        }
        report.save(&self.run_dir)?;
        eprintln!("[{stage}] done in {} ms", report.elapsed_ms);
        Ok(report)
    }

    fn inputs_for(&self, stage: Stage) -> anyhow::Result<(BTreeMap<String, String>, Vec<String>)> {
        let mut inputs = BTreeMap::new();
        let mut warnings = Vec::new();
        for &dep in stage.deps() {
            let Some(report) =
                StageReport::load(&self.run_dir, dep.name()).filter(|r| r.status == Status::Ok)
            else {
                return Err(invalid(anyhow!(
                    "stage `{stage}` needs a successful `{dep}` stage in {}; run it first",
                    self.run_dir.display()
                )));
            };
            let current: BTreeMap<String, String> = report
                .outputs
                .keys()
                .map(|rel| {
                    let hash = sha256_file(&self.run_dir.join(rel)).unwrap_or_else(|_| "missing".into());
                    (rel.clone(), hash)
                })
                .collect();
            let digest = digest_of(&current);
            if digest != report.output_digest {
                warnings.push(format!("outputs of `{dep}` changed since it ran"));
            }
            inputs.insert(format!("stage:{dep}"), digest);
        }
        let cfg = &self.cfg;
        let mut put = |k: &str, v: String| {
            inputs.insert(k.to_string(), v);
        };
        match stage {
            Stage::Preprocess => {
                put("config:rawproc", sha256_json(&(&cfg.rawproc, &cfg.raw_dims)));
                for rec in &self.discovered.source.patches {
                    put(&format!("source:{}", rec.id), sha256_file(&rec.file)?);
                    let sidecar = rec.file.with_extension("json");
                    if sidecar.is_file() {
                        put(&format!("source:{}.json", rec.id), sha256_file(&sidecar)?);
                    }
                }
            }
            Stage::Stitch => {
                put("config:stitch", sha256_json(&cfg.stitch));
                for rec in &self.discovered.target.patches {
                    put(&format!("target:{}", rec.id), sha256_file(&rec.file)?);
                }
            }
            Stage::MatchImages => {
                put("config:matching", sha256_json(&cfg.matching));
                self.put_embedding_hashes(&mut put)?;
            }
            Stage::BuildPairs => {
                put(
                    "config:pairs",
                    sha256_json(&(&cfg.pairs, &cfg.matching.descriptor)),
                );
                self.put_embedding_hashes(&mut put)?;
            }
            Stage::Train => {
                put("config:train", sha256_json(&(&cfg.train, &cfg.model, cfg.seed)));
            }
            Stage::Infer => {
                put("config:rawproc", sha256_json(&(&cfg.rawproc, &cfg.raw_dims)));
            }
            Stage::Eval => {
                if let Some(dir) = &cfg.paths.reference_rgb {
                    let refs = Manifest::discover(dir, RGB_EXTS).map_err(invalid)?;
                    for rec in &refs.patches {
                        put(&format!("reference:{}", rec.id), sha256_file(&rec.file)?);
                    }
                }
            }
            Stage::Preview => {}
        }
        Ok((inputs, warnings))
    }

    fn put_embedding_hashes(&self, put: &mut impl FnMut(&str, String)) -> anyhow::Result<()> {
        let p = &self.cfg.paths;
        for (key, path) in [
            ("embeddings:source", &p.source_embeddings),
            ("embeddings:target", &p.target_embeddings),
        ] {
            if let Some(path) = path {
                put(key, sha256_file(path)?);
            }
        }
        Ok(())
    }

    fn run_stage(&self, stage: Stage) -> anyhow::Result<StageOutput> {
        match stage {
            Stage::Preprocess => self.preprocess(),
            Stage::Stitch => self.stitch(),
            Stage::MatchImages => self.match_images(),
            Stage::BuildPairs => self.build_pairs(),
            Stage::Train => self.train(),
            Stage::Infer => self.infer(),
            Stage::Eval => self.eval(),
            Stage::Preview => self.preview(),
        }
    }

    fn raws(&self) -> anyhow::Result<&[RawPatch]> {
        if self.raws.get().is_none() {
            let dims = self.cfg.raw_dims;
            let raws: Vec<RawPatch> = self
                .discovered
                .source
                .patches
                .par_iter()
                .map(|rec| {
                    let has_sidecar = rec.file.with_extension("json").is_file();
                    if !has_sidecar && dims.is_none() {
                        bail!(
                            "{} has no JSON sidecar and no raw_dims are configured",
                            rec.file.display()
                        );
                    }
                    load_raw(&rec.file, if has_sidecar { None } else { dims })
                        .with_context(|| format!("loading {}", rec.file.display()))
                })
                .collect::<anyhow::Result<_>>()?;
            let (h, w) = (raws[0].height(), raws[0].width());
            if let Some(bad) = raws.iter().position(|r| (r.height(), r.width()) != (h, w)) {
                bail!(
                    "RAW patch `{}` is {}×{}, expected {h}×{w}",
                    self.discovered.source.patches[bad].id,
                    raws[bad].height(),
                    raws[bad].width()
                );
            }
            let _ = self.raws.set(raws);
        }
        Ok(self.raws.get().unwrap())
    }

    /// Pseudo-RGB source patches.
    fn pseudo(&self) -> anyhow::Result<&[RgbImage]> {
        if self.pseudo.get().is_none() {
            let out: Vec<RgbImage> = self
                .raws()?
                .par_iter()
                .map(|r| preprocess(r, &self.cfg.rawproc))
                .collect::<Result<_, _>>()?;
            let _ = self.pseudo.set(out);
        }
        Ok(self.pseudo.get().unwrap())
    }

    fn targets(&self) -> anyhow::Result<&[RgbImage]> {
        if self.targets.get().is_none() {
            let out: Vec<RgbImage> = self
                .discovered
                .target
                .patches
                .par_iter()
                .map(|rec| load_rgb(&rec.file).with_context(|| format!("loading {}", rec.file.display())))
                .collect::<anyhow::Result<_>>()?;
            let _ = self.targets.set(out);
        }
        Ok(self.targets.get().unwrap())
    }

    fn patches(&self, domain: Domain) -> anyhow::Result<&[RgbImage]> {
        match domain {
            Domain::Source => self.pseudo(),
            Domain::Target => self.targets(),
        }
    }

    fn embeddings(&self) -> anyhow::Result<Option<&(EmbeddingSet, EmbeddingSet)>> {
        if self.embeddings.get().is_none() {
            let p = &self.cfg.paths;
            let sets = match (&p.source_embeddings, &p.target_embeddings) {
                (Some(s), Some(t)) => {
                    let (s, t) = (read_embeddings(s)?, read_embeddings(t)?);
                    if s.dim() != t.dim() {
                        bail!("embedding dimensions differ: {} vs {}", s.dim(), t.dim());
                    }
                    Some((s, t))
                }
                _ => None,
            };
            let _ = self.embeddings.set(sets);
        }
        Ok(self.embeddings.get().unwrap().as_ref())
    }

    fn domain_manifest<'a>(&'a self, m: &'a RunManifest, domain: Domain) -> &'a Manifest {
        match domain {
            Domain::Source => &m.source,
            Domain::Target => &m.target,
        }
    }

    /// The manifest written by `stitch`, checked against the dataset on disk.
    fn stitched_manifest(&self) -> anyhow::Result<RunManifest> {
        let path = self.run_dir.join(Stage::Stitch.dir()).join("manifest.json");
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        for domain in [Domain::Source, Domain::Target] {
            let ids = |m: &Manifest| m.patches.iter().map(|p| p.id.clone()).collect::<Vec<_>>();
            if ids(self.domain_manifest(&m, domain)) != ids(self.domain_manifest(&self.discovered, domain)) {
                return Err(invalid(anyhow!(
                    "{} patches changed since `stitch` ran; rerun it",
                    domain.name()
                )));
            }
        }
        Ok(m)
    }

    /// Grid-ordered patches of one image, as laid out by `stitch`.
    fn grid_tiles<T: Clone>(
        manifest: &Manifest,
        image: usize,
        mut tile: impl FnMut(usize) -> T,
    ) -> anyhow::Result<(Vec<T>, usize, usize)> {
        let group = &manifest.images[image];
        let (rows, cols) = layout_of(manifest, image)?;
        let mut slots: Vec<Option<T>> = vec![None; rows * cols];
        for &p in &group.patches {
            let g = manifest.patches[p].grid.expect("checked by layout_of");
            slots[g.row * cols + g.col] = Some(tile(p));
        }
        let tiles = slots
            .into_iter()
            .collect::<Option<Vec<T>>>()
            .ok_or_else(|| anyhow!("grid of image `{}` has holes", group.id))?;
        Ok((tiles, rows, cols))
    }

    fn stitched_image(&self, manifest: &Manifest, domain: Domain, image: usize) -> anyhow::Result<RgbImage> {
        let patches = self.patches(domain)?;
        let (tiles, rows, cols) = Self::grid_tiles(manifest, image, |p| patches[p].clone())?;
        Ok(assemble(&tiles, rows, cols)?)
    }

    fn descriptor(&self, semantic: Option<&[f32]>, image: &RgbImage) -> Vec<f64> {
        composite_descriptor(semantic, Some(image), &self.cfg.matching.descriptor)
    }

    fn preprocess(&self) -> anyhow::Result<StageOutput> {
        let dir = self.run_dir.join(Stage::Preprocess.dir());
        let pseudo = self.pseudo()?;
        let files: Vec<PathBuf> = self
            .discovered
            .source
            .patches
            .par_iter()
            .zip(pseudo)
            .map(|(rec, img)| {
                let path = dir.join(format!("{}.png", rec.id));
                save_png(img, &path)?;
                Ok(path)
            })
            .collect::<anyhow::Result<_>>()?;
        let raw = &self.raws()?[0];
        Ok(StageOutput {
            files,
            details: json!({
                "patches": pseudo.len(),
                "raw_size": [raw.height(), raw.width()],
                "rgb_size": [pseudo[0].height(), pseudo[0].width()],
            }),
            warnings: Vec::new(),
        })
    }

    fn stitch(&self) -> anyhow::Result<StageOutput> {
        let dir = self.run_dir.join(Stage::Stitch.dir());
        let mut manifest = self.discovered.clone();
        let mut files = Vec::new();
        let mut summary = Vec::new();
        for domain in [Domain::Source, Domain::Target] {
            let sub = dir.join(domain.name());
            std::fs::create_dir_all(&sub)?;
            let patches = self.patches(domain)?;
            let m = match domain {
                Domain::Source => &mut manifest.source,
                Domain::Target => &mut manifest.target,
            };
            for image in 0..m.images.len() {
                let members = m.images[image].patches.clone();
                let id = m.images[image].id.clone();
                let maps = match domain {
                    Domain::Source => {
                        let raws = self.raws()?;
                        members
                            .iter()
                            .map(|&p| score_map_raw(&raws[p], &self.cfg.rawproc))
                            .collect::<Vec<_>>()
                    }
                    Domain::Target => members.iter().map(|&p| score_map_rgb(&patches[p])).collect(),
                };
                let candidates = if maps.len() == 1 {
                    vec![LayoutCandidate {
                        rows: 1,
                        cols: 1,
                        score: 0.0,
                    }]
                } else {
                    score_layouts(&maps, self.cfg.stitch.border)
                        .with_context(|| format!("scoring layouts of {} image `{id}`", domain.name()))?
                };
                let best = select_layout(&candidates).expect("at least one layout");
                let tiles: Vec<RgbImage> = members.iter().map(|&p| patches[p].clone()).collect();
                let full = assemble(&tiles, best.rows, best.cols)
                    .with_context(|| format!("assembling {} image `{id}`", domain.name()))?;
                m.set_layout(image, best.cols);

                let png = sub.join(format!("{id}.png"));
                save_png(&full, &png)?;
                let report_path = sub.join(format!("{id}.json"));
                write_json(
                    &report_path,
                    &StitchReport {
                        n: members.len(),
                        rows: best.rows,
                        cols: best.cols,
                        score: best.score,
                        all_candidate_scores: candidates,
                    },
                )?;
                files.extend([png, report_path]);
                summary.push(json!({
                    "domain": domain.name(),
                    "image": id,
                    "N": members.len(),
                    "R": best.rows,
                    "C": best.cols,
                    "score": best.score,
                }));
            }
        }
        let manifest_path = dir.join("manifest.json");
        write_json(&manifest_path, &manifest)?;
        files.push(manifest_path);
        Ok(StageOutput {
            files,
            details: json!({ "images": summary }),
            warnings: Vec::new(),
        })
    }

    fn image_descriptors(&self, manifest: &RunManifest, domain: Domain) -> anyhow::Result<Vec<Vec<f64>>> {
        let m = self.domain_manifest(manifest, domain);
        let emb = self.embeddings()?.map(|(s, t)| match domain {
            Domain::Source => s,
            Domain::Target => t,
        });
        (0..m.images.len())
            .map(|i| {
                let id = &m.images[i].id;
                let semantic = match emb {
                    Some(set) => Some(set.get(id).ok_or_else(|| {
                        anyhow!("{} embeddings have no record for image `{id}`", domain.name())
                    })?),
                    None => None,
                };
                Ok(self.descriptor(semantic, &self.stitched_image(m, domain, i)?))
            })
            .collect()
    }

    fn match_images(&self) -> anyhow::Result<StageOutput> {
        let manifest = self.stitched_manifest()?;
        let src = self.image_descriptors(&manifest, Domain::Source)?;
        let tgt = self.image_descriptors(&manifest, Domain::Target)?;
        let mc = &self.cfg.matching;
        let costs = build_costs_from_vectors(&src, &tgt, mc.alpha)?;
        let result = fgw_match(
            &costs,
            &uniform(src.len()),
            &uniform(tgt.len()),
            &mc.sinkhorn,
            mc.outer_iters,
        )?;
        let plan = &result.plan;
        let out = ImagePlan {
            source_ids: manifest.source.images.iter().map(|g| g.id.clone()).collect(),
            target_ids: manifest.target.images.iter().map(|g| g.id.clone()).collect(),
            plan: (0..plan.plan.rows()).map(|i| plan.plan.row(i).to_vec()).collect(),
            objectives: result.objectives.clone(),
            converged: plan.converged,
            violation: plan.violation,
        };
        let path = self
            .run_dir
            .join(Stage::MatchImages.dir())
            .join("image_plan.json");
        write_json(&path, &out)?;
        let best: Vec<_> = out
            .plan
            .iter()
            .zip(&out.source_ids)
            .map(|(row, s)| {
                let j = (0..row.len())
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                    .unwrap();
                json!({ "source": s, "target": out.target_ids[j], "mass": row[j] })
            })
            .collect();
        let mut warnings = Vec::new();
        if !plan.converged {
            warnings.push(format!(
                "image-level Sinkhorn did not converge (violation {:.3e})",
                plan.violation
            ));
        }
        Ok(StageOutput {
            files: vec![path],
            details: json!({
                "descriptor_dim": src.first().map_or(0, Vec::len),
                "final_objective": out.objectives.last(),
                "converged": plan.converged,
                "violation": plan.violation,
                "best_match": best,
            }),
            warnings,
        })
    }

    fn patch_index(&self, m: &Manifest, domain: Domain, use_semantic: bool) -> anyhow::Result<PatchIndex> {
        let patches = self.patches(domain)?;
        let emb = self.embeddings()?.map(|(s, t)| match domain {
            Domain::Source => s,
            Domain::Target => t,
        });
        let mut index = PatchIndex::default();
        for (image, group) in m.images.iter().enumerate() {
            for &p in &group.patches {
                let rec = &m.patches[p];
                let semantic = if use_semantic {
                    emb.and_then(|e| e.get(&rec.id))
                } else {
                    None
                };
                index.push(rec.id.clone(), image, self.descriptor(semantic, &patches[p]));
            }
        }
        Ok(index)
    }

    fn build_pairs(&self) -> anyhow::Result<StageOutput> {
        let manifest = self.stitched_manifest()?;
        let plan_path = self
            .run_dir
            .join(Stage::MatchImages.dir())
            .join("image_plan.json");
        let plan: ImagePlan = serde_json::from_reader(BufReader::new(
            std::fs::File::open(&plan_path).with_context(|| format!("opening {}", plan_path.display()))?,
        ))?;
        if plan.source_ids.len() != manifest.source.images.len()
            || plan.target_ids.len() != manifest.target.images.len()
        {
            bail!("image plan does not match the stitched manifest; rerun `match-images`");
        }
        let mat = Mat::from_vec(
            plan.source_ids.len(),
            plan.target_ids.len(),
            plan.plan.iter().flatten().copied().collect(),
        );
        // patch-level semantic vectors only when every patch has one
        let use_semantic = self.embeddings()?.is_some_and(|(s, t)| {
            manifest.source.patches.iter().all(|p| s.get(&p.id).is_some())
                && manifest.target.patches.iter().all(|p| t.get(&p.id).is_some())
        });
        let src = self.patch_index(&manifest.source, Domain::Source, use_semantic)?;
        let tgt = self.patch_index(&manifest.target, Domain::Target, use_semantic)?;
        let graph = build_pair_graph(&mat, &src, &tgt, &self.cfg.pairs)?;

        let path = self.run_dir.join(Stage::BuildPairs.dir()).join("pairs.jsonl");
        let file = std::fs::File::create(&path)?;
        graph.write_jsonl(BufWriter::new(file))?;

        let parent_of: HashMap<&str, &str> = manifest
            .target
            .patches
            .iter()
            .map(|p| (p.id.as_str(), p.parent_image_id.as_str()))
            .collect();
        let distinct_parents: f64 = graph
            .entries()
            .iter()
            .map(|e| {
                let mut ps: Vec<&str> = e
                    .candidates
                    .iter()
                    .map(|c| parent_of[c.target_id.as_str()])
                    .collect();
                ps.sort_unstable();
                ps.dedup();
                ps.len() as f64
            })
            .sum::<f64>()
            / graph.len() as f64;
        Ok(StageOutput {
            files: vec![path],
            details: json!({
                "sources": graph.len(),
                "mean_candidates": graph.entries().iter().map(|e| e.candidates.len()).sum::<usize>() as f64 / graph.len() as f64,
                "mean_distinct_target_images": distinct_parents,
                "patch_semantic_embeddings": use_semantic,
            }),
            warnings: Vec::new(),
        })
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.run_dir.join(Stage::Train.dir()).join("head.ckpt")
    }

    fn train(&self) -> anyhow::Result<StageOutput> {
        let manifest = self.stitched_manifest()?;
        let path = self.run_dir.join(Stage::BuildPairs.dir()).join("pairs.jsonl");
        let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let graph = PairGraph::read_jsonl(BufReader::new(file))?;
        let by_id = |m: &Manifest, imgs: &[RgbImage]| -> HashMap<String, RgbImage> {
            m.patches
                .iter()
                .map(|p| p.id.clone())
                .zip(imgs.iter().cloned())
                .collect()
        };
        let sources = by_id(&manifest.source, self.pseudo()?);
        let targets = by_id(&manifest.target, self.targets()?);

        let spec = self.cfg.head_spec()?;
        let mut head = spec.build(self.cfg.seed)?;
        let report = train(&mut head, &graph, &sources, &targets, &self.cfg.train)?;
        let stage = if self.cfg.train.stage2.epochs > 0 { 2 } else { 1 };
        let ckpt = self.checkpoint_path();
        save_checkpoint(&head, self.cfg.seed, stage, &ckpt)?;
        let losses = self.run_dir.join(Stage::Train.dir()).join("losses.json");
        write_json(&losses, &report)?;
        Ok(StageOutput {
            files: vec![ckpt, losses],
            details: json!({
                "head": spec.name(),
                "param_count": head.param_count(),
                "steps": report.steps,
                "epochs": report.epochs.len(),
                "first_loss": report.losses().first(),
                "final_loss": report.losses().last(),
            }),
            warnings: Vec::new(),
        })
    }

    fn infer(&self) -> anyhow::Result<StageOutput> {
        let (header, head) = load_checkpoint(self.checkpoint_path())?;
        let preds = infer(&head, self.raws()?, &self.cfg.rawproc)?;
        let dir = self.run_dir.join(Stage::Infer.dir());
        let files: Vec<PathBuf> = self
            .discovered
            .source
            .patches
            .par_iter()
            .zip(&preds)
            .map(|(rec, img)| {
                let path = dir.join(format!("{}.png", rec.id));
                save_png(img, &path)?;
                Ok(path)
            })
            .collect::<anyhow::Result<_>>()?;
        Ok(StageOutput {
            files,
            details: json!({ "patches": preds.len(), "head": header.head_type, "trained_stage": header.stage }),
            warnings: Vec::new(),
        })
    }

    fn eval(&self) -> anyhow::Result<StageOutput> {
        let Some(ref_dir) = &self.cfg.paths.reference_rgb else {
            return Ok(StageOutput {
                files: Vec::new(),
                details: json!({ "evaluated": false, "reason": "no reference_rgb configured" }),
                warnings: Vec::new(),
            });
        };
        let refs = Manifest::discover(ref_dir, RGB_EXTS)?;
        let ref_file: HashMap<&str, &Path> = refs
            .patches
            .iter()
            .map(|p| (p.id.as_str(), p.file.as_path()))
            .collect();
        let pred_dir = self.run_dir.join(Stage::Infer.dir());
        let pseudo = self.pseudo()?;
        let loaded: Vec<((String, RgbImage, RgbImage), (String, RgbImage, RgbImage))> = self
            .discovered
            .source
            .patches
            .par_iter()
            .zip(pseudo)
            .map(|(rec, input)| {
                let file = ref_file
                    .get(rec.id.as_str())
                    .ok_or_else(|| anyhow!("no reference image for patch `{}`", rec.id))?;
                let gt = load_rgb(file)?;
                let pred = load_rgb(pred_dir.join(format!("{}.png", rec.id)))?;
                Ok((
                    (rec.id.clone(), pred, gt.clone()),
                    (rec.id.clone(), input.clone(), gt),
                ))
            })
            .collect::<anyhow::Result<_>>()?;
        let (pred_pairs, input_pairs): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
        let report = evaluate(&pred_pairs)?;
        let baseline = evaluate(&input_pairs)?;
        let dir = self.run_dir.join(Stage::Eval.dir());
        let json_path = dir.join("metrics.json");
        write_json(&json_path, &report)?;
        let csv_path = dir.join("metrics.csv");
        std::fs::write(&csv_path, report.to_csv())?;
        Ok(StageOutput {
            files: vec![json_path, csv_path],
            details: json!({
                "evaluated": true,
                "count": report.count,
                "mean_psnr": report.mean_psnr,
                "mean_ssim": report.mean_ssim,
                "mean_delta_e": report.mean_delta_e,
                "input_mean_psnr": baseline.mean_psnr,
                "input_mean_ssim": baseline.mean_ssim,
                "input_mean_delta_e": baseline.mean_delta_e,
            }),
            warnings: Vec::new(),
        })
    }

    fn preview(&self) -> anyhow::Result<StageOutput> {
        let manifest = self.stitched_manifest()?;
        let m = &manifest.source;
        let pseudo = self.pseudo()?;
        let pred_dir = self.run_dir.join(Stage::Infer.dir());
        let dir = self.run_dir.join(Stage::Preview.dir());
        let mut files = Vec::new();
        let mut warnings = Vec::new();
        let mut images = Vec::new();
        for (i, group) in m.images.iter().enumerate() {
            let (inputs, rows, cols) = Self::grid_tiles(m, i, |p| pseudo[p].clone())?;
            let (ids, _, _) = Self::grid_tiles(m, i, |p| m.patches[p].id.clone())?;
            let preds: Vec<Option<RgbImage>> = ids
                .iter()
                .map(|id| {
                    let path = pred_dir.join(format!("{id}.png"));
                    path.is_file().then(|| load_rgb(&path)).transpose()
                })
                .collect::<Result<_, _>>()?;
            let left = assemble(&inputs, rows, cols)?;
            let (right, missing) = assemble_with_gaps(&preds, rows, cols)
                .with_context(|| format!("previewing image `{}`", group.id))?;
            let missing: Vec<&str> = missing.iter().map(|&k| ids[k].as_str()).collect();
            for id in &missing {
                warnings.push(format!(
                    "image `{}`: prediction for patch `{id}` is missing (gray tile)",
                    group.id
                ));
            }
            let path = dir.join(format!("{}.png", group.id));
            save_png(&side_by_side(&left, &right)?, &path)?;
            files.push(path);
            images.push(json!({ "image": group.id, "rows": rows, "cols": cols, "missing": missing }));
        }
        Ok(StageOutput {
            files,
            details: json!({ "images": images }),
            warnings,
        })
    }
}

/// `(rows, cols)` of an image from its grid positions.
pub fn layout_of(m: &Manifest, image: usize) -> anyhow::Result<(usize, usize)> {
    let group = &m.images[image];
    let mut rows = 0;
    let mut cols = 0;
    for &p in &group.patches {
        let g = m.patches[p]
            .grid
            .ok_or_else(|| anyhow!("patch `{}` has no grid position", m.patches[p].id))?;
        rows = rows.max(g.row + 1);
        cols = cols.max(g.col + 1);
    }
    if rows * cols != group.patches.len() {
        bail!(
            "grid of image `{}` is not a full {rows}×{cols} rectangle",
            group.id
        );
    }
    Ok((rows, cols))
}
