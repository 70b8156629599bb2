//! Patch-level pseudo-pair graph built on top of an image-level plan.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fgw::pairwise_sq_distances;
use super::matrix::Mat;
use super::sinkhorn::{sinkhorn, uniform, SinkhornConfig};
use crate::error::{Error, Result};

pub const DEFAULT_TOP_IMAGES: usize = 10;
pub const DEFAULT_CANDIDATES: usize = 8;

/// For each row, column indices by descending value (ties: lower index
/// first), truncated to `k`.
pub fn top_k_images(plan: &Mat, k: usize) -> Vec<Vec<usize>> {
    (0..plan.rows())
        .map(|i| {
            let row = plan.row(i);
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            idx.truncate(k);
            idx
        })
        .collect()
}

/// Patch descriptors with their parent image index.
#[derive(Clone, Debug, Default)]
pub struct PatchIndex {
    pub ids: Vec<String>,
    pub parents: Vec<usize>,
    pub vectors: Vec<Vec<f64>>,
}

impl PatchIndex {
    pub fn push(&mut self, id: impl Into<String>, parent: usize, vector: Vec<f64>) {
        self.ids.push(id.into());
        self.parents.push(parent);
        self.vectors.push(vector);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn of_parent(&self, parent: usize) -> Vec<usize> {
        (0..self.len()).filter(|&p| self.parents[p] == parent).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairGraphConfig {
    pub top_images: usize,
    pub candidates: usize,
    pub sinkhorn: SinkhornConfig,
}

impl Default for PairGraphConfig {
    fn default() -> Self {
        Self {
            top_images: DEFAULT_TOP_IMAGES,
            candidates: DEFAULT_CANDIDATES,
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub target_id: String,
    pub weight: f64,
}

/// One JSON-lines record: a source patch and its weighted candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub source_id: String,
    pub candidates: Vec<Candidate>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairGraph {
    entries: Vec<PairEntry>,
    index: HashMap<String, usize>,
    /// Patch id → parent image id, for both domains. Empty when loaded from disk.
    pub parents: HashMap<String, String>,
}

impl PairGraph {
    pub fn from_entries(entries: Vec<PairEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.candidates.is_empty() {
                return Err(Error::Config(format!(
                    "source `{}` has no candidates",
                    e.source_id
                )));
            }
            let total: f64 = e.candidates.iter().map(|c| c.weight).sum();
            if e.candidates.iter().any(|c| !(c.weight >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Range(format!(
                    "weights of `{}` must be non-negative and sum to 1 (got {total})",
                    e.source_id
                )));
            }
            if index.insert(e.source_id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate source `{}`", e.source_id)));
            }
        }
        Ok(Self {
            entries,
            index,
            parents: HashMap::new(),
        })
    }

    /// Every source paired with itself-named target at weight 1.
    pub fn identity<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        Self::from_entries(
            ids.iter()
                .map(|id| PairEntry {
                    source_id: id.as_ref().to_string(),
                    candidates: vec![Candidate {
                        target_id: id.as_ref().to_string(),
                        weight: 1.0,
                    }],
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[PairEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, source_id: &str) -> Option<&PairEntry> {
        self.index.get(source_id).map(|&i| &self.entries[i])
    }

    /// Draws a target for `source_id` with probability proportional to its weight.
    pub fn sample_target<R: Rng + ?Sized>(&self, source_id: &str, rng: &mut R) -> Result<&str> {
        let entry = self
            .get(source_id)
            .ok_or_else(|| Error::UnknownId(source_id.to_string()))?;
        if entry.candidates.len() == 1 {
            return Ok(&entry.candidates[0].target_id);
        }
        let dist = WeightedIndex::new(entry.candidates.iter().map(|c| c.weight))
            .map_err(|e| Error::Range(format!("weights of `{source_id}`: {e}")))?;
        Ok(&entry.candidates[dist.sample(rng)].target_id)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")
                .map_err(|err| Error::io("<pair graph>", err))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut entries = Vec::new();
        for line in input.lines() {
            let line = line.map_err(|e| Error::io("<pair graph>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        Self::from_entries(entries)
    }
}

/// Builds the sparse candidate graph.
///
/// For each source image, the candidate pool is every patch of its top
/// target images under `image_plan`. One Sinkhorn problem with uniform
/// marginals and squared-Euclidean cost couples the image's patches with
/// the pool; each patch-level weight is multiplied by the image-level plan
/// entry of the two parents, the best `candidates` are kept and the weights
/// renormalized.
pub fn build_pair_graph(
    image_plan: &Mat,
    source: &PatchIndex,
    target: &PatchIndex,
    cfg: &PairGraphConfig,
) -> Result<PairGraph> {
    if cfg.candidates == 0 || cfg.top_images == 0 {
        return Err(Error::Config("candidates and top_images must be positive".into()));
    }
    if let Some(&p) = source.parents.iter().find(|&&p| p >= image_plan.rows()) {
        return Err(Error::Shape(format!("source parent {p} outside the image plan")));
    }
    if let Some(&p) = target.parents.iter().find(|&&p| p >= image_plan.cols()) {
        return Err(Error::Shape(format!("target parent {p} outside the image plan")));
    }
    let ranked = top_k_images(image_plan, cfg.top_images);

    let per_image: Vec<Result<Vec<PairEntry>>> = (0..image_plan.rows())
        .into_par_iter()
        .map(|img| {
            let src: Vec<usize> = source.of_parent(img);
            if src.is_empty() {
                return Ok(Vec::new());
            }
            let pool: Vec<usize> = ranked[img].iter().flat_map(|&t| target.of_parent(t)).collect();
            if pool.is_empty() {
                return Err(Error::Config(format!(
                    "source image {img} has an empty candidate pool"
                )));
            }
            let sv: Vec<Vec<f64>> = src.iter().map(|&s| source.vectors[s].clone()).collect();
            let tv: Vec<Vec<f64>> = pool.iter().map(|&t| target.vectors[t].clone()).collect();
            let cost = pairwise_sq_distances(&sv, &tv);
            let plan = sinkhorn(&cost, &uniform(src.len()), &uniform(pool.len()), &cfg.sinkhorn)?;

            src.iter()
                .enumerate()
                .map(|(row, &s)| {
                    let mut weighted: Vec<(usize, f64)> = pool
                        .iter()
                        .enumerate()
                        .map(|(col, &t)| (t, plan.get(row, col) * image_plan.get(img, target.parents[t])))
                        .collect();
                    weighted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    weighted.truncate(cfg.candidates);
                    let total: f64 = weighted.iter().map(|w| w.1).sum();
                    if !(total > 0.0 && total.is_finite()) {
                        return Err(Error::Numerical(format!(
                            "candidate weights of `{}` vanish",
                            source.ids[s]
                        )));
                    }
                    Ok(PairEntry {
                        source_id: source.ids[s].clone(),
                        candidates: weighted
                            .into_iter()
                            .map(|(t, w)| Candidate {
                                target_id: target.ids[t].clone(),
                                weight: w / total,
                            })
                            .collect(),
                    })
                })
                .collect()
        })
        .collect();

    let mut entries = Vec::with_capacity(source.len());
    for r in per_image {
        entries.extend(r?);
    }
    PairGraph::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_images(&Mat::from_vec(1, 1, vec![1.0]), 10), vec![vec![0]]);
        let p = Mat::from_vec(3, 3, vec![0.3, 0.02, 0.01, 0.01, 0.3, 0.02, 0.02, 0.01, 0.3]);
        let r = top_k_images(&p, 3);
        assert_eq!(r[0][0], 0);
        assert_eq!(r[1][0], 1);
        assert_eq!(r[2][0], 2);
        // ties broken toward the lower index
        let t = Mat::from_vec(1, 4, vec![0.1, 0.2, 0.2, 0.1]);
        assert_eq!(top_k_images(&t, 4), vec![vec![1, 2, 0, 3]]);
    }

    #[test]
    fn top_k_matches_sort_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Mat::from_fn(5, 12, |_, _| rng.gen());
        let got = top_k_images(&p, 10);
        for i in 0..5 {
            // selection-sort oracle
            let mut remaining: Vec<usize> = (0..12).collect();
            let mut expect = Vec::new();
            while expect.len() < 10 {
                let mut best = 0;
                for k in 1..remaining.len() {
                    if p.get(i, remaining[k]) > p.get(i, remaining[best]) {
                        best = k;
                    }
                }
                expect.push(remaining.remove(best));
            }
            assert_eq!(got[i], expect);
        }
    }

    #[test]
    fn single_patch_single_image() {
        let mut s = PatchIndex::default();
        s.push("s0", 0, vec![0.0, 1.0]);
        let mut t = PatchIndex::default();
        t.push("t0", 0, vec![1.0, 0.0]);
        let g = build_pair_graph(
            &Mat::from_vec(1, 1, vec![1.0]),
            &s,
            &t,
            &PairGraphConfig::default(),
        )
        .unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(
            g.entries()[0].candidates,
            vec![Candidate {
                target_id: "t0".into(),
                weight: 1.0
            }]
        );
    }

    #[test]
    fn weights_follow_product_formula() {
        // two source patches in image 0; two target images with two patches each
        let mut s = PatchIndex::default();
        s.push("s0", 0, vec![0.0]);
        s.push("s1", 0, vec![1.0]);
        let mut t = PatchIndex::default();
        t.push("a0", 0, vec![0.1]);
        t.push("a1", 0, vec![0.9]);
        t.push("b0", 1, vec![0.2]);
        t.push("b1", 1, vec![0.7]);
        let image_plan = Mat::from_vec(1, 2, vec![0.7, 0.3]);
        let cfg = PairGraphConfig::default();
        let g = build_pair_graph(&image_plan, &s, &t, &cfg).unwrap();

        let cost = pairwise_sq_distances(
            &[vec![0.0], vec![1.0]],
            &[vec![0.1], vec![0.9], vec![0.2], vec![0.7]],
        );
        let patch = sinkhorn(&cost, &uniform(2), &uniform(4), &cfg.sinkhorn).unwrap();
        for (row, sid) in ["s0", "s1"].iter().enumerate() {
            let raw: Vec<f64> = (0..4)
                .map(|col| patch.get(row, col) * [0.7, 0.7, 0.3, 0.3][col])
                .collect();
            let total: f64 = raw.iter().sum();
            let entry = g.get(sid).unwrap();
            assert_eq!(entry.candidates.len(), 4);
            for c in &entry.candidates {
                let col = ["a0", "a1", "b0", "b1"]
                    .iter()
                    .position(|n| *n == c.target_id)
                    .unwrap();
                assert!((c.weight - raw[col] / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truncation_keeps_top_k_and_renormalizes() {
        let mut s = PatchIndex::default();
        s.push("s", 0, vec![0.0]);
        let mut t = PatchIndex::default();
        for k in 0..12 {
            t.push(format!("t{k}"), k % 3, vec![k as f64 * 0.1]);
        }
        let plan = Mat::from_vec(1, 3, vec![0.5, 0.3, 0.2]);
        let g = build_pair_graph(&plan, &s, &t, &PairGraphConfig::default()).unwrap();
        let e = g.get("s").unwrap();
        assert_eq!(e.candidates.len(), 8);
        let total: f64 = e.candidates.iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(e.candidates.windows(2).all(|w| w[0].weight >= w[1].weight));
    }

    #[test]
    fn empty_pool_is_config_error() {
        let mut s = PatchIndex::default();
        s.push("s", 0, vec![0.0]);
        let mut t = PatchIndex::default();
        t.push("t", 1, vec![0.0]);
        let plan = Mat::from_vec(1, 2, vec![0.9, 0.1]);
        let cfg = PairGraphConfig {
            top_images: 1,
            ..Default::default()
        };
        assert!(matches!(
            build_pair_graph(&plan, &s, &t, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sampling_examples() {
        let g = PairGraph::identity(&["x"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(g.sample_target("x", &mut rng).unwrap(), "x");
        }
        assert!(matches!(
            g.sample_target("nope", &mut rng),
            Err(Error::UnknownId(_))
        ));

        let g = PairGraph::from_entries(vec![PairEntry {
            source_id: "s".into(),
            candidates: vec![
                Candidate {
                    target_id: "a".into(),
                    weight: 0.5,
                },
                Candidate {
                    target_id: "b".into(),
                    weight: 0.5,
                },
            ],
        }])
        .unwrap();
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|_| g.sample_target("s", &mut rng).unwrap() == "a")
            .count();
        assert!((hits as f64 / draws as f64 - 0.5).abs() < 0.01);

        let seq = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| g.sample_target("s", &mut r).unwrap().to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(42), seq(42));
    }

    #[test]
    fn jsonl_round_trip() {
        let g = PairGraph::from_entries(vec![PairEntry {
            source_id: "s".into(),
            candidates: vec![
                Candidate {
                    target_id: "a".into(),
                    weight: 0.25,
                },
                Candidate {
                    target_id: "b".into(),
                    weight: 0.75,
                },
            ],
        }])
        .unwrap();
        let mut buf = Vec::new();
        g.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "{\"source_id\":\"s\",\"candidates\":[{\"target_id\":\"a\",\"weight\":0.25},{\"target_id\":\"b\",\"weight\":0.75}]}\n"
        );
        assert_eq!(PairGraph::read_jsonl(&buf[..]).unwrap(), g);
    }

    #[test]
    fn malformed_graphs_rejected() {
        let bad = PairEntry {
            source_id: "s".into(),
            candidates: vec![Candidate {
                target_id: "a".into(),
                weight: 0.6,
            }],
        };
        assert!(PairGraph::from_entries(vec![bad]).is_err());
        assert!(PairGraph::identity(&["a", "a"]).is_err());
    }
}
