//! Shared finite-difference audit used by the gradient tests and the
//! acceptance suite.

#![allow(dead_code)]

pub mod reference;

use pseudopair::imgcore::{FeatureMap, FeatureMapSet, RgbImage};
use pseudopair::mapper::{Head, HeadSpec};
use pseudopair::objective::{
    gram_loss, hist_loss_uv, hist_loss_y, moment_loss, total_loss, tv_loss, LossWeights, SoftHistogramSpec,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
/// Denominator floor of the relative error, so near-zero gradients are
/// compared absolutely.
pub const FLOOR: f64 = 1e-6;
pub const LOSS_TOL: f64 = 1e-4;
pub const HEAD_TOL: f64 = 1e-3;

#[derive(Clone, Debug, Default)]
pub struct FdOutcome {
    pub requested: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst: f64,
}

impl FdOutcome {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked == self.requested && self.worst < tol
    }
}

pub fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(FLOOR)
}

/// Relative disagreement between the central differences at `STEP` and
/// `STEP / 2` above which the interval is taken to straddle a kink. Smooth
/// points agree to O(STEP²), far below this.
pub const KINK_REL: f64 = 1e-5;

/// Compares `analytic` against central differences of `f` at `points`
/// random coordinates of `x0`. A coordinate is redrawn when its interval
/// contains a kink: the one-sided differences disagree, or the central
/// difference changes when the step is halved. Both tests compare finite
/// differences with each other, never with `analytic`.
pub fn fd_audit(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    analytic: &[f64],
    points: usize,
    rng: &mut ChaCha8Rng,
) -> FdOutcome {
    assert_eq!(x0.len(), analytic.len());
    let f0 = f(x0);
    let mut out = FdOutcome {
        requested: points,
        ..Default::default()
    };
    let mut x = x0.to_vec();
    let mut eval_at = |x: &mut Vec<f64>, i: usize, d: f64| {
        x[i] = x0[i] + d;
        let v = f(x);
        x[i] = x0[i];
        v
    };
    let mut attempts = 0;
    while out.checked < points && attempts < points * 50 {
        attempts += 1;
        let i = rng.gen_range(0..x.len());
        let (fp, fm) = (eval_at(&mut x, i, STEP), eval_at(&mut x, i, -STEP));
        let (hp, hm) = (eval_at(&mut x, i, STEP / 2.0), eval_at(&mut x, i, -STEP / 2.0));
        let fwd = (fp - f0) / STEP;
        let bwd = (f0 - fm) / STEP;
        let central = (fp - fm) / (2.0 * STEP);
        let half = (hp - hm) / STEP;
        let scale = central.abs().max(half.abs()).max(FLOOR);
        if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()).max(FLOOR)
            || (central - half).abs() > KINK_REL * scale
        {
            out.skipped_kinks += 1;
            continue;
        }
        out.worst = out.worst.max(rel_err(central, analytic[i]));
        out.checked += 1;
    }
    out
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbImage {
    RgbImage::from_fn(h, w, |_, _| {
        [
            rng.gen_range(0.02..0.98),
            rng.gen_range(0.02..0.98),
            rng.gen_range(0.02..0.98),
        ]
    })
}

fn with_data(like: &RgbImage, data: &[f64]) -> RgbImage {
    RgbImage::new(like.height(), like.width(), data.to_vec()).unwrap()
}

/// One audit per loss term plus the weighted total, each with respect to
/// the predicted pixels (Gram: the predicted features).
pub fn loss_audits(seed: u64, points: usize) -> Vec<(String, FdOutcome)> {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let pred = random_image(&mut rng, 8, 8);
    let target = random_image(&mut rng, 8, 8);
    let spec = SoftHistogramSpec::default();
    let x0 = pred.data().to_vec();
    let mut out = Vec::new();

    type PixelLoss = Box<dyn Fn(&RgbImage, &RgbImage) -> (f64, Vec<f64>)>;
    let terms: Vec<(&str, PixelLoss)> = vec![
        (
            "moment",
            Box::new(|p, t| {
                let l = moment_loss(p, t);
                (l.value, l.grad)
            }),
        ),
        (
            "hist_y",
            Box::new(move |p, t| {
                let l = hist_loss_y(p, t, spec.bins_y);
                (l.value, l.grad)
            }),
        ),
        (
            "hist_uv",
            Box::new(move |p, t| {
                let l = hist_loss_uv(p, t, spec.bins_uv);
                (l.value, l.grad)
            }),
        ),
        (
            "tv",
            Box::new(|p, _| {
                let l = tv_loss(p);
                (l.value, l.grad)
            }),
        ),
        (
            "total",
            Box::new(move |p, t| {
                let l = total_loss(p, t, &LossWeights::STAGE1, &spec, None).unwrap();
                (l.value, l.grad)
            }),
        ),
    ];
    for (name, loss) in &terms {
        let (_, grad) = loss(&pred, &target);
        let res = fd_audit(
            |x| loss(&with_data(&pred, x), &target).0,
            &x0,
            &grad,
            points,
            &mut rng,
        );
        out.push((name.to_string(), res));
    }

    // Gram: two layers, target spatial size differs from the prediction
    let fmap = |rng: &mut ChaCha8Rng, name: &str, layer, c, h, w| {
        FeatureMap::new(
            name,
            layer,
            c,
            h,
            w,
            (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    };
    let pred_maps = vec![fmap(&mut rng, "p", 0, 4, 3, 5), fmap(&mut rng, "p", 1, 6, 2, 2)];
    let target_set = FeatureMapSet::new(vec![
        fmap(&mut rng, "t", 0, 4, 2, 6),
        fmap(&mut rng, "t", 1, 6, 3, 3),
    ])
    .unwrap();
    let sizes: Vec<usize> = pred_maps.iter().map(|m| m.data.len()).collect();
    let rebuild = |flat: &[f64]| {
        let mut off = 0;
        let maps = pred_maps
            .iter()
            .zip(&sizes)
            .map(|(m, &n)| {
                let mut m = m.clone();
                m.data = flat[off..off + n].to_vec();
                off += n;
                m
            })
            .collect();
        FeatureMapSet::new(maps).unwrap()
    };
    let g0: Vec<f64> = pred_maps.iter().flat_map(|m| m.data.clone()).collect();
    let analytic: Vec<f64> = gram_loss(&rebuild(&g0), &target_set).unwrap().grads.concat();
    let res = fd_audit(
        |x| gram_loss(&rebuild(x), &target_set).unwrap().value,
        &g0,
        &analytic,
        points,
        &mut rng,
    );
    out.push(("gram".to_string(), res));
    out
}

/// Heads under audit, perturbed away from their (possibly degenerate)
/// identity initialization.
pub fn audited_heads(rng: &mut ChaCha8Rng) -> Vec<(String, Head)> {
    let specs: [(&str, HeadSpec); 4] = [
        ("ccm", HeadSpec::Ccm),
        ("lut3d", HeadSpec::Lut3d { size: 9 }),
        ("residual_cnn", HeadSpec::ResidualCnn { hidden: 128 }),
        ("residual_cnn+ccm", "cnn+ccm".parse().unwrap()),
    ];
    specs
        .into_iter()
        .map(|(name, spec)| {
            let mut head = spec.build(rng.gen()).unwrap();
            let p: Vec<f64> = head
                .params()
                .iter()
                .map(|v| v + rng.gen_range(-0.05..0.05))
                .collect();
            head.set_params(&p).unwrap();
            head.project();
            (name.to_string(), head)
        })
        .collect()
}

/// Parameter and input gradients of `total_loss(head(x), y)` for each head.
pub fn head_audits(seed: u64, points: usize) -> Vec<(String, FdOutcome, FdOutcome)> {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let spec = SoftHistogramSpec::default();
    let weights = LossWeights::STAGE1;
    let mut out = Vec::new();
    for (name, head) in audited_heads(&mut rng) {
        let x = random_image(&mut rng, 8, 8);
        let y = random_image(&mut rng, 8, 8);
        let loss_of =
            |h: &Head, input: &RgbImage| total_loss(&h.forward(input), &y, &weights, &spec, None).unwrap();
        let l = loss_of(&head, &x);
        let grads = head.backward(&x, &l.grad).unwrap();

        let theta0 = head.params();
        let mut probe = head.clone();
        let param_res = fd_audit(
            |t| {
                probe.set_params(t).unwrap();
                loss_of(&probe, &x).value
            },
            &theta0,
            &grads.params,
            points.min(theta0.len()),
            &mut rng,
        );
        let x0 = x.data().to_vec();
        let input_res = fd_audit(
            |v| loss_of(&head, &with_data(&x, v)).value,
            &x0,
            &grads.input,
            points,
            &mut rng,
        );
        out.push((name, param_res, input_res));
    }
    out
}

pub const TRUE_CCM: [[f64; 3]; 3] = [[0.86, 0.10, 0.04], [0.06, 0.82, 0.12], [0.03, 0.14, 0.78]];
pub const TRUE_BIAS: [f64; 3] = [0.03, -0.02, 0.05];

/// Smooth synthetic patch: a base color plus a random linear ramp and mild
/// texture, kept inside `[0.05, 0.95]`.
pub fn smooth_patch(rng: &mut ChaCha8Rng, size: usize) -> RgbImage {
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.2..0.8));
    let ramp: [[f64; 2]; 3] =
        std::array::from_fn(|_| [rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)]);
    let freq = rng.gen_range(0.3..1.2);
    let s = (size - 1).max(1) as f64;
    RgbImage::from_fn(size, size, |y, x| {
        let (u, v) = (y as f64 / s - 0.5, x as f64 / s - 0.5);
        std::array::from_fn(|c| {
            let tex = 0.03 * ((x as f64 * freq + c as f64).sin() * (y as f64 * freq).cos());
            (base[c] + ramp[c][0] * u + ramp[c][1] * v + tex).clamp(0.05, 0.95)
        })
    })
}

pub fn apply_ccm(img: &RgbImage, m: &[[f64; 3]; 3], t: &[f64; 3]) -> RgbImage {
    RgbImage::from_fn(img.height(), img.width(), |y, x| {
        let p = img.pixel(y, x);
        std::array::from_fn(|c| (m[c][0] * p[0] + m[c][1] * p[1] + m[c][2] * p[2] + t[c]).clamp(0.0, 1.0))
    })
}

pub struct CcmTask {
    pub ids: Vec<String>,
    pub sources: std::collections::HashMap<String, RgbImage>,
    pub targets: std::collections::HashMap<String, RgbImage>,
}

/// Targets are the sources under [`TRUE_CCM`] / [`TRUE_BIAS`], keyed by the
/// same ids, so an identity pair graph pairs each source with its truth.
pub fn ccm_task(seed: u64, n: usize, size: usize) -> CcmTask {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut task = CcmTask {
        ids: Vec::new(),
        sources: Default::default(),
        targets: Default::default(),
    };
    for i in 0..n {
        let id = format!("patch_{i:04}");
        let src = smooth_patch(&mut rng, size);
        task.targets
            .insert(id.clone(), apply_ccm(&src, &TRUE_CCM, &TRUE_BIAS));
        task.sources.insert(id.clone(), src);
        task.ids.push(id);
    }
    task
}

/// Cluster-specific color styles of the target domain: warm, then cool.
pub const STYLES: [([[f64; 3]; 3], [f64; 3]); 2] = [
    (
        [[1.12, 0.05, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.72]],
        [0.04, 0.01, -0.02],
    ),
    (
        [[0.74, 0.0, 0.0], [0.0, 0.95, 0.05], [0.05, 0.0, 1.15]],
        [-0.02, 0.02, 0.05],
    ),
];

/// Source content of each cluster occupies its own region of RGB space so a
/// single color-to-color head can serve both styles.
pub fn cluster_patch(rng: &mut ChaCha8Rng, cluster: usize, size: usize) -> RgbImage {
    let (lo, hi) = match cluster {
        0 => ([0.45, 0.40, 0.25], [0.70, 0.60, 0.45]),
        _ => ([0.20, 0.30, 0.40], [0.40, 0.50, 0.65]),
    };
    let base: [f64; 3] = std::array::from_fn(|c| rng.gen_range(lo[c]..hi[c]));
    let ramp: [[f64; 2]; 3] =
        std::array::from_fn(|_| [rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08)]);
    let s = (size - 1).max(1) as f64;
    RgbImage::from_fn(size, size, |y, x| {
        let (u, v) = (y as f64 / s - 0.5, x as f64 / s - 0.5);
        std::array::from_fn(|c| {
            (base[c] + ramp[c][0] * u + ramp[c][1] * v + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0)
        })
    })
}

pub struct TwoClusterTask {
    pub source_index: pseudopair::otmatch::PatchIndex,
    pub target_index: pseudopair::otmatch::PatchIndex,
    pub source_embeddings: Vec<Vec<f64>>,
    pub target_embeddings: Vec<Vec<f64>>,
    pub sources: std::collections::HashMap<String, RgbImage>,
    pub targets: std::collections::HashMap<String, RgbImage>,
    /// Source patch rendered in its own cluster's style.
    pub truth: std::collections::HashMap<String, RgbImage>,
}

/// Unpaired two-cluster dataset. Each image carries a synthetic semantic
/// embedding (cluster prototype plus noise) shared across domains; target
/// images are independent content rendered in their cluster's style.
pub fn two_cluster_task(
    seed: u64,
    images_per_cluster: usize,
    patches_per_image: usize,
    size: usize,
) -> TwoClusterTask {
    use pseudopair::otmatch::{composite_descriptor, DescriptorSpec, PatchIndex};
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let dim = 16;
    let protos: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let embed = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> {
        protos[k].iter().map(|v| v + rng.gen_range(-0.25..0.25)).collect()
    };
    let spec = DescriptorSpec::default();
    let mut task = TwoClusterTask {
        source_index: PatchIndex::default(),
        target_index: PatchIndex::default(),
        source_embeddings: Vec::new(),
        target_embeddings: Vec::new(),
        sources: Default::default(),
        targets: Default::default(),
        truth: Default::default(),
    };
    for domain in 0..2 {
        for img in 0..2 * images_per_cluster {
            let k = img % 2;
            let e = embed(&mut rng, k);
            let sem: Vec<f32> = e.iter().map(|&v| v as f32).collect();
            for p in 0..patches_per_image {
                let content = cluster_patch(&mut rng, k, size);
                let styled = apply_ccm(&content, &STYLES[k].0, &STYLES[k].1);
                if domain == 0 {
                    let id = format!("s{img:02}_{p}");
                    let d = composite_descriptor(Some(&sem), Some(&content), &spec);
                    task.source_index.push(id.clone(), img, d);
                    task.truth.insert(id.clone(), styled);
                    task.sources.insert(id, content);
                } else {
                    let id = format!("t{img:02}_{p}");
                    let d = composite_descriptor(Some(&sem), Some(&styled), &spec);
                    task.target_index.push(id.clone(), img, d);
                    task.targets.insert(id, styled);
                }
            }
            if domain == 0 {
                task.source_embeddings.push(e);
            } else {
                task.target_embeddings.push(e);
            }
        }
    }
    task
}

/// FGW image plan, then the patch-level candidate graph.
pub fn ot_pair_graph(task: &TwoClusterTask) -> pseudopair::otmatch::PairGraph {
    use pseudopair::otmatch::*;
    let costs =
        build_costs_from_vectors(&task.source_embeddings, &task.target_embeddings, DEFAULT_ALPHA).unwrap();
    let (n, m) = (task.source_embeddings.len(), task.target_embeddings.len());
    let plan = fgw_match(
        &costs,
        &uniform(n),
        &uniform(m),
        &SinkhornConfig::default(),
        DEFAULT_OUTER_ITERS,
    )
    .unwrap();
    build_pair_graph(
        &plan.plan.plan,
        &task.source_index,
        &task.target_index,
        &PairGraphConfig::default(),
    )
    .unwrap()
}

/// Each source gets `k` target patches drawn uniformly, equally weighted.
pub fn random_pair_graph(task: &TwoClusterTask, k: usize, seed: u64) -> pseudopair::otmatch::PairGraph {
    use pseudopair::otmatch::{Candidate, PairEntry, PairGraph};
    use rand::seq::SliceRandom;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let entries = task
        .source_index
        .ids
        .iter()
        .map(|s| PairEntry {
            source_id: s.clone(),
            candidates: task
                .target_index
                .ids
                .choose_multiple(&mut rng, k)
                .map(|t| Candidate {
                    target_id: t.clone(),
                    weight: 1.0 / k as f64,
                })
                .collect(),
        })
        .collect();
    PairGraph::from_entries(entries).unwrap()
}

/// Mean CIEDE2000 between the head's output and each source's true styled
/// rendering.
pub fn mean_delta_e(head: &Head, task: &TwoClusterTask) -> f64 {
    let ids = &task.source_index.ids;
    ids.iter()
        .map(|id| {
            pseudopair::quality::delta_e_2000(&head.forward(&task.sources[id]), &task.truth[id]).unwrap()
        })
        .sum::<f64>()
        / ids.len() as f64
}
