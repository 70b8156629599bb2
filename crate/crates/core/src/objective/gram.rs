use crate::error::{Error, Result};
use crate::imgcore::{FeatureMap, FeatureMapSet};

/// `G = F Fᵀ / (C·H·W)` for the `C × HW` flattened map, row-major `C × C`.
pub fn gram_matrix(map: &FeatureMap) -> Vec<f64> {
    let (c, hw) = (map.channels, map.spatial());
    let norm = 1.0 / (c * hw) as f64;
    let mut g = vec![0.0; c * c];
    for i in 0..c {
        let fi = &map.data[i * hw..(i + 1) * hw];
        for j in i..c {
            let fj = &map.data[j * hw..(j + 1) * hw];
            let v = fi.iter().zip(fj).map(|(a, b)| a * b).sum::<f64>() * norm;
            g[i * c + j] = v;
            g[j * c + i] = v;
        }
    }
    g
}

#[derive(Clone, Debug)]
pub struct GramLoss {
    pub value: f64,
    /// One gradient tensor per predicted map, same layout as its data.
    pub grads: Vec<Vec<f64>>,
}

/// `Σ_ℓ ‖G_ℓ(pred) − G_ℓ(target)‖²_F`. Maps are paired by position and must
/// agree on layer id and channel count; spatial sizes may differ.
pub fn gram_loss(pred: &FeatureMapSet, target: &FeatureMapSet) -> Result<GramLoss> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} predicted layers vs {} target layers",
            pred.len(),
            target.len()
        )));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (p, t) in pred.maps().iter().zip(target.maps()) {
        if p.layer != t.layer || p.channels != t.channels {
            return Err(Error::Shape(format!(
                "layer mismatch: pred layer {} ({} ch) vs target layer {} ({} ch)",
                p.layer, p.channels, t.layer, t.channels
            )));
        }
        let gp = gram_matrix(p);
        let gt = gram_matrix(t);
        let diff: Vec<f64> = gp.iter().zip(&gt).map(|(a, b)| a - b).collect();
        value += diff.iter().map(|d| d * d).sum::<f64>();

        // ∂/∂F = 4 / (C·H·W) · (G_p − G_t) F
        let (c, hw) = (p.channels, p.spatial());
        let scale = 4.0 / (c * hw) as f64;
        let mut g = vec![0.0; c * hw];
        for i in 0..c {
            let row = &mut g[i * hw..(i + 1) * hw];
            for j in 0..c {
                let d = diff[i * c + j] * scale;
                if d == 0.0 {
                    continue;
                }
                for (o, f) in row.iter_mut().zip(&p.data[j * hw..(j + 1) * hw]) {
                    *o += d * f;
                }
            }
        }
        grads.push(g);
    }
    Ok(GramLoss { value, grads })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(maps: Vec<FeatureMap>) -> FeatureMapSet {
        FeatureMapSet::new(maps).unwrap()
    }

    #[test]
    fn identical_sets_have_zero_loss() {
        let m = FeatureMap::new("a", 1, 2, 2, 2, (0..8).map(|v| v as f64 * 0.3).collect()).unwrap();
        let l = gram_loss(&set(vec![m.clone()]), &set(vec![m])).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grads[0].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn single_channel_hand_arithmetic() {
        // G = mean square: pred (1,2,3,4) → 30/4 = 7.5; target all 1 → 1.0
        let p = FeatureMap::new("p", 0, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = FeatureMap::new("t", 0, 1, 2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(gram_matrix(&p), vec![7.5]);
        let l = gram_loss(&set(vec![p]), &set(vec![t])).unwrap();
        assert!((l.value - 6.5 * 6.5).abs() < 1e-12);
        // ∂/∂f = 4/4 · 6.5 · f
        assert_eq!(l.grads[0], vec![6.5, 13.0, 19.5, 26.0]);
    }

    #[test]
    fn gram_is_symmetric_psd() {
        let m = FeatureMap::new(
            "a",
            0,
            3,
            2,
            3,
            (0..18).map(|v| ((v * 7) % 5) as f64 - 2.0).collect(),
        )
        .unwrap();
        let g = gram_matrix(&m);
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[i * 3 + j] - g[j * 3 + i]).abs() < 1e-9);
            }
            assert!(g[i * 3 + i] >= 0.0);
        }
        // xᵀ G x ≥ 0 on a few directions
        for x in [[1.0, -1.0, 0.5], [0.2, 0.3, -0.9], [1.0, 1.0, 1.0]] {
            let q: f64 = (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| x[i] * g[i * 3 + j] * x[j])
                .sum();
            assert!(q >= -1e-12);
        }
    }

    #[test]
    fn layer_mismatch_rejected() {
        let a = FeatureMap::new("a", 1, 2, 1, 1, vec![0.0; 2]).unwrap();
        let b = FeatureMap::new("a", 2, 2, 1, 1, vec![0.0; 2]).unwrap();
        let c = FeatureMap::new("a", 1, 3, 1, 1, vec![0.0; 3]).unwrap();
        assert!(gram_loss(&set(vec![a.clone()]), &set(vec![b])).is_err());
        assert!(gram_loss(&set(vec![a.clone()]), &set(vec![c])).is_err());
        assert!(gram_loss(&set(vec![a]), &set(vec![])).is_err());
    }
}
