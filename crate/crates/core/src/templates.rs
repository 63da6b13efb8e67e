//! Builders for the layer chains used by case studies and fuzzing.
//!
//! Rank names carry the layer number: layer 2 of a conv chain has `M2`,
//! `P2`, `Q2`, `C2`, `R2`, `S2`, and reads `Fmap2` to write `Fmap3`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::workload::{AffineExpr, Einsum, FusionSet, RankId, TensorProjection, WorkloadError};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    /// `r x s` window with the given stride; `m` output channels.
    Conv {
        m: i64,
        r: i64,
        s: i64,
        #[serde(default = "one")]
        stride: i64,
    },
    /// 1x1 conv; `m` output channels.
    Pwise { m: i64 },
    /// Per-channel `r x s` window.
    Dwise { r: i64, s: i64 },
}

fn one() -> i64 {
    1
}

/// Feature-map shape `(channels, height, width)`; width 1 drops the second
/// spatial rank.
pub fn conv_chain(input: (i64, i64, i64), layers: &[LayerKind]) -> Result<FusionSet, WorkloadError> {
    let (mut c, mut h, mut wd) = input;
    let two_d = wd > 1;
    let mut einsums = Vec::with_capacity(layers.len());
    for (k, kind) in layers.iter().enumerate() {
        let i = k + 1;
        let n = |base: &str| format!("{base}{i}");
        let rk = |base: &str| RankId::new(&n(base));
        let mut shapes = BTreeMap::new();
        let fin = format!("Fmap{i}");
        let fout = format!("Fmap{}", i + 1);
        let filt = format!("Filter{i}");
        let window = |p: &str, r: &str, stride: i64| {
            AffineExpr::new(vec![(stride, RankId::new(&n(p))), (1, RankId::new(&n(r)))], 0)
        };
        let (out_c, out_h, out_w, out, input, filter) = match *kind {
            LayerKind::Conv { m, r, s, stride } => {
                let s = if two_d { s } else { 1 };
                let p = (h - r) / stride + 1;
                let q = (wd - s) / stride + 1;
                if p < 1 || q < 1 {
                    return Err(WorkloadError::Schema(format!("layer {i}: window larger than its input")));
                }
                shapes.extend([(rk("M"), m), (rk("P"), p), (rk("C"), c), (rk("R"), r), (rk("H"), h)]);
                let mut out_idx = vec![AffineExpr::index(n("M").as_str()), AffineExpr::index(n("P").as_str())];
                let mut in_idx = vec![AffineExpr::index(n("C").as_str()), window("P", "R", stride)];
                let mut in_ranks = vec![n("C"), n("H")];
                let mut f_idx = vec![AffineExpr::index(n("M").as_str()), AffineExpr::index(n("C").as_str()), AffineExpr::index(n("R").as_str())];
                if two_d {
                    shapes.extend([(rk("Q"), q), (rk("S"), s), (rk("W"), wd)]);
                    out_idx.push(AffineExpr::index(n("Q").as_str()));
                    in_idx.push(window("Q", "S", stride));
                    in_ranks.push(n("W"));
                    f_idx.push(AffineExpr::index(n("S").as_str()));
                }
                let in_ranks: Vec<&str> = in_ranks.iter().map(String::as_str).collect();
                (
                    m,
                    p,
                    q,
                    TensorProjection::new(&fout, out_idx),
                    TensorProjection::new(&fin, in_idx).with_ranks(&in_ranks),
                    TensorProjection::new(&filt, f_idx),
                )
            }
            LayerKind::Pwise { m } => {
                shapes.extend([(rk("M"), m), (rk("P"), h), (rk("C"), c)]);
                let mut out_idx = vec![AffineExpr::index(n("M").as_str()), AffineExpr::index(n("P").as_str())];
                let mut in_idx = vec![AffineExpr::index(n("C").as_str()), AffineExpr::index(n("P").as_str())];
                if two_d {
                    shapes.insert(rk("Q"), wd);
                    out_idx.push(AffineExpr::index(n("Q").as_str()));
                    in_idx.push(AffineExpr::index(n("Q").as_str()));
                }
                let f_idx = vec![AffineExpr::index(n("M").as_str()), AffineExpr::index(n("C").as_str())];
                (
                    m,
                    h,
                    wd,
                    TensorProjection::new(&fout, out_idx),
                    TensorProjection::new(&fin, in_idx),
                    TensorProjection::new(&filt, f_idx),
                )
            }
            LayerKind::Dwise { r, s } => {
                let s = if two_d { s } else { 1 };
                let p = h - r + 1;
                let q = wd - s + 1;
                if p < 1 || q < 1 {
                    return Err(WorkloadError::Schema(format!("layer {i}: window larger than its input")));
                }
                shapes.extend([(rk("C"), c), (rk("P"), p), (rk("R"), r), (rk("H"), h)]);
                let mut out_idx = vec![AffineExpr::index(n("C").as_str()), AffineExpr::index(n("P").as_str())];
                let mut in_idx = vec![AffineExpr::index(n("C").as_str()), window("P", "R", 1)];
                let mut in_ranks = vec![n("C"), n("H")];
                let mut f_idx = vec![AffineExpr::index(n("C").as_str()), AffineExpr::index(n("R").as_str())];
                if two_d {
                    shapes.extend([(rk("Q"), q), (rk("S"), s), (rk("W"), wd)]);
                    out_idx.push(AffineExpr::index(n("Q").as_str()));
                    in_idx.push(window("Q", "S", 1));
                    in_ranks.push(n("W"));
                    f_idx.push(AffineExpr::index(n("S").as_str()));
                }
                let in_ranks: Vec<&str> = in_ranks.iter().map(String::as_str).collect();
                (
                    c,
                    p,
                    q,
                    TensorProjection::new(&fout, out_idx),
                    TensorProjection::new(&fin, in_idx).with_ranks(&in_ranks),
                    TensorProjection::new(&filt, f_idx),
                )
            }
        };
        einsums.push(Einsum { name: format!("L{i}"), output: out, inputs: vec![input, filter], rank_shapes: shapes });
        (c, h, wd) = (out_c, out_h, if two_d { out_w } else { 1 });
    }
    FusionSet::new(einsums)
}

/// Fully connected layers over a batch rank `D`: `dims[0]` input features,
/// then each layer's output features.
pub fn fc_chain(batch: i64, dims: &[i64]) -> Result<FusionSet, WorkloadError> {
    let mut einsums = Vec::new();
    for i in 1..dims.len() {
        let m = format!("M{i}");
        let c = format!("C{i}");
        let shapes = BTreeMap::from([(RankId::new("D"), batch), (RankId::new(&m), dims[i]), (RankId::new(&c), dims[i - 1])]);
        einsums.push(Einsum {
            name: format!("FC{i}"),
            output: TensorProjection::new(&format!("Fmap{}", i + 1), vec![AffineExpr::index("D"), AffineExpr::index(m.as_str())]),
            inputs: vec![
                TensorProjection::new(&format!("Fmap{i}"), vec![AffineExpr::index("D"), AffineExpr::index(c.as_str())]),
                TensorProjection::new(&format!("Filter{i}"), vec![AffineExpr::index(m.as_str()), AffineExpr::index(c.as_str())]),
            ],
            rank_shapes: shapes,
        });
    }
    FusionSet::new(einsums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::TensorRole;

    #[test]
    fn conv_conv_links_through_fmap2() {
        let w = conv_chain((2, 8, 8), &[LayerKind::Conv { m: 3, r: 3, s: 3, stride: 1 }; 2]).unwrap();
        let f2 = w.tensor(w.tensor_id("Fmap2").unwrap());
        assert_eq!(f2.role, TensorRole::Intermediate);
        assert_eq!(f2.shape, vec![3, 6, 6]);
        assert_eq!(w.tensor(w.tensor_id("Fmap3").unwrap()).shape, vec![3, 4, 4]);
    }

    #[test]
    fn one_d_chain_drops_width() {
        let w = conv_chain((2, 8, 1), &[LayerKind::Pwise { m: 4 }, LayerKind::Dwise { r: 3, s: 3 }, LayerKind::Pwise { m: 2 }]).unwrap();
        assert_eq!(w.layers().len(), 3);
        assert_eq!(w.tensor(w.tensor_id("Fmap4").unwrap()).shape, vec![2, 6]);
    }

    #[test]
    fn fc_chain_shares_batch() {
        let w = fc_chain(4, &[8, 6, 5]).unwrap();
        assert_eq!(w.total_ops(), 4 * 6 * 8 + 4 * 5 * 6);
    }
}
