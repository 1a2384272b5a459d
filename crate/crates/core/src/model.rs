//! Branch fusion, classification, loss, and the full forward/backward pass.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::encoding::{encode_sequence, PointIndices};
use crate::error::{Error, ModelError};
use crate::hypergraph::TrajectoryHypergraph;
use crate::params::ModelParams;
use crate::relational::{
    backward_relational, forward_relational, AttentiveRepr, Dropout, RelationalMode,
};
use crate::sequence::{lstm_backward, lstm_forward};
use crate::tensor::{axpy, dot, l2_norm, Mat};

/// Vectors with a smaller norm pass through [`l2_normalize`] unchanged.
pub const NORM_EPS: f64 = 1e-12;

/// Ablation identifiers. `Full` is the complete model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VariantId {
    Full,
    /// no learned attentive trajectory representation
    A,
    /// attentive representation pooled from POIs by attention scores
    Ap,
    /// no structural representation
    S,
    /// no sequence branch
    L,
    /// no hypergraph branch
    H,
    /// no training-set balancing
    D,
}

impl VariantId {
    pub const ALL: [VariantId; 7] = [
        VariantId::Full,
        VariantId::A,
        VariantId::Ap,
        VariantId::S,
        VariantId::L,
        VariantId::H,
        VariantId::D,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantId::Full => "FULL",
            VariantId::A => "A",
            VariantId::Ap => "Ap",
            VariantId::S => "S",
            VariantId::L => "L",
            VariantId::H => "H",
            VariantId::D => "D",
        }
    }

    /// Numeric code stored in checkpoints.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl FromStr for VariantId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "a" => Ok(Self::A),
            "ap" => Ok(Self::Ap),
            "s" => Ok(Self::S),
            "l" => Ok(Self::L),
            "h" => Ok(Self::H),
            "d" => Ok(Self::D),
            other => Err(ModelError::InvalidVariant(format!(
                "unknown variant {other:?}"
            ))),
        }
    }
}

/// A validated set of ablations applied together. Empty means the full model.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Ablation {
    ids: BTreeSet<VariantId>,
}

impl Ablation {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn new(ids: &[VariantId]) -> Result<Self, ModelError> {
        let has_full = ids.contains(&VariantId::Full);
        let ids: BTreeSet<VariantId> = ids
            .iter()
            .copied()
            .filter(|&v| v != VariantId::Full)
            .collect();
        if has_full && !ids.is_empty() {
            return Err(ModelError::InvalidVariant(
                "FULL cannot be combined with ablations".into(),
            ));
        }
        let both = |a, b| ids.contains(&a) && ids.contains(&b);
        if both(VariantId::A, VariantId::S) {
            return Err(ModelError::InvalidVariant(
                "A and S together leave no relational representation".into(),
            ));
        }
        if both(VariantId::A, VariantId::Ap) {
            return Err(ModelError::InvalidVariant(
                "A removes the representation that Ap replaces".into(),
            ));
        }
        if both(VariantId::L, VariantId::H) {
            return Err(ModelError::InvalidVariant(
                "L and H together remove both branches".into(),
            ));
        }
        Ok(Self { ids })
    }

    pub fn single(id: VariantId) -> Self {
        Self::new(&[id]).expect("single variants are always valid")
    }

    pub fn ids(&self) -> Vec<VariantId> {
        if self.ids.is_empty() {
            vec![VariantId::Full]
        } else {
            self.ids.iter().copied().collect()
        }
    }

    pub fn contains(&self, id: VariantId) -> bool {
        self.ids.contains(&id)
    }

    pub fn uses_relational(&self) -> bool {
        !self.contains(VariantId::H)
    }

    pub fn uses_sequence(&self) -> bool {
        !self.contains(VariantId::L)
    }

    pub fn balances(&self) -> bool {
        !self.contains(VariantId::D)
    }

    pub fn relational_mode(&self) -> RelationalMode {
        let attentive = if self.contains(VariantId::A) {
            AttentiveRepr::Off
        } else if self.contains(VariantId::Ap) {
            AttentiveRepr::Pooled
        } else {
            AttentiveRepr::Learned
        };
        RelationalMode {
            attentive,
            structural: !self.contains(VariantId::S),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.ids().into_iter().map(VariantId::as_str).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for Ablation {
    type Err = ModelError;

    /// Comma- or plus-separated variant names, e.g. `a,d`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ids = s
            .split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(VariantId::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(&ids)
    }
}

/// `v / ‖v‖₂`, or `v` itself when `‖v‖₂ ≤ 1e-12`.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = l2_norm(v);
    if n > NORM_EPS {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// Gradient of [`l2_normalize`] at `v` applied to upstream `g`.
fn l2_normalize_backward(v: &[f64], g: &[f64]) -> Vec<f64> {
    let n = l2_norm(v);
    if n <= NORM_EPS {
        return g.to_vec();
    }
    let u: Vec<f64> = v.iter().map(|x| x / n).collect();
    let proj = dot(&u, g);
    g.iter()
        .zip(&u)
        .map(|(gi, ui)| (gi - proj * ui) / n)
        .collect()
}

/// `NORM(s_st) + NORM(s_rel)`.
pub fn fuse(s_st: &[f64], s_rel: &[f64]) -> Vec<f64> {
    let mut out = l2_normalize(s_st);
    axpy(1.0, &l2_normalize(s_rel), &mut out);
    out
}

/// `W_c · s + b_c`.
pub fn classify(s_final: &[f64], weight: &Mat, bias: &[f64]) -> Vec<f64> {
    (0..weight.rows())
        .map(|q| dot(weight.row(q), s_final) + bias[q])
        .collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[label]` in the max-subtracted form.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Mean cross-entropy over a `batch × Q` logit matrix.
pub fn batch_loss(logits: &Mat, labels: &[usize]) -> f64 {
    assert_eq!(logits.rows(), labels.len());
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &y)| cross_entropy(logits.row(b), y))
        .sum();
    total / labels.len() as f64
}

/// Everything the forward pass reads besides the parameters.
#[derive(Clone, Debug)]
pub struct ModelInputs<'a> {
    pub hypergraph: &'a TrajectoryHypergraph,
    /// Point indices of every trajectory, in visit order.
    pub sequences: &'a [Vec<PointIndices>],
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    pub loss: f64,
    pub grads: ModelParams,
}

fn sequence_repr(
    params: &ModelParams,
    points: &[PointIndices],
) -> Result<(Mat, crate::sequence::LstmTrace), Error> {
    let e = &params.embeddings;
    let xs = encode_sequence(points, &e.geo, &e.slot, &e.day)?;
    let trace = lstm_forward(&params.lstm, &xs)?;
    Ok((xs, trace))
}

/// Logits (`n × Q`) for the given trajectories with dropout off.
pub fn predict(
    params: &ModelParams,
    inputs: &ModelInputs<'_>,
    ablation: &Ablation,
    trajs: &[usize],
) -> Result<Mat, Error> {
    let rel = if ablation.uses_relational() {
        Some(
            forward_relational(
                &params.relational,
                inputs.hypergraph,
                ablation.relational_mode(),
                None,
            )?
            .0,
        )
    } else {
        None
    };
    let d = params.relational.poi_emb.cols();
    let zero = vec![0.0; d];
    let mut out = Mat::zeros(trajs.len(), params.classifier.weight.rows());
    for (row, &j) in trajs.iter().enumerate() {
        let s_st = if ablation.uses_sequence() {
            sequence_repr(params, &inputs.sequences[j])?
                .1
                .final_hidden()
                .to_vec()
        } else {
            zero.clone()
        };
        let s_rel = rel.as_ref().map_or(zero.as_slice(), |r| r.s_rel.row(j));
        let logits = classify(
            &fuse(&s_st, s_rel),
            &params.classifier.weight,
            params.classifier.bias.data(),
        );
        out.row_mut(row).copy_from_slice(&logits);
    }
    Ok(out)
}

/// Mean cross-entropy of a labelled batch and its gradient w.r.t. every parameter.
///
/// The relational branch runs once over the whole hypergraph; its rows are
/// then gathered per trajectory.
pub fn loss_and_grads(
    params: &ModelParams,
    inputs: &ModelInputs<'_>,
    ablation: &Ablation,
    batch: &[(usize, usize)],
    dropout: Option<Dropout<'_>>,
) -> Result<BatchResult, Error> {
    let mode = ablation.relational_mode();
    let rel = if ablation.uses_relational() {
        Some(forward_relational(
            &params.relational,
            inputs.hypergraph,
            mode,
            dropout,
        )?)
    } else {
        None
    };
    let d = params.relational.poi_emb.cols();
    let zero = vec![0.0; d];
    let mut grads = params.zeros_like();
    let mut d_rel = Mat::zeros(inputs.hypergraph.num_trajs(), d);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;

    for &(j, label) in batch {
        let seq = if ablation.uses_sequence() {
            Some(sequence_repr(params, &inputs.sequences[j])?)
        } else {
            None
        };
        let s_st = seq
            .as_ref()
            .map_or(zero.as_slice(), |(_, tr)| tr.final_hidden());
        let s_rel = rel
            .as_ref()
            .map_or(zero.as_slice(), |(r, _)| r.s_rel.row(j));
        let s_final = fuse(s_st, s_rel);
        let logits = classify(
            &s_final,
            &params.classifier.weight,
            params.classifier.bias.data(),
        );
        loss += cross_entropy(&logits, label) * scale;

        let mut dlogits = softmax(&logits);
        dlogits[label] -= 1.0;
        dlogits.iter_mut().for_each(|g| *g *= scale);
        axpy(1.0, &dlogits, grads.classifier.bias.data_mut());
        let mut ds_final = vec![0.0; d];
        for (q, &g) in dlogits.iter().enumerate() {
            axpy(g, &s_final, grads.classifier.weight.row_mut(q));
            axpy(g, params.classifier.weight.row(q), &mut ds_final);
        }

        if rel.is_some() {
            let g = l2_normalize_backward(s_rel, &ds_final);
            axpy(1.0, &g, d_rel.row_mut(j));
        }
        if let Some((xs, trace)) = &seq {
            let dh = l2_normalize_backward(s_st, &ds_final);
            let dxs = lstm_backward(&params.lstm, xs, trace, &dh, &mut grads.lstm);
            for (t, p) in inputs.sequences[j].iter().enumerate() {
                let g = dxs.row(t);
                axpy(1.0, g, grads.embeddings.geo.row_mut(p.geo));
                axpy(1.0, g, grads.embeddings.slot.row_mut(p.slot));
                axpy(1.0, g, grads.embeddings.day.row_mut(p.day));
            }
        }
    }

    if let Some((_, cache)) = &rel {
        backward_relational(
            &params.relational,
            inputs.hypergraph,
            mode,
            cache,
            &d_rel,
            &mut grads.relational,
        );
    }
    Ok(BatchResult { loss, grads })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuse_three_four_five() {
        let out = fuse(&[3.0, 4.0, 0.0], &[0.0; 3]);
        assert!((out[0] - 0.6).abs() < 1e-15 && (out[1] - 0.8).abs() < 1e-15 && out[2] == 0.0);
        assert_eq!(fuse(&[0.0; 3], &[0.0; 3]), vec![0.0; 3]);
        let out = fuse(&[1.0, -2.0, 0.5], &[0.3, 0.3, -9.0]);
        assert!(l2_norm(&out) <= 2.0 + 1e-12);
    }

    #[test]
    fn classify_cases() {
        let w = Mat::zeros(2, 3);
        assert_eq!(
            classify(&[1.0, 2.0, 3.0], &w, &[0.5, -0.5]),
            vec![0.5, -0.5]
        );
        let w = Mat::from_rows(&[vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]);
        assert_eq!(classify(&[1.0, 2.0, 3.0], &w, &[0.0, 0.0]), vec![3.0, 1.0]);
        let w = Mat::from_rows(&[vec![0.5, -1.0, 2.0]]);
        let want = 0.5 * 1.0 - 1.0 * 2.0 + 2.0 * 3.0 + 0.25;
        assert_eq!(classify(&[1.0, 2.0, 3.0], &w, &[0.25]), vec![want]);
    }

    #[test]
    fn loss_cases() {
        let uniform = Mat::zeros(1, 4);
        assert!((batch_loss(&uniform, &[2]) - 4f64.ln()).abs() < 1e-12);
        let confident = Mat::from_rows(&[vec![1000.0, 0.0, 0.0]]);
        assert!(batch_loss(&confident, &[0]) < 1e-12);
        let logits = Mat::from_rows(&[vec![0.3, -1.2, 0.8], vec![-0.4, 0.1, 0.2]]);
        let direct = |row: &[f64], y: usize| {
            -((row[y].exp()) / row.iter().map(|z| z.exp()).sum::<f64>()).ln()
        };
        let want = (direct(logits.row(0), 2) + direct(logits.row(1), 0)) / 2.0;
        assert!((batch_loss(&logits, &[2, 0]) - want).abs() < 1e-9);
    }

    #[test]
    fn ablation_parsing_and_validation() {
        assert_eq!("full".parse::<Ablation>().unwrap(), Ablation::full());
        assert_eq!("a,d".parse::<Ablation>().unwrap().to_string(), "A+D");
        assert!("a,s".parse::<Ablation>().is_err());
        assert!("l+h".parse::<Ablation>().is_err());
        assert!("full,a".parse::<Ablation>().is_err());
        assert!("x".parse::<Ablation>().is_err());
        let h = Ablation::single(VariantId::H);
        assert!(!h.uses_relational() && h.uses_sequence());
        let ap = Ablation::single(VariantId::Ap);
        assert_eq!(ap.relational_mode().attentive, AttentiveRepr::Pooled);
        for v in VariantId::ALL {
            assert_eq!(VariantId::from_code(v.code()), Some(v));
        }
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let v = [0.3, -1.1, 0.7];
        let g = [0.2, 0.5, -0.9];
        let an = l2_normalize_backward(&v, &g);
        for k in 0..3 {
            let h = 1e-6;
            let (mut p, mut m) = (v, v);
            p[k] += h;
            m[k] -= h;
            let fd = (dot(&l2_normalize(&p), &g) - dot(&l2_normalize(&m), &g)) / (2.0 * h);
            assert!((fd - an[k]).abs() < 1e-8);
        }
    }
}
