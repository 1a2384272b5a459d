//! Hypergraph attention network over the trajectory hypergraph.
//!
//! Each layer scores every (POI, trajectory) incidence with
//! `LeakyReLU(aᵀ[x_i ‖ s_j])`, normalizes the scores per POI with a softmax,
//! propagates through the symmetric-normalized attentive incidence, applies
//! `LeakyReLU(· W)`, dropout, and a residual connection. The layer outputs
//! (input included) are averaged into the final POI embeddings; trajectories
//! are then represented by the sum of their POIs plus a learnable embedding.

use rand::{Rng, RngCore};

use crate::error::{Error, HypergraphError, ModelError};
use crate::hypergraph::{
    normalized_operator_backward, normalized_operator_forward, structural_sum, OperatorCache,
    TrajectoryHypergraph,
};
use crate::params::RelationalParams;
use crate::tensor::{axpy, dot, leaky_relu, leaky_relu_grad, Mat};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Which attentive trajectory representation enters `S_rel`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentiveRepr {
    /// The learnable `S_attn` rows.
    Learned,
    /// Attention-weighted pooling of the final POI embeddings, `H_attnᵀ · X_final`,
    /// with attention recomputed from the last layer's output.
    Pooled,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelationalMode {
    pub attentive: AttentiveRepr,
    pub structural: bool,
}

impl Default for RelationalMode {
    fn default() -> Self {
        Self {
            attentive: AttentiveRepr::Learned,
            structural: true,
        }
    }
}

/// Inverted dropout applied to layer outputs during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

/// Attention weights in the hypergraph's row-compressed order, plus the
/// pre-activation similarities kept for the backward pass.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    pub weights: Vec<f64>,
    pub similarity: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RelationalOutput {
    pub x_final: Mat,
    pub s_stru: Mat,
    /// The attentive representation that entered `s_rel` (zeros when off).
    pub s_attentive: Mat,
    pub s_rel: Mat,
}

#[derive(Clone, Debug)]
pub struct LayerCache {
    attention: AttentionCache,
    operator: OperatorCache,
    propagated: Mat,
    pre_activation: Mat,
    /// Per-entry multiplier (0 or 1/(1-rate)); `None` when dropout is off.
    mask: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct RelationalCache {
    /// `X⁽⁰⁾ … X⁽ᴹ⁾`
    xs: Vec<Mat>,
    layers: Vec<LayerCache>,
    pooled_attention: Option<AttentionCache>,
}

/// Per-POI softmax over incident trajectories of `LeakyReLU(aᵀ[x_i ‖ s_j])`.
pub fn attention_incidence(
    x: &Mat,
    s_attn: &Mat,
    attn_vec: &[f64],
    hg: &TrajectoryHypergraph,
    slope: f64,
) -> Result<AttentionCache, HypergraphError> {
    let d = x.cols();
    if attn_vec.len() != 2 * d
        || s_attn.cols() != d
        || x.rows() != hg.num_pois()
        || s_attn.rows() != hg.num_trajs()
    {
        return Err(HypergraphError::Shape(format!(
            "attention operands x {:?}, s_attn {:?}, a {}",
            x.shape(),
            s_attn.shape(),
            attn_vec.len()
        )));
    }
    let (a_poi, a_traj) = attn_vec.split_at(d);
    let traj_score: Vec<f64> = (0..s_attn.rows())
        .map(|j| dot(a_traj, s_attn.row(j)))
        .collect();
    let mut weights = vec![0.0; hg.nnz()];
    let mut similarity = vec![0.0; hg.nnz()];
    for i in 0..hg.num_pois() {
        let range = hg.row_range(i);
        if range.is_empty() {
            return Err(HypergraphError::EmptyNeighborhood(i));
        }
        let poi_score = dot(a_poi, x.row(i));
        let mut max = f64::NEG_INFINITY;
        for k in range.clone() {
            let sim = poi_score + traj_score[hg.col_of(k)];
            similarity[k] = sim;
            weights[k] = leaky_relu(sim, slope);
            max = max.max(weights[k]);
        }
        let mut total = 0.0;
        for k in range.clone() {
            weights[k] = (weights[k] - max).exp();
            total += weights[k];
        }
        for k in range {
            weights[k] /= total;
        }
    }
    Ok(AttentionCache {
        weights,
        similarity,
    })
}

/// Backpropagates `dweights` through the attention softmax into `dx`,
/// `ds_attn` and `da`.
fn attention_backward(
    x: &Mat,
    s_attn: &Mat,
    attn_vec: &[f64],
    hg: &TrajectoryHypergraph,
    cache: &AttentionCache,
    dweights: &[f64],
    slope: f64,
    dx: &mut Mat,
    ds_attn: &mut Mat,
    da: &mut [f64],
) {
    let d = x.cols();
    let (a_poi, a_traj) = attn_vec.split_at(d);
    let (da_poi, da_traj) = da.split_at_mut(d);
    for i in 0..hg.num_pois() {
        let range = hg.row_range(i);
        let inner: f64 = range.clone().map(|k| cache.weights[k] * dweights[k]).sum();
        let mut dpoi = 0.0;
        for k in range {
            let dsim = cache.weights[k]
                * (dweights[k] - inner)
                * leaky_relu_grad(cache.similarity[k], slope);
            if dsim == 0.0 {
                continue;
            }
            let j = hg.col_of(k);
            dpoi += dsim;
            axpy(dsim, s_attn.row(j), da_traj);
            axpy(dsim, a_traj, ds_attn.row_mut(j));
        }
        axpy(dpoi, x.row(i), da_poi);
        axpy(dpoi, a_poi, dx.row_mut(i));
    }
}

/// One attentive propagation layer:
/// `X' = Dropout(LeakyReLU(Â X W)) + X` with `Â` the normalized attentive operator.
pub fn attentive_layer(
    x: &Mat,
    hg: &TrajectoryHypergraph,
    attention: AttentionCache,
    weight: &Mat,
    slope: f64,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<(Mat, LayerCache), HypergraphError> {
    let (propagated, operator) = normalized_operator_forward(hg, &attention.weights, x)?;
    let pre_activation = propagated.matmul(weight);
    let mut out = pre_activation.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = leaky_relu(*v, slope));
    let mask = match dropout {
        Some(dp) if dp.rate > 0.0 => {
            let keep = 1.0 / (1.0 - dp.rate);
            let mask: Vec<f64> = (0..out.len())
                .map(|_| {
                    if dp.rng.gen::<f64>() < dp.rate {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect();
            out.data_mut()
                .iter_mut()
                .zip(&mask)
                .for_each(|(v, m)| *v *= m);
            Some(mask)
        }
        _ => None,
    };
    out.add_assign(x);
    Ok((
        out,
        LayerCache {
            attention,
            operator,
            propagated,
            pre_activation,
            mask,
        },
    ))
}

/// Full relational forward: `M` attentive layers, layer averaging, structural
/// sums and the relational fusion selected by `mode`.
pub fn forward_relational(
    params: &RelationalParams,
    hg: &TrajectoryHypergraph,
    mode: RelationalMode,
    mut dropout: Option<Dropout<'_>>,
) -> Result<(RelationalOutput, RelationalCache), Error> {
    let a = params.attn_vec.data();
    let s_attn = &params.traj_emb;
    let mut xs = vec![params.poi_emb.clone()];
    let mut layers = Vec::with_capacity(params.layer_weights.len());
    for (m, w) in params.layer_weights.iter().enumerate() {
        let x = xs.last().unwrap();
        let attention = attention_incidence(x, s_attn, a, hg, LEAKY_SLOPE)?;
        let (next, cache) = attentive_layer(x, hg, attention, w, LEAKY_SLOPE, dropout.as_mut())?;
        if !next.is_finite() {
            return Err(ModelError::NonFinite(format!("hypergraph layer {m}")).into());
        }
        xs.push(next);
        layers.push(cache);
    }

    let mut x_final = Mat::zeros(hg.num_pois(), params.poi_emb.cols());
    for x in &xs {
        x_final.add_assign(x);
    }
    x_final.scale(1.0 / xs.len() as f64);

    let s_stru = structural_sum(hg, &x_final);
    let mut pooled_attention = None;
    let s_attentive = match mode.attentive {
        AttentiveRepr::Learned => s_attn.clone(),
        AttentiveRepr::Pooled => {
            let att = attention_incidence(xs.last().unwrap(), s_attn, a, hg, LEAKY_SLOPE)?;
            let pooled = weighted_pool(hg, &att.weights, &x_final);
            pooled_attention = Some(att);
            pooled
        }
        AttentiveRepr::Off => s_attn.zeros_like(),
    };
    let mut s_rel = s_attentive.clone();
    if mode.structural {
        s_rel.add_assign(&s_stru);
    }
    Ok((
        RelationalOutput {
            x_final,
            s_stru,
            s_attentive,
            s_rel,
        },
        RelationalCache {
            xs,
            layers,
            pooled_attention,
        },
    ))
}

/// `H_effᵀ X`: each trajectory row is the weighted sum of its POIs' rows.
fn weighted_pool(hg: &TrajectoryHypergraph, weights: &[f64], x: &Mat) -> Mat {
    let mut out = Mat::zeros(hg.num_trajs(), x.cols());
    for j in 0..hg.num_trajs() {
        let row = out.row_mut(j);
        for &(i, k) in hg.pois_of(j) {
            axpy(weights[k], x.row(i), row);
        }
    }
    out
}

/// Accumulates into `grads` the gradient of a loss whose gradient w.r.t.
/// `S_rel` is `d_rel` (`N × d`).
pub fn backward_relational(
    params: &RelationalParams,
    hg: &TrajectoryHypergraph,
    mode: RelationalMode,
    cache: &RelationalCache,
    d_rel: &Mat,
    grads: &mut RelationalParams,
) {
    let a = params.attn_vec.data();
    let s_attn = &params.traj_emb;
    let num_layers = params.layer_weights.len();
    let x_final_scale = 1.0 / (num_layers + 1) as f64;
    let mut dx_final = Mat::zeros(hg.num_pois(), params.poi_emb.cols());

    if mode.structural {
        for j in 0..hg.num_trajs() {
            for &(i, _) in hg.pois_of(j) {
                axpy(1.0, d_rel.row(j), dx_final.row_mut(i));
            }
        }
    }

    // gradient w.r.t. X⁽ᴹ⁾ coming from paths other than X_final
    let mut dx = Mat::zeros(hg.num_pois(), params.poi_emb.cols());
    match mode.attentive {
        AttentiveRepr::Learned => grads.traj_emb.add_assign(d_rel),
        AttentiveRepr::Pooled => {
            let att = cache
                .pooled_attention
                .as_ref()
                .expect("pooled attention cached");
            let x_final = averaged(&cache.xs);
            let mut dweights = vec![0.0; hg.nnz()];
            for j in 0..hg.num_trajs() {
                for &(i, k) in hg.pois_of(j) {
                    dweights[k] = dot(x_final.row(i), d_rel.row(j));
                    axpy(att.weights[k], d_rel.row(j), dx_final.row_mut(i));
                }
            }
            attention_backward(
                cache.xs.last().unwrap(),
                s_attn,
                a,
                hg,
                att,
                &dweights,
                LEAKY_SLOPE,
                &mut dx,
                &mut grads.traj_emb,
                grads.attn_vec.data_mut(),
            );
        }
        AttentiveRepr::Off => {}
    }

    dx_final.scale(x_final_scale);
    dx.add_assign(&dx_final);
    for m in (0..num_layers).rev() {
        let layer = &cache.layers[m];
        let x_in = &cache.xs[m];
        // residual path
        let mut dx_in = dx.clone();
        let mut dz = dx;
        if let Some(mask) = &layer.mask {
            dz.data_mut()
                .iter_mut()
                .zip(mask)
                .for_each(|(g, k)| *g *= k);
        }
        dz.data_mut()
            .iter_mut()
            .zip(layer.pre_activation.data())
            .for_each(|(g, &z)| *g *= leaky_relu_grad(z, LEAKY_SLOPE));
        layer
            .propagated
            .t_matmul_acc(&dz, &mut grads.layer_weights[m]);
        let dprop = dz.matmul_t(&params.layer_weights[m]);
        let (dx_op, dweights) =
            normalized_operator_backward(hg, &layer.attention.weights, &layer.operator, &dprop);
        dx_in.add_assign(&dx_op);
        attention_backward(
            x_in,
            s_attn,
            a,
            hg,
            &layer.attention,
            &dweights,
            LEAKY_SLOPE,
            &mut dx_in,
            &mut grads.traj_emb,
            grads.attn_vec.data_mut(),
        );
        dx_in.add_assign(&dx_final);
        dx = dx_in;
    }
    grads.poi_emb.add_assign(&dx);
}

fn averaged(xs: &[Mat]) -> Mat {
    let mut out = xs[0].zeros_like();
    for x in xs {
        out.add_assign(x);
    }
    out.scale(1.0 / xs.len() as f64);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ModelDims, ModelParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_hypergraph(rng: &mut ChaCha8Rng, l: usize, n: usize) -> TrajectoryHypergraph {
        let lists = crate::hypergraph::random_poi_lists(rng, l, n);
        TrajectoryHypergraph::from_poi_lists(l, &lists).unwrap()
    }

    fn params(
        rng: &mut ChaCha8Rng,
        hg: &TrajectoryHypergraph,
        d: usize,
        layers: usize,
    ) -> RelationalParams {
        let dims = ModelDims {
            dim: d,
            layers,
            num_pois: hg.num_pois(),
            num_trajs: hg.num_trajs(),
            num_users: 2,
            geo_rows: 2,
        };
        let mut p = ModelParams::init(dims, rng).relational;
        // larger values so LeakyReLU kinks are exercised on both sides
        p.attn_vec.scale(4.0);
        p.layer_weights.iter_mut().for_each(|w| w.scale(3.0));
        p
    }

    #[test]
    fn singleton_neighborhood_gets_full_weight() {
        let hg = TrajectoryHypergraph::from_poi_lists(2, &[vec![0], vec![0, 1]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Mat::uniform(2, 3, 1.0, &mut rng);
        let s = Mat::uniform(2, 3, 1.0, &mut rng);
        let a: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let att = attention_incidence(&x, &s, &a, &hg, LEAKY_SLOPE).unwrap();
        let k = hg.row_range(1).start;
        assert_eq!(att.weights[k], 1.0);
    }

    #[test]
    fn identical_trajectory_embeddings_split_evenly() {
        let hg = TrajectoryHypergraph::from_poi_lists(1, &[vec![0], vec![0]]).unwrap();
        let x = Mat::from_vec(1, 2, vec![0.3, -0.7]);
        let s = Mat::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        let att = attention_incidence(&x, &s, &[0.5, 0.1, -0.2, 0.9], &hg, LEAKY_SLOPE).unwrap();
        assert_eq!(att.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn attention_matches_scalar_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let hg = random_hypergraph(&mut rng, 6, 5);
            let x = Mat::uniform(6, 3, 2.0, &mut rng);
            let s = Mat::uniform(5, 3, 2.0, &mut rng);
            let a: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let att = attention_incidence(&x, &s, &a, &hg, LEAKY_SLOPE).unwrap();
            let dense = hg.to_dense(&att.weights);
            for i in 0..6 {
                let scores: Vec<(usize, f64)> = hg
                    .trajs_of(i)
                    .iter()
                    .map(|&j| {
                        let mut sim = 0.0;
                        for c in 0..3 {
                            sim += a[c] * x.get(i, c) + a[3 + c] * s.get(j, c);
                        }
                        (j, if sim > 0.0 { sim } else { 0.2 * sim })
                    })
                    .collect();
                let z: f64 = scores.iter().map(|(_, v)| v.exp()).sum();
                for (j, v) in scores {
                    assert!((dense.get(i, j) - v.exp() / z).abs() < 1e-12);
                }
                let row_sum: f64 = dense.row(i).iter().sum();
                assert!((row_sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_weight_layer_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hg = random_hypergraph(&mut rng, 4, 3);
        let x = Mat::uniform(4, 3, 1.0, &mut rng);
        let att = AttentionCache {
            weights: hg.binary_weights(),
            similarity: vec![0.0; hg.nnz()],
        };
        let (out, _) = attentive_layer(&x, &hg, att, &Mat::zeros(3, 3), LEAKY_SLOPE, None).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn scalar_layer() {
        let hg = TrajectoryHypergraph::from_poi_lists(1, &[vec![0]]).unwrap();
        let att = AttentionCache {
            weights: vec![1.0],
            similarity: vec![0.0],
        };
        let (out, _) = attentive_layer(
            &Mat::from_vec(1, 1, vec![1.0]),
            &hg,
            att,
            &Mat::from_vec(1, 1, vec![0.75]),
            LEAKY_SLOPE,
            None,
        )
        .unwrap();
        assert_eq!(out.data(), &[1.75]);
    }

    #[test]
    fn residual_collapse_with_zero_weights() {
        let hg = TrajectoryHypergraph::from_poi_lists(3, &[vec![0, 2], vec![1]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = params(&mut rng, &hg, 2, 1);
        p.layer_weights[0].fill(0.0);
        let (out, _) = forward_relational(&p, &hg, RelationalMode::default(), None).unwrap();
        assert!(out.x_final.max_abs_diff(&p.poi_emb) < 1e-15);
        for c in 0..2 {
            assert!(
                (out.s_stru.get(0, c) - p.poi_emb.get(0, c) - p.poi_emb.get(2, c)).abs() < 1e-15
            );
        }
        let mut rel = out.s_stru.clone();
        rel.add_assign(&p.traj_emb);
        assert_eq!(out.s_rel, rel);

        p.traj_emb.fill(0.0);
        let (out, _) = forward_relational(&p, &hg, RelationalMode::default(), None).unwrap();
        assert_eq!(out.s_rel, out.s_stru);
    }

    #[test]
    fn zero_attention_vector_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hg = random_hypergraph(&mut rng, 5, 4);
        let x = Mat::uniform(5, 2, 1.0, &mut rng);
        let s = Mat::uniform(4, 2, 1.0, &mut rng);
        let att = attention_incidence(&x, &s, &[0.0; 4], &hg, LEAKY_SLOPE).unwrap();
        for i in 0..5 {
            let deg = hg.trajs_of(i).len() as f64;
            for k in hg.row_range(i) {
                assert!((att.weights[k] - 1.0 / deg).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_is_inverted_and_off_in_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hg = random_hypergraph(&mut rng, 6, 4);
        let p = params(&mut rng, &hg, 3, 2);
        let (eval_a, _) = forward_relational(&p, &hg, RelationalMode::default(), None).unwrap();
        let (eval_b, _) = forward_relational(&p, &hg, RelationalMode::default(), None).unwrap();
        assert_eq!(eval_a.s_rel, eval_b.s_rel);

        let mut drng = ChaCha8Rng::seed_from_u64(1);
        let dp = Dropout {
            rate: 0.3,
            rng: &mut drng,
        };
        let (_, cache) = forward_relational(&p, &hg, RelationalMode::default(), Some(dp)).unwrap();
        let mask = cache.layers[0].mask.as_ref().unwrap();
        assert!(mask
            .iter()
            .all(|&m| m == 0.0 || (m - 1.0 / 0.7).abs() < 1e-15));
    }

    fn check_gradients(mode: RelationalMode, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hg = random_hypergraph(&mut rng, 6, 4);
        let p = params(&mut rng, &hg, 3, 2);
        let g = Mat::uniform(4, 3, 1.0, &mut rng);
        let loss = |p: &RelationalParams| {
            let (out, _) = forward_relational(p, &hg, mode, None).unwrap();
            dot(out.s_rel.data(), g.data())
        };
        let (_, cache) = forward_relational(&p, &hg, mode, None).unwrap();
        let mut grads = p.clone();
        grads.poi_emb.fill(0.0);
        grads.layer_weights.iter_mut().for_each(|w| w.fill(0.0));
        grads.attn_vec.fill(0.0);
        grads.traj_emb.fill(0.0);
        backward_relational(&p, &hg, mode, &cache, &g, &mut grads);

        let h = 1e-5;
        let check =
            |name: &str, get: &dyn Fn(&mut RelationalParams) -> &mut Mat, analytic: &Mat| {
                for idx in 0..analytic.len() {
                    let mut plus = p.clone();
                    get(&mut plus).data_mut()[idx] += h;
                    let mut minus = p.clone();
                    get(&mut minus).data_mut()[idx] -= h;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    let an = analytic.data()[idx];
                    let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                    assert!(err < 1e-4, "{name}[{idx}]: fd {fd} vs analytic {an}");
                }
            };
        check("poi_emb", &|p| &mut p.poi_emb, &grads.poi_emb);
        check(
            "layer0",
            &|p| &mut p.layer_weights[0],
            &grads.layer_weights[0],
        );
        check(
            "layer1",
            &|p| &mut p.layer_weights[1],
            &grads.layer_weights[1],
        );
        check("attn_vec", &|p| &mut p.attn_vec, &grads.attn_vec);
        check("traj_emb", &|p| &mut p.traj_emb, &grads.traj_emb);
    }

    #[test]
    fn gradients_full_mode() {
        check_gradients(RelationalMode::default(), 10);
    }

    #[test]
    fn gradients_pooled_mode() {
        check_gradients(
            RelationalMode {
                attentive: AttentiveRepr::Pooled,
                structural: true,
            },
            11,
        );
    }

    #[test]
    fn gradients_pooled_without_structural_term() {
        check_gradients(
            RelationalMode {
                attentive: AttentiveRepr::Pooled,
                structural: false,
            },
            12,
        );
    }
}
