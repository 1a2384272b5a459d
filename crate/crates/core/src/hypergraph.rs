//! POI-by-trajectory incidence structure.
//!
//! Vertices are POIs, hyperedges are trajectories. The binary incidence `H`
//! is stored row-compressed (per-POI trajectory lists) with a
//! column-compressed mirror (per-trajectory POI lists). Edge weights such as
//! attention scores live in flat slices aligned with the row-compressed
//! order, so `weights[k]` belongs to the `k`-th stored nonzero.

use std::collections::BTreeMap;
use std::io::{self, Write};

use crate::data::Trajectory;
use crate::error::HypergraphError;
use crate::tensor::{axpy, Mat};

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryHypergraph {
    num_pois: usize,
    num_trajs: usize,
    row_ptr: Vec<usize>,
    /// Trajectory index of each nonzero, row-compressed order.
    col_idx: Vec<usize>,
    col_ptr: Vec<usize>,
    /// For each column-compressed slot: `(poi, position in row-compressed order)`.
    col_entries: Vec<(usize, usize)>,
    vertex_degree: Vec<f64>,
    edge_degree: Vec<f64>,
}

impl TrajectoryHypergraph {
    /// Builds the incidence from per-trajectory POI index lists. Repeated
    /// visits collapse to a single nonzero.
    pub fn from_poi_lists(
        num_pois: usize,
        traj_pois: &[Vec<usize>],
    ) -> Result<Self, HypergraphError> {
        let num_trajs = traj_pois.len();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); num_pois];
        for (j, pois) in traj_pois.iter().enumerate() {
            if pois.is_empty() {
                return Err(HypergraphError::EmptyTrajectory(j));
            }
            let mut distinct = pois.clone();
            distinct.sort_unstable();
            distinct.dedup();
            for p in distinct {
                if p >= num_pois {
                    return Err(HypergraphError::PoiIndexOutOfRange {
                        traj: j,
                        poi: p,
                        pois: num_pois,
                    });
                }
                rows[p].push(j);
            }
        }

        let mut row_ptr = Vec::with_capacity(num_pois + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for (i, r) in rows.iter().enumerate() {
            if r.is_empty() {
                return Err(HypergraphError::ZeroDegree("vertex", i));
            }
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }

        let mut edge_count = vec![0usize; num_trajs];
        for &j in &col_idx {
            edge_count[j] += 1;
        }
        let mut col_ptr = Vec::with_capacity(num_trajs + 1);
        col_ptr.push(0);
        for &c in &edge_count {
            col_ptr.push(col_ptr.last().unwrap() + c);
        }
        let mut fill = col_ptr[..num_trajs].to_vec();
        let mut col_entries = vec![(0, 0); col_idx.len()];
        for i in 0..num_pois {
            for k in row_ptr[i]..row_ptr[i + 1] {
                let j = col_idx[k];
                col_entries[fill[j]] = (i, k);
                fill[j] += 1;
            }
        }

        Ok(Self {
            num_pois,
            num_trajs,
            vertex_degree: (0..num_pois)
                .map(|i| (row_ptr[i + 1] - row_ptr[i]) as f64)
                .collect(),
            edge_degree: edge_count.iter().map(|&c| c as f64).collect(),
            row_ptr,
            col_idx,
            col_ptr,
            col_entries,
        })
    }

    pub fn num_pois(&self) -> usize {
        self.num_pois
    }

    pub fn num_trajs(&self) -> usize {
        self.num_trajs
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// `D`: number of trajectories containing each POI.
    pub fn vertex_degree(&self) -> &[f64] {
        &self.vertex_degree
    }

    /// `B`: number of distinct POIs in each trajectory.
    pub fn edge_degree(&self) -> &[f64] {
        &self.edge_degree
    }

    /// Row-compressed slot range of POI `i`.
    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// Trajectory index of row-compressed slot `k`.
    #[inline]
    pub fn col_of(&self, k: usize) -> usize {
        self.col_idx[k]
    }

    /// Trajectories containing POI `i`, ascending.
    pub fn trajs_of(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_range(i)]
    }

    /// `(poi, slot)` pairs of trajectory `j`, ascending by POI.
    pub fn pois_of(&self, j: usize) -> &[(usize, usize)] {
        &self.col_entries[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    pub fn binary_weights(&self) -> Vec<f64> {
        vec![1.0; self.nnz()]
    }

    /// Dense `L × N` copy of a weighted incidence (tests and debugging).
    pub fn to_dense(&self, weights: &[f64]) -> Mat {
        let mut h = Mat::zeros(self.num_pois, self.num_trajs);
        for i in 0..self.num_pois {
            for k in self.row_range(i) {
                h.set(i, self.col_idx[k], weights[k]);
            }
        }
        h
    }

    /// Sorted `poi_index \t traj_index` edge list.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> io::Result<()> {
        for i in 0..self.num_pois {
            for &j in self.trajs_of(i) {
                writeln!(out, "{i}\t{j}")?;
            }
        }
        Ok(())
    }

    fn check_operands(&self, weights: &[f64], x: &Mat) -> Result<(), HypergraphError> {
        if weights.len() != self.nnz() {
            return Err(HypergraphError::Shape(format!(
                "{} weights for {} nonzeros",
                weights.len(),
                self.nnz()
            )));
        }
        if x.rows() != self.num_pois {
            return Err(HypergraphError::Shape(format!(
                "feature matrix has {} rows for {} POIs",
                x.rows(),
                self.num_pois
            )));
        }
        if let Some(i) = self.vertex_degree.iter().position(|&d| d <= 0.0) {
            return Err(HypergraphError::ZeroDegree("vertex", i));
        }
        if let Some(j) = self.edge_degree.iter().position(|&b| b <= 0.0) {
            return Err(HypergraphError::ZeroDegree("hyperedge", j));
        }
        Ok(())
    }
}

/// Intermediate of [`normalized_operator_apply`] kept for the backward pass.
#[derive(Clone, Debug)]
pub struct OperatorCache {
    /// `D^{-1/2} X`
    pub scaled_input: Mat,
    /// `B^{-1} H_effᵀ D^{-1/2} X`, one row per trajectory.
    pub edge_features: Mat,
}

/// Builds the hypergraph over `trajectories` using a fixed POI vocabulary.
pub fn build_hypergraph(
    trajectories: &[Trajectory],
    poi_index: &BTreeMap<String, usize>,
) -> Result<TrajectoryHypergraph, HypergraphError> {
    let lists = trajectories
        .iter()
        .enumerate()
        .map(|(j, t)| {
            t.points
                .iter()
                .map(|c| {
                    poi_index
                        .get(&c.poi_id)
                        .copied()
                        .ok_or_else(|| HypergraphError::UnknownPoi {
                            traj: j,
                            poi: c.poi_id.clone(),
                        })
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    TrajectoryHypergraph::from_poi_lists(poi_index.len(), &lists)
}

/// `D^{-1/2} H_eff B^{-1} H_effᵀ D^{-1/2} X` as two sparse passes
/// (POIs → trajectories → POIs). `D` and `B` are the binary degrees.
pub fn normalized_operator_apply(
    hg: &TrajectoryHypergraph,
    weights: &[f64],
    x: &Mat,
) -> Result<Mat, HypergraphError> {
    normalized_operator_forward(hg, weights, x).map(|(y, _)| y)
}

pub fn normalized_operator_forward(
    hg: &TrajectoryHypergraph,
    weights: &[f64],
    x: &Mat,
) -> Result<(Mat, OperatorCache), HypergraphError> {
    hg.check_operands(weights, x)?;
    let d = x.cols();
    let inv_sqrt_d: Vec<f64> = hg.vertex_degree.iter().map(|&v| 1.0 / v.sqrt()).collect();

    let mut u = x.clone();
    for (i, &s) in inv_sqrt_d.iter().enumerate() {
        u.row_mut(i).iter_mut().for_each(|v| *v *= s);
    }

    let mut e = Mat::zeros(hg.num_trajs, d);
    for i in 0..hg.num_pois {
        for k in hg.row_range(i) {
            axpy(weights[k], u.row(i), e.row_mut(hg.col_idx[k]));
        }
    }
    for (j, &b) in hg.edge_degree.iter().enumerate() {
        e.row_mut(j).iter_mut().for_each(|v| *v /= b);
    }

    let mut y = Mat::zeros(hg.num_pois, d);
    for i in 0..hg.num_pois {
        let out = y.row_mut(i);
        for k in hg.row_range(i) {
            axpy(weights[k], e.row(hg.col_idx[k]), out);
        }
        out.iter_mut().for_each(|v| *v *= inv_sqrt_d[i]);
    }
    Ok((
        y,
        OperatorCache {
            scaled_input: u,
            edge_features: e,
        },
    ))
}

/// Gradients of the normalized operator w.r.t. its input and edge weights.
///
/// Returns `(dX, dweights)` for an upstream gradient `dy`.
pub fn normalized_operator_backward(
    hg: &TrajectoryHypergraph,
    weights: &[f64],
    cache: &OperatorCache,
    dy: &Mat,
) -> (Mat, Vec<f64>) {
    let d = dy.cols();
    let inv_sqrt_d: Vec<f64> = hg.vertex_degree.iter().map(|&v| 1.0 / v.sqrt()).collect();
    let mut dweights = vec![0.0; weights.len()];

    // y_i = s_i Σ_k w_k e_j
    let mut de = Mat::zeros(hg.num_trajs, d);
    let mut scaled_dy = vec![0.0; d];
    for i in 0..hg.num_pois {
        scaled_dy
            .iter_mut()
            .zip(dy.row(i))
            .for_each(|(o, &g)| *o = g * inv_sqrt_d[i]);
        for k in hg.row_range(i) {
            let j = hg.col_idx[k];
            dweights[k] += crate::tensor::dot(&scaled_dy, cache.edge_features.row(j));
            axpy(weights[k], &scaled_dy, de.row_mut(j));
        }
    }
    // e_j = (1/B_j) Σ_k w_k u_i
    for (j, &b) in hg.edge_degree.iter().enumerate() {
        de.row_mut(j).iter_mut().for_each(|v| *v /= b);
    }
    let mut dx = Mat::zeros(hg.num_pois, d);
    for i in 0..hg.num_pois {
        for k in hg.row_range(i) {
            let j = hg.col_idx[k];
            dweights[k] += crate::tensor::dot(cache.scaled_input.row(i), de.row(j));
            axpy(weights[k], de.row(j), dx.row_mut(i));
        }
        dx.row_mut(i).iter_mut().for_each(|v| *v *= inv_sqrt_d[i]);
    }
    (dx, dweights)
}

/// `Hᵀ X` with the binary incidence: each trajectory row is the sum of its
/// distinct POIs' rows.
pub fn structural_sum(hg: &TrajectoryHypergraph, x: &Mat) -> Mat {
    let mut out = Mat::zeros(hg.num_trajs, x.cols());
    for j in 0..hg.num_trajs {
        let row = out.row_mut(j);
        for &(i, _) in hg.pois_of(j) {
            axpy(1.0, x.row(i), row);
        }
    }
    out
}

/// Random POI lists in which every POI in `0..l` is visited at least once.
#[cfg(test)]
pub(crate) fn random_poi_lists<R: rand::Rng>(rng: &mut R, l: usize, n: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut lists = vec![Vec::new(); n];
    for p in 0..l {
        lists[rng.gen_range(0..n)].push(p);
    }
    for list in &mut lists {
        for _ in 0..rng.gen_range(usize::from(list.is_empty())..=2) {
            list.push(rng.gen_range(0..l));
        }
        list.shuffle(rng);
    }
    lists
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense `D^{-1/2} H B^{-1} Hᵀ D^{-1/2} X` with degrees from the binary pattern.
    fn dense_operator(h_bin: &Mat, h_eff: &Mat, x: &Mat) -> Mat {
        let (l, n) = h_bin.shape();
        let dv: Vec<f64> = (0..l).map(|i| h_bin.row(i).iter().sum()).collect();
        let de: Vec<f64> = (0..n)
            .map(|j| (0..l).map(|i| h_bin.get(i, j)).sum())
            .collect();
        let mut left = Mat::zeros(l, n);
        for i in 0..l {
            for j in 0..n {
                left.set(i, j, h_eff.get(i, j) / dv[i].sqrt() / de[j]);
            }
        }
        let mut right = Mat::zeros(n, l);
        for i in 0..l {
            for j in 0..n {
                right.set(j, i, h_eff.get(i, j) / dv[i].sqrt());
            }
        }
        left.matmul(&right).matmul(x)
    }

    fn random_lists(rng: &mut ChaCha8Rng, l: usize, n: usize) -> Vec<Vec<usize>> {
        random_poi_lists(rng, l, n)
    }

    #[test]
    fn cafe_park_gym_degrees() {
        // café 0, park 1, gym 2, restaurant 3
        let lists = vec![vec![0, 1, 3], vec![0, 1, 2], vec![0, 2]];
        let hg = TrajectoryHypergraph::from_poi_lists(4, &lists).unwrap();
        assert_eq!(hg.edge_degree(), &[3.0, 3.0, 2.0]);
        assert_eq!(&hg.vertex_degree()[..3], &[3.0, 2.0, 2.0]);
        assert_eq!(hg.vertex_degree()[3], 1.0);
    }

    #[test]
    fn single_point_hypergraph() {
        let hg = TrajectoryHypergraph::from_poi_lists(1, &[vec![0]]).unwrap();
        assert_eq!(hg.to_dense(&hg.binary_weights()).data(), &[1.0]);
        assert_eq!(hg.vertex_degree(), &[1.0]);
        assert_eq!(hg.edge_degree(), &[1.0]);
        let x = Mat::from_vec(1, 1, vec![2.5]);
        assert_eq!(
            normalized_operator_apply(&hg, &[1.0], &x).unwrap().data(),
            &[2.5]
        );
    }

    #[test]
    fn repeated_visits_are_binary() {
        let hg = TrajectoryHypergraph::from_poi_lists(2, &[vec![0, 0, 1, 0]]).unwrap();
        assert_eq!(hg.to_dense(&hg.binary_weights()).data(), &[1.0, 1.0]);
        assert_eq!(hg.edge_degree(), &[2.0]);
    }

    #[test]
    fn two_pois_one_trajectory() {
        let hg = TrajectoryHypergraph::from_poi_lists(2, &[vec![0, 1]]).unwrap();
        let x = Mat::from_vec(2, 1, vec![1.0, 0.0]);
        let y = normalized_operator_apply(&hg, &hg.binary_weights(), &x).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            TrajectoryHypergraph::from_poi_lists(2, &[vec![0], vec![]]),
            Err(HypergraphError::EmptyTrajectory(1))
        ));
        assert!(matches!(
            TrajectoryHypergraph::from_poi_lists(2, &[vec![0]]),
            Err(HypergraphError::ZeroDegree("vertex", 1))
        ));
        assert!(matches!(
            TrajectoryHypergraph::from_poi_lists(1, &[vec![3]]),
            Err(HypergraphError::PoiIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn unknown_poi_rejected() {
        use crate::data::CheckIn;
        let t = Trajectory {
            traj_id: 0,
            user_id: "u".into(),
            week_key: "2012-W01".into(),
            points: vec![CheckIn {
                user_id: "u".into(),
                timestamp: 1,
                lat: 0.0,
                lon: 0.0,
                poi_id: "nowhere".into(),
            }],
        };
        let vocab = BTreeMap::from([("p".to_string(), 0)]);
        assert!(matches!(
            build_hypergraph(&[t], &vocab),
            Err(HypergraphError::UnknownPoi { .. })
        ));
    }

    #[test]
    fn mirrors_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let lists = random_lists(&mut rng, 7, 5);
            let hg = TrajectoryHypergraph::from_poi_lists(7, &lists).unwrap();
            for (j, list) in lists.iter().enumerate() {
                let mut distinct = list.clone();
                distinct.sort_unstable();
                distinct.dedup();
                let from_mirror: Vec<usize> = hg.pois_of(j).iter().map(|&(i, _)| i).collect();
                assert_eq!(from_mirror, distinct);
                for &(i, k) in hg.pois_of(j) {
                    assert_eq!(hg.col_of(k), j);
                    assert!(hg.row_range(i).contains(&k));
                }
            }
        }
    }

    #[test]
    fn sparse_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let l = rng.gen_range(1..=8);
            let n = rng.gen_range(1..=5);
            let d = rng.gen_range(1..=4);
            let lists = random_lists(&mut rng, l, n);
            let hg = TrajectoryHypergraph::from_poi_lists(l, &lists).unwrap();
            let w: Vec<f64> = (0..hg.nnz()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let x = Mat::uniform(l, d, 1.0, &mut rng);
            let sparse = normalized_operator_apply(&hg, &w, &x).unwrap();
            let dense = dense_operator(&hg.to_dense(&hg.binary_weights()), &hg.to_dense(&w), &x);
            assert!(sparse.max_abs_diff(&dense) < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lists = random_lists(&mut rng, 5, 4);
        let hg = TrajectoryHypergraph::from_poi_lists(5, &lists).unwrap();
        let w: Vec<f64> = (0..hg.nnz()).map(|_| rng.gen_range(0.1..1.0)).collect();
        let x = Mat::uniform(5, 3, 1.0, &mut rng);
        let g = Mat::uniform(5, 3, 1.0, &mut rng);
        let loss = |w: &[f64], x: &Mat| -> f64 {
            let y = normalized_operator_apply(&hg, w, x).unwrap();
            crate::tensor::dot(y.data(), g.data())
        };
        let (_, cache) = normalized_operator_forward(&hg, &w, &x).unwrap();
        let (dx, dw) = normalized_operator_backward(&hg, &w, &cache, &g);
        let h = 1e-6;
        for k in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[k] += h;
            wm[k] -= h;
            let fd = (loss(&wp, &x) - loss(&wm, &x)) / (2.0 * h);
            assert!((fd - dw[k]).abs() < 1e-8);
        }
        for idx in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[idx] += h;
            xm.data_mut()[idx] -= h;
            let fd = (loss(&w, &xp) - loss(&w, &xm)) / (2.0 * h);
            assert!((fd - dx.data()[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn vertex_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let lists = random_lists(&mut rng, 6, 4);
        let perm = [3usize, 0, 5, 1, 4, 2]; // new index of old vertex i
        let permuted: Vec<Vec<usize>> = lists
            .iter()
            .map(|l| l.iter().map(|&p| perm[p]).collect())
            .collect();
        let a = TrajectoryHypergraph::from_poi_lists(6, &lists).unwrap();
        let b = TrajectoryHypergraph::from_poi_lists(6, &permuted).unwrap();
        let x = Mat::uniform(6, 2, 1.0, &mut rng);
        let mut xp = Mat::zeros(6, 2);
        for i in 0..6 {
            xp.row_mut(perm[i]).copy_from_slice(x.row(i));
        }
        let ya = normalized_operator_apply(&a, &a.binary_weights(), &x).unwrap();
        let yb = normalized_operator_apply(&b, &b.binary_weights(), &xp).unwrap();
        for i in 0..6 {
            for c in 0..2 {
                assert!((ya.get(i, c) - yb.get(perm[i], c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn structural_sum_adds_distinct_pois() {
        let hg = TrajectoryHypergraph::from_poi_lists(3, &[vec![0, 2, 2], vec![1]]).unwrap();
        let x = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 3.0]]);
        let s = structural_sum(&hg, &x);
        assert_eq!(s.row(0), &[3.0, 3.0]);
        assert_eq!(s.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn edge_list_dump_is_sorted() {
        let hg = TrajectoryHypergraph::from_poi_lists(2, &[vec![1], vec![0, 1]]).unwrap();
        let mut buf = Vec::new();
        hg.write_edge_list(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0\t1\n1\t0\n1\t1\n");
    }
}
