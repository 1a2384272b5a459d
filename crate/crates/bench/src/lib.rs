//! Seeded workloads shared by the benchmarks.

use hgtul::hypergraph::TrajectoryHypergraph;
use hgtul::params::RelationalParams;
use hgtul::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random hypergraph with relational parameters to propagate over it.
pub struct Workload {
    pub hypergraph: TrajectoryHypergraph,
    pub params: RelationalParams,
    /// Edge weights in the hypergraph's row-compressed order.
    pub weights: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::uniform(rows, cols, 1.0 / (cols as f64).sqrt(), rng)
}

impl Workload {
    /// `trajs` trajectories of 4..=12 visits over `pois` POIs; every POI is
    /// visited at least once.
    pub fn new(pois: usize, trajs: usize, dim: usize, layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lists: Vec<Vec<usize>> = (0..trajs)
            .map(|_| {
                let len = rng.gen_range(4..=12);
                (0..len).map(|_| rng.gen_range(0..pois)).collect()
            })
            .collect();
        for p in 0..pois {
            let j = p % trajs;
            lists[j].push(p);
        }
        let hypergraph =
            TrajectoryHypergraph::from_poi_lists(pois, &lists).expect("covering lists");
        let weights = (0..hypergraph.nnz())
            .map(|_| rng.gen_range(0.1..1.0))
            .collect();
        let params = RelationalParams {
            poi_emb: uniform(&mut rng, pois, dim),
            layer_weights: (0..layers).map(|_| uniform(&mut rng, dim, dim)).collect(),
            attn_vec: uniform(&mut rng, 1, 2 * dim),
            traj_emb: uniform(&mut rng, trajs, dim),
        };
        Self {
            hypergraph,
            params,
            weights,
        }
    }
}
