//! Trainable tensors of the full model, grouped by branch.
//!
//! Gradient buffers and optimizer moments reuse [`ModelParams`] so every
//! per-tensor loop (update, checkpoint, finite-difference check) walks the
//! same named list.

use rand::Rng;

use crate::tensor::Mat;

/// Hypergraph branch: POI embeddings, layer weights, attention vector and
/// the learnable per-trajectory embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationalParams {
    /// `L × d`, the layer-0 POI features.
    pub poi_emb: Mat,
    /// One `d × d` matrix per propagation layer.
    pub layer_weights: Vec<Mat>,
    /// `1 × 2d`; the first half scores the POI, the second the trajectory.
    pub attn_vec: Mat,
    /// `N × d`
    pub traj_emb: Mat,
}

/// Single-layer LSTM with gates stacked in `[input, forget, candidate, output]` order.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `4d × d`
    pub w_input: Mat,
    /// `4d × d`
    pub w_hidden: Mat,
    /// `1 × 4d`
    pub bias: Mat,
}

impl LstmParams {
    pub fn hidden(&self) -> usize {
        self.w_hidden.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingParams {
    pub geo: Mat,
    pub slot: Mat,
    pub day: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    /// `Q × d`
    pub weight: Mat,
    /// `1 × Q`
    pub bias: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub relational: RelationalParams,
    pub lstm: LstmParams,
    pub embeddings: EmbeddingParams,
    pub classifier: ClassifierParams,
}

/// Sizes needed to allocate a [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub dim: usize,
    pub layers: usize,
    pub num_pois: usize,
    pub num_trajs: usize,
    pub num_users: usize,
    /// Rows of the geo table, UNK included.
    pub geo_rows: usize,
}

pub const SLOT_ROWS: usize = crate::encoding::SLOTS_PER_DAY + 1;
pub const DAY_ROWS: usize = 3;

impl ModelParams {
    /// Uniform `[-1/√d, 1/√d]` everywhere except the attention vector
    /// (`1/√(2d)`) and the forget-gate bias, which starts at 1.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let d = dims.dim;
        let b = 1.0 / (d as f64).sqrt();
        let relational = RelationalParams {
            poi_emb: Mat::uniform(dims.num_pois, d, b, rng),
            layer_weights: (0..dims.layers)
                .map(|_| Mat::uniform(d, d, b, rng))
                .collect(),
            attn_vec: Mat::uniform(1, 2 * d, 1.0 / ((2 * d) as f64).sqrt(), rng),
            traj_emb: Mat::uniform(dims.num_trajs, d, b, rng),
        };
        let mut lstm = LstmParams {
            w_input: Mat::uniform(4 * d, d, b, rng),
            w_hidden: Mat::uniform(4 * d, d, b, rng),
            bias: Mat::uniform(1, 4 * d, b, rng),
        };
        lstm.bias.data_mut()[d..2 * d]
            .iter_mut()
            .for_each(|v| *v = 1.0);
        let embeddings = EmbeddingParams {
            geo: Mat::uniform(dims.geo_rows, d, b, rng),
            slot: Mat::uniform(SLOT_ROWS, d, b, rng),
            day: Mat::uniform(DAY_ROWS, d, b, rng),
        };
        let classifier = ClassifierParams {
            weight: Mat::uniform(dims.num_users, d, b, rng),
            bias: Mat::uniform(1, dims.num_users, b, rng),
        };
        Self {
            relational,
            lstm,
            embeddings,
            classifier,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            dim: self.relational.poi_emb.cols(),
            layers: self.relational.layer_weights.len(),
            num_pois: self.relational.poi_emb.rows(),
            num_trajs: self.relational.traj_emb.rows(),
            num_users: self.classifier.weight.rows(),
            geo_rows: self.embeddings.geo.rows(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, m| m.fill(0.0));
        z
    }

    /// Every tensor with its stable name, in checkpoint order.
    pub fn named(&self) -> Vec<(String, &Mat)> {
        let r = &self.relational;
        let mut out = vec![("poi_emb".to_string(), &r.poi_emb)];
        for (m, w) in r.layer_weights.iter().enumerate() {
            out.push((format!("layer_weight.{m}"), w));
        }
        out.extend([
            ("attn_vec".to_string(), &r.attn_vec),
            ("traj_emb".to_string(), &r.traj_emb),
            ("lstm.w_input".to_string(), &self.lstm.w_input),
            ("lstm.w_hidden".to_string(), &self.lstm.w_hidden),
            ("lstm.bias".to_string(), &self.lstm.bias),
            ("emb.geo".to_string(), &self.embeddings.geo),
            ("emb.slot".to_string(), &self.embeddings.slot),
            ("emb.day".to_string(), &self.embeddings.day),
            ("cls.weight".to_string(), &self.classifier.weight),
            ("cls.bias".to_string(), &self.classifier.bias),
        ]);
        out
    }

    /// Mutable walk in the same order as [`ModelParams::named`].
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Mat)) {
        let r = &mut self.relational;
        f("poi_emb", &mut r.poi_emb);
        for (m, w) in r.layer_weights.iter_mut().enumerate() {
            f(&format!("layer_weight.{m}"), w);
        }
        f("attn_vec", &mut r.attn_vec);
        f("traj_emb", &mut r.traj_emb);
        f("lstm.w_input", &mut self.lstm.w_input);
        f("lstm.w_hidden", &mut self.lstm.w_hidden);
        f("lstm.bias", &mut self.lstm.bias);
        f("emb.geo", &mut self.embeddings.geo);
        f("emb.slot", &mut self.embeddings.slot);
        f("emb.day", &mut self.embeddings.day);
        f("cls.weight", &mut self.classifier.weight);
        f("cls.bias", &mut self.classifier.bias);
    }

    /// Rebuilds parameters from named tensors, validating the layout.
    pub fn from_named(mut tensors: Vec<(String, Mat)>) -> Result<Self, String> {
        let mut take = |name: &str| -> Result<Mat, String> {
            let pos = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| format!("missing tensor {name}"))?;
            Ok(tensors.swap_remove(pos).1)
        };
        let poi_emb = take("poi_emb")?;
        let mut layer_weights = Vec::new();
        while let Ok(w) = take(&format!("layer_weight.{}", layer_weights.len())) {
            layer_weights.push(w);
        }
        let params = Self {
            relational: RelationalParams {
                poi_emb,
                layer_weights,
                attn_vec: take("attn_vec")?,
                traj_emb: take("traj_emb")?,
            },
            lstm: LstmParams {
                w_input: take("lstm.w_input")?,
                w_hidden: take("lstm.w_hidden")?,
                bias: take("lstm.bias")?,
            },
            embeddings: EmbeddingParams {
                geo: take("emb.geo")?,
                slot: take("emb.slot")?,
                day: take("emb.day")?,
            },
            classifier: ClassifierParams {
                weight: take("cls.weight")?,
                bias: take("cls.bias")?,
            },
        };
        if let Some((name, _)) = tensors.first() {
            return Err(format!("unexpected tensor {name}"));
        }
        params.validate()?;
        Ok(params)
    }

    /// Checks that all tensor shapes agree with each other.
    pub fn validate(&self) -> Result<(), String> {
        let d = self.relational.poi_emb.cols();
        let q = self.classifier.weight.rows();
        let checks: [(&str, (usize, usize), (usize, usize)); 10] = [
            ("attn_vec", self.relational.attn_vec.shape(), (1, 2 * d)),
            ("traj_emb", (0, self.relational.traj_emb.cols()), (0, d)),
            ("lstm.w_input", self.lstm.w_input.shape(), (4 * d, d)),
            ("lstm.w_hidden", self.lstm.w_hidden.shape(), (4 * d, d)),
            ("lstm.bias", self.lstm.bias.shape(), (1, 4 * d)),
            ("emb.geo", (0, self.embeddings.geo.cols()), (0, d)),
            ("emb.slot", self.embeddings.slot.shape(), (SLOT_ROWS, d)),
            ("emb.day", self.embeddings.day.shape(), (DAY_ROWS, d)),
            ("cls.weight", self.classifier.weight.shape(), (q, d)),
            ("cls.bias", self.classifier.bias.shape(), (1, q)),
        ];
        for (name, found, want) in checks {
            if found != want {
                return Err(format!("{name} has shape {found:?}, expected {want:?}"));
            }
        }
        if self.relational.layer_weights.is_empty() {
            return Err("at least one propagation layer is required".into());
        }
        for (m, w) in self.relational.layer_weights.iter().enumerate() {
            if w.shape() != (d, d) {
                return Err(format!("layer_weight.{m} has shape {:?}", w.shape()));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.is_finite())
    }
}
