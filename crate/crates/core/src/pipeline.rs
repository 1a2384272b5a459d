//! End-to-end orchestration: preprocessing, on-disk artifacts, training and
//! evaluation of a model variant.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::checkpoint::{user_digest, Checkpoint};
use crate::data::{
    balance_training_set, filter_sparse, parse_checkins, segment_trajectories, split_dataset,
    write_canonical, BalanceConfig, BalanceRow, BalancedTrainSet, CheckIn, DatasetSplit,
    FilterConfig, InputFormat, Part, SplitPolicy, SplitRatios, Trajectory,
};
use crate::encoding::{PointEncoder, PointIndices, Vocab};
use crate::error::{ArtifactError, DataError, Error};
use crate::eval::{EvalReport, PredictionMatrix};
use crate::hypergraph::{build_hypergraph, TrajectoryHypergraph};
use crate::model::{predict, Ablation, ModelInputs};
use crate::params::ModelParams;
use crate::train::{train, TrainConfig, TrainData, TrainOutcome};

/// Version written to `meta.tsv`; loading rejects anything else.
pub const ARTIFACT_VERSION: u32 = 1;

pub const META_FILE: &str = "meta.tsv";
pub const CHECKINS_FILE: &str = "checkins.tsv";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const BALANCE_FILE: &str = "balance.tsv";
pub const BALANCED_TRAIN_FILE: &str = "balanced_train.tsv";
pub const VOCAB_FILES: [&str; 4] = [
    "vocab_poi.tsv",
    "vocab_geo.tsv",
    "vocab_slot.tsv",
    "vocab_day.tsv",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrepConfig {
    pub filter: FilterConfig,
    pub ratios: SplitRatios,
    pub policy: SplitPolicy,
    /// Seeds both the split and the balancing draws.
    pub split_seed: u64,
    pub theta_t: f64,
    pub utc_offset_secs: i64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            ratios: SplitRatios::default(),
            policy: SplitPolicy::default(),
            split_seed: 0,
            theta_t: BalanceConfig::default().theta_t,
            utc_offset_secs: 0,
        }
    }
}

/// Everything preprocessing produces.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    /// Filtered check-ins.
    pub checkins: Vec<CheckIn>,
    pub trajectories: Vec<Trajectory>,
    pub split: DatasetSplit,
    /// Hypergraph vertices; vertex index = vocabulary index − 1.
    pub poi_vocab: Vocab,
    pub encoder: PointEncoder,
    pub balanced: BalancedTrainSet,
}

/// Table-style corpus statistics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stats {
    pub users: usize,
    pub pois: usize,
    pub checkins: usize,
    pub trajectories: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl fmt::Display for Stats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "users={} pois={} checkins={} trajectories={} train={} valid={} test={} length={}..{}",
            self.users,
            self.pois,
            self.checkins,
            self.trajectories,
            self.train,
            self.valid,
            self.test,
            self.min_len,
            self.max_len
        )
    }
}

/// Reads check-ins from a file in the given format.
pub fn read_checkins(path: &Path, format: InputFormat) -> Result<Vec<CheckIn>, Error> {
    let file = File::open(path).map_err(|e| ArtifactError::io(path, e))?;
    Ok(parse_checkins(BufReader::new(file), format)?.checkins)
}

/// Rounds coordinates to the six decimals of the canonical format, so an
/// in-memory run and a run reloaded from disk see identical values.
fn canonical_coordinates(mut checkins: Vec<CheckIn>) -> Vec<CheckIn> {
    for c in &mut checkins {
        c.lat = format!("{:.6}", c.lat)
            .parse()
            .expect("formatted float parses");
        c.lon = format!("{:.6}", c.lon)
            .parse()
            .expect("formatted float parses");
    }
    checkins
}

/// filter → segment → split → balance.
pub fn preprocess(checkins: Vec<CheckIn>, cfg: &PrepConfig) -> Result<Prepared, Error> {
    let checkins = filter_sparse(canonical_coordinates(checkins), cfg.filter)?;
    let trajectories = segment_trajectories(&checkins);
    let split = split_dataset(&trajectories, cfg.ratios, cfg.policy, cfg.split_seed);
    let balanced = balance_training_set(
        &split.labelled(Part::Train),
        BalanceConfig {
            theta_t: cfg.theta_t,
            seed: cfg.split_seed,
        },
    )?;
    let poi_vocab = Vocab::from_tokens(checkins.iter().map(|c| c.poi_id.clone()));
    let encoder = PointEncoder::fit(&checkins, cfg.utc_offset_secs)?;
    Ok(Prepared {
        checkins,
        trajectories,
        split,
        poi_vocab,
        encoder,
        balanced,
    })
}

/// Hypergraph and encoded sequences over every trajectory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub hypergraph: TrajectoryHypergraph,
    pub sequences: Vec<Vec<PointIndices>>,
}

impl Corpus {
    pub fn inputs(&self) -> ModelInputs<'_> {
        ModelInputs {
            hypergraph: &self.hypergraph,
            sequences: &self.sequences,
        }
    }
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), ArtifactError> {
    let io = |e| ArtifactError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    f(&mut w).map_err(io)?;
    w.flush().map_err(io)
}

fn read_lines(path: &Path) -> Result<Vec<String>, ArtifactError> {
    let file = File::open(path).map_err(|e| ArtifactError::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ArtifactError::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> ArtifactError {
    ArtifactError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_vocab(path: &Path) -> Result<Vocab, ArtifactError> {
    let file = File::open(path).map_err(|e| ArtifactError::io(path, e))?;
    Vocab::read_tsv(BufReader::new(file)).map_err(|e| ArtifactError::io(path, e))
}

impl Prepared {
    pub fn num_users(&self) -> usize {
        self.split.num_users()
    }

    /// POI id → hypergraph vertex.
    pub fn poi_index(&self) -> BTreeMap<String, usize> {
        self.poi_vocab
            .iter()
            .map(|(t, i)| (t.to_string(), i - 1))
            .collect()
    }

    pub fn corpus(&self) -> Result<Corpus, Error> {
        let hypergraph = build_hypergraph(&self.trajectories, &self.poi_index())?;
        let sequences = self
            .trajectories
            .iter()
            .map(|t| {
                t.points
                    .iter()
                    .map(|c| self.encoder.encode(c))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Corpus {
            hypergraph,
            sequences,
        })
    }

    /// Unbalanced training trajectory count per user label.
    pub fn train_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_users()];
        for (_, y) in self.split.labelled(Part::Train) {
            counts[y] += 1;
        }
        counts
    }

    /// Training multiset for a variant: the balanced set unless `D` is active.
    pub fn training_entries(&self, ablation: &Ablation) -> Vec<(usize, usize)> {
        if ablation.balances() {
            self.balanced.entries.clone()
        } else {
            self.split.labelled(Part::Train)
        }
    }

    pub fn user_digest(&self) -> u32 {
        user_digest(&self.split.users)
    }

    pub fn stats(&self) -> Stats {
        let lens = self.trajectories.iter().map(Trajectory::len);
        Stats {
            users: self.num_users(),
            pois: self.poi_vocab.len(),
            checkins: self.checkins.len(),
            trajectories: self.trajectories.len(),
            train: self.split.ids(Part::Train).len(),
            valid: self.split.ids(Part::Valid).len(),
            test: self.split.ids(Part::Test).len(),
            min_len: lens.clone().min().unwrap_or(0),
            max_len: lens.max().unwrap_or(0),
        }
    }

    /// Writes every artifact into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        fs::create_dir_all(dir).map_err(|e| ArtifactError::io(dir, e))?;
        write_file(&dir.join(META_FILE), |w| {
            writeln!(w, "format_version\t{ARTIFACT_VERSION}")?;
            writeln!(w, "utc_offset_secs\t{}", self.encoder.utc_offset_secs)
        })?;
        write_file(&dir.join(CHECKINS_FILE), |w| {
            write_canonical(w, &self.checkins)
        })?;
        write_file(&dir.join(MANIFEST_FILE), |w| {
            for t in &self.trajectories {
                let part = self.split.parts[t.traj_id];
                writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}",
                    t.traj_id,
                    t.user_id,
                    t.week_key,
                    part,
                    t.len()
                )?;
            }
            Ok(())
        })?;
        let vocabs = [
            &self.poi_vocab,
            &self.encoder.geo_vocab,
            &Vocab::slots(),
            &Vocab::days(),
        ];
        for (name, vocab) in VOCAB_FILES.iter().zip(vocabs) {
            write_file(&dir.join(name), |w| vocab.write_tsv(w))?;
        }
        write_file(&dir.join(BALANCE_FILE), |w| {
            for row in &self.balanced.report {
                writeln!(
                    w,
                    "{}\t{}\t{}",
                    self.split.users[row.label], row.before, row.after
                )?;
            }
            Ok(())
        })?;
        write_file(&dir.join(BALANCED_TRAIN_FILE), |w| {
            for &(j, y) in &self.balanced.entries {
                writeln!(w, "{j}\t{}", self.split.users[y])?;
            }
            Ok(())
        })?;
        Ok(())
    }

    /// Reloads artifacts written by [`Prepared::write`], re-deriving the
    /// trajectories and checking them against the manifest.
    pub fn load(dir: &Path) -> Result<Self, Error> {
        let meta_path = dir.join(META_FILE);
        let mut meta = BTreeMap::new();
        for (n, line) in read_lines(&meta_path)?.iter().enumerate() {
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(&meta_path, n + 1, "expected key<TAB>value"))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let version: u32 = meta
            .get("format_version")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(&meta_path, 1, "missing format_version"))?;
        if version != ARTIFACT_VERSION {
            return Err(ArtifactError::Version {
                found: version,
                expected: ARTIFACT_VERSION,
            }
            .into());
        }
        let utc_offset_secs: i64 = meta
            .get("utc_offset_secs")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(&meta_path, 2, "missing utc_offset_secs"))?;

        let checkins = read_checkins(&dir.join(CHECKINS_FILE), InputFormat::CanonicalTsv)?;
        let trajectories = segment_trajectories(&checkins);
        let users: Vec<String> = {
            let mut u: Vec<String> = trajectories.iter().map(|t| t.user_id.clone()).collect();
            u.sort();
            u.dedup();
            u
        };
        let label_of: BTreeMap<String, usize> = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();

        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = read_lines(&manifest_path)?;
        if manifest.len() != trajectories.len() {
            return Err(parse_err(
                &manifest_path,
                manifest.len(),
                format!(
                    "{} rows for {} trajectories",
                    manifest.len(),
                    trajectories.len()
                ),
            )
            .into());
        }
        let mut parts = Vec::with_capacity(trajectories.len());
        for (n, (line, t)) in manifest.iter().zip(&trajectories).enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let expected = [t.traj_id.to_string(), t.user_id.clone(), t.week_key.clone()];
            let part = f.get(3).and_then(|p| Part::parse(p));
            let count_ok = f.get(4).and_then(|c| c.parse::<usize>().ok()) == Some(t.len());
            if f.len() != 5
                || f[..3] != expected.each_ref().map(String::as_str)
                || part.is_none()
                || !count_ok
            {
                return Err(parse_err(
                    &manifest_path,
                    n + 1,
                    "row does not match the check-in data",
                )
                .into());
            }
            parts.push(part.expect("checked above"));
        }
        let labels = trajectories.iter().map(|t| label_of[&t.user_id]).collect();
        let split = DatasetSplit {
            parts,
            labels,
            users,
        };

        let poi_vocab = read_vocab(&dir.join(VOCAB_FILES[0]))?;
        let geo_vocab = read_vocab(&dir.join(VOCAB_FILES[1]))?;
        for (name, fixed) in [
            (VOCAB_FILES[2], Vocab::slots()),
            (VOCAB_FILES[3], Vocab::days()),
        ] {
            if read_vocab(&dir.join(name))? != fixed {
                return Err(parse_err(&dir.join(name), 1, "unexpected vocabulary").into());
            }
        }

        let balance_path = dir.join(BALANCE_FILE);
        let mut report = Vec::new();
        for (n, line) in read_lines(&balance_path)?.iter().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let row = match f.as_slice() {
                [u, b, a] => label_of
                    .get(*u)
                    .zip(b.parse().ok())
                    .zip(a.parse().ok())
                    .map(|((&label, before), after)| BalanceRow {
                        label,
                        before,
                        after,
                    }),
                _ => None,
            };
            report.push(row.ok_or_else(|| {
                parse_err(&balance_path, n + 1, "expected user<TAB>before<TAB>after")
            })?);
        }
        let entries_path = dir.join(BALANCED_TRAIN_FILE);
        let mut entries = Vec::new();
        for (n, line) in read_lines(&entries_path)?.iter().enumerate() {
            let entry = line.split_once('\t').and_then(|(j, u)| {
                let j: usize = j.parse().ok()?;
                let y = *label_of.get(u)?;
                (j < split.labels.len() && split.labels[j] == y && split.parts[j] == Part::Train)
                    .then_some((j, y))
            });
            entries.push(
                entry.ok_or_else(|| parse_err(&entries_path, n + 1, "unknown training entry"))?,
            );
        }

        Ok(Self {
            checkins,
            trajectories,
            split,
            poi_vocab,
            encoder: PointEncoder {
                geo_vocab,
                utc_offset_secs,
            },
            balanced: BalancedTrainSet { entries, report },
        })
    }
}

/// Trains one variant on prepared data.
pub fn train_variant(
    prep: &Prepared,
    corpus: &Corpus,
    cfg: &TrainConfig,
    ablation: &Ablation,
) -> Result<TrainOutcome, Error> {
    let entries = prep.training_entries(ablation);
    if entries.is_empty() {
        return Err(DataError::EmptyTrain.into());
    }
    let valid = prep.split.labelled(Part::Valid);
    let data = TrainData {
        inputs: corpus.inputs(),
        train: &entries,
        valid: &valid,
        num_users: prep.num_users(),
        geo_rows: prep.encoder.geo_vocab.table_rows(),
    };
    train(&data, cfg, ablation)
}

/// Scores of one split part.
pub fn predictions(
    prep: &Prepared,
    corpus: &Corpus,
    params: &ModelParams,
    ablation: &Ablation,
    part: Part,
) -> Result<PredictionMatrix, Error> {
    let labelled = prep.split.labelled(part);
    let ids: Vec<usize> = labelled.iter().map(|&(j, _)| j).collect();
    let scores = predict(params, &corpus.inputs(), ablation, &ids)?;
    Ok(PredictionMatrix::new(
        scores,
        labelled.into_iter().map(|(_, y)| y).collect(),
    )?)
}

/// Full metric report of one split part.
pub fn evaluate(
    prep: &Prepared,
    corpus: &Corpus,
    params: &ModelParams,
    ablation: &Ablation,
    part: Part,
) -> Result<EvalReport, Error> {
    let pred = predictions(prep, corpus, params, ablation, part)?;
    Ok(EvalReport::compute(
        &ablation.to_string(),
        &pred,
        &prep.train_counts(),
    )?)
}

/// Checks that a checkpoint was trained on this dataset.
pub fn check_compatible(
    prep: &Prepared,
    corpus: &Corpus,
    ck: &Checkpoint,
) -> Result<(), ArtifactError> {
    let dims = ck.params.dims();
    let mismatch = |what: &str, a: usize, b: usize| {
        Err(ArtifactError::Mismatch(format!(
            "{what}: checkpoint has {a}, data has {b}"
        )))
    };
    if ck.user_digest != prep.user_digest() {
        return Err(ArtifactError::Mismatch("user sets differ".into()));
    }
    if dims.num_users != prep.num_users() {
        return mismatch("users", dims.num_users, prep.num_users());
    }
    if dims.num_pois != corpus.hypergraph.num_pois() {
        return mismatch("POIs", dims.num_pois, corpus.hypergraph.num_pois());
    }
    if dims.num_trajs != corpus.hypergraph.num_trajs() {
        return mismatch(
            "trajectories",
            dims.num_trajs,
            corpus.hypergraph.num_trajs(),
        );
    }
    if dims.geo_rows != prep.encoder.geo_vocab.table_rows() {
        return mismatch(
            "geo cells",
            dims.geo_rows,
            prep.encoder.geo_vocab.table_rows(),
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn small() -> Prepared {
        let corpus = generate(&SynthConfig {
            n_users: 6,
            n_pois: 12,
            weeks: 6,
            ..SynthConfig::default()
        })
        .unwrap();
        preprocess(corpus.checkins, &PrepConfig::default()).unwrap()
    }

    #[test]
    fn artifacts_round_trip() {
        let prep = small();
        let dir = tempfile::tempdir().unwrap();
        prep.write(dir.path()).unwrap();
        let back = Prepared::load(dir.path()).unwrap();
        assert_eq!(back, prep);
        let stats = prep.stats();
        assert_eq!(stats.users, 6);
        assert_eq!(stats.train + stats.valid + stats.test, stats.trajectories);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let prep = small();
        let dir = tempfile::tempdir().unwrap();
        prep.write(dir.path()).unwrap();
        fs::write(
            dir.path().join(META_FILE),
            "format_version\t99\nutc_offset_secs\t0\n",
        )
        .unwrap();
        assert!(matches!(
            Prepared::load(dir.path()),
            Err(Error::Artifact(ArtifactError::Version { found: 99, .. }))
        ));
    }

    #[test]
    fn variant_d_uses_raw_training_set() {
        let prep = small();
        let full = prep.training_entries(&Ablation::full());
        let d = prep.training_entries(&"d".parse().unwrap());
        assert_eq!(d, prep.split.labelled(Part::Train));
        assert_eq!(full, prep.balanced.entries);
    }
}
