use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::config::RunConfig;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::gfn::{rng_stream, train, CachedSampler, StepMetrics, STREAM_SAMPLE};
use crate::ligand::{FragmentLibrary, LigandEnv};
use crate::pocket::Pocket;
use crate::policy::{ConditioningMode, PolicyNet};
use crate::reward::{pocket_targets, EvaluationReport, MoleculeRecord, PocketTargets, RewardFn, RewardWeights};

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub mode: Option<ConditioningMode>,
    pub weights: Option<RewardWeights>,
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.trainer.seed = s;
        }
        if let Some(s) = o.steps {
            self.trainer.steps = s;
        }
        if let Some(m) = o.mode {
            self.model.mode = m;
        }
        if let Some(w) = o.weights {
            self.reward.weights = w;
        }
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn prepare_pockets(cfg: &RunConfig, policy: &PolicyNet, store: &ParamStore) -> Result<Vec<Pocket>> {
    cfg.load_pockets()?
        .iter()
        .map(|(id, residues)| policy.prepare_pocket(store, id, residues))
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    pub metrics: Vec<StepMetrics>,
}

/// Trains from a fresh initialization; writes `checkpoint.json` and `metrics.jsonl` under `out_dir`.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path, mut progress: impl FnMut(&StepMetrics)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let library = cfg.load_library()?;
    let env = LigandEnv::new(library.clone(), cfg.trainer.max_nodes)?;
    let mut store = ParamStore::new(cfg.trainer.seed);
    let policy = PolicyNet::new(&mut store, &library, cfg.model.clone())?;
    let pockets = prepare_pockets(cfg, &policy, &store)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_log = out_dir.join("metrics.jsonl");
    let file = File::create(&metrics_log).map_err(|e| Error::io(&metrics_log, e))?;
    let mut w = BufWriter::new(file);
    let metrics = train(&cfg.trainer, &policy, &mut store, &env, &pockets, &cfg.reward, |m| {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n").map_err(|e| Error::io(&metrics_log, e))?;
        progress(m);
        Ok(())
    })?;
    w.flush().map_err(|e| Error::io(&metrics_log, e))?;

    let meta = CheckpointMeta {
        model: cfg.model.clone(),
        max_nodes: cfg.trainer.max_nodes,
        library,
        reward: cfg.reward.clone(),
        seed: cfg.trainer.seed,
        steps: cfg.trainer.steps,
    };
    let checkpoint = out_dir.join("checkpoint.json");
    Checkpoint::new(meta, &store)?.save(&checkpoint)?;
    Ok(TrainOutcome {
        checkpoint,
        metrics_log,
        metrics,
    })
}

#[derive(Clone, Debug)]
pub struct SampleOutcome {
    pub records: Vec<MoleculeRecord>,
    /// `(pocket, unique molecules found)` where fewer than requested were found.
    pub shortfalls: Vec<(String, usize)>,
}

impl SampleOutcome {
    pub fn is_partial(&self) -> bool {
        !self.shortfalls.is_empty()
    }
}

/// Samples `n` unique molecules per pocket, scores them and writes JSON Lines to `out`.
/// Duplicates are redrawn up to `n · attempts_per_molecule` rollouts per pocket.
pub fn cmd_sample(
    cfg: &RunConfig,
    checkpoint: &Path,
    n: usize,
    seed: u64,
    expected_mode: Option<ConditioningMode>,
    out: &Path,
) -> Result<SampleOutcome> {
    if n == 0 {
        return Err(Error::config("n", "must be at least 1"));
    }
    cfg.validate()?;
    let ck = Checkpoint::load(checkpoint)?;
    if let Some(m) = expected_mode {
        if m != ck.meta.model.mode {
            return Err(Error::config(
                "mode",
                format!("checkpoint was trained in {} mode, requested {m}", ck.meta.model.mode),
            ));
        }
    }
    let (policy, store) = ck.restore()?;
    let library = ck.meta.library.clone();
    let env = LigandEnv::new(library.clone(), ck.meta.max_nodes)?;
    let pockets = prepare_pockets(cfg, &policy, &store)?;
    let max_attempts = n * cfg.evaluation.attempts_per_molecule;

    let mut records = Vec::new();
    let mut shortfalls = Vec::new();
    for (pi, pocket) in pockets.iter().enumerate() {
        let targets = pocket_targets(&cfg.reward.config, pocket.residues());
        let mut rng = rng_stream(seed, &[STREAM_SAMPLE, pi as u64]);
        let mut sampler = CachedSampler::new(&policy, &store, &env, pocket);
        let mut seen = BTreeSet::new();
        let mut attempts = 0;
        while seen.len() < n && attempts < max_attempts {
            attempts += 1;
            let s = sampler.sample(&mut rng)?;
            let canonical = s.canonical();
            if seen.insert(canonical.clone()) {
                let scores = cfg.reward.scores(targets, &library, &s)?;
                records.push(MoleculeRecord {
                    pocket: pocket.id.clone(),
                    canonical,
                    state: s,
                    scores,
                });
            }
        }
        if seen.len() < n {
            shortfalls.push((pocket.id.clone(), seen.len()));
        }
    }
    create_parent(out)?;
    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(file);
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(out, e))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(SampleOutcome { records, shortfalls })
}

pub fn read_molecules(path: &Path) -> Result<Vec<MoleculeRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: MoleculeRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

/// Re-scores every record from its state and checks it against the stored values.
fn recheck(
    path: &Path,
    records: &[MoleculeRecord],
    library: &FragmentLibrary,
    targets: &BTreeMap<String, PocketTargets>,
    reward: &RewardFn,
) -> Result<()> {
    let mut line = 0;
    for r in records {
        line += 1;
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let t = targets
            .get(&r.pocket)
            .ok_or_else(|| bad(format!("unknown pocket `{}`", r.pocket)))?;
        r.state.validate(library).map_err(|e| bad(e.to_string()))?;
        if r.state.canonical() != r.canonical {
            return Err(bad("canonical form does not match the stored state".into()));
        }
        let s = reward.scores(*t, library, &r.state).map_err(|e| bad(e.to_string()))?;
        if s != r.scores {
            return Err(bad(format!("stored scores {:?} differ from recomputed {:?}", r.scores, s)));
        }
    }
    Ok(())
}

/// Reads one molecule file per sampling set and reports mean ± standard error across sets.
pub fn cmd_evaluate(cfg: &RunConfig, files: &[PathBuf]) -> Result<EvaluationReport> {
    if files.is_empty() {
        return Err(Error::config("molecules", "at least one molecule file is required"));
    }
    cfg.validate()?;
    let library = cfg.load_library()?;
    let targets: BTreeMap<String, PocketTargets> = cfg
        .load_pockets()?
        .into_iter()
        .map(|(id, res)| (id, pocket_targets(&cfg.reward.config, &res)))
        .collect();
    let mut sets = Vec::with_capacity(files.len());
    for f in files {
        let records = read_molecules(f)?;
        recheck(f, &records, &library, &targets, &cfg.reward)?;
        sets.push(records);
    }
    EvaluationReport::from_sets(&sets, cfg.evaluation.top_k)
}
