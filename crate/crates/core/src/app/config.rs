use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfn::TrainerConfig;
use crate::ligand::FragmentLibrary;
use crate::pocket::{load_pocket_jsonl, Residue};
use crate::policy::ModelConfig;
use crate::reward::RewardFn;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub molecules_per_pocket: usize,
    /// Sampling attempts allowed per requested unique molecule.
    pub attempts_per_molecule: usize,
    pub top_k: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            molecules_per_pocket: 100,
            attempts_per_molecule: 20,
            top_k: 10,
        }
    }
}

/// Everything a command needs. Relative paths resolve against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// One pocket per JSON Lines file; the file stem is the pocket id.
    pub pockets: Vec<PathBuf>,
    /// Fragment library file; the bundled four-fragment library when absent.
    pub library: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    pub reward: RewardFn,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pockets: vec![],
            library: None,
            out_dir: PathBuf::from("runs/default"),
            model: ModelConfig::default(),
            trainer: TrainerConfig::default(),
            reward: RewardFn::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.pockets.iter_mut().for_each(fix);
        if let Some(l) = self.library.as_mut() {
            fix(l);
        }
        fix(&mut self.out_dir);
    }

    /// Checks every field and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.trainer.validate()?;
        self.reward.validate()?;
        if self.pockets.is_empty() {
            return Err(Error::config("pockets", "at least one pocket file is required"));
        }
        for p in &self.pockets {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "pocket file not found"),
                ));
            }
        }
        if let Some(l) = &self.library {
            if !l.is_file() {
                return Err(Error::io(
                    l,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "library file not found"),
                ));
            }
        }
        if self.evaluation.molecules_per_pocket == 0 || self.evaluation.top_k == 0 {
            return Err(Error::config("evaluation", "molecules_per_pocket and top_k must be positive"));
        }
        if self.evaluation.attempts_per_molecule == 0 {
            return Err(Error::config("evaluation.attempts_per_molecule", "must be positive"));
        }
        Ok(())
    }

    pub fn load_library(&self) -> Result<FragmentLibrary> {
        match &self.library {
            Some(p) => FragmentLibrary::load(p),
            None => Ok(FragmentLibrary::desk()),
        }
    }

    /// `(id, residues)` per pocket file.
    pub fn load_pockets(&self) -> Result<Vec<(String, Vec<Residue>)>> {
        self.pockets
            .iter()
            .map(|p| {
                let id = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string());
                Ok((id, load_pocket_jsonl(p)?))
            })
            .collect()
    }
}
