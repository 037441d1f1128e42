//! Plain-text `key = value` files. Blank lines and `#` comments are ignored.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyValues {
    source: PathBuf,
    entries: Vec<Entry>,
}

impl KeyValues {
    pub fn parse(text: &str, source: impl Into<PathBuf>) -> Result<Self> {
        let source = source.into();
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: source.clone(),
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = k.trim().to_string();
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::Parse {
                    path: source.clone(),
                    line: i + 1,
                    reason: format!("duplicate key `{key}` (first on line {})", prev.line),
                });
            }
            entries.push(Entry {
                key,
                value: v.trim().to_string(),
                line: i + 1,
            });
        }
        Ok(Self { source, entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    fn bad(&self, entry: &Entry, reason: String) -> Error {
        Error::Parse {
            path: self.source.clone(),
            line: entry.line,
            reason,
        }
    }

    pub fn float(&self, entry: &Entry) -> Result<f64> {
        entry
            .value
            .parse::<f64>()
            .map_err(|e| self.bad(entry, format!("{}: {e}", entry.key)))
    }

    pub fn uint(&self, entry: &Entry) -> Result<u64> {
        entry
            .value
            .parse::<u64>()
            .map_err(|e| self.bad(entry, format!("{}: {e}", entry.key)))
    }

    pub fn count(&self, entry: &Entry) -> Result<usize> {
        Ok(self.uint(entry)? as usize)
    }

    pub fn unknown(&self, entry: &Entry) -> Error {
        self.bad(entry, format!("unknown key `{}`", entry.key))
    }
}

impl TrainConfig {
    /// Applies every entry on top of `self`. Unknown keys are errors.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for e in kv.entries() {
            match e.key.as_str() {
                "adam_epochs" => self.adam_epochs = kv.count(e)?,
                "adam_lr" => self.adam_lr = kv.float(e)?,
                "lbfgs_memory" => self.lbfgs.memory = kv.count(e)?,
                "rel_loss_tol" => self.lbfgs.rel_loss_tol = kv.float(e)?,
                "max_iters" => self.lbfgs.max_iters = kv.count(e)?,
                "copies_per_run" => self.augment.copies_per_run = kv.count(e)?,
                "max_shift_s" => self.augment.max_shift_s = kv.float(e)?,
                "seed" => self.seed = kv.uint(e)?,
                "dt_resample" => self.dt_resample = kv.float(e)?,
                "substeps" => self.substeps = kv.count(e)?,
                "init_capacitance" => self.init_capacitance = kv.float(e)?,
                "n_train" => self.n_train = kv.count(e)?,
                "trials" => self.trials = kv.count(e)?,
                _ => return Err(kv.unknown(e)),
            }
        }
        self.validate()
    }

    pub fn to_text(&self) -> String {
        format!(
            "adam_epochs = {}\nadam_lr = {:?}\nlbfgs_memory = {}\nrel_loss_tol = {:?}\nmax_iters = {}\n\
             copies_per_run = {}\nmax_shift_s = {:?}\nseed = {}\ndt_resample = {:?}\nsubsteps = {}\n\
             init_capacitance = {:?}\nn_train = {}\ntrials = {}\n",
            self.adam_epochs,
            self.adam_lr,
            self.lbfgs.memory,
            self.lbfgs.rel_loss_tol,
            self.lbfgs.max_iters,
            self.augment.copies_per_run,
            self.augment.max_shift_s,
            self.seed,
            self.dt_resample,
            self.substeps,
            self.init_capacitance,
            self.n_train,
            self.trials,
        )
    }
}
