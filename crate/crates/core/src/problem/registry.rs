use std::collections::BTreeMap;
use std::path::Path;

use super::{ex_linear, ex_toy, ProblemError, ProblemSpec};

/// Environment variable holding extra problem directories, separated like
/// `PATH`.
pub const PROBLEM_PATH_ENV: &str = "PESSIRELAX_PROBLEM_PATH";

/// Named problems: the built-ins plus anything loaded from directories.
#[derive(Clone, Debug)]
pub struct Registry {
    problems: BTreeMap<String, ProblemSpec>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Registry {
    pub fn builtin() -> Self {
        let mut problems = BTreeMap::new();
        for spec in [ex_toy(), ex_linear()] {
            problems.insert(spec.name.clone(), spec);
        }
        Registry { problems }
    }

    /// Built-ins plus every directory listed in `PESSIRELAX_PROBLEM_PATH`.
    pub fn from_env() -> Result<Self, ProblemError> {
        let mut reg = Self::builtin();
        if let Some(paths) = std::env::var_os(PROBLEM_PATH_ENV) {
            for dir in std::env::split_paths(&paths) {
                if !dir.as_os_str().is_empty() {
                    reg.load_dir(&dir)?;
                }
            }
        }
        Ok(reg)
    }

    /// Adds a problem. Re-adding an identical definition is a no-op.
    pub fn insert(&mut self, spec: ProblemSpec) -> Result<(), ProblemError> {
        match self.problems.get(&spec.name) {
            Some(old) if *old == spec => Ok(()),
            Some(_) => Err(ProblemError::Duplicate(spec.name)),
            None => {
                self.problems.insert(spec.name.clone(), spec);
                Ok(())
            }
        }
    }

    /// Loads every `*.toml` file of `dir` in file-name order; returns the
    /// names found.
    pub fn load_dir(&mut self, dir: &Path) -> Result<Vec<String>, ProblemError> {
        let io_err = |source| ProblemError::Io {
            file: dir.display().to_string(),
            source,
        };
        let mut files = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(io_err)? {
            let path = entry.map_err(io_err)?.path();
            if path.extension().is_some_and(|e| e == "toml") && path.is_file() {
                files.push(path);
            }
        }
        files.sort();
        let mut names = Vec::with_capacity(files.len());
        for path in files {
            let spec = ProblemSpec::load(&path)?;
            names.push(spec.name.clone());
            self.insert(spec)?;
        }
        Ok(names)
    }

    pub fn get(&self, name: &str) -> Result<&ProblemSpec, ProblemError> {
        self.problems
            .get(name)
            .ok_or_else(|| ProblemError::Unknown(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.problems.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ProblemSpec> {
        self.problems.values()
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{EX_LINEAR, EX_TOY};

    #[test]
    fn builtins_present() {
        let r = Registry::builtin();
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["ex_linear", "ex_toy"]);
        assert!(r.get("ex_toy").is_ok());
        assert!(matches!(r.get("nope"), Err(ProblemError::Unknown(_))));
    }

    #[test]
    fn load_dir_accepts_identical_builtin_and_rejects_conflict() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ex_toy.toml"), EX_TOY).unwrap();
        let extra = EX_LINEAR.replace("name = \"ex_linear\"", "name = \"lin2\"");
        std::fs::write(dir.path().join("lin2.toml"), extra).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let mut r = Registry::builtin();
        let names = r.load_dir(dir.path()).unwrap();
        assert_eq!(names, vec!["ex_toy", "lin2"]);
        assert_eq!(r.len(), 3);

        let clash = EX_TOY.replace("F = \"y1\"", "F = \"-y1\"");
        std::fs::write(dir.path().join("ex_toy.toml"), clash).unwrap();
        assert!(matches!(
            Registry::builtin().load_dir(dir.path()),
            Err(ProblemError::Duplicate(_))
        ));
    }

    #[test]
    fn shipped_files_match_builtins() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems");
        let mut r = Registry::builtin();
        let names = r.load_dir(&dir).unwrap();
        assert!(names.contains(&"ex_toy".to_string()));
        assert!(names.contains(&"ex_linear".to_string()));
        assert_eq!(r.len(), 2);
    }
}
