use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on attachment points per fragment (used-AP sets are bitmasks).
pub const MAX_ATTACHMENT_POINTS: usize = 16;

const TOY_LIBRARY: &str = include_str!("../../data/toy_library.json");
const DESK_LIBRARY: &str = include_str!("../../data/desk_library.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub id: usize,
    pub name: String,
    pub aps: usize,
    pub size: usize,
    pub polarity: f64,
}

/// Fragment vocabulary. Ligand states refer to fragments by their position in
/// this list; `Fragment::id` is only used at file boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragmentLibrary {
    pub fragments: Vec<Fragment>,
}

impl FragmentLibrary {
    pub fn new(fragments: Vec<Fragment>) -> Result<Self> {
        if fragments.is_empty() {
            return Err(Error::Library("library has no fragments".into()));
        }
        let mut ids = BTreeSet::new();
        for f in &fragments {
            if !ids.insert(f.id) {
                return Err(Error::Library(format!("duplicate fragment id {}", f.id)));
            }
            if f.aps == 0 || f.aps > MAX_ATTACHMENT_POINTS {
                return Err(Error::Library(format!(
                    "fragment {} has {} attachment points; need 1..={MAX_ATTACHMENT_POINTS}",
                    f.id, f.aps
                )));
            }
            if !(0.0..=1.0).contains(&f.polarity) {
                return Err(Error::Library(format!("fragment {} polarity {} outside [0, 1]", f.id, f.polarity)));
            }
        }
        Ok(FragmentLibrary { fragments })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let lib: FragmentLibrary = serde_json::from_str(text)?;
        Self::new(lib.fragments)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })
    }

    /// Two single-attachment fragments; five terminal states at `max_nodes = 2`.
    pub fn toy() -> Self {
        Self::from_json_str(TOY_LIBRARY).expect("bundled toy library is valid")
    }

    /// Four fragments with one to three attachment points.
    pub fn desk() -> Self {
        Self::from_json_str(DESK_LIBRARY).expect("bundled desk library is valid")
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Fragment {
        &self.fragments[idx]
    }

    pub fn max_aps(&self) -> usize {
        self.fragments.iter().map(|f| f.aps).max().unwrap_or(0)
    }

    pub fn position_of(&self, id: usize) -> Option<usize> {
        self.fragments.iter().position(|f| f.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_libraries_parse() {
        assert_eq!(FragmentLibrary::toy().len(), 2);
        let desk = FragmentLibrary::desk();
        assert_eq!(desk.len(), 4);
        assert_eq!(desk.max_aps(), 3);
    }

    #[test]
    fn rejects_duplicates_and_bad_aps() {
        let f = |id, aps| Fragment {
            id,
            name: "x".into(),
            aps,
            size: 1,
            polarity: 0.5,
        };
        assert!(FragmentLibrary::new(vec![f(0, 1), f(0, 2)]).is_err());
        assert!(FragmentLibrary::new(vec![f(0, 0)]).is_err());
        assert!(FragmentLibrary::new(vec![]).is_err());
    }
}
