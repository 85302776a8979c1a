use std::fs;
use std::path::Path;

use super::graph::{validate_residues, Residue};
use crate::error::{Error, Result};

/// Parses pocket JSON Lines: one `{"index", "res", "ca"}` record per residue.
pub fn parse_pocket_jsonl(text: &str, path: &Path) -> Result<Vec<Residue>> {
    let mut residues = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: Residue = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        residues.push(r);
    }
    validate_residues(&residues).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(residues)
}

pub fn load_pocket_jsonl(path: impl AsRef<Path>) -> Result<Vec<Residue>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pocket_jsonl(&text, path)
}

pub fn write_pocket_jsonl(path: impl AsRef<Path>, residues: &[Residue]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in residues {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records_and_rejects_gaps() {
        let ok = "{\"index\": 3, \"res\": 1, \"ca\": [0, 0, 0]}\n{\"index\": 4, \"res\": 2, \"ca\": [1.5, 0, 0]}\n";
        let r = parse_pocket_jsonl(ok, Path::new("p.jsonl")).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].residue_type, 2);

        let gap = "{\"index\": 0, \"res\": 1, \"ca\": [0, 0, 0]}\n{\"index\": 2, \"res\": 2, \"ca\": [1, 0, 0]}\n";
        assert!(parse_pocket_jsonl(gap, Path::new("p.jsonl")).is_err());

        let bad = "{\"index\": 0, \"res\": 1}\n";
        let err = parse_pocket_jsonl(bad, Path::new("p.jsonl")).unwrap_err().to_string();
        assert!(err.contains("p.jsonl:1"), "{err}");
    }
}
