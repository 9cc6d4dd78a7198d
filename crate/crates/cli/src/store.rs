//! On-disk layout of a run directory. Every file is written to a temporary
//! sibling and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use deid_core::corpus::AnnotatedSpan;
use deid_core::redaction::TransportMeta;
use serde::{Deserialize, Serialize};

use crate::config::{Backend, PromptVariant};
use crate::CliError;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Rejects ids that cannot serve as a single file name.
pub fn check_doc_id(id: &str) -> Result<(), CliError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(CliError::Usage(format!("doc_id {id:?} is not usable as a file name")))
    }
}

/// `outputs/<backend>/<variant>/`.
pub fn output_dir(out: &Path, backend: &str, variant: &str) -> PathBuf {
    out.join("outputs").join(backend).join(variant)
}

pub fn output_file(dir: &Path, doc_id: &str) -> PathBuf {
    dir.join(format!("{doc_id}.txt"))
}

pub fn meta_file(dir: &Path, doc_id: &str) -> PathBuf {
    dir.join(format!("{doc_id}.meta.json"))
}

/// Prompt and marker a backend ran under, stored next to its outputs.
pub fn prompt_file(out: &Path, backend: &str, variant: &str) -> PathBuf {
    out.join("outputs").join(backend).join(format!("{variant}.prompt.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub backend: String,
    pub prompt_variant: String,
    pub marker: String,
    pub prompt_text: String,
}

/// Per-document sidecar of a raw output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputMeta {
    pub doc_id: String,
    pub backend: String,
    pub prompt_variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportMeta>,
    /// Spans the backend replaced, when it knows them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<AnnotatedSpan>>,
}

pub fn to_json_line<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("plain data serializes");
    v.push(b'\n');
    v
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let raw = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&raw).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Raw outputs of one backend and variant, keyed by doc_id.
pub fn read_outputs(dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            out.insert(id, text);
        }
    }
    Ok(out)
}

/// Backend/variant pairs that have an output directory, in canonical order
/// (known backends first, then others by name; implicit before explicit).
pub fn discover_runs(out: &Path) -> Result<Vec<(String, String)>, CliError> {
    let root = out.join("outputs");
    let mut runs = Vec::new();
    let Ok(backends) = fs::read_dir(&root) else {
        return Ok(runs);
    };
    for b in backends {
        let b = b.map_err(|e| CliError::io(&root, e))?.path();
        if !b.is_dir() {
            continue;
        }
        for v in fs::read_dir(&b).map_err(|e| CliError::io(&b, e))? {
            let v = v.map_err(|e| CliError::io(&b, e))?.path();
            if v.is_dir() {
                let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                runs.push((name(&b), name(&v)));
            }
        }
    }
    let backend_rank = |b: &str| b.parse::<Backend>().map(|b| b as usize).unwrap_or(usize::MAX);
    let variant_rank = |v: &str| v.parse::<PromptVariant>().map(|v| v as usize).unwrap_or(usize::MAX);
    runs.sort_by(|(b1, v1), (b2, v2)| {
        (backend_rank(b1), b1, variant_rank(v1), v1).cmp(&(backend_rank(b2), b2, variant_rank(v2), v2))
    });
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/c.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn doc_ids_must_be_plain_file_names() {
        assert!(check_doc_id("synth-42-00001").is_ok());
        for bad in ["", "../x", "a/b", ".hidden", "a b"] {
            assert!(check_doc_id(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn runs_are_discovered_in_canonical_order() {
        let dir = tempfile::tempdir().unwrap();
        for (b, v) in [
            ("rule", "explicit"),
            ("zeta", "implicit"),
            ("mock", "explicit"),
            ("mock", "implicit"),
            ("identity", "implicit"),
        ] {
            fs::create_dir_all(output_dir(dir.path(), b, v)).unwrap();
        }
        write_atomic(&prompt_file(dir.path(), "mock", "implicit"), b"{}").unwrap();
        let runs = discover_runs(dir.path()).unwrap();
        let flat: Vec<String> = runs.iter().map(|(b, v)| format!("{b}/{v}")).collect();
        assert_eq!(flat, ["mock/implicit", "mock/explicit", "identity/implicit", "rule/explicit", "zeta/implicit"]);
        assert!(discover_runs(&dir.path().join("missing")).unwrap().is_empty());
    }

    #[test]
    fn outputs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(&output_file(dir.path(), "d1"), b"x [redacted]").unwrap();
        write_atomic(&meta_file(dir.path(), "d1"), b"{}").unwrap();
        let got = read_outputs(dir.path()).unwrap();
        assert_eq!(got.into_iter().collect::<Vec<_>>(), vec![("d1".to_string(), "x [redacted]".to_string())]);
    }
}
