//! Table/formula corpus construction from already-downloaded LaTeX sources.
//!
//! Manifest format: one JSON object per line, sorted by `id`:
//!
//! | field        | meaning                                                        |
//! |--------------|----------------------------------------------------------------|
//! | `id`         | first 16 hex digits of SHA-256 over the record's `latex`        |
//! | `kind`       | `"formula"` or `"table"`                                        |
//! | `latex`      | the source body that was rendered                               |
//! | `image_path` | PNG path relative to the manifest's directory                   |
//! | `provenance` | `{"file": <path relative to its input dir>, "start": n, "end": n}` byte span in the original file |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::raster;
use crate::render::{RenderKind, RenderStatus, Renderer};

const BEGIN: &str = "\\begin{tabular}";
const END: &str = "\\end{tabular}";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus io on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Text with comments removed, plus a map from each kept byte back to its
/// offset in the original.
struct Stripped {
    text: String,
    origin: Vec<usize>,
}

/// Drops every unescaped `%` and the rest of its line (the newline is kept).
/// A `%` is escaped when preceded by an odd number of backslashes.
pub fn strip_comments(tex: &str) -> String {
    strip_with_offsets(tex).text
}

fn strip_with_offsets(tex: &str) -> Stripped {
    let bytes = tex.as_bytes();
    let mut text = String::with_capacity(tex.len());
    let mut origin = Vec::with_capacity(tex.len());
    let mut backslashes = 0usize;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'%' && backslashes.is_multiple_of(2) {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            backslashes = 0;
            continue;
        }
        backslashes = if b == b'\\' { backslashes + 1 } else { 0 };
        // Copy whole UTF-8 sequences; only ASCII bytes are ever special.
        let ch_len = tex[i..].chars().next().map_or(1, char::len_utf8);
        text.push_str(&tex[i..i + ch_len]);
        origin.extend(i..i + ch_len);
        i += ch_len;
    }
    origin.push(bytes.len());
    Stripped { text, origin }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularSpan {
    /// Comment-free text from `\begin{tabular}` through `\end{tabular}`.
    pub body: String,
    /// Byte span in the original (unstripped) input.
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unbalanced {
    /// Byte offset of the offending marker in the original input.
    pub offset: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub tables: Vec<TabularSpan>,
    pub unbalanced: Vec<Unbalanced>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Marker {
    Begin,
    End,
}

fn markers(text: &str) -> Vec<(usize, Marker)> {
    let mut out: Vec<(usize, Marker)> = text
        .match_indices(BEGIN)
        .map(|(i, _)| (i, Marker::Begin))
        .chain(text.match_indices(END).map(|(i, _)| (i, Marker::End)))
        .collect();
    out.sort_unstable_by_key(|&(i, _)| i);
    out
}

/// Every outermost balanced tabular environment, after comment stripping.
/// Nested tabulars stay inside their parent. A stray `\end` or a `\begin` that
/// never closes is reported and skipped; scanning resumes after it.
pub fn extract_tabulars(tex: &str) -> Extraction {
    let stripped = strip_with_offsets(tex);
    let text = &stripped.text;
    let marks = markers(text);
    let mut out = Extraction::default();
    let mut k = 0;
    while k < marks.len() {
        let (pos, kind) = marks[k];
        if kind == Marker::End {
            out.unbalanced.push(Unbalanced {
                offset: stripped.origin[pos],
                reason: "\\end{tabular} without a matching \\begin".into(),
            });
            k += 1;
            continue;
        }
        let mut depth = 0usize;
        let mut close = None;
        for (j, &(_, m)) in marks.iter().enumerate().skip(k) {
            match m {
                Marker::Begin => depth += 1,
                Marker::End => depth -= 1,
            }
            if depth == 0 {
                close = Some(j);
                break;
            }
        }
        match close {
            Some(j) => {
                let end = marks[j].0 + END.len();
                out.tables.push(TabularSpan {
                    body: text[pos..end].to_string(),
                    start: stripped.origin[pos],
                    end: stripped.origin[end],
                });
                k = j + 1;
            }
            None => {
                out.unbalanced.push(Unbalanced {
                    offset: stripped.origin[pos],
                    reason: "\\begin{tabular} is never closed".into(),
                });
                k += 1;
            }
        }
    }
    out
}

/// First 16 hex digits of SHA-256 over the source text.
pub fn record_id(latex: &str) -> String {
    let digest = Sha256::digest(latex.as_bytes());
    hex::encode(&digest[..8])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub file: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub kind: RenderKind,
    pub latex: String,
    pub image_path: String,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub provenance: Option<Provenance>,
    pub reason: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BuildSummary {
    pub manifest: PathBuf,
    pub records: usize,
    pub excluded: Vec<Exclusion>,
    pub unbalanced: Vec<(String, Unbalanced)>,
}

struct Candidate {
    latex: String,
    provenance: Provenance,
}

fn source_files(dir: &Path, kind: RenderKind) -> Vec<PathBuf> {
    let wanted: &[&str] = match kind {
        RenderKind::Table => &["tex"],
        RenderKind::Formula => &["tex", "txt", "lst"],
    };
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .follow_links(false)
        .into_iter()
        .filter_map(|e| match e {
            Ok(e) => Some(e),
            Err(err) => {
                log::warn!("skipping unreadable entry: {err}");
                None
            }
        })
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| wanted.contains(&x))
        })
        .collect();
    files.sort();
    files
}

fn rel_name(dir: &Path, file: &Path) -> String {
    file.strip_prefix(dir)
        .unwrap_or(file)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Tables come from the tabular environments of `.tex` files. Formulas are
/// read one per non-blank line (comments stripped) from `.tex`/`.txt`/`.lst`
/// files.
fn collect_candidates(dir: &Path, kind: RenderKind, summary: &mut BuildSummary) -> Vec<Candidate> {
    let mut out = Vec::new();
    for file in source_files(dir, kind) {
        let name = rel_name(dir, &file);
        let text = match std::fs::read(&file) {
            Ok(bytes) => String::from_utf8_lossy(&bytes).into_owned(),
            Err(err) => {
                log::warn!("{}: {err}", file.display());
                summary.excluded.push(Exclusion {
                    id: String::new(),
                    provenance: Some(Provenance { file: name.clone(), start: 0, end: 0 }),
                    reason: err.to_string(),
                });
                continue;
            }
        };
        match kind {
            RenderKind::Table => {
                let ex = extract_tabulars(&text);
                for u in ex.unbalanced {
                    log::warn!("{name}@{}: {}", u.offset, u.reason);
                    summary.unbalanced.push((name.clone(), u));
                }
                out.extend(ex.tables.into_iter().map(|t| Candidate {
                    latex: t.body,
                    provenance: Provenance { file: name.clone(), start: t.start, end: t.end },
                }));
            }
            RenderKind::Formula => {
                let mut offset = 0;
                for line in text.split_inclusive('\n') {
                    let formula = strip_comments(line).trim().to_string();
                    if !formula.is_empty() {
                        out.push(Candidate {
                            latex: formula,
                            provenance: Provenance {
                                file: name.clone(),
                                start: offset,
                                end: offset + line.trim_end_matches('\n').len(),
                            },
                        });
                    }
                    offset += line.len();
                }
            }
        }
    }
    out
}

/// Extracts sources from every input directory, renders them on `workers`
/// threads, writes `images/<id>.png` and `manifest.jsonl` under `output`.
/// Sources that fail to render are left out and listed in the summary.
/// Identical sources collapse to one record (the first by input order).
pub fn build_manifest(
    input_dirs: &[PathBuf],
    kind: RenderKind,
    output: &Path,
    renderer: &dyn Renderer,
    workers: usize,
) -> Result<BuildSummary, CorpusError> {
    let mut summary = BuildSummary::default();
    let mut unique: BTreeMap<String, Candidate> = BTreeMap::new();
    for dir in input_dirs {
        for cand in collect_candidates(dir, kind, &mut summary) {
            unique.entry(record_id(&cand.latex)).or_insert(cand);
        }
    }
    let image_dir = output.join("images");
    std::fs::create_dir_all(&image_dir).map_err(io_err(&image_dir))?;

    let jobs: Vec<(String, Candidate)> = unique.into_iter().collect();
    let rendered = crate::par::map_with_workers(&jobs, workers, |(id, cand)| {
        let outcome = renderer.render(&cand.latex, kind).map_err(|e| e.to_string())?;
        match (outcome.status, outcome.image) {
            (RenderStatus::Ok, Some(img)) => {
                let rel = format!("images/{id}.png");
                raster::save_image(&img, output.join(&rel)).map_err(|e| e.to_string())?;
                Ok(rel)
            }
            (status, _) => Err(format!("{status:?}: {}", outcome.log_excerpt)),
        }
    });

    let manifest = output.join("manifest.jsonl");
    let mut lines = String::new();
    for ((id, cand), result) in jobs.into_iter().zip(rendered) {
        match result {
            Ok(image_path) => {
                let record = CorpusRecord {
                    id,
                    kind,
                    latex: cand.latex,
                    image_path,
                    provenance: cand.provenance,
                };
                lines.push_str(&serde_json::to_string(&record).expect("records serialize"));
                lines.push('\n');
                summary.records += 1;
            }
            Err(reason) => {
                log::warn!("excluding {id}: {reason}");
                summary.excluded.push(Exclusion {
                    id,
                    provenance: Some(cand.provenance),
                    reason,
                });
            }
        }
    }
    std::fs::write(&manifest, lines).map_err(io_err(&manifest))?;
    summary.manifest = manifest;
    Ok(summary)
}

pub fn read_manifest(path: &Path) -> Result<Vec<CorpusRecord>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| format!("{}:{}: {e}", path.display(), n + 1)))
        .collect()
}
