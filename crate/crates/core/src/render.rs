//! LaTeX source to normalized raster: wrap, compile, rasterize, normalize.
//!
//! The compiler is invoked pdflatex-style
//! (`-interaction=nonstopmode -halt-on-error -output-directory=<dir> job.tex`)
//! and the rasterizer pdftoppm-style
//! (`-r <dpi> -png -singlefile -f 1 -l 1 job.pdf <dir>/page`).

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{self, NormalizationSpec, PixelGrid};

pub const TEX_BIN_ENV: &str = "LATTE_TEX_BIN";
pub const RASTER_BIN_ENV: &str = "LATTE_RASTER_BIN";
pub const DEFAULT_TEX_BIN: &str = "pdflatex";
pub const DEFAULT_RASTER_BIN: &str = "pdftoppm";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(20);
const LOG_TAIL_LINES: usize = 20;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("{tool} not found (looked for `{wanted}`); install it or set {env}")]
    ToolchainMissing {
        tool: &'static str,
        wanted: String,
        env: &'static str,
    },
    #[error("render scratch io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderKind {
    Formula,
    Table,
}

impl RenderKind {
    pub fn spec(self) -> NormalizationSpec {
        match self {
            RenderKind::Formula => NormalizationSpec::FORMULA,
            RenderKind::Table => NormalizationSpec::TABLE,
        }
    }

    pub fn blank(self) -> PixelGrid {
        let s = self.spec();
        PixelGrid::white(s.target_height, s.target_width).expect("spec dimensions are non-empty")
    }
}

impl std::str::FromStr for RenderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "formula" => Ok(RenderKind::Formula),
            "table" => Ok(RenderKind::Table),
            other => Err(format!("unknown kind `{other}` (expected formula or table)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderStatus {
    Ok,
    CompileError,
    Timeout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutcome {
    pub status: RenderStatus,
    /// Present exactly when `status` is `Ok`.
    pub image: Option<PixelGrid>,
    pub log_excerpt: String,
}

impl RenderOutcome {
    pub fn ok(image: PixelGrid) -> Self {
        RenderOutcome {
            status: RenderStatus::Ok,
            image: Some(image),
            log_excerpt: String::new(),
        }
    }

    pub fn failed(status: RenderStatus, log_excerpt: impl Into<String>) -> Self {
        debug_assert_ne!(status, RenderStatus::Ok);
        RenderOutcome {
            status,
            image: None,
            log_excerpt: log_excerpt.into(),
        }
    }
}

/// Standalone document around `body`: a tight-cropped page with no page numbers.
/// Formulas go in display-style math; tables are inserted as-is.
pub fn wrap_source(kind: RenderKind, body: &str) -> String {
    let mut doc = String::new();
    doc.push_str("\\documentclass[border=2pt]{standalone}\n");
    match kind {
        RenderKind::Formula => {
            doc.push_str("\\usepackage{amsmath}\n\\usepackage{amssymb}\n\\usepackage{amsfonts}\n\\usepackage{bm}\n");
            doc.push_str("\\pagestyle{empty}\n\\begin{document}\n");
            doc.push_str("$\\displaystyle ");
            doc.push_str(body);
            doc.push_str("$\n");
        }
        RenderKind::Table => {
            doc.push_str("\\usepackage{amsmath}\n\\usepackage{amssymb}\n\\usepackage{array}\n");
            doc.push_str("\\usepackage{booktabs}\n\\usepackage{multirow}\n\\usepackage[table]{xcolor}\n");
            doc.push_str("\\pagestyle{empty}\n\\begin{document}\n");
            doc.push_str(body);
            doc.push('\n');
        }
    }
    doc.push_str("\\end{document}\n");
    doc
}

/// Anything that turns a source into a normalized raster.
pub trait Renderer: Send + Sync {
    fn render(&self, source: &str, kind: RenderKind) -> Result<RenderOutcome, RenderError>;
}

#[derive(Clone, Debug)]
pub struct Toolchain {
    pub tex_bin: PathBuf,
    pub raster_bin: PathBuf,
    pub timeout: Duration,
}

impl Toolchain {
    /// Resolves both tools from the environment overrides or `PATH`.
    pub fn probe() -> Result<Toolchain, RenderError> {
        let tex = std::env::var(TEX_BIN_ENV).unwrap_or_else(|_| DEFAULT_TEX_BIN.to_string());
        let raster = std::env::var(RASTER_BIN_ENV).unwrap_or_else(|_| DEFAULT_RASTER_BIN.to_string());
        Self::resolve(&tex, &raster)
    }

    pub fn resolve(tex: &str, raster: &str) -> Result<Toolchain, RenderError> {
        let tex_bin = find_executable(tex).ok_or_else(|| RenderError::ToolchainMissing {
            tool: "LaTeX compiler",
            wanted: tex.to_string(),
            env: TEX_BIN_ENV,
        })?;
        let raster_bin = find_executable(raster).ok_or_else(|| RenderError::ToolchainMissing {
            tool: "PDF rasterizer",
            wanted: raster.to_string(),
            env: RASTER_BIN_ENV,
        })?;
        Ok(Toolchain {
            tex_bin,
            raster_bin,
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

fn find_executable(name: &str) -> Option<PathBuf> {
    let candidate = Path::new(name);
    if candidate.components().count() > 1 {
        return candidate.is_file().then(|| candidate.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|dir| dir.join(name))
            .find(|p| p.is_file())
    })
}

enum RunResult {
    Finished { success: bool },
    TimedOut,
}

/// Runs `cmd` with stdout/stderr captured to `log_path`, killing it at `deadline`.
fn run_until(mut cmd: Command, log_path: &Path, deadline: Instant) -> Result<RunResult, RenderError> {
    let log = File::create(log_path)?;
    let mut child = cmd
        .stdin(Stdio::null())
        .stdout(log.try_clone()?)
        .stderr(log)
        .spawn()?;
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(RunResult::Finished {
                success: status.success(),
            });
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(RunResult::TimedOut);
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn log_tail(path: &Path) -> String {
    let text = std::fs::read(path)
        .map(|b| String::from_utf8_lossy(&b).into_owned())
        .unwrap_or_default();
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(LOG_TAIL_LINES)..].join("\n")
}

/// Renders through the external compiler and rasterizer, one scratch
/// directory per job.
#[derive(Clone, Debug)]
pub struct TexRenderer {
    pub toolchain: Toolchain,
}

impl TexRenderer {
    pub fn new(toolchain: Toolchain) -> Self {
        TexRenderer { toolchain }
    }
}

impl Renderer for TexRenderer {
    fn render(&self, source: &str, kind: RenderKind) -> Result<RenderOutcome, RenderError> {
        render_pipeline(source, kind, &self.toolchain)
    }
}

pub fn render_pipeline(source: &str, kind: RenderKind, toolchain: &Toolchain) -> Result<RenderOutcome, RenderError> {
    let scratch = tempfile::Builder::new().prefix("latte-render-").tempdir()?;
    let dir = scratch.path();
    let deadline = Instant::now() + toolchain.timeout;
    std::fs::write(dir.join("job.tex"), wrap_source(kind, source))?;

    let mut compile = Command::new(&toolchain.tex_bin);
    compile
        .current_dir(dir)
        .arg("-interaction=nonstopmode")
        .arg("-halt-on-error")
        .arg(format!("-output-directory={}", dir.display()))
        .arg("job.tex");
    let compile_log = dir.join("compile.out");
    match run_until(compile, &compile_log, deadline)? {
        RunResult::TimedOut => return Ok(RenderOutcome::failed(RenderStatus::Timeout, log_tail(&compile_log))),
        RunResult::Finished { success } => {
            let pdf = dir.join("job.pdf");
            if !success || !pdf.is_file() {
                let tex_log = dir.join("job.log");
                let excerpt = if tex_log.is_file() {
                    log_tail(&tex_log)
                } else {
                    log_tail(&compile_log)
                };
                return Ok(RenderOutcome::failed(RenderStatus::CompileError, excerpt));
            }
        }
    }

    let mut raster = Command::new(&toolchain.raster_bin);
    raster
        .current_dir(dir)
        .args(["-r", &kind.spec().dpi.to_string(), "-png", "-singlefile", "-f", "1", "-l", "1"])
        .arg(dir.join("job.pdf"))
        .arg(dir.join("page"));
    let raster_log = dir.join("raster.out");
    match run_until(raster, &raster_log, deadline)? {
        RunResult::TimedOut => return Ok(RenderOutcome::failed(RenderStatus::Timeout, log_tail(&raster_log))),
        RunResult::Finished { success: false } => {
            return Ok(RenderOutcome::failed(RenderStatus::CompileError, log_tail(&raster_log)))
        }
        RunResult::Finished { success: true } => {}
    }
    let page = match raster::load_image(dir.join("page.png")) {
        Ok(grid) => grid,
        Err(err) => {
            return Ok(RenderOutcome::failed(
                RenderStatus::CompileError,
                format!("rasterizer produced no usable page: {err}"),
            ))
        }
    };
    Ok(RenderOutcome::ok(raster::normalize(&page, &kind.spec())))
}

/// Renders many sources on a pool of `workers` threads (0 = one per CPU).
pub fn render_batch(
    renderer: &dyn Renderer,
    sources: &[String],
    kind: RenderKind,
    workers: usize,
) -> Vec<Result<RenderOutcome, RenderError>> {
    crate::par::map_with_workers(sources, workers, |s| renderer.render(s, kind))
}

/// Key under which a source is looked up in a [`FixtureRenderer`]: its tokens
/// joined by single spaces, so layout whitespace does not matter.
pub fn fixture_key(source: &str) -> String {
    crate::orchestrator::tokenize(source)
        .iter()
        .map(|t| t.trim_start())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Pre-rendered rasters keyed by source text. Unknown sources come back as
/// compile errors.
#[derive(Clone, Debug, Default)]
pub struct FixtureRenderer {
    images: HashMap<String, PixelGrid>,
}

#[derive(Debug, Deserialize, Serialize)]
struct FixtureLine {
    source: String,
    image: PathBuf,
}

impl FixtureRenderer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: &str, image: PixelGrid) {
        self.images.insert(fixture_key(source), image);
    }

    pub fn with(mut self, source: &str, image: PixelGrid) -> Self {
        self.insert(source, image);
        self
    }

    /// Reads a JSONL file of `{"source": ..., "image": "path.png"}` lines;
    /// relative image paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<FixtureRenderer, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut out = FixtureRenderer::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureLine =
                serde_json::from_str(line).map_err(|e| format!("{}:{}: {e}", path.display(), n + 1))?;
            let img_path = base.join(&entry.image);
            let img = raster::load_image(&img_path).map_err(|e| format!("{}: {e}", img_path.display()))?;
            out.insert(&entry.source, img);
        }
        Ok(out)
    }
}

impl Renderer for FixtureRenderer {
    fn render(&self, source: &str, kind: RenderKind) -> Result<RenderOutcome, RenderError> {
        Ok(match self.images.get(&fixture_key(source)) {
            Some(img) => RenderOutcome::ok(raster::normalize(img, &kind.spec())),
            None => RenderOutcome::failed(RenderStatus::CompileError, "no fixture raster for this source"),
        })
    }
}
