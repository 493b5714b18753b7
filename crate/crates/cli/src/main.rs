use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use latte_core::backend::{self, Backend, HttpBackend, MockBackend, BACKEND_URL_ENV};
use latte_core::corpus;
use latte_core::imagediff;
use latte_core::metrics::{self, AggregateReport, EvalReport};
use latte_core::orchestrator::{self, tokenize, TraceStatus};
use latte_core::raster::{self, PixelGrid};
use latte_core::render::{FixtureRenderer, RenderKind, RenderStatus, Renderer, TexRenderer, Toolchain};

/// Render, diff, evaluate and iteratively refine LaTeX recognitions.
#[derive(Debug, Parser)]
#[command(name = "latte", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for any randomized behaviour (the default paths are deterministic).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for batch work; 0 uses one per CPU.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Per-document render timeout in seconds.
    #[arg(long, global = true, default_value_t = 20)]
    timeout: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Delta view between a ground-truth image and a rendered image.
    Diff(DiffArgs),
    /// Run the generate / compare / localize / refine loop for one image.
    Recognize(RecognizeArgs),
    /// Score candidate sources against ground-truth images.
    Eval(EvalArgs),
    /// Render one LaTeX source to a normalized PNG.
    Render(RenderArgs),
    /// Extract tables from LaTeX sources or build a rendered corpus.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Serve a scripted mock backend over HTTP.
    ServeMock(ServeMockArgs),
}

#[derive(Debug, Args)]
struct DiffArgs {
    gt: PathBuf,
    rendered: PathBuf,
    /// Where to write the composed delta-view PNG.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Normalize both images to this kind's canvas first. Without it, both are
    /// padded with white to a common size.
    #[arg(long)]
    kind: Option<RenderKind>,
}

#[derive(Debug, Args)]
struct RendererArgs {
    /// JSONL of pre-rendered images (`{"source": ..., "image": "x.png"}`) used
    /// instead of the TeX toolchain.
    #[arg(long)]
    render_fixtures: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecognizeArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value = "formula")]
    kind: RenderKind,
    /// Backend base URL.
    #[arg(long, env = BACKEND_URL_ENV, conflicts_with = "mock")]
    backend: Option<String>,
    /// Scripted JSONL fixture to use as the backend.
    #[arg(long)]
    mock: Option<PathBuf>,
    /// Total rounds, including the initial generation.
    #[arg(long, default_value_t = orchestrator::DEFAULT_BUDGET)]
    budget: usize,
    /// Write the full JSON trace here.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Write each round's model view and render into this directory.
    #[arg(long)]
    emit_delta: Option<PathBuf>,
    /// Exit with status 1 unless the loop ends with an exact match.
    #[arg(long)]
    require_match: bool,
    #[command(flatten)]
    renderer: RendererArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// JSONL rows: {"gt_image", "candidate_source", "reference_source"?, "rendered_image"?}.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "formula")]
    kind: RenderKind,
    /// Also write one JSON report per row to this file.
    #[arg(long)]
    per_sample: Option<PathBuf>,
    #[command(flatten)]
    renderer: RendererArgs,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// LaTeX body (formula or tabular). Use --file to read it from disk.
    #[arg(required_unless_present = "file")]
    source: Option<String>,
    #[arg(long, conflicts_with = "source")]
    file: Option<PathBuf>,
    #[arg(long, default_value = "formula")]
    kind: RenderKind,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    renderer: RendererArgs,
}

#[derive(Debug, Subcommand)]
enum CorpusCommand {
    /// Print the tabular environments found in each file.
    Extract {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Extract, render and write `manifest.jsonl` plus `images/`.
    Build {
        #[arg(long, default_value = "table")]
        kind: RenderKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        renderer: RendererArgs,
    },
}

#[derive(Debug, Args)]
struct ServeMockArgs {
    #[arg(long)]
    fixture: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8787")]
    addr: String,
}

/// An error plus the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

/// Bad flags, unreadable inputs, missing tools.
fn config(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    log::debug!("seed {}", cli.global.seed);
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    match &cli.command {
        Command::Diff(a) => diff(g, a),
        Command::Recognize(a) => recognize(g, a),
        Command::Eval(a) => eval(g, a),
        Command::Render(a) => render(g, a),
        Command::Corpus(CorpusCommand::Extract { files }) => corpus_extract(g, files),
        Command::Corpus(CorpusCommand::Build { kind, out, inputs, renderer }) => {
            corpus_build(g, *kind, out, inputs, renderer)
        }
        Command::ServeMock(a) => serve_mock(a),
    }
}

fn emit(g: &Global, value: &Value, human: impl FnOnce() -> String) {
    let mut out = std::io::stdout().lock();
    let text = if g.json {
        serde_json::to_string(value).expect("values serialize")
    } else {
        human()
    };
    let _ = writeln!(out, "{text}");
}

fn load(path: &Path) -> Result<PixelGrid, Failure> {
    raster::load_image(path).map_err(config)
}

fn make_renderer(g: &Global, args: &RendererArgs) -> Result<Box<dyn Renderer>, Failure> {
    if let Some(path) = &args.render_fixtures {
        let fixtures = FixtureRenderer::load(path).map_err(|e| config(anyhow!(e)))?;
        return Ok(Box::new(fixtures));
    }
    let toolchain = Toolchain::probe()
        .map_err(|e| config(anyhow!("{e}. Alternatively pass --render-fixtures with pre-rendered images.")))?;
    Ok(Box::new(TexRenderer::new(toolchain.with_timeout(Duration::from_secs(g.timeout)))))
}

fn pad_to(grid: &PixelGrid, h: usize, w: usize) -> PixelGrid {
    if grid.dimensions() == (h, w) {
        return grid.clone();
    }
    let mut canvas = PixelGrid::white(h, w).expect("non-empty canvas");
    canvas.blit(grid, 0, 0);
    canvas
}

fn diff(g: &Global, a: &DiffArgs) -> Outcome {
    let (mut gt, mut rendered) = (load(&a.gt)?, load(&a.rendered)?);
    if let Some(kind) = a.kind {
        gt = raster::normalize(&gt, &kind.spec());
        rendered = raster::normalize(&rendered, &kind.spec());
    } else {
        let h = gt.height().max(rendered.height());
        let w = gt.width().max(rendered.width());
        gt = pad_to(&gt, h, w);
        rendered = pad_to(&rendered, h, w);
    }
    let dv = imagediff::delta_view(&gt, &rendered).context("diffing images")?;
    if let Some(out) = &a.out {
        raster::save_image(&imagediff::compose_model_view(&dv), out).map_err(config)?;
    }
    let summary = dv.summary();
    let score = metrics::edit_score(&gt, &rendered).context("scoring")?;
    let mut value = serde_json::to_value(&summary).expect("summary serializes");
    value["edit_score"] = json!(score);
    value["match"] = json!(metrics::exact_match(&gt, &rendered));
    emit(g, &value, || {
        format!(
            "distance {} ({:.2}% of the {} axis), edit score {:.4}; runs: {} substitute, {} delete, {} insert",
            summary.distance,
            summary.edit_percentage * 100.0,
            if summary.orientation == imagediff::Orientation::Column { "column" } else { "row" },
            score,
            summary.op_runs.substitute,
            summary.op_runs.delete,
            summary.op_runs.insert,
        )
    });
    Ok(0)
}

fn make_backend(a: &RecognizeArgs) -> Result<Box<dyn Backend>, Failure> {
    match (&a.mock, &a.backend) {
        (Some(path), _) => Ok(Box::new(
            MockBackend::from_path(path).with_context(|| format!("loading {}", path.display())).map_err(config)?,
        )),
        (None, Some(url)) => Ok(Box::new(HttpBackend::new(url.clone()))),
        (None, None) => Err(config(anyhow!(
            "no backend: pass --backend URL, set {BACKEND_URL_ENV}, or pass --mock FIXTURE"
        ))),
    }
}

fn recognize(g: &Global, a: &RecognizeArgs) -> Outcome {
    if a.budget == 0 {
        return Err(config(anyhow!("--budget must be at least 1")));
    }
    let backend = make_backend(a)?;
    let renderer = make_renderer(g, &a.renderer)?;
    let gt = raster::normalize(&load(&a.image)?, &a.kind.spec());
    let trace = orchestrator::recognize(&gt, a.kind, backend.as_ref(), renderer.as_ref(), a.budget)
        .context("recognition failed")?;

    if let Some(dir) = &a.emit_delta {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(config)?;
        for r in &trace.rounds {
            if let Some(view) = r.feedback.as_ref().and_then(|f| f.model_view.as_ref()) {
                raster::save_image(view, dir.join(format!("round-{}-delta.png", r.round))).map_err(config)?;
            }
            if let Some(img) = &r.rendered {
                raster::save_image(img, dir.join(format!("round-{}-render.png", r.round))).map_err(config)?;
            }
        }
    }
    if let Some(path) = &a.trace_out {
        let text = serde_json::to_string_pretty(&trace).expect("trace serializes");
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(config)?;
    }

    let final_latex = trace.final_candidate().map(|c| c.raw.clone());
    let value = json!({
        "status": trace.status,
        "rounds": trace.rounds.len(),
        "final_latex": final_latex,
        "backend_calls": trace.backend_calls,
        "error": trace.error,
    });
    emit(g, &value, || {
        let mut s = format!("{:?} after {} round(s)", trace.status, trace.rounds.len());
        if let Some(l) = &final_latex {
            s.push_str(&format!("\nfinal: {l}"));
        }
        if let Some(e) = &trace.error {
            s.push_str(&format!("\nbackend error: {e}"));
        }
        s
    });
    Ok(match trace.status {
        TraceStatus::Matched => 0,
        TraceStatus::BackendError => 1,
        TraceStatus::BudgetExhausted if a.require_match => 1,
        TraceStatus::BudgetExhausted => 0,
    })
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalRow {
    gt_image: PathBuf,
    candidate_source: String,
    #[serde(default)]
    reference_source: Option<String>,
    #[serde(default)]
    rendered_image: Option<PathBuf>,
}

fn eval(g: &Global, a: &EvalArgs) -> Outcome {
    let text = std::fs::read_to_string(&a.manifest)
        .with_context(|| format!("reading {}", a.manifest.display()))
        .map_err(config)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let rows: Vec<EvalRow> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", a.manifest.display(), n + 1)))
        .collect::<Result<_, _>>()
        .map_err(config)?;
    let needs_renderer = rows.iter().any(|r| r.rendered_image.is_none());
    let renderer = if needs_renderer { Some(make_renderer(g, &a.renderer)?) } else { None };

    let spec = a.kind.spec();
    let mut reports = Vec::with_capacity(rows.len());
    let mut failures = 0;
    for row in &rows {
        let gt = raster::normalize(&load(&base.join(&row.gt_image))?, &spec);
        let rendered = match (&row.rendered_image, &renderer) {
            (Some(p), _) => Some(raster::normalize(&load(&base.join(p))?, &spec)),
            (None, Some(r)) => {
                let out = r.render(&row.candidate_source, a.kind).map_err(config)?;
                if out.status != RenderStatus::Ok {
                    log::warn!("candidate failed to render: {}", out.log_excerpt);
                }
                out.image
            }
            (None, None) => unreachable!("renderer exists when any row needs it"),
        };
        let cand = tokenize(&row.candidate_source);
        let reference = row.reference_source.as_deref().map(tokenize);
        let report = match rendered {
            Some(img) => metrics::evaluate(&gt, &img, &cand, reference.as_deref()).context("scoring")?,
            None => {
                failures += 1;
                EvalReport {
                    matched: false,
                    edit_score: 0.0,
                    bleu4: reference.as_deref().map(|r| metrics::bleu4(&cand, r)),
                    distance: gt.width(),
                }
            }
        };
        reports.push(report);
    }
    if let Some(path) = &a.per_sample {
        let mut lines = String::new();
        for r in &reports {
            lines.push_str(&serde_json::to_string(r).expect("report serializes"));
            lines.push('\n');
        }
        std::fs::write(path, lines).with_context(|| format!("writing {}", path.display())).map_err(config)?;
    }
    let agg = AggregateReport::from_reports(&reports, failures);
    emit(g, &serde_json::to_value(&agg).expect("report serializes"), || {
        let mut s = format!(
            "{} samples: match {:.4}, edit {:.4}",
            agg.samples, agg.match_rate, agg.mean_edit_score
        );
        if let Some(b) = agg.mean_bleu4 {
            s.push_str(&format!(", BLEU-4 {b:.4}"));
        }
        s.push_str(&format!(", {} render failures", agg.render_failures));
        s
    });
    Ok(0)
}

fn render(g: &Global, a: &RenderArgs) -> Outcome {
    let source = match (&a.source, &a.file) {
        (Some(s), _) => s.clone(),
        (None, Some(p)) => std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(config)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let renderer = make_renderer(g, &a.renderer)?;
    let out = renderer.render(&source, a.kind).map_err(config)?;
    let value = json!({
        "status": out.status,
        "log": out.log_excerpt,
        "out": out.image.as_ref().map(|_| a.out.display().to_string()),
    });
    if let Some(img) = &out.image {
        raster::save_image(img, &a.out).map_err(config)?;
    }
    emit(g, &value, || match out.status {
        RenderStatus::Ok => format!("wrote {}", a.out.display()),
        other => format!("{other:?}\n{}", out.log_excerpt),
    });
    Ok(if out.status == RenderStatus::Ok { 0 } else { 1 })
}

fn corpus_extract(g: &Global, files: &[PathBuf]) -> Outcome {
    let mut all = Vec::new();
    for f in files {
        let text = std::fs::read(f).with_context(|| format!("reading {}", f.display())).map_err(config)?;
        let ex = corpus::extract_tabulars(&String::from_utf8_lossy(&text));
        all.push(json!({ "file": f.display().to_string(), "tables": ex.tables, "unbalanced": ex.unbalanced }));
    }
    emit(g, &Value::Array(all.clone()), || {
        all.iter()
            .map(|v| {
                format!(
                    "{}: {} table(s), {} unbalanced",
                    v["file"].as_str().unwrap_or_default(),
                    v["tables"].as_array().map_or(0, Vec::len),
                    v["unbalanced"].as_array().map_or(0, Vec::len)
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    });
    Ok(0)
}

fn corpus_build(g: &Global, kind: RenderKind, out: &Path, inputs: &[PathBuf], r: &RendererArgs) -> Outcome {
    for dir in inputs {
        if !dir.is_dir() {
            return Err(config(anyhow!("{} is not a directory", dir.display())));
        }
    }
    let renderer = make_renderer(g, r)?;
    let summary = corpus::build_manifest(inputs, kind, out, renderer.as_ref(), g.workers).map_err(config)?;
    emit(g, &serde_json::to_value(&summary).expect("summary serializes"), || {
        format!(
            "{} record(s) in {}; {} excluded, {} unbalanced span(s)",
            summary.records,
            summary.manifest.display(),
            summary.excluded.len(),
            summary.unbalanced.len()
        )
    });
    Ok(0)
}

fn serve_mock(a: &ServeMockArgs) -> Outcome {
    let mock = MockBackend::from_path(&a.fixture)
        .with_context(|| format!("loading {}", a.fixture.display()))
        .map_err(config)?;
    let handle = backend::serve(Arc::new(mock), &a.addr)
        .with_context(|| format!("binding {}", a.addr))
        .map_err(config)?;
    println!("{}", handle.url());
    let _ = std::io::stdout().flush();
    handle.join();
    Ok(0)
}
