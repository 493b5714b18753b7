//! Generate, render, compare, then localize and refine until the render
//! matches the target or the round budget runs out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, Backend, BackendError, BackendRequest, BackendResponse, CallCounts};
use crate::imagediff::{self, DiffError, EditSummary};
use crate::metrics;
use crate::raster::PixelGrid;
use crate::render::{RenderError, RenderKind, RenderStatus, Renderer};

/// Marks the wrap-around point in a refinement prompt.
pub const SEPARATOR: &str = "<s>";
/// One initial generation plus three refinements.
pub const DEFAULT_BUDGET: usize = 4;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("fault index {index} outside 0..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("scripts are identical; there is no fault to label")]
    IdenticalScripts,
    #[error("round budget must be at least 1")]
    ZeroBudget,
    #[error("ground-truth image is {got_h}x{got_w}, expected the normalized {want_h}x{want_w}")]
    NotNormalized {
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Splits LaTeX into tokens: a control word (`\` + ASCII letters), a control
/// symbol (`\` + one other character), or any other single character.
/// Comments are dropped. A run of whitespace is not a token of its own; it is
/// folded into a single leading space on the token that follows it, so
/// word breaks in text survive a round trip. Whitespace after a control word
/// is dropped.
pub fn tokenize(raw: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut chars = raw.chars().peekable();
    let mut pending_space = false;
    while let Some(c) = chars.next() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if c == '%' {
            for next in chars.by_ref() {
                if next == '\n' {
                    break;
                }
            }
            pending_space = true;
            continue;
        }
        let mut tok = String::new();
        // TeX swallows the space after a control word.
        if pending_space && tokens.last().is_some_and(|t: &String| !is_control_word(t)) {
            tok.push(' ');
        }
        pending_space = false;
        tok.push(c);
        if c == '\\' {
            match chars.peek().copied() {
                Some(n) if n.is_ascii_alphabetic() => {
                    while let Some(&n) = chars.peek() {
                        if !n.is_ascii_alphabetic() {
                            break;
                        }
                        tok.push(n);
                        chars.next();
                    }
                }
                Some(n) if n.is_whitespace() => {
                    tok.push(' ');
                    chars.next();
                }
                Some(n) => {
                    tok.push(n);
                    chars.next();
                }
                None => {}
            }
        }
        tokens.push(tok);
    }
    tokens
}

fn is_control_word(tok: &str) -> bool {
    let body = tok.trim_start();
    body.len() > 1 && body.starts_with('\\') && body.ends_with(|c: char| c.is_ascii_alphabetic())
}

/// Concatenates tokens, inserting a space only where a control word would
/// otherwise absorb the following letter.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut prev_word = false;
    for tok in tokens {
        let tok = tok.as_ref();
        if prev_word && tok.starts_with(|c: char| c.is_ascii_alphabetic()) {
            out.push(' ');
        }
        out.push_str(tok);
        prev_word = is_control_word(tok);
    }
    out
}

/// A candidate source and its token sequence. Scripts compare by tokens.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatexScript {
    pub raw: String,
    pub tokens: Vec<String>,
}

impl PartialEq for LatexScript {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Eq for LatexScript {}

impl LatexScript {
    pub fn from_raw(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        LatexScript { raw, tokens }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        LatexScript {
            raw: detokenize(&tokens),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultSource {
    Backend,
    GroundTruthLabel,
}

/// 0-based index of the first faulty token; `len` means "append at the end".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultLocation {
    pub index: usize,
    pub source: FaultSource,
}

fn check_index(script: &LatexScript, index: usize) -> Result<(), OrchestratorError> {
    if index > script.len() {
        return Err(OrchestratorError::IndexOutOfRange {
            index,
            len: script.len(),
        });
    }
    Ok(())
}

/// `tokens[l..] ++ [<s>] ++ tokens[..l]`: the suspect tail first, then the
/// trusted prefix.
pub fn build_refine_prompt(script: &LatexScript, fault: usize) -> Result<Vec<String>, OrchestratorError> {
    check_index(script, fault)?;
    let mut prompt = Vec::with_capacity(script.len() + 1);
    prompt.extend_from_slice(&script.tokens[fault..]);
    prompt.push(SEPARATOR.to_string());
    prompt.extend_from_slice(&script.tokens[..fault]);
    Ok(prompt)
}

/// Keeps the trusted prefix `tokens[..l]` and appends the refinement.
pub fn reconstruct(script: &LatexScript, fault: usize, completion: &[String]) -> Result<LatexScript, OrchestratorError> {
    check_index(script, fault)?;
    let mut tokens = script.tokens[..fault].to_vec();
    tokens.extend_from_slice(completion);
    Ok(LatexScript::from_tokens(tokens))
}

/// Index of the first differing token; the shorter length when one is a
/// prefix of the other (the common length for equal scripts).
pub fn first_divergence(incorrect: &LatexScript, gt: &LatexScript) -> FaultLocation {
    let index = incorrect
        .tokens
        .iter()
        .zip(&gt.tokens)
        .position(|(a, b)| a != b)
        .unwrap_or_else(|| incorrect.len().min(gt.len()));
    FaultLocation {
        index,
        source: FaultSource::GroundTruthLabel,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub prompt: Vec<String>,
    pub fault: usize,
    pub target: Vec<String>,
}

/// Supervision for the localizer (the fault label) and the refiner
/// (prompt and target continuation).
pub fn make_training_pair(incorrect: &LatexScript, gt: &LatexScript) -> Result<TrainingPair, OrchestratorError> {
    if incorrect == gt {
        return Err(OrchestratorError::IdenticalScripts);
    }
    let fault = first_divergence(incorrect, gt).index;
    Ok(TrainingPair {
        prompt: build_refine_prompt(incorrect, fault)?,
        fault,
        target: gt.tokens[fault..].to_vec(),
    })
}

/// What fed the refinement that produced a round's candidate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Feedback {
    pub delta: EditSummary,
    pub fault: FaultLocation,
    pub prompt_tokens: Vec<String>,
    pub completion: Vec<String>,
    /// The composed delta view sent to the localizer and refiner.
    #[serde(skip)]
    pub model_view: Option<PixelGrid>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    /// `None` for the initial generation.
    pub feedback: Option<Feedback>,
    pub candidate: LatexScript,
    pub render_status: RenderStatus,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub render_log: String,
    pub matched: bool,
    #[serde(skip)]
    pub rendered: Option<PixelGrid>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Matched,
    BudgetExhausted,
    BackendError,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationTrace {
    pub kind: RenderKind,
    pub budget: usize,
    pub status: TraceStatus,
    pub rounds: Vec<RoundRecord>,
    pub backend_calls: CallCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl IterationTrace {
    /// The last candidate produced, matched or not.
    pub fn final_candidate(&self) -> Option<&LatexScript> {
        self.rounds.last().map(|r| &r.candidate)
    }

    pub fn matched_candidate(&self) -> Option<&LatexScript> {
        self.rounds.iter().find(|r| r.matched).map(|r| &r.candidate)
    }
}

struct CountingBackend<'a> {
    inner: &'a dyn Backend,
    calls: CallCounts,
}

impl CountingBackend<'_> {
    fn call(&mut self, request: BackendRequest) -> Result<BackendResponse, BackendError> {
        match request.role() {
            backend::Role::Generate => self.calls.generate += 1,
            backend::Role::Localize => self.calls.localize += 1,
            backend::Role::Refine => self.calls.refine += 1,
        }
        backend::call(self.inner, &request)
    }
}

fn render_round(
    renderer: &dyn Renderer,
    gt: &PixelGrid,
    kind: RenderKind,
    round: usize,
    feedback: Option<Feedback>,
    candidate: LatexScript,
) -> Result<RoundRecord, OrchestratorError> {
    let outcome = renderer.render(&candidate.raw, kind)?;
    let matched = outcome.image.as_ref().is_some_and(|img| metrics::exact_match(gt, img));
    Ok(RoundRecord {
        round,
        feedback,
        candidate,
        render_status: outcome.status,
        render_log: outcome.log_excerpt,
        matched,
        rendered: outcome.image,
    })
}

/// Runs the recognition loop for one target image.
///
/// Backend failures end the loop with [`TraceStatus::BackendError`] and are
/// reported inside the trace. Only misconfiguration (bad budget, unnormalized
/// target, missing toolchain) is returned as an error.
pub fn recognize(
    gt: &PixelGrid,
    kind: RenderKind,
    backend: &dyn Backend,
    renderer: &dyn Renderer,
    budget: usize,
) -> Result<IterationTrace, OrchestratorError> {
    if budget == 0 {
        return Err(OrchestratorError::ZeroBudget);
    }
    let spec = kind.spec();
    if !spec.matches(gt) {
        return Err(OrchestratorError::NotNormalized {
            got_h: gt.height(),
            got_w: gt.width(),
            want_h: spec.target_height,
            want_w: spec.target_width,
        });
    }
    let mut client = CountingBackend {
        inner: backend,
        calls: CallCounts::default(),
    };
    let mut rounds: Vec<RoundRecord> = Vec::new();

    let finish = |rounds, status, calls, error| IterationTrace {
        kind,
        budget,
        status,
        rounds,
        backend_calls: calls,
        error,
    };

    let draft = match client.call(BackendRequest::Generate { image: gt.clone() }) {
        Ok(BackendResponse::Generate { latex }) => LatexScript::from_raw(latex),
        Ok(_) => unreachable!("role checked by backend::call"),
        Err(e) => return Ok(finish(rounds, TraceStatus::BackendError, client.calls, Some(e.to_string()))),
    };
    rounds.push(render_round(renderer, gt, kind, 1, None, draft)?);

    for round in 2..=budget {
        let prev = rounds.last().expect("at least one round");
        if prev.matched {
            break;
        }
        let blank;
        let rendered = match &prev.rendered {
            Some(img) => img,
            None => {
                blank = kind.blank();
                &blank
            }
        };
        let dv = imagediff::delta_view(gt, rendered)?;
        let view = imagediff::compose_model_view(&dv);
        let script = prev.candidate.clone();

        let fault = match client.call(BackendRequest::Localize {
            image: view.clone(),
            tokens: script.tokens.clone(),
        }) {
            Ok(BackendResponse::Localize { index }) => index,
            Ok(_) => unreachable!("role checked by backend::call"),
            Err(e) => return Ok(finish(rounds, TraceStatus::BackendError, client.calls, Some(e.to_string()))),
        };
        let prompt = build_refine_prompt(&script, fault)?;
        let completion = match client.call(BackendRequest::Refine {
            image: view.clone(),
            prompt_tokens: prompt.clone(),
        }) {
            Ok(BackendResponse::Refine { completion_tokens }) => completion_tokens,
            Ok(_) => unreachable!("role checked by backend::call"),
            Err(e) => return Ok(finish(rounds, TraceStatus::BackendError, client.calls, Some(e.to_string()))),
        };
        let next = reconstruct(&script, fault, &completion)?;
        let feedback = Feedback {
            delta: dv.summary(),
            fault: FaultLocation {
                index: fault,
                source: FaultSource::Backend,
            },
            prompt_tokens: prompt,
            completion,
            model_view: Some(view),
        };
        rounds.push(render_round(renderer, gt, kind, round, Some(feedback), next)?);
    }

    let status = if rounds.last().is_some_and(|r| r.matched) {
        TraceStatus::Matched
    } else {
        TraceStatus::BudgetExhausted
    };
    Ok(finish(rounds, status, client.calls, None))
}

/// Recognizes many targets concurrently; each job is sequential internally.
pub fn recognize_batch(
    targets: &[PixelGrid],
    kind: RenderKind,
    backend: &dyn Backend,
    renderer: &dyn Renderer,
    budget: usize,
) -> Vec<Result<IterationTrace, OrchestratorError>> {
    crate::par::map(targets, |gt| recognize(gt, kind, backend, renderer, budget))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    fn script(s: &str) -> LatexScript {
        LatexScript::from_tokens(toks(s))
    }

    #[test]
    fn tokenizer_splits_control_sequences() {
        assert_eq!(
            tokenize(r"\frac{a}{b}^2_\alpha\,x"),
            vec![r"\frac", "{", "a", "}", "{", "b", "}", "^", "2", "_", r"\alpha", r"\,", "x"]
        );
        assert_eq!(tokenize(r"\alpha b"), vec![r"\alpha", "b"]);
        assert_eq!(tokenize("\\alpha % c\n +"), vec![r"\alpha", "+"]);
        assert_eq!(tokenize("a   &\n b"), vec!["a", " &", " b"]);
        assert_eq!(tokenize("  x  "), vec!["x"]);
        assert_eq!(tokenize(r"a\\b"), vec!["a", r"\\", "b"]);
        assert_eq!(tokenize("a % note\nb"), vec!["a", " b"]);
        assert_eq!(tokenize(r"x\"), vec!["x", r"\"]);
        assert_eq!(tokenize(r"\ a"), vec![r"\ ", "a"]);
    }

    #[test]
    fn detokenize_round_trip() {
        for raw in [r"\frac{a}{b} + \alpha x", r"\begin{tabular}{cc} a & b \\ \hline c & d \end{tabular}", r"\ a\,b"] {
            let t = tokenize(raw);
            assert_eq!(tokenize(&detokenize(&t)), t, "{raw}");
        }
        // Tokens from elsewhere may glue a control word onto a letter.
        assert_eq!(detokenize(&[r"\alpha", "b"]), r"\alpha b");
    }

    #[test]
    fn prompt_rotation() {
        let s = script("a b c d");
        assert_eq!(build_refine_prompt(&s, 2).unwrap(), toks("c d <s> a b"));
        assert_eq!(build_refine_prompt(&s, 0).unwrap(), toks("a b c d <s>"));
        assert_eq!(build_refine_prompt(&s, 4).unwrap(), toks("<s> a b c d"));
        assert!(matches!(
            build_refine_prompt(&s, 5),
            Err(OrchestratorError::IndexOutOfRange { index: 5, len: 4 })
        ));
    }

    #[test]
    fn reconstruct_keeps_prefix() {
        let s = script("a b c d");
        assert_eq!(reconstruct(&s, 2, &toks("x y z")).unwrap().tokens, toks("a b x y z"));
        assert!(reconstruct(&s, 0, &[]).unwrap().is_empty());
        assert!(reconstruct(&s, 9, &[]).is_err());
    }

    #[test]
    fn divergence_cases() {
        assert_eq!(first_divergence(&script("a b c"), &script("a b d")).index, 2);
        assert_eq!(first_divergence(&script("a b"), &script("a b c")).index, 2);
        assert_eq!(first_divergence(&script("a b c d e"), &script("a b c d e")).index, 5);
    }

    #[test]
    fn training_pair_composition() {
        let pair = make_training_pair(&script("a x"), &script("a b c")).unwrap();
        assert_eq!(pair.fault, 1);
        assert_eq!(pair.prompt, toks("x <s> a"));
        assert_eq!(pair.target, toks("b c"));
        assert!(matches!(
            make_training_pair(&script("a b"), &script("a b")),
            Err(OrchestratorError::IdenticalScripts)
        ));
    }
}
