//! Helpers shared by the integration tests: seeded generators and oracles
//! written independently of the library code they check.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use latte_core::raster::{Pixel, PixelGrid};
use latte_core::render::{FixtureRenderer, RenderKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const INK: Pixel = Pixel::new(0, 0, 0);
pub const GREY: Pixel = Pixel::new(90, 90, 90);

/// Three distinct height-4 columns.
pub fn alphabet3() -> [Vec<Pixel>; 3] {
    let w = Pixel::WHITE;
    [vec![w, w, w, w], vec![INK, w, INK, w], vec![w, INK, INK, GREY]]
}

pub fn grid_from_symbols(symbols: &[usize], alphabet: &[Vec<Pixel>]) -> PixelGrid {
    let cols: Vec<Vec<Pixel>> = symbols.iter().map(|&s| alphabet[s].clone()).collect();
    PixelGrid::from_columns(&cols).unwrap()
}

pub fn random_symbols(r: &mut ChaCha8Rng, max_len: usize, alphabet: usize) -> Vec<usize> {
    let len = r.gen_range(1..=max_len);
    (0..len).map(|_| r.gen_range(0..alphabet)).collect()
}

/// Random grid mixing white, black and a couple of greys.
pub fn random_grid(r: &mut ChaCha8Rng, h: usize, w: usize) -> PixelGrid {
    let palette = [Pixel::WHITE, Pixel::WHITE, INK, GREY, Pixel::new(10, 200, 30)];
    let px = (0..h * w).map(|_| palette[r.gen_range(0..palette.len())]).collect();
    PixelGrid::new(h, w, px).unwrap()
}

/// Plain recursive Levenshtein with memoisation on suffix positions.
pub fn levenshtein_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo)
                .min(go(a, b, i, j + 1, memo))
                .min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Pixel-level column sequences compared directly, without interning.
pub fn column_oracle(gt: &PixelGrid, rendered: &PixelGrid) -> usize {
    levenshtein_oracle(&gt.columns(), &rendered.columns())
}

/// Textbook sentence BLEU-4 (Papineni et al.), written from the definition.
pub fn reference_bleu(candidate: &[String], reference: &[String]) -> f64 {
    let c = candidate.len();
    let r = reference.len();
    if c == 0 {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 1..=4 {
        if c < n {
            return 0.0;
        }
        let mut ref_counts: HashMap<&[String], i64> = HashMap::new();
        for g in reference.windows(n) {
            *ref_counts.entry(g).or_default() += 1;
        }
        let mut clipped = 0i64;
        let mut seen: HashMap<&[String], i64> = HashMap::new();
        for g in candidate.windows(n) {
            let k = seen.entry(g).or_default();
            *k += 1;
            if *k <= *ref_counts.get(g).unwrap_or(&0) {
                clipped += 1;
            }
        }
        let total = (c - n + 1) as f64;
        if clipped == 0 {
            return 0.0;
        }
        log_p += 0.25 * (clipped as f64 / total).ln();
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_p.exp()
}

/// A deterministic stand-in for a typeset image: each token becomes a 6-pixel
/// wide glyph whose ink pattern depends on the token text.
pub fn glyph_strip(source: &str) -> PixelGrid {
    let key = latte_core::render::fixture_key(source);
    let tokens: Vec<&str> = key.split(' ').filter(|t| !t.is_empty()).collect();
    let height = 24;
    let mut cols = vec![vec![Pixel::WHITE; height]; 2];
    for tok in &tokens {
        let mut seed: u32 = 2166136261;
        for b in tok.bytes() {
            seed = (seed ^ u32::from(b)).wrapping_mul(16777619);
        }
        for x in 0..5 {
            let mut col = vec![Pixel::WHITE; height];
            for (y, px) in col.iter_mut().enumerate().skip(3).take(18) {
                let bit = (seed.rotate_left((x * 7 + y) as u32) >> 3) & 1;
                if bit == 1 {
                    *px = INK;
                }
            }
            cols.push(col);
        }
        cols.push(vec![Pixel::WHITE; height]);
    }
    cols.push(vec![Pixel::WHITE; height]);
    PixelGrid::from_columns(&cols).unwrap()
}

pub fn fixture_renderer(sources: &[&str]) -> FixtureRenderer {
    let mut r = FixtureRenderer::new();
    for s in sources {
        r.insert(s, glyph_strip(s));
    }
    r
}

pub fn normalized_glyphs(source: &str, kind: RenderKind) -> PixelGrid {
    latte_core::raster::normalize(&glyph_strip(source), &kind.spec())
}

pub const TRUTH_SRC: &str = r"\frac{a}{b}+c^{2}";
pub const DRAFT_SRC: &str = r"\frac{a}{b}+c^{3}";

/// Mock script for the wrong-draft-then-fix flow: the fault sits at the
/// exponent (token 11) and the refinement supplies the rest of the truth.
pub const FIX_EXPONENT_MOCK: &str = r#"{"role":"generate","match":{"seq":1},"response":{"latex":"\\frac{a}{b}+c^{3}"}}
{"role":"localize","match":{"seq":1},"response":{"index":11}}
{"role":"refine","match":{"seq":1},"response":{"completion_tokens":["2","}"]}}
"#;

/// Never produces the truth: every round proposes another wrong exponent.
pub const ALWAYS_WRONG_MOCK: &str = r#"{"role":"generate","match":{"seq":1},"response":{"latex":"\\frac{a}{b}+c^{3}"}}
{"role":"localize","match":{"seq":1},"response":{"index":11}}
{"role":"refine","match":{"seq":1},"response":{"completion_tokens":["4","}"]}}
{"role":"localize","match":{"seq":2},"response":{"index":11}}
{"role":"refine","match":{"seq":2},"response":{"completion_tokens":["5","}"]}}
{"role":"localize","match":{"seq":3},"response":{"index":11}}
{"role":"refine","match":{"seq":3},"response":{"completion_tokens":["6","}"]}}
"#;

pub fn exponent_renderer() -> FixtureRenderer {
    fixture_renderer(&[
        TRUTH_SRC,
        DRAFT_SRC,
        r"\frac{a}{b}+c^{4}",
        r"\frac{a}{b}+c^{5}",
        r"\frac{a}{b}+c^{6}",
    ])
}

/// Height-8 column glyphs, one per symbol id, all distinct.
pub fn symbol_column(id: u8) -> Vec<Pixel> {
    (0..8)
        .map(|y| {
            if y == 0 || y == 7 {
                Pixel::WHITE
            } else if (u32::from(id).wrapping_mul(37) >> (y - 1)) & 1 == 1 || y == 3 {
                INK
            } else {
                Pixel::WHITE
            }
        })
        .collect()
}

/// Substitution/deletion/insertion pair: four separated substituted columns,
/// one gt-only column and one rendered-only column later on.
pub fn mixed_ops_pair() -> (PixelGrid, PixelGrid) {
    // gt:       a X1 b X2 c X3 d X4 e I1 f g    h
    // rendered: a Y1 b Y2 c Y3 d Y4 e    f g D1 h
    let gt_ids: [u8; 13] = [1, 20, 2, 21, 3, 22, 4, 23, 5, 40, 6, 7, 8];
    let r_ids: [u8; 13] = [1, 30, 2, 31, 3, 32, 4, 33, 5, 6, 7, 50, 8];
    let to_grid = |ids: &[u8]| PixelGrid::from_columns(&ids.iter().map(|&i| symbol_column(i)).collect::<Vec<_>>()).unwrap();
    (to_grid(&gt_ids), to_grid(&r_ids))
}

/// Table-like pair: rendered is the gt with one row band shifted down by one pixel.
pub fn row_shifted_pair(r: &mut ChaCha8Rng) -> (PixelGrid, PixelGrid) {
    let (h, w) = (12, 16);
    let mut gt = PixelGrid::white(h, w).unwrap();
    for y in 0..h - 1 {
        for x in 0..w {
            if r.gen_bool(0.5) {
                gt.set(y, x, INK);
            }
        }
    }
    let mut rendered = gt.clone();
    // Insert a white row at y=5, pushing rows 5..h-1 down one.
    for y in (6..h).rev() {
        for x in 0..w {
            rendered.set(y, x, gt.get(y - 1, x));
        }
    }
    for x in 0..w {
        rendered.set(5, x, Pixel::WHITE);
    }
    (gt, rendered)
}

/// Writes stand-in `pdflatex`/`pdftoppm` scripts into `dir` and returns their
/// paths. The compiler fails on `\undefinedmacro` with a TeX-style log, sleeps
/// on `\sleepforever`, otherwise copies the document body into `job.pdf`. The
/// rasterizer turns that body into a deterministic PNG of the requested dpi.
pub fn fake_toolchain(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    use std::os::unix::fs::PermissionsExt;
    let tex = dir.join("fake-pdflatex");
    let ras = dir.join("fake-pdftoppm");
    std::fs::write(
        &tex,
        r#"#!/usr/bin/env python3
import sys, os, time
args = sys.argv[1:]
outdir = next(a.split('=', 1)[1] for a in args if a.startswith('-output-directory='))
src = args[-1]
body = open(src).read()
job = os.path.splitext(os.path.basename(src))[0]
log = os.path.join(outdir, job + '.log')
if '\\sleepforever' in body:
    time.sleep(60)
if '\\undefinedmacro' in body:
    with open(log, 'w') as f:
        for i in range(30):
            f.write('filler line %d\n' % i)
        f.write('! Undefined control sequence.\nl.7 \\undefinedmacro\n')
    sys.stdout.write('! Undefined control sequence.\n')
    sys.exit(1)
inner = body.split('\\begin{document}', 1)[1].split('\\end{document}', 1)[0]
with open(os.path.join(outdir, job + '.pdf'), 'w') as f:
    f.write(inner)
with open(log, 'w') as f:
    f.write('Output written on %s.pdf (1 page).\n' % job)
"#,
    )
    .unwrap();
    std::fs::write(
        &ras,
        r#"#!/usr/bin/env python3
import sys, hashlib
from PIL import Image
args = sys.argv[1:]
dpi = int(args[args.index('-r') + 1])
pdf, prefix = args[-2], args[-1]
text = open(pdf).read().strip()
digest = hashlib.sha256(text.encode()).digest()
w = max(8, len(text) * dpi // 40)
h = dpi // 4
img = Image.new('RGBA', (w, h), (255, 255, 255, 0))
for x in range(w):
    byte = digest[x % len(digest)]
    for y in range(2, h - 2):
        if (byte >> (y % 8)) & 1:
            img.putpixel((x, y), (0, 0, 0, 255))
img.save(prefix + '.png')
"#,
    )
    .unwrap();
    for p in [&tex, &ras] {
        std::fs::set_permissions(p, std::fs::Permissions::from_mode(0o755)).unwrap();
    }
    (tex, ras)
}

pub fn python_with_pillow() -> bool {
    std::process::Command::new("python3")
        .args(["-c", "import PIL"])
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

/// Stack-based tabular extraction using regex to find markers and comments,
/// written independently of the library scanner.
pub fn reference_extract(tex: &str) -> (Vec<String>, usize) {
    let comment = regex::Regex::new(r"(?m)(^|[^\\])((?:\\\\)*)%.*$").unwrap();
    let mut clean = tex.to_string();
    // Repeat until stable so adjacent comments are all caught.
    loop {
        let next = comment.replace_all(&clean, "$1$2").into_owned();
        if next == clean {
            break;
        }
        clean = next;
    }
    let marker = regex::Regex::new(r"\\(begin|end)\{tabular\}").unwrap();
    let mut stack: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    let mut unbalanced = 0;
    for m in marker.captures_iter(&clean) {
        let whole = m.get(0).unwrap();
        if &m[1] == "begin" {
            stack.push(whole.start());
        } else if let Some(start) = stack.pop() {
            if stack.is_empty() {
                out.push(clean[start..whole.end()].to_string());
            }
        } else {
            unbalanced += 1;
        }
    }
    // Unclosed begins: the outermost one is reported; rescanning after it may
    // recover inner balanced spans.
    if !stack.is_empty() {
        let first = stack[0];
        unbalanced += 1;
        let rest = &clean[first + "\\begin{tabular}".len()..];
        let (more, more_unbalanced) = reference_extract(rest);
        out.extend(more);
        unbalanced += more_unbalanced;
    }
    (out, unbalanced)
}
