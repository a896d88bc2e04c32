//! Synthetic C-like corpora with known category structure.
//!
//! Each category has its own context vocabulary, a vulnerable statement
//! shape and a patched shape. Non-vulnerable functions sometimes carry
//! another category's vulnerable shape in a harmless context, so a single
//! linear detector has to learn context/pattern conjunctions while a
//! per-category expert does not.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::{CodeSample, Label};
use crate::features::EncoderConfig;
use crate::learn::{LossSpec, TrainConfig};
use crate::moe::{MoeTrainConfig, DEFAULT_FOCAL_GAMMA};
use crate::taxonomy::CweId;

#[derive(Clone, Debug)]
pub struct CategorySpec {
    /// CWE ids drawn for vulnerable samples, with relative weights.
    pub cwes: Vec<(&'static str, u32)>,
    pub vocab: [&'static str; 8],
    pub vulnerable: &'static str,
    pub patched: &'static str,
    pub n_vulnerable: usize,
    pub n_safe: usize,
}

#[derive(Clone, Debug)]
pub struct FixtureSpec {
    pub name: &'static str,
    pub categories: Vec<CategorySpec>,
    /// Tab-separated `parent child` lines.
    pub taxonomy: String,
    /// Probability that a context word comes from the category's own
    /// vocabulary rather than the shared pool.
    pub own_context: f64,
    /// Probability that a vulnerable sample uses its own category's shape
    /// rather than a random other one.
    pub own_pattern: f64,
    /// Probability that a non-vulnerable sample carries another category's
    /// vulnerable shape instead of its own patched shape.
    pub borrow: f64,
    /// Statement added to every vulnerable sample, and its patched form to
    /// every non-vulnerable one.
    pub shared: Option<(&'static str, &'static str)>,
    pub seed: u64,
}

const SHARED_VOCAB: [&str; 12] = [
    "ctx", "state", "info", "desc", "opts", "priv", "core", "base", "main", "aux", "util", "common",
];
const VERBS: [&str; 10] = [
    "init", "load", "parse", "handle", "update", "process", "read", "write", "setup", "check",
];
const BUFS: [&str; 8] = ["buf", "dst", "src", "data", "out", "tmp", "str", "arg"];
const LENS: [&str; 5] = ["len", "size", "count", "n", "cap"];
const IDXS: [&str; 5] = ["i", "j", "k", "idx", "pos"];
const PTRS: [&str; 5] = ["ptr", "p", "cur", "res", "obj"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty pool")
}

/// Fills `{a}`, `{b}`, `{n}`, `{i}`, `{p}` with generic names, distinct
/// between `{a}` and `{b}`.
fn fill(rng: &mut ChaCha8Rng, template: &str) -> String {
    let a = pick(rng, &BUFS);
    let b = loop {
        let b = pick(rng, &BUFS);
        if b != a {
            break b;
        }
    };
    template
        .replace("{a}", a)
        .replace("{b}", b)
        .replace("{n}", pick(rng, &LENS))
        .replace("{i}", pick(rng, &IDXS))
        .replace("{p}", pick(rng, &PTRS))
}

fn context_word(rng: &mut ChaCha8Rng, vocab: &[&'static str], own: f64) -> &'static str {
    if rng.gen_bool(own) {
        vocab.choose(rng).copied().expect("vocab")
    } else {
        pick(rng, &SHARED_VOCAB)
    }
}

fn context_statement(rng: &mut ChaCha8Rng, vocab: &[&'static str], own: f64) -> String {
    let (w1, w2) = (context_word(rng, vocab, own), context_word(rng, vocab, own));
    let n: u32 = rng.gen_range(0..256);
    match rng.gen_range(0..4) {
        0 => format!("{w1}_{w2}_{}(self, {n});", pick(rng, &VERBS)),
        1 => format!("self->{w1}_{w2} = {n};"),
        2 => format!("struct {w1}_{w2} *{w2} = get_{w1}(self);"),
        _ => format!("if (self->{w1}_{w2} < {n}) return -{};", n % 8 + 1),
    }
}

fn function(rng: &mut ChaCha8Rng, vocab: &[&'static str], own: f64, body: &str) -> String {
    let (w1, w2, w3) = (
        context_word(rng, vocab, own),
        context_word(rng, vocab, own),
        context_word(rng, vocab, own),
    );
    let mut code = format!(
        "static int {w1}_{w2}_{}(struct {w3} *self, size_t len)\n{{\n",
        pick(rng, &VERBS)
    );
    for _ in 0..rng.gen_range(1..=3) {
        let _ = writeln!(code, "    {}", context_statement(rng, vocab, own));
    }
    for line in fill(rng, body).lines() {
        let _ = writeln!(code, "    {}", line.trim());
    }
    for _ in 0..rng.gen_range(0..=2) {
        let _ = writeln!(code, "    {}", context_statement(rng, vocab, own));
    }
    code.push_str("    return 0;\n}\n");
    code
}

fn weighted_cwe(rng: &mut ChaCha8Rng, cwes: &[(&'static str, u32)]) -> &'static str {
    let total: u32 = cwes.iter().map(|c| c.1).sum();
    let mut r = rng.gen_range(0..total);
    for (id, w) in cwes {
        if r < *w {
            return id;
        }
        r -= w;
    }
    unreachable!("weights cover the range")
}

fn other(rng: &mut ChaCha8Rng, n: usize, not: usize) -> usize {
    let o = rng.gen_range(0..n - 1);
    if o >= not {
        o + 1
    } else {
        o
    }
}

impl FixtureSpec {
    fn with_shared(&self, shape: &str, vulnerable: bool) -> String {
        match self.shared {
            Some((v, p)) => format!("{}\n{shape}", if vulnerable { v } else { p }),
            None => shape.to_string(),
        }
    }

    /// Generates the corpus. Ids are `<name>-NNNNN`; order is shuffled.
    pub fn generate(&self) -> Vec<CodeSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n_cat = self.categories.len();
        let mut out = Vec::new();
        for (c, cat) in self.categories.iter().enumerate() {
            for _ in 0..cat.n_vulnerable {
                let shape = if n_cat > 1 && !rng.gen_bool(self.own_pattern) {
                    self.categories[other(&mut rng, n_cat, c)].vulnerable
                } else {
                    cat.vulnerable
                };
                let shape = self.with_shared(shape, true);
                let code = function(&mut rng, &cat.vocab, self.own_context, &shape);
                let cwe = weighted_cwe(&mut rng, &cat.cwes);
                out.push((code, Label::Vulnerable, Some(cwe)));
            }
            for _ in 0..cat.n_safe {
                let shape = if n_cat > 1 && rng.gen_bool(self.borrow) {
                    self.categories[other(&mut rng, n_cat, c)].vulnerable
                } else {
                    cat.patched
                };
                let shape = self.with_shared(shape, false);
                let code = function(&mut rng, &cat.vocab, self.own_context, &shape);
                out.push((code, Label::NonVulnerable, None));
            }
        }
        out.shuffle(&mut rng);
        out.into_iter()
            .enumerate()
            .map(|(i, (code, label, cwe))| CodeSample {
                sample_id: format!("{}-{i:05}", self.name),
                code,
                label,
                cwe: cwe.map(|c| c.parse::<CweId>().expect("fixture CWE ids are valid")),
                project: Some(self.name.to_string()),
            })
            .collect()
    }

    pub fn to_jsonl(samples: &[CodeSample]) -> String {
        let mut s = String::new();
        for x in samples {
            let rec = json!({
                "id": x.sample_id,
                "func": x.code,
                "target": u8::from(x.is_vulnerable()),
                "cwe": x.cwe.as_ref().map(|c| c.to_string()),
                "project": x.project,
            });
            s.push_str(&rec.to_string());
            s.push('\n');
        }
        s
    }
}

fn cat(
    cwes: &[(&'static str, u32)],
    vocab: [&'static str; 8],
    vulnerable: &'static str,
    patched: &'static str,
    n_vulnerable: usize,
    n_safe: usize,
) -> CategorySpec {
    CategorySpec {
        cwes: cwes.to_vec(),
        vocab,
        vulnerable,
        patched,
        n_vulnerable,
        n_safe,
    }
}

/// Twelve categories after folding: ten pillar roots, `CWE-noinfo`, and
/// three rare ids outside the taxonomy that fold into `CWE-agg` at
/// `min_instances = 30`.
pub fn separable_12() -> FixtureSpec {
    FixtureSpec {
        name: "separable-12",
        categories: vec![
            cat(
                &[("CWE-787", 3), ("CWE-125", 2), ("CWE-416", 2)],
                ["pool", "arena", "chunk", "slab", "region", "block", "heap", "page"],
                "memcpy({a}, {b}, {n});",
                "if ({n} > sizeof({a})) return -1;\nmemcpy({a}, {b}, {n});",
                150,
                115,
            ),
            cat(
                &[("CWE-78", 2), ("CWE-89", 2), ("CWE-79", 1), ("CWE-20", 2)],
                ["query", "shell", "command", "script", "html", "escape", "input", "field"],
                "system({a});",
                "if (!is_safe_arg({a})) return -1;\nexecv_checked({a});",
                120,
                115,
            ),
            cat(
                &[("CWE-190", 3), ("CWE-369", 1)],
                ["ratio", "scale", "total", "average", "sum", "quotient", "fraction", "metric"],
                "{a} = {b} / {n};",
                "if ({n} == 0) return 0;\n{a} = {b} / {n};",
                100,
                115,
            ),
            cat(
                &[("CWE-835", 2), ("CWE-362", 1)],
                ["loop", "worker", "queue", "event", "tick", "step", "cycle", "timer"],
                "while ({i} != {n}) {i} += 2;",
                "while ({i} < {n}) {i} += 2;",
                90,
                115,
            ),
            cat(
                &[("CWE-252", 2), ("CWE-755", 1)],
                ["file", "stream", "handle", "reader", "config", "path", "line", "record"],
                "{p} = fopen({a}, \"r\");\nfgets({b}, 64, {p});",
                "{p} = fopen({a}, \"r\");\nif ({p} == NULL) return -1;\nfgets({b}, 64, {p});",
                85,
                115,
            ),
            cat(
                &[("CWE-476", 1)],
                ["node", "list", "tree", "entry", "link", "parent", "child", "item"],
                "{p} = lookup({a});\nself->next = {p}->next;",
                "{p} = lookup({a});\nif (!{p}) return -1;\nself->next = {p}->next;",
                80,
                115,
            ),
            cat(
                &[("CWE-287", 2), ("CWE-269", 1)],
                ["user", "group", "perm", "role", "owner", "session", "token", "cred"],
                "setuid(0);",
                "if (getuid() != 0) return -EPERM;\nsetuid(0);",
                75,
                115,
            ),
            cat(
                &[("CWE-327", 1), ("CWE-330", 1)],
                ["crypto", "cipher", "key", "nonce", "seed", "salt", "hash", "digest"],
                "{i} = rand() % {n};",
                "{i} = secure_random_u32() % {n};",
                70,
                115,
            ),
            cat(
                &[("CWE-noinfo", 1)],
                ["image", "pixel", "color", "width", "height", "bitmap", "layer", "glyph"],
                "{a}[{i}] = {b}[{i} + 1];",
                "if ({i} + 1 < {n}) {a}[{i}] = {b}[{i} + 1];",
                65,
                115,
            ),
            cat(
                &[("CWE-436", 1)],
                ["device", "driver", "port", "channel", "socket", "frame", "packet", "peer"],
                "strcat({a}, {b});",
                "strncat({a}, {b}, sizeof({a}) - 1);",
                60,
                115,
            ),
            cat(
                &[("CWE-1023", 1)],
                ["name", "label", "prefix", "suffix", "match", "pattern", "version", "tag"],
                "if (strncmp({a}, {b}, 1) == 0) return 1;",
                "if (strcmp({a}, {b}) == 0) return 1;",
                55,
                115,
            ),
            cat(
                &[("CWE-310", 1), ("CWE-254", 1), ("CWE-19", 1)],
                ["audio", "sample", "codec", "track", "volume", "stereo", "mixer", "band"],
                "free({p});\nuse_buffer({p});",
                "free({p});\n{p} = NULL;",
                72,
                115,
            ),
        ],
        taxonomy: SEPARABLE_TAXONOMY.to_string(),
        own_context: 1.0,
        own_pattern: 1.0,
        borrow: 2.0 / 3.0,
        shared: None,
        seed: 0x5E9A_0012,
    }
}

const SEPARABLE_TAXONOMY: &str = "\
# Pillars and the member ids used by the separable-12 fixture.
# CWE-310, CWE-254 and CWE-19 are deliberately absent.
CWE-664\tCWE-118
CWE-118\tCWE-119
CWE-119\tCWE-787
CWE-119\tCWE-125
CWE-664\tCWE-672
CWE-672\tCWE-416
CWE-707\tCWE-74
CWE-74\tCWE-78
CWE-74\tCWE-89
CWE-74\tCWE-79
CWE-707\tCWE-20
CWE-682\tCWE-190
CWE-682\tCWE-369
CWE-691\tCWE-834
CWE-834\tCWE-835
CWE-691\tCWE-362
CWE-703\tCWE-754
CWE-754\tCWE-252
CWE-703\tCWE-755
CWE-710\tCWE-476
CWE-284\tCWE-287
CWE-284\tCWE-269
CWE-693\tCWE-327
CWE-693\tCWE-330
CWE-435\tCWE-436
CWE-697\tCWE-1023
CWE-noinfo
";

/// Four categories with partly shared context and vulnerable shapes, so
/// the router is often unsure between two of them.
pub fn confusable_4() -> FixtureSpec {
    let s = separable_12();
    let mut categories: Vec<CategorySpec> = s.categories.into_iter().take(4).collect();
    for c in &mut categories {
        c.n_vulnerable = 150;
        c.n_safe = 150;
    }
    FixtureSpec {
        name: "confusable-4",
        categories,
        taxonomy: CONFUSABLE_TAXONOMY.to_string(),
        own_context: 0.35,
        own_pattern: 0.5,
        borrow: 0.2,
        shared: Some(("{b}[{n}] = 0;", "{b}[{n} - 1] = 0;")),
        seed: 0xC0F5_0004,
    }
}

const CONFUSABLE_TAXONOMY: &str = "\
CWE-664\tCWE-118
CWE-118\tCWE-119
CWE-119\tCWE-787
CWE-119\tCWE-125
CWE-664\tCWE-672
CWE-672\tCWE-416
CWE-707\tCWE-74
CWE-74\tCWE-78
CWE-74\tCWE-89
CWE-74\tCWE-79
CWE-707\tCWE-20
CWE-682\tCWE-190
CWE-682\tCWE-369
CWE-691\tCWE-834
CWE-834\tCWE-835
CWE-691\tCWE-362
";

/// Training settings the bundled fixtures are tuned for. They differ from
/// the library defaults in learning rate, epochs and feature dimension, so
/// that a full run takes seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureSettings {
    pub encoder: EncoderConfig,
    pub train: MoeTrainConfig,
    pub min_instances: u64,
}

pub const FIXTURE_DIM: usize = 1 << 16;
pub const FIXTURE_MIN_INSTANCES: u64 = 30;

pub fn fixture_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 20,
        learning_rate: 0.05,
        seed,
        ..TrainConfig::default()
    }
}

pub fn settings(seed: u64, workers: usize) -> FixtureSettings {
    let expert = fixture_train_config(seed);
    FixtureSettings {
        encoder: EncoderConfig::with_dim(FIXTURE_DIM),
        train: MoeTrainConfig {
            router: TrainConfig {
                loss: LossSpec::focal(DEFAULT_FOCAL_GAMMA, Vec::new()),
                ..expert.clone()
            },
            expert,
            workers,
            ..MoeTrainConfig::default()
        },
        min_instances: FIXTURE_MIN_INSTANCES,
    }
}

pub fn by_name(name: &str) -> Option<FixtureSpec> {
    match name {
        "separable-12" => Some(separable_12()),
        "confusable-4" => Some(confusable_4()),
        _ => None,
    }
}
