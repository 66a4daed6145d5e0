//! Input parsing, implicit-feedback conversion, filtering, manifests and
//! the seeded synthetic generator.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{AttributeTriple, InteractionRecord};
use crate::numeric::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Tsv,
    Csv,
}

impl InputFormat {
    fn separator(self) -> char {
        match self {
            InputFormat::Tsv => '\t',
            InputFormat::Csv => ',',
        }
    }

    /// `.csv` means CSV; anything else is read as TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Tsv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RatingValue {
    Numeric(f64),
    /// Interaction type name; `+` joins several, e.g. `view+like`.
    Token(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRating {
    pub user: String,
    pub item: String,
    pub value: RatingValue,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Parsed rows plus the lines that were rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseReport<T> {
    pub rows: Vec<T>,
    pub errors: Vec<LineError>,
}

fn parse_lines<T>(
    text: &str,
    source_name: &str,
    strict: bool,
    skip_comments: bool,
    mut parse: impl FnMut(&str) -> std::result::Result<T, String>,
) -> Result<ParseReport<T>> {
    let mut report = ParseReport {
        rows: Vec::new(),
        errors: Vec::new(),
    };
    let mut content_lines = 0;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || (skip_comments && line.starts_with('#')) {
            continue;
        }
        content_lines += 1;
        match parse(line) {
            Ok(row) => report.rows.push(row),
            Err(message) if strict => {
                return Err(Error::Format {
                    source_name: source_name.to_string(),
                    line: n + 1,
                    message,
                })
            }
            Err(message) => report.errors.push(LineError { line: n + 1, message }),
        }
    }
    if content_lines > 0 && report.rows.is_empty() {
        let (line, message) = report
            .errors
            .first()
            .map(|e| (e.line, format!("no valid rows; first problem: {}", e.message)))
            .unwrap_or((0, "no valid rows".into()));
        return Err(Error::Format {
            source_name: source_name.to_string(),
            line,
            message,
        });
    }
    Ok(report)
}

fn parse_rating(line: &str, format: InputFormat) -> std::result::Result<RawRating, String> {
    let fields: Vec<&str> = line.split(format.separator()).map(str::trim).collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(format!("expected 3 or 4 fields, found {}", fields.len()));
    }
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err("empty user or item id".into());
    }
    let raw = fields[2];
    let value = match raw.parse::<f64>() {
        // "nan" and "inf" parse as floats but are read as type names
        Ok(v) if v.is_finite() => RatingValue::Numeric(v),
        _ if raw.is_empty() => return Err("empty value".into()),
        _ if raw.split('+').any(str::is_empty) => return Err(format!("malformed interaction type '{raw}'")),
        _ => RatingValue::Token(raw.to_string()),
    };
    let timestamp = match fields.get(3) {
        None => None,
        Some(t) => Some(t.parse::<i64>().map_err(|_| format!("bad timestamp '{t}'"))?),
    };
    Ok(RawRating {
        user: fields[0].to_string(),
        item: fields[1].to_string(),
        value,
        timestamp,
    })
}

/// Parses `user SEP item SEP value [SEP timestamp]` lines. Blank lines are
/// skipped. Malformed lines are collected unless `strict`, which fails on
/// the first one.
pub fn parse_interactions_str(
    text: &str,
    format: InputFormat,
    strict: bool,
    source_name: &str,
) -> Result<ParseReport<RawRating>> {
    parse_lines(text, source_name, strict, false, |l| parse_rating(l, format))
}

pub fn parse_interactions(path: &Path, format: InputFormat, strict: bool) -> Result<ParseReport<RawRating>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions_str(&text, format, strict, &path.display().to_string())
}

pub fn serialize_interactions(rows: &[RawRating], format: InputFormat) -> String {
    let sep = format.separator();
    let mut out = String::new();
    for r in rows {
        let value = match &r.value {
            RatingValue::Numeric(v) => v.to_string(),
            RatingValue::Token(t) => t.clone(),
        };
        let _ = write!(out, "{}{sep}{}{sep}{value}", r.user, r.item);
        if let Some(t) = r.timestamp {
            let _ = write!(out, "{sep}{t}");
        }
        out.push('\n');
    }
    out
}

/// TSV lines `user item types [timestamp]`, types joined with `+`.
pub fn format_records(records: &[InteractionRecord]) -> String {
    let rows: Vec<RawRating> = records
        .iter()
        .map(|r| RawRating {
            user: r.user.clone(),
            item: r.item.clone(),
            value: RatingValue::Token(r.types.iter().cloned().collect::<Vec<_>>().join("+")),
            timestamp: r.timestamp,
        })
        .collect();
    serialize_interactions(&rows, InputFormat::Tsv)
}

pub const RATED: &str = "rated";

/// Numeric values `>= threshold` become `rated` records (no threshold keeps
/// every rating); tokens become their named interaction types.
pub fn to_implicit(ratings: &[RawRating], threshold: Option<f64>) -> Vec<InteractionRecord> {
    ratings
        .iter()
        .filter_map(|r| {
            let (types, weight): (BTreeSet<String>, _) = match &r.value {
                RatingValue::Numeric(v) => {
                    if threshold.is_some_and(|t| *v < t) {
                        return None;
                    }
                    ([RATED.to_string()].into(), Some(*v))
                }
                RatingValue::Token(t) => (t.split('+').map(str::to_string).collect(), None),
            };
            Some(InteractionRecord {
                user: r.user.clone(),
                item: r.item.clone(),
                types,
                weight,
                timestamp: r.timestamp,
                line: None,
            })
        })
        .collect()
}

/// Drops users with fewer than `n` records. Applied once; dropping users
/// does not trigger further item filtering.
pub fn filter_min_interactions(records: &[InteractionRecord], n: usize) -> Vec<InteractionRecord> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in records {
        *counts.entry(r.user.as_str()).or_default() += 1;
    }
    records
        .iter()
        .filter(|r| counts[r.user.as_str()] >= n)
        .cloned()
        .collect()
}

/// Parses `head TAB relation TAB tail` lines, skipping `#` comments.
/// Duplicates are kept.
pub fn parse_attribute_triples_str(text: &str, strict: bool, source_name: &str) -> Result<ParseReport<AttributeTriple>> {
    parse_lines(text, source_name, strict, true, |line| {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(format!("expected 3 fields, found {}", fields.len()));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err("empty field".into());
        }
        Ok(AttributeTriple::new(fields[0], fields[1], fields[2]))
    })
}

pub fn parse_attribute_triples(path: &Path, strict: bool) -> Result<ParseReport<AttributeTriple>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_attribute_triples_str(&text, strict, &path.display().to_string())
}

pub fn format_attribute_triples(triples: &[AttributeTriple]) -> String {
    let mut out = String::new();
    for t in triples {
        let _ = writeln!(out, "{}\t{}\t{}", t.head, t.relation, t.tail);
    }
    out
}

/// Announced dataset size: `users=`, `items=`, `interactions=` lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetManifest {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut vals: [Option<usize>; 3] = [None; 3];
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: String| Error::Format {
                source_name: "manifest".into(),
                line: n + 1,
                message: m,
            };
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key=value, got '{line}'")))?;
            let slot = match k.trim() {
                "users" => 0,
                "items" => 1,
                "interactions" => 2,
                other => return Err(bad(format!("unknown key '{other}'"))),
            };
            vals[slot] = Some(v.trim().parse().map_err(|_| bad(format!("bad count '{}'", v.trim())))?);
        }
        match vals {
            [Some(users), Some(items), Some(interactions)] => Ok(DatasetManifest {
                users,
                items,
                interactions,
            }),
            _ => Err(Error::Format {
                source_name: "manifest".into(),
                line: 0,
                message: "manifest needs users=, items= and interactions=".into(),
            }),
        }
    }

    pub fn of(records: &[InteractionRecord]) -> Self {
        let users: HashSet<&str> = records.iter().map(|r| r.user.as_str()).collect();
        let items: HashSet<&str> = records.iter().map(|r| r.item.as_str()).collect();
        DatasetManifest {
            users: users.len(),
            items: items.len(),
            interactions: records.len(),
        }
    }

    pub fn verify(&self, records: &[InteractionRecord]) -> Result<()> {
        let got = Self::of(records);
        if got == *self {
            return Ok(());
        }
        Err(Error::ManifestMismatch(format!(
            "announced users={} items={} interactions={}, parsed users={} items={} interactions={}",
            self.users, self.items, self.interactions, got.users, got.items, got.interactions
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub latent_dim: usize,
    pub interactions_per_user: usize,
    pub attr_entities_per_factor: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 300,
            n_items: 200,
            latent_dim: 8,
            interactions_per_user: 20,
            attr_entities_per_factor: 3,
            noise: 0.1,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0
            || self.n_items == 0
            || self.latent_dim == 0
            || self.interactions_per_user == 0
            || self.attr_entities_per_factor == 0
        {
            return Err(Error::Config("synthetic counts must be positive".into()));
        }
        if self.latent_dim > self.n_items {
            return Err(Error::Config("latent_dim cannot exceed n_items".into()));
        }
        if self.interactions_per_user > self.n_items {
            return Err(Error::Config("interactions_per_user cannot exceed n_items".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise must lie in [0, 1), got {}", self.noise)));
        }
        Ok(())
    }

    /// Factor owning item `i`; items are split into contiguous blocks.
    pub fn item_block(&self, i: usize) -> usize {
        i * self.latent_dim / self.n_items
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub interactions: Vec<InteractionRecord>,
    pub user_attrs: Vec<AttributeTriple>,
    pub item_attrs: Vec<AttributeTriple>,
    pub user_factors: Matrix,
    pub item_factors: Matrix,
    pub user_dominant: Vec<usize>,
    pub item_dominant: Vec<usize>,
}

pub fn user_name(u: usize) -> String {
    format!("u{u}")
}

pub fn item_name(i: usize) -> String {
    format!("i{i}")
}

pub fn attribute_name(factor: usize, j: usize) -> String {
    format!("f{factor}_{j}")
}

const AFFINITY_SCALE: f64 = 2.0;
const FACTOR_JITTER: f64 = 0.2;
const LIKE_RATE: f64 = 0.3;

/// Latent-factor generator.
///
/// Each user gets a dominant factor and each item belongs to its factor's
/// block; factor vectors are the one-hot dominant factor plus Gaussian
/// jitter. A user's interactions are distinct items drawn without
/// replacement: with probability `noise` uniformly from the catalog,
/// otherwise from the user's block with weights softmax(2·uᵀv). When the
/// block runs out the draw widens to the whole catalog. Every interaction
/// is a `view`; about 30% are also a `like`. Each entity links to one
/// attribute of its dominant factor (a random factor with probability
/// `noise`).
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let k = cfg.latent_dim;
    let mut rng = Rng::stream(cfg.seed, 0);

    let user_dominant: Vec<usize> = (0..cfg.n_users).map(|_| rng.below(k)).collect();
    let item_dominant: Vec<usize> = (0..cfg.n_items).map(|i| cfg.item_block(i)).collect();
    let mut factors = |dominant: &[usize]| {
        let mut m = Matrix::zeros(dominant.len(), k);
        for (row, &f) in dominant.iter().enumerate() {
            for c in 0..k {
                m.set(row, c, FACTOR_JITTER * rng.standard_normal() + if c == f { 1.0 } else { 0.0 });
            }
        }
        m
    };
    let user_factors = factors(&user_dominant);
    let item_factors = factors(&item_dominant);

    let blocks: Vec<Vec<usize>> = (0..k)
        .map(|f| (0..cfg.n_items).filter(|&i| item_dominant[i] == f).collect())
        .collect();

    let mut interactions = Vec::with_capacity(cfg.n_users * cfg.interactions_per_user);
    let mut taken = vec![false; cfg.n_items];
    for u in 0..cfg.n_users {
        taken.iter_mut().for_each(|t| *t = false);
        let urow = user_factors.row(u);
        let weight = |i: usize| (AFFINITY_SCALE * crate::numeric::dot(urow, item_factors.row(i))).exp();
        for _ in 0..cfg.interactions_per_user {
            let block_left: Vec<usize> = blocks[user_dominant[u]].iter().copied().filter(|&i| !taken[i]).collect();
            let uniform = rng.uniform() < cfg.noise;
            let pool: Vec<usize> = if uniform || block_left.is_empty() {
                (0..cfg.n_items).filter(|&i| !taken[i]).collect()
            } else {
                block_left
            };
            let pick = if uniform {
                pool[rng.below(pool.len())]
            } else {
                let weights: Vec<f64> = pool.iter().map(|&i| weight(i)).collect();
                let mut target = rng.uniform() * weights.iter().sum::<f64>();
                let mut pick = pool[pool.len() - 1];
                for (&i, &w) in pool.iter().zip(&weights) {
                    if target < w {
                        pick = i;
                        break;
                    }
                    target -= w;
                }
                pick
            };
            taken[pick] = true;
            push_interaction(&mut interactions, u, pick, &mut rng);
        }
    }

    let attr = |name: String, relation: &str, dominant: usize, rng: &mut Rng| {
        let factor = if rng.uniform() < cfg.noise { rng.below(k) } else { dominant };
        AttributeTriple::new(name, relation, attribute_name(factor, rng.below(cfg.attr_entities_per_factor)))
    };
    let user_attrs = (0..cfg.n_users)
        .map(|u| attr(user_name(u), "taste", user_dominant[u], &mut rng))
        .collect();
    let item_attrs = (0..cfg.n_items)
        .map(|i| attr(item_name(i), "genre", item_dominant[i], &mut rng))
        .collect();

    Ok(SynthData {
        interactions,
        user_attrs,
        item_attrs,
        user_factors,
        item_factors,
        user_dominant,
        item_dominant,
    })
}

fn push_interaction(out: &mut Vec<InteractionRecord>, u: usize, i: usize, rng: &mut Rng) {
    let types: Vec<&str> = if rng.uniform() < LIKE_RATE { vec!["view", "like"] } else { vec!["view"] };
    out.push(InteractionRecord::new(user_name(u), item_name(i), types));
}
