//! Labelled response datasets: JSONL ingestion, the train/validation/test
//! split schemes, k-fold partitioning, and a synthetic generator whose
//! labels are recoverable from marker phrases.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::Rng;
use crate::text::tokenize;
use crate::{AspectLabels, NUM_ASPECTS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledResponse {
    pub id: String,
    pub text: String,
    pub labels: AspectLabels,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    labels: Vec<i64>,
}

impl LabeledResponse {
    pub fn new(id: impl Into<String>, text: impl Into<String>, labels: AspectLabels) -> Self {
        LabeledResponse {
            id: id.into(),
            text: text.into(),
            labels,
        }
    }
}

fn validate_record(raw: RawRecord) -> std::result::Result<LabeledResponse, String> {
    if raw.labels.len() != NUM_ASPECTS {
        return Err(format!(
            "labels must have exactly {NUM_ASPECTS} entries, got {}",
            raw.labels.len()
        ));
    }
    let mut labels = [0u8; NUM_ASPECTS];
    for (slot, &v) in labels.iter_mut().zip(&raw.labels) {
        *slot = match v {
            0 => 0,
            1 => 1,
            other => return Err(format!("labels must be 0 or 1, got {other}")),
        };
    }
    if raw.text.is_empty() {
        return Err("text must be non-empty".into());
    }
    Ok(LabeledResponse {
        id: raw.id,
        text: raw.text,
        labels,
    })
}

/// Parses JSONL dataset content. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_dataset(content: &str) -> Result<Vec<LabeledResponse>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let rec = validate_record(raw)
            .map_err(|m| Error::Validation(format!("line {line_no}: {m}")))?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Validation(format!(
                "line {line_no}: duplicate id {:?}",
                rec.id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledResponse>> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&content)
}

/// Serializes records as JSONL, one object per line, trailing newline.
pub fn to_jsonl(data: &[LabeledResponse]) -> String {
    let mut out = String::new();
    for rec in data {
        // Serializing a plain struct of strings and small ints cannot fail.
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// SHA-256 over the canonical JSONL form, hex encoded.
pub fn fingerprint(data: &[LabeledResponse]) -> String {
    let digest = Sha256::digest(to_jsonl(data).as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitScheme {
    /// 80% train / 20% test, for the count-based baselines.
    Shallow,
    /// 60% train / 15% validation / 15% test, residual 10% to train.
    Deep,
}

impl SplitScheme {
    pub fn name(self) -> &'static str {
        match self {
            SplitScheme::Shallow => "shallow",
            SplitScheme::Deep => "deep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub scheme: SplitScheme,
    pub seed: u64,
    pub stratified: bool,
    pub train: Vec<LabeledResponse>,
    pub validation: Vec<LabeledResponse>,
    pub test: Vec<LabeledResponse>,
}

impl DataSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    /// Human-readable account of the split, including where the residual
    /// of the deep scheme went.
    pub fn describe(&self) -> String {
        let (tr, va, te) = self.sizes();
        let rule = match self.scheme {
            SplitScheme::Shallow => "80/20, test = floor(0.20 n)",
            SplitScheme::Deep => "60/15/15, val = test = floor(0.15 n), residual to train",
        };
        format!(
            "{} split ({rule}{}): train={tr} validation={va} test={te}",
            self.scheme.name(),
            if self.stratified { ", stratified on aspect 1" } else { "" }
        )
    }
}

/// Picks `count` positions spread evenly over `0..len`.
fn systematic_positions(len: usize, count: usize) -> Vec<usize> {
    (0..count).map(|i| i * len / count).collect()
}

/// Removes `count` items from `pool`. Without stratification the pool is
/// already shuffled and the tail is taken; with stratification the pool is
/// grouped by the aspect-1 label and sampled systematically so each group
/// contributes proportionally.
fn draw(pool: &mut Vec<usize>, count: usize, data: &[LabeledResponse], stratify: bool) -> Vec<usize> {
    if !stratify || count == 0 {
        let at = pool.len() - count;
        return pool.split_off(at);
    }
    pool.sort_by_key(|&i| data[i].labels[0]);
    let picks: HashSet<usize> = systematic_positions(pool.len(), count).into_iter().collect();
    let mut taken = Vec::with_capacity(count);
    let mut kept = Vec::with_capacity(pool.len() - count);
    for (pos, idx) in pool.drain(..).enumerate() {
        if picks.contains(&pos) {
            taken.push(idx);
        } else {
            kept.push(idx);
        }
    }
    *pool = kept;
    taken
}

fn gather(data: &[LabeledResponse], idx: &[usize]) -> Vec<LabeledResponse> {
    idx.iter().map(|&i| data[i].clone()).collect()
}

pub fn split(
    data: &[LabeledResponse],
    scheme: SplitScheme,
    seed: u64,
    stratify: bool,
) -> Result<DataSplit> {
    let n = data.len();
    let (needed, op) = match scheme {
        SplitScheme::Shallow => (5, "split_shallow"),
        SplitScheme::Deep => (10, "split_deep"),
    };
    if n < needed {
        return Err(Error::Size { op, needed, got: n });
    }
    let mut pool: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut pool);

    let (val_n, test_n) = match scheme {
        SplitScheme::Shallow => (0, n / 5),
        SplitScheme::Deep => (n * 15 / 100, n * 15 / 100),
    };
    let test = draw(&mut pool, test_n, data, stratify);
    let validation = draw(&mut pool, val_n, data, stratify);
    let mut train = pool;
    if stratify {
        // Keep the training order a function of the shuffle, not the label.
        Rng::new(seed ^ 0x5EED).shuffle(&mut train);
    }
    Ok(DataSplit {
        scheme,
        seed,
        stratified: stratify,
        train: gather(data, &train),
        validation: gather(data, &validation),
        test: gather(data, &test),
    })
}

pub fn split_shallow(data: &[LabeledResponse], seed: u64) -> Result<DataSplit> {
    split(data, SplitScheme::Shallow, seed, false)
}

pub fn split_deep(data: &[LabeledResponse], seed: u64) -> Result<DataSplit> {
    split(data, SplitScheme::Deep, seed, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: Vec<LabeledResponse>,
    pub test: Vec<LabeledResponse>,
}

/// Shuffles once, then deals items round-robin into `k` test folds.
pub fn kfold(data: &[LabeledResponse], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Contract(format!("kfold needs k >= 2, got {k}")));
    }
    if data.len() < k {
        return Err(Error::Size {
            op: "kfold",
            needed: k,
            got: data.len(),
        });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    let folds = (0..k)
        .map(|f| {
            let mut fold = Fold {
                train: Vec::new(),
                test: Vec::new(),
            };
            for (pos, &i) in order.iter().enumerate() {
                if pos % k == f {
                    fold.test.push(data[i].clone());
                } else {
                    fold.train.push(data[i].clone());
                }
            }
            fold
        })
        .collect();
    Ok(folds)
}

fn default_marker_phrases() -> Vec<Vec<String>> {
    let aspects: [&[&str]; NUM_ASPECTS] = [
        &["gas a and d are same", "same substance"],
        &["both are flammable", "both burn"],
        &["densities are equal", "equal densities"],
        &["flammability identifies", "flammability matters"],
        &["density is key", "density is a property"],
    ];
    aspects
        .iter()
        .map(|phrases| phrases.iter().map(|p| p.to_string()).collect())
        .collect()
}

fn default_noise_vocab() -> Vec<String> {
    [
        "i", "think", "because", "the", "balloon", "table", "shows", "it", "so", "we", "see",
        "gases", "float", "air", "look", "at", "results", "maybe", "also", "then", "data",
        "column", "filled",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn default_label_prior() -> Vec<f64> {
    vec![0.5; NUM_ASPECTS]
}

fn default_cap_bytes() -> usize {
    crate::text::DEFAULT_CAP_BYTES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_marker_phrases")]
    pub aspect_marker_phrases: Vec<Vec<String>>,
    #[serde(default = "default_noise_vocab")]
    pub noise_vocab: Vec<String>,
    #[serde(default = "default_label_prior")]
    pub label_prior: Vec<f64>,
    /// Edge noise is trimmed until the text fits in this many bytes.
    #[serde(default = "default_cap_bytes")]
    pub cap_bytes: usize,
}

impl SyntheticSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        SyntheticSpec {
            n,
            seed,
            aspect_marker_phrases: default_marker_phrases(),
            noise_vocab: default_noise_vocab(),
            label_prior: default_label_prior(),
            cap_bytes: default_cap_bytes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |field: &str, msg: String| Err(Error::Validation(format!("{field}: {msg}")));
        if self.aspect_marker_phrases.len() != NUM_ASPECTS {
            return invalid(
                "aspect_marker_phrases",
                format!("expected {NUM_ASPECTS} aspects, got {}", self.aspect_marker_phrases.len()),
            );
        }
        let mut phrase_tokens: Vec<Vec<Vec<String>>> = Vec::new();
        for (a, phrases) in self.aspect_marker_phrases.iter().enumerate() {
            if phrases.len() < 2 {
                return invalid(
                    "aspect_marker_phrases",
                    format!("aspect {} needs at least 2 phrases", a + 1),
                );
            }
            let toks: Vec<Vec<String>> = phrases.iter().map(|p| tokenize(p)).collect();
            if let Some(p) = phrases.iter().zip(&toks).find(|(_, t)| t.is_empty()) {
                return invalid("aspect_marker_phrases", format!("phrase {:?} has no tokens", p.0));
            }
            phrase_tokens.push(toks);
        }
        // A phrase of one aspect must not occur inside a phrase of another,
        // or the marker-presence rule could not tell them apart.
        for (a, ta) in phrase_tokens.iter().enumerate() {
            for (b, tb) in phrase_tokens.iter().enumerate() {
                if a == b {
                    continue;
                }
                for pa in ta {
                    if tb.iter().any(|pb| contains_run(pb, pa)) {
                        return invalid(
                            "aspect_marker_phrases",
                            format!("a phrase of aspect {} occurs inside aspect {}", a + 1, b + 1),
                        );
                    }
                }
            }
        }
        if self.noise_vocab.is_empty() {
            return invalid("noise_vocab", "must be non-empty".into());
        }
        let marker_vocab: HashSet<&String> = phrase_tokens.iter().flatten().flatten().collect();
        for w in &self.noise_vocab {
            let toks = tokenize(w);
            if toks.len() != 1 || toks[0] != *w {
                return invalid("noise_vocab", format!("{w:?} is not a single lowercase token"));
            }
            if marker_vocab.contains(w) {
                return invalid("noise_vocab", format!("{w:?} also appears in a marker phrase"));
            }
        }
        if self.label_prior.len() != NUM_ASPECTS {
            return invalid(
                "label_prior",
                format!("expected {NUM_ASPECTS} entries, got {}", self.label_prior.len()),
            );
        }
        if let Some(p) = self.label_prior.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return invalid("label_prior", format!("entries must lie in (0,1), got {p}"));
        }
        if self.cap_bytes == 0 {
            return invalid("cap_bytes", "must be positive".into());
        }
        Ok(())
    }
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Labels recovered from marker-phrase presence, the rule the generator
/// writes by.
pub fn marker_labels(text: &str, spec: &SyntheticSpec) -> AspectLabels {
    let tokens = tokenize(text);
    let mut labels = [0u8; NUM_ASPECTS];
    for (slot, phrases) in labels.iter_mut().zip(&spec.aspect_marker_phrases) {
        *slot = phrases
            .iter()
            .any(|p| contains_run(&tokens, &tokenize(p))) as u8;
    }
    labels
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<LabeledResponse>> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let noise = |rng: &mut Rng| spec.noise_vocab[rng.below(spec.noise_vocab.len())].clone();
    let mut out = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut labels = [0u8; NUM_ASPECTS];
        for (slot, &p) in labels.iter_mut().zip(&spec.label_prior) {
            *slot = rng.bernoulli(p) as u8;
        }
        let mut markers: Vec<&String> = Vec::new();
        for (a, &y) in labels.iter().enumerate() {
            if y == 1 {
                let phrases = &spec.aspect_marker_phrases[a];
                markers.push(&phrases[rng.below(phrases.len())]);
            }
        }
        rng.shuffle(&mut markers);

        let text = if markers.is_empty() {
            let len = 2 + rng.below(5);
            (0..len).map(|_| noise(&mut rng)).collect::<Vec<_>>().join(" ")
        } else {
            let lead: Vec<String> = (0..rng.below(3)).map(|_| noise(&mut rng)).collect();
            let trail: Vec<String> = (0..rng.below(3)).map(|_| noise(&mut rng)).collect();
            let mut body: Vec<String> = Vec::new();
            for (j, m) in markers.iter().enumerate() {
                if j > 0 {
                    body.push(noise(&mut rng));
                }
                body.push((*m).clone());
            }
            fit_with_edges(lead, body, trail, spec.cap_bytes)
        };
        out.push(LabeledResponse {
            id: format!("synth-{}-{i:05}", spec.seed),
            text,
            labels,
        });
    }
    Ok(out)
}

/// Joins lead + body + trail, dropping edge noise while the result exceeds
/// `cap`. The body (markers and their separators) is never cut.
fn fit_with_edges(mut lead: Vec<String>, body: Vec<String>, mut trail: Vec<String>, cap: usize) -> String {
    loop {
        let joined: Vec<&str> = lead
            .iter()
            .chain(&body)
            .chain(&trail)
            .map(String::as_str)
            .collect();
        let text = joined.join(" ");
        if text.len() <= cap || (lead.is_empty() && trail.is_empty()) {
            return text;
        }
        if trail.len() >= lead.len() {
            trail.pop();
        } else {
            lead.remove(0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::cap_text;

    fn items(n: usize) -> Vec<LabeledResponse> {
        (0..n)
            .map(|i| LabeledResponse::new(format!("r{i}"), format!("text {i}"), [(i % 2) as u8, 0, 1, 0, 1]))
            .collect()
    }

    fn ids(v: &[LabeledResponse]) -> Vec<String> {
        let mut ids: Vec<String> = v.iter().map(|r| r.id.clone()).collect();
        ids.sort();
        ids
    }

    fn assert_partition(data: &[LabeledResponse], s: &DataSplit) {
        let mut all = s.train.clone();
        all.extend(s.validation.iter().cloned());
        all.extend(s.test.iter().cloned());
        assert_eq!(ids(&all), ids(data));
    }

    #[test]
    fn parse_valid_and_empty() {
        let content = r#"{"id":"a","text":"gas a","labels":[1,0,0,0,0]}
{"id":"b","text":"gas b","labels":[0,1,0,0,0]}
{"id":"c","text":"gas c","labels":[0,0,1,1,1]}
"#;
        let data = parse_dataset(content).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data[2].labels, [0, 0, 1, 1, 1]);
        assert!(parse_dataset("").unwrap().is_empty());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let short = "{\"id\":\"a\",\"text\":\"x\",\"labels\":[1,0,0,0,0]}\n{\"id\":\"b\",\"text\":\"y\",\"labels\":[1,0,1]}";
        let err = parse_dataset(short).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("line 2"), "{err}");

        let err = parse_dataset("{\"id\":\"a\",\"text\":\"x\",\"labels\":[1,0,2,0,0]}").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));

        let err = parse_dataset("not json").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));

        let dup = "{\"id\":\"a\",\"text\":\"x\",\"labels\":[1,0,0,0,0]}\n{\"id\":\"a\",\"text\":\"y\",\"labels\":[1,0,0,0,0]}";
        assert!(parse_dataset(dup).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn jsonl_roundtrip_and_fingerprint() {
        let data = items(4);
        assert_eq!(parse_dataset(&to_jsonl(&data)).unwrap(), data);
        assert_eq!(fingerprint(&data), fingerprint(&data.clone()));
        assert_ne!(fingerprint(&data), fingerprint(&data[..3]));
        assert_eq!(fingerprint(&data).len(), 64);
    }

    #[test]
    fn shallow_split_sizes() {
        let data = items(100);
        let s = split_shallow(&data, 1).unwrap();
        assert_eq!(s.sizes(), (80, 0, 20));
        assert_partition(&data, &s);
        assert_eq!(split_shallow(&items(5), 1).unwrap().sizes(), (4, 0, 1));
        assert_eq!(s, split_shallow(&data, 1).unwrap());
        assert!(matches!(split_shallow(&items(4), 1), Err(Error::Size { .. })));
    }

    #[test]
    fn deep_split_sizes() {
        let data = items(100);
        let s = split_deep(&data, 3).unwrap();
        assert_eq!(s.sizes(), (70, 15, 15));
        assert_partition(&data, &s);
        assert_eq!(split_deep(&items(20), 3).unwrap().sizes(), (14, 3, 3));
        assert_eq!(s, split_deep(&data, 3).unwrap());
        assert!(matches!(split_deep(&items(9), 3), Err(Error::Size { .. })));
        assert!(s.describe().contains("residual to train"));
    }

    #[test]
    fn stratified_split_keeps_sizes_and_balance() {
        let data = items(100);
        let s = split(&data, SplitScheme::Shallow, 4, true).unwrap();
        assert_eq!(s.sizes(), (80, 0, 20));
        assert_partition(&data, &s);
        let pos = s.test.iter().filter(|r| r.labels[0] == 1).count();
        assert_eq!(pos, 10);
        let d = split(&data, SplitScheme::Deep, 4, true).unwrap();
        assert_eq!(d.sizes(), (70, 15, 15));
        assert_partition(&data, &d);
    }

    #[test]
    fn kfold_partitions() {
        let data = items(10);
        let folds = kfold(&data, 10, 0).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 1 && f.train.len() == 9));

        let data = items(103);
        let folds = kfold(&data, 10, 7).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 10 || f.test.len() == 11));
        let all_test: Vec<LabeledResponse> = folds.iter().flat_map(|f| f.test.clone()).collect();
        assert_eq!(ids(&all_test), ids(&data));
        for f in &folds {
            let mut union = f.train.clone();
            union.extend(f.test.iter().cloned());
            assert_eq!(ids(&union), ids(&data));
        }
        assert_eq!(folds, kfold(&data, 10, 7).unwrap());
        assert!(matches!(kfold(&items(3), 4, 0), Err(Error::Size { .. })));
        assert!(kfold(&items(3), 1, 0).is_err());
    }

    #[test]
    fn synthetic_basic_properties() {
        assert!(generate_synthetic(&SyntheticSpec::new(0, 1)).unwrap().is_empty());

        let spec = SyntheticSpec::new(1000, 11);
        let data = generate_synthetic(&spec).unwrap();
        assert_eq!(data.len(), 1000);
        for r in &data {
            assert!(!r.text.is_empty());
            assert_eq!(marker_labels(&r.text, &spec), r.labels, "{}", r.text);
            if r.labels[2] == 1 {
                assert!(spec.aspect_marker_phrases[2].iter().any(|p| r.text.contains(p.as_str())));
            }
        }
        // Binomial(1000, 0.5): sd ≈ 15.8, so ±50 is > 3 sd.
        for a in 0..NUM_ASPECTS {
            let rate = data.iter().filter(|r| r.labels[a] == 1).count() as f64 / 1000.0;
            assert!((0.45..=0.55).contains(&rate), "aspect {a}: {rate}");
        }
        let surviving = data
            .iter()
            .filter(|r| r.labels.iter().all(|&y| y == 0) || marker_labels(cap_text(&r.text, 150), &spec).iter().any(|&y| y == 1))
            .count();
        assert!(surviving as f64 >= 0.95 * 1000.0);
        assert_eq!(data, generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn synthetic_spec_validation_names_field() {
        let mut spec = SyntheticSpec::new(5, 1);
        spec.label_prior[2] = 1.0;
        assert!(spec.validate().unwrap_err().to_string().contains("label_prior"));

        let mut spec = SyntheticSpec::new(5, 1);
        spec.aspect_marker_phrases[0].truncate(1);
        assert!(spec.validate().unwrap_err().to_string().contains("aspect_marker_phrases"));

        let mut spec = SyntheticSpec::new(5, 1);
        spec.noise_vocab.push("same".into());
        assert!(spec.validate().unwrap_err().to_string().contains("noise_vocab"));

        let mut spec = SyntheticSpec::new(5, 1);
        spec.aspect_marker_phrases[4].push("both burn".into());
        assert!(spec.validate().is_err());
    }

    #[test]
    fn synthetic_spec_file_defaults() {
        let spec: SyntheticSpec = serde_json::from_str(r#"{"n": 3, "seed": 9}"#).unwrap();
        assert_eq!(spec, SyntheticSpec::new(3, 9));
    }
}
