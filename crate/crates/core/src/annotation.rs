//! Phoneme interval annotations: TextGrid (long format) and CSV interchange,
//! phoneme class mapping, and consistency checks against the audio.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("row {row}: {message}")]
    Validation { row: usize, message: String },
    #[error("{0}")]
    Contract(String),
    #[error("class map: {0}")]
    ClassMap(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub label: String,
    pub t_start_s: f64,
    pub t_end_s: f64,
}

impl Interval {
    pub fn new(label: impl Into<String>, t_start_s: f64, t_end_s: f64) -> Self {
        Self {
            label: label.into(),
            t_start_s,
            t_end_s,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.t_end_s - self.t_start_s
    }

    fn check(&self) -> Result<(), String> {
        if !self.t_start_s.is_finite() || !self.t_end_s.is_finite() {
            return Err("non-finite time".into());
        }
        if self.t_start_s < 0.0 {
            return Err(format!("negative start time {}", self.t_start_s));
        }
        if self.t_start_s >= self.t_end_s {
            return Err(format!(
                "start {} is not before end {}",
                self.t_start_s, self.t_end_s
            ));
        }
        Ok(())
    }
}

/// Ordered, non-overlapping labelled intervals for one recording.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationTier {
    intervals: Vec<Interval>,
}

impl AnnotationTier {
    /// Validates ordering and non-overlap. On failure, `Validation::row` is the
    /// zero-based index of the offending interval.
    pub fn new(intervals: Vec<Interval>) -> Result<Self, AnnotationError> {
        for (i, iv) in intervals.iter().enumerate() {
            iv.check()
                .map_err(|message| AnnotationError::Validation { row: i, message })?;
            if i > 0 && intervals[i - 1].t_end_s > iv.t_start_s {
                return Err(AnnotationError::Validation {
                    row: i,
                    message: format!(
                        "interval starting at {} overlaps previous interval ending at {}",
                        iv.t_start_s,
                        intervals[i - 1].t_end_s
                    ),
                });
            }
        }
        Ok(Self { intervals })
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn end_s(&self) -> f64 {
        self.intervals.last().map_or(0.0, |iv| iv.t_end_s)
    }
}

// ---------------------------------------------------------------------------
// TextGrid

struct Lines<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Self { lines, pos: 0 }
    }

    fn line_no(&self) -> usize {
        self.lines
            .get(self.pos)
            .or_else(|| self.lines.last())
            .map_or(1, |(n, _)| *n)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, AnnotationError> {
        Err(AnnotationError::Parse {
            line: self.line_no(),
            message: message.into(),
        })
    }

    fn next(&mut self) -> Result<(usize, &'a str), AnnotationError> {
        match self.lines.get(self.pos) {
            Some(&l) => {
                self.pos += 1;
                Ok(l)
            }
            None => self.err("unexpected end of file"),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).map(|(_, l)| *l)
    }

    /// Expects a `key = value` line and returns the raw value.
    fn expect_kv(&mut self, key: &str) -> Result<(usize, &'a str), AnnotationError> {
        let (line, text) = self.next()?;
        let parsed = text
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .filter(|(k, _)| *k == key);
        match parsed {
            Some((_, v)) => Ok((line, v)),
            None => Err(AnnotationError::Parse {
                line,
                message: format!("expected '{key} = ...', found '{text}'"),
            }),
        }
    }

    fn expect_number(&mut self, key: &str) -> Result<f64, AnnotationError> {
        let (line, v) = self.expect_kv(key)?;
        parse_number(v).ok_or_else(|| AnnotationError::Parse {
            line,
            message: format!("'{key}' is not a number: '{v}'"),
        })
    }

    fn expect_count(&mut self, key: &str) -> Result<usize, AnnotationError> {
        let (line, v) = self.expect_kv(key)?;
        v.parse().map_err(|_| AnnotationError::Parse {
            line,
            message: format!("'{key}' is not a count: '{v}'"),
        })
    }

    fn expect_string(&mut self, key: &str) -> Result<String, AnnotationError> {
        let (line, v) = self.expect_kv(key)?;
        parse_quoted(v).ok_or_else(|| AnnotationError::Parse {
            line,
            message: format!("'{key}' is not a quoted string: '{v}'"),
        })
    }

    fn expect_header(&mut self, prefix: &str) -> Result<(), AnnotationError> {
        let (line, text) = self.next()?;
        if text.starts_with(prefix) && text.ends_with(':') {
            Ok(())
        } else {
            Err(AnnotationError::Parse {
                line,
                message: format!("expected '{prefix} ...:', found '{text}'"),
            })
        }
    }
}

fn parse_number(v: &str) -> Option<f64> {
    v.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_quoted(v: &str) -> Option<String> {
    let inner = v.strip_prefix('"')?.strip_suffix('"')?;
    // a lone quote inside is malformed; doubled quotes are escapes
    let unescaped = inner.replace("\"\"", "\u{0}");
    if unescaped.contains('"') {
        return None;
    }
    Some(unescaped.replace('\u{0}', "\""))
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Parses a long-format TextGrid. Interval tiers are returned in file order;
/// point tiers are skipped.
pub fn parse_textgrid(text: &str) -> Result<Vec<(String, AnnotationTier)>, AnnotationError> {
    let mut lines = Lines::new(text);
    let file_type = lines.expect_string("File type")?;
    if file_type != "ooTextFile" {
        return lines.err(format!("unsupported file type '{file_type}'"));
    }
    let class = lines.expect_string("Object class")?;
    if class != "TextGrid" {
        return lines.err(format!("object class is '{class}', expected 'TextGrid'"));
    }
    let xmin = lines.expect_number("xmin")?;
    let xmax = lines.expect_number("xmax")?;
    if xmin >= xmax {
        return lines.err(format!("xmin {xmin} is not below xmax {xmax}"));
    }
    if lines.peek().is_none() {
        return Ok(Vec::new());
    }
    let (line, text) = lines.next()?;
    let Some(tiers_flag) = text.strip_prefix("tiers?").map(str::trim) else {
        return Err(AnnotationError::Parse {
            line,
            message: format!("expected 'tiers? <exists>', found '{text}'"),
        });
    };
    if tiers_flag != "<exists>" {
        if tiers_flag == "<absent>" {
            return Ok(Vec::new());
        }
        return Err(AnnotationError::Parse {
            line,
            message: format!("unexpected tiers? value '{tiers_flag}'"),
        });
    }
    let n_tiers = lines.expect_count("size")?;
    if n_tiers > 0 {
        lines.expect_header("item []")?;
    } else if lines.peek() == Some("item []:") {
        lines.next()?;
    }
    let mut out = Vec::new();
    for t in 0..n_tiers {
        lines.expect_header(&format!("item [{}]", t + 1))?;
        let class = lines.expect_string("class")?;
        let name = lines.expect_string("name")?;
        let txmin = lines.expect_number("xmin")?;
        let txmax = lines.expect_number("xmax")?;
        if txmin >= txmax {
            return lines.err(format!("tier '{name}': xmin {txmin} is not below xmax {txmax}"));
        }
        match class.as_str() {
            "IntervalTier" => {
                let n = lines.expect_count("intervals: size")?;
                let mut intervals = Vec::with_capacity(n);
                for i in 0..n {
                    lines.expect_header(&format!("intervals [{}]", i + 1))?;
                    let start_line = lines.line_no();
                    let a = lines.expect_number("xmin")?;
                    let b = lines.expect_number("xmax")?;
                    let label = lines.expect_string("text")?;
                    let iv = Interval::new(label, a, b);
                    if let Err(message) = iv.check() {
                        return Err(AnnotationError::Parse {
                            line: start_line,
                            message: format!("tier '{name}' interval {}: {message}", i + 1),
                        });
                    }
                    if let Some(prev) = intervals.last() {
                        let prev: &Interval = prev;
                        if prev.t_end_s > a {
                            return Err(AnnotationError::Parse {
                                line: start_line,
                                message: format!(
                                    "tier '{name}' interval {}: boundary {a} precedes previous end {}",
                                    i + 1,
                                    prev.t_end_s
                                ),
                            });
                        }
                    }
                    intervals.push(iv);
                }
                let tier = AnnotationTier::new(intervals).map_err(|e| AnnotationError::Parse {
                    line: lines.line_no(),
                    message: e.to_string(),
                })?;
                out.push((name, tier));
            }
            "TextTier" => {
                let n = lines.expect_count("points: size")?;
                for i in 0..n {
                    lines.expect_header(&format!("points [{}]", i + 1))?;
                    let (line, text) = lines.next()?;
                    if !(text.starts_with("number") || text.starts_with("time")) {
                        return Err(AnnotationError::Parse {
                            line,
                            message: format!("expected point time, found '{text}'"),
                        });
                    }
                    lines.expect_kv("mark")?;
                }
            }
            other => return lines.err(format!("unknown tier class '{other}'")),
        }
    }
    if let Some(extra) = lines.peek() {
        return lines.err(format!("trailing content '{extra}'"));
    }
    Ok(out)
}

/// Serializes interval tiers as a long-format TextGrid.
pub fn emit_textgrid(
    tiers: &[(String, AnnotationTier)],
    total_duration_s: f64,
) -> Result<String, AnnotationError> {
    if !(total_duration_s > 0.0 && total_duration_s.is_finite()) {
        return Err(AnnotationError::Contract(format!(
            "total duration must be positive, got {total_duration_s}"
        )));
    }
    for (name, tier) in tiers {
        if tier.end_s() > total_duration_s {
            return Err(AnnotationError::Contract(format!(
                "tier '{name}' ends at {} beyond total duration {total_duration_s}",
                tier.end_s()
            )));
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "File type = \"ooTextFile\"");
    let _ = writeln!(s, "Object class = \"TextGrid\"");
    let _ = writeln!(s);
    let _ = writeln!(s, "xmin = 0 ");
    let _ = writeln!(s, "xmax = {total_duration_s} ");
    let _ = writeln!(s, "tiers? <exists> ");
    let _ = writeln!(s, "size = {} ", tiers.len());
    let _ = writeln!(s, "item []: ");
    for (t, (name, tier)) in tiers.iter().enumerate() {
        let _ = writeln!(s, "    item [{}]:", t + 1);
        let _ = writeln!(s, "        class = \"IntervalTier\" ");
        let _ = writeln!(s, "        name = {} ", quote(name));
        let _ = writeln!(s, "        xmin = 0 ");
        let _ = writeln!(s, "        xmax = {total_duration_s} ");
        let _ = writeln!(s, "        intervals: size = {} ", tier.len());
        for (i, iv) in tier.intervals().iter().enumerate() {
            let _ = writeln!(s, "        intervals [{}]:", i + 1);
            let _ = writeln!(s, "            xmin = {} ", iv.t_start_s);
            let _ = writeln!(s, "            xmax = {} ", iv.t_end_s);
            let _ = writeln!(s, "            text = {} ", quote(&iv.label));
        }
    }
    Ok(s)
}

// ---------------------------------------------------------------------------
// CSV

pub const INTERVAL_CSV_HEADER: [&str; 3] = ["label", "t_start_s", "t_end_s"];

/// Parses `label,t_start_s,t_end_s` rows. Row numbers in errors are 1-based
/// data rows (the header is row 0).
pub fn parse_interval_csv(text: &str) -> Result<AnnotationTier, AnnotationError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| AnnotationError::Validation {
        row: 0,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != INTERVAL_CSV_HEADER {
        return Err(AnnotationError::Validation {
            row: 0,
            message: format!(
                "header must be '{}', found '{}'",
                INTERVAL_CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut intervals = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| AnnotationError::Validation {
            row,
            message: e.to_string(),
        })?;
        let num = |k: usize| {
            parse_number(rec[k].trim()).ok_or_else(|| AnnotationError::Validation {
                row,
                message: format!("{} '{}' is not a number", INTERVAL_CSV_HEADER[k], &rec[k]),
            })
        };
        intervals.push(Interval::new(&rec[0], num(1)?, num(2)?));
    }
    AnnotationTier::new(intervals).map_err(|e| match e {
        AnnotationError::Validation { row, message } => AnnotationError::Validation {
            row: row + 1,
            message,
        },
        other => other,
    })
}

pub fn emit_interval_csv(tier: &AnnotationTier) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(INTERVAL_CSV_HEADER).expect("in-memory write");
    for iv in tier.intervals() {
        w.write_record([
            iv.label.clone(),
            iv.t_start_s.to_string(),
            iv.t_end_s.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

// ---------------------------------------------------------------------------
// Phoneme classes

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhonemeClass {
    Vowel,
    UnvoicedStop,
    SibilantS,
    OtherConsonant,
    Silence,
}

/// Total map from labels to classes. Labels not listed explicitly are
/// consonants other than the unvoiced stops and /s/.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeClassMap {
    classes: HashMap<String, PhonemeClass>,
}

/// JSON layout of a user-supplied class map.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMapFile {
    pub vowels: Vec<String>,
    pub unvoiced_stops: Vec<String>,
    pub sibilant_s: Vec<String>,
    pub silence: Vec<String>,
}

pub const CZECH_VOWELS: &[&str] = &[
    "a", "e", "i", "o", "u", "a:", "e:", "i:", "o:", "u:", "ou", "au", "eu",
];
pub const CZECH_UNVOICED_STOPS: &[&str] = &["p", "t", "k", "c"];
pub const CZECH_SIBILANT_S: &[&str] = &["s"];
pub const SILENCE_LABELS: &[&str] = &["", "sil", "#", "<sil>"];
/// Remaining Czech consonants in the ASCII transcription used here.
pub const CZECH_OTHER_CONSONANTS: &[&str] = &[
    "b", "d", "J\\", "g", "f", "v", "z", "S", "Z", "x", "h\\", "j", "l", "m", "n", "J", "r",
    "P\\", "Q\\", "ts", "tS", "dz", "dZ", "N", "F", "G", "?", "@", "h",
];

impl PhonemeClassMap {
    pub fn from_lists(
        vowels: &[&str],
        unvoiced_stops: &[&str],
        sibilant_s: &[&str],
        silence: &[&str],
    ) -> Result<Self, AnnotationError> {
        let mut classes = HashMap::new();
        for (labels, class) in [
            (vowels, PhonemeClass::Vowel),
            (unvoiced_stops, PhonemeClass::UnvoicedStop),
            (sibilant_s, PhonemeClass::SibilantS),
            (silence, PhonemeClass::Silence),
        ] {
            for &label in labels {
                if let Some(prev) = classes.insert(label.to_string(), class) {
                    if prev != class {
                        return Err(AnnotationError::ClassMap(format!(
                            "label '{label}' assigned to both {prev:?} and {class:?}"
                        )));
                    }
                }
            }
        }
        Ok(Self { classes })
    }

    pub fn from_file(file: &ClassMapFile) -> Result<Self, AnnotationError> {
        fn refs(v: &[String]) -> Vec<&str> {
            v.iter().map(String::as_str).collect()
        }
        Self::from_lists(
            &refs(&file.vowels),
            &refs(&file.unvoiced_stops),
            &refs(&file.sibilant_s),
            &refs(&file.silence),
        )
    }

    pub fn from_json(text: &str) -> Result<Self, AnnotationError> {
        let file: ClassMapFile =
            serde_json::from_str(text).map_err(|e| AnnotationError::ClassMap(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn to_file(&self) -> ClassMapFile {
        let collect = |c: PhonemeClass| {
            self.classes
                .iter()
                .filter(|(_, &v)| v == c)
                .map(|(k, _)| k.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        ClassMapFile {
            vowels: collect(PhonemeClass::Vowel),
            unvoiced_stops: collect(PhonemeClass::UnvoicedStop),
            sibilant_s: collect(PhonemeClass::SibilantS),
            silence: collect(PhonemeClass::Silence),
        }
    }

    pub fn class_of(&self, label: &str) -> PhonemeClass {
        self.classes
            .get(label.trim())
            .copied()
            .unwrap_or(PhonemeClass::OtherConsonant)
    }

    pub fn is_silence(&self, label: &str) -> bool {
        self.class_of(label) == PhonemeClass::Silence
    }

    /// Labels of the given class that are explicitly listed.
    pub fn labels_of(&self, class: PhonemeClass) -> Vec<&str> {
        let mut v: Vec<&str> = self
            .classes
            .iter()
            .filter(|(_, &c)| c == class)
            .map(|(k, _)| k.as_str())
            .collect();
        v.sort_unstable();
        v
    }
}

pub fn default_czech_class_map() -> PhonemeClassMap {
    PhonemeClassMap::from_lists(
        CZECH_VOWELS,
        CZECH_UNVOICED_STOPS,
        CZECH_SIBILANT_S,
        SILENCE_LABELS,
    )
    .expect("default class lists are disjoint")
}

impl Default for PhonemeClassMap {
    fn default() -> Self {
        default_czech_class_map()
    }
}

// ---------------------------------------------------------------------------
// QC

/// Boundaries may overshoot the audio by this much before it is an error.
pub const QC_BOUNDARY_TOLERANCE_S: f64 = 0.010;
/// Minimum fraction of the audio that the annotated speech span must cover.
pub const QC_MIN_SPAN_COVERAGE: f64 = 0.60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcFinding {
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QcReport {
    pub findings: Vec<QcFinding>,
}

impl QcReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn has_warnings(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Warning)
    }
}

/// Checks an annotation against its recording. Findings, never errors.
pub fn qc_check(
    tier: &AnnotationTier,
    classmap: &PhonemeClassMap,
    audio_duration_s: f64,
) -> QcReport {
    let mut findings = Vec::new();
    let limit = audio_duration_s + QC_BOUNDARY_TOLERANCE_S;
    if let Some(iv) = tier.intervals().iter().find(|iv| iv.t_end_s > limit) {
        findings.push(QcFinding {
            severity: Severity::Error,
            message: format!(
                "boundary at {:.3} s ('{}') exceeds audio duration {:.3} s",
                iv.t_end_s, iv.label, audio_duration_s
            ),
        });
    }
    let speech: Vec<&Interval> = tier
        .intervals()
        .iter()
        .filter(|iv| !classmap.is_silence(&iv.label))
        .collect();
    match (speech.first(), speech.last()) {
        (Some(first), Some(last)) if audio_duration_s > 0.0 => {
            let coverage = (last.t_end_s - first.t_start_s) / audio_duration_s;
            if coverage < QC_MIN_SPAN_COVERAGE {
                findings.push(QcFinding {
                    severity: Severity::Warning,
                    message: format!(
                        "annotated speech spans {:.1}% of the recording ({:.3}-{:.3} s of {:.3} s); \
                         the aligner may have stopped early",
                        coverage * 100.0,
                        first.t_start_s,
                        last.t_end_s,
                        audio_duration_s
                    ),
                });
            }
        }
        _ => findings.push(QcFinding {
            severity: Severity::Warning,
            message: "annotation contains no non-silence intervals".into(),
        }),
    }
    QcReport { findings }
}
