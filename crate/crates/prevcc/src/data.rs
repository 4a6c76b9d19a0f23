//! Study records and validated ingestion from delimiter-separated files.

use std::fmt;
use std::path::Path;

use crate::{Error, Result};

/// Sampling group of a study subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    /// Disease-free at sampling.
    Control,
    /// Newly diagnosed at sampling; followed prospectively from diagnosis.
    Incident,
    /// Diagnosed before sampling and still alive at sampling; the time from
    /// diagnosis to sampling is the backward time.
    Prevalent,
}

impl Group {
    pub fn parse(s: &str) -> Option<Group> {
        match s.trim().to_ascii_lowercase().as_str() {
            "control" => Some(Group::Control),
            "incident" => Some(Group::Incident),
            "prevalent" => Some(Group::Prevalent),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Group::Control => "control",
            Group::Incident => "incident",
            Group::Prevalent => "prevalent",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One study record.
///
/// Controls carry covariates only. Cases carry the observed time `y`
/// (min of survival and censoring, measured from diagnosis) and the event
/// indicator `delta`; prevalent cases additionally carry the backward time
/// `a`, with `a < y` (a prevalent case was alive at sampling).
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub group: Group,
    pub x: Vec<f64>,
    pub a: Option<f64>,
    pub y: Option<f64>,
    pub delta: Option<bool>,
}

impl Subject {
    pub fn control(x: Vec<f64>) -> Subject {
        Subject {
            group: Group::Control,
            x,
            a: None,
            y: None,
            delta: None,
        }
    }

    pub fn incident(x: Vec<f64>, y: f64, delta: bool) -> Subject {
        Subject {
            group: Group::Incident,
            x,
            a: None,
            y: Some(y),
            delta: Some(delta),
        }
    }

    pub fn prevalent(x: Vec<f64>, a: f64, y: f64, delta: bool) -> Subject {
        Subject {
            group: Group::Prevalent,
            x,
            a: Some(a),
            y: Some(y),
            delta: Some(delta),
        }
    }

    pub fn is_case(&self) -> bool {
        self.group != Group::Control
    }

    /// Backward time used in risk-set computations: 0 for incident cases.
    pub fn entry_time(&self) -> f64 {
        self.a.unwrap_or(0.0)
    }

    fn validate(&self, index: usize) -> Result<()> {
        let fail = |code: &'static str, msg: String| -> Result<()> {
            Err(Error::Invalid { code, index, msg })
        };
        if self.x.iter().any(|v| !v.is_finite()) {
            return fail("nonfinite_covariate", "covariates must be finite".into());
        }
        match self.group {
            Group::Control => {
                if self.a.is_some() || self.y.is_some() || self.delta.is_some() {
                    return fail(
                        "control_has_survival_fields",
                        "controls must not carry a, y, or delta".into(),
                    );
                }
            }
            Group::Incident => {
                if self.a.is_some() {
                    return fail(
                        "incident_has_backward_time",
                        "incident cases must not carry a backward time".into(),
                    );
                }
                let y = match self.y {
                    Some(y) => y,
                    None => return fail("missing_follow_up", "incident case lacks y".into()),
                };
                if !(y.is_finite() && y >= 0.0) {
                    return fail("invalid_follow_up", format!("y = {y} must be finite and >= 0"));
                }
                if self.delta.is_none() {
                    return fail("missing_event_indicator", "incident case lacks delta".into());
                }
            }
            Group::Prevalent => {
                let a = match self.a {
                    Some(a) => a,
                    None => {
                        return fail(
                            "missing_backward_time",
                            "prevalent case lacks backward time".into(),
                        )
                    }
                };
                if !(a.is_finite() && a >= 0.0) {
                    return fail(
                        "invalid_backward_time",
                        format!("a = {a} must be finite and >= 0"),
                    );
                }
                let y = match self.y {
                    Some(y) => y,
                    None => return fail("missing_follow_up", "prevalent case lacks y".into()),
                };
                if !(y.is_finite() && y >= 0.0) {
                    return fail("invalid_follow_up", format!("y = {y} must be finite and >= 0"));
                }
                if self.delta.is_none() {
                    return fail("missing_event_indicator", "prevalent case lacks delta".into());
                }
                // Left truncation: a prevalent case was observed alive at
                // sampling, so strictly a < y. Zero forward follow-up
                // (a == y, delta = 0) signals a data error and is rejected.
                if a >= y {
                    return fail(
                        "truncation_violated",
                        format!("backward time a = {a} must be < observed time y = {y}"),
                    );
                }
            }
        }
        Ok(())
    }
}

/// An immutable, validated collection of subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    subjects: Vec<Subject>,
    n0: usize,
    n1: usize,
    n2: usize,
    p: usize,
}

impl Cohort {
    /// Build a cohort, validating every subject invariant.
    pub fn new(subjects: Vec<Subject>) -> Result<Cohort> {
        let p = subjects.first().map(|s| s.x.len()).unwrap_or(0);
        let mut n = [0usize; 3];
        for (i, s) in subjects.iter().enumerate() {
            if s.x.len() != p {
                return Err(Error::Invalid {
                    code: "covariate_length_mismatch",
                    index: i,
                    msg: format!("expected {p} covariates, found {}", s.x.len()),
                });
            }
            s.validate(i)?;
            n[match s.group {
                Group::Control => 0,
                Group::Incident => 1,
                Group::Prevalent => 2,
            }] += 1;
        }
        Ok(Cohort {
            subjects,
            n0: n[0],
            n1: n[1],
            n2: n[2],
            p,
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Covariate dimension.
    pub fn dim(&self) -> usize {
        self.p
    }

    /// Iterator over the cases (incident and prevalent), in cohort order.
    pub fn cases(&self) -> impl Iterator<Item = &Subject> {
        self.subjects.iter().filter(|s| s.is_case())
    }

    /// Check that survival fitting is possible: at least one case and at
    /// least one observed event among the cases.
    pub fn ensure_fit_ready(&self) -> Result<()> {
        if self.n1 + self.n2 == 0 {
            return Err(Error::InvalidInput(
                "survival fitting requires at least one case".into(),
            ));
        }
        if !self.cases().any(|s| s.delta == Some(true)) {
            return Err(Error::NoEvents);
        }
        Ok(())
    }
}

/// Re-run all subject and cohort invariants.
///
/// [`Cohort::new`] already validates; this is for callers mutating copies of
/// the subject list or double-checking external data.
pub fn validate_cohort(cohort: &Cohort) -> Result<()> {
    let p = cohort.p;
    for (i, s) in cohort.subjects.iter().enumerate() {
        if s.x.len() != p {
            return Err(Error::Invalid {
                code: "covariate_length_mismatch",
                index: i,
                msg: format!("expected {p} covariates, found {}", s.x.len()),
            });
        }
        s.validate(i)?;
    }
    Ok(())
}

/// Column-name map for delimiter-separated cohort files.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub group: String,
    pub a: String,
    pub y: String,
    pub delta: String,
    /// Covariate column names. Empty means: every column not named above,
    /// in file order.
    pub covariates: Vec<String>,
    pub delimiter: u8,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            group: "group".into(),
            a: "a".into(),
            y: "y".into(),
            delta: "delta".into(),
            covariates: Vec::new(),
            delimiter: b',',
        }
    }
}

fn parse_opt_f64(field: &str, row: usize, col: &str) -> Result<Option<f64>> {
    let t = field.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        row,
        msg: format!("non-numeric value {t:?} in column {col:?}"),
    })
}

/// Load a cohort from a delimiter-separated file with a header row.
///
/// Missing optional cells (a, y, delta for controls; a for incident cases)
/// are encoded as empty fields. Row order is preserved.
pub fn load_cohort(path: &Path, schema: &CsvSchema) -> Result<Cohort> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            msg: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let find = |name: &str| headers.iter().position(|h| h == name);
    let group_idx = find(&schema.group).ok_or_else(|| Error::Parse {
        row: 0,
        msg: format!("missing column {:?}", schema.group),
    })?;
    let a_idx = find(&schema.a);
    let y_idx = find(&schema.y);
    let delta_idx = find(&schema.delta);

    let cov_idx: Vec<usize> = if schema.covariates.is_empty() {
        let named = [Some(group_idx), a_idx, y_idx, delta_idx];
        (0..headers.len())
            .filter(|i| !named.contains(&Some(*i)))
            .collect()
    } else {
        schema
            .covariates
            .iter()
            .map(|c| {
                find(c).ok_or_else(|| Error::Parse {
                    row: 0,
                    msg: format!("missing covariate column {c:?}"),
                })
            })
            .collect::<Result<_>>()?
    };

    let mut subjects = Vec::new();
    for (rec_no, record) in reader.records().enumerate() {
        let row = rec_no + 1; // header is row 0
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        let group_field = record.get(group_idx).unwrap_or("");
        let group = Group::parse(group_field).ok_or_else(|| Error::Parse {
            row,
            msg: format!("unknown group label {group_field:?}"),
        })?;
        let get = |idx: Option<usize>, col: &str| -> Result<Option<f64>> {
            match idx {
                Some(i) => parse_opt_f64(record.get(i).unwrap_or(""), row, col),
                None => Ok(None),
            }
        };
        let a = get(a_idx, &schema.a)?;
        let y = get(y_idx, &schema.y)?;
        let delta = match get(delta_idx, &schema.delta)? {
            None => None,
            Some(v) if v == 0.0 => Some(false),
            Some(v) if v == 1.0 => Some(true),
            Some(v) => {
                return Err(Error::Parse {
                    row,
                    msg: format!("delta must be 0 or 1, found {v}"),
                })
            }
        };
        let x = cov_idx
            .iter()
            .map(|&i| {
                let field = record.get(i).unwrap_or("");
                field.trim().parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    msg: format!("non-numeric covariate {field:?} in column {:?}", headers[i]),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        subjects.push(Subject {
            group,
            x,
            a,
            y,
            delta,
        });
    }

    // Surface the offending data row (1-based, excluding the header) in
    // invariant failures instead of the in-memory index.
    Cohort::new(subjects).map_err(|e| match e {
        Error::Invalid { code, index, msg } => Error::Invalid {
            code,
            index: index + 1,
            msg,
        },
        other => other,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    // Shortest round-trip decimal form: reloading reproduces the exact f64.
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Write a cohort in the format read by [`load_cohort`] (default schema).
pub fn save_cohort(cohort: &Cohort, path: &Path, delimiter: u8) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)?;
    let mut header = vec![
        "group".to_string(),
        "a".to_string(),
        "y".to_string(),
        "delta".to_string(),
    ];
    for j in 0..cohort.dim() {
        header.push(format!("x{}", j + 1));
    }
    writer.write_record(&header)?;
    for s in cohort.subjects() {
        let mut rec = vec![
            s.group.as_str().to_string(),
            fmt_opt(s.a),
            fmt_opt(s.y),
            s.delta.map(|d| if d { "1" } else { "0" }.to_string()).unwrap_or_default(),
        ];
        for v in &s.x {
            rec.push(format!("{v}"));
        }
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(contents: &str) -> tempdir::TempCsv {
        tempdir::TempCsv::new(contents)
    }

    // minimal self-contained temp-file helper
    mod tempdir {
        use std::path::PathBuf;

        pub struct TempCsv {
            pub path: PathBuf,
        }

        impl TempCsv {
            pub fn new(contents: &str) -> Self {
                let mut path = std::env::temp_dir();
                let unique = format!(
                    "prevcc-test-{}-{:x}.csv",
                    std::process::id(),
                    std::time::SystemTime::now()
                        .duration_since(std::time::UNIX_EPOCH)
                        .unwrap()
                        .as_nanos()
                );
                path.push(unique);
                std::fs::write(&path, contents).unwrap();
                TempCsv { path }
            }
        }

        impl Drop for TempCsv {
            fn drop(&mut self) {
                let _ = std::fs::remove_file(&self.path);
            }
        }
    }

    #[test]
    fn loads_single_control_row() {
        let f = write_temp("group,a,y,delta,x1,x2\ncontrol,,,,0.3,-1.2\n");
        let c = load_cohort(&f.path, &CsvSchema::default()).unwrap();
        assert_eq!((c.n0(), c.n1(), c.n2(), c.dim()), (1, 0, 0, 2));
        assert_eq!(c.subjects()[0].x, vec![0.3, -1.2]);
    }

    #[test]
    fn rejects_truncation_violation_with_row_number() {
        let f = write_temp(
            "group,a,y,delta,x1\ncontrol,,,,0.0\nprevalent,2.0,1.5,1,0.1\n",
        );
        let err = load_cohort(&f.path, &CsvSchema::default()).unwrap_err();
        match err {
            Error::Invalid { code, index, .. } => {
                assert_eq!(code, "truncation_violated");
                assert_eq!(index, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_group_and_bad_numbers() {
        let f = write_temp("group,a,y,delta,x1\npatient,,,,0.0\n");
        assert_eq!(
            load_cohort(&f.path, &CsvSchema::default()).unwrap_err().code(),
            "parse"
        );
        let f = write_temp("group,a,y,delta,x1\nincident,,abc,1,0.0\n");
        assert_eq!(
            load_cohort(&f.path, &CsvSchema::default()).unwrap_err().code(),
            "parse"
        );
    }

    #[test]
    fn validate_flags_incident_backward_time() {
        let s = Subject {
            group: Group::Incident,
            x: vec![0.0],
            a: Some(1.0),
            y: Some(2.0),
            delta: Some(true),
        };
        let err = Cohort::new(vec![s]).unwrap_err();
        assert_eq!(err.code(), "incident_has_backward_time");
    }

    #[test]
    fn validate_rejects_zero_forward_follow_up() {
        let s = Subject::prevalent(vec![0.0], 1.5, 1.5, false);
        assert_eq!(Cohort::new(vec![s]).unwrap_err().code(), "truncation_violated");
    }

    #[test]
    fn fit_ready_requires_events() {
        let c = Cohort::new(vec![
            Subject::control(vec![0.0]),
            Subject::incident(vec![1.0], 2.0, false),
        ])
        .unwrap();
        assert_eq!(c.ensure_fit_ready().unwrap_err().code(), "no_events");
        let ok = Cohort::new(vec![
            Subject::control(vec![0.0]),
            Subject::incident(vec![1.0], 2.0, true),
            Subject::prevalent(vec![0.5], 0.5, 2.5, false),
        ])
        .unwrap();
        ok.ensure_fit_ready().unwrap();
        validate_cohort(&ok).unwrap();
    }

    #[test]
    fn save_load_round_trip_exact() {
        let mut subjects = Vec::new();
        // deterministic pseudo-random values with awkward decimal expansions
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        for i in 0..30 {
            let x = vec![next(), next() / 3.0];
            subjects.push(match i % 3 {
                0 => Subject::control(x),
                1 => Subject::incident(x, next().abs() + 0.1, i % 2 == 1),
                _ => {
                    let a = next().abs();
                    Subject::prevalent(x, a, a + next().abs() + 1e-3, i % 4 == 2)
                }
            });
        }
        let cohort = Cohort::new(subjects).unwrap();
        let mut path = std::env::temp_dir();
        path.push(format!("prevcc-roundtrip-{}.csv", std::process::id()));
        save_cohort(&cohort, &path, b',').unwrap();
        let reloaded = load_cohort(&path, &CsvSchema::default()).unwrap();
        std::fs::remove_file(&path).unwrap();
        assert_eq!(cohort, reloaded);
    }

    #[test]
    fn custom_delimiter_and_named_covariates() {
        let f = write_temp("group;y;delta;snp1;age\nincident;1.5;1;1;0.3\n");
        let schema = CsvSchema {
            covariates: vec!["snp1".into(), "age".into()],
            delimiter: b';',
            ..CsvSchema::default()
        };
        let c = load_cohort(&f.path, &schema).unwrap();
        assert_eq!(c.subjects()[0].x, vec![1.0, 0.3]);
    }
}
