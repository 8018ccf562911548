use std::fmt;

use serde::Serialize;

use super::{read_recording, Axis, DatasetIndex, Source, Stage, CANONICAL_LENGTH, CANONICAL_RATE_HZ, NUM_DOMAINS};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Anomaly {
    pub domain: u32,
    pub stage: Stage,
    pub condition: u32,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadFailure {
    pub entry: String,
    pub error: String,
}

/// Outcome of checking an index against the 16 x 3 grid and its nominal
/// rate and length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub source: Source,
    pub entries_checked: usize,
    pub nominal_rate_hz: f64,
    pub nominal_length: usize,
    pub missing: Vec<(u32, Stage)>,
    pub length_anomalies: Vec<Anomaly>,
    pub rate_anomalies: Vec<Anomaly>,
    pub axis_anomalies: Vec<Anomaly>,
    pub read_failures: Vec<ReadFailure>,
    /// Observations that do not affect completeness.
    pub notes: Vec<String>,
    pub is_complete: bool,
}

/// Reads every entry and reports grid holes, length, rate and axis
/// anomalies. Problems are collected, never raised.
pub fn validate_dataset(index: &DatasetIndex) -> ValidationReport {
    let mut report = ValidationReport {
        source: index.source,
        entries_checked: index.len(),
        nominal_rate_hz: index.sample_rate_hz,
        nominal_length: index.samples_per_recording,
        missing: Vec::new(),
        length_anomalies: Vec::new(),
        rate_anomalies: Vec::new(),
        axis_anomalies: Vec::new(),
        read_failures: Vec::new(),
        notes: Vec::new(),
        is_complete: false,
    };
    for d in 1..=NUM_DOMAINS {
        for s in Stage::ALL {
            if index.find(d, s).next().is_none() {
                report.missing.push((d, s));
            }
        }
    }
    if index.sample_rate_hz != CANONICAL_RATE_HZ {
        report.notes.push(format!(
            "nominal rate {} Hz differs from the reference {} Hz",
            index.sample_rate_hz, CANONICAL_RATE_HZ
        ));
    }
    if index.samples_per_recording != CANONICAL_LENGTH {
        report.notes.push(format!(
            "nominal length {} differs from the reference {}",
            index.samples_per_recording, CANONICAL_LENGTH
        ));
    }
    for e in &index.entries {
        let anomaly = |expected: String, found: String| Anomaly {
            domain: e.domain,
            stage: e.stage,
            condition: e.condition,
            expected,
            found,
        };
        let rec = match read_recording::<f64>(e) {
            Ok(r) => r,
            Err(err) => {
                report.read_failures.push(ReadFailure {
                    entry: e.describe(),
                    error: err.to_string(),
                });
                continue;
            }
        };
        if rec.len() != index.samples_per_recording {
            report
                .length_anomalies
                .push(anomaly(index.samples_per_recording.to_string(), rec.len().to_string()));
        }
        if rec.sample_rate_hz != index.sample_rate_hz {
            report
                .rate_anomalies
                .push(anomaly(index.sample_rate_hz.to_string(), rec.sample_rate_hz.to_string()));
        }
        let mut names = rec.axis_names();
        names.sort();
        if names != Axis::ALL {
            let list = |v: &[Axis]| v.iter().map(|a| a.name()).collect::<Vec<_>>().join(",");
            report.axis_anomalies.push(anomaly(list(&Axis::ALL), list(&names)));
        }
    }
    report.is_complete = report.missing.is_empty()
        && report.length_anomalies.is_empty()
        && report.rate_anomalies.is_empty()
        && report.axis_anomalies.is_empty()
        && report.read_failures.is_empty();
    report
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} entries, nominal {} Hz x {} samples: {}",
            self.entries_checked,
            self.nominal_rate_hz,
            self.nominal_length,
            if self.is_complete { "complete" } else { "INCOMPLETE" }
        )?;
        for (d, s) in &self.missing {
            writeln!(f, "  missing: domain {d} stage {s}")?;
        }
        for (kind, list) in [
            ("length", &self.length_anomalies),
            ("rate", &self.rate_anomalies),
            ("axes", &self.axis_anomalies),
        ] {
            for a in list {
                writeln!(
                    f,
                    "  {kind}: domain {} stage {} condition {}: expected {}, found {}",
                    a.domain, a.stage, a.condition, a.expected, a.found
                )?;
            }
        }
        for r in &self.read_failures {
            writeln!(f, "  unreadable: {}: {}", r.entry, r.error)?;
        }
        for n in &self.notes {
            writeln!(f, "  note: {n}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, write_dataset, load_manifest, SyntheticSpec};

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            samples_per_recording: 64,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn synthetic_grid_is_complete() {
        let index = generate_synthetic(&spec()).unwrap();
        let r = validate_dataset(&index);
        assert!(r.is_complete, "{r}");
        assert_eq!(r.notes.len(), 1);
    }

    #[test]
    fn hole_is_listed() {
        let mut index = generate_synthetic(&spec()).unwrap();
        index.entries.retain(|e| !(e.domain == 7 && e.stage == Stage::DuringSlag));
        let r = validate_dataset(&index);
        assert!(!r.is_complete);
        assert_eq!(r.missing, vec![(7, Stage::DuringSlag)]);
    }

    #[test]
    fn short_recording_on_canonical_index_is_length_anomaly() {
        let dir = tempfile::tempdir().unwrap();
        let index = generate_synthetic(&SyntheticSpec { num_domains: 1, ..SyntheticSpec::default() }).unwrap();
        let manifest = write_dataset(&index, dir.path()).unwrap();
        let first = dir.path().join("d01_E_c1.csv");
        let text = std::fs::read_to_string(&first).unwrap();
        let cut = text.trim_end().rfind('\n').unwrap();
        std::fs::write(&first, &text[..=cut]).unwrap();
        let r = validate_dataset(&load_manifest(&manifest).unwrap());
        assert!(r.notes.is_empty());
        assert_eq!(r.length_anomalies.len(), 1);
        assert_eq!(r.length_anomalies[0].found, "31999");
        assert_eq!(r.missing.len(), 15 * 3);
    }
}
