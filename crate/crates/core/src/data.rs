//! Two-arm trial records with possibly missing surrogate values.
//!
//! A [`TrialData`] is immutable once built: every constructor checks that both
//! arms are non-empty, so downstream estimators can rely on `n0 >= 1` and
//! `n1 >= 1`. Record order is preserved from the input because bootstrap
//! substreams index into it.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PteError, Result};

/// Randomized treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn indicator(self) -> f64 {
        self.index() as f64
    }

    pub fn from_indicator(z: u8) -> Option<Arm> {
        match z {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// One patient: outcome `y`, surrogate `s` (absent when missing) and arm `z`.
///
/// The observation flag `o` is derived from `s`, so `o = 1 <=> s present`
/// holds by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatientRecord {
    pub y: f64,
    pub s: Option<f64>,
    pub z: Arm,
}

impl PatientRecord {
    pub fn new(y: f64, s: Option<f64>, z: Arm) -> Self {
        PatientRecord { y, s, z }
    }

    pub fn observed(&self) -> bool {
        self.s.is_some()
    }

    /// Observation indicator `O` as 0/1.
    pub fn o(&self) -> u8 {
        u8::from(self.observed())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    records: Vec<PatientRecord>,
    n0: usize,
    n1: usize,
}

impl TrialData {
    /// Builds a trial, rejecting an empty arm or non-finite values.
    pub fn new(records: Vec<PatientRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if !r.y.is_finite() {
                return Err(PteError::Validation(format!("record {i}: y is not finite")));
            }
            if let Some(s) = r.s {
                if !s.is_finite() {
                    return Err(PteError::Validation(format!("record {i}: s is not finite")));
                }
            }
        }
        let n1 = records.iter().filter(|r| r.z == Arm::Treated).count();
        let n0 = records.len() - n1;
        if n0 == 0 {
            return Err(PteError::EmptyArm(0));
        }
        if n1 == 0 {
            return Err(PteError::EmptyArm(1));
        }
        Ok(TrialData { records, n0, n1 })
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n_arm(&self, arm: Arm) -> usize {
        match arm {
            Arm::Control => self.n0,
            Arm::Treated => self.n1,
        }
    }

    /// Records of one arm in input order.
    pub fn arm_view(&self, arm: Arm) -> impl Iterator<Item = &PatientRecord> + '_ {
        self.records.iter().filter(move |r| r.z == arm)
    }

    pub fn n_observed(&self, arm: Arm) -> usize {
        self.arm_view(arm).filter(|r| r.observed()).count()
    }

    pub fn missing_fraction(&self, arm: Arm) -> f64 {
        1.0 - self.n_observed(arm) as f64 / self.n_arm(arm) as f64
    }

    pub fn has_missing(&self) -> bool {
        self.records.iter().any(|r| !r.observed())
    }

    /// Observed `(s, y)` pairs of one arm, in input order.
    pub fn observed_pairs(&self, arm: Arm) -> Vec<(f64, f64)> {
        self.arm_view(arm)
            .filter_map(|r| r.s.map(|s| (s, r.y)))
            .collect()
    }

    /// Only the records whose surrogate is present.
    pub fn complete_cases(&self) -> Result<TrialData> {
        let records: Vec<PatientRecord> =
            self.records.iter().filter(|r| r.observed()).copied().collect();
        TrialData::new(records).map_err(|e| match e {
            PteError::EmptyArm(z) => PteError::EmptyArmAfterFilter(z),
            other => other,
        })
    }

    /// Builds a new trial from record indices (with repetition allowed).
    pub fn select(&self, indices: &[usize]) -> Result<TrialData> {
        let records = indices.iter().map(|&i| self.records[i]).collect();
        TrialData::new(records)
    }

    /// Replaces every surrogate with `None` where `observed[i]` is false.
    pub fn masked(&self, observed: &[bool]) -> Result<TrialData> {
        if observed.len() != self.records.len() {
            return Err(PteError::Validation(format!(
                "mask length {} does not match {} records",
                observed.len(),
                self.records.len()
            )));
        }
        let records = self
            .records
            .iter()
            .zip(observed)
            .map(|(r, &keep)| PatientRecord {
                s: if keep { r.s } else { None },
                ..*r
            })
            .collect();
        TrialData::new(records)
    }
}

/// Reads a trial CSV with a header naming `y`, `s` and `z`.
pub fn load_trial_csv(path: impl AsRef<Path>) -> Result<TrialData> {
    let file = std::fs::File::open(path.as_ref())?;
    read_trial_csv(file)
}

fn is_missing_cell(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

pub fn read_trial_csv<R: Read>(reader: R) -> Result<TrialData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();

    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (iy, is, iz) = match (find("y"), find("s"), find("z")) {
        (Some(y), Some(s), Some(z)) => (y, s, z),
        _ => {
            return Err(PteError::Validation(format!(
                "header must name columns y, s, z (found: {})",
                headers.iter().collect::<Vec<_>>().join(",")
            )))
        }
    };
    let extra: Vec<&str> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| ![iy, is, iz].contains(i))
        .map(|(_, h)| h)
        .collect();
    if !extra.is_empty() {
        log::warn!("ignoring extra CSV columns: {}", extra.join(","));
    }

    let mut records = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row?;
        let line = k + 1;
        let cell = |i: usize| row.get(i).unwrap_or("");
        let parse = |i: usize, column: &str| -> Result<f64> {
            cell(i).parse::<f64>().map_err(|e| PteError::Parse {
                row: line,
                column: column.to_string(),
                message: format!("'{}': {e}", cell(i)),
            })
        };

        let y_cell = cell(iy);
        if is_missing_cell(y_cell) {
            return Err(PteError::Validation(format!("row {line}: missing y")));
        }
        let y = parse(iy, "y")?;

        let s = if is_missing_cell(cell(is)) {
            None
        } else {
            Some(parse(is, "s")?)
        };

        let z_val = parse(iz, "z")?;
        let z = if z_val == 0.0 {
            Arm::Control
        } else if z_val == 1.0 {
            Arm::Treated
        } else {
            return Err(PteError::Validation(format!(
                "row {line}: z must be 0 or 1, got '{}'",
                cell(iz)
            )));
        };
        records.push(PatientRecord { y, s, z });
    }
    TrialData::new(records)
}

/// Writes `y,s,z` with shortest round-trip decimal text; missing `s` as `NA`.
pub fn write_trial_csv<W: Write>(data: &TrialData, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["y", "s", "z"])?;
    for r in data.records() {
        let s = r.s.map_or_else(|| "NA".to_string(), |s| s.to_string());
        wtr.write_record([r.y.to_string(), s, r.z.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_trial_csv(data: &TrialData, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_trial_csv(data, std::io::BufWriter::new(file))
}

/// The triple `(Δ, Δ_S, R_S)` produced by every estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimandSet {
    pub delta: f64,
    pub delta_s: f64,
    pub r_s: f64,
}

impl EstimandSet {
    /// `R_S = 1 - Δ_S / Δ`; undefined when `Δ = 0`.
    pub fn from_effects(delta: f64, delta_s: f64) -> Result<Self> {
        if delta == 0.0 || !delta.is_finite() || !delta_s.is_finite() {
            return Err(PteError::UndefinedPte);
        }
        Ok(EstimandSet {
            delta,
            delta_s,
            r_s: 1.0 - delta_s / delta,
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.delta, self.delta_s, self.r_s]
    }
}
