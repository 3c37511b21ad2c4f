//! 1 s profile files. Each file starts with a schema line followed by a CSV
//! header:
//!
//! ```text
//! # voltguard weather v1
//! t,ghi,temp            seconds since midnight, W/m², °C
//!
//! # voltguard loads v1
//! t,B03_p,B03_q,...     injection convention: consumption is negative, W / var
//!
//! # voltguard slack v1
//! t,v                   slack voltage magnitude, pu
//! ```

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const PROFILE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: missing sample at t={t} s")]
    Gap { path: PathBuf, t: u64 },
}

/// One column-major table indexed by whole seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub kind: String,
    pub start_s: u64,
    pub columns: Vec<String>,
    /// `data[c][k]` is column `c` at `start_s + k`.
    pub data: Vec<Vec<f64>>,
}

impl Profile {
    pub fn len(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn end_s(&self) -> u64 {
        self.start_s + self.len() as u64
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().position(|c| c == name).map(|i| self.data[i].as_slice())
    }

    pub fn at(&self, col: usize, t: u64) -> f64 {
        self.data[col][(t - self.start_s) as usize]
    }

    pub fn covers(&self, from: u64, to: u64) -> bool {
        from >= self.start_s && to <= self.end_s()
    }

    pub fn read(path: &Path, kind: &str) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io { path: path.into(), source })?;
        Self::parse(&text, kind, path)
    }

    pub fn parse(text: &str, kind: &str, path: &Path) -> Result<Self, ProfileError> {
        let fmt = |message: String| ProfileError::Format { path: path.into(), message };
        let (first, rest) = text.split_once('\n').ok_or_else(|| fmt("empty file".into()))?;
        let expected = format!("# voltguard {kind} v{PROFILE_SCHEMA_VERSION}");
        if first.trim_end() != expected {
            return Err(fmt(format!("schema line `{}`, expected `{expected}`", first.trim_end())));
        }
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
        let headers = rdr.headers().map_err(|e| fmt(e.to_string()))?.clone();
        if headers.get(0) != Some("t") {
            return Err(fmt("first column must be `t`".into()));
        }
        let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut data = vec![Vec::new(); columns.len()];
        let mut start_s = None;
        let mut next = 0u64;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| fmt(e.to_string()))?;
            let t: u64 = rec[0].trim().parse().map_err(|_| fmt(format!("row {}: bad timestamp", line + 1)))?;
            match start_s {
                None => start_s = Some(t),
                Some(_) if t != next => return Err(ProfileError::Gap { path: path.into(), t: next }),
                Some(_) => {}
            }
            next = t + 1;
            for (c, col) in data.iter_mut().enumerate() {
                let v: f64 = rec
                    .get(c + 1)
                    .ok_or_else(|| fmt(format!("row {}: too few fields", line + 1)))?
                    .trim()
                    .parse()
                    .map_err(|_| fmt(format!("row {}: bad number in column {}", line + 1, columns[c])))?;
                col.push(v);
            }
        }
        let start_s = start_s.ok_or_else(|| fmt("no data rows".into()))?;
        Ok(Self { kind: kind.into(), start_s, columns, data })
    }

    pub fn write(&self, path: &Path, decimals: &[usize]) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# voltguard {} v{PROFILE_SCHEMA_VERSION}", self.kind)?;
        write!(w, "t")?;
        for c in &self.columns {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            write!(w, "{}", self.start_s + k as u64)?;
            for (c, col) in self.data.iter().enumerate() {
                let d = decimals.get(c).copied().unwrap_or(3);
                write!(w, ",{:.*}", d, col[k])?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

/// The three profiles of a scenario, checked against each other.
#[derive(Debug, Clone)]
pub struct DayProfiles {
    pub weather: Profile,
    pub loads: Profile,
    pub slack: Profile,
    /// Column index of `(p, q)` per uncontrollable bus name.
    pub load_columns: HashMap<String, (usize, usize)>,
}

impl DayProfiles {
    pub fn load(weather: &Path, loads: &Path, slack: &Path, load_buses: &[String]) -> Result<Self, ProfileError> {
        let weather = Profile::read(weather, "weather")?;
        let loads_p = Profile::read(loads, "loads")?;
        let slack_p = Profile::read(slack, "slack")?;
        Self::new(weather, loads_p, slack_p, load_buses, loads)
    }

    pub fn new(
        weather: Profile,
        loads: Profile,
        slack: Profile,
        load_buses: &[String],
        loads_path: &Path,
    ) -> Result<Self, ProfileError> {
        for (p, cols) in [(&weather, &["ghi", "temp"][..]), (&slack, &["v"][..])] {
            for c in cols {
                if p.column(c).is_none() {
                    return Err(ProfileError::Format {
                        path: PathBuf::from(&p.kind),
                        message: format!("missing column `{c}`"),
                    });
                }
            }
        }
        let mut load_columns = HashMap::new();
        for bus in load_buses {
            let find = |suffix: &str| {
                let name = format!("{bus}_{suffix}");
                loads.columns.iter().position(|c| *c == name).ok_or_else(|| ProfileError::Format {
                    path: loads_path.into(),
                    message: format!("missing column `{name}`"),
                })
            };
            load_columns.insert(bus.clone(), (find("p")?, find("q")?));
        }
        Ok(Self { weather, loads, slack, load_columns })
    }

    /// Checks that every profile covers `[from, to)`.
    pub fn check_range(&self, from: u64, to: u64) -> Result<(), ProfileError> {
        for p in [&self.weather, &self.loads, &self.slack] {
            if !p.covers(from, to) {
                let t = if from < p.start_s { from } else { p.end_s() };
                return Err(ProfileError::Gap { path: PathBuf::from(&p.kind), t });
            }
        }
        Ok(())
    }

    pub fn ghi(&self, t: u64) -> f64 {
        self.weather.at(0, t)
    }

    pub fn temp(&self, t: u64) -> f64 {
        self.weather.at(1, t)
    }

    pub fn slack_v(&self, t: u64) -> f64 {
        self.slack.at(0, t)
    }

    pub fn load_at(&self, bus: &str, t: u64) -> (f64, f64) {
        let (p, q) = self.load_columns[bus];
        (self.loads.at(p, t), self.loads.at(q, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_roundtrip() {
        let text = "# voltguard slack v1\nt,v\n10,1.01\n11,1.02\n";
        let p = Profile::parse(text, "slack", Path::new("s.csv")).unwrap();
        assert_eq!(p.start_s, 10);
        assert_eq!(p.at(0, 11), 1.02);
        let dir = std::env::temp_dir().join(format!("vg-profile-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let f = dir.join("s.csv");
        p.write(&f, &[2]).unwrap();
        assert_eq!(std::fs::read_to_string(&f).unwrap(), text);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn gap_and_schema_errors() {
        let gap = "# voltguard slack v1\nt,v\n0,1.0\n2,1.0\n";
        assert!(matches!(Profile::parse(gap, "slack", Path::new("s")), Err(ProfileError::Gap { t: 1, .. })));
        let wrong = "# voltguard weather v1\nt,v\n0,1.0\n";
        assert!(matches!(Profile::parse(wrong, "slack", Path::new("s")), Err(ProfileError::Format { .. })));
    }
}
