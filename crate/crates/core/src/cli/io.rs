//! File formats and output plumbing. JSON goes out with sorted keys and
//! every float at 17 significant digits, so files round-trip exactly and
//! diff cleanly.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::generate::EndowmentSpec;
use crate::market::{MarketModel, MarketSpec};
use crate::preferences::{HabitPreferences, PreferencesSpec};
use crate::solvers::{Diagnostics, Solution};
use crate::tree::AdaptedProcess;

/// Pretty printing with floats in `{:.16e}` form.
struct ExactFloats<'a>(PrettyFormatter<'a>);

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes through `serde_json::Value`, whose maps are ordered, so keys
/// come out sorted whatever the struct field order. Non-finite floats
/// become `null`.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats(PrettyFormatter::with_indent(b"  ")));
    v.serialize(&mut ser)?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Io(format!("{} is not a file path", path.display())))?;
    let mut tmp = PathBuf::from(dir);
    tmp.push(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Writes to `path`, or to stdout when there is none.
pub fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, contents),
        None => {
            io::stdout().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn load_market(path: &Path) -> Result<MarketModel> {
    MarketModel::from_spec(&read_json::<MarketSpec>(path)?)
}

pub fn load_preferences(path: &Path, m: &MarketModel) -> Result<HabitPreferences> {
    read_json::<PreferencesSpec>(path)?.build(m.tree())
}

pub fn load_endowment(path: &Path, m: &MarketModel) -> Result<AdaptedProcess> {
    read_json::<EndowmentSpec>(path)?.build(m.tree())
}

/// A solution as written by `solve`. Only `consumption` is needed to read
/// one back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub method: String,
    pub consumption: Vec<Vec<f64>>,
    #[serde(default)]
    pub wealth: Vec<Vec<f64>>,
    #[serde(default)]
    pub investment: Vec<Vec<f64>>,
    /// `portfolio[k][atom]`: holdings bought at level `k`, bond first.
    #[serde(default)]
    pub portfolio: Vec<Vec<Vec<f64>>>,
    /// Habit-adjusted marginal utility, a state-price density at the optimum.
    #[serde(default)]
    pub marginal: Vec<Vec<f64>>,
    #[serde(default)]
    pub utility: f64,
    #[serde(default)]
    pub negative_consumption: bool,
    #[serde(default)]
    pub diagnostics: Option<DiagnosticsFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub foc_residuals: Vec<f64>,
    pub warnings: Vec<String>,
}

impl From<&Diagnostics> for DiagnosticsFile {
    fn from(d: &Diagnostics) -> Self {
        DiagnosticsFile {
            iterations: d.iterations,
            gradient_norm: d.gradient_norm,
            foc_residuals: d.foc_residuals.clone(),
            warnings: d.warnings.clone(),
        }
    }
}

impl From<&Solution> for SolutionFile {
    fn from(s: &Solution) -> Self {
        SolutionFile {
            method: s.diagnostics.method.clone(),
            consumption: s.consumption.to_levels(),
            wealth: s.wealth.to_levels(),
            investment: s.investment.to_levels(),
            portfolio: s.portfolio.clone(),
            marginal: s.marginal.to_levels(),
            utility: s.utility,
            negative_consumption: s.consumption.components().iter().any(|c| c.min() < 0.0),
            diagnostics: Some((&s.diagnostics).into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn floats_round_trip_and_keys_sort() {
        let mut m = HashMap::new();
        m.insert("zeta", 0.1 + 0.2);
        m.insert("alpha", 1.0 / 3.0);
        m.insert("mid", 1e-300);
        let s = to_json(&m).unwrap();
        let a = s.find("alpha").unwrap();
        assert!(a < s.find("mid").unwrap() && s.find("mid").unwrap() < s.find("zeta").unwrap());
        let back: HashMap<String, f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back["zeta"], 0.1 + 0.2);
        assert_eq!(back["alpha"], 1.0 / 3.0);
        assert_eq!(back["mid"], 1e-300);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.json");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
