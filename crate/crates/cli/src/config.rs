//! Experiment configuration files.
//!
//! The format is line oriented. `[section]` headers open a section, every
//! other non-blank line is `key = value`, and `#` starts a comment. Values are
//! numbers, words, or bracketed matrices with rows separated by `;`:
//!
//! ```text
//! [plant]
//! num = [0.1]
//! den = [1 -0.9]
//!
//! [controller]
//! K = [0.15]
//! Q = [1]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use robust_oco::lti::{StateSpace, TransferFunction};
use robust_oco::norms::DEFAULT_TOL;
use robust_oco::robust::uncertainty_bound;
use robust_oco::sim::DEFAULT_DIVERGENCE_THRESHOLD;
use robust_oco::{CostWeights, DisturbanceSpec, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("[{section}] {key} (line {line}): {msg}")]
    Value { section: String, key: String, line: usize, msg: String },
    #[error("missing key `{key}` in [{section}]")]
    Missing { section: String, key: String },
    #[error("missing section [{0}]")]
    MissingSection(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] robust_oco::Error),
}

type Result<T> = std::result::Result<T, ConfigError>;

const SECTIONS: &[(&str, &[&str])] = &[
    ("plant", &["A", "B", "num", "den"]),
    ("uncertainty", &["A", "B", "C", "D", "num", "den", "subtract_identity", "delta"]),
    ("controller", &["K", "H", "eta", "Q", "R", "beta"]),
    ("simulation", &["T", "disturbance", "amplitude", "switch_time", "values", "file", "divergence_threshold"]),
    ("sweep", &["betas"]),
    ("system", &["A", "B", "C", "D", "num", "den"]),
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// A parsed configuration file. Keys are validated against the known
/// sections at parse time; values are interpreted lazily by the accessors.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
    base_dir: PathBuf,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ConfigFile::default();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !name.is_empty() && !name.contains(['[', ']', ' ', ';']) {
                    if !SECTIONS.iter().any(|(s, _)| *s == name) {
                        return Err(ConfigError::Syntax { line, msg: format!("unknown section [{name}]") });
                    }
                    if cfg.sections.contains_key(name) {
                        return Err(ConfigError::Syntax { line, msg: format!("duplicate section [{name}]") });
                    }
                    cfg.sections.insert(name.to_owned(), BTreeMap::new());
                    current = Some(name.to_owned());
                    continue;
                }
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax { line, msg: format!("expected `key = value`, found `{content}`") });
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(section) = current.as_deref() else {
                return Err(ConfigError::Syntax { line, msg: format!("key `{key}` appears before any section") });
            };
            let allowed = SECTIONS.iter().find(|(s, _)| *s == section).map(|(_, k)| *k).unwrap_or(&[]);
            if !allowed.contains(&key) {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("unknown key `{key}` in [{section}] (allowed: {})", allowed.join(", ")),
                });
            }
            if value.is_empty() {
                return Err(ConfigError::Syntax { line, msg: format!("key `{key}` has no value") });
            }
            let map = cfg.sections.get_mut(section).expect("section inserted on header");
            if map.insert(key.to_owned(), Entry { value: value.to_owned(), line }).is_some() {
                return Err(ConfigError::Syntax { line, msg: format!("duplicate key `{key}` in [{section}]") });
            }
        }
        Ok(cfg)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn has(&self, section: &str, key: &str) -> bool {
        self.sections.get(section).is_some_and(|m| m.contains_key(key))
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|m| m.get(key))
    }

    fn value_err(&self, section: &str, key: &str, msg: impl Into<String>) -> ConfigError {
        let line = self.entry(section, key).map_or(0, |e| e.line);
        ConfigError::Value { section: section.into(), key: key.into(), line, msg: msg.into() }
    }

    fn get<T>(
        &self,
        section: &str,
        key: &str,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<Option<T>> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => parse(&e.value).map(Some).map_err(|msg| self.value_err(section, key, msg)),
        }
    }

    fn require<T>(
        &self,
        section: &str,
        key: &str,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        self.get(section, key, parse)?.ok_or_else(|| ConfigError::Missing { section: section.into(), key: key.into() })
    }

    /// The nominal plant. Transfer functions use the observable canonical
    /// form, so a first-order `b/(z - a)` becomes `A = a, B = b`.
    pub fn plant(&self) -> Result<StateSpace> {
        if !self.has_section("plant") {
            return Err(ConfigError::MissingSection("plant".into()));
        }
        let tf = self.transfer_function("plant")?;
        let has_matrices = self.has("plant", "A") || self.has("plant", "B");
        match (tf, has_matrices) {
            (Some(_), true) => Err(ConfigError::Invalid("[plant]: give either num/den or A/B, not both".into())),
            (Some(tf), false) => Ok(tf.to_state_space_observable()),
            (None, _) => {
                let a = self.require("plant", "A", parse_matrix)?;
                let b = self.require("plant", "B", parse_matrix)?;
                let n = a.nrows();
                let m = b.ncols();
                Ok(StateSpace::new(a, b, DMatrix::identity(n, n), DMatrix::zeros(n, m))?)
            }
        }
    }

    fn transfer_function(&self, section: &str) -> Result<Option<TransferFunction>> {
        let num = self.get(section, "num", parse_vector)?;
        let den = self.get(section, "den", parse_vector)?;
        match (num, den) {
            (Some(num), Some(den)) => Ok(Some(TransferFunction::new(num, den)?)),
            (None, None) => Ok(None),
            _ => Err(ConfigError::Invalid(format!("[{section}]: num and den must be given together"))),
        }
    }

    /// An explicit `A/B/C/D` or `num/den` system in `section`.
    fn realization(&self, section: &str) -> Result<Option<StateSpace>> {
        let tf = self.transfer_function(section)?;
        let keys = ["A", "B", "C", "D"];
        let any_matrix = keys.iter().any(|k| self.has(section, k));
        match (tf, any_matrix) {
            (Some(_), true) => {
                Err(ConfigError::Invalid(format!("[{section}]: give either num/den or A/B/C/D, not both")))
            }
            (Some(tf), false) => Ok(Some(tf.to_state_space())),
            (None, false) => Ok(None),
            (None, true) => {
                let d = self.require(section, "D", parse_matrix)?;
                let a = self.get(section, "A", parse_matrix)?.unwrap_or_else(|| DMatrix::zeros(0, 0));
                let n = a.nrows();
                let b = self.get(section, "B", parse_matrix)?.unwrap_or_else(|| DMatrix::zeros(n, d.ncols()));
                let c = self.get(section, "C", parse_matrix)?.unwrap_or_else(|| DMatrix::zeros(d.nrows(), n));
                Ok(Some(StateSpace::new(a, b, c, d)?))
            }
        }
    }

    /// The uncertainty Δ, if a realization is given. `subtract_identity = true`
    /// turns a transfer function `F` into `F - 1`.
    pub fn uncertainty(&self) -> Result<Option<StateSpace>> {
        let Some(sys) = self.realization("uncertainty")? else {
            return Ok(None);
        };
        if self.get("uncertainty", "subtract_identity", parse_bool)?.unwrap_or(false) {
            Ok(Some(sys.sub_identity(1.0)?))
        } else {
            Ok(Some(sys))
        }
    }

    /// `δ`: the explicit `delta` key, or the induced ℓ∞ norm (plus its tail
    /// bound) of the realization, or 0 without an `[uncertainty]` section.
    pub fn delta_bound(&self) -> Result<f64> {
        let explicit = self.get("uncertainty", "delta", parse_number)?;
        let sys = self.uncertainty()?;
        match (explicit, sys) {
            (Some(_), Some(_)) => {
                Err(ConfigError::Invalid("[uncertainty]: give either delta or a realization, not both".into()))
            }
            (Some(d), None) if d >= 0.0 => Ok(d),
            (Some(_), None) => Err(self.value_err("uncertainty", "delta", "must be nonnegative")),
            (None, Some(sys)) => Ok(uncertainty_bound(&sys, DEFAULT_TOL)?),
            (None, None) => Ok(0.0),
        }
    }

    pub fn feedback_gain(&self) -> Result<DMatrix<f64>> {
        self.require("controller", "K", parse_matrix)
    }

    pub fn sweep_betas(&self) -> Result<Option<Vec<f64>>> {
        self.get("sweep", "betas", parse_vector)
    }

    /// Everything a closed-loop run needs.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        if self.has("uncertainty", "delta") {
            return Err(ConfigError::Invalid(
                "[uncertainty] delta is a bound only; simulation needs a realization (num/den or A/B/C/D)".into(),
            ));
        }
        let plant = self.plant()?;
        let uncertainty = self.uncertainty()?;
        let k = self.feedback_gain()?;
        let horizon = self.require("controller", "H", parse_usize)?;
        let eta = self.require("controller", "eta", parse_number)?;
        let q = self.require("controller", "Q", parse_matrix)?;
        let r = self.require("controller", "R", parse_matrix)?;
        let weights = CostWeights::new(q, r)?;
        let beta = self.get("controller", "beta", parse_number)?;
        let steps = self.require("simulation", "T", parse_usize)?;
        let divergence_threshold =
            self.get("simulation", "divergence_threshold", parse_number)?.unwrap_or(DEFAULT_DIVERGENCE_THRESHOLD);
        let disturbance = self.disturbance()?;
        let config = ExperimentConfig {
            plant,
            uncertainty,
            k,
            horizon,
            eta,
            weights,
            beta,
            steps,
            disturbance,
            divergence_threshold,
            initial_gains: None,
        };
        config.validate()?;
        // catches short or mis-shaped sequences before any output is written
        config.disturbance.generate(config.steps, config.n_u())?;
        Ok(config)
    }

    fn disturbance(&self) -> Result<DisturbanceSpec> {
        let kind = self.require("simulation", "disturbance", |s| Ok(s.to_owned()))?;
        let amplitude = || self.require("simulation", "amplitude", parse_number);
        match kind.as_str() {
            "square" => Ok(DisturbanceSpec::Square {
                amplitude: amplitude()?,
                switch_time: self.require("simulation", "switch_time", parse_usize)?,
            }),
            "constant" => Ok(DisturbanceSpec::Constant { amplitude: amplitude()? }),
            "file" => {
                let rows = match (self.get("simulation", "values", parse_matrix)?, self.entry("simulation", "file")) {
                    (Some(_), Some(_)) => {
                        return Err(ConfigError::Invalid("[simulation]: give either values or file, not both".into()))
                    }
                    (Some(m), None) => m,
                    (None, Some(e)) => {
                        let path = self.base_dir.join(&e.value);
                        let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io { path, source })?;
                        parse_table(&text).map_err(|msg| self.value_err("simulation", "file", msg))?
                    }
                    (None, None) => {
                        return Err(ConfigError::Missing { section: "simulation".into(), key: "values or file".into() })
                    }
                };
                Ok(DisturbanceSpec::Sequence(rows.row_iter().map(|r| r.transpose().into_owned()).collect()))
            }
            other => Err(self.value_err(
                "simulation",
                "disturbance",
                format!("unknown kind `{other}` (square, constant, file)"),
            )),
        }
    }

    /// The `[system]` section used by the `norm` subcommand.
    pub fn system(&self) -> Result<StateSpace> {
        if !self.has_section("system") {
            return Err(ConfigError::MissingSection("system".into()));
        }
        self.realization("system")?.ok_or_else(|| ConfigError::Invalid("[system]: give num/den or A/B/C/D".into()))
    }
}

pub fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_usize(s: &str) -> std::result::Result<usize, String> {
    s.trim().parse().map_err(|_| format!("`{s}` is not a nonnegative integer"))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("`{other}` is not true/false")),
    }
}

fn parse_row(row: &str) -> std::result::Result<Vec<f64>, String> {
    row.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).map(parse_number).collect()
}

/// `[1 0; 0 1]` style matrices. A bare scalar is a 1×1 matrix.
pub fn parse_matrix(s: &str) -> std::result::Result<DMatrix<f64>, String> {
    let s = s.trim();
    let inner = match s.strip_prefix('[') {
        Some(rest) => rest.strip_suffix(']').ok_or_else(|| format!("unbalanced brackets in `{s}`"))?,
        None => s,
    };
    if inner.contains(['[', ']']) {
        return Err(format!("nested brackets in `{s}`"));
    }
    let rows: Vec<Vec<f64>> = inner.split(';').map(parse_row).collect::<std::result::Result<_, _>>()?;
    if rows.len() == 1 && rows[0].is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols || r.is_empty()) {
        return Err(format!("rows of `{s}` have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// A row or column of numbers, e.g. polynomial coefficients or a β list.
pub fn parse_vector(s: &str) -> std::result::Result<Vec<f64>, String> {
    let m = parse_matrix(s)?;
    if m.nrows() > 1 && m.ncols() > 1 {
        return Err(format!("`{s}` must be a vector"));
    }
    Ok(m.iter().copied().collect())
}

/// One disturbance sample per line, channels separated by commas or spaces.
fn parse_table(text: &str) -> std::result::Result<DMatrix<f64>, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(parse_row)
        .collect::<std::result::Result<_, _>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err("disturbance file needs a nonempty table with a constant number of columns".into());
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}
