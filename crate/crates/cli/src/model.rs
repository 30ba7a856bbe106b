//! JSON model files. Sites and matrix indices are 1-based in files, 0-based in memory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use oqw_core::continuous::{GeneratorModel, Graph};
use oqw_core::error::OqwError;
use oqw_core::linalg::{self, c, ComplexMatrix};
use oqw_core::walk::{embed_classical, OqwModel, StochasticConvention};
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

/// A complex number stored as `[re, im]`.
pub type Entry = [f64; 2];
/// Dense matrix of complex entries, row by row.
pub type EntryMatrix = Vec<Vec<Entry>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Oqw,
    Stochastic,
    Qmatrix,
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorDirective {
    PhiMinusIdentity,
    GraphInduced,
    ClassicalQ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    Column,
    Row,
}

/// Expected value of a check: a number, a flag or a word such as `inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Expected {
    Number(f64),
    Flag(bool),
    Word(String),
}

/// One declared check: run `args` against this file and compare `quantity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub args: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Expected>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Monte Carlo rows: accept within this many standard errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub kind: ModelKind,
    pub sites: usize,
    #[serde(default = "one")]
    pub internal_dim: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub blocks: BTreeMap<String, EntryMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "is_column")]
    pub convention: Convention,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorDirective>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub densities: BTreeMap<String, EntryMatrix>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<Check>,
}

fn one() -> usize {
    1
}

fn is_column(c: &Convention) -> bool {
    *c == Convention::Column
}

#[derive(Debug)]
pub enum InputError {
    Io { path: String, source: std::io::Error },
    Parse { line: usize, column: usize, message: String },
    Invalid(String),
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputError::Io { path, source } => write!(f, "cannot read {path}: {source}"),
            InputError::Parse { line, column, message } => {
                write!(f, "parse error at line {line}, column {column}: {message}")
            }
            InputError::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for InputError {}

impl From<OqwError> for InputError {
    fn from(e: OqwError) -> Self {
        InputError::Invalid(e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> InputError {
    InputError::Invalid(msg.into())
}

pub fn entry_matrix(m: &EntryMatrix, what: &str) -> Result<ComplexMatrix, InputError> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 || m.iter().any(|r| r.len() != cols) {
        return Err(invalid(format!("{what}: rows must be nonempty and of equal length")));
    }
    Ok(ComplexMatrix::from_fn(rows, cols, |i, j| c(m[i][j][0], m[i][j][1])))
}

pub fn to_entries(m: &ComplexMatrix) -> EntryMatrix {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn real_rows(m: &[Vec<f64>], size: usize, what: &str) -> Result<ComplexMatrix, InputError> {
    if m.len() != size || m.iter().any(|r| r.len() != size) {
        return Err(invalid(format!("{what} must be {size}x{size}")));
    }
    Ok(ComplexMatrix::from_fn(size, size, |i, j| c(m[i][j], 0.0)))
}

/// Parses a 1-based `"to,from"` block key.
pub fn parse_key(key: &str, sites: usize) -> Result<(usize, usize), InputError> {
    let bad = || invalid(format!("block key {key:?} is not \"to,from\" with sites in 1..={sites}"));
    let (to, from) = key.split_once(',').ok_or_else(bad)?;
    let to: usize = to.trim().parse().map_err(|_| bad())?;
    let from: usize = from.trim().parse().map_err(|_| bad())?;
    if to == 0 || from == 0 || to > sites || from > sites {
        return Err(bad());
    }
    Ok((to - 1, from - 1))
}

pub fn block_key(to: usize, from: usize) -> String {
    format!("{},{}", to + 1, from + 1)
}

/// Everything a command can need, built once from a file.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub file: ModelFile,
    pub walk: Option<OqwModel>,
    pub generator: Option<GeneratorModel>,
    pub digest: String,
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self, InputError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| InputError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.format_version != FORMAT_VERSION {
            return Err(invalid(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<(Self, String), InputError> {
        let text = std::fs::read_to_string(path).map_err(|source| InputError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model files serialize")
    }

    /// Walk from the blocks, or from the stochastic matrix.
    pub fn walk(&self) -> Result<Option<OqwModel>, InputError> {
        match self.kind {
            ModelKind::Oqw => {
                if self.matrix.is_some() || !self.edges.is_empty() {
                    return Err(invalid("oqw models take \"blocks\" only"));
                }
                let mut blocks = Vec::with_capacity(self.blocks.len());
                for (key, m) in &self.blocks {
                    let at = parse_key(key, self.sites)?;
                    let b = entry_matrix(m, &format!("block {key}"))?;
                    if b.nrows() != self.internal_dim || b.ncols() != self.internal_dim {
                        return Err(invalid(format!(
                            "block {key} is {}x{}, expected {d}x{d}",
                            b.nrows(),
                            b.ncols(),
                            d = self.internal_dim
                        )));
                    }
                    blocks.push((at, b));
                }
                Ok(Some(OqwModel::new(self.sites, self.internal_dim, blocks)?))
            }
            ModelKind::Stochastic => {
                self.classical_only()?;
                let p = real_rows(self.matrix.as_deref().unwrap_or(&[]), self.sites, "stochastic matrix")?;
                let convention = match self.convention {
                    Convention::Column => StochasticConvention::Column,
                    Convention::Row => StochasticConvention::Row,
                };
                Ok(Some(embed_classical(&p, convention)?))
            }
            ModelKind::Qmatrix | ModelKind::Graph => Ok(None),
        }
    }

    fn classical_only(&self) -> Result<(), InputError> {
        if self.internal_dim != 1 {
            return Err(invalid("classical models have internal_dim 1"));
        }
        if !self.blocks.is_empty() {
            return Err(invalid("classical models take \"matrix\" or \"edges\", not \"blocks\""));
        }
        Ok(())
    }

    fn directive(&self) -> Result<Option<GeneratorDirective>, InputError> {
        use GeneratorDirective::*;
        let d = match (self.kind, self.generator) {
            (ModelKind::Qmatrix, None | Some(ClassicalQ)) => Some(ClassicalQ),
            (ModelKind::Graph, None | Some(GraphInduced)) => Some(GraphInduced),
            (ModelKind::Oqw | ModelKind::Stochastic, d @ (None | Some(PhiMinusIdentity))) => d,
            (kind, Some(d)) => {
                return Err(invalid(format!("generator {d:?} does not apply to {kind:?} models")))
            }
        };
        Ok(d)
    }

    pub fn generator(&self, walk: Option<&OqwModel>) -> Result<Option<GeneratorModel>, InputError> {
        let g = match self.directive()? {
            None => None,
            Some(GeneratorDirective::PhiMinusIdentity) => {
                Some(GeneratorModel::phi_minus_identity(walk.expect("walk kinds build a walk"))?)
            }
            Some(GeneratorDirective::ClassicalQ) => {
                self.classical_only()?;
                let q = real_rows(self.matrix.as_deref().unwrap_or(&[]), self.sites, "Q-matrix")?;
                Some(GeneratorModel::classical_q(&q)?)
            }
            Some(GeneratorDirective::GraphInduced) => {
                self.classical_only()?;
                let mut edges = Vec::with_capacity(self.edges.len());
                for [a, b] in &self.edges {
                    if *a == 0 || *b == 0 {
                        return Err(invalid("edges use 1-based vertices"));
                    }
                    edges.push((a - 1, b - 1));
                }
                Some(GeneratorModel::graph_induced(&Graph::new(self.sites, edges)?)?)
            }
        };
        Ok(g)
    }

    /// Named density at one site: file entries first, then `Eaa` and `mixed`.
    pub fn density(&self, name: Option<&str>) -> Result<ComplexMatrix, InputError> {
        let n = self.internal_dim;
        let Some(name) = name else {
            return if n == 1 {
                Ok(linalg::identity(1))
            } else {
                Err(invalid("--state is required when internal_dim > 1"))
            };
        };
        if let Some(m) = self.densities.get(name) {
            let rho = entry_matrix(m, &format!("density {name}"))?;
            if rho.nrows() != n || rho.ncols() != n {
                return Err(invalid(format!("density {name} is not {n}x{n}")));
            }
            return Ok(rho);
        }
        if name == "mixed" {
            return Ok(linalg::identity(n).unscale(n as f64));
        }
        if let Some(rest) = name.strip_prefix('E') {
            let half = rest.len() / 2;
            if rest.len() % 2 == 0 && half > 0 && rest[..half] == rest[half..] {
                if let Ok(a) = rest[..half].parse::<usize>() {
                    if (1..=n).contains(&a) {
                        return Ok(linalg::matrix_unit(n, a - 1, a - 1));
                    }
                }
            }
        }
        let known: Vec<&str> = self.densities.keys().map(String::as_str).collect();
        Err(invalid(format!("unknown state {name:?} (file defines {known:?}; built-ins Eaa, mixed)")))
    }

    pub fn load(self, text: &str) -> Result<LoadedModel, InputError> {
        let walk = self.walk()?;
        let generator = self.generator(walk.as_ref())?;
        for name in self.densities.keys() {
            let rho = self.density(Some(name))?;
            oqw_core::walk::check_site_density(&rho, self.internal_dim)
                .map_err(|e| invalid(format!("density {name}: {e}")))?;
        }
        Ok(LoadedModel {
            file: self,
            walk,
            generator,
            digest: crate::report::digest(text),
        })
    }
}

impl LoadedModel {
    pub fn from_path(path: &Path) -> Result<Self, InputError> {
        let (file, text) = ModelFile::read(path)?;
        file.load(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, InputError> {
        ModelFile::parse(text)?.load(text)
    }

    pub fn walk(&self) -> Result<&OqwModel, InputError> {
        self.walk
            .as_ref()
            .ok_or_else(|| invalid(format!("{:?} models have no discrete-time walk", self.file.kind)))
    }

    pub fn generator(&self) -> Result<&GeneratorModel, InputError> {
        self.generator
            .as_ref()
            .ok_or_else(|| invalid("model has no generator; add \"generator\": \"phi_minus_identity\""))
    }

    /// 1-based site flag to 0-based index.
    pub fn site(&self, flag: usize, what: &str) -> Result<usize, InputError> {
        if flag == 0 || flag > self.file.sites {
            return Err(invalid(format!("{what} {flag} outside 1..={}", self.file.sites)));
        }
        Ok(flag - 1)
    }
}

/// Builds a model file from an in-memory walk, blocks keyed 1-based.
pub fn walk_file(walk: &OqwModel) -> ModelFile {
    ModelFile {
        format_version: FORMAT_VERSION,
        name: None,
        description: None,
        kind: ModelKind::Oqw,
        sites: walk.sites(),
        internal_dim: walk.dim(),
        blocks: walk
            .blocks()
            .map(|(&(to, from), b)| (block_key(to, from), to_entries(b)))
            .collect(),
        matrix: None,
        convention: Convention::Column,
        edges: Vec::new(),
        generator: None,
        densities: BTreeMap::new(),
        checks: Vec::new(),
    }
}
