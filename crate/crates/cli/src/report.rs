//! Result tables: human-readable text and `quantity,value,tolerance,provenance` CSV.

use std::fmt::Write as _;

use oqw_core::linalg::ComplexMatrix;
use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of the input text.
pub fn digest(text: &str) -> String {
    let hash = Sha256::digest(text.as_bytes());
    hash.iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Complex(f64, f64),
    Flag(bool),
    Text(String),
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Real(x) => real(*x),
            Value::Complex(re, im) => {
                let sign = if im.is_sign_negative() { '-' } else { '+' };
                format!("{}{sign}{}i", real(*re), real(im.abs()))
            }
            Value::Flag(b) => b.to_string(),
            Value::Text(s) => s.clone(),
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Real(x) => Some(*x),
            Value::Complex(re, im) if *im == 0.0 => Some(*re),
            _ => None,
        }
    }
}

fn real(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x == 0.0 {
        "0".into()
    } else if !(1e-4..1e15).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Analytic,
    Quadrature,
    Extrapolated,
    Input,
    MonteCarlo { std_error: f64 },
    Enumeration,
}

impl Provenance {
    pub fn render(&self) -> String {
        match self {
            Provenance::Analytic => "analytic".into(),
            Provenance::Quadrature => "quadrature".into(),
            Provenance::Extrapolated => "extrapolated".into(),
            Provenance::Input => "input".into(),
            Provenance::MonteCarlo { std_error } => format!("mc±{}", real(*std_error)),
            Provenance::Enumeration => "enumeration".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub quantity: String,
    pub value: Value,
    pub tolerance: Option<f64>,
    pub provenance: Provenance,
    /// `None` for informational rows.
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub command: String,
    pub digest: String,
    pub rows: Vec<Row>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(command: impl Into<String>, digest: impl Into<String>) -> Self {
        Report {
            command: command.into(),
            digest: digest.into(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn info(&mut self, quantity: impl Into<String>, value: Value, provenance: Provenance) {
        self.rows.push(Row {
            quantity: quantity.into(),
            value,
            tolerance: None,
            provenance,
            pass: None,
        });
    }

    pub fn real(&mut self, quantity: impl Into<String>, value: f64, provenance: Provenance) {
        self.info(quantity, Value::Real(value), provenance);
    }

    pub fn flag(&mut self, quantity: impl Into<String>, value: bool) {
        self.info(quantity, Value::Flag(value), Provenance::Analytic);
    }

    /// Flag that must hold for the report to pass.
    pub fn require(&mut self, quantity: impl Into<String>, value: bool) {
        self.rows.push(Row {
            quantity: quantity.into(),
            value: Value::Flag(value),
            tolerance: None,
            provenance: Provenance::Analytic,
            pass: Some(value),
        });
    }

    /// Residual that must stay within `tolerance`.
    pub fn residual(&mut self, quantity: impl Into<String>, value: f64, tolerance: f64, provenance: Provenance) {
        self.rows.push(Row {
            quantity: quantity.into(),
            value: Value::Real(value),
            tolerance: Some(tolerance),
            provenance,
            pass: Some(value <= tolerance),
        });
    }

    pub fn matrix(&mut self, name: &str, m: &ComplexMatrix, provenance: Provenance) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let z = m[(i, j)];
                self.info(format!("{name}[{},{}]", i + 1, j + 1), Value::Complex(z.re, z.im), provenance.clone());
            }
        }
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }

    pub fn find(&self, quantity: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub fn extend(&mut self, prefix: &str, other: Report) {
        for mut row in other.rows {
            row.quantity = format!("{prefix}{}", row.quantity);
            self.rows.push(row);
        }
        self.notes.extend(other.notes);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["quantity", "value", "tolerance", "provenance"])
            .expect("in-memory csv");
        for r in &self.rows {
            let tol = r.tolerance.map(|t| format!("{t:e}")).unwrap_or_default();
            w.write_record([r.quantity.as_str(), &r.value.render(), &tol, &r.provenance.render()])
                .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command: {}", self.command);
        let _ = writeln!(out, "input:   {}", self.digest);
        let width = self.rows.iter().map(|r| r.quantity.chars().count()).max().unwrap_or(0);
        for r in &self.rows {
            let mut line = format!("  {:<width$}  {}", r.quantity, r.value.render());
            if let Some(t) = r.tolerance {
                let _ = write!(line, "  (tol {t:e})");
            }
            let _ = write!(line, "  [{}]", r.provenance.render());
            match r.pass {
                Some(true) => line.push_str("  ok"),
                Some(false) => line.push_str("  FAIL"),
                None => {}
            }
            let _ = writeln!(out, "{line}");
        }
        for n in &self.notes {
            let _ = writeln!(out, "  note: {n}");
        }
        let _ = writeln!(out, "status: {}", if self.passed() { "pass" } else { "FAIL" });
        out
    }
}
