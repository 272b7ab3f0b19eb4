//! Sparse linear-program container with named variables.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::rational::{self, Q};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub lower: Option<Q>,
    pub upper: Option<Q>,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub name: String,
    pub coeffs: Vec<(usize, Q)>,
    pub sense: Sense,
    pub rhs: Q,
}

/// `maximize c·x` subject to sparse rows and per-variable bounds.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub vars: Vec<Variable>,
    pub rows: Vec<Row>,
    pub objective: Vec<(usize, Q)>,
    names: HashMap<String, usize>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable; panics if the name is already taken, since every
    /// formulation variable must appear exactly once.
    pub fn add_var(&mut self, name: impl Into<String>, lower: Option<Q>, upper: Option<Q>) -> usize {
        let name = name.into();
        let idx = self.vars.len();
        let prev = self.names.insert(name.clone(), idx);
        assert!(prev.is_none(), "duplicate LP variable {name}");
        self.vars.push(Variable { name, lower, upper });
        idx
    }

    pub fn var(&self, name: &str) -> Option<usize> {
        self.names.get(name).copied()
    }

    pub fn add_row(&mut self, name: impl Into<String>, coeffs: Vec<(usize, Q)>, sense: Sense, rhs: Q) {
        let coeffs = merge_terms(coeffs);
        self.rows.push(Row { name: name.into(), coeffs, sense, rhs });
    }

    pub fn set_objective(&mut self, coeffs: Vec<(usize, Q)>) {
        self.objective = merge_terms(coeffs);
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Rows whose name starts with `prefix`.
    pub fn count_rows(&self, prefix: &str) -> usize {
        self.rows.iter().filter(|r| r.name.starts_with(prefix)).count()
    }

    pub fn count_vars(&self, prefix: &str) -> usize {
        self.vars.iter().filter(|v| v.name.starts_with(prefix)).count()
    }

    pub fn objective_value(&self, x: &[Q]) -> Q {
        self.objective.iter().map(|(k, c)| c * &x[*k]).sum()
    }

    /// Returns the names of rows or bounds violated by `x` (exact check).
    pub fn violations(&self, x: &[Q]) -> Vec<String> {
        let mut out = Vec::new();
        for (k, v) in self.vars.iter().enumerate() {
            if v.lower.as_ref().is_some_and(|l| &x[k] < l) || v.upper.as_ref().is_some_and(|u| &x[k] > u) {
                out.push(format!("bound:{}", v.name));
            }
        }
        for r in &self.rows {
            let lhs: Q = r.coeffs.iter().map(|(k, c)| c * &x[*k]).sum();
            let ok = match r.sense {
                Sense::Le => lhs <= r.rhs,
                Sense::Ge => lhs >= r.rhs,
                Sense::Eq => lhs == r.rhs,
            };
            if !ok {
                out.push(r.name.clone());
            }
        }
        out
    }

    /// CPLEX LP text format, for cross-checking with external solvers.
    /// Coefficients are written as decimals, so the export is not exact.
    pub fn to_lp_format(&self) -> String {
        let mut s = String::from("\\ exported by symauction\nMaximize\n obj:");
        let term = |s: &mut String, c: &Q, name: &str| {
            let f = rational::to_f64(c);
            let _ = write!(s, " {} {:.17} {}", if f < 0.0 { "-" } else { "+" }, f.abs(), sanitize(name));
        };
        if self.objective.is_empty() {
            let _ = write!(s, " 0 {}", sanitize(&self.vars.first().map(|v| v.name.clone()).unwrap_or_default()));
        }
        for (k, c) in &self.objective {
            term(&mut s, c, &self.vars[*k].name);
        }
        s.push_str("\nSubject To\n");
        for (ri, r) in self.rows.iter().enumerate() {
            let _ = write!(s, " r{}_{}:", ri, sanitize(&r.name));
            for (k, c) in &r.coeffs {
                term(&mut s, c, &self.vars[*k].name);
            }
            let op = match r.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(s, " {} {:.17}", op, rational::to_f64(&r.rhs));
        }
        s.push_str("Bounds\n");
        for v in &self.vars {
            let name = sanitize(&v.name);
            match (&v.lower, &v.upper) {
                (None, None) => {
                    let _ = writeln!(s, " {name} free");
                }
                (Some(l), None) => {
                    let _ = writeln!(s, " {name} >= {:.17}", rational::to_f64(l));
                }
                (None, Some(u)) => {
                    let _ = writeln!(s, " -inf <= {name} <= {:.17}", rational::to_f64(u));
                }
                (Some(l), Some(u)) => {
                    let _ = writeln!(s, " {:.17} <= {name} <= {:.17}", rational::to_f64(l), rational::to_f64(u));
                }
            }
        }
        s.push_str("End\n");
        s
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect()
}

pub(crate) fn merge_terms(mut coeffs: Vec<(usize, Q)>) -> Vec<(usize, Q)> {
    use num_traits::Zero;
    coeffs.sort_by_key(|(k, _)| *k);
    let mut out: Vec<(usize, Q)> = Vec::with_capacity(coeffs.len());
    for (k, c) in coeffs {
        match out.last_mut() {
            Some((lk, lc)) if *lk == k => *lc += c,
            _ => out.push((k, c)),
        }
    }
    out.retain(|(_, c)| !c.is_zero());
    out
}
