use std::fmt::Write as _;

use super::score::Condition;

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionResult {
    pub condition: Condition,
    /// `None` when the condition had no valid triple.
    pub error: Option<f64>,
    pub triples: usize,
    /// Number of `(a, b, speaker, context)` cells scored.
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbxReport {
    pub conditions: Vec<ConditionResult>,
    /// Arithmetic mean over non-empty conditions.
    pub mean: f64,
}

fn pct(e: Option<f64>) -> String {
    e.map_or_else(|| "-".into(), |v| format!("{:.2}", 100.0 * v))
}

impl AbxReport {
    pub fn error(&self, condition: &Condition) -> Option<f64> {
        self.conditions.iter().find(|c| &c.condition == condition).and_then(|c| c.error)
    }

    /// Human-readable table, errors in percent.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<48} {:>8} {:>10} {:>8}\n", "condition", "error %", "triples", "cells");
        for c in &self.conditions {
            writeln!(s, "{:<48} {:>8} {:>10} {:>8}", c.condition.to_string(), pct(c.error), c.triples, c.cells)
                .expect("writing to a string");
        }
        writeln!(s, "{:<48} {:>8}", "mean", pct(Some(self.mean))).expect("writing to a string");
        s
    }

    /// `key = value` lines, one group per condition, errors as fractions.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for c in &self.conditions {
            let key = c.condition.to_string().replace('/', ".");
            match c.error {
                Some(e) => writeln!(s, "{key}.error = {e}"),
                None => writeln!(s, "{key}.error = empty"),
            }
            .expect("writing to a string");
            writeln!(s, "{key}.triples = {}\n{key}.cells = {}", c.triples, c.cells).expect("writing to a string");
        }
        writeln!(s, "mean = {}", self.mean).expect("writing to a string");
        s
    }
}

/// Side-by-side errors of several reports over the union of their
/// conditions, in percent.
pub fn comparison_table(names: &[String], reports: &[AbxReport]) -> String {
    let mut conditions: Vec<Condition> = Vec::new();
    for r in reports {
        for c in &r.conditions {
            if !conditions.contains(&c.condition) {
                conditions.push(c.condition.clone());
            }
        }
    }
    let mut s = format!("{:<48}", "condition");
    for n in names {
        write!(s, " {n:>12}").expect("writing to a string");
    }
    s.push('\n');
    for c in &conditions {
        write!(s, "{:<48}", c.to_string()).expect("writing to a string");
        for r in reports {
            write!(s, " {:>12}", pct(r.error(c))).expect("writing to a string");
        }
        s.push('\n');
    }
    write!(s, "{:<48}", "mean").expect("writing to a string");
    for r in reports {
        write!(s, " {:>12}", pct(Some(r.mean))).expect("writing to a string");
    }
    s.push('\n');
    s
}
