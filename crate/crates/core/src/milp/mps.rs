//! Free-format MPS export and a plain name/value solution reader.

use super::{MilpModel, MilpSolution, SolveStatus};
use crate::error::{Error, Result};
use crate::model::Sense;
use std::collections::HashMap;
use std::fmt::Write as _;

/// Serializes a model as free-format MPS with ROWS/COLUMNS/RHS/BOUNDS
/// sections. Integer columns are wrapped in INTORG/INTEND markers and binary
/// variables additionally emitted as BV bounds.
pub fn export_mps(model: &MilpModel) -> Result<String> {
    let mut seen = HashMap::new();
    for v in &model.vars {
        if seen.insert(v.name.as_str(), ()).is_some() {
            return Err(Error::InvalidModel(format!(
                "duplicate variable name {:?}",
                v.name
            )));
        }
    }
    seen.clear();
    for c in &model.constrs {
        if seen.insert(c.name.as_str(), ()).is_some() {
            return Err(Error::InvalidModel(format!(
                "duplicate constraint name {:?}",
                c.name
            )));
        }
    }

    let mut out = String::new();
    writeln!(
        out,
        "NAME {}",
        if model.name.is_empty() {
            "MODEL"
        } else {
            &model.name
        }
    )
    .unwrap();
    if model.sense == Sense::Maximize {
        writeln!(out, "OBJSENSE\n    MAX").unwrap();
    }
    writeln!(out, "ROWS").unwrap();
    writeln!(out, " N  OBJ").unwrap();
    for c in &model.constrs {
        let tag = match c.rel {
            super::Rel::Le => "L",
            super::Rel::Eq => "E",
            super::Rel::Ge => "G",
        };
        writeln!(out, " {tag}  {}", c.name).unwrap();
    }

    // Column-wise coefficients: objective entry plus constraint entries.
    let mut col_entries: Vec<Vec<(String, f64)>> = vec![Vec::new(); model.vars.len()];
    for (j, v) in model.vars.iter().enumerate() {
        if v.obj != 0.0 {
            col_entries[j].push(("OBJ".to_string(), v.obj));
        }
    }
    for c in &model.constrs {
        for &(j, a) in &c.terms {
            if a != 0.0 {
                col_entries[j].push((c.name.clone(), a));
            }
        }
    }

    writeln!(out, "COLUMNS").unwrap();
    let write_col = |out: &mut String, name: &str, entries: &[(String, f64)]| {
        if entries.is_empty() {
            // Keep the column present so solution files can reference it.
            writeln!(out, "    {name}  OBJ  0").unwrap();
            return;
        }
        for pair in entries.chunks(2) {
            let mut line = format!("    {name}");
            for (row, val) in pair {
                write!(line, "  {row}  {val}").unwrap();
            }
            writeln!(out, "{line}").unwrap();
        }
    };
    for (j, v) in model.vars.iter().enumerate() {
        if !v.integer {
            write_col(&mut out, &v.name, &col_entries[j]);
        }
    }
    if model.vars.iter().any(|v| v.integer) {
        writeln!(out, "    MARKER  M1  'MARKER'  'INTORG'").unwrap();
        for (j, v) in model.vars.iter().enumerate() {
            if v.integer {
                write_col(&mut out, &v.name, &col_entries[j]);
            }
        }
        writeln!(out, "    MARKER  M2  'MARKER'  'INTEND'").unwrap();
    }

    writeln!(out, "RHS").unwrap();
    for c in &model.constrs {
        if c.rhs != 0.0 {
            writeln!(out, "    RHS  {}  {}", c.name, c.rhs).unwrap();
        }
    }

    writeln!(out, "BOUNDS").unwrap();
    for v in &model.vars {
        let binary = v.integer && v.lower == 0.0 && v.upper == 1.0;
        if binary {
            writeln!(out, " BV BND  {}", v.name).unwrap();
            continue;
        }
        if v.lower == v.upper {
            writeln!(out, " FX BND  {}  {}", v.name, v.lower).unwrap();
            continue;
        }
        if v.lower.is_infinite() {
            writeln!(out, " MI BND  {}", v.name).unwrap();
        } else if v.lower != 0.0 || v.integer {
            writeln!(out, " LO BND  {}  {}", v.name, v.lower).unwrap();
        }
        if v.upper.is_finite() {
            writeln!(out, " UP BND  {}  {}", v.name, v.upper).unwrap();
        } else if v.integer {
            writeln!(out, " PL BND  {}", v.name).unwrap();
        }
    }
    writeln!(out, "ENDATA").unwrap();
    Ok(out)
}

/// Parses a whitespace-separated name/value solution listing against `model`.
///
/// Lines starting with `#` are comments. Missing variables default to their
/// lower bound. Unknown names and malformed lines are errors.
pub fn read_solution(model: &MilpModel, text: &str) -> Result<MilpSolution> {
    let index: HashMap<&str, usize> = model
        .vars
        .iter()
        .enumerate()
        .map(|(j, v)| (v.name.as_str(), j))
        .collect();
    let mut values: Vec<f64> = model
        .vars
        .iter()
        .map(|v| if v.lower.is_finite() { v.lower } else { 0.0 })
        .collect();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected `name value`, got {raw:?}"),
            });
        }
        let j = *index.get(tokens[0]).ok_or_else(|| Error::Parse {
            line: lineno + 1,
            message: format!("unknown variable name {:?}", tokens[0]),
        })?;
        let value: f64 = tokens[1].parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            message: format!("cannot parse value {:?}", tokens[1]),
        })?;
        values[j] = value;
    }

    let objective: f64 = model.vars.iter().zip(&values).map(|(v, x)| v.obj * x).sum();
    let bound = match model.sense {
        Sense::Maximize => f64::INFINITY,
        Sense::Minimize => f64::NEG_INFINITY,
    };
    Ok(MilpSolution {
        status: SolveStatus::Feasible,
        values,
        objective,
        bound,
        seconds: 0.0,
        nodes: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::Rel;

    fn sample_model() -> MilpModel {
        let mut m = MilpModel::new("kp", Sense::Maximize);
        let x1 = m.add_binary("x1", 3.0).unwrap();
        let x2 = m.add_binary("x2", 2.0).unwrap();
        m.add_constr("cap", vec![(x1, 2.0), (x2, 2.0)], Rel::Le, 3.0)
            .unwrap();
        m
    }

    #[test]
    fn mps_has_required_sections() {
        let mut m = MilpModel::new("tiny", Sense::Minimize);
        m.add_continuous("x", 0.0, 1.0, 1.0).unwrap();
        let doc = export_mps(&m).unwrap();
        assert!(doc.contains("NAME"));
        assert!(doc.contains("ROWS"));
        assert!(doc.contains("COLUMNS"));
        assert!(doc.contains("ENDATA"));
    }

    #[test]
    fn binary_vars_emitted_as_bv() {
        let doc = export_mps(&sample_model()).unwrap();
        assert!(doc.contains(" BV BND  x1"));
        assert!(doc.contains(" BV BND  x2"));
        assert!(doc.contains("'INTORG'"));
        assert!(doc.contains("'INTEND'"));
        assert!(doc.contains("OBJSENSE"));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut m = MilpModel::new("dup", Sense::Minimize);
        m.add_continuous("x", 0.0, 1.0, 1.0).unwrap();
        m.add_continuous("x", 0.0, 1.0, 1.0).unwrap();
        assert!(export_mps(&m).is_err());
    }

    #[test]
    fn solution_reader_assembles_values() {
        let m = sample_model();
        let sol = read_solution(&m, "# a comment\nx1 1\nx2 0\n").unwrap();
        assert_eq!(sol.values, vec![1.0, 0.0]);
        assert!((sol.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_solution_defaults_to_lower_bounds() {
        let m = sample_model();
        let sol = read_solution(&m, "").unwrap();
        assert_eq!(sol.values, vec![0.0, 0.0]);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn malformed_and_unknown_lines_are_errors() {
        let m = sample_model();
        assert!(read_solution(&m, "x1\n").is_err());
        assert!(read_solution(&m, "x1 1 2\n").is_err());
        assert!(read_solution(&m, "bogus 1\n").is_err());
        assert!(read_solution(&m, "x1 abc\n").is_err());
    }
}
