//! CPLEX-style LP text. Every continuous variable gets an explicit bounds
//! line, so parsing never depends on LP default bounds.

use std::fmt::Write as _;

use super::model::{MilpModel, Relation, Sense, VarId, VarKind};
use super::MilpError;

fn num(x: f64) -> String {
    if x == f64::INFINITY {
        "+inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:?}")
    }
}

fn write_terms(out: &mut String, model: &MilpModel, terms: &[(VarId, f64)]) {
    for (i, (v, c)) in terms.iter().enumerate() {
        let name = &model.variable(*v).name;
        if i == 0 {
            if c.is_sign_negative() {
                let _ = write!(out, " - {} {name}", num(-c));
            } else {
                let _ = write!(out, " {} {name}", num(*c));
            }
        } else if c.is_sign_negative() {
            let _ = write!(out, " - {} {name}", num(-c));
        } else {
            let _ = write!(out, " + {} {name}", num(*c));
        }
    }
}

pub fn export_lp(model: &MilpModel) -> String {
    let mut out = String::from("\\ MILP model\n");
    out.push_str(match model.objective().sense {
        Sense::Minimize => "Minimize\n",
        Sense::Maximize => "Maximize\n",
    });
    out.push_str(" obj:");
    let obj = model.objective();
    write_terms(&mut out, model, &obj.terms);
    if obj.constant != 0.0 || obj.terms.is_empty() {
        let c = obj.constant;
        if obj.terms.is_empty() {
            let _ = write!(out, " {}", num(c));
        } else if c.is_sign_negative() {
            let _ = write!(out, " - {}", num(-c));
        } else {
            let _ = write!(out, " + {}", num(c));
        }
    }
    out.push_str("\nSubject To\n");
    for c in model.constraints() {
        let _ = write!(out, " {}:", c.name);
        if c.terms.is_empty() {
            // An empty left-hand side still needs a variable-free expression.
            out.push_str(" 0");
        }
        write_terms(&mut out, model, &c.terms);
        let rel = match c.relation {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        };
        let _ = writeln!(out, " {rel} {}", num(c.rhs));
    }
    // Every variable is listed here, in declaration order; the parser uses
    // this section to restore the order.
    if model.n_vars() > 0 {
        out.push_str("Bounds\n");
        for v in model.variables() {
            if v.lb == f64::NEG_INFINITY && v.ub == f64::INFINITY {
                let _ = writeln!(out, " {} free", v.name);
            } else {
                let _ = writeln!(out, " {} <= {} <= {}", num(v.lb), v.name, num(v.ub));
            }
        }
    }
    let bins: Vec<_> = model
        .variables()
        .iter()
        .filter(|v| v.kind == VarKind::Binary)
        .map(|v| v.name.as_str())
        .collect();
    if !bins.is_empty() {
        out.push_str("Binaries\n");
        for b in bins {
            let _ = writeln!(out, " {b}");
        }
    }
    out.push_str("End\n");
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Start,
    Objective,
    Constraints,
    Bounds,
    Binaries,
    End,
}

fn perr(line: usize, message: impl Into<String>) -> MilpError {
    MilpError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num(tok: &str, line: usize) -> Result<f64, MilpError> {
    match tok.to_ascii_lowercase().as_str() {
        "+inf" | "inf" | "+infinity" | "infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse()
            .map_err(|_| perr(line, format!("expected a number, found '{tok}'"))),
    }
}

fn is_number(tok: &str) -> bool {
    tok.parse::<f64>().is_ok()
        || matches!(
            tok.to_ascii_lowercase().as_str(),
            "+inf" | "-inf" | "inf" | "infinity"
        )
}

fn is_sign(tok: &str) -> bool {
    tok == "+" || tok == "-"
}

/// Linear expression as (name, coefficient) pairs plus a constant.
fn parse_expr(toks: &[&str], line: usize) -> Result<(Vec<(String, f64)>, f64), MilpError> {
    let mut terms = Vec::new();
    let mut constant = 0.0;
    let mut i = 0;
    while i < toks.len() {
        let mut sign = 1.0;
        while i < toks.len() && is_sign(toks[i]) {
            if toks[i] == "-" {
                sign = -sign;
            }
            i += 1;
        }
        let Some(tok) = toks.get(i) else {
            return Err(perr(line, "dangling sign"));
        };
        i += 1;
        if is_number(tok) {
            let c = sign * parse_num(tok, line)?;
            match toks.get(i) {
                Some(name) if !is_sign(name) && !is_number(name) => {
                    terms.push((name.to_string(), c));
                    i += 1;
                }
                _ => constant += c,
            }
        } else {
            terms.push((tok.to_string(), sign));
        }
    }
    Ok((terms, constant))
}

fn tokenize(s: &str) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let ident = |c: char| c.is_ascii_alphanumeric() || "_.[]".contains(c);
    while i < chars.len() {
        let c = chars[i];
        let begin = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        } else if "<>=".contains(c) {
            i += 1;
            if i < chars.len() && "<>=".contains(chars[i]) {
                i += 1;
            }
        } else if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && ident(chars[i]) {
                i += 1;
            }
        } else {
            i += 1;
        }
        out.push(chars[begin..i].iter().collect());
    }
    out
}

/// Fold a sign into the number that follows it where the sign cannot be a
/// binary operator (bounds lines only hold single numbers).
fn merge_signs(toks: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut pending: Option<String> = None;
    for t in toks {
        if let Some(sign) = pending.take() {
            out.push(format!("{sign}{t}"));
        } else if is_sign(&t) {
            pending = Some(t);
        } else {
            out.push(t);
        }
    }
    out.extend(pending);
    out
}

fn relation(tok: &str, line: usize) -> Result<Relation, MilpError> {
    match tok {
        "<=" | "=<" | "<" => Ok(Relation::Le),
        ">=" | "=>" | ">" => Ok(Relation::Ge),
        "=" => Ok(Relation::Eq),
        _ => Err(perr(line, format!("expected a relation, found '{tok}'"))),
    }
}

struct PendingVar {
    name: String,
    binary: bool,
    lb: Option<f64>,
    ub: Option<f64>,
}

/// Parse LP text produced by [`export_lp`] (and simple hand-written files in
/// the same dialect). Variables are declared in order of first appearance.
pub fn parse_lp(text: &str) -> Result<MilpModel, MilpError> {
    let mut section = Section::Start;
    let mut sense = Sense::Minimize;
    let mut vars: Vec<PendingVar> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut obj_text = String::new();
    let mut obj_line = 0;
    let mut rows: Vec<(usize, String)> = Vec::new();
    let mut get = |name: &str, vars: &mut Vec<PendingVar>| -> usize {
        *index.entry(name.to_string()).or_insert_with(|| {
            vars.push(PendingVar {
                name: name.to_string(),
                binary: false,
                lb: None,
                ub: None,
            });
            vars.len() - 1
        })
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('\\').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let lower = body.to_ascii_lowercase();
        let header = match lower.as_str() {
            "minimize" | "minimise" | "min" => {
                sense = Sense::Minimize;
                Some(Section::Objective)
            }
            "maximize" | "maximise" | "max" => {
                sense = Sense::Maximize;
                Some(Section::Objective)
            }
            "subject to" | "such that" | "st" | "s.t." => Some(Section::Constraints),
            "bounds" => Some(Section::Bounds),
            "binaries" | "binary" | "bin" => Some(Section::Binaries),
            "end" => Some(Section::End),
            "generals" | "general" | "integers" => {
                return Err(perr(line, "general integer variables are not supported"))
            }
            _ => None,
        };
        if let Some(h) = header {
            section = h;
            continue;
        }
        match section {
            Section::Start => return Err(perr(line, "expected an objective section")),
            Section::End => return Err(perr(line, "content after End")),
            Section::Objective => {
                if obj_text.is_empty() {
                    obj_line = line;
                }
                obj_text.push(' ');
                obj_text.push_str(body);
            }
            Section::Constraints => {
                // Continuation lines do not carry a name or relation yet.
                match rows.last_mut() {
                    Some((_, prev)) if !prev.contains(['<', '>', '=']) => {
                        prev.push(' ');
                        prev.push_str(body);
                    }
                    _ => rows.push((line, body.to_string())),
                }
            }
            Section::Bounds => {
                let toks = merge_signs(tokenize(body));
                let toks: Vec<&str> = toks.iter().map(String::as_str).collect();
                match toks.as_slice() {
                    [name, free] if free.eq_ignore_ascii_case("free") => {
                        let v = get(name, &mut vars);
                        vars[v].lb = Some(f64::NEG_INFINITY);
                        vars[v].ub = Some(f64::INFINITY);
                    }
                    [lo, r1, name, r2, hi] => {
                        if relation(r1, line)? != Relation::Le
                            || relation(r2, line)? != Relation::Le
                        {
                            return Err(perr(line, "expected 'lb <= x <= ub'"));
                        }
                        let v = get(name, &mut vars);
                        vars[v].lb = Some(parse_num(lo, line)?);
                        vars[v].ub = Some(parse_num(hi, line)?);
                    }
                    [a, r, b] => {
                        let rel = relation(r, line)?;
                        let (name, val, rel) = if is_number(a) {
                            let flipped = match rel {
                                Relation::Le => Relation::Ge,
                                Relation::Ge => Relation::Le,
                                Relation::Eq => Relation::Eq,
                            };
                            (*b, parse_num(a, line)?, flipped)
                        } else {
                            (*a, parse_num(b, line)?, rel)
                        };
                        let v = get(name, &mut vars);
                        match rel {
                            Relation::Le => vars[v].ub = Some(val),
                            Relation::Ge => vars[v].lb = Some(val),
                            Relation::Eq => {
                                vars[v].lb = Some(val);
                                vars[v].ub = Some(val);
                            }
                        }
                    }
                    _ => return Err(perr(line, "unrecognized bounds line")),
                }
            }
            Section::Binaries => {
                for name in body.split_whitespace() {
                    let v = get(name, &mut vars);
                    vars[v].binary = true;
                }
            }
        }
    }
    if section != Section::End {
        return Err(perr(text.lines().count().max(1), "missing End"));
    }

    let (obj_terms, obj_const) = {
        let rest = obj_text.trim();
        let rest = match rest.split_once(':') {
            Some((_, r)) => r,
            None => rest,
        };
        let toks = tokenize(rest);
        let toks: Vec<&str> = toks.iter().map(String::as_str).collect();
        parse_expr(&toks, obj_line)?
    };
    let mut parsed_rows = Vec::new();
    for (line, row) in &rows {
        let (name, rest) = match row.split_once(':') {
            Some((n, r)) => (n.trim().to_string(), r),
            None => (String::new(), row.as_str()),
        };
        let toks = tokenize(rest);
        let toks: Vec<&str> = toks.iter().map(String::as_str).collect();
        let pos = toks
            .iter()
            .position(|t| relation(t, *line).is_ok())
            .ok_or_else(|| perr(*line, "constraint without relation"))?;
        let rel = relation(toks[pos], *line)?;
        let (terms, lhs_const) = parse_expr(&toks[..pos], *line)?;
        let (rhs_terms, rhs) = parse_expr(&toks[pos + 1..], *line)?;
        if !rhs_terms.is_empty() {
            return Err(perr(
                *line,
                "variables on the right-hand side are not supported",
            ));
        }
        parsed_rows.push((name, terms, rel, rhs - lhs_const));
    }

    // Declaration order: bounds/binaries sections first, then first use.
    let mut ordered: Vec<PendingVar> = Vec::new();
    let mut order_index = std::collections::HashMap::new();
    let mut touch = |name: &str, ordered: &mut Vec<PendingVar>| -> usize {
        *order_index.entry(name.to_string()).or_insert_with(|| {
            ordered.push(PendingVar {
                name: name.to_string(),
                binary: false,
                lb: None,
                ub: None,
            });
            ordered.len() - 1
        })
    };
    for v in &vars {
        touch(&v.name, &mut ordered);
    }
    let mut obj_ids = Vec::new();
    for (n, c) in &obj_terms {
        obj_ids.push((touch(n, &mut ordered), *c));
    }
    let mut row_ids = Vec::new();
    for (_, terms, _, _) in &parsed_rows {
        row_ids.push(
            terms
                .iter()
                .map(|(n, c)| (touch(n, &mut ordered), *c))
                .collect::<Vec<_>>(),
        );
    }
    for v in &vars {
        let k = touch(&v.name, &mut ordered);
        ordered[k].binary = v.binary;
        ordered[k].lb = v.lb;
        ordered[k].ub = v.ub;
    }

    let mut model = MilpModel::new();
    for v in &ordered {
        if v.binary {
            let id = model.add_binary(&v.name);
            model.set_bounds(id, v.lb.unwrap_or(0.0), v.ub.unwrap_or(1.0));
        } else {
            model.add_continuous(&v.name, v.lb.unwrap_or(0.0), v.ub.unwrap_or(f64::INFINITY));
        }
    }
    for ((name, _, rel, rhs), ids) in parsed_rows.into_iter().zip(row_ids) {
        let terms = ids.into_iter().map(|(k, c)| (VarId(k), c)).collect();
        model.add_constraint(&name, terms, rel, rhs);
    }
    model.set_objective(
        sense,
        obj_ids.into_iter().map(|(k, c)| (VarId(k), c)).collect(),
        obj_const,
    );
    model.rebuild_names();
    model.validate()?;
    Ok(model)
}
