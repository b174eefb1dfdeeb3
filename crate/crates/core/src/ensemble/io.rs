//! JSON persistence and the boosted-tree text-dump converter.

use std::collections::HashMap;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{Ensemble, EnsembleError, Tree, TreeNode};

fn schema(path: &str, message: impl Into<String>) -> EnsembleError {
    EnsembleError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

fn node_to_json(node: &TreeNode) -> Value {
    match node {
        TreeNode::Leaf(scores) => json!({ "leaf": scores }),
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => json!({
            "feature": feature,
            "threshold": threshold,
            "left": node_to_json(left),
            "right": node_to_json(right),
        }),
    }
}

pub fn ensemble_to_json(e: &Ensemble) -> Value {
    let mut obj = Map::new();
    obj.insert("n_features".into(), json!(e.n_features()));
    obj.insert("n_classes".into(), json!(e.n_classes()));
    obj.insert("weights".into(), json!(e.weights()));
    if e.has_bias() {
        obj.insert("bias".into(), json!(e.bias()));
    }
    obj.insert(
        "trees".into(),
        Value::Array(
            e.trees()
                .iter()
                .map(|t| node_to_json(&t.to_node()))
                .collect(),
        ),
    );
    Value::Object(obj)
}

fn get_usize(obj: &Map<String, Value>, key: &str, path: &str) -> Result<usize, EnsembleError> {
    let p = format!("{path}.{key}");
    let v = obj.get(key).ok_or_else(|| schema(&p, "missing key"))?;
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| schema(&p, "expected a non-negative integer"))
}

fn get_f64(v: &Value, path: &str) -> Result<f64, EnsembleError> {
    v.as_f64().ok_or_else(|| schema(path, "expected a number"))
}

fn get_f64_array(v: &Value, path: &str) -> Result<Vec<f64>, EnsembleError> {
    let arr = v
        .as_array()
        .ok_or_else(|| schema(path, "expected an array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| get_f64(x, &format!("{path}[{i}]")))
        .collect()
}

fn node_from_json(v: &Value, path: &str) -> Result<TreeNode, EnsembleError> {
    let obj = v
        .as_object()
        .ok_or_else(|| schema(path, "expected an object"))?;
    if let Some(leaf) = obj.get("leaf") {
        return Ok(TreeNode::Leaf(get_f64_array(
            leaf,
            &format!("{path}.leaf"),
        )?));
    }
    let feature = get_usize(obj, "feature", path)?;
    let tp = format!("{path}.threshold");
    let threshold = get_f64(
        obj.get("threshold")
            .ok_or_else(|| schema(&tp, "missing key"))?,
        &tp,
    )?;
    let lp = format!("{path}.left");
    let rp = format!("{path}.right");
    let left = node_from_json(
        obj.get("left").ok_or_else(|| schema(&lp, "missing key"))?,
        &lp,
    )?;
    let right = node_from_json(
        obj.get("right").ok_or_else(|| schema(&rp, "missing key"))?,
        &rp,
    )?;
    Ok(TreeNode::split(feature, threshold, left, right))
}

pub fn ensemble_from_json(v: &Value) -> Result<Ensemble, EnsembleError> {
    let obj = v
        .as_object()
        .ok_or_else(|| schema("$", "expected an object"))?;
    let n_features = get_usize(obj, "n_features", "$")?;
    let n_classes = get_usize(obj, "n_classes", "$")?;
    let trees_v = obj
        .get("trees")
        .ok_or_else(|| schema("$.trees", "missing key"))?;
    let arr = trees_v
        .as_array()
        .ok_or_else(|| schema("$.trees", "expected an array"))?;
    let trees = arr
        .iter()
        .enumerate()
        .map(|(i, t)| node_from_json(t, &format!("$.trees[{i}]")).map(|n| Tree::from_node(&n)))
        .collect::<Result<Vec<_>, _>>()?;
    let weights = match obj.get("weights") {
        Some(w) => get_f64_array(w, "$.weights")?,
        None => vec![1.0; trees.len()],
    };
    let bias = match obj.get("bias") {
        Some(b) => get_f64_array(b, "$.bias")?,
        None => vec![0.0; n_classes],
    };
    Ensemble::with_bias(trees, weights, n_features, n_classes, bias)
}

pub fn save_ensemble(e: &Ensemble, path: impl AsRef<Path>) -> Result<(), EnsembleError> {
    let text = serde_json::to_string_pretty(&ensemble_to_json(e))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_ensemble(path: impl AsRef<Path>) -> Result<Ensemble, EnsembleError> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    ensemble_from_json(&v)
}

/// Settings for [`parse_text_dump`].
#[derive(Debug, Clone)]
pub struct TextDumpOptions {
    pub n_features: usize,
    pub n_classes: usize,
    /// Raw margin added before any tree (the booster's base score in margin space).
    pub base_margin: f64,
}

#[derive(Debug)]
enum DumpNode {
    Split {
        feature: usize,
        threshold: f64,
        yes: usize,
        no: usize,
    },
    Leaf(f64),
}

fn dump_err(line: usize, message: impl Into<String>) -> EnsembleError {
    EnsembleError::Dump {
        line,
        message: message.into(),
    }
}

fn parse_feature(name: &str, line: usize) -> Result<usize, EnsembleError> {
    let digits = name.strip_prefix('f').unwrap_or(name);
    digits.parse().map_err(|_| {
        dump_err(
            line,
            format!("unsupported feature name '{name}', expected f<index>"),
        )
    })
}

fn parse_dump_line(body: &str, line: usize) -> Result<(usize, DumpNode), EnsembleError> {
    let (id, rest) = body
        .split_once(':')
        .ok_or_else(|| dump_err(line, "expected '<id>:'"))?;
    let id: usize = id
        .trim()
        .parse()
        .map_err(|_| dump_err(line, "bad node id"))?;
    let rest = rest.trim();
    if let Some(v) = rest.strip_prefix("leaf=") {
        let v = v.split(',').next().unwrap_or("");
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| dump_err(line, "bad leaf value"))?;
        return Ok((id, DumpNode::Leaf(value)));
    }
    let open = rest
        .find('[')
        .ok_or_else(|| dump_err(line, "expected '[' condition"))?;
    let close = rest
        .find(']')
        .ok_or_else(|| dump_err(line, "expected ']'"))?;
    let cond = &rest[open + 1..close];
    let (fname, t) = cond
        .split_once('<')
        .ok_or_else(|| dump_err(line, "expected '<' comparison"))?;
    let feature = parse_feature(fname.trim(), line)?;
    let t: f64 = t
        .trim()
        .parse()
        .map_err(|_| dump_err(line, "bad threshold"))?;
    let mut yes = None;
    let mut no = None;
    for kv in rest[close + 1..].split(',') {
        if let Some((k, v)) = kv.trim().split_once('=') {
            let target = || {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| dump_err(line, "bad child id"))
            };
            match k.trim() {
                "yes" => yes = Some(target()?),
                "no" => no = Some(target()?),
                _ => {}
            }
        }
    }
    let (yes, no) = yes
        .zip(no)
        .ok_or_else(|| dump_err(line, "missing yes/no children"))?;
    // `x < t` goes to `yes`; under `<=` routing that is `x <= next_down(t)`.
    Ok((
        id,
        DumpNode::Split {
            feature,
            threshold: t.next_down(),
            yes,
            no,
        },
    ))
}

fn assemble(
    nodes: &HashMap<usize, DumpNode>,
    id: usize,
    class: usize,
    n_classes: usize,
    line: usize,
    depth: usize,
) -> Result<TreeNode, EnsembleError> {
    if depth > nodes.len() {
        return Err(dump_err(line, "cycle in tree structure"));
    }
    match nodes.get(&id) {
        None => Err(dump_err(
            line,
            format!("node {id} referenced but not defined"),
        )),
        Some(DumpNode::Leaf(v)) => Ok(TreeNode::Leaf(leaf_vector(*v, class, n_classes))),
        Some(DumpNode::Split {
            feature,
            threshold,
            yes,
            no,
        }) => Ok(TreeNode::split(
            *feature,
            *threshold,
            assemble(nodes, *yes, class, n_classes, line, depth + 1)?,
            assemble(nodes, *no, class, n_classes, line, depth + 1)?,
        )),
    }
}

fn leaf_vector(v: f64, class: usize, n_classes: usize) -> Vec<f64> {
    if n_classes == 2 {
        vec![-v, v]
    } else {
        let mut out = vec![0.0; n_classes];
        out[class] = v;
        out
    }
}

/// Parse a boosted-tree text dump (`booster[i]:` headers, `id:[f<j><t] yes=..,no=..`
/// and `id:leaf=v` lines). Binary dumps become `(-v, v)` leaves; multiclass dumps
/// assign tree `i` to class `i % C`.
pub fn parse_text_dump(text: &str, opts: &TextDumpOptions) -> Result<Ensemble, EnsembleError> {
    if opts.n_classes < 2 {
        return Err(EnsembleError::InvalidParameter(
            "n_classes must be at least 2".into(),
        ));
    }
    let mut blocks: Vec<(usize, HashMap<usize, DumpNode>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.trim();
        if body.is_empty() {
            continue;
        }
        if body.starts_with("booster[") {
            blocks.push((line, HashMap::new()));
            continue;
        }
        let (id, node) = parse_dump_line(body, line)?;
        if blocks.is_empty() {
            // Dumps of a single tree sometimes omit the header.
            blocks.push((line, HashMap::new()));
        }
        let (_, map) = blocks.last_mut().expect("block exists");
        if map.insert(id, node).is_some() {
            return Err(dump_err(line, format!("duplicate node id {id}")));
        }
    }
    if blocks.is_empty() {
        return Err(dump_err(1, "no trees found"));
    }
    let per_round = if opts.n_classes == 2 {
        1
    } else {
        opts.n_classes
    };
    let trees = blocks
        .iter()
        .enumerate()
        .map(|(i, (line, map))| {
            assemble(map, 0, i % per_round, opts.n_classes, *line, 0).map(|n| Tree::from_node(&n))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let bias = leaf_vector_all(opts.base_margin, opts.n_classes);
    let m = trees.len();
    Ensemble::with_bias(trees, vec![1.0; m], opts.n_features, opts.n_classes, bias)
}

fn leaf_vector_all(v: f64, n_classes: usize) -> Vec<f64> {
    if n_classes == 2 {
        vec![-v, v]
    } else {
        vec![v; n_classes]
    }
}
