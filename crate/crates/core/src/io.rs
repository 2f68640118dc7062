//! JSON readers and writers for matrices, states and model files.
//!
//! Errors carry JSON-pointer paths (`/hamiltonian/terms/1/matrix/0/1`) to
//! the offending field.

use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CSparse, OperatorHandle, C64};
use crate::model::{preset_oat, Coefficient, DensityOperator, JumpChannel, LindbladModel, LinearHamiltonian};

const HERMITIAN_TOL: f64 = 1e-12;

fn field<'a>(v: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::parse(path, format!("missing field \"{key}\"")))
}

fn number(v: &Value, path: &str) -> Result<f64> {
    let x = v
        .as_f64()
        .ok_or_else(|| Error::parse(path, format!("expected a number, got {v}")))?;
    if !x.is_finite() {
        return Err(Error::parse(path, "non-finite number"));
    }
    Ok(x)
}

fn index(v: &Value, path: &str) -> Result<usize> {
    v.as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| Error::parse(path, format!("expected a non-negative integer, got {v}")))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| Error::parse(path, "expected an array"))
}

/// An entry is `[re, im]` or a bare real number.
fn complex(v: &Value, path: &str) -> Result<C64> {
    if let Some(pair) = v.as_array() {
        if pair.len() != 2 {
            return Err(Error::parse(path, "complex entry must be [re, im]"));
        }
        return Ok(C64::new(
            number(&pair[0], &format!("{path}/0"))?,
            number(&pair[1], &format!("{path}/1"))?,
        ));
    }
    Ok(C64::new(number(v, path)?, 0.0))
}

/// Dense literal: array of rows, each an array of `[re, im]` entries.
pub fn parse_dense(v: &Value, path: &str) -> Result<CMatrix> {
    let rows = array(v, path)?;
    if rows.is_empty() {
        return Err(Error::parse(path, "empty matrix"));
    }
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let rp = format!("{path}/{i}");
        let entries = array(row, &rp)?;
        let parsed = entries
            .iter()
            .enumerate()
            .map(|(j, e)| complex(e, &format!("{rp}/{j}")))
            .collect::<Result<Vec<_>>>()?;
        out.push(parsed);
    }
    let width = out[0].len();
    if let Some(i) = out.iter().position(|r| r.len() != width) {
        return Err(Error::parse(
            format!("{path}/{i}"),
            format!("row has {} entries, expected {width}", out[i].len()),
        ));
    }
    CMatrix::from_rows(&out).map_err(|e| Error::parse(path, e.to_string()))
}

/// Sparse literal: `{rows, cols, triplets: [[i, j, re, im], ...]}`.
pub fn parse_sparse(v: &Value, path: &str) -> Result<CSparse> {
    let rows = index(field(v, "rows", path)?, &format!("{path}/rows"))?;
    let cols = index(field(v, "cols", path)?, &format!("{path}/cols"))?;
    let tp = format!("{path}/triplets");
    let mut triplets = Vec::new();
    for (n, t) in array(field(v, "triplets", path)?, &tp)?.iter().enumerate() {
        let p = format!("{tp}/{n}");
        let t = array(t, &p)?;
        if t.len() != 4 {
            return Err(Error::parse(p, "triplet must be [i, j, re, im]"));
        }
        let i = index(&t[0], &format!("{p}/0"))?;
        let j = index(&t[1], &format!("{p}/1"))?;
        if i >= rows || j >= cols {
            return Err(Error::parse(p, format!("index ({i}, {j}) outside {rows}x{cols}")));
        }
        let z = C64::new(number(&t[2], &format!("{p}/2"))?, number(&t[3], &format!("{p}/3"))?);
        triplets.push((i, j, z));
    }
    CSparse::from_triplets(rows, cols, &triplets).map_err(|e| Error::parse(path, e.to_string()))
}

/// Either literal form.
pub fn parse_operator(v: &Value, path: &str) -> Result<OperatorHandle> {
    if v.is_object() {
        Ok(OperatorHandle::Sparse(parse_sparse(v, path)?))
    } else {
        Ok(OperatorHandle::Dense(parse_dense(v, path)?))
    }
}

pub fn matrix_to_json(m: &CMatrix) -> Value {
    Value::Array(
        (0..m.rows())
            .map(|i| Value::Array(m.row(i).iter().map(|z| json!([z.re, z.im])).collect()))
            .collect(),
    )
}

fn square(op: &OperatorHandle, dim: usize, path: &str) -> Result<()> {
    let (r, c) = op.shape();
    if r != dim || c != dim {
        return Err(Error::parse(path, format!("expected {dim}x{dim}, got {r}x{c}")));
    }
    Ok(())
}

fn coefficient(v: &Value, path: &str) -> Result<Coefficient> {
    if let Some(s) = v.as_str() {
        let k = s
            .strip_prefix("param:")
            .and_then(|k| k.parse::<usize>().ok())
            .ok_or_else(|| Error::parse(path, format!("expected \"param:<k>\" or a number, got \"{s}\"")))?;
        return Ok(Coefficient::Param(k));
    }
    Ok(Coefficient::Constant(number(v, path)?))
}

/// Builds a model from its JSON definition.
pub fn model_from_json(v: &Value) -> Result<LindbladModel> {
    let dim = index(field(v, "dimension", "")?, "/dimension")?;
    if dim < 2 || !dim.is_power_of_two() {
        return Err(Error::parse("/dimension", format!("{dim} is not a power of two ≥ 2")));
    }
    let mut channels = Vec::new();
    if let Some(chs) = v.get("channels") {
        for (j, ch) in array(chs, "/channels")?.iter().enumerate() {
            let p = format!("/channels/{j}");
            let gamma = number(field(ch, "gamma", &p)?, &format!("{p}/gamma"))?;
            if gamma < 0.0 {
                return Err(Error::parse(format!("{p}/gamma"), format!("negative rate {gamma}")));
            }
            let mp = format!("{p}/matrix");
            let op = parse_operator(field(ch, "matrix", &p)?, &mp)?;
            square(&op, dim, &mp)?;
            channels.push(JumpChannel::new(gamma, op).map_err(|e| Error::parse(&p, e.to_string()))?);
        }
    }

    let h = field(v, "hamiltonian", "")?;
    let kind = field(h, "kind", "/hamiltonian")?
        .as_str()
        .ok_or_else(|| Error::parse("/hamiltonian/kind", "expected a string"))?;
    match kind {
        "preset_oat" => {
            let gamma = match h.get("decay") {
                Some(g) => number(g, "/hamiltonian/decay")?,
                None => 0.0,
            };
            if gamma < 0.0 {
                return Err(Error::parse("/hamiltonian/decay", format!("negative rate {gamma}")));
            }
            let n = dim.trailing_zeros() as usize;
            let preset = preset_oat(n, gamma).map_err(|e| Error::parse("/hamiltonian", e.to_string()))?;
            let mut all = preset.channels().to_vec();
            all.extend(channels);
            LindbladModel::new(preset.hamiltonian().clone(), all)
        }
        "explicit" => {
            let tp = "/hamiltonian/terms";
            let mut terms = Vec::new();
            let mut param_count = 0;
            for (m, t) in array(field(h, "terms", "/hamiltonian")?, tp)?.iter().enumerate() {
                let p = format!("{tp}/{m}");
                let c = coefficient(field(t, "coefficient", &p)?, &format!("{p}/coefficient"))?;
                if let Coefficient::Param(k) = c {
                    param_count = param_count.max(k + 1);
                }
                let mp = format!("{p}/matrix");
                let op = parse_operator(field(t, "matrix", &p)?, &mp)?;
                square(&op, dim, &mp)?;
                let res = op.hermiticity_residual();
                if res > HERMITIAN_TOL {
                    return Err(Error::parse(mp, format!("term is not Hermitian (residual {res:e})")));
                }
                terms.push((c, op));
            }
            if terms.is_empty() {
                return Err(Error::parse(tp, "at least one term is required"));
            }
            let ham = LinearHamiltonian::new(dim, param_count, terms)
                .map_err(|e| Error::parse("/hamiltonian", e.to_string()))?;
            LindbladModel::new(Arc::new(ham), channels)
        }
        other => Err(Error::parse(
            "/hamiltonian/kind",
            format!("unknown kind \"{other}\" (expected \"preset_oat\" or \"explicit\")"),
        )),
    }
}

/// A density operator from a dense literal (or `{"matrix": ...}`).
pub fn state_from_json(v: &Value) -> Result<DensityOperator> {
    let (m, path) = match v.get("matrix") {
        Some(m) => (m, "/matrix"),
        None => (v, ""),
    };
    let mat = parse_operator(m, path)?.to_dense();
    DensityOperator::new(mat).map_err(|e| Error::parse(if path.is_empty() { "/" } else { path }, e.to_string()))
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::parse(path.display().to_string(), format!("cannot read file: {e}")))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), format!("invalid JSON: {e}")))
}

/// Prefixes a parse error's pointer with the file it came from.
fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { path: p, message } => Error::Parse {
            path: format!("{}#{p}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn load_model(path: &Path) -> Result<LindbladModel> {
    let v = read_json(path)?;
    in_file(path, model_from_json(&v))
}

pub fn load_state(path: &Path) -> Result<DensityOperator> {
    let v = read_json(path)?;
    in_file(path, state_from_json(&v))
}

pub fn load_operator(path: &Path) -> Result<OperatorHandle> {
    let v = read_json(path)?;
    let m = v.get("matrix").unwrap_or(&v);
    in_file(path, parse_operator(m, ""))
}
