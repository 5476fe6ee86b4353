//! JSON documents for games, demand families and mixed profiles.
//!
//! Numbers are read through their decimal text so `0.1` becomes exactly
//! `1/10`; strings of the form `"num/den"` are accepted as well.

use serde_json::{json, Map, Value};

use crate::decomposition::{DemandFamily, DemandLaw};
use crate::error::{DecompositionError, GameError};
use crate::game::{CostPolynomial, Game, GroupSpec, MixedProfile};
use crate::numeric::{parse_rational, Rational};

fn schema(path: impl Into<String>, message: impl Into<String>) -> GameError {
    GameError::Schema { path: path.into(), message: message.into() }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, GameError> {
    obj.get(key).ok_or_else(|| schema(format!("{path}.{key}"), "missing field"))
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, GameError> {
    v.as_object().ok_or_else(|| schema(path, "expected an object"))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, GameError> {
    v.as_array().ok_or_else(|| schema(path, "expected a list"))
}

fn string(v: &Value, path: &str) -> Result<String, GameError> {
    v.as_str().map(str::to_owned).ok_or_else(|| schema(path, "expected a string"))
}

/// Reads a rational from a JSON number or a `"num/den"` string.
pub fn rational_value(v: &Value, path: &str) -> Result<Rational, GameError> {
    let text = match v {
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        _ => return Err(schema(path, "expected a number or \"num/den\" string")),
    };
    parse_rational(&text).ok_or_else(|| schema(path, format!("cannot parse `{text}` as a rational")))
}

fn rational_json(r: &Rational) -> Value {
    if r.is_integer() {
        match i64::try_from(r.to_integer()) {
            Ok(i) => json!(i),
            Err(_) => json!(r.to_string()),
        }
    } else {
        json!(format!("{}/{}", r.numer(), r.denom()))
    }
}

fn parse_arcs(root: &Map<String, Value>) -> Result<Vec<(String, CostPolynomial)>, GameError> {
    let arcs = array(field(root, "arcs", "$")?, "arcs")?;
    arcs.iter()
        .enumerate()
        .map(|(i, arc)| {
            let path = format!("arcs[{i}]");
            let obj = object(arc, &path)?;
            let id = string(field(obj, "id", &path)?, &format!("{path}.id"))?;
            let coeffs_path = format!("{path}.coeffs");
            let coeffs = array(field(obj, "coeffs", &path)?, &coeffs_path)?
                .iter()
                .enumerate()
                .map(|(j, c)| rational_value(c, &format!("{coeffs_path}[{j}]")))
                .collect::<Result<Vec<_>, _>>()?;
            let poly = CostPolynomial::new(coeffs).map_err(|e| e.prefixed(&path))?;
            Ok((id, poly))
        })
        .collect()
}

fn parse_groups(root: &Map<String, Value>, users_required: bool) -> Result<Vec<GroupSpec>, GameError> {
    let groups = array(field(root, "groups", "$")?, "groups")?;
    groups
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let path = format!("groups[{k}]");
            let obj = object(g, &path)?;
            let id = string(field(obj, "id", &path)?, &format!("{path}.id"))?;
            let paths = array(field(obj, "paths", &path)?, &format!("{path}.paths"))?
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let pp = format!("{path}.paths[{j}]");
                    array(p, &pp)?
                        .iter()
                        .enumerate()
                        .map(|(l, a)| string(a, &format!("{pp}[{l}]")))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            let demands = match obj.get("users") {
                None if !users_required => vec![Rational::from_integer(1.into())],
                None => return Err(schema(format!("{path}.users"), "missing field")),
                Some(users) => array(users, &format!("{path}.users"))?
                    .iter()
                    .enumerate()
                    .map(|(i, u)| {
                        let up = format!("{path}.users[{i}]");
                        match u {
                            Value::Object(o) => rational_value(field(o, "demand", &up)?, &format!("{up}.demand")),
                            other => rational_value(other, &up),
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            };
            Ok(GroupSpec { id, paths, demands })
        })
        .collect()
}

pub fn game_from_value(value: &Value) -> Result<Game, GameError> {
    let root = object(value, "$")?;
    Game::new(parse_arcs(root)?, parse_groups(root, true)?)
}

/// Parses and validates a game document.
pub fn load_game(document: &str) -> Result<Game, GameError> {
    let value: Value = serde_json::from_str(document).map_err(|e| schema("$", e.to_string()))?;
    game_from_value(&value)
}

pub fn game_to_value(game: &Game) -> Value {
    let arcs: Vec<Value> = game
        .arcs()
        .iter()
        .map(|a| json!({ "id": a.id, "coeffs": a.cost.coefficients().iter().map(rational_json).collect::<Vec<_>>() }))
        .collect();
    let groups: Vec<Value> = (0..game.groups().len())
        .map(|k| {
            let spec = game.group_spec(k);
            json!({
                "id": spec.id,
                "paths": spec.paths,
                "users": spec.demands.iter().map(|d| json!({ "demand": rational_json(d) })).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({ "arcs": arcs, "groups": groups })
}

pub fn game_to_string(game: &Game) -> String {
    serde_json::to_string_pretty(&game_to_value(game)).expect("json values serialize")
}

/// Parses a family document: a game whose groups carry no users, plus one
/// `demand_laws` entry per group.
pub fn load_family(document: &str) -> Result<DemandFamily, DecompositionError> {
    let value: Value = serde_json::from_str(document).map_err(|e| schema("$", e.to_string()))?;
    let root = object(&value, "$")?;
    let base = Game::new(parse_arcs(root)?, parse_groups(root, false)?)?;
    let laws_value = array(field(root, "demand_laws", "$")?, "demand_laws")?;
    let mut laws = Vec::with_capacity(laws_value.len());
    for (k, law) in laws_value.iter().enumerate() {
        let path = format!("demand_laws[{k}]");
        let obj = object(law, &path)?;
        if let Some(g) = obj.get("group") {
            let id = string(g, &format!("{path}.group"))?;
            if base.groups().get(k).map(|grp| grp.id.as_str()) != Some(id.as_str()) {
                return Err(DecompositionError::InvalidLaw {
                    path: format!("{path}.group"),
                    message: format!("laws must follow group order; found `{id}`"),
                });
            }
        }
        let get = |key: &str| rational_value(field(obj, key, &path)?, &format!("{path}.{key}"));
        let optional = |key: &str| match obj.get(key) {
            Some(v) => rational_value(v, &format!("{path}.{key}")),
            None => Ok(Rational::from_integer(0.into())),
        };
        laws.push(DemandLaw {
            c: get("c")?,
            gamma: get("gamma")?,
            user_demand: get("user_demand")?,
            user_gamma: optional("user_gamma")?,
        });
    }
    DemandFamily::new(base, laws)
}

/// Reads `{"probs": [[...], ...]}` with one distribution per user.
pub fn load_mixed_profile(game: &Game, document: &str) -> Result<MixedProfile, GameError> {
    let value: Value = serde_json::from_str(document).map_err(|e| schema("$", e.to_string()))?;
    let root = object(&value, "$")?;
    let probs = array(field(root, "probs", "$")?, "probs")?
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let rp = format!("probs[{i}]");
            array(row, &rp)?
                .iter()
                .enumerate()
                .map(|(j, x)| {
                    x.as_f64().ok_or_else(|| schema(format!("{rp}[{j}]"), "expected a number"))
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    MixedProfile::new(game, probs)
}
