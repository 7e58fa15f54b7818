use anyhow::{anyhow, bail, Context};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Applies `key=value` overrides to a config through its serialized form.
/// Values are read as JSON when possible and as strings otherwise; unknown
/// keys are rejected.
pub fn apply<T: Serialize + DeserializeOwned>(config: &T, overrides: &[String]) -> anyhow::Result<T> {
    let mut value = serde_json::to_value(config)?;
    let map = value.as_object_mut().ok_or_else(|| anyhow!("config is not a table"))?;
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| anyhow!("override `{o}` is not key=value"))?;
        let key = key.trim();
        let Some(slot) = map.get_mut(key) else {
            let mut known: Vec<&String> = map.keys().collect();
            known.sort();
            bail!("unknown setting `{key}`; known settings: {}", known.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "));
        };
        let parsed = serde_json::from_str(raw.trim()).unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()));
        *slot = coerce(parsed, slot);
    }
    serde_json::from_value(value).context("invalid --set value")
}

/// Splits `a.key=value` and `b.key=value` overrides into two unscoped lists.
pub fn split_scoped(overrides: &[String], a: &str, b: &str) -> anyhow::Result<(Vec<String>, Vec<String>)> {
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for o in overrides {
        match o.split_once('.') {
            Some((scope, rest)) if scope == a => left.push(rest.to_string()),
            Some((scope, rest)) if scope == b => right.push(rest.to_string()),
            _ => bail!("override `{o}` needs a `{a}.` or `{b}.` prefix here"),
        }
    }
    Ok((left, right))
}

/// Integers given in float notation (`1e5`) are accepted for integer fields.
fn coerce(v: serde_json::Value, like: &serde_json::Value) -> serde_json::Value {
    match (&v, like) {
        (serde_json::Value::Number(n), serde_json::Value::Number(old)) if (old.is_u64() || old.is_i64()) && n.is_f64() => {
            let f = n.as_f64().unwrap_or(f64::NAN);
            if f.fract() == 0.0 && (0.0..1.8e19).contains(&f) {
                serde_json::Value::from(f as u64)
            } else {
                v
            }
        }
        _ => v,
    }
}
