//! YAML front end: `rules.yaml` and `targets.yaml` in the bundled
//! examples' layout.
//!
//! Rules reject unknown keys (a typoed `scriptt:` must not silently drop
//! the script); targets accept them — every extra key becomes a
//! substitution attribute available to the rules planned on that
//! target's behalf.

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_yaml::{Mapping, Value};

use super::subst::{placeholders, Placeholder};
use super::{LoopSpec, PmakeError, ResourceSet, Rule, Target};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleBody {
    resources: ResourceSet,
    #[serde(default)]
    inp: BTreeMap<String, String>,
    #[serde(default)]
    out: BTreeMap<String, String>,
    #[serde(default)]
    setup: Option<String>,
    script: String,
    #[serde(default, rename = "loop")]
    loop_: Option<Value>,
}

fn top_level_mapping(source: &str, what: &str) -> Result<Mapping, PmakeError> {
    let doc: Value = serde_yaml::from_str(source)
        .map_err(|e| PmakeError::Parse(format!("{what}: {e}")))?;
    match doc {
        Value::Mapping(m) => Ok(m),
        Value::Null => Ok(Mapping::new()),
        _ => Err(PmakeError::Parse(format!(
            "{what}: top level must be a mapping of names to bodies"
        ))),
    }
}

fn key_string(v: &Value, context: &str) -> Result<String, PmakeError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        other => Err(PmakeError::Parse(format!(
            "{context}: key {other:?} is not a string"
        ))),
    }
}

fn scalar_string(v: &Value, context: &str) -> Result<String, PmakeError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(PmakeError::Parse(format!(
            "{context}: expected a scalar, found {other:?}"
        ))),
    }
}

fn template_map(v: &Value, context: &str) -> Result<BTreeMap<String, String>, PmakeError> {
    let m = v.as_mapping().ok_or_else(|| {
        PmakeError::Parse(format!("{context}: expected a mapping of name: template"))
    })?;
    let mut out = BTreeMap::new();
    for (k, val) in m {
        let k = key_string(k, context)?;
        let t = scalar_string(val, &format!("{context}.{k}"))?;
        out.insert(k, t);
    }
    Ok(out)
}

/// Parse a loop directive: exactly one variable key plus the reserved
/// templates key (`tgt` in targets, `inp` in rules).
fn parse_loop(v: &Value, templates_key: &str, context: &str) -> Result<LoopSpec, PmakeError> {
    let m = v.as_mapping().ok_or_else(|| {
        PmakeError::Parse(format!("{context}: loop must be a mapping"))
    })?;
    let mut var: Option<(String, String)> = None;
    let mut templates = None;
    for (k, val) in m {
        let k = key_string(k, context)?;
        if k == templates_key {
            templates = Some(template_map(val, &format!("{context}.loop.{k}"))?);
        } else if var.is_none() {
            var = Some((k.clone(), scalar_string(val, &format!("{context}.loop.{k}"))?));
        } else {
            return Err(PmakeError::Parse(format!(
                "{context}: loop may bind exactly one variable, found `{}` and `{k}`",
                var.unwrap().0
            )));
        }
    }
    let (var, iterable) = var.ok_or_else(|| {
        PmakeError::Parse(format!("{context}: loop binds no variable"))
    })?;
    let templates = templates.ok_or_else(|| {
        PmakeError::Parse(format!("{context}: loop has no `{templates_key}` templates"))
    })?;
    Ok(LoopSpec {
        var,
        iterable,
        templates,
    })
}

/// The single variable allowed across a rule's out templates.
fn out_variable(name: &str, out: &BTreeMap<String, String>) -> Result<Option<String>, PmakeError> {
    let mut var: Option<String> = None;
    for (key, tmpl) in out {
        for ph in placeholders(tmpl)? {
            match ph {
                Placeholder::Plain(v) => match &var {
                    None => var = Some(v),
                    Some(prev) if *prev == v => {}
                    Some(prev) => {
                        return Err(PmakeError::Parse(format!(
                            "rule `{name}`: out templates use two variables, `{prev}` and `{v}` \
                             (matching on out names defines at most one)"
                        )))
                    }
                },
                Placeholder::Indexed(g, k) => {
                    return Err(PmakeError::Parse(format!(
                        "rule `{name}`: out.{key} may not use indexed placeholder `{g}[{k}]`"
                    )))
                }
            }
        }
    }
    Ok(var)
}

/// Parse a rules file: mapping of rule name → body.
pub fn parse_rules(source: &str) -> Result<Vec<Rule>, PmakeError> {
    let top = top_level_mapping(source, "rules")?;
    let mut rules = Vec::new();
    for (k, body) in &top {
        let name = key_string(k, "rules")?;
        let body: RuleBody = serde_yaml::from_value(body.clone())
            .map_err(|e| PmakeError::Parse(format!("rule `{name}`: {e}")))?;
        body.resources.validate(&format!("rule `{name}`"))?;
        let loop_inp = body
            .loop_
            .as_ref()
            .map(|v| parse_loop(v, "inp", &format!("rule `{name}`")))
            .transpose()?;
        let var = out_variable(&name, &body.out)?;
        rules.push(Rule {
            name,
            resources: body.resources,
            inp: body.inp,
            out: body.out,
            setup: body.setup,
            script: body.script,
            loop_inp,
            var,
        });
    }
    Ok(rules)
}

/// Parse a targets file: mapping of target name → body; unknown keys
/// become substitution attributes.
pub fn parse_targets(source: &str) -> Result<Vec<Target>, PmakeError> {
    let top = top_level_mapping(source, "targets")?;
    let mut targets = Vec::new();
    for (k, body) in &top {
        let name = key_string(k, "targets")?;
        let context = format!("target `{name}`");
        let m = body.as_mapping().ok_or_else(|| {
            PmakeError::Parse(format!("{context}: body must be a mapping"))
        })?;
        let mut dirname = None;
        let mut out = BTreeMap::new();
        let mut loop_tgt = None;
        let mut attrs = BTreeMap::new();
        for (key, val) in m {
            let key = key_string(key, &context)?;
            match key.as_str() {
                "dirname" => dirname = Some(scalar_string(val, &format!("{context}.dirname"))?),
                "out" => out = template_map(val, &format!("{context}.out"))?,
                "loop" => loop_tgt = Some(parse_loop(val, "tgt", &context)?),
                _ => {
                    attrs.insert(key.clone(), scalar_string(val, &format!("{context}.{key}"))?);
                }
            }
        }
        let dirname = dirname.ok_or_else(|| {
            PmakeError::Parse(format!("{context}: missing required key `dirname`"))
        })?;
        targets.push(Target {
            name,
            dirname,
            out,
            loop_tgt,
            attrs,
        });
    }
    Ok(targets)
}
