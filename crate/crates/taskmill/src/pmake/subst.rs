//! Brace-placeholder substitution: `{name}`, `{group[key]}`, with `{{`
//! and `}}` as the escapes for literal braces — plus the full script
//! renderer that applies the documented substitution order.

use std::collections::BTreeMap;

use super::iterable::expand_iterable;
use super::plan::Plan;
use super::run::MachineConfig;
use super::PmakeError;

/// Substitution environment: plain variables and indexed groups
/// (`inp[...]`, `out[...]`).
#[derive(Debug, Default, Clone)]
pub struct Env {
    pub plain: BTreeMap<String, String>,
    pub groups: BTreeMap<String, BTreeMap<String, String>>,
}

impl Env {
    pub fn from_plain(plain: &BTreeMap<String, String>) -> Self {
        Env {
            plain: plain.clone(),
            groups: BTreeMap::new(),
        }
    }
}

/// A placeholder occurrence found in a template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Placeholder {
    Plain(String),
    Indexed(String, String),
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Walk a template, feeding literal runs and placeholders to `emit`.
fn scan(
    tmpl: &str,
    mut emit: impl FnMut(Result<&str, &Placeholder>) -> Result<(), PmakeError>,
) -> Result<(), PmakeError> {
    let mut rest = tmpl;
    while let Some(pos) = rest.find(['{', '}']) {
        emit(Ok(&rest[..pos]))?;
        let tail = &rest[pos..];
        if tail.starts_with("{{") {
            emit(Ok("{"))?;
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            emit(Ok("}"))?;
            rest = &tail[2..];
        } else if tail.starts_with('}') {
            return Err(PmakeError::BadPlaceholder(format!(
                "stray `}}` in `{tmpl}` (write `}}}}` for a literal brace)"
            )));
        } else {
            let close = tail.find('}').ok_or_else(|| {
                PmakeError::BadPlaceholder(format!("unclosed `{{` in `{tmpl}`"))
            })?;
            let body = &tail[1..close];
            let ph = if let Some(open) = body.find('[') {
                let (group, idx) = body.split_at(open);
                let key = idx
                    .strip_prefix('[')
                    .and_then(|k| k.strip_suffix(']'))
                    .filter(|k| is_ident(k))
                    .ok_or_else(|| {
                        PmakeError::BadPlaceholder(format!("malformed index in `{{{body}}}`"))
                    })?;
                if !is_ident(group) {
                    return Err(PmakeError::BadPlaceholder(format!(
                        "malformed placeholder `{{{body}}}`"
                    )));
                }
                Placeholder::Indexed(group.to_string(), key.to_string())
            } else if is_ident(body) {
                Placeholder::Plain(body.to_string())
            } else {
                return Err(PmakeError::BadPlaceholder(format!(
                    "malformed placeholder `{{{body}}}`"
                )));
            };
            emit(Err(&ph))?;
            rest = &tail[close + 1..];
        }
    }
    emit(Ok(rest))
}

/// All placeholders appearing in a template, in order of appearance.
pub fn placeholders(tmpl: &str) -> Result<Vec<Placeholder>, PmakeError> {
    let mut found = Vec::new();
    scan(tmpl, |piece| {
        if let Err(ph) = piece {
            found.push(ph.clone());
        }
        Ok(())
    })?;
    Ok(found)
}

/// Render a template against an environment.
pub fn render(tmpl: &str, env: &Env) -> Result<String, PmakeError> {
    let mut out = String::with_capacity(tmpl.len());
    scan(tmpl, |piece| {
        match piece {
            Ok(lit) => out.push_str(lit),
            Err(Placeholder::Plain(name)) => match env.plain.get(name) {
                Some(v) => out.push_str(v),
                None => return Err(PmakeError::UnboundPlaceholder(name.clone())),
            },
            Err(Placeholder::Indexed(group, key)) => {
                match env.groups.get(group).and_then(|g| g.get(key)) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(PmakeError::UnboundPlaceholder(format!("{group}[{key}]")))
                    }
                }
            }
        }
        Ok(())
    })?;
    Ok(out)
}

/// Quote a string for use as one shell word, leaving plain path-like
/// strings untouched.
fn shell_word(s: &str) -> String {
    let plain = !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || "._/-".contains(c));
    if plain {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

/// Render a node's full script: `set -e`, `cd` into the dirname, setup,
/// then the script body.
///
/// Substitution applies in declaration order — (i) target members
/// (already folded into the node's binding), (ii) loop variables
/// (likewise), (iii) rule members other than the script: `inp`/`out`
/// templates render into the `inp[...]`/`out[...]` groups and the setup
/// renders against what is bound so far, (iv) the script itself, which
/// additionally sees `{mpirun}` expanded from the machine's launcher
/// template with this node's resources. Looped inputs render once per
/// iterable value and join space-separated under their template key.
pub fn substitute(
    plan: &Plan,
    node_id: &str,
    machine: &MachineConfig,
) -> Result<String, PmakeError> {
    let node = plan
        .nodes
        .get(node_id)
        .ok_or_else(|| PmakeError::UnknownNode(node_id.to_string()))?;
    let rule = plan
        .rules
        .get(&node.rule)
        .ok_or_else(|| PmakeError::UnknownNode(node.rule.clone()))?;

    let mut env = Env::from_plain(&node.binding);
    env.plain.insert("dirname".into(), node.dirname.clone());

    let mut inp = BTreeMap::new();
    for (k, tmpl) in &rule.inp {
        inp.insert(k.clone(), render(tmpl, &env)?);
    }
    if let Some(l) = &rule.loop_inp {
        for (k, tmpl) in &l.templates {
            let mut parts = Vec::new();
            for v in expand_iterable(&l.iterable)? {
                let mut loop_env = env.clone();
                loop_env.plain.insert(l.var.clone(), v.to_string());
                parts.push(render(tmpl, &loop_env)?);
            }
            inp.insert(k.clone(), parts.join(" "));
        }
    }
    let mut out = BTreeMap::new();
    for (k, tmpl) in &rule.out {
        out.insert(k.clone(), render(tmpl, &env)?);
    }
    env.groups.insert("inp".into(), inp);
    env.groups.insert("out".into(), out);

    let setup = rule.setup.as_deref().map(|s| render(s, &env)).transpose()?;
    env.plain
        .insert("mpirun".into(), machine.launcher(&node.resources)?);
    let script = render(&rule.script, &env)?;

    let mut text = String::new();
    text.push_str("set -e\n");
    text.push_str("cd ");
    text.push_str(&shell_word(&node.dirname));
    text.push('\n');
    if let Some(s) = setup {
        text.push_str(&s);
        if !s.ends_with('\n') {
            text.push('\n');
        }
    }
    text.push_str(&script);
    if !script.ends_with('\n') {
        text.push('\n');
    }
    Ok(text)
}
