use super::{AlternationKind, Slot, Template, TemplateError, TemplateUse};

pub const BUNDLED_TEMPLATES: &str = include_str!("../../data/templates.jsonl");

/// Parses JSON Lines template definitions and checks the slot grammar.
pub fn parse_template_file(bytes: &[u8]) -> Result<Vec<Template>, TemplateError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TemplateError::Parse {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        message: format!("invalid UTF-8: {e}"),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let t: Template = serde_json::from_str(line)
            .map_err(|e| TemplateError::Parse { line: line_no, message: e.to_string() })?;
        validate(&t).map_err(|message| TemplateError::Validation { line: line_no, id: t.id.clone(), message })?;
        out.push(t);
    }
    Ok(out)
}

pub fn bundled_templates() -> Vec<Template> {
    parse_template_file(BUNDLED_TEMPLATES.as_bytes()).expect("bundled templates are valid")
}

fn validate(t: &Template) -> Result<(), String> {
    if t.uses.is_empty() {
        return Err("template declares no use".into());
    }
    let wugs = t.slots.iter().filter(|s| matches!(s, Slot::Wug { .. })).count();
    if wugs != 1 {
        return Err(format!("expected exactly one wug slot, found {wugs}"));
    }
    if t.slots.iter().filter(|s| matches!(s, Slot::Neg { .. })).count() > 1 {
        return Err("at most one neg slot".into());
    }
    match (t.has_use(TemplateUse::Eval), t.alternate) {
        (true, None) => return Err("eval template needs an alternation rule".into()),
        (_, Some(alt)) => {
            let slot = t
                .slots
                .get(alt.slot)
                .ok_or_else(|| format!("alternation references slot {} of {}", alt.slot, t.slots.len()))?;
            if matches!(slot, Slot::Wug { .. }) {
                return Err("the wug slot must be identical in both members".into());
            }
            match alt.kind {
                AlternationKind::Flip if !slot.follows_property() => {
                    return Err(format!("flip on slot {} ({}) which does not follow the property", alt.slot, slot.kind()))
                }
                AlternationKind::Drop | AlternationKind::Insert if matches!(slot, Slot::Neg { .. }) => {
                    return Err("cannot drop or insert a neg slot".into())
                }
                _ => {}
            }
        }
        (false, None) => {}
    }
    Ok(())
}
