use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::WorldError;
use crate::pddl::{DomainDef, GroundAction, GroundAtom};

/// One sentence template per predicate, with `{0}`, `{1}`, ... argument slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub domain: String,
    pub predicates: BTreeMap<String, String>,
}

impl TemplateSet {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Every predicate of `dom` must have a template that uses each of its
    /// argument slots and no others.
    pub fn validate(&self, dom: &DomainDef) -> Result<(), WorldError> {
        for p in &dom.predicates {
            let t = self
                .predicates
                .get(&p.name)
                .ok_or_else(|| WorldError::MissingTemplate {
                    predicate: p.name.clone(),
                })?;
            for i in 0..p.params.len() {
                if !t.contains(&format!("{{{i}}}")) {
                    return Err(WorldError::BadTemplate {
                        predicate: p.name.clone(),
                        reason: format!("slot {{{i}}} is never used"),
                    });
                }
            }
            if t.contains(&format!("{{{}}}", p.params.len())) {
                return Err(WorldError::BadTemplate {
                    predicate: p.name.clone(),
                    reason: format!("slot {{{}}} exceeds arity", p.params.len()),
                });
            }
        }
        Ok(())
    }

    pub fn render_atom(&self, atom: &GroundAtom) -> Result<String, WorldError> {
        let t = self
            .predicates
            .get(&atom.predicate)
            .ok_or_else(|| WorldError::MissingTemplate {
                predicate: atom.predicate.clone(),
            })?;
        let mut out = t.clone();
        // Replace from the highest slot down so `{1}` never clobbers `{10}`.
        for (i, arg) in atom.args.iter().enumerate().rev() {
            out = out.replace(&format!("{{{i}}}"), arg);
        }
        Ok(out)
    }
}

/// Renders atoms in the given (canonical) order: `A.`, `A, and B.`,
/// `A, B, and C.`; the empty state renders as the empty string.
pub fn render_state<'a>(
    atoms: impl IntoIterator<Item = &'a GroundAtom>,
    templates: &TemplateSet,
) -> Result<String, WorldError> {
    let sentences = atoms
        .into_iter()
        .map(|a| templates.render_atom(a))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(match sentences.len() {
        0 => String::new(),
        1 => format!("{}.", sentences[0]),
        n => format!(
            "{}, and {}.",
            sentences[..n - 1].join(", "),
            sentences[n - 1]
        ),
    })
}

pub fn render_action(action: &GroundAction) -> String {
    action.id.clone()
}
