use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AtomTemplate, DomainDef, GroundAtom, PddlError, ProblemDef};

pub const DEFAULT_GROUNDING_CAP: usize = 1_000_000;

/// Index into [`GroundedProblem::atoms`]. Ids follow canonical atom order,
/// so a sorted id list is a canonically ordered state.
pub type AtomId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundAction {
    pub schema: String,
    pub binding: Vec<String>,
    pub pre: Vec<AtomId>,
    pub add: Vec<AtomId>,
    pub del: Vec<AtomId>,
    /// `(schema arg1 arg2 ...)`
    pub id: String,
}

impl GroundAction {
    pub fn is_applicable(&self, state: &[AtomId]) -> bool {
        is_sorted_subset(&self.pre, state)
    }

    /// `(state \ del) ∪ add`, kept sorted.
    pub fn apply(&self, state: &[AtomId]) -> Vec<AtomId> {
        let mut next: Vec<AtomId> = state
            .iter()
            .copied()
            .filter(|a| self.del.binary_search(a).is_err())
            .collect();
        next.extend_from_slice(&self.add);
        next.sort_unstable();
        next.dedup();
        next
    }
}

pub(crate) fn is_sorted_subset(needle: &[AtomId], hay: &[AtomId]) -> bool {
    let mut j = 0;
    for &x in needle {
        while j < hay.len() && hay[j] < x {
            j += 1;
        }
        if j == hay.len() || hay[j] != x {
            return false;
        }
        j += 1;
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedProblem {
    pub domain: String,
    pub problem: String,
    pub objects: Vec<(String, String)>,
    /// Every atom mentioned by init, goal or a ground action, canonically sorted.
    pub atoms: Vec<GroundAtom>,
    /// Sorted by action id.
    pub actions: Vec<GroundAction>,
    pub init: Vec<AtomId>,
    pub goal: Vec<AtomId>,
}

impl GroundedProblem {
    pub fn atom(&self, id: AtomId) -> &GroundAtom {
        &self.atoms[id as usize]
    }

    pub fn is_goal(&self, state: &[AtomId]) -> bool {
        is_sorted_subset(&self.goal, state)
    }

    /// Canonical serialization: atoms in canonical order, single-space joined.
    pub fn serialize_state(&self, state: &[AtomId]) -> String {
        state
            .iter()
            .map(|&a| self.atom(a).to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn action_by_id(&self, id: &str) -> Option<&GroundAction> {
        self.actions
            .binary_search_by(|a| a.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.actions[i])
    }
}

pub fn ground(dom: &DomainDef, prob: &ProblemDef) -> Result<GroundedProblem, PddlError> {
    ground_with_cap(dom, prob, DEFAULT_GROUNDING_CAP)
}

/// Enumerates every type-consistent binding with pairwise-distinct objects.
pub fn ground_with_cap(
    dom: &DomainDef,
    prob: &ProblemDef,
    cap: usize,
) -> Result<GroundedProblem, PddlError> {
    if prob.domain_name != dom.name {
        return Err(PddlError::DomainMismatch {
            expected: dom.name.clone(),
            found: prob.domain_name.clone(),
        });
    }
    let mut objects = prob.objects.clone();
    objects.sort();

    struct Raw {
        schema: String,
        binding: Vec<String>,
        pre: Vec<GroundAtom>,
        add: Vec<GroundAtom>,
        del: Vec<GroundAtom>,
    }
    let mut raw: Vec<Raw> = Vec::new();

    for schema in &dom.action_schemas {
        let candidates: Vec<Vec<&str>> = schema
            .params
            .iter()
            .map(|(_, ty)| {
                objects
                    .iter()
                    .filter(|(_, t)| dom.is_subtype(t, ty))
                    .map(|(o, _)| o.as_str())
                    .collect()
            })
            .collect();

        let mut binding: Vec<&str> = Vec::with_capacity(schema.params.len());
        let mut out = Vec::new();
        enumerate(&candidates, &mut binding, &mut out, cap.saturating_sub(raw.len()))?;
        for b in out {
            let bind = |t: &AtomTemplate| -> GroundAtom {
                GroundAtom {
                    predicate: t.predicate.clone(),
                    args: t
                        .args
                        .iter()
                        .map(|v| {
                            let idx = schema.params.iter().position(|(p, _)| p == v).unwrap();
                            b[idx].to_string()
                        })
                        .collect(),
                }
            };
            raw.push(Raw {
                schema: schema.name.clone(),
                binding: b.iter().map(|s| s.to_string()).collect(),
                pre: schema.preconditions.iter().map(bind).collect(),
                add: schema.add_effects.iter().map(bind).collect(),
                del: schema.del_effects.iter().map(bind).collect(),
            });
        }
        if raw.len() > cap {
            return Err(PddlError::GroundingExplosion { cap });
        }
    }

    let mut table: BTreeMap<GroundAtom, AtomId> = BTreeMap::new();
    for atom in prob.init.iter().chain(prob.goal.iter()) {
        table.insert(atom.clone(), 0);
    }
    for r in &raw {
        for atom in r.pre.iter().chain(&r.add).chain(&r.del) {
            table.insert(atom.clone(), 0);
        }
    }
    for (i, v) in table.values_mut().enumerate() {
        *v = i as AtomId;
    }
    let ids = |atoms: &[GroundAtom]| -> Vec<AtomId> {
        let mut v: Vec<AtomId> = atoms.iter().map(|a| table[a]).collect();
        v.sort_unstable();
        v.dedup();
        v
    };

    let mut actions = Vec::with_capacity(raw.len());
    for r in &raw {
        let add = ids(&r.add);
        let del = ids(&r.del);
        let id = format_action_id(&r.schema, &r.binding);
        if let Some(&clash) = add.iter().find(|a| del.binary_search(a).is_ok()) {
            let atom = table
                .iter()
                .find(|(_, &v)| v == clash)
                .map(|(k, _)| k.to_string())
                .unwrap_or_default();
            return Err(PddlError::ConflictingEffects { action: id, atom });
        }
        actions.push(GroundAction {
            schema: r.schema.clone(),
            binding: r.binding.clone(),
            pre: ids(&r.pre),
            add,
            del,
            id,
        });
    }
    actions.sort_by(|a, b| a.id.cmp(&b.id));

    let init = ids(&prob.init.iter().cloned().collect::<Vec<_>>());
    let goal = ids(&prob.goal.iter().cloned().collect::<Vec<_>>());
    Ok(GroundedProblem {
        domain: dom.name.clone(),
        problem: prob.name.clone(),
        objects,
        atoms: table.into_keys().collect(),
        actions,
        init,
        goal,
    })
}

fn enumerate<'a>(
    candidates: &[Vec<&'a str>],
    binding: &mut Vec<&'a str>,
    out: &mut Vec<Vec<&'a str>>,
    cap: usize,
) -> Result<(), PddlError> {
    let depth = binding.len();
    if depth == candidates.len() {
        if out.len() >= cap {
            return Err(PddlError::GroundingExplosion { cap });
        }
        out.push(binding.clone());
        return Ok(());
    }
    for &obj in &candidates[depth] {
        if binding.contains(&obj) {
            continue;
        }
        binding.push(obj);
        enumerate(candidates, binding, out, cap)?;
        binding.pop();
    }
    Ok(())
}

pub fn format_action_id(schema: &str, binding: &[String]) -> String {
    let mut s = String::with_capacity(schema.len() + 2 + binding.len() * 4);
    s.push('(');
    s.push_str(schema);
    for b in binding {
        s.push(' ');
        s.push_str(b);
    }
    s.push(')');
    s
}
