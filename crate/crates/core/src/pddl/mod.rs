//! STRIPS subset of PDDL: typed objects, positive preconditions, add/delete
//! effects. Anything beyond `:strips` and `:typing` is rejected with the
//! offending construct and its line.

mod ground;
pub mod sexpr;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ground::{format_action_id, ground, ground_with_cap, AtomId, GroundAction, GroundedProblem, DEFAULT_GROUNDING_CAP};
use sexpr::Sexp;

pub const ROOT_TYPE: &str = "object";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PddlError {
    #[error("parse error at line {line}: expected {expected}, found {found}")]
    Parse {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("unsupported feature `{construct}` at line {line}")]
    UnsupportedFeature { construct: String, line: usize },
    #[error("type mismatch at line {line}: {message}")]
    TypeMismatch { line: usize, message: String },
    #[error("problem targets domain `{found}` but domain is `{expected}`")]
    DomainMismatch { expected: String, found: String },
    #[error("duplicate {what} `{name}` at line {line}")]
    Duplicate {
        what: &'static str,
        name: String,
        line: usize,
    },
    #[error("grounding produced more than {cap} actions")]
    GroundingExplosion { cap: usize },
    #[error("action {action} both adds and deletes {atom}")]
    ConflictingEffects { action: String, atom: String },
}

/// `(name, type)` pairs, e.g. parameters or objects.
pub type TypedList = Vec<(String, String)>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub params: TypedList,
}

/// An atom whose arguments are schema variables (`?x`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomTemplate {
    pub predicate: String,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSchema {
    pub name: String,
    pub params: TypedList,
    pub preconditions: Vec<AtomTemplate>,
    pub add_effects: Vec<AtomTemplate>,
    pub del_effects: Vec<AtomTemplate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainDef {
    pub name: String,
    /// `(type, parent)`; the root type `object` is implicit.
    pub types: Vec<(String, String)>,
    pub predicates: Vec<Predicate>,
    pub action_schemas: Vec<ActionSchema>,
}

impl DomainDef {
    pub fn predicate(&self, name: &str) -> Option<&Predicate> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn has_type(&self, name: &str) -> bool {
        name == ROOT_TYPE || self.types.iter().any(|(t, _)| t == name)
    }

    fn parent_of(&self, name: &str) -> Option<&str> {
        self.types
            .iter()
            .find(|(t, _)| t == name)
            .map(|(_, p)| p.as_str())
    }

    /// True when `ty` equals `ancestor` or inherits from it.
    pub fn is_subtype(&self, ty: &str, ancestor: &str) -> bool {
        if ancestor == ROOT_TYPE {
            return true;
        }
        let mut cur = ty;
        // Bounded walk so that a cyclic hierarchy cannot loop forever.
        for _ in 0..=self.types.len() {
            if cur == ancestor {
                return true;
            }
            match self.parent_of(cur) {
                Some(p) => cur = p,
                None => return false,
            }
        }
        false
    }
}

/// A fully bound atom. Ordering is lexicographic on predicate, then args.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroundAtom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl GroundAtom {
    pub fn new(predicate: impl Into<String>, args: &[&str]) -> Self {
        Self {
            predicate: predicate.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemDef {
    pub name: String,
    pub domain_name: String,
    pub objects: TypedList,
    pub init: BTreeSet<GroundAtom>,
    pub goal: BTreeSet<GroundAtom>,
}

const ALLOWED_REQUIREMENTS: &[&str] = &[":strips", ":typing"];

fn parse_err(node: &Sexp, expected: &str) -> PddlError {
    PddlError::Parse {
        line: node.line(),
        expected: expected.to_string(),
        found: node.describe(),
    }
}

fn symbol<'a>(node: &'a Sexp, expected: &str) -> Result<&'a str, PddlError> {
    node.as_symbol().ok_or_else(|| parse_err(node, expected))
}

fn list<'a>(node: &'a Sexp, expected: &str) -> Result<&'a [Sexp], PddlError> {
    node.as_list().ok_or_else(|| parse_err(node, expected))
}

/// Reads `(define (<kind> <name>) section...)` and returns name + sections.
fn define_header<'a>(root: &'a Sexp, kind: &str) -> Result<(&'a str, &'a [Sexp]), PddlError> {
    let items = list(root, "`(define ...)`")?;
    match items.first() {
        Some(s) if s.as_symbol() == Some("define") => {}
        Some(other) => return Err(parse_err(other, "`define`")),
        None => return Err(parse_err(root, "`define`")),
    }
    let header = items
        .get(1)
        .ok_or_else(|| parse_err(root, &format!("`({kind} <name>)`")))?;
    let h = list(header, &format!("`({kind} <name>)`"))?;
    if h.len() != 2 || h[0].as_symbol() != Some(kind) {
        return Err(parse_err(header, &format!("`({kind} <name>)`")));
    }
    let name = symbol(&h[1], "name")?;
    Ok((name, &items[2..]))
}

/// `a b - t c` → [(a,t),(b,t),(c,object)].
fn typed_list(items: &[Sexp]) -> Result<Vec<(String, String, usize)>, PddlError> {
    let mut out = Vec::new();
    let mut pending: Vec<(String, usize)> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let s = symbol(&items[i], "name")?;
        if s == "-" {
            let ty = items
                .get(i + 1)
                .ok_or_else(|| parse_err(&items[i], "type name after `-`"))?;
            if ty.head() == Some("either") {
                return Err(PddlError::UnsupportedFeature {
                    construct: "either".into(),
                    line: ty.line(),
                });
            }
            let ty = symbol(ty, "type name")?;
            if pending.is_empty() {
                return Err(parse_err(&items[i], "name before `-`"));
            }
            for (n, l) in pending.drain(..) {
                out.push((n, ty.to_string(), l));
            }
            i += 2;
        } else {
            pending.push((s.to_string(), items[i].line()));
            i += 1;
        }
    }
    for (n, l) in pending {
        out.push((n, ROOT_TYPE.to_string(), l));
    }
    Ok(out)
}

fn unsupported_connective(node: &Sexp) -> Option<PddlError> {
    const UNSUPPORTED: &[&str] = &[
        "not", "or", "imply", "exists", "forall", "when", "=", "increase", "decrease",
        "assign", "scale-up", "scale-down", ">", "<", ">=", "<=",
    ];
    let head = node.head()?;
    UNSUPPORTED.contains(&head).then(|| PddlError::UnsupportedFeature {
        construct: head.to_string(),
        line: node.line(),
    })
}

/// Flattens `(and a b ...)`, a single atom, or `()` into atom nodes.
fn conjunction(node: &Sexp) -> Result<Vec<&Sexp>, PddlError> {
    let items = list(node, "a conjunction of atoms")?;
    if items.is_empty() {
        return Ok(Vec::new());
    }
    if node.head() == Some("and") {
        Ok(items[1..].iter().collect())
    } else {
        Ok(vec![node])
    }
}

fn atom_parts(node: &Sexp) -> Result<(String, Vec<String>), PddlError> {
    if let Some(err) = unsupported_connective(node) {
        return Err(err);
    }
    let items = list(node, "an atom `(pred args...)`")?;
    let pred = items
        .first()
        .ok_or_else(|| parse_err(node, "predicate name"))?;
    let pred = symbol(pred, "predicate name")?.to_string();
    let args = items[1..]
        .iter()
        .map(|a| symbol(a, "argument").map(str::to_string))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((pred, args))
}

pub fn parse_domain(text: &str) -> Result<DomainDef, PddlError> {
    let root = sexpr::parse(text)?;
    let (name, sections) = define_header(&root, "domain")?;

    let mut types: Vec<(String, String)> = Vec::new();
    let mut predicates: Vec<Predicate> = Vec::new();
    let mut raw_actions: Vec<&Sexp> = Vec::new();

    for section in sections {
        let items = list(section, "a domain section")?;
        let head = section.head().ok_or_else(|| parse_err(section, "section keyword"))?;
        match head {
            ":requirements" => {
                for req in &items[1..] {
                    let r = symbol(req, "requirement keyword")?;
                    if !ALLOWED_REQUIREMENTS.contains(&r) {
                        return Err(PddlError::UnsupportedFeature {
                            construct: r.to_string(),
                            line: req.line(),
                        });
                    }
                }
            }
            ":types" => {
                for (t, parent, line) in typed_list(&items[1..])? {
                    if t == ROOT_TYPE {
                        continue;
                    }
                    if types.iter().any(|(x, _)| *x == t) {
                        return Err(PddlError::Duplicate {
                            what: "type",
                            name: t,
                            line,
                        });
                    }
                    types.push((t, parent));
                }
            }
            ":predicates" => {
                for p in &items[1..] {
                    let parts = list(p, "a predicate declaration")?;
                    let pname = parts
                        .first()
                        .ok_or_else(|| parse_err(p, "predicate name"))?;
                    let pname = symbol(pname, "predicate name")?.to_string();
                    if predicates.iter().any(|x| x.name == pname) {
                        return Err(PddlError::Duplicate {
                            what: "predicate",
                            name: pname,
                            line: p.line(),
                        });
                    }
                    let params = typed_list(&parts[1..])?
                        .into_iter()
                        .map(|(n, t, _)| (n, t))
                        .collect();
                    predicates.push(Predicate { name: pname, params });
                }
            }
            ":action" => raw_actions.push(section),
            other => {
                return Err(PddlError::UnsupportedFeature {
                    construct: other.to_string(),
                    line: section.line(),
                })
            }
        }
    }

    let mut domain = DomainDef {
        name: name.to_string(),
        types,
        predicates,
        action_schemas: Vec::new(),
    };

    for (t, parent) in &domain.types {
        if !domain.has_type(parent) {
            return Err(PddlError::TypeMismatch {
                line: root.line(),
                message: format!("type `{t}` inherits from undeclared type `{parent}`"),
            });
        }
    }
    for p in &domain.predicates {
        for (_, ty) in &p.params {
            if !domain.has_type(ty) {
                return Err(PddlError::TypeMismatch {
                    line: root.line(),
                    message: format!("predicate `{}` uses undeclared type `{ty}`", p.name),
                });
            }
        }
    }

    for node in raw_actions {
        let schema = parse_action(node, &domain)?;
        if domain.action_schemas.iter().any(|a| a.name == schema.name) {
            return Err(PddlError::Duplicate {
                what: "action",
                name: schema.name,
                line: node.line(),
            });
        }
        domain.action_schemas.push(schema);
    }
    Ok(domain)
}

fn parse_action(node: &Sexp, domain: &DomainDef) -> Result<ActionSchema, PddlError> {
    let items = list(node, "`(:action ...)`")?;
    let name = items
        .get(1)
        .ok_or_else(|| parse_err(node, "action name"))?;
    let name = symbol(name, "action name")?.to_string();

    let mut params: TypedList = Vec::new();
    let mut pre_node = None;
    let mut eff_node = None;
    let mut i = 2;
    while i < items.len() {
        let key = symbol(&items[i], "action keyword")?;
        let value = items
            .get(i + 1)
            .ok_or_else(|| parse_err(&items[i], "value after keyword"))?;
        match key {
            ":parameters" => {
                for (n, t, line) in typed_list(list(value, "parameter list")?)? {
                    if !n.starts_with('?') {
                        return Err(PddlError::Parse {
                            line,
                            expected: "variable `?name`".into(),
                            found: format!("`{n}`"),
                        });
                    }
                    if !domain.has_type(&t) {
                        return Err(PddlError::TypeMismatch {
                            line,
                            message: format!("parameter `{n}` has undeclared type `{t}`"),
                        });
                    }
                    if params.iter().any(|(p, _)| *p == n) {
                        return Err(PddlError::Duplicate {
                            what: "parameter",
                            name: n,
                            line,
                        });
                    }
                    params.push((n, t));
                }
            }
            ":precondition" => pre_node = Some(value),
            ":effect" => eff_node = Some(value),
            other => {
                return Err(PddlError::UnsupportedFeature {
                    construct: other.to_string(),
                    line: items[i].line(),
                })
            }
        }
        i += 2;
    }

    let mut preconditions = Vec::new();
    if let Some(pre) = pre_node {
        if let Some(err) = unsupported_connective(pre) {
            return Err(err);
        }
        for atom in conjunction(pre)? {
            preconditions.push(check_template(atom, &params, domain)?);
        }
    }

    let mut add_effects = Vec::new();
    let mut del_effects = Vec::new();
    if let Some(eff) = eff_node {
        for e in conjunction(eff)? {
            if e.head() == Some("not") {
                let inner = list(e, "`(not atom)`")?;
                if inner.len() != 2 {
                    return Err(parse_err(e, "`(not atom)`"));
                }
                del_effects.push(check_template(&inner[1], &params, domain)?);
            } else {
                add_effects.push(check_template(e, &params, domain)?);
            }
        }
    }

    Ok(ActionSchema {
        name,
        params,
        preconditions,
        add_effects,
        del_effects,
    })
}

fn check_template(
    node: &Sexp,
    params: &TypedList,
    domain: &DomainDef,
) -> Result<AtomTemplate, PddlError> {
    let (pred, args) = atom_parts(node)?;
    let decl = domain.predicate(&pred).ok_or_else(|| PddlError::TypeMismatch {
        line: node.line(),
        message: format!("undeclared predicate `{pred}`"),
    })?;
    if decl.params.len() != args.len() {
        return Err(PddlError::TypeMismatch {
            line: node.line(),
            message: format!(
                "predicate `{pred}` takes {} arguments, got {}",
                decl.params.len(),
                args.len()
            ),
        });
    }
    for (arg, (_, want)) in args.iter().zip(&decl.params) {
        let (_, ty) = params
            .iter()
            .find(|(p, _)| p == arg)
            .ok_or_else(|| PddlError::Parse {
                line: node.line(),
                expected: "a declared parameter".into(),
                found: format!("`{arg}`"),
            })?;
        if !domain.is_subtype(ty, want) {
            return Err(PddlError::TypeMismatch {
                line: node.line(),
                message: format!("`{arg}` of type `{ty}` used where `{want}` is required in `{pred}`"),
            });
        }
    }
    Ok(AtomTemplate {
        predicate: pred,
        args,
    })
}

pub fn parse_problem(text: &str, domain: &DomainDef) -> Result<ProblemDef, PddlError> {
    let root = sexpr::parse(text)?;
    let (name, sections) = define_header(&root, "problem")?;

    let mut domain_name = None;
    let mut objects: TypedList = Vec::new();
    let mut init_nodes: Vec<&Sexp> = Vec::new();
    let mut goal_node = None;

    for section in sections {
        let items = list(section, "a problem section")?;
        let head = section.head().ok_or_else(|| parse_err(section, "section keyword"))?;
        match head {
            ":domain" => {
                let d = items.get(1).ok_or_else(|| parse_err(section, "domain name"))?;
                domain_name = Some(symbol(d, "domain name")?.to_string());
            }
            ":objects" => {
                for (n, t, line) in typed_list(&items[1..])? {
                    if !domain.has_type(&t) {
                        return Err(PddlError::TypeMismatch {
                            line,
                            message: format!("object `{n}` has undeclared type `{t}`"),
                        });
                    }
                    if objects.iter().any(|(o, _)| *o == n) {
                        return Err(PddlError::Duplicate {
                            what: "object",
                            name: n,
                            line,
                        });
                    }
                    objects.push((n, t));
                }
            }
            ":init" => init_nodes.extend(items[1..].iter()),
            ":goal" => {
                goal_node = Some(items.get(1).ok_or_else(|| parse_err(section, "goal formula"))?)
            }
            ":requirements" => {
                for req in &items[1..] {
                    let r = symbol(req, "requirement keyword")?;
                    if !ALLOWED_REQUIREMENTS.contains(&r) {
                        return Err(PddlError::UnsupportedFeature {
                            construct: r.to_string(),
                            line: req.line(),
                        });
                    }
                }
            }
            other => {
                return Err(PddlError::UnsupportedFeature {
                    construct: other.to_string(),
                    line: section.line(),
                })
            }
        }
    }

    let domain_name = domain_name.ok_or_else(|| parse_err(&root, "`(:domain <name>)`"))?;
    if domain_name != domain.name {
        return Err(PddlError::DomainMismatch {
            expected: domain.name.clone(),
            found: domain_name,
        });
    }

    let mut init = BTreeSet::new();
    for node in init_nodes {
        init.insert(check_ground_atom(node, &objects, domain)?);
    }
    let mut goal = BTreeSet::new();
    if let Some(g) = goal_node {
        if let Some(err) = unsupported_connective(g) {
            return Err(err);
        }
        for node in conjunction(g)? {
            goal.insert(check_ground_atom(node, &objects, domain)?);
        }
    }

    Ok(ProblemDef {
        name: name.to_string(),
        domain_name,
        objects,
        init,
        goal,
    })
}

fn check_ground_atom(
    node: &Sexp,
    objects: &TypedList,
    domain: &DomainDef,
) -> Result<GroundAtom, PddlError> {
    let (pred, args) = atom_parts(node)?;
    let decl = domain.predicate(&pred).ok_or_else(|| PddlError::TypeMismatch {
        line: node.line(),
        message: format!("undeclared predicate `{pred}`"),
    })?;
    if decl.params.len() != args.len() {
        return Err(PddlError::TypeMismatch {
            line: node.line(),
            message: format!(
                "predicate `{pred}` takes {} arguments, got {}",
                decl.params.len(),
                args.len()
            ),
        });
    }
    let types: BTreeMap<&str, &str> = objects
        .iter()
        .map(|(o, t)| (o.as_str(), t.as_str()))
        .collect();
    for (arg, (_, want)) in args.iter().zip(&decl.params) {
        let ty = types.get(arg.as_str()).ok_or_else(|| PddlError::TypeMismatch {
            line: node.line(),
            message: format!("undeclared object `{arg}`"),
        })?;
        if !domain.is_subtype(ty, want) {
            return Err(PddlError::TypeMismatch {
                line: node.line(),
                message: format!("object `{arg}` of type `{ty}` used where `{want}` is required in `{pred}`"),
            });
        }
    }
    Ok(GroundAtom {
        predicate: pred,
        args,
    })
}
