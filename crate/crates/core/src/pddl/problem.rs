//! Planning domain and per-robot problem text generated from a scene graph.

use std::collections::BTreeSet;

use super::sexpr::{self, Sexp};
use super::{goal_from_sexp, print_goal, Atom, GoalExpr, PddlError, Predicate};
use crate::scene_graph::{Layer, NodeId, SceneGraph};

pub const DOMAIN_NAME: &str = "scene-graph";

/// The fixed planning domain. `at` and `visited` accept a place or an
/// object; an object stands for the place it sits in.
pub fn domain_text() -> String {
    format!(
        "(define (domain {DOMAIN_NAME})
  (:requirements :strips :typing :negative-preconditions :disjunctive-preconditions)
  (:types place object)
  (:predicates
    (at ?x)
    (visited ?x)
    (inspected ?o - object))
  (:action move
    :parameters (?from - place ?to - place)
    :precondition (at ?from)
    :effect (and (not (at ?from)) (at ?to) (visited ?to)))
  (:action inspect
    :parameters (?o - object ?p - place)
    :precondition (at ?p)
    :effect (inspected ?o)))
"
    )
}

/// Looks up a goal symbol and checks it names a node usable by `pred`.
pub fn resolve_symbol(graph: &SceneGraph, pred: Predicate, symbol: &str) -> Result<NodeId, PddlError> {
    let id = NodeId::from_symbol(symbol)
        .filter(|id| graph.node(*id).is_some())
        .ok_or_else(|| PddlError::UnresolvedSymbol(symbol.to_string()))?;
    let ok = match pred {
        Predicate::Inspected => id.layer() == Layer::Object,
        Predicate::Visited | Predicate::At => matches!(id.layer(), Layer::Object | Layer::SurfacePlace),
    };
    if !ok {
        let expected = if pred == Predicate::Inspected { "object" } else { "place or object" };
        return Err(PddlError::TypeMismatch { symbol: symbol.to_string(), expected });
    }
    Ok(id)
}

/// Checks every goal symbol against the graph, in sorted atom order.
pub fn resolve_goal(graph: &SceneGraph, goal: &GoalExpr) -> Result<(), PddlError> {
    for a in goal.atoms() {
        resolve_symbol(graph, a.predicate, &a.arg)?;
    }
    Ok(())
}

fn wrap_symbols(out: &mut String, symbols: &[String], ty: &str) {
    if symbols.is_empty() {
        return;
    }
    out.push_str("\n   ");
    let mut width = 3;
    for s in symbols {
        if width + s.len() + 1 > 80 {
            out.push_str("\n   ");
            width = 3;
        }
        out.push(' ');
        out.push_str(s);
        width += s.len() + 1;
    }
    out.push_str(" - ");
    out.push_str(ty);
}

pub fn emit_problem(graph: &SceneGraph, start_place: NodeId, goal: &GoalExpr) -> Result<String, PddlError> {
    let start = start_place.symbol();
    if graph.node(start_place).is_none() {
        return Err(PddlError::UnresolvedSymbol(start));
    }
    if start_place.layer() != Layer::SurfacePlace {
        return Err(PddlError::TypeMismatch { symbol: start, expected: "place" });
    }
    resolve_goal(graph, goal)?;
    let ids = |layer| {
        let mut v: Vec<NodeId> = graph.layer_nodes(layer).map(|n| n.id).collect();
        v.sort();
        v.into_iter().map(|id| id.symbol()).collect::<Vec<_>>()
    };
    let places = ids(Layer::SurfacePlace);
    let objects = ids(Layer::Object);
    let mut out = String::from("(define (problem mission)\n  (:domain scene-graph)\n  (:objects");
    wrap_symbols(&mut out, &places, "place");
    wrap_symbols(&mut out, &objects, "object");
    out.push_str(")\n  (:init\n    (at ");
    out.push_str(&start);
    out.push_str(")\n    (visited ");
    out.push_str(&start);
    out.push_str("))\n  (:goal ");
    out.push_str(&print_goal(goal));
    out.push_str("))\n");
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub name: String,
    pub domain: String,
    pub places: Vec<String>,
    pub objects: Vec<String>,
    pub init: Vec<Atom>,
    pub goal: GoalExpr,
}

fn err(at: &Sexp, msg: &str) -> PddlError {
    PddlError::parse(at.offset(), msg)
}

/// Parses problem text of the shape `emit_problem` writes.
pub fn parse_problem(text: &str) -> Result<Problem, PddlError> {
    let root = sexpr::read_one(text)?;
    let items = root.as_list().ok_or_else(|| err(&root, "expected '(define'"))?;
    if items.first().and_then(Sexp::as_symbol) != Some("define") {
        return Err(err(&root, "expected '(define'"));
    }
    let header = items.get(1).and_then(Sexp::as_list).ok_or_else(|| err(&root, "missing (problem <name>)"))?;
    let name = match header {
        [Sexp::Symbol(p, _), Sexp::Symbol(n, _)] if p == "problem" => n.clone(),
        _ => return Err(err(&items[1], "expected (problem <name>)")),
    };
    let mut problem = Problem {
        name,
        domain: String::new(),
        places: Vec::new(),
        objects: Vec::new(),
        init: Vec::new(),
        goal: GoalExpr::noop(),
    };
    let mut seen = BTreeSet::new();
    for section in &items[2..] {
        let parts = section.as_list().ok_or_else(|| err(section, "expected a section"))?;
        let key = parts.first().and_then(Sexp::as_symbol).ok_or_else(|| err(section, "expected a section keyword"))?;
        if !seen.insert(key.to_string()) {
            return Err(err(section, "duplicate section"));
        }
        match key {
            ":domain" => match &parts[1..] {
                [Sexp::Symbol(d, _)] => problem.domain = d.clone(),
                _ => return Err(err(section, "expected (:domain <name>)")),
            },
            ":objects" => {
                let mut pending = Vec::new();
                let mut it = parts[1..].iter();
                while let Some(tok) = it.next() {
                    let s = tok.as_symbol().ok_or_else(|| err(tok, "expected a symbol"))?;
                    if s == "-" {
                        let ty = it.next().and_then(Sexp::as_symbol).ok_or_else(|| err(tok, "expected a type after '-'"))?;
                        let target = match ty {
                            "place" => &mut problem.places,
                            "object" => &mut problem.objects,
                            _ => return Err(err(tok, "unknown type")),
                        };
                        target.append(&mut pending);
                    } else {
                        pending.push(s.to_string());
                    }
                }
                if let Some(p) = pending.first() {
                    return Err(PddlError::parse(section.offset(), format!("untyped object {p}")));
                }
            }
            ":init" => {
                for fact in &parts[1..] {
                    match goal_from_sexp(fact)? {
                        GoalExpr::Atom(a) => problem.init.push(a),
                        _ => return Err(err(fact, "init facts must be atoms")),
                    }
                }
            }
            ":goal" => match &parts[1..] {
                [g] => problem.goal = goal_from_sexp(g)?,
                _ => return Err(err(section, "expected one goal expression")),
            },
            _ => return Err(err(section, "unknown section")),
        }
    }
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_graph::SceneNode;
    use nalgebra::Vector3;

    pub(crate) fn small_graph() -> SceneGraph {
        let mut g = SceneGraph::new();
        for i in 0..3 {
            g.add_node(SceneNode::new(NodeId::place(i), "grass", Vector3::new(5.0 * i as f64, 0.0, 0.0)));
        }
        g.add_node(SceneNode::new(NodeId::object(0), "box", Vector3::new(5.0, 1.0, 0.0)));
        g.add_node(SceneNode::new(NodeId::region(0), "field", Vector3::new(5.0, 0.0, 0.0)));
        g.set_parent(NodeId::object(0), NodeId::place(1));
        for i in 0..3 {
            g.set_parent(NodeId::place(i), NodeId::region(0));
        }
        g.add_adjacency(NodeId::place(0), NodeId::place(1));
        g.add_adjacency(NodeId::place(1), NodeId::place(2));
        g
    }

    #[test]
    fn empty_goal() {
        let text = emit_problem(&small_graph(), NodeId::place(0), &GoalExpr::noop()).unwrap();
        assert!(text.contains("(:goal (and))"), "{text}");
        assert!(text.contains("(at place_0)"));
    }

    #[test]
    fn unresolved_symbol() {
        let e = emit_problem(&small_graph(), NodeId::place(0), &GoalExpr::inspected("object_999")).unwrap_err();
        assert_eq!(e.to_string(), "unresolved symbol object_999");
        let e = emit_problem(&small_graph(), NodeId::place(0), &GoalExpr::inspected("place_1")).unwrap_err();
        assert!(matches!(e, PddlError::TypeMismatch { .. }));
        assert!(emit_problem(&small_graph(), NodeId::place(9), &GoalExpr::noop()).is_err());
        assert!(emit_problem(&small_graph(), NodeId::object(0), &GoalExpr::noop()).is_err());
    }

    #[test]
    fn matches_golden_file() {
        let goal = GoalExpr::And(vec![GoalExpr::visited("place_2").negate(), GoalExpr::inspected("object_0")]);
        let text = emit_problem(&small_graph(), NodeId::place(0), &goal).unwrap();
        assert_eq!(text, include_str!("../../fixtures/problem_small.pddl"));
    }

    #[test]
    fn emitted_problem_reparses() {
        let goal = GoalExpr::Or(vec![GoalExpr::at("place_2"), GoalExpr::visited("object_0")]);
        let text = emit_problem(&small_graph(), NodeId::place(1), &goal).unwrap();
        let p = parse_problem(&text).unwrap();
        assert_eq!(p.domain, DOMAIN_NAME);
        assert_eq!(p.places, vec!["place_0", "place_1", "place_2"]);
        assert_eq!(p.objects, vec!["object_0"]);
        assert_eq!(p.init, vec![Atom::new(Predicate::At, "place_1"), Atom::new(Predicate::Visited, "place_1")]);
        assert_eq!(p.goal, goal.canonicalize());
    }

    #[test]
    fn domain_is_well_formed() {
        let d = sexpr::read_one(&domain_text()).unwrap();
        assert_eq!(d.as_list().unwrap().len(), 7);
    }

    #[test]
    fn malformed_problems() {
        assert!(parse_problem("(define (problem p) (:objects a))").is_err());
        assert!(parse_problem("(define (problem p) (:goal (foo a)))").is_err());
        assert!(parse_problem("(define (problem p) (:init (and)))").is_err());
        assert!(parse_problem("(problem p)").is_err());
    }
}
