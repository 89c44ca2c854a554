//! Goal formulas over `visited`, `inspected` and `at`, their canonical text
//! form, truth-table equivalence, and PDDL problem/domain generation.

pub mod problem;
pub mod sexpr;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use problem::{domain_text, emit_problem, parse_problem, Problem};
use sexpr::Sexp;

pub const MAX_EQUIVALENCE_ATOMS: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PddlError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("too many atoms for exhaustive check ({0} > {MAX_EQUIVALENCE_ATOMS})")]
    TooManyAtoms(usize),
    #[error("unresolved symbol {0}")]
    UnresolvedSymbol(String),
    #[error("symbol {symbol} is not a {expected}")]
    TypeMismatch { symbol: String, expected: &'static str },
}

impl PddlError {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        PddlError::Parse { offset, message: message.into() }
    }

    pub fn offset(&self) -> Option<usize> {
        match self {
            PddlError::Parse { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Predicate {
    Visited,
    Inspected,
    At,
}

impl Predicate {
    pub const ALL: [Predicate; 3] = [Predicate::Visited, Predicate::Inspected, Predicate::At];

    pub fn name(self) -> &'static str {
        match self {
            Predicate::Visited => "visited",
            Predicate::Inspected => "inspected",
            Predicate::At => "at",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub predicate: Predicate,
    pub arg: String,
}

impl Atom {
    pub fn new(predicate: Predicate, arg: impl Into<String>) -> Self {
        Atom { predicate, arg: arg.into().to_lowercase() }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} {})", self.predicate.name(), self.arg)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum GoalExpr {
    Atom(Atom),
    And(Vec<GoalExpr>),
    Or(Vec<GoalExpr>),
    Not(Box<GoalExpr>),
}

impl GoalExpr {
    pub fn atom(predicate: Predicate, arg: impl Into<String>) -> Self {
        GoalExpr::Atom(Atom::new(predicate, arg))
    }

    pub fn visited(arg: impl Into<String>) -> Self {
        Self::atom(Predicate::Visited, arg)
    }

    pub fn inspected(arg: impl Into<String>) -> Self {
        Self::atom(Predicate::Inspected, arg)
    }

    pub fn at(arg: impl Into<String>) -> Self {
        Self::atom(Predicate::At, arg)
    }

    pub fn negate(self) -> Self {
        GoalExpr::Not(Box::new(self))
    }

    /// The empty conjunction, satisfied by any state.
    pub fn noop() -> Self {
        GoalExpr::And(Vec::new())
    }

    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<Atom>) {
        match self {
            GoalExpr::Atom(a) => {
                out.insert(a.clone());
            }
            GoalExpr::And(xs) | GoalExpr::Or(xs) => xs.iter().for_each(|x| x.collect_atoms(out)),
            GoalExpr::Not(x) => x.collect_atoms(out),
        }
    }

    pub fn evaluate(&self, truth: &impl Fn(&Atom) -> bool) -> bool {
        match self {
            GoalExpr::Atom(a) => truth(a),
            GoalExpr::And(xs) => xs.iter().all(|x| x.evaluate(truth)),
            GoalExpr::Or(xs) => xs.iter().any(|x| x.evaluate(truth)),
            GoalExpr::Not(x) => !x.evaluate(truth),
        }
    }

    /// Lowercased symbols, And/Or children sorted by printed form.
    pub fn canonicalize(&self) -> GoalExpr {
        match self {
            GoalExpr::Atom(a) => GoalExpr::Atom(Atom::new(a.predicate, a.arg.clone())),
            GoalExpr::And(xs) => GoalExpr::And(sorted_children(xs)),
            GoalExpr::Or(xs) => GoalExpr::Or(sorted_children(xs)),
            GoalExpr::Not(x) => GoalExpr::Not(Box::new(x.canonicalize())),
        }
    }

    fn write_raw(&self, out: &mut String) {
        match self {
            GoalExpr::Atom(a) => {
                out.push('(');
                out.push_str(a.predicate.name());
                out.push(' ');
                out.push_str(&a.arg);
                out.push(')');
            }
            GoalExpr::And(xs) | GoalExpr::Or(xs) => {
                out.push_str(if matches!(self, GoalExpr::And(_)) { "(and" } else { "(or" });
                for x in xs {
                    out.push(' ');
                    x.write_raw(out);
                }
                out.push(')');
            }
            GoalExpr::Not(x) => {
                out.push_str("(not ");
                x.write_raw(out);
                out.push(')');
            }
        }
    }
}

fn raw_text(g: &GoalExpr) -> String {
    let mut s = String::new();
    g.write_raw(&mut s);
    s
}

fn sorted_children(xs: &[GoalExpr]) -> Vec<GoalExpr> {
    let mut keyed: Vec<(String, GoalExpr)> = xs
        .iter()
        .map(|x| {
            let c = x.canonicalize();
            (raw_text(&c), c)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    keyed.into_iter().map(|(_, c)| c).collect()
}

/// Canonical text: lowercase, single spaces, sorted And/Or children.
pub fn print_goal(g: &GoalExpr) -> String {
    raw_text(&g.canonicalize())
}

impl fmt::Display for GoalExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_goal(self))
    }
}

impl Serialize for GoalExpr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&print_goal(self))
    }
}

impl<'de> Deserialize<'de> for GoalExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_goal(&text).map_err(serde::de::Error::custom)
    }
}

pub fn parse_goal(text: &str) -> Result<GoalExpr, PddlError> {
    goal_from_sexp(&sexpr::read_one(text)?)
}

pub(crate) fn goal_from_sexp(e: &Sexp) -> Result<GoalExpr, PddlError> {
    let Sexp::List(items, start) = e else {
        return Err(PddlError::parse(e.offset(), "expected '('"));
    };
    let Some(head) = items.first() else {
        return Err(PddlError::parse(*start, "empty expression"));
    };
    let Some(name) = head.as_symbol() else {
        return Err(PddlError::parse(head.offset(), "expected an operator or predicate name"));
    };
    let rest = &items[1..];
    match name {
        "and" => Ok(GoalExpr::And(rest.iter().map(goal_from_sexp).collect::<Result<_, _>>()?)),
        "or" => Ok(GoalExpr::Or(rest.iter().map(goal_from_sexp).collect::<Result<_, _>>()?)),
        "not" => {
            if rest.len() != 1 {
                return Err(PddlError::parse(head.offset(), format!("wrong arity: not takes 1 argument, got {}", rest.len())));
            }
            Ok(GoalExpr::Not(Box::new(goal_from_sexp(&rest[0])?)))
        }
        _ => {
            let pred = Predicate::from_name(name)
                .ok_or_else(|| PddlError::parse(head.offset(), format!("unknown predicate '{name}'")))?;
            if rest.len() != 1 {
                return Err(PddlError::parse(
                    head.offset(),
                    format!("wrong arity: {name} takes 1 argument, got {}", rest.len()),
                ));
            }
            let arg = rest[0]
                .as_symbol()
                .ok_or_else(|| PddlError::parse(rest[0].offset(), "expected a symbol argument"))?;
            Ok(GoalExpr::atom(pred, arg))
        }
    }
}

/// Truth table of `g` over `atoms` for the 64 assignments starting at row
/// `64 * chunk`; bit `r` of the result is the value in row `64 * chunk + r`,
/// where row bit `i` is the value of `atoms[i]`.
fn eval_chunk(g: &GoalExpr, atoms: &[Atom], chunk: u64) -> u64 {
    const LOW: [u64; 6] = [
        0xAAAA_AAAA_AAAA_AAAA,
        0xCCCC_CCCC_CCCC_CCCC,
        0xF0F0_F0F0_F0F0_F0F0,
        0xFF00_FF00_FF00_FF00,
        0xFFFF_0000_FFFF_0000,
        0xFFFF_FFFF_0000_0000,
    ];
    match g {
        GoalExpr::Atom(a) => {
            let i = atoms.binary_search(a).expect("atom in union");
            if i < 6 {
                LOW[i]
            } else if chunk >> (i - 6) & 1 == 1 {
                u64::MAX
            } else {
                0
            }
        }
        GoalExpr::And(xs) => xs.iter().fold(u64::MAX, |m, x| m & eval_chunk(x, atoms, chunk)),
        GoalExpr::Or(xs) => xs.iter().fold(0, |m, x| m | eval_chunk(x, atoms, chunk)),
        GoalExpr::Not(x) => !eval_chunk(x, atoms, chunk),
    }
}

/// True iff both formulas agree on every assignment to their combined atoms.
pub fn goal_equivalent(a: &GoalExpr, b: &GoalExpr) -> Result<bool, PddlError> {
    let mut atoms = a.atoms();
    atoms.extend(b.atoms());
    if atoms.len() > MAX_EQUIVALENCE_ATOMS {
        return Err(PddlError::TooManyAtoms(atoms.len()));
    }
    let atoms: Vec<Atom> = atoms.into_iter().collect();
    let n = atoms.len();
    let (chunks, mask) = if n >= 6 { (1u64 << (n - 6), u64::MAX) } else { (1, (1u64 << (1u64 << n)) - 1) };
    Ok((0..chunks).all(|c| (eval_chunk(a, &atoms, c) ^ eval_chunk(b, &atoms, c)) & mask == 0))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn arb_goal(symbols: usize, depth: u32) -> impl Strategy<Value = GoalExpr> {
        let leaf = (0..3usize, 0..symbols).prop_map(|(p, s)| GoalExpr::atom(Predicate::ALL[p], format!("place_{s}")));
        leaf.prop_recursive(depth, 24, 4, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 0..4).prop_map(GoalExpr::And),
                proptest::collection::vec(inner.clone(), 0..4).prop_map(GoalExpr::Or),
                inner.prop_map(|g| g.negate()),
            ]
        })
    }

    #[test]
    fn parses_atoms_and_nesting() {
        assert_eq!(parse_goal("(inspected object_39)").unwrap(), GoalExpr::inspected("object_39"));
        assert_eq!(
            parse_goal("(and (visited place_2) (not (visited place_7)))").unwrap(),
            GoalExpr::And(vec![GoalExpr::visited("place_2"), GoalExpr::visited("place_7").negate()])
        );
        assert_eq!(parse_goal(" ( OR\n\t(AT Place_1) ) ").unwrap(), GoalExpr::Or(vec![GoalExpr::at("place_1")]));
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let e = parse_goal("(foo x)").unwrap_err();
        assert_eq!(e.offset(), Some(1));
        assert!(e.to_string().contains("unknown predicate"), "{e}");
        let e = parse_goal("(and (visited a b))").unwrap_err();
        assert!(e.to_string().contains("wrong arity"), "{e}");
        assert_eq!(e.offset(), Some(6));
        assert!(parse_goal("(inspected").unwrap_err().to_string().contains("unbalanced"));
        assert!(parse_goal("(not)").is_err());
        assert!(parse_goal("()").is_err());
        assert!(parse_goal("visited").is_err());
        assert!(parse_goal("(visited (a))").is_err());
    }

    #[test]
    fn printing_is_canonical() {
        let text = "(and (inspected object_1) (not (visited place_3)) (or (at place_1) (visited place_2)))";
        let g = parse_goal(text).unwrap();
        assert_eq!(print_goal(&g), text);
        let ab = GoalExpr::And(vec![GoalExpr::visited("b"), GoalExpr::visited("a")]);
        let ba = GoalExpr::And(vec![GoalExpr::visited("a"), GoalExpr::visited("b")]);
        assert_eq!(print_goal(&ab), print_goal(&ba));
        assert_eq!(print_goal(&GoalExpr::noop()), "(and)");
    }

    #[test]
    fn equivalence_examples() {
        let a = GoalExpr::visited("a");
        let b = GoalExpr::visited("b");
        let and_ab = GoalExpr::And(vec![a.clone(), b.clone()]);
        let and_ba = GoalExpr::And(vec![b.clone(), a.clone()]);
        assert!(goal_equivalent(&and_ab, &and_ba).unwrap());
        assert!(!goal_equivalent(&GoalExpr::inspected("box_3"), &GoalExpr::visited("box_3")).unwrap());
        let absorb = GoalExpr::Or(vec![a.clone(), and_ab.clone()]);
        assert!(goal_equivalent(&absorb, &a).unwrap());
        assert!(goal_equivalent(&a.clone().negate().negate(), &a).unwrap());
        assert!(goal_equivalent(&GoalExpr::noop(), &GoalExpr::Or(vec![a.clone(), a.clone().negate()])).unwrap());
        assert!(!goal_equivalent(&GoalExpr::noop(), &GoalExpr::Or(vec![])).unwrap());
    }

    #[test]
    fn equivalence_across_chunks() {
        // 8 atoms: parity of atoms 0 and 7 written two ways.
        let at = |i: usize| GoalExpr::visited(format!("p{i}"));
        let filler = GoalExpr::Or((1..7).map(|i| GoalExpr::And(vec![at(i), at(i).negate()])).collect());
        let xor1 = GoalExpr::Or(vec![
            GoalExpr::And(vec![at(0), at(7).negate()]),
            GoalExpr::And(vec![at(0).negate(), at(7)]),
            filler.clone(),
        ]);
        let xor2 = GoalExpr::And(vec![GoalExpr::Or(vec![at(0), at(7)]), GoalExpr::And(vec![at(0), at(7)]).negate()]);
        assert!(goal_equivalent(&xor1, &xor2).unwrap());
        assert!(!goal_equivalent(&xor1, &GoalExpr::Or(vec![at(0), at(7)])).unwrap());
    }

    #[test]
    fn too_many_atoms() {
        let big = GoalExpr::And((0..21).map(|i| GoalExpr::visited(format!("p{i}"))).collect());
        assert_eq!(goal_equivalent(&big, &big), Err(PddlError::TooManyAtoms(21)));
        let ok = GoalExpr::And((0..20).map(|i| GoalExpr::visited(format!("p{i}"))).collect());
        assert!(goal_equivalent(&ok, &ok).unwrap());
    }

    #[test]
    fn serde_uses_canonical_text() {
        let g = GoalExpr::And(vec![GoalExpr::visited("b"), GoalExpr::inspected("a")]);
        let j = serde_json::to_string(&g).unwrap();
        assert_eq!(j, "\"(and (inspected a) (visited b))\"");
        let back: GoalExpr = serde_json::from_str(&j).unwrap();
        assert_eq!(back, g.canonicalize());
    }

    proptest! {
        #[test]
        fn round_trip(g in arb_goal(5, 4)) {
            prop_assert_eq!(parse_goal(&print_goal(&g)).unwrap(), g.canonicalize());
        }

        #[test]
        fn equivalence_laws(g in arb_goal(4, 3), h in arb_goal(4, 3)) {
            prop_assert!(goal_equivalent(&g, &g).unwrap());
            prop_assert!(goal_equivalent(&g, &g.canonicalize()).unwrap());
            prop_assert!(goal_equivalent(&g, &g.clone().negate().negate()).unwrap());
            prop_assert_eq!(goal_equivalent(&g, &h).unwrap(), goal_equivalent(&h, &g).unwrap());
        }
    }
}
