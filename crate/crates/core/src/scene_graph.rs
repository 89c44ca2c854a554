//! Layered scene graph: objects, surface places, regions and agents.
//!
//! The graph is stored as plain lists so that it mirrors its JSON form and
//! can represent (and report) malformed inputs. [`SceneGraph::validate`]
//! lists every broken invariant.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Layer {
    Object,
    SurfacePlace,
    Region,
    Agent,
}

impl Layer {
    /// Prefix used for symbolic names (`object_3`, `place_12`, ...).
    pub fn symbol_prefix(self) -> &'static str {
        match self {
            Layer::Object => "object",
            Layer::SurfacePlace => "place",
            Layer::Region => "region",
            Layer::Agent => "agent",
        }
    }

    pub fn from_symbol_prefix(prefix: &str) -> Option<Layer> {
        match prefix {
            "object" => Some(Layer::Object),
            "place" => Some(Layer::SurfacePlace),
            "region" => Some(Layer::Region),
            "agent" => Some(Layer::Agent),
            _ => None,
        }
    }

    /// Layer that nodes of this layer may have as parent.
    pub fn parent_layer(self) -> Option<Layer> {
        match self {
            Layer::Object => Some(Layer::SurfacePlace),
            Layer::SurfacePlace => Some(Layer::Region),
            Layer::Region | Layer::Agent => None,
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Layer::Object => "OBJECT",
            Layer::SurfacePlace => "SURFACE_PLACE",
            Layer::Region => "REGION",
            Layer::Agent => "AGENT",
        };
        f.write_str(s)
    }
}

/// `(layer, index)`; serialized as `["OBJECT", 3]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub Layer, pub u64);

impl NodeId {
    pub fn object(i: u64) -> Self {
        NodeId(Layer::Object, i)
    }

    pub fn place(i: u64) -> Self {
        NodeId(Layer::SurfacePlace, i)
    }

    pub fn region(i: u64) -> Self {
        NodeId(Layer::Region, i)
    }

    pub fn layer(&self) -> Layer {
        self.0
    }

    pub fn index(&self) -> u64 {
        self.1
    }

    /// Symbolic name used in prompts and PDDL, e.g. `object_39`.
    pub fn symbol(&self) -> String {
        format!("{}_{}", self.0.symbol_prefix(), self.1)
    }

    pub fn from_symbol(symbol: &str) -> Option<NodeId> {
        let (prefix, idx) = symbol.rsplit_once('_')?;
        let layer = Layer::from_symbol_prefix(prefix)?;
        if idx.is_empty() || !idx.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        Some(NodeId(layer, idx.parse().ok()?))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.0, self.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Num(f64),
    Str(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneNode {
    pub id: NodeId,
    pub layer: Layer,
    #[serde(rename = "class")]
    pub class_label: String,
    #[serde(rename = "pos")]
    pub position: Vector3<f64>,
    #[serde(default)]
    pub attrs: BTreeMap<String, AttrValue>,
}

impl SceneNode {
    pub fn new(id: NodeId, class_label: impl Into<String>, position: Vector3<f64>) -> Self {
        Self { id, layer: id.layer(), class_label: class_label.into(), position, attrs: BTreeMap::new() }
    }

    pub fn with_attr(mut self, key: &str, value: AttrValue) -> Self {
        self.attrs.insert(key.to_string(), value);
        self
    }

    pub fn num_attr(&self, key: &str) -> Option<f64> {
        match self.attrs.get(key) {
            Some(AttrValue::Num(v)) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<SceneNode>,
    /// `(child, parent)` pairs.
    pub parents: Vec<(NodeId, NodeId)>,
    /// Unordered same-layer pairs, stored with the smaller id first.
    pub adjacency: Vec<(NodeId, NodeId)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    DuplicateNode(NodeId),
    LayerMismatch(NodeId),
    NonFinitePosition(NodeId),
    DanglingParent(NodeId, NodeId),
    ForbiddenParent(NodeId, NodeId),
    MultipleParents(NodeId),
    DanglingAdjacency(NodeId, NodeId),
    CrossLayerAdjacency(NodeId, NodeId),
    SelfAdjacency(NodeId),
    DuplicateAdjacency(NodeId, NodeId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNode(id) => write!(f, "duplicate node id {id}"),
            Violation::LayerMismatch(id) => write!(f, "node {id} layer field disagrees with its id"),
            Violation::NonFinitePosition(id) => write!(f, "node {id} has a non-finite position"),
            Violation::DanglingParent(c, p) => write!(f, "parent edge {c} -> {p} references a missing node"),
            Violation::ForbiddenParent(c, p) => write!(f, "parent edge {c} -> {p} violates the layer rule"),
            Violation::MultipleParents(c) => write!(f, "node {c} has more than one parent"),
            Violation::DanglingAdjacency(a, b) => write!(f, "adjacency {a} -- {b} references a missing node"),
            Violation::CrossLayerAdjacency(a, b) => write!(f, "adjacency {a} -- {b} crosses layers"),
            Violation::SelfAdjacency(a) => write!(f, "adjacency {a} -- {a} is a self loop"),
            Violation::DuplicateAdjacency(a, b) => write!(f, "adjacency {a} -- {b} listed more than once"),
        }
    }
}

fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl SceneGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: SceneNode) {
        self.nodes.push(node);
    }

    pub fn set_parent(&mut self, child: NodeId, parent: NodeId) {
        self.parents.retain(|(c, _)| *c != child);
        self.parents.push((child, parent));
    }

    pub fn add_adjacency(&mut self, a: NodeId, b: NodeId) {
        let e = ordered(a, b);
        if !self.adjacency.contains(&e) {
            self.adjacency.push(e);
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&SceneNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_map(&self) -> HashMap<NodeId, &SceneNode> {
        self.nodes.iter().map(|n| (n.id, n)).collect()
    }

    pub fn parent_of(&self, child: NodeId) -> Option<NodeId> {
        self.parents.iter().find(|(c, _)| *c == child).map(|(_, p)| *p)
    }

    pub fn parent_map(&self) -> BTreeMap<NodeId, NodeId> {
        self.parents.iter().copied().collect()
    }

    pub fn layer_nodes(&self, layer: Layer) -> impl Iterator<Item = &SceneNode> {
        self.nodes.iter().filter(move |n| n.layer == layer)
    }

    /// Region of a node: its own parent for places, the parent's parent for
    /// objects.
    pub fn region_of(&self, id: NodeId) -> Option<NodeId> {
        let mut cur = id;
        while let Some(p) = self.parent_of(cur) {
            if p.layer() == Layer::Region {
                return Some(p);
            }
            cur = p;
        }
        None
    }

    /// Sorts nodes and edges, normalizes adjacency orientation and drops
    /// exact duplicates.
    pub fn canonicalize(&mut self) {
        self.nodes.sort_by_key(|n| n.id);
        self.parents.sort();
        self.parents.dedup();
        for e in &mut self.adjacency {
            *e = ordered(e.0, e.1);
        }
        self.adjacency.sort();
        self.adjacency.dedup();
    }

    /// Next unused index in `layer`.
    pub fn next_index(&self, layer: Layer) -> u64 {
        self.layer_nodes(layer).map(|n| n.id.index() + 1).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut layer_of: HashMap<NodeId, Layer> = HashMap::new();
        for n in &self.nodes {
            if layer_of.insert(n.id, n.layer).is_some() {
                out.push(Violation::DuplicateNode(n.id));
            }
            if n.layer != n.id.layer() {
                out.push(Violation::LayerMismatch(n.id));
            }
            if !n.position.iter().all(|v| v.is_finite()) {
                out.push(Violation::NonFinitePosition(n.id));
            }
        }
        let mut parent_count: BTreeMap<NodeId, usize> = BTreeMap::new();
        for &(c, p) in &self.parents {
            *parent_count.entry(c).or_default() += 1;
            match (layer_of.get(&c), layer_of.get(&p)) {
                (Some(&lc), Some(&lp)) => {
                    if lc.parent_layer() != Some(lp) {
                        out.push(Violation::ForbiddenParent(c, p));
                    }
                }
                _ => out.push(Violation::DanglingParent(c, p)),
            }
        }
        for (c, n) in parent_count {
            if n > 1 {
                out.push(Violation::MultipleParents(c));
            }
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &self.adjacency {
            if a == b {
                out.push(Violation::SelfAdjacency(a));
            }
            if !seen.insert(ordered(a, b)) {
                out.push(Violation::DuplicateAdjacency(a, b));
            }
            match (layer_of.get(&a), layer_of.get(&b)) {
                (Some(la), Some(lb)) => {
                    if la != lb {
                        out.push(Violation::CrossLayerAdjacency(a, b));
                    }
                }
                _ => out.push(Violation::DanglingAdjacency(a, b)),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene graph serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> SceneGraph {
        let mut g = SceneGraph::new();
        g.add_node(SceneNode::new(NodeId::region(0), "parking lot", Vector3::new(5.0, 5.0, 0.0)));
        for i in 0..3 {
            g.add_node(SceneNode::new(NodeId::place(i), "road", Vector3::new(i as f64 * 5.0, 0.0, 0.0)));
            g.set_parent(NodeId::place(i), NodeId::region(0));
        }
        g.add_adjacency(NodeId::place(0), NodeId::place(1));
        g.add_adjacency(NodeId::place(2), NodeId::place(1));
        g.add_node(
            SceneNode::new(NodeId::object(7), "box", Vector3::new(1.25, 0.5, 0.1))
                .with_attr("robot", AttrValue::Num(0.0))
                .with_attr("note", AttrValue::Str("seen twice".into())),
        );
        g.set_parent(NodeId::object(7), NodeId::place(0));
        g
    }

    #[test]
    fn empty_and_sample_are_valid() {
        assert!(SceneGraph::new().validate().is_empty());
        assert_eq!(sample().validate(), vec![]);
    }

    #[test]
    fn object_to_region_parent_is_reported() {
        let mut g = sample();
        g.set_parent(NodeId::object(7), NodeId::region(0));
        assert_eq!(g.validate(), vec![Violation::ForbiddenParent(NodeId::object(7), NodeId::region(0))]);
    }

    #[test]
    fn duplicate_node_is_reported() {
        let mut g = sample();
        let dup = g.nodes[1].clone();
        g.nodes.push(dup);
        assert_eq!(g.validate(), vec![Violation::DuplicateNode(NodeId::place(0))]);
    }

    #[test]
    fn json_schema_and_exact_round_trip() {
        let g = sample();
        let s = g.to_json();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["nodes"][4]["id"], serde_json::json!(["OBJECT", 7]));
        assert_eq!(v["nodes"][4]["class"], "box");
        assert_eq!(v["nodes"][4]["pos"], serde_json::json!([1.25, 0.5, 0.1]));
        assert_eq!(v["parents"][0], serde_json::json!([["SURFACE_PLACE", 0], ["REGION", 0]]));
        let back = SceneGraph::from_json(&s).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_json(), s);
    }

    #[test]
    fn symbols_round_trip() {
        assert_eq!(NodeId::object(39).symbol(), "object_39");
        assert_eq!(NodeId::from_symbol("place_12"), Some(NodeId::place(12)));
        assert_eq!(NodeId::from_symbol("box_3"), None);
        assert_eq!(NodeId::from_symbol("object_"), None);
        assert_eq!(sample().region_of(NodeId::object(7)), Some(NodeId::region(0)));
    }

    #[derive(Debug, Clone)]
    enum Corruption {
        DuplicateNode(usize),
        FlipLayer(usize),
        NanPosition(usize),
        DanglingParent(usize),
        WrongParentLayer(usize),
        SecondParent,
        DanglingAdjacency(usize),
        CrossLayerAdjacency,
        SelfLoop(usize),
        RepeatAdjacency(usize),
        RemoveParentTarget,
    }

    fn apply(g: &mut SceneGraph, c: &Corruption) {
        let n = g.nodes.len();
        match *c {
            Corruption::DuplicateNode(i) => {
                let d = g.nodes[i % n].clone();
                g.nodes.push(d)
            }
            Corruption::FlipLayer(i) => {
                let node = &mut g.nodes[i % n];
                node.layer = if node.layer == Layer::Agent { Layer::Object } else { Layer::Agent };
            }
            Corruption::NanPosition(i) => g.nodes[i % n].position.y = f64::NAN,
            Corruption::DanglingParent(i) => {
                g.parents.push((g.nodes[i % n].id, NodeId::region(999)));
            }
            Corruption::WrongParentLayer(i) => {
                let id = g.nodes[i % n].id;
                g.parents.retain(|(c, _)| *c != id);
                g.parents.push((id, NodeId::object(7)));
            }
            Corruption::SecondParent => g.parents.push((NodeId::place(1), NodeId::region(0))),
            Corruption::DanglingAdjacency(i) => g.adjacency.push((g.nodes[i % n].id, NodeId::place(999))),
            Corruption::CrossLayerAdjacency => g.adjacency.push((NodeId::object(7), NodeId::place(2))),
            Corruption::SelfLoop(i) => {
                let id = g.nodes[i % n].id;
                g.adjacency.push((id, id))
            }
            Corruption::RepeatAdjacency(i) => {
                let (a, b) = g.adjacency[i % g.adjacency.len()];
                g.adjacency.push((b, a));
            }
            Corruption::RemoveParentTarget => g.nodes.retain(|n| n.id != NodeId::region(0)),
        }
    }

    fn corruption() -> impl Strategy<Value = Corruption> {
        prop_oneof![
            (0usize..10).prop_map(Corruption::DuplicateNode),
            (0usize..10).prop_map(Corruption::FlipLayer),
            (0usize..10).prop_map(Corruption::NanPosition),
            (0usize..10).prop_map(Corruption::DanglingParent),
            (0usize..10).prop_map(Corruption::WrongParentLayer),
            Just(Corruption::SecondParent),
            (0usize..10).prop_map(Corruption::DanglingAdjacency),
            Just(Corruption::CrossLayerAdjacency),
            (0usize..10).prop_map(Corruption::SelfLoop),
            (0usize..10).prop_map(Corruption::RepeatAdjacency),
            Just(Corruption::RemoveParentTarget),
        ]
    }

    proptest! {
        #[test]
        fn every_single_corruption_is_detected(c in corruption()) {
            let mut g = sample();
            apply(&mut g, &c);
            prop_assert!(!g.validate().is_empty(), "{c:?} not detected");
        }

        #[test]
        fn canonicalize_keeps_valid_graphs_valid(shift in 0usize..5) {
            let mut g = sample();
            g.nodes.rotate_left(shift);
            g.canonicalize();
            prop_assert!(g.validate().is_empty());
        }
    }
}
