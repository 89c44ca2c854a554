//! Regenerates the grounding fixtures: the scene graph the trials refer to
//! and the replay cassette recorded from the scripted replies.
//!
//!     cargo run -p mrsg-core --example grounding_fixtures

use std::path::Path;

use mrsg_core::grounding::{default_capabilities, load_trials, score_trials, MockClient, PromptBundle, RecordingClient};
use mrsg_core::scene_graph::{NodeId, SceneGraph, SceneNode};
use nalgebra::Vector3;

const REGIONS: [&str; 4] = ["parking lot", "field", "road", "building entrance"];

// (label, x, y, region)
const PLACES: [(&str, f64, f64, u64); 8] = [
    ("asphalt", 3.0, 2.0, 0),
    ("asphalt", 6.0, 7.0, 0),
    ("grass", 31.0, 5.0, 1),
    ("grass", 38.0, 9.0, 1),
    ("road", 45.0, -8.0, 2),
    ("road", 51.0, -10.0, 2),
    ("sidewalk", 61.0, 3.0, 3),
    ("sidewalk", 58.0, 9.0, 3),
];

// (class, x, y, place)
const OBJECTS: [(&str, f64, f64, u64); 18] = [
    ("box", 2.0, 1.0, 0),
    ("box", 6.0, 2.0, 0),
    ("sign", 3.0, 8.0, 1),
    ("sign", 9.0, 7.0, 1),
    ("car", 5.0, 5.0, 1),
    ("trash", 30.0, 2.0, 2),
    ("bag", 33.0, 6.0, 2),
    ("box", 34.0, 7.0, 3),
    ("box", 40.0, 12.0, 3),
    ("tree", 28.0, 10.0, 2),
    ("window", 60.0, 1.0, 6),
    ("door", 62.0, 4.0, 6),
    ("bench", 55.0, 8.0, 7),
    ("sign", 45.0, -10.0, 4),
    ("cone", 50.0, -12.0, 5),
    ("cone", 52.0, -9.0, 5),
    ("trash", 58.0, 10.0, 7),
    ("box", 64.0, 9.0, 7),
];

fn scene() -> SceneGraph {
    let mut g = SceneGraph::new();
    for (i, class) in REGIONS.iter().enumerate() {
        let members: Vec<_> = PLACES.iter().filter(|p| p.3 == i as u64).collect();
        let c = members.iter().map(|p| Vector3::new(p.1, p.2, 0.0)).sum::<Vector3<f64>>() / members.len() as f64;
        g.add_node(SceneNode::new(NodeId::region(i as u64), *class, c));
    }
    for (i, (label, x, y, r)) in PLACES.iter().enumerate() {
        g.add_node(SceneNode::new(NodeId::place(i as u64), *label, Vector3::new(*x, *y, 0.0)));
        g.set_parent(NodeId::place(i as u64), NodeId::region(*r));
    }
    for (a, b) in [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (3, 7)] {
        g.add_adjacency(NodeId::place(a), NodeId::place(b));
    }
    for (i, (class, x, y, p)) in OBJECTS.iter().enumerate() {
        g.add_node(SceneNode::new(NodeId::object(i as u64), *class, Vector3::new(*x, *y, 0.5)));
        g.set_parent(NodeId::object(i as u64), NodeId::place(*p));
    }
    g.canonicalize();
    assert!(g.validate().is_empty());
    g
}

#[derive(serde::Deserialize)]
struct Reply {
    instruction: String,
    response: String,
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/grounding");
    let graph = scene();
    std::fs::write(dir.join("scene_graph.json"), graph.to_json() + "\n").unwrap();

    let trials = load_trials(&std::fs::read_to_string(dir.join("trials.jsonl")).unwrap()).unwrap();
    let replies = std::fs::read_to_string(dir.join("replies.jsonl")).unwrap();
    let mock = MockClient::new(replies.lines().map(|l| {
        let r: Reply = serde_json::from_str(l).unwrap();
        (r.instruction, r.response)
    }));
    let recorder = RecordingClient::new(mock);
    let bundle = PromptBundle::new(&graph, default_capabilities());
    let score = score_trials(&trials, &bundle, &recorder).unwrap();
    recorder.save(&dir.join("cassette.jsonl")).unwrap();
    println!("{score}");
}
