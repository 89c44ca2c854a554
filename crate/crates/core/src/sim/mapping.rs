use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::run::RunData;
use super::world::WorldSpec;
use crate::error::Result;
use crate::fusion::RobotMap;
use crate::object_map::{segment_trajectory, DEFAULT_SUBMAP_SPACING};
use crate::places::{add_places_to_graph, partition, TerrainMesh, DEFAULT_MAX_ITERS, DEFAULT_PLACE_SPACING};
use crate::scene_graph::{AttrValue, NodeId, SceneGraph, SceneNode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingParams {
    pub submap_spacing: f64,
    pub place_spacing: f64,
    pub place_max_iters: usize,
    /// Terrain within this horizontal distance of the path is meshed.
    pub terrain_range: f64,
    pub mesh_pitch: f64,
}

impl Default for MappingParams {
    fn default() -> Self {
        Self {
            submap_spacing: DEFAULT_SUBMAP_SPACING,
            place_spacing: DEFAULT_PLACE_SPACING,
            place_max_iters: DEFAULT_MAX_ITERS,
            terrain_range: 8.0,
            mesh_pitch: 1.0,
        }
    }
}

fn nearest_keyframe(run: &RunData, x: f64, y: f64) -> (usize, f64) {
    run.ground_truth
        .iter()
        .enumerate()
        .map(|(k, g)| (k, (g.translation().xy() - nalgebra::Vector2::new(x, y)).norm()))
        .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
}

/// Builds one robot's map in its odometry frame: submaps, objects deduped
/// by track id, surface places over the terrain seen along the path, and
/// regions for every world region those places fall in.
pub fn build_robot_map(world: &WorldSpec, run: &RunData, name: &str, robot_id: u32, p: &MappingParams) -> Result<RobotMap> {
    let submaps = segment_trajectory(robot_id, &run.keyframes, p.submap_spacing)?;

    // Terrain mesh restricted to the swept corridor, each vertex moved into
    // the odometry frame through its nearest keyframe.
    let full = world.terrain_mesh(p.mesh_pitch);
    let mut keep: Vec<Option<usize>> = vec![None; full.vertices.len()];
    let mut mesh = TerrainMesh::default();
    let mut world_xy = Vec::new();
    for (v, pos) in full.vertices.iter().enumerate() {
        let (k, d) = nearest_keyframe(run, pos.x, pos.y);
        if d > p.terrain_range {
            continue;
        }
        keep[v] = Some(mesh.vertices.len());
        mesh.vertices.push(run.world_to_odom(k).transform_point(pos));
        mesh.labels.push(full.labels[v].clone());
        world_xy.push(*pos);
    }
    for &(a, b) in &full.adjacency {
        if let (Some(a), Some(b)) = (keep[a], keep[b]) {
            mesh.adjacency.push((a, b));
        }
    }
    let cells = partition(&mesh, p.place_spacing, p.place_max_iters)?.cells;

    let mut graph = SceneGraph::new();
    add_places_to_graph(&mut graph, &cells, 0);

    // Regions: world region of each place's true footprint center.
    let mut region_ids: BTreeMap<u64, u64> = BTreeMap::new();
    let mut region_members: BTreeMap<u64, Vec<Vector3<f64>>> = BTreeMap::new();
    for c in &cells {
        let w = c.vertex_ids.iter().map(|&v| world_xy[v]).sum::<Vector3<f64>>() / c.vertex_ids.len() as f64;
        let Some(region) = world.region_at(w.x, w.y) else { continue };
        let next = region_ids.len() as u64;
        let rid = *region_ids.entry(region.id).or_insert(next);
        region_members.entry(rid).or_default().push(c.center);
        graph.set_parent(NodeId::place(c.id as u64), NodeId::region(rid));
    }
    for (world_id, rid) in &region_ids {
        let members = &region_members[rid];
        let center = members.iter().sum::<Vector3<f64>>() / members.len() as f64;
        let class = &world.regions.iter().find(|r| r.id == *world_id).expect("region exists").class;
        graph.add_node(SceneNode::new(NodeId::region(*rid), class.clone(), center));
    }

    // Objects: mean of all sighting centroids per track.
    let mut tracks: BTreeMap<u64, (String, Vector3<f64>, usize)> = BTreeMap::new();
    for kf in &run.keyframes {
        for o in &kf.observations {
            let c = o.points.iter().sum::<Vector3<f64>>() / o.points.len() as f64;
            let e = tracks.entry(o.track_id).or_insert_with(|| (o.class_label.clone(), Vector3::zeros(), 0));
            e.1 += c;
            e.2 += 1;
        }
    }
    for (i, (track, (class, sum, n))) in tracks.iter().enumerate() {
        let pos = sum / *n as f64;
        let id = NodeId::object(i as u64);
        graph.add_node(SceneNode::new(id, class.clone(), pos).with_attr("track", AttrValue::Num(*track as f64)));
        let parent = cells.iter().min_by(|a, b| (a.center - pos).norm().total_cmp(&(b.center - pos).norm()));
        if let Some(c) = parent {
            graph.set_parent(id, NodeId::place(c.id as u64));
        }
    }
    graph.canonicalize();

    Ok(RobotMap {
        name: name.to_string(),
        robot_id,
        keyframes: run.odometry(),
        submaps,
        graph,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_world, simulate_run, OdometryModel, SensorModel};

    #[test]
    fn perfect_run_maps_objects_exactly() {
        let w = generate_world(11, 40, [100.0, 100.0]).unwrap();
        let roads = w.roads().unwrap();
        let wp = [[2.0, roads.road_y], [roads.road_x, roads.road_y], [roads.road_x, 95.0]];
        let run = simulate_run(&w, &wp, &OdometryModel::perfect(), &SensorModel::perfect(10.0), 1).unwrap();
        let m = build_robot_map(&w, &run, "spot", 0, &MappingParams::default()).unwrap();
        assert!(m.graph.validate().is_empty(), "{:?}", m.graph.validate());
        let start = run.ground_truth[0];
        let objects: Vec<_> = m.graph.layer_nodes(crate::scene_graph::Layer::Object).collect();
        assert!(!objects.is_empty());
        for n in objects {
            let track = n.num_attr("track").unwrap() as usize;
            let truth = start.inverse().transform_point(&w.objects[track].position);
            assert!((n.position - truth).norm() < 1e-9);
            assert!(m.graph.parent_of(n.id).is_some());
        }
        let places = m.graph.layer_nodes(crate::scene_graph::Layer::SurfacePlace).count();
        assert!(places > 10);
        for n in m.graph.layer_nodes(crate::scene_graph::Layer::SurfacePlace) {
            assert!(m.graph.region_of(n.id).is_some());
        }
        assert_eq!(m.submaps.len(), m.submaps.last().unwrap().index + 1);
    }
}
