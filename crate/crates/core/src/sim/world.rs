use std::collections::BTreeSet;

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::places::TerrainMesh;

pub const EMBEDDING_DIM: usize = 64;
pub const MIN_OBJECT_SPACING: f64 = 2.0;
pub const WATER: &str = "water";
pub const TERRAIN_LABELS: [&str; 5] = ["road", "sidewalk", "grass", "rocks", WATER];

/// Class name and full box size (x, y, z) in meters.
pub const CLASSES: [(&str, [f64; 3]); 16] = [
    ("box", [0.6, 0.6, 0.6]),
    ("sign", [0.6, 0.1, 2.0]),
    ("car", [4.5, 1.8, 1.5]),
    ("trash", [0.6, 0.6, 1.0]),
    ("bag", [0.5, 0.3, 0.4]),
    ("tree", [1.5, 1.5, 6.0]),
    ("bench", [1.8, 0.6, 0.9]),
    ("cone", [0.4, 0.4, 0.7]),
    ("barrel", [0.6, 0.6, 0.9]),
    ("pole", [0.2, 0.2, 4.0]),
    ("hydrant", [0.4, 0.4, 0.8]),
    ("bicycle", [1.8, 0.5, 1.0]),
    ("rock", [1.2, 1.0, 0.8]),
    ("crate", [1.0, 1.0, 1.0]),
    ("door", [1.0, 0.2, 2.1]),
    ("window", [1.5, 0.1, 1.2]),
];

const REGION_NAMES: [&str; 12] = [
    "parking lot",
    "field",
    "forest edge",
    "building entrance",
    "meadow",
    "quarry",
    "lakeside",
    "courtyard",
    "orchard",
    "depot",
    "training ground",
    "picnic area",
];

/// Region cells are roughly this wide.
const REGION_SIZE: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub label: String,
    /// Counter-clockwise polygon in the xy plane.
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: u64,
    pub class: String,
    pub position: Vector3<f64>,
    pub size: [f64; 3],
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldRegion {
    pub id: u64,
    pub class: String,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototype {
    pub name: String,
    pub prototype: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub extent: [f64; 2],
    /// Terrain outside every patch.
    pub base_label: String,
    /// Later patches cover earlier ones.
    pub patches: Vec<Patch>,
    pub objects: Vec<WorldObject>,
    pub regions: Vec<WorldRegion>,
    pub classes: Vec<ClassPrototype>,
    pub untraversable: BTreeSet<String>,
}

pub fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len().wrapping_sub(1);
    for i in 0..poly.len() {
        let ([xi, yi], [xj, yj]) = (poly[i], poly[j]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

fn rotated_rect(cx: f64, cy: f64, hw: f64, hh: f64, angle: f64) -> Vec<[f64; 2]> {
    let (s, c) = angle.sin_cos();
    [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)].iter().map(|(x, y)| [cx + c * x - s * y, cy + s * x + c * y]).collect()
}

fn disc(cx: f64, cy: f64, r: f64, sides: usize) -> Vec<[f64; 2]> {
    (0..sides)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / sides as f64;
            [cx + r * a.cos(), cy + r * a.sin()]
        })
        .collect()
}

/// Orthonormal class prototypes from Gram-Schmidt on Gaussian draws.
fn prototypes(rng: &mut ChaCha8Rng) -> Vec<ClassPrototype> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for _ in CLASSES {
        let mut v = DVector::from_fn(EMBEDDING_DIM, |_, _| rng.sample::<f64, _>(StandardNormal));
        for b in &basis {
            v -= b * b.dot(&v);
        }
        v /= v.norm();
        basis.push(v);
    }
    CLASSES.iter().zip(basis).map(|((name, _), v)| ClassPrototype { name: name.to_string(), prototype: v.iter().copied().collect() }).collect()
}

/// Road center lines of a generated world.
pub struct RoadLayout {
    /// y of the east-west road center line.
    pub road_y: f64,
    /// x of the north-south road center line.
    pub road_x: f64,
}

pub const ROAD_HALF_WIDTH: f64 = 3.0;
pub const SIDEWALK_WIDTH: f64 = 2.0;

impl WorldSpec {
    pub fn label_at(&self, x: f64, y: f64) -> &str {
        self.patches.iter().rev().find(|p| point_in_polygon(&p.polygon, x, y)).map_or(&self.base_label, |p| &p.label)
    }

    pub fn traversable(&self, x: f64, y: f64) -> bool {
        self.inside(x, y) && !self.untraversable.contains(self.label_at(x, y))
    }

    pub fn inside(&self, x: f64, y: f64) -> bool {
        (0.0..=self.extent[0]).contains(&x) && (0.0..=self.extent[1]).contains(&y)
    }

    /// Region containing the point; points on the far border of the extent
    /// count as inside.
    pub fn region_at(&self, x: f64, y: f64) -> Option<&WorldRegion> {
        let (x, y) = (x.min(self.extent[0] - 1e-9), y.min(self.extent[1] - 1e-9));
        self.regions.iter().find(|r| point_in_polygon(&r.polygon, x, y))
    }

    pub fn prototype(&self, class: &str) -> Option<&[f64]> {
        self.classes.iter().find(|c| c.name == class).map(|c| c.prototype.as_slice())
    }

    /// Road center lines when the world has roads.
    pub fn roads(&self) -> Option<RoadLayout> {
        let road: Vec<&Patch> = self.patches.iter().filter(|p| p.label == "road").collect();
        if road.len() < 2 {
            return None;
        }
        let mid = |p: &Patch, axis: usize| p.polygon.iter().map(|v| v[axis]).sum::<f64>() / p.polygon.len() as f64;
        Some(RoadLayout { road_y: mid(road[0], 1), road_x: mid(road[1], 0) })
    }

    /// Grid mesh over the whole extent, labeled from the terrain patches.
    pub fn terrain_mesh(&self, pitch: f64) -> TerrainMesh {
        let nx = (self.extent[0] / pitch).floor() as usize + 1;
        let ny = (self.extent[1] / pitch).floor() as usize + 1;
        TerrainMesh::grid(nx, ny, pitch, |x, y| Some(self.label_at(x, y).to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Synthetic world: grass with rock patches, two crossing roads with
/// sidewalks (when the extent is at least 40 m), one pond, a grid of
/// uniquely named regions and `n_objects` objects at least 2 m apart.
pub fn generate_world(seed: u64, n_objects: usize, extent: [f64; 2]) -> Result<WorldSpec> {
    let [ex, ey] = extent;
    if !(ex > 0.0 && ey > 0.0 && ex.is_finite() && ey.is_finite()) {
        return Err(Error::World(format!("extent {ex} x {ey}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = prototypes(&mut rng);

    let mut patches = Vec::new();
    for _ in 0..3 {
        let (w, h) = (rng.gen_range(4.0..10.0), rng.gen_range(4.0..10.0));
        let (cx, cy) = (rng.gen_range(0.0..ex), rng.gen_range(0.0..ey));
        patches.push(Patch { label: "rocks".into(), polygon: rotated_rect(cx, cy, w, h, rng.gen_range(0.0..3.1)) });
    }
    let has_roads = ex >= 40.0 && ey >= 40.0;
    let (road_y, road_x) = (ey * rng.gen_range(0.3..0.4), ex * rng.gen_range(0.55..0.65));
    if has_roads {
        let s = ROAD_HALF_WIDTH + SIDEWALK_WIDTH;
        patches.push(Patch { label: "sidewalk".into(), polygon: rect(0.0, road_y - s, ex, road_y + s) });
        patches.push(Patch { label: "sidewalk".into(), polygon: rect(road_x - s, 0.0, road_x + s, ey) });
        patches.push(Patch { label: "road".into(), polygon: rect(0.0, road_y - ROAD_HALF_WIDTH, ex, road_y + ROAD_HALF_WIDTH) });
        patches.push(Patch { label: "road".into(), polygon: rect(road_x - ROAD_HALF_WIDTH, 0.0, road_x + ROAD_HALF_WIDTH, ey) });
    }
    // One pond clear of the roads and the border.
    let r = (ex.min(ey) * 0.08).clamp(2.0, 8.0);
    for _ in 0..200 {
        let (cx, cy) = (rng.gen_range(0.0..ex), rng.gen_range(0.0..ey));
        let clear_border = cx > r + 5.0 && cx < ex - r - 5.0 && cy > r + 5.0 && cy < ey - r - 5.0;
        let clear_roads = !has_roads || ((cy - road_y).abs() > r + 10.0 && (cx - road_x).abs() > r + 10.0);
        if clear_border && clear_roads {
            patches.push(Patch { label: WATER.into(), polygon: disc(cx, cy, r, 12) });
            break;
        }
    }

    let (nrx, nry) = ((ex / REGION_SIZE).ceil().max(1.0) as usize, (ey / REGION_SIZE).ceil().max(1.0) as usize);
    let mut regions = Vec::new();
    for j in 0..nry {
        for i in 0..nrx {
            let k = regions.len();
            let class = match REGION_NAMES.get(k) {
                Some(n) => n.to_string(),
                None => format!("{} {}", REGION_NAMES[k % REGION_NAMES.len()], k / REGION_NAMES.len() + 1),
            };
            let (w, h) = (ex / nrx as f64, ey / nry as f64);
            let polygon = rect(i as f64 * w, j as f64 * h, (i + 1) as f64 * w, (j + 1) as f64 * h);
            regions.push(WorldRegion { id: k as u64, class, polygon });
        }
    }

    let mut world = WorldSpec {
        seed,
        extent,
        base_label: "grass".into(),
        patches,
        objects: Vec::new(),
        regions,
        classes,
        untraversable: BTreeSet::from([WATER.to_string()]),
    };

    // Rough packing bound before sampling.
    let area = (ex - 2.0).max(0.0) * (ey - 2.0).max(0.0);
    if n_objects > 0 && (n_objects as f64) * std::f64::consts::PI > area {
        return Err(Error::World(format!("cannot place {n_objects} objects {MIN_OBJECT_SPACING} m apart in {ex} x {ey} m")));
    }
    let mut attempts = 0usize;
    while world.objects.len() < n_objects {
        attempts += 1;
        if attempts > 2000 * n_objects.max(1) {
            return Err(Error::World(format!("cannot place {n_objects} objects {MIN_OBJECT_SPACING} m apart in {ex} x {ey} m")));
        }
        let (x, y) = (rng.gen_range(1.0..ex - 1.0), rng.gen_range(1.0..ey - 1.0));
        let (class, size) = CLASSES[rng.gen_range(0..CLASSES.len())];
        let scale = rng.gen_range(0.9..1.1);
        let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        if world.label_at(x, y) == WATER {
            continue;
        }
        let size = size.map(|s| s * scale);
        let position = Vector3::new(x, y, size[2] / 2.0);
        if world.objects.iter().any(|o| (o.position.xy() - position.xy()).norm() < MIN_OBJECT_SPACING) {
            continue;
        }
        let id = world.objects.len() as u64;
        world.objects.push(WorldObject { id, class: class.into(), position, size, yaw });
    }
    Ok(world)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = generate_world(7, 30, [100.0, 100.0]).unwrap();
        let b = generate_world(7, 30, [100.0, 100.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        assert_ne!(a, generate_world(8, 30, [100.0, 100.0]).unwrap());
    }

    #[test]
    fn terrain_only() {
        let w = generate_world(1, 0, [100.0, 80.0]).unwrap();
        assert!(w.objects.is_empty());
        assert!(w.patches.iter().any(|p| p.label == "road"));
        assert!(w.patches.iter().any(|p| p.label == WATER));
        assert!(w.roads().is_some());
    }

    #[test]
    fn fifty_objects_two_meters_apart() {
        let w = generate_world(3, 50, [100.0, 100.0]).unwrap();
        assert_eq!(w.objects.len(), 50);
        for (i, a) in w.objects.iter().enumerate() {
            assert!(w.inside(a.position.x, a.position.y));
            assert_ne!(w.label_at(a.position.x, a.position.y), WATER);
            for b in &w.objects[i + 1..] {
                assert!((a.position.xy() - b.position.xy()).norm() >= MIN_OBJECT_SPACING);
            }
        }
    }

    #[test]
    fn too_small_extent() {
        assert!(matches!(generate_world(1, 100, [10.0, 10.0]), Err(Error::World(_))));
    }

    #[test]
    fn prototypes_are_orthonormal() {
        let w = generate_world(5, 0, [20.0, 20.0]).unwrap();
        for (i, a) in w.classes.iter().enumerate() {
            let n: f64 = a.prototype.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
            for b in &w.classes[i + 1..] {
                let c: f64 = a.prototype.iter().zip(&b.prototype).map(|(x, y)| x * y).sum();
                assert!(c.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn regions_have_unique_classes() {
        let w = generate_world(2, 0, [300.0, 250.0]).unwrap();
        let names: BTreeSet<&str> = w.regions.iter().map(|r| r.class.as_str()).collect();
        assert_eq!(names.len(), w.regions.len());
        assert_eq!(w.regions.len(), 6 * 5);
        assert!(w.region_at(10.0, 10.0).is_some());
    }

    #[test]
    fn polygon_membership() {
        let sq = rect(0.0, 0.0, 2.0, 2.0);
        assert!(point_in_polygon(&sq, 1.0, 1.0));
        assert!(!point_in_polygon(&sq, 3.0, 1.0));
        assert!(point_in_polygon(&disc(0.0, 0.0, 1.0, 12), 0.5, 0.5));
    }
}
