//! ForceAtlas2 spatialization with settings inferred from the graph order.
//!
//! Forces follow the Gephi/Graphology formulation: linear repulsion
//! `kr * m_i * m_j / d`, linear attraction `w * d` along edges, and gravity
//! towards the origin that is distance-independent in strong mode. Node mass
//! is `1 + degree`. Speed is adapted globally from swinging and effective
//! traction (jitter tolerance 1) and every displacement is divided by
//! `slow_down`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::NetworkGraph;
use crate::scalar::Scalar;

pub const DEFAULT_ITERATIONS: usize = 500;
/// Barnes-Hut is enabled strictly above this order.
pub const BARNES_HUT_ORDER: usize = 2000;
pub const BARNES_HUT_THETA: f64 = 0.5;
/// Minimum separation used in place of a coincident pair's zero distance.
pub const MIN_DISTANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("cannot lay out an empty graph")]
    EmptyGraph,
    #[error("invalid layout settings: {0}")]
    InvalidSettings(&'static str),
    #[error("layout produced a non-finite coordinate at iteration {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutConfig<S> {
    pub barnes_hut: bool,
    pub strong_gravity: bool,
    pub gravity: S,
    pub scaling_ratio: S,
    pub slow_down: S,
    pub iterations: usize,
    pub seed: u64,
}

/// Settings inferred from the number of nodes.
pub fn infer_settings<S: Scalar>(order: usize, seed: u64) -> LayoutConfig<S> {
    LayoutConfig {
        barnes_hut: order > BARNES_HUT_ORDER,
        strong_gravity: true,
        gravity: S::lit(0.05),
        scaling_ratio: S::lit(10.0),
        slow_down: S::one() + S::from_count(order.max(1)).ln(),
        iterations: DEFAULT_ITERATIONS,
        seed,
    }
}

impl<S: Scalar> LayoutConfig<S> {
    fn validate(&self) -> Result<(), LayoutError> {
        if self.gravity.is_nan() || self.gravity <= S::zero() {
            return Err(LayoutError::InvalidSettings("gravity must be positive"));
        }
        if self.scaling_ratio.is_nan() || self.scaling_ratio <= S::zero() {
            return Err(LayoutError::InvalidSettings("scaling_ratio must be positive"));
        }
        if self.slow_down.is_nan() || self.slow_down < S::one() {
            return Err(LayoutError::InvalidSettings("slow_down must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(LayoutError::InvalidSettings("iterations must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutResult<S> {
    pub positions: BTreeMap<String, (S, S)>,
}

impl<S: Scalar> LayoutResult<S> {
    pub fn get(&self, id: &str) -> Option<(S, S)> {
        self.positions.get(id).copied()
    }
}

#[derive(Debug, Clone, Copy)]
struct Body<S> {
    x: S,
    y: S,
    dx: S,
    dy: S,
    old_dx: S,
    old_dy: S,
    mass: S,
}

/// Seeded uniform positions in the unit disk scaled by `sqrt(order)`.
fn initial_positions<S: Scalar>(n: usize, seed: u64) -> Vec<(S, S)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = (n as f64).sqrt();
    (0..n)
        .map(|_| {
            let r = rng.random::<f64>().sqrt() * radius;
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            (S::lit(r * theta.cos()), S::lit(r * theta.sin()))
        })
        .collect()
}

/// Runs a fixed number of ForceAtlas2 iterations from seeded positions.
pub fn run_layout<S: Scalar>(g: &NetworkGraph<S>, cfg: &LayoutConfig<S>) -> Result<LayoutResult<S>, LayoutError> {
    if g.is_empty() {
        return Err(LayoutError::EmptyGraph);
    }
    cfg.validate()?;
    let adj = g.adjacency();
    let n = adj.ids.len();
    let index: BTreeMap<&str, usize> = adj.ids.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let edges: Vec<(usize, usize, S)> = g.edges().map(|(a, b, w)| (index[a], index[b], w)).collect();

    let mut bodies: Vec<Body<S>> = initial_positions::<S>(n, cfg.seed)
        .into_iter()
        .zip(&adj.neighbors)
        .map(|((x, y), nb)| Body {
            x,
            y,
            dx: S::zero(),
            dy: S::zero(),
            old_dx: S::zero(),
            old_dy: S::zero(),
            mass: S::one() + S::from_count(nb.len()),
        })
        .collect();

    let mut speed = Speed::new();
    for iteration in 0..cfg.iterations {
        step(&mut bodies, &edges, cfg, &mut speed);
        if bodies.iter().any(|b| !b.x.is_finite() || !b.y.is_finite()) {
            return Err(LayoutError::NonFinite(iteration));
        }
    }

    Ok(LayoutResult {
        positions: adj.ids.into_iter().zip(bodies).map(|(id, b)| (id, (b.x, b.y))).collect(),
    })
}

/// Separation vector between two bodies with coincident points pushed apart
/// along a deterministic direction.
fn separation<S: Scalar>(a: &Body<S>, b: &Body<S>, salt: usize) -> (S, S, S) {
    let (mut x, mut y) = (a.x - b.x, a.y - b.y);
    let mut d2 = x * x + y * y;
    let eps = S::lit(MIN_DISTANCE);
    if d2 < eps * eps {
        if d2 == S::zero() {
            let angle = S::lit(2.399_963_229_728_653 * salt as f64);
            x = eps * angle.cos();
            y = eps * angle.sin();
        } else {
            let d = d2.sqrt();
            x = x / d * eps;
            y = y / d * eps;
        }
        d2 = eps * eps;
    }
    (x, y, d2)
}

fn step<S: Scalar>(bodies: &mut [Body<S>], edges: &[(usize, usize, S)], cfg: &LayoutConfig<S>, speed: &mut Speed<S>) {
    for b in bodies.iter_mut() {
        b.old_dx = b.dx;
        b.old_dy = b.dy;
        b.dx = S::zero();
        b.dy = S::zero();
    }

    let kr = cfg.scaling_ratio;
    if cfg.barnes_hut {
        let tree = QuadTree::build(bodies);
        let theta = S::lit(BARNES_HUT_THETA);
        for i in 0..bodies.len() {
            let (fx, fy) = tree.repulsion(bodies, i, kr, theta);
            bodies[i].dx = bodies[i].dx + fx;
            bodies[i].dy = bodies[i].dy + fy;
        }
    } else {
        for i in 0..bodies.len() {
            for j in i + 1..bodies.len() {
                let (x, y, d2) = separation(&bodies[i], &bodies[j], i + j);
                let factor = kr * bodies[i].mass * bodies[j].mass / d2;
                bodies[i].dx = bodies[i].dx + x * factor;
                bodies[i].dy = bodies[i].dy + y * factor;
                bodies[j].dx = bodies[j].dx - x * factor;
                bodies[j].dy = bodies[j].dy - y * factor;
            }
        }
    }

    for b in bodies.iter_mut() {
        let factor = if cfg.strong_gravity {
            cfg.gravity * b.mass
        } else {
            let d = (b.x * b.x + b.y * b.y).sqrt();
            if d > S::zero() {
                cfg.gravity * b.mass / d
            } else {
                S::zero()
            }
        };
        b.dx = b.dx - b.x * factor;
        b.dy = b.dy - b.y * factor;
    }

    for &(s, t, w) in edges {
        let x = bodies[s].x - bodies[t].x;
        let y = bodies[s].y - bodies[t].y;
        let factor = -w;
        bodies[s].dx = bodies[s].dx + x * factor;
        bodies[s].dy = bodies[s].dy + y * factor;
        bodies[t].dx = bodies[t].dx - x * factor;
        bodies[t].dy = bodies[t].dy - y * factor;
    }

    speed.apply(bodies, cfg.slow_down);
}

/// Global adaptive speed driven by swinging versus effective traction.
#[derive(Debug, Clone, Copy)]
struct Speed<S> {
    speed: S,
    efficiency: S,
}

const JITTER_TOLERANCE: f64 = 1.0;
const MIN_SPEED_EFFICIENCY: f64 = 0.05;
const MAX_SPEED: f64 = 1000.0;
const MAX_RISE: f64 = 0.5;

impl<S: Scalar> Speed<S> {
    fn new() -> Self {
        Speed { speed: S::one(), efficiency: S::one() }
    }

    fn apply(&mut self, bodies: &mut [Body<S>], slow_down: S) {
        let half = S::lit(0.5);
        let (mut swinging, mut traction) = (S::zero(), S::zero());
        for b in bodies.iter() {
            let (sx, sy) = (b.old_dx - b.dx, b.old_dy - b.dy);
            let (tx, ty) = (b.old_dx + b.dx, b.old_dy + b.dy);
            swinging = swinging + b.mass * (sx * sx + sy * sy).sqrt();
            traction = traction + b.mass * half * (tx * tx + ty * ty).sqrt();
        }

        let n = S::from_count(bodies.len());
        let jitter = S::lit(JITTER_TOLERANCE);
        let min_eff = S::lit(MIN_SPEED_EFFICIENCY);
        let optimal = S::lit(0.05) * n.sqrt();
        let mut jt = jitter * optimal.sqrt().max(S::lit(10.0).min(optimal * traction / (n * n)));
        if traction > S::zero() && swinging / traction > S::lit(2.0) {
            if self.efficiency > min_eff {
                self.efficiency = self.efficiency * half;
            }
            jt = jt.max(jitter);
        }
        if swinging > S::zero() {
            let target = jt * self.efficiency * traction / swinging;
            if swinging > jt * traction {
                if self.efficiency > min_eff {
                    self.efficiency = self.efficiency * S::lit(0.7);
                }
            } else if self.speed < S::lit(MAX_SPEED) {
                self.efficiency = self.efficiency * S::lit(1.3);
            }
            self.speed = self.speed + (target - self.speed).min(S::lit(MAX_RISE) * self.speed);
        }

        for b in bodies.iter_mut() {
            let (sx, sy) = (b.old_dx - b.dx, b.old_dy - b.dy);
            let node_swing = b.mass * (sx * sx + sy * sy).sqrt();
            let factor = self.speed / (S::one() + (self.speed * node_swing).sqrt()) / slow_down;
            b.x = b.x + b.dx * factor;
            b.y = b.y + b.dy * factor;
        }
    }
}

/// Region quadtree for approximate repulsion on large graphs.
struct QuadTree<S> {
    regions: Vec<Region<S>>,
}

struct Region<S> {
    cx: S,
    cy: S,
    half: S,
    mass: S,
    mx: S,
    my: S,
    /// Bodies held by a leaf; more than one only at the depth cap.
    members: Vec<usize>,
    children: Option<[usize; 4]>,
}

const MAX_TREE_DEPTH: usize = 48;

impl<S: Scalar> QuadTree<S> {
    fn build(bodies: &[Body<S>]) -> Self {
        let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (bodies[0].x, bodies[0].y, bodies[0].x, bodies[0].y);
        for b in bodies {
            lo_x = lo_x.min(b.x);
            lo_y = lo_y.min(b.y);
            hi_x = hi_x.max(b.x);
            hi_y = hi_y.max(b.y);
        }
        let half = S::lit(0.5);
        let extent = ((hi_x - lo_x).max(hi_y - lo_y) * half).max(S::lit(MIN_DISTANCE));
        let mut tree = QuadTree {
            regions: vec![Region::empty((lo_x + hi_x) * half, (lo_y + hi_y) * half, extent)],
        };
        for i in 0..bodies.len() {
            tree.insert(i, bodies);
        }
        tree
    }

    fn insert(&mut self, i: usize, bodies: &[Body<S>]) {
        let mut r = 0;
        let mut depth = 0;
        loop {
            let b = &bodies[i];
            let reg = &mut self.regions[r];
            let total = reg.mass + b.mass;
            reg.mx = (reg.mx * reg.mass + b.x * b.mass) / total;
            reg.my = (reg.my * reg.mass + b.y * b.mass) / total;
            reg.mass = total;
            if let Some(children) = reg.children {
                r = children[self.quadrant(r, b.x, b.y)];
                depth += 1;
                continue;
            }
            if reg.members.is_empty() || depth >= MAX_TREE_DEPTH {
                reg.members.push(i);
                return;
            }
            // Split an occupied leaf and push its body one level down.
            let existing = std::mem::take(&mut reg.members);
            let children = self.split(r);
            for j in existing {
                let q = self.quadrant(r, bodies[j].x, bodies[j].y);
                let child = &mut self.regions[children[q]];
                child.mass = bodies[j].mass;
                child.mx = bodies[j].x;
                child.my = bodies[j].y;
                child.members.push(j);
            }
            r = children[self.quadrant(r, b.x, b.y)];
            depth += 1;
        }
    }

    fn quadrant(&self, r: usize, x: S, y: S) -> usize {
        let reg = &self.regions[r];
        usize::from(x >= reg.cx) + 2 * usize::from(y >= reg.cy)
    }

    fn split(&mut self, r: usize) -> [usize; 4] {
        let (cx, cy, half) = (self.regions[r].cx, self.regions[r].cy, self.regions[r].half * S::lit(0.5));
        let base = self.regions.len();
        for q in 0..4 {
            let sx = if q & 1 == 1 { half } else { -half };
            let sy = if q & 2 == 2 { half } else { -half };
            self.regions.push(Region::empty(cx + sx, cy + sy, half));
        }
        let children = [base, base + 1, base + 2, base + 3];
        self.regions[r].children = Some(children);
        children
    }

    fn repulsion(&self, bodies: &[Body<S>], i: usize, kr: S, theta: S) -> (S, S) {
        let b = &bodies[i];
        let (mut fx, mut fy) = (S::zero(), S::zero());
        let mut stack = vec![0usize];
        while let Some(r) = stack.pop() {
            let reg = &self.regions[r];
            if reg.mass == S::zero() {
                continue;
            }
            let Some(children) = reg.children else {
                for &j in reg.members.iter().filter(|&&j| j != i) {
                    let (x, y, d2) = separation(b, &bodies[j], i + j);
                    let f = kr * b.mass * bodies[j].mass / d2;
                    fx = fx + x * f;
                    fy = fy + y * f;
                }
                continue;
            };
            let (x, y) = (b.x - reg.mx, b.y - reg.my);
            let d2 = x * x + y * y;
            let width = reg.half + reg.half;
            if d2 > S::zero() && width * width < theta * theta * d2 {
                let f = kr * b.mass * reg.mass / d2;
                fx = fx + x * f;
                fy = fy + y * f;
            } else {
                stack.extend(children);
            }
        }
        (fx, fy)
    }
}

impl<S: Scalar> Region<S> {
    fn empty(cx: S, cy: S, half: S) -> Self {
        Region { cx, cy, half, mass: S::zero(), mx: S::zero(), my: S::zero(), members: Vec::new(), children: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityRef, EntityType};

    fn t(id: &str) -> EntityRef {
        EntityRef::new(EntityType::Topic, id, "").unwrap()
    }

    fn dist<S: Scalar>(a: (S, S), b: (S, S)) -> f64 {
        ((a.0 - b.0).as_f64().powi(2) + (a.1 - b.1).as_f64().powi(2)).sqrt()
    }

    #[test]
    fn settings_for_300_nodes() {
        let cfg: LayoutConfig<f64> = infer_settings(300, 7);
        assert!(!cfg.barnes_hut && cfg.strong_gravity);
        assert_eq!((cfg.gravity, cfg.scaling_ratio), (0.05, 10.0));
        assert!((cfg.slow_down - (1.0 + 300f64.ln())).abs() < 1e-12);
        assert!((cfg.slow_down - 6.703_782).abs() < 1e-6);
        assert_eq!(cfg.iterations, DEFAULT_ITERATIONS);
    }

    #[test]
    fn barnes_hut_threshold_and_unit_order() {
        assert!(infer_settings::<f64>(2001, 0).barnes_hut);
        assert!(!infer_settings::<f64>(2000, 0).barnes_hut);
        assert_eq!(infer_settings::<f64>(1, 0).slow_down, 1.0);
        assert_eq!(infer_settings::<f32>(0, 0).slow_down, 1.0);
    }

    #[test]
    fn empty_graph_is_an_error() {
        let g = NetworkGraph::<f64>::new(EntityType::Topic);
        assert_eq!(run_layout(&g, &infer_settings(0, 1)), Err(LayoutError::EmptyGraph));
    }

    #[test]
    fn deterministic_under_seed() {
        let mut g = NetworkGraph::<f64>::new(EntityType::Topic);
        g.add_link(t("a"), t("b"), 2.0);
        g.add_link(t("b"), t("c"), 1.0);
        let cfg = infer_settings(3, 42);
        let a = run_layout(&g, &cfg).unwrap();
        let b = run_layout(&g, &cfg).unwrap();
        for (k, p) in &a.positions {
            let q = b.positions[k];
            assert_eq!((p.0.to_bits(), p.1.to_bits()), (q.0.to_bits(), q.1.to_bits()));
        }
        let c = run_layout(&g, &infer_settings(3, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn connected_pair_moves_closer() {
        let mut g = NetworkGraph::<f64>::new(EntityType::Topic);
        g.add_link(t("a"), t("b"), 17.0);
        let cfg = infer_settings(2, 11);
        let init = initial_positions::<f64>(2, 11);
        let before = dist(init[0], init[1]);
        let out = run_layout(&g, &cfg).unwrap();
        let after = dist(out.positions["a###"], out.positions["b###"]);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn pair_settles_at_force_balance() {
        // Symmetric pair at distance d: kr·m²/d = (w + g·m/2)·d with m = 2.
        for w in [1.0, 17.0] {
            let mut g = NetworkGraph::<f64>::new(EntityType::Topic);
            g.add_link(t("a"), t("b"), w);
            let out = run_layout(&g, &infer_settings(2, 11)).unwrap();
            let d = dist(out.positions["a###"], out.positions["b###"]);
            let expected = (10.0 * 4.0 / (w + 0.05)).sqrt();
            assert!((d - expected).abs() < 1e-3 * expected, "w={w}: {d} vs {expected}");
        }
    }

    #[test]
    fn works_in_f32() {
        let mut g = NetworkGraph::<f32>::new(EntityType::Topic);
        for i in 0..10 {
            g.add_link(t(&format!("n{i}")), t(&format!("n{}", (i + 1) % 10)), 1.0);
        }
        let out = run_layout(&g, &infer_settings(10, 3)).unwrap();
        assert!(out.positions.values().all(|p| p.0.is_finite() && p.1.is_finite()));
    }

    #[test]
    fn barnes_hut_close_to_exact_repulsion() {
        let mut g = NetworkGraph::<f64>::new(EntityType::Topic);
        for i in 0..60 {
            g.add_link(t(&format!("n{i:02}")), t(&format!("n{:02}", (i * 7 + 3) % 60)), 1.0);
        }
        let adj = g.adjacency();
        let bodies: Vec<Body<f64>> = initial_positions::<f64>(adj.ids.len(), 5)
            .into_iter()
            .zip(&adj.neighbors)
            .map(|((x, y), nb)| Body {
                x,
                y,
                dx: 0.0,
                dy: 0.0,
                old_dx: 0.0,
                old_dy: 0.0,
                mass: 1.0 + nb.len() as f64,
            })
            .collect();
        let tree = QuadTree::build(&bodies);
        let mut worst: f64 = 0.0;
        for i in 0..bodies.len() {
            let (bx, by) = tree.repulsion(&bodies, i, 10.0, 0.5);
            let (mut ex, mut ey) = (0.0, 0.0);
            for j in 0..bodies.len() {
                if i != j {
                    let (x, y, d2) = separation(&bodies[i], &bodies[j], i + j);
                    let f = 10.0 * bodies[i].mass * bodies[j].mass / d2;
                    ex += x * f;
                    ey += y * f;
                }
            }
            let rel = ((bx - ex).powi(2) + (by - ey).powi(2)).sqrt() / (ex * ex + ey * ey).sqrt().max(1e-9);
            worst = worst.max(rel);
        }
        assert!(worst < 0.2, "worst relative error {worst}");
        // theta = 0 degenerates to the exact sum.
        let (bx, _) = tree.repulsion(&bodies, 0, 10.0, 0.0);
        let mut ex = 0.0;
        for j in 1..bodies.len() {
            let (x, _, d2) = separation(&bodies[0], &bodies[j], j);
            ex += x * 10.0 * bodies[0].mass * bodies[j].mass / d2;
        }
        assert!((bx - ex).abs() <= 1e-9 * ex.abs().max(1.0));
    }

    #[test]
    fn coincident_points_stay_finite() {
        let mut g = NetworkGraph::<f64>::new(EntityType::Topic);
        g.add_link(t("a"), t("b"), 1.0);
        g.add_link(t("c"), t("d"), 1.0);
        let mut bodies: Vec<Body<f64>> = (0..4)
            .map(|_| Body {
                x: 0.5,
                y: 0.5,
                dx: 0.0,
                dy: 0.0,
                old_dx: 0.0,
                old_dy: 0.0,
                mass: 2.0,
            })
            .collect();
        let edges = [(0, 1, 1.0), (2, 3, 1.0)];
        for bh in [false, true] {
            let mut cfg = infer_settings::<f64>(4, 0);
            cfg.barnes_hut = bh;
            let mut local = bodies.clone();
            let mut speed = Speed::new();
            for _ in 0..50 {
                step(&mut local, &edges, &cfg, &mut speed);
            }
            assert!(local.iter().all(|b| b.x.is_finite() && b.y.is_finite()));
        }
        bodies.truncate(1);
    }

    #[test]
    fn invalid_settings_rejected() {
        let mut g = NetworkGraph::<f64>::new(EntityType::Topic);
        g.add_link(t("a"), t("b"), 1.0);
        let mut cfg = infer_settings::<f64>(2, 0);
        cfg.slow_down = 0.5;
        assert!(matches!(run_layout(&g, &cfg), Err(LayoutError::InvalidSettings(_))));
    }
}
