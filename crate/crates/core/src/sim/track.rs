//! Track geometry: closed centerline polylines with signed-distance lookup.
//!
//! Signed distances are positive on the left of the travel direction. The
//! accelerated lookup buckets segments in a uniform grid; every arithmetic
//! step is sign-symmetric so a track mirrored across the x axis yields
//! exactly negated distances and identical arclengths.

use serde::{Deserialize, Serialize};

use super::SimError;

/// Half of the vehicle's track width (meters).
pub const VEHICLE_HALF_WIDTH: f64 = 0.12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BoundaryStyle {
    Solid,
    Dashed { dash_len: f64, gap_len: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    pub id: String,
    /// Closed loop; the last waypoint connects back to the first.
    pub centerline: Vec<[f64; 2]>,
    pub lane_half_width: f64,
    #[serde(default = "default_tape_half_width")]
    pub tape_half_width: f64,
    pub boundary_style: BoundaryStyle,
    /// Signed offset (meters, positive = left) of an extra solid line.
    #[serde(default)]
    pub inner_line: Option<f64>,
    pub tape_color: [u8; 3],
    pub floor_color: [u8; 3],
}

fn default_tape_half_width() -> f64 {
    0.025
}

impl TrackSpec {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Track(format!("bad track json: {e}")))
    }

    pub fn circuit1() -> Self {
        Self::from_json(include_str!("../../data/tracks/circuit1.json")).expect("shipped track parses")
    }

    pub fn circuit2() -> Self {
        Self::from_json(include_str!("../../data/tracks/circuit2.json")).expect("shipped track parses")
    }

    /// Mirror image across the world x axis. Travel order is kept, so left
    /// and right swap and the inner-line offset flips sign.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.centerline {
            p[1] = -p[1];
        }
        out.inner_line = self.inner_line.map(|o| -o);
        out.id = format!("{}-mirrored", self.id);
        out
    }

    /// Same loop driven the other way round.
    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        out.centerline.reverse();
        out.inner_line = self.inner_line.map(|o| -o);
        out.id = format!("{}-reversed", self.id);
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: [f64; 2],
    dir: [f64; 2],
    len: f64,
    /// Arclength at `a`.
    s0: f64,
}

/// Closest point on the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub distance: f64,
    /// Arclength of the closest point, in `[0, perimeter)`.
    pub s: f64,
    pub segment: usize,
}

#[derive(Debug, Clone)]
struct Grid {
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

/// Reach of the grid: exact answers are guaranteed for distances up to this.
const GRID_REACH: f64 = 0.6;
const GRID_CELL: f64 = 0.1;

/// Validated track with its lookup structures.
#[derive(Debug, Clone)]
pub struct Track {
    spec: TrackSpec,
    segs: Vec<Segment>,
    /// Absolute turning angle at each waypoint (radians).
    turn: Vec<f64>,
    perimeter: f64,
    grid: Grid,
}

impl Track {
    pub fn new(spec: TrackSpec) -> Result<Self, SimError> {
        let n = spec.centerline.len();
        if n < 8 {
            return Err(SimError::Track(format!("{}: need at least 8 waypoints, got {n}", spec.id)));
        }
        if !(spec.lane_half_width > VEHICLE_HALF_WIDTH) {
            return Err(SimError::Track(format!(
                "{}: lane half width {} must exceed vehicle half width {VEHICLE_HALF_WIDTH}",
                spec.id, spec.lane_half_width
            )));
        }
        if let BoundaryStyle::Dashed { dash_len, gap_len } = spec.boundary_style {
            if !(dash_len > 0.0 && gap_len >= 0.0) {
                return Err(SimError::Track(format!("{}: bad dash pattern", spec.id)));
            }
        }
        let mut segs = Vec::with_capacity(n);
        let mut s0 = 0.0;
        for i in 0..n {
            let a = spec.centerline[i];
            let b = spec.centerline[(i + 1) % n];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            if !(len > 1e-9) || !len.is_finite() {
                return Err(SimError::Track(format!("{}: degenerate segment {i}", spec.id)));
            }
            segs.push(Segment {
                a,
                dir: [dx / len, dy / len],
                len,
                s0,
            });
            s0 += len;
        }
        check_simple(&spec.centerline).map_err(|msg| SimError::Track(format!("{}: {msg}", spec.id)))?;
        let turn = (0..n)
            .map(|i| {
                let d0 = segs[(i + n - 1) % n].dir;
                let d1 = segs[i].dir;
                let cross = d0[0] * d1[1] - d0[1] * d1[0];
                let dot = d0[0] * d1[0] + d0[1] * d1[1];
                cross.atan2(dot).abs()
            })
            .collect();
        let grid = build_grid(&segs);
        Ok(Self {
            spec,
            segs,
            turn,
            perimeter: s0,
            grid,
        })
    }

    pub fn spec(&self) -> &TrackSpec {
        &self.spec
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    pub fn lane_half_width(&self) -> f64 {
        self.spec.lane_half_width
    }

    /// Squared distance, arclength offset along the segment, and side
    /// (true = right of travel).
    #[inline]
    fn project_segment(&self, i: usize, p: [f64; 2]) -> (f64, f64, bool) {
        let sg = &self.segs[i];
        let rx = p[0] - sg.a[0];
        let ry = p[1] - sg.a[1];
        let t = (rx * sg.dir[0] + ry * sg.dir[1]).clamp(0.0, sg.len);
        let ex = p[0] - (sg.a[0] + sg.dir[0] * t);
        let ey = p[1] - (sg.a[1] + sg.dir[1] * t);
        let cross = sg.dir[0] * ry - sg.dir[1] * rx;
        (ex * ex + ey * ey, t, cross < 0.0)
    }

    fn best_of(&self, p: [f64; 2], candidates: impl Iterator<Item = usize>) -> Option<Projection> {
        let mut best: Option<(f64, usize, f64, bool)> = None;
        for i in candidates {
            let (d2, t, right) = self.project_segment(i, p);
            let better = match best {
                None => true,
                Some((bd, bi, _, _)) => d2 < bd || (d2 == bd && i < bi),
            };
            if better {
                best = Some((d2, i, t, right));
            }
        }
        best.map(|(d2, i, t, right)| {
            let d = d2.sqrt();
            Projection {
                distance: if right { -d } else { d },
                s: (self.segs[i].s0 + t) % self.perimeter,
                segment: i,
            }
        })
    }

    /// Exhaustive search over every segment.
    pub fn project_brute(&self, x: f64, y: f64) -> Projection {
        self.best_of([x, y], 0..self.segs.len()).expect("track has segments")
    }

    /// Closest centerline point if it lies within `radius` (at most the grid
    /// reach) of `(x, y)`.
    pub fn project_within(&self, x: f64, y: f64, radius: f64) -> Option<Projection> {
        debug_assert!(radius <= GRID_REACH);
        let g = &self.grid;
        let cx = ((x - g.origin[0]) / g.cell).floor();
        let cy = ((y - g.origin[1]) / g.cell).floor();
        if cx < 0.0 || cy < 0.0 || cx >= g.nx as f64 || cy >= g.ny as f64 {
            return None;
        }
        let cell = &g.cells[cy as usize * g.nx + cx as usize];
        let best = self.best_of([x, y], cell.iter().map(|&i| i as usize))?;
        (best.distance.abs() <= radius).then_some(best)
    }

    /// Accelerated nearest-segment lookup; falls back to brute force beyond
    /// the grid reach.
    pub fn project(&self, x: f64, y: f64) -> Projection {
        self.project_within(x, y, GRID_REACH)
            .unwrap_or_else(|| self.project_brute(x, y))
    }

    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        self.project(x, y).distance
    }

    pub fn is_out_of_bounds(&self, x: f64, y: f64) -> bool {
        self.signed_distance(x, y).abs() > self.spec.lane_half_width
    }

    /// Centerline point and heading at arclength `s` (wrapped).
    pub fn point_at(&self, s: f64) -> ([f64; 2], f64) {
        let s = s.rem_euclid(self.perimeter);
        let i = match self.segs.binary_search_by(|sg| sg.s0.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let sg = &self.segs[i];
        let t = (s - sg.s0).min(sg.len);
        (
            [sg.a[0] + sg.dir[0] * t, sg.a[1] + sg.dir[1] * t],
            sg.dir[1].atan2(sg.dir[0]),
        )
    }

    /// Total absolute turning of the centerline over `(s, s + span]`.
    pub fn turning_ahead(&self, s: f64, span: f64) -> f64 {
        let n = self.segs.len();
        let s = s.rem_euclid(self.perimeter);
        let start = match self.segs.binary_search_by(|sg| sg.s0.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let mut total = 0.0;
        let mut k = 1;
        loop {
            let idx = (start + k) % n;
            let mut ahead = self.segs[idx].s0 - s;
            if ahead <= 0.0 {
                ahead += self.perimeter;
            }
            if ahead > span || k > n {
                break;
            }
            total += self.turn[idx];
            k += 1;
        }
        total
    }

    /// Whether a ground point is painted, given its projection.
    pub fn is_tape(&self, proj: &Projection) -> bool {
        let spec = &self.spec;
        let hw = spec.tape_half_width;
        let d = proj.distance;
        if let Some(o) = spec.inner_line {
            if (d - o).abs() <= hw {
                return true;
            }
        }
        if (d.abs() - spec.lane_half_width).abs() <= hw {
            return match spec.boundary_style {
                BoundaryStyle::Solid => true,
                BoundaryStyle::Dashed { dash_len, gap_len } => proj.s % (dash_len + gap_len) < dash_len,
            };
        }
        false
    }

    /// Lookup radius that covers every painted line.
    pub fn paint_reach(&self) -> f64 {
        let spec = &self.spec;
        let inner = spec.inner_line.map_or(0.0, f64::abs);
        spec.lane_half_width.max(inner) + spec.tape_half_width
    }
}

fn build_grid(segs: &[Segment]) -> Grid {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for sg in segs {
        for k in 0..2 {
            lo[k] = lo[k].min(sg.a[k]);
            hi[k] = hi[k].max(sg.a[k]);
        }
    }
    // slack absorbs rounding in the cell arithmetic
    let pad = GRID_REACH + 0.5 * GRID_CELL;
    let origin = [lo[0] - pad, lo[1] - pad];
    let nx = ((hi[0] - lo[0] + 2.0 * pad) / GRID_CELL).ceil() as usize + 1;
    let ny = ((hi[1] - lo[1] + 2.0 * pad) / GRID_CELL).ceil() as usize + 1;
    let mut cells = vec![Vec::new(); nx * ny];
    for (i, sg) in segs.iter().enumerate() {
        let bx = [sg.a[0], sg.a[0] + sg.dir[0] * sg.len];
        let by = [sg.a[1], sg.a[1] + sg.dir[1] * sg.len];
        let reach = GRID_REACH + 0.01 * GRID_CELL;
        let x0 = ((bx[0].min(bx[1]) - reach - origin[0]) / GRID_CELL).floor().max(0.0) as usize;
        let x1 = ((bx[0].max(bx[1]) + reach - origin[0]) / GRID_CELL).floor() as usize;
        let y0 = ((by[0].min(by[1]) - reach - origin[1]) / GRID_CELL).floor().max(0.0) as usize;
        let y1 = ((by[0].max(by[1]) + reach - origin[1]) / GRID_CELL).floor() as usize;
        for cy in y0..=y1.min(ny - 1) {
            for cx in x0..=x1.min(nx - 1) {
                cells[cy * nx + cx].push(i as u32);
            }
        }
    }
    for cy in 0..ny {
        for cx in 0..nx {
            let list = &mut cells[cy * nx + cx];
            if list.len() < 2 {
                continue;
            }
            let lo = [origin[0] + cx as f64 * GRID_CELL - 1e-6, origin[1] + cy as f64 * GRID_CELL - 1e-6];
            let hi = [lo[0] + GRID_CELL + 2e-6, lo[1] + GRID_CELL + 2e-6];
            let corners = [lo, [hi[0], lo[1]], [lo[0], hi[1]], hi];
            // no point of the cell is farther than `bound` from its nearest segment
            let bound = list
                .iter()
                .map(|&i| corners.iter().map(|&c| point_segment_distance(c, &segs[i as usize])).fold(0.0, f64::max))
                .fold(f64::INFINITY, f64::min);
            list.retain(|&i| rect_segment_distance(lo, hi, &segs[i as usize]) <= bound + 1e-9);
        }
    }
    Grid {
        origin,
        cell: GRID_CELL,
        nx,
        ny,
        cells,
    }
}

fn point_segment_distance(p: [f64; 2], sg: &Segment) -> f64 {
    let rx = p[0] - sg.a[0];
    let ry = p[1] - sg.a[1];
    let t = (rx * sg.dir[0] + ry * sg.dir[1]).clamp(0.0, sg.len);
    (p[0] - sg.a[0] - sg.dir[0] * t).hypot(p[1] - sg.a[1] - sg.dir[1] * t)
}

/// Distance between an axis-aligned rectangle and a segment (0 if they meet).
fn rect_segment_distance(lo: [f64; 2], hi: [f64; 2], sg: &Segment) -> f64 {
    let a = sg.a;
    let b = [sg.a[0] + sg.dir[0] * sg.len, sg.a[1] + sg.dir[1] * sg.len];
    let inside = |p: [f64; 2]| p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1];
    if inside(a) || inside(b) {
        return 0.0;
    }
    let corners = [lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
    let cross = |o: [f64; 2], p: [f64; 2], q: [f64; 2]| (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0]);
    for k in 0..4 {
        let (c, d) = (corners[k], corners[(k + 1) % 4]);
        let (o1, o2) = (cross(a, b, c), cross(a, b, d));
        let (o3, o4) = (cross(c, d, a), cross(c, d, b));
        if o1 * o2 <= 0.0 && o3 * o4 <= 0.0 {
            return 0.0;
        }
    }
    let clamp_dist = |p: [f64; 2]| {
        let dx = (lo[0] - p[0]).max(0.0).max(p[0] - hi[0]);
        let dy = (lo[1] - p[1]).max(0.0).max(p[1] - hi[1]);
        dx.hypot(dy)
    };
    let mut best = clamp_dist(a).min(clamp_dist(b));
    for c in corners {
        best = best.min(point_segment_distance(c, sg));
    }
    best
}

/// Rejects self-intersections between non-adjacent segments.
fn check_simple(pts: &[[f64; 2]]) -> Result<(), String> {
    let n = pts.len();
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        let v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        v.partial_cmp(&0.0).unwrap() as i8
    };
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (pts[j], pts[(j + 1) % n]);
            let o1 = orient(a, b, c);
            let o2 = orient(a, b, d);
            let o3 = orient(c, d, a);
            let o4 = orient(c, d, b);
            if o1 != o2 && o3 != o4 {
                return Err(format!("centerline self-intersects at segments {i} and {j}"));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgops::Rng;

    pub(crate) fn rectangle(w: f64, h: f64, step: f64) -> TrackSpec {
        let mut pts = Vec::new();
        let mut edge = |a: [f64; 2], b: [f64; 2]| {
            let n = (((b[0] - a[0]).abs() + (b[1] - a[1]).abs()) / step).round() as usize;
            for k in 0..n {
                let t = k as f64 / n as f64;
                pts.push([a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]);
            }
        };
        edge([0.0, 0.0], [w, 0.0]);
        edge([w, 0.0], [w, h]);
        edge([w, h], [0.0, h]);
        edge([0.0, h], [0.0, 0.0]);
        TrackSpec {
            id: "rect".into(),
            centerline: pts,
            lane_half_width: 0.3,
            tape_half_width: 0.025,
            boundary_style: BoundaryStyle::Solid,
            inner_line: None,
            tape_color: [255, 255, 255],
            floor_color: [0, 0, 0],
        }
    }

    #[test]
    fn shipped_circuits_are_valid() {
        for spec in [TrackSpec::circuit1(), TrackSpec::circuit2()] {
            let t = Track::new(spec).unwrap();
            assert!(t.perimeter() > 8.0 && t.perimeter() < 12.0);
        }
    }

    #[test]
    fn point_on_centerline_is_zero() {
        let t = Track::new(rectangle(4.0, 2.0, 0.1)).unwrap();
        assert_eq!(t.signed_distance(1.3, 0.0), 0.0);
    }

    #[test]
    fn left_of_travel_is_positive_and_out_of_bounds() {
        // bottom edge runs +x, so +y is left
        let t = Track::new(rectangle(4.0, 2.0, 0.1)).unwrap();
        let eps = 1e-3;
        let d = t.signed_distance(2.0, 0.3 + eps);
        assert!((d - (0.3 + eps)).abs() < 1e-12);
        assert!(t.is_out_of_bounds(2.0, 0.3 + eps));
        assert!(!t.is_out_of_bounds(2.0, -0.29));
        assert!(t.signed_distance(2.0, -0.1) < 0.0);
    }

    #[test]
    fn rejects_invalid_tracks() {
        let mut few = rectangle(4.0, 2.0, 1.0);
        few.centerline.truncate(6);
        assert!(Track::new(few).is_err());
        let mut narrow = rectangle(4.0, 2.0, 0.1);
        narrow.lane_half_width = 0.1;
        assert!(Track::new(narrow).is_err());
        let mut bowtie = rectangle(4.0, 2.0, 0.5);
        let n = bowtie.centerline.len();
        bowtie.centerline.swap(2, n - 2);
        assert!(Track::new(bowtie).is_err());
    }

    #[test]
    fn accelerated_lookup_matches_brute_force() {
        for spec in [TrackSpec::circuit1(), TrackSpec::circuit2()] {
            let t = Track::new(spec).unwrap();
            let mut rng = Rng::new(99);
            for _ in 0..1000 {
                let x = rng.uniform(-2.5, 2.5);
                let y = rng.uniform(-2.5, 2.5);
                assert_eq!(t.project(x, y), t.project_brute(x, y), "at ({x}, {y})");
            }
        }
    }

    #[test]
    fn mirrored_distances_negate_exactly() {
        let t = Track::new(TrackSpec::circuit1()).unwrap();
        let m = Track::new(TrackSpec::circuit1().mirrored()).unwrap();
        let mut rng = Rng::new(5);
        for _ in 0..500 {
            let x = rng.uniform(-2.0, 2.0);
            let y = rng.uniform(-2.0, 2.0);
            let a = t.project(x, y);
            let b = m.project(x, -y);
            assert_eq!(a.distance, -b.distance);
            assert_eq!(a.s, b.s);
        }
    }

    #[test]
    fn turning_on_rectangle_corner() {
        let t = Track::new(rectangle(4.0, 2.0, 0.1)).unwrap();
        let quarter = std::f64::consts::FRAC_PI_2;
        assert!((t.turning_ahead(3.5, 1.0) - quarter).abs() < 1e-9);
        assert_eq!(t.turning_ahead(0.5, 1.0), 0.0);
    }
}
