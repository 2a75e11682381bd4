//! Deployment geometry on a wrap-around square, UE placement and mobility.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// Folds the point onto the torus `[0, side)²`.
    pub fn fold(self, side: f64) -> Self {
        Point {
            x: fold_coord(self.x, side),
            y: fold_coord(self.y, side),
        }
    }
}

fn fold_coord(v: f64, side: f64) -> f64 {
    let r = v.rem_euclid(side);
    // rem_euclid can round up to exactly `side` for tiny negative inputs
    if r >= side {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentConfig {
    pub grid_side_m: f64,
    pub num_orus: usize,
    pub num_odus: usize,
    pub antennas_per_oru: usize,
    pub num_ues: usize,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            grid_side_m: 1000.0,
            num_orus: 36,
            num_odus: 9,
            antennas_per_oru: 4,
            num_ues: 40,
        }
    }
}

impl DeploymentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_side_m.is_finite() && self.grid_side_m > 0.0) {
            return Err(SimError::config("grid_side_m", "must be positive"));
        }
        for (field, v) in [
            ("num_orus", self.num_orus),
            ("num_odus", self.num_odus),
            ("antennas_per_oru", self.antennas_per_oru),
            ("num_ues", self.num_ues),
        ] {
            if v == 0 {
                return Err(SimError::config(field, "must be at least 1"));
            }
        }
        if odus_per_side(self.num_odus).is_none() {
            return Err(SimError::config(
                "num_odus",
                format!("{} is not a perfect square", self.num_odus),
            ));
        }
        if self.num_orus % self.num_odus != 0 {
            return Err(SimError::config(
                "num_orus",
                format!(
                    "{} O-RUs cannot be split evenly over {} O-DUs",
                    self.num_orus, self.num_odus
                ),
            ));
        }
        Ok(())
    }

    pub fn orus_per_odu(&self) -> usize {
        self.num_orus / self.num_odus
    }
}

fn odus_per_side(c: usize) -> Option<usize> {
    let s = (c as f64).sqrt().round() as usize;
    (s * s == c).then_some(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub grid_side_m: f64,
    pub antennas_per_oru: usize,
    pub oru_positions: Vec<Point>,
    pub odu_of_oru: Vec<usize>,
    /// Array axis direction per O-RU, radians from the x-axis.
    pub array_orientation: Vec<f64>,
    pub num_odus: usize,
}

impl Topology {
    pub fn num_orus(&self) -> usize {
        self.oru_positions.len()
    }

    /// The O-RUs owned by O-DU `c`, in ascending index order.
    pub fn orus_of_odu(&self, c: usize) -> Vec<usize> {
        (0..self.num_orus())
            .filter(|&l| self.odu_of_oru[l] == c)
            .collect()
    }

    /// Plain-text snapshot: one `oru x y odu` row per O-RU.
    pub fn to_table(&self) -> String {
        let mut out = String::from("oru x_m y_m odu\n");
        for (l, p) in self.oru_positions.iter().enumerate() {
            // {:?} on f64 prints the shortest string that round-trips
            writeln!(out, "{} {:?} {:?} {}", l, p.x, p.y, self.odu_of_oru[l]).unwrap();
        }
        out
    }

    /// Parses a table written by [`Topology::to_table`]. Array orientations
    /// are reset to the x-axis.
    pub fn from_table(text: &str, grid_side_m: f64, antennas_per_oru: usize) -> Result<Self> {
        let mut positions = Vec::new();
        let mut odus = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let bad = || SimError::config("topology", format!("malformed row {}", lineno + 1));
            if cols.len() != 4 {
                return Err(bad());
            }
            let idx: usize = cols[0].parse().map_err(|_| bad())?;
            if idx != positions.len() {
                return Err(bad());
            }
            let x: f64 = cols[1].parse().map_err(|_| bad())?;
            let y: f64 = cols[2].parse().map_err(|_| bad())?;
            let c: usize = cols[3].parse().map_err(|_| bad())?;
            positions.push(Point::new(x, y));
            odus.push(c);
        }
        let num_odus = odus.iter().max().map_or(0, |m| m + 1);
        Ok(Topology {
            grid_side_m,
            antennas_per_oru,
            array_orientation: vec![0.0; positions.len()],
            oru_positions: positions,
            odu_of_oru: odus,
            num_odus,
        })
    }
}

/// Tiles the grid into `C` equal subsquares and drops `L/C` O-RUs uniformly
/// into each one. O-RU `l` belongs to O-DU `l / (L/C)`.
pub fn generate_deployment<R: Rng + ?Sized>(config: &DeploymentConfig, rng: &mut R) -> Result<Topology> {
    config.validate()?;
    let per_side = odus_per_side(config.num_odus).expect("validated");
    let sub = config.grid_side_m / per_side as f64;
    let per_odu = config.orus_per_odu();
    let mut positions = Vec::with_capacity(config.num_orus);
    let mut odu_of_oru = Vec::with_capacity(config.num_orus);
    for c in 0..config.num_odus {
        let (row, col) = (c / per_side, c % per_side);
        for _ in 0..per_odu {
            let x = (col as f64 + rng.random::<f64>()) * sub;
            let y = (row as f64 + rng.random::<f64>()) * sub;
            positions.push(Point::new(x, y).fold(config.grid_side_m));
            odu_of_oru.push(c);
        }
    }
    Ok(Topology {
        grid_side_m: config.grid_side_m,
        antennas_per_oru: config.antennas_per_oru,
        array_orientation: vec![0.0; config.num_orus],
        oru_positions: positions,
        odu_of_oru,
        num_odus: config.num_odus,
    })
}

/// Displacement from `a` to the nearest torus image of `b`.
pub fn wrap_delta(a: Point, b: Point, grid_side: f64) -> (f64, f64) {
    let nearest = |d: f64| {
        let d = d.rem_euclid(grid_side);
        if d > grid_side / 2.0 {
            d - grid_side
        } else {
            d
        }
    };
    (nearest(b.x - a.x), nearest(b.y - a.y))
}

/// Distance to the nearest of the nine tile images.
pub fn wrap_distance(a: Point, b: Point, grid_side: f64) -> f64 {
    // per-axis magnitudes keep the result exactly symmetric in a and b
    let axis = |d: f64| {
        let d = d.abs().rem_euclid(grid_side);
        d.min(grid_side - d)
    };
    axis(b.x - a.x).hypot(axis(b.y - a.y))
}

/// Azimuth of the UE's nearest image seen from the O-RU, measured from the
/// array broadside (0 = broadside, ±π/2 = along the array axis).
/// Coincident points give 0.
pub fn wrap_angle(oru: Point, orientation: f64, ue: Point, grid_side: f64) -> f64 {
    let (dx, dy) = wrap_delta(oru, ue, grid_side);
    if dx == 0.0 && dy == 0.0 {
        return 0.0;
    }
    let (s, c) = orientation.sin_cos();
    let along_axis = dx * c + dy * s;
    let along_broadside = -dx * s + dy * c;
    along_axis.atan2(along_broadside)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeState {
    pub position: Point,
    /// m/s
    pub speed: f64,
    pub heading: f64,
}

/// Uniform positions over the whole grid with uniform headings.
pub fn place_ues<R: Rng + ?Sized>(
    num_ues: usize,
    grid_side: f64,
    speed_mps: f64,
    rng: &mut R,
) -> Vec<UeState> {
    (0..num_ues)
        .map(|_| {
            let x = rng.random::<f64>() * grid_side;
            let y = rng.random::<f64>() * grid_side;
            let heading = rng.random::<f64>() * std::f64::consts::TAU;
            UeState {
                position: Point::new(x, y).fold(grid_side),
                speed: speed_mps,
                heading,
            }
        })
        .collect()
}

/// Straight-line move for one sample period, folded onto the torus.
pub fn step_ue(state: UeState, sample_time: f64, grid_side: f64) -> UeState {
    let dist = state.speed * sample_time;
    let (s, c) = state.heading.sin_cos();
    let moved = Point::new(state.position.x + dist * c, state.position.y + dist * s);
    UeState {
        position: moved.fold(grid_side),
        ..state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use rand::Rng;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn brute_force_distance(a: Point, b: Point, side: f64) -> f64 {
        let mut best = f64::INFINITY;
        for ox in [-1.0, 0.0, 1.0] {
            for oy in [-1.0, 0.0, 1.0] {
                let d = (b.x + ox * side - a.x).hypot(b.y + oy * side - a.y);
                best = best.min(d);
            }
        }
        best
    }

    fn brute_force_angle(a: Point, b: Point, side: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for ox in [-1.0, 0.0, 1.0] {
            for oy in [-1.0, 0.0, 1.0] {
                let (dx, dy) = (b.x + ox * side - a.x, b.y + oy * side - a.y);
                let d = dx.hypot(dy);
                if d < best.0 {
                    best = (d, dx.atan2(dy));
                }
            }
        }
        best.1
    }

    #[test]
    fn table1_deployment_places_four_orus_per_subsquare() {
        let cfg = DeploymentConfig::default();
        let topo = generate_deployment(&cfg, &mut substream(1, Stream::Deployment, &[])).unwrap();
        let sub = 1000.0 / 3.0;
        for c in 0..9 {
            let members = topo.orus_of_odu(c);
            assert_eq!(members.len(), 4);
            let (row, col) = ((c / 3) as f64, (c % 3) as f64);
            for l in members {
                let p = topo.oru_positions[l];
                assert!(p.x >= col * sub && p.x < (col + 1.0) * sub);
                assert!(p.y >= row * sub && p.y < (row + 1.0) * sub);
            }
        }
    }

    #[test]
    fn single_oru_deployment() {
        let cfg = DeploymentConfig {
            num_orus: 1,
            num_odus: 1,
            ..Default::default()
        };
        let topo = generate_deployment(&cfg, &mut substream(3, Stream::Deployment, &[])).unwrap();
        assert_eq!(topo.num_orus(), 1);
        let p = topo.oru_positions[0];
        assert!((0.0..1000.0).contains(&p.x) && (0.0..1000.0).contains(&p.y));
    }

    #[test]
    fn deployment_is_deterministic() {
        let cfg = DeploymentConfig::default();
        let a = generate_deployment(&cfg, &mut substream(9, Stream::Deployment, &[])).unwrap();
        let b = generate_deployment(&cfg, &mut substream(9, Stream::Deployment, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let non_square = DeploymentConfig {
            num_odus: 8,
            num_orus: 32,
            ..Default::default()
        };
        let err = generate_deployment(&non_square, &mut substream(0, Stream::Deployment, &[])).unwrap_err();
        assert!(matches!(err, SimError::Config { ref field, .. } if field == "num_odus"));
        let uneven = DeploymentConfig {
            num_orus: 37,
            ..Default::default()
        };
        let err = uneven.validate().unwrap_err();
        assert!(matches!(err, SimError::Config { ref field, .. } if field == "num_orus"));
    }

    #[test]
    fn table_round_trips() {
        let cfg = DeploymentConfig::default();
        let topo = generate_deployment(&cfg, &mut substream(5, Stream::Deployment, &[])).unwrap();
        let back = Topology::from_table(&topo.to_table(), 1000.0, 4).unwrap();
        assert_eq!(back, topo);
    }

    #[test]
    fn wrap_distance_examples() {
        let side = 1000.0;
        let d = wrap_distance(Point::new(50.0, 50.0), Point::new(950.0, 50.0), side);
        assert!((d - 100.0).abs() < 1e-9);
        assert_eq!(wrap_distance(Point::new(3.0, 4.0), Point::new(3.0, 4.0), side), 0.0);
        let d = wrap_distance(Point::new(0.0, 0.0), Point::new(999.0, 999.0), side);
        assert!((d - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn wrap_distance_matches_nine_images() {
        let side = 1000.0;
        let mut rng = substream(11, Stream::UePlacement, &[]);
        for _ in 0..1000 {
            let a = Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side);
            let b = Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side);
            let d = wrap_distance(a, b, side);
            assert!((d - brute_force_distance(a, b, side)).abs() < 1e-9);
            assert!(d <= (a.x - b.x).hypot(a.y - b.y) + 1e-12);
        }
    }

    #[test]
    fn wrap_angle_examples() {
        let side = 1000.0;
        let oru = Point::new(500.0, 500.0);
        // array along x, broadside along +y
        assert_eq!(wrap_angle(oru, 0.0, Point::new(500.0, 800.0), side), 0.0);
        assert!((wrap_angle(oru, 0.0, Point::new(700.0, 500.0), side) - FRAC_PI_2).abs() < 1e-12);
        assert!((wrap_angle(oru, 0.0, Point::new(300.0, 500.0), side) + FRAC_PI_2).abs() < 1e-12);
        assert_eq!(wrap_angle(oru, 0.0, oru, side), 0.0);

        // nearest image of (990, 10) from (10, 10) lies to the left (-x)
        let a = wrap_angle(Point::new(10.0, 10.0), 0.0, Point::new(990.0, 10.0), side);
        assert!((a + FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_matches_nine_images() {
        let side = 1000.0;
        let mut rng = substream(12, Stream::UePlacement, &[]);
        for _ in 0..1000 {
            let a = Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side);
            let b = Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side);
            let got = wrap_angle(a, 0.0, b, side);
            let want = brute_force_angle(a, b, side);
            let diff = (got - want).rem_euclid(2.0 * PI);
            assert!(diff < 1e-9 || 2.0 * PI - diff < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn step_examples() {
        let side = 1000.0;
        let still = UeState {
            position: Point::new(10.0, 20.0),
            speed: 0.0,
            heading: 1.0,
        };
        assert_eq!(step_ue(still, 0.5, side).position, still.position);

        let moving = UeState {
            position: Point::new(100.0, 100.0),
            speed: 30.0 / 3.6,
            heading: 0.0,
        };
        let next = step_ue(moving, 0.5, side);
        assert!((next.position.x - 104.166_666_666_666_67).abs() < 1e-9);
        assert_eq!(next.position.y, 100.0);
        assert_eq!(next.speed, moving.speed);
        assert_eq!(next.heading, moving.heading);

        let edge = UeState {
            position: Point::new(998.0, 5.0),
            speed: 10.0,
            heading: 0.0,
        };
        assert!((step_ue(edge, 0.5, side).position.x - 3.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn displacement_bounded_by_path_length(
            x in 0.0..1000.0f64, y in 0.0..1000.0f64,
            speed in 0.0..40.0f64, heading in 0.0..6.3f64, steps in 1usize..200,
        ) {
            let side = 1000.0;
            let start = UeState { position: Point::new(x, y), speed, heading };
            let mut s = start;
            for _ in 0..steps {
                s = step_ue(s, 0.5, side);
                prop_assert!(s.position.x >= 0.0 && s.position.x < side);
                prop_assert!(s.position.y >= 0.0 && s.position.y < side);
            }
            let d = wrap_distance(start.position, s.position, side);
            prop_assert!(d <= steps as f64 * speed * 0.5 + 1e-6);
        }

        #[test]
        fn wrap_distance_is_symmetric(ax in 0.0..1000.0f64, ay in 0.0..1000.0f64,
                                      bx in 0.0..1000.0f64, by in 0.0..1000.0f64) {
            let (a, b) = (Point::new(ax, ay), Point::new(bx, by));
            prop_assert_eq!(wrap_distance(a, b, 1000.0), wrap_distance(b, a, 1000.0));
        }
    }
}
