//! Road network, signal plans and the offset vector shared by every module.
//!
//! The network is a rectangular grid of signalized intersections. Adjacent
//! intersections are joined by one single-lane segment per direction; every
//! boundary side of a boundary intersection gets an inbound source segment
//! and an outbound sink segment.

use std::fmt;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Signal cycle length in seconds. Offsets live in `0..CYCLE_S`.
pub const CYCLE_S: u32 = 120;

/// Length of one CA cell in metres.
pub const CELL_LENGTH_M: f64 = 7.5;

pub const NETWORK_FORMAT_VERSION: u32 = 1;

/// One offset per intersection, each in `0..120` seconds.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct SignalSetting(Vec<u8>);

impl SignalSetting {
    pub fn new(offsets: Vec<u8>) -> Result<Self> {
        if let Some(bad) = offsets.iter().find(|&&o| u32::from(o) >= CYCLE_S) {
            return Err(Error::invalid(format!(
                "offset {bad} outside 0..{CYCLE_S}"
            )));
        }
        if offsets.is_empty() {
            return Err(Error::invalid("signal setting must have at least one offset"));
        }
        Ok(SignalSetting(offsets))
    }

    /// Builds a setting from arbitrary integer offsets, reducing each modulo
    /// the cycle.
    pub fn from_lifted(offsets: &[i64]) -> Result<Self> {
        let reduced = offsets
            .iter()
            .map(|&o| o.rem_euclid(i64::from(CYCLE_S)) as u8)
            .collect();
        SignalSetting::new(reduced)
    }

    pub fn offsets(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }

    pub(crate) fn offsets_mut(&mut self) -> &mut [u8] {
        &mut self.0
    }

    pub fn check_len(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: self.len(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<u8>> for SignalSetting {
    type Error = Error;

    fn try_from(v: Vec<u8>) -> Result<Self> {
        SignalSetting::new(v)
    }
}

impl From<SignalSetting> for Vec<u8> {
    fn from(s: SignalSetting) -> Self {
        s.0
    }
}

impl fmt::Display for SignalSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, o) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{o}")?;
        }
        write!(f, "]")
    }
}

/// Uniform independent offsets, deterministic in `seed`.
pub fn random_setting(n_intersections: usize, seed: u64) -> SignalSetting {
    let mut rng = rng::seeded(seed);
    random_setting_with(n_intersections, &mut rng)
}

pub(crate) fn random_setting_with(n: usize, rng: &mut rng::Rng) -> SignalSetting {
    assert!(n >= 1, "a setting needs at least one intersection");
    SignalSetting((0..n).map(|_| rng.random_range(0..CYCLE_S as u8)).collect())
}

/// Axis a segment's traffic travels along. Exactly one axis is green at any
/// second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    NorthSouth,
    EastWest,
}

/// Direction of travel of a segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub fn axis(self) -> Axis {
        match self {
            Heading::North | Heading::South => Axis::NorthSouth,
            Heading::East | Heading::West => Axis::EastWest,
        }
    }

    pub fn reverse(self) -> Heading {
        match self {
            Heading::North => Heading::South,
            Heading::South => Heading::North,
            Heading::East => Heading::West,
            Heading::West => Heading::East,
        }
    }

    const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];
}

/// Two-phase fixed-time plan: north-south green for the first `green_ns_s`
/// seconds after the offset, east-west green for the rest of the cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub cycle_s: u32,
    pub green_ns_s: u32,
    pub offset_s: u32,
}

impl SignalPlan {
    pub fn green_axis(&self, t: u32) -> Axis {
        let phase = (t + self.cycle_s - self.offset_s % self.cycle_s) % self.cycle_s;
        if phase < self.green_ns_s {
            Axis::NorthSouth
        } else {
            Axis::EastWest
        }
    }

    pub fn is_green(&self, axis: Axis, t: u32) -> bool {
        self.green_axis(t) == axis
    }
}

/// Where a segment starts or ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endpoint {
    Intersection(usize),
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub from: Endpoint,
    pub to: Endpoint,
    pub cells: u32,
    pub heading: Heading,
}

impl Segment {
    /// Intersection controlling this segment's downstream end, if any.
    pub fn head_intersection(&self) -> Option<usize> {
        match self.to {
            Endpoint::Intersection(i) => Some(i),
            Endpoint::Boundary => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub row: usize,
    pub col: usize,
    /// Inbound segment ids, ordered by the heading they arrive from
    /// (N, E, S, W); always four on a grid.
    pub incoming: Vec<usize>,
    /// Outbound segment ids, ordered by travel heading (N, E, S, W).
    pub outgoing: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub segment: usize,
    pub injection_prob: f64,
}

/// Immutable road network. Safe to share across simulation workers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub rows: usize,
    pub cols: usize,
    pub segment_cells: u32,
    pub cycle_s: u32,
    pub green_ns_s: u32,
    pub intersections: Vec<Intersection>,
    pub segments: Vec<Segment>,
    pub sources: Vec<Source>,
    pub sinks: Vec<usize>,
    /// For each segment whose head is an intersection: the outgoing segments
    /// a vehicle may take there (all except the U-turn).
    pub turns: Vec<Vec<usize>>,
}

impl RoadNetwork {
    pub fn n_intersections(&self) -> usize {
        self.intersections.len()
    }

    /// Per-intersection plans for `setting`, in intersection order.
    pub fn plans(&self, setting: &SignalSetting) -> Result<Vec<SignalPlan>> {
        setting.check_len(self.n_intersections())?;
        Ok(setting
            .offsets()
            .iter()
            .map(|&o| SignalPlan {
                cycle_s: self.cycle_s,
                green_ns_s: self.green_ns_s,
                offset_s: u32::from(o),
            })
            .collect())
    }

    /// Builds a network from its file representation.
    pub fn from_config(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut net = build_grid_network(cfg.rows, cfg.cols, cfg.segment_cells, cfg.injection_prob)?;
        net.green_ns_s = cfg.green_ns_s;
        Ok(net)
    }

    /// True when every node can reach every other node ignoring direction.
    pub fn is_connected(&self) -> bool {
        let n = self.n_intersections();
        if n == 0 {
            return false;
        }
        let mut adj = vec![Vec::new(); n];
        for s in &self.segments {
            if let (Endpoint::Intersection(a), Endpoint::Intersection(b)) = (s.from, s.to) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Builds a `rows × cols` grid. Intersection `r * cols + c` sits at row `r`
/// (row 0 is the northern edge) and column `c` (column 0 is the western edge).
pub fn build_grid_network(
    rows: usize,
    cols: usize,
    segment_cells: u32,
    injection_prob: f64,
) -> Result<RoadNetwork> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("grid dimensions must be positive"));
    }
    if segment_cells < 2 {
        return Err(Error::invalid("segment_cells must be at least 2"));
    }
    if !(0.0..=1.0).contains(&injection_prob) {
        return Err(Error::invalid("injection_prob must lie in [0, 1]"));
    }

    let n = rows * cols;
    let mut intersections: Vec<Intersection> = (0..n)
        .map(|i| Intersection {
            row: i / cols,
            col: i % cols,
            incoming: vec![usize::MAX; 4],
            outgoing: vec![usize::MAX; 4],
        })
        .collect();
    let mut segments = Vec::new();
    let mut sources = Vec::new();
    let mut sinks = Vec::new();

    let neighbor = |i: usize, h: Heading| -> Option<usize> {
        let (r, c) = (i / cols, i % cols);
        match h {
            Heading::North if r > 0 => Some(i - cols),
            Heading::South if r + 1 < rows => Some(i + cols),
            Heading::West if c > 0 => Some(i - 1),
            Heading::East if c + 1 < cols => Some(i + 1),
            _ => None,
        }
    };
    let slot = |h: Heading| Heading::ALL.iter().position(|&x| x == h).unwrap();

    for i in 0..n {
        for h in Heading::ALL {
            // Outbound segment of `i` travelling `h`.
            let id = segments.len();
            match neighbor(i, h) {
                Some(j) => {
                    segments.push(Segment {
                        from: Endpoint::Intersection(i),
                        to: Endpoint::Intersection(j),
                        cells: segment_cells,
                        heading: h,
                    });
                    // Arrives at j from the side opposite to h.
                    intersections[j].incoming[slot(h.reverse())] = id;
                }
                None => {
                    segments.push(Segment {
                        from: Endpoint::Intersection(i),
                        to: Endpoint::Boundary,
                        cells: segment_cells,
                        heading: h,
                    });
                    sinks.push(id);
                }
            }
            intersections[i].outgoing[slot(h)] = id;
        }
    }
    // Sources: one per boundary side, travelling inward.
    for i in 0..n {
        for side in Heading::ALL {
            if neighbor(i, side).is_none() {
                let id = segments.len();
                segments.push(Segment {
                    from: Endpoint::Boundary,
                    to: Endpoint::Intersection(i),
                    cells: segment_cells,
                    heading: side.reverse(),
                });
                intersections[i].incoming[slot(side)] = id;
                sources.push(Source {
                    segment: id,
                    injection_prob,
                });
            }
        }
    }

    let turns = segments
        .iter()
        .map(|s| match s.to {
            Endpoint::Intersection(j) => intersections[j]
                .outgoing
                .iter()
                .copied()
                .filter(|&o| segments[o].heading != s.heading.reverse())
                .collect(),
            Endpoint::Boundary => Vec::new(),
        })
        .collect();

    Ok(RoadNetwork {
        rows,
        cols,
        segment_cells,
        cycle_s: CYCLE_S,
        green_ns_s: CYCLE_S / 2,
        intersections,
        segments,
        sources,
        sinks,
        turns,
    })
}

/// File representation of a network (TOML).
///
/// ```toml
/// format_version = 1
/// rows = 3
/// cols = 7
/// segment_cells = 20
/// injection_prob = 0.1
/// cycle_s = 120
/// green_ns_s = 60
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub format_version: u32,
    pub rows: usize,
    pub cols: usize,
    pub segment_cells: u32,
    pub injection_prob: f64,
    pub cycle_s: u32,
    pub green_ns_s: u32,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            format_version: NETWORK_FORMAT_VERSION,
            rows: 3,
            cols: 7,
            segment_cells: 20,
            injection_prob: 0.1,
            cycle_s: CYCLE_S,
            green_ns_s: CYCLE_S / 2,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != NETWORK_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported network format_version {}",
                self.format_version
            )));
        }
        if self.cycle_s != CYCLE_S {
            return Err(Error::invalid(format!("cycle_s must be {CYCLE_S}")));
        }
        if self.green_ns_s == 0 || self.green_ns_s >= self.cycle_s {
            return Err(Error::invalid("green_ns_s must lie strictly inside the cycle"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: NetworkConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}
