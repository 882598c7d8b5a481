//! Nagel–Schreckenberg cellular-automaton simulation of the grid network.
//!
//! This is the expensive oracle. Given a network, a signal setting and a
//! [`SimConfig`] it returns the total number of vehicle-seconds spent stopped
//! in front of a red signal.
//!
//! One second of simulated time runs these phases, in order:
//!
//! 1. **Crossing.** Intersections in index order, approaches in N, E, S, W
//!    order. A vehicle standing on the stop-line cell of an approach that
//!    shows green crosses when the first cell of its chosen outgoing segment
//!    is empty and no earlier crossing has claimed that cell this second.
//! 2. **Driving.** Segments in index order, vehicles front to back, using the
//!    positions at the start of the second: accelerate by one up to `v_max`,
//!    brake to the gap ahead (the vehicle in front, or the stop-line cell),
//!    then with probability `p_brake` slow down by one, then move. Vehicles
//!    running off the end of a sink segment leave the network. A vehicle whose
//!    speed is now zero while its segment's signal is red accrues one wait
//!    second, if the second is past warmup.
//! 3. **Transfer.** Crossing vehicles enter cell 0 of their outgoing segment
//!    with speed 1 and draw their next turn.
//! 4. **Injection.** Each source in index order draws once; on success and an
//!    empty first cell a vehicle enters with speed 0 and draws its first turn.
//!
//! Randomness uses counter-based SplitMix64 streams derived from
//! `SimConfig::seed`, so the demand is a fixed population of cars that does
//! not depend on the signal setting:
//!
//! * source `k` owns the stream `mix_seed(seed, k)` and draws exactly once per
//!   second, whether or not its first cell is free;
//! * the `n`-th vehicle released by source `k` owns the stream
//!   `mix_seed(seed, (k + 1) << 32 | n)` and uses it, in its own order, for its
//!   turn choices (uniform over the three non-U-turn exits, drawn on entering
//!   a segment) and its random-deceleration draws (one per second in which its
//!   speed is positive after braking).
//!
//! A vehicle whose release second finds the first cell occupied is not
//! injected; the release counter still advances.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{Axis, RoadNetwork, SignalSetting};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub horizon_s: u32,
    pub warmup_s: u32,
    pub v_max: u32,
    pub p_brake: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon_s: 1200,
            warmup_s: 240,
            v_max: 5,
            p_brake: 0.1,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_s == 0 {
            return Err(Error::invalid("horizon_s must be positive"));
        }
        if self.warmup_s >= self.horizon_s {
            return Err(Error::invalid("warmup_s must be below horizon_s"));
        }
        if self.v_max == 0 {
            return Err(Error::invalid("v_max must be positive"));
        }
        if !(0.0..1.0).contains(&self.p_brake) {
            return Err(Error::invalid("p_brake must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimResult {
    pub total_red_wait_s: u64,
    pub vehicles_injected: u64,
    pub vehicles_exited: u64,
    /// Vehicles still on the network after the final second.
    pub vehicles_remaining: u64,
}

/// A vehicle placed on a source at a fixed second, bypassing the Bernoulli
/// draw. Used to build hand-checkable scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScriptedInjection {
    /// Index into `RoadNetwork::sources`.
    pub source: usize,
    pub second: u32,
}

/// Where vehicles come from.
#[derive(Clone, Copy, Debug)]
pub enum Demand<'a> {
    /// Bernoulli injection with each source's `injection_prob`.
    Random,
    /// Only the listed vehicles, in list order within a second.
    Scripted(&'a [ScriptedInjection]),
}

const NO_TURN: u32 = u32::MAX;

/// Counter-based uniform stream.
#[derive(Clone, Copy, Debug)]
struct Stream(u64);

impl Stream {
    fn uniform(&mut self) -> f64 {
        let bits = rng::splitmix64(self.0);
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

#[derive(Clone, Copy, Debug)]
struct Vehicle {
    pos: u32,
    speed: u32,
    next: u32,
    crossing: bool,
    /// Identity seed of the vehicle.
    key: u64,
    /// Segments entered so far.
    hop: u64,
    stream: Stream,
}

impl Vehicle {
    /// Restarts the random stream for the segment just entered and draws the
    /// turn to take at its end.
    fn enter(&mut self, seg: usize, network: &RoadNetwork) {
        self.stream = Stream(rng::mix_seed(self.key, self.hop));
        self.hop += 1;
        let options = &network.turns[seg];
        self.next = if options.is_empty() {
            NO_TURN
        } else {
            options[self.stream.below(options.len())] as u32
        };
    }
}

pub fn simulate(
    network: &RoadNetwork,
    setting: &SignalSetting,
    config: &SimConfig,
) -> Result<SimResult> {
    simulate_with_demand(network, setting, config, Demand::Random)
}

pub fn simulate_with_demand(
    network: &RoadNetwork,
    setting: &SignalSetting,
    config: &SimConfig,
    demand: Demand<'_>,
) -> Result<SimResult> {
    config.validate()?;
    let plans = network.plans(setting)?;
    if let Demand::Scripted(list) = demand {
        if let Some(bad) = list.iter().find(|s| s.source >= network.sources.len()) {
            return Err(Error::invalid(format!("no source #{}", bad.source)));
        }
    }

    let n_seg = network.segments.len();
    let len: Vec<u32> = network.segments.iter().map(|s| s.cells).collect();
    let head: Vec<Option<usize>> = network
        .segments
        .iter()
        .map(|s| s.head_intersection())
        .collect();
    let axis: Vec<Axis> = network.segments.iter().map(|s| s.heading.axis()).collect();
    let mut lanes: Vec<VecDeque<Vehicle>> = vec![VecDeque::new(); n_seg];
    let mut green_ns = vec![false; plans.len()];
    let mut claimed = vec![false; n_seg];
    let mut source_streams: Vec<Stream> = (0..network.sources.len())
        .map(|k| Stream(rng::mix_seed(config.seed, k as u64)))
        .collect();
    let mut released = vec![0u64; network.sources.len()];

    let mut result = SimResult {
        total_red_wait_s: 0,
        vehicles_injected: 0,
        vehicles_exited: 0,
        vehicles_remaining: 0,
    };

    for t in 0..config.horizon_s {
        for (g, plan) in green_ns.iter_mut().zip(&plans) {
            *g = plan.green_axis(t) == Axis::NorthSouth;
        }
        let is_green = |seg: usize| -> bool {
            match head[seg] {
                Some(i) => green_ns[i] == (axis[seg] == Axis::NorthSouth),
                None => true,
            }
        };
        let counting = t >= config.warmup_s;

        // 1. crossing decisions
        claimed.iter_mut().for_each(|c| *c = false);
        for x in &network.intersections {
            for &seg in &x.incoming {
                if !is_green(seg) {
                    continue;
                }
                let stop_line = len[seg] - 1;
                let Some(front) = lanes[seg].front() else {
                    continue;
                };
                if front.pos != stop_line {
                    continue;
                }
                let target = front.next as usize;
                let free = lanes[target].back().is_none_or(|v| v.pos > 0);
                if free && !claimed[target] {
                    claimed[target] = true;
                    lanes[seg].front_mut().unwrap().crossing = true;
                }
            }
        }

        // 2. driving
        for seg in 0..n_seg {
            let lane = &mut lanes[seg];
            if lane.is_empty() {
                continue;
            }
            let red = !is_green(seg);
            let end_gap = match head[seg] {
                Some(_) => None,
                None => Some(()),
            };
            let mut ahead: Option<u32> = None;
            for v in lane.iter_mut() {
                let old = v.pos;
                if v.crossing {
                    ahead = Some(old);
                    continue;
                }
                let gap = match (ahead, end_gap) {
                    (Some(a), _) => a - old - 1,
                    (None, None) => len[seg] - 1 - old,
                    (None, Some(())) => u32::MAX,
                };
                let mut speed = (v.speed + 1).min(config.v_max).min(gap);
                if speed > 0 && v.stream.uniform() < config.p_brake {
                    speed -= 1;
                }
                v.speed = speed;
                v.pos = old + speed;
                if speed == 0 && red && counting {
                    result.total_red_wait_s += 1;
                }
                ahead = Some(old);
            }
            if head[seg].is_none() {
                while lane.front().is_some_and(|v| v.pos >= len[seg]) {
                    lane.pop_front();
                    result.vehicles_exited += 1;
                }
            }
        }

        // 3. transfer
        for x in &network.intersections {
            for &seg in &x.incoming {
                if !lanes[seg].front().is_some_and(|v| v.crossing) {
                    continue;
                }
                let mut v = lanes[seg].pop_front().unwrap();
                let target = v.next as usize;
                v.pos = 0;
                v.speed = 1;
                v.crossing = false;
                v.enter(target, network);
                lanes[target].push_back(v);
            }
        }

        // 4. injection
        let mut release = |src: usize, result: &mut SimResult| {
            let seg = network.sources[src].segment;
            let id = ((src as u64 + 1) << 32) | released[src];
            released[src] += 1;
            if lanes[seg].back().is_none_or(|v| v.pos > 0) {
                let mut v = Vehicle {
                    pos: 0,
                    speed: 0,
                    next: NO_TURN,
                    crossing: false,
                    key: rng::mix_seed(config.seed, id),
                    hop: 0,
                    stream: Stream(0),
                };
                v.enter(seg, network);
                lanes[seg].push_back(v);
                result.vehicles_injected += 1;
            }
        };
        match demand {
            Demand::Random => {
                for (src, source) in network.sources.iter().enumerate() {
                    if source_streams[src].uniform() < source.injection_prob {
                        release(src, &mut result);
                    }
                }
            }
            Demand::Scripted(list) => {
                for s in list.iter().filter(|s| s.second == t) {
                    release(s.source, &mut result);
                }
            }
        }
    }

    result.vehicles_remaining = lanes.iter().map(|l| l.len() as u64).sum();
    Ok(result)
}

/// Simulates every setting; element `i` of the output equals
/// `simulate(network, &settings[i], config)`. `workers > 1` evaluates on a
/// dedicated thread pool; the results do not depend on the worker count.
pub fn batch_simulate(
    network: &RoadNetwork,
    settings: &[SignalSetting],
    config: &SimConfig,
    workers: usize,
) -> Result<Vec<SimResult>> {
    config.validate()?;
    let c = network.n_intersections();
    for (i, s) in settings.iter().enumerate() {
        s.check_len(c).map_err(|e| Error::at(i, e))?;
    }
    let run = |(i, s): (usize, &SignalSetting)| {
        simulate(network, s, config).map_err(|e| Error::at(i, e))
    };
    if workers <= 1 || settings.len() <= 1 {
        return settings.iter().enumerate().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| settings.par_iter().enumerate().map(run).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_grid_network, random_setting, SignalSetting};

    fn small_cfg() -> SimConfig {
        SimConfig {
            horizon_s: 600,
            warmup_s: 120,
            ..SimConfig::default()
        }
    }

    #[test]
    fn no_demand_no_waiting() {
        let net = build_grid_network(3, 7, 20, 0.0).unwrap();
        let r = simulate(&net, &random_setting(21, 1), &small_cfg()).unwrap();
        assert_eq!(r.total_red_wait_s, 0);
        assert_eq!(r.vehicles_injected, 0);
    }

    #[test]
    fn deterministic() {
        let net = build_grid_network(3, 7, 20, 0.3).unwrap();
        let s = random_setting(21, 4);
        let a = simulate(&net, &s, &small_cfg()).unwrap();
        let b = simulate(&net, &s, &small_cfg()).unwrap();
        assert_eq!(a, b);
        assert!(a.total_red_wait_s > 0);
    }

    #[test]
    fn conservation() {
        let net = build_grid_network(2, 3, 12, 0.4).unwrap();
        let r = simulate(&net, &random_setting(6, 2), &small_cfg()).unwrap();
        assert!(r.vehicles_exited <= r.vehicles_injected);
        assert_eq!(r.vehicles_injected - r.vehicles_exited, r.vehicles_remaining);
    }

    #[test]
    fn dimension_mismatch() {
        let net = build_grid_network(2, 2, 10, 0.3).unwrap();
        let err = simulate(&net, &random_setting(3, 0), &small_cfg()).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 4, actual: 3 }));
    }

    #[test]
    fn horizon_is_monotone() {
        let net = build_grid_network(2, 2, 10, 0.3).unwrap();
        let s = random_setting(4, 8);
        let mut last = 0;
        for horizon in [200, 300, 450, 600] {
            let cfg = SimConfig {
                horizon_s: horizon,
                ..small_cfg()
            };
            let w = simulate(&net, &s, &cfg).unwrap().total_red_wait_s;
            assert!(w >= last);
            last = w;
        }
    }

    #[test]
    fn batch_matches_pointwise_and_reports_index() {
        let net = build_grid_network(2, 2, 10, 0.3).unwrap();
        let settings: Vec<_> = (0..6).map(|i| random_setting(4, i)).collect();
        let seq = batch_simulate(&net, &settings, &small_cfg(), 1).unwrap();
        let par = batch_simulate(&net, &settings, &small_cfg(), 3).unwrap();
        assert_eq!(seq, par);
        for (s, r) in settings.iter().zip(&seq) {
            assert_eq!(simulate(&net, s, &small_cfg()).unwrap(), *r);
        }
        assert!(batch_simulate(&net, &[], &small_cfg(), 4).unwrap().is_empty());

        let mut bad = settings.clone();
        bad[3] = random_setting(5, 0);
        match batch_simulate(&net, &bad, &small_cfg(), 2).unwrap_err() {
            Error::AtIndex { index, .. } => assert_eq!(index, 3),
            other => panic!("unexpected {other}"),
        }
    }

    /// Hand-stepped single vehicle on an empty approach with `p_brake = 0`:
    /// returns the red seconds it spends standing on the stop line.
    fn lone_vehicle_wait(
        cells: u32,
        v_max: u32,
        inject_at: u32,
        green: impl Fn(u32) -> bool,
        warmup: u32,
        horizon: u32,
    ) -> u64 {
        let stop = cells - 1;
        let (mut pos, mut speed, mut wait) = (0u32, 0u32, 0u64);
        for t in inject_at + 1..horizon {
            if pos == stop && green(t) {
                break;
            }
            speed = (speed + 1).min(v_max).min(stop - pos);
            pos += speed;
            if speed == 0 && !green(t) && t >= warmup {
                wait += 1;
            }
        }
        wait
    }

    struct Case {
        cells: u32,
        source: usize,
        offset: u8,
        inject_at: u32,
        warmup: u32,
        expected: u64,
    }

    // Source 0 enters from the north (north-south approach), source 1 from
    // the east (east-west approach). North-south is green for
    // (t - offset) mod 120 < 60.
    //
    // 1. 10 cells, inject at 60: positions 1,3,6,9 at t=61..64; red stand
    //    t=65..119 -> 55.
    // 2. same on the east-west approach: green from t=60, crosses at 65 -> 0.
    // 3. offset 30, inject at 100: on the line at 104, red until 150 -> 45.
    // 4. case 1 with warmup 100: only t=100..119 count -> 20.
    // 5. 30 cells, offset 70, inject at 5: positions 1,3,6,10,15,20,25,29 at
    //    t=6..13; red stand t=14..69 -> 56.
    const CASES: [Case; 5] = [
        Case { cells: 10, source: 0, offset: 0, inject_at: 60, warmup: 0, expected: 55 },
        Case { cells: 10, source: 1, offset: 0, inject_at: 60, warmup: 0, expected: 0 },
        Case { cells: 10, source: 0, offset: 30, inject_at: 100, warmup: 0, expected: 45 },
        Case { cells: 10, source: 0, offset: 0, inject_at: 60, warmup: 100, expected: 20 },
        Case { cells: 30, source: 0, offset: 70, inject_at: 5, warmup: 0, expected: 56 },
    ];

    #[test]
    fn single_vehicle_red_wait_matches_hand_stepping() {
        for (i, c) in CASES.iter().enumerate() {
            let net = build_grid_network(1, 1, c.cells, 0.0).unwrap();
            let setting = SignalSetting::new(vec![c.offset]).unwrap();
            let cfg = SimConfig {
                horizon_s: 400,
                warmup_s: c.warmup,
                v_max: 5,
                p_brake: 0.0,
                seed: 3,
            };
            let script = [ScriptedInjection {
                source: c.source,
                second: c.inject_at,
            }];
            let r = simulate_with_demand(&net, &setting, &cfg, Demand::Scripted(&script)).unwrap();
            let axis = net.segments[net.sources[c.source].segment].heading.axis();
            let plan = net.plans(&setting).unwrap()[0];
            let oracle = lone_vehicle_wait(
                c.cells,
                5,
                c.inject_at,
                |t| plan.is_green(axis, t),
                c.warmup,
                400,
            );
            assert_eq!(oracle, c.expected, "hand trace of case {}", i + 1);
            assert_eq!(r.total_red_wait_s, c.expected, "case {}", i + 1);
            assert_eq!(r.vehicles_injected, 1);
            assert_eq!(r.vehicles_exited, 1);
        }
    }

    #[test]
    fn offsets_are_periodic() {
        let net = build_grid_network(2, 2, 10, 0.2).unwrap();
        let s = random_setting(4, 12);
        let lifted: Vec<i64> = s.offsets().iter().map(|&o| i64::from(o) + 120).collect();
        let s2 = SignalSetting::from_lifted(&lifted).unwrap();
        assert_eq!(
            simulate(&net, &s, &small_cfg()).unwrap(),
            simulate(&net, &s2, &small_cfg()).unwrap()
        );
    }

    #[test]
    fn wait_responds_to_offsets() {
        let net = build_grid_network(3, 7, 20, 0.3).unwrap();
        let waits: Vec<f64> = (0..100)
            .map(|i| simulate(&net, &random_setting(21, i), &SimConfig::default()).unwrap())
            .map(|r| r.total_red_wait_s as f64)
            .collect();
        let mean = waits.iter().sum::<f64>() / waits.len() as f64;
        let var = waits.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / waits.len() as f64;
        assert!(var > 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        let net = build_grid_network(1, 1, 10, 0.3).unwrap();
        let cfg = SimConfig {
            warmup_s: 600,
            ..small_cfg()
        };
        assert!(simulate(&net, &random_setting(1, 0), &cfg).is_err());
    }
}
