//! Seeded synthetic networks: a multi-area meshed transmission-like grid,
//! a regular lattice, and small random networks for property tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{Branch, Element, FaultEvent, NetworkModel, SourceWaveform, TieTemplate, Terminal};

pub const DEFAULT_SEED: u64 = 1;

/// Target buses per area in [`synth_grid`].
pub const AREA_SIZE: usize = 45;

/// Series-RL element used for inter-area ties and grid-array ties.
pub const WEAK_TIE: Element = Element::SeriesRl { r: 5.0, l: 0.5 };

/// The 179-bus four-area grid.
pub fn synth179(seed: u64) -> NetworkModel {
    let mut net = synth_grid(179, seed);
    net.name = "synth179".into();
    net
}

/// `n` buses split into `round(n / 45)` areas. Bus `id` belongs to area
/// `id mod areas`. Each area is a meshed ring (see [`meshed_area`]);
/// consecutive areas are joined by two weak tie lines. Every bus has a capacitor and a shunt
/// conductance to ground; about five buses per area carry a 60 Hz, 1 A
/// current source.
pub fn synth_grid(n: usize, seed: u64) -> NetworkModel {
    assert!(n >= 2, "synthetic grid needs at least two buses");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let areas = ((n as f64 / AREA_SIZE as f64).round() as usize).clamp(1, n / 2);
    let mut net = NetworkModel::with_buses(format!("synth{n}"), n, 0.0);
    for bus in &mut net.buses {
        bus.shunt_g = rng.gen_range(0.005..0.02);
    }
    for bus in 0..n {
        let c = rng.gen_range(0.5e-6..1.5e-6);
        net.branches.push(Branch::capacitor(bus, Terminal::Ground, c));
    }

    let members: Vec<Vec<usize>> = (0..areas)
        .map(|a| (a..n).step_by(areas).collect())
        .collect();
    for area in &members {
        for (a, b) in meshed_area(area.len(), &mut rng) {
            let r = rng.gen_range(0.5..2.0);
            let l = rng.gen_range(0.5e-3..3e-3);
            net.branches.push(Branch::series_rl(area[a], area[b], r, l));
        }
    }
    for w in members.windows(2) {
        for _ in 0..2 {
            let a = *w[0].choose(&mut rng).expect("nonempty area");
            let b = *w[1].choose(&mut rng).expect("nonempty area");
            let l = rng.gen_range(0.4..0.8);
            net.branches.push(Branch::series_rl(a, b, 5.0, l));
        }
    }
    for area in &members {
        let count = 5.min(area.len());
        for &bus in area.choose_multiple(&mut rng, count) {
            net.sources.push(SourceWaveform {
                bus,
                phase: 0,
                magnitude: 1.0,
                frequency: 60.0,
                phase_angle: rng.gen_range(0.0..std::f64::consts::TAU),
            });
        }
    }
    net
}

/// Edges `(a, b)` (local indices) of a meshed area of `m` buses: a ring in
/// random bus order plus chords of ring span 4–6. Consecutive chords
/// overlap, so every ring gap lies under a chord and separating any arc of
/// the ring cuts at least four lines. Average degree is close to 2.5.
fn meshed_area(m: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    if m < 2 {
        return Vec::new();
    }
    let mut ring: Vec<usize> = (0..m).collect();
    ring.shuffle(rng);
    if m == 2 {
        return vec![(ring[0], ring[1])];
    }
    let mut edges: Vec<(usize, usize)> = (0..m).map(|i| (ring[i], ring[(i + 1) % m])).collect();
    if m >= 8 {
        let mut pos = 0;
        while pos < m {
            let span = rng.gen_range(4..=6);
            edges.push((ring[pos], ring[(pos + span) % m]));
            pos += span - 1;
        }
    }
    edges
}

/// `rows × cols` lattice of identical series-RL lines; bus `r * cols + c`.
/// Every bus has a 1 µF capacitor and a 0.01 S shunt; one source sits at
/// bus 0.
pub fn lattice(rows: usize, cols: usize) -> NetworkModel {
    let n = rows * cols;
    let mut net = NetworkModel::with_buses(format!("lattice{rows}x{cols}"), n, 0.01);
    for bus in 0..n {
        net.branches.push(Branch::capacitor(bus, Terminal::Ground, 1e-6));
    }
    for r in 0..rows {
        for c in 0..cols {
            let b = r * cols + c;
            if c + 1 < cols {
                net.branches.push(Branch::series_rl(b, b + 1, 1.0, 1e-3));
            }
            if r + 1 < rows {
                net.branches.push(Branch::series_rl(b, b + cols, 1.0, 1e-3));
            }
        }
    }
    net.sources.push(SourceWaveform {
        bus: 0,
        phase: 0,
        magnitude: 1.0,
        frequency: 60.0,
        phase_angle: 0.0,
    });
    net
}

/// Connected random network: random spanning tree plus about `n / 2` extra
/// lines, mixed line and shunt element types, all buses grounded through a
/// shunt conductance.
pub fn random_network(n: usize, seed: u64) -> NetworkModel {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = NetworkModel::with_buses(format!("random{n}_{seed}"), n, 0.0);
    for bus in &mut net.buses {
        bus.shunt_g = rng.gen_range(0.01..0.1);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for i in 1..n {
        let a = order[i];
        let b = order[rng.gen_range(0..i)];
        net.branches.push(random_line(a, b, &mut rng));
    }
    for _ in 0..n / 2 {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            net.branches.push(random_line(a, b, &mut rng));
        }
    }
    for bus in 0..n {
        if rng.gen_bool(0.5) {
            net.branches
                .push(Branch::capacitor(bus, Terminal::Ground, rng.gen_range(0.1e-6..2e-6)));
        }
    }
    net
}

fn random_line(a: usize, b: usize, rng: &mut ChaCha8Rng) -> Branch {
    match rng.gen_range(0..4) {
        0 => Branch::resistor(a, b, rng.gen_range(1.0..50.0)),
        1 => Branch::inductor(a, b, rng.gen_range(1e-4..1e-2)),
        _ => Branch::series_rl(a, b, rng.gen_range(0.5..5.0), rng.gen_range(1e-4..5e-3)),
    }
}

/// Fault between `a` and `b` with the given resistance and window.
pub fn fault(a: usize, b: impl Into<Terminal>, r: f64, t_on: f64, t_off: f64) -> FaultEvent {
    FaultEvent {
        bus_a: a,
        bus_b: b.into(),
        fault_resistance: r,
        t_on,
        t_off,
    }
}

/// Tie template used for grid arrays of synthetic grids.
pub fn array_tie() -> TieTemplate {
    TieTemplate::new(WEAK_TIE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth179_shape() {
        let net = synth179(DEFAULT_SEED);
        net.validate().unwrap();
        assert_eq!(net.n_buses(), 179);
        let adj = net.adjacency();
        let deg: usize = adj.iter().map(Vec::len).sum();
        let avg = deg as f64 / 179.0;
        assert!((2.2..=2.9).contains(&avg), "average degree {avg}");
        assert_eq!(net.sources.len(), 20);
        // Buses 1 and 81 share an area.
        let areas = 4;
        assert_eq!(1 % areas, 81 % areas);
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(synth179(7), synth179(7));
        assert_ne!(synth179(7), synth179(8));
        assert_eq!(random_network(50, 3), random_network(50, 3));
    }

    #[test]
    fn lattice_counts() {
        let net = lattice(3, 4);
        net.validate().unwrap();
        assert_eq!(net.n_buses(), 12);
        assert_eq!(net.branches.len(), 12 + 3 * 3 + 2 * 4);
    }

    #[test]
    fn random_network_is_valid() {
        for seed in 0..10 {
            random_network(40, seed).validate().unwrap();
        }
    }
}
