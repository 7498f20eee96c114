use super::{Branch, Bus, Element, FaultEvent, NetworkModel, SourceWaveform, Terminal};
use crate::error::{Error, Result};

/// Tie branch placed between grid-adjacent copies: for every bus `b` in
/// `buses`, bus `b` of one copy connects to bus `b` of its neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct TieTemplate {
    pub element: Element,
    /// Base-network bus ids used as tie endpoints. Empty means the default
    /// `{0, n/2, n-1}`.
    pub buses: Vec<usize>,
}

impl TieTemplate {
    pub fn new(element: Element) -> Self {
        Self {
            element,
            buses: Vec::new(),
        }
    }

    fn tie_buses(&self, n: usize) -> Vec<usize> {
        let mut buses = if self.buses.is_empty() {
            vec![0, n / 2, n.saturating_sub(1)]
        } else {
            self.buses.clone()
        };
        buses.sort_unstable();
        buses.dedup();
        buses
    }
}

/// `rows × cols` copies of `base`, re-indexed copy-major (copy `r*cols + c`
/// owns ids `[k n, (k+1) n)`), with tie sets between horizontally and
/// vertically adjacent copies. Sources are replicated; faults are kept for
/// copy 0 only.
pub fn generate_grid_array(
    base: &NetworkModel,
    rows: usize,
    cols: usize,
    tie: &TieTemplate,
) -> Result<NetworkModel> {
    if rows == 0 || cols == 0 {
        return Err(Error::Invalid {
            location: "grid array".into(),
            message: format!("rows and cols must be >= 1, got {rows}x{cols}"),
        });
    }
    base.validate()?;
    let n = base.n_buses();
    let tie_buses = tie.tie_buses(n);
    if let Some(&b) = tie_buses.iter().find(|&&b| b >= n) {
        return Err(Error::DanglingBus {
            location: "tie template".into(),
            bus: b,
            n_buses: n,
        });
    }

    let copies = rows * cols;
    let shift = |copy: usize, b: usize| copy * n + b;
    let mut net = NetworkModel {
        name: if copies == 1 {
            base.name.clone()
        } else {
            format!("{}_{rows}x{cols}", base.name)
        },
        delta_t: base.delta_t,
        t_end: base.t_end,
        buses: Vec::with_capacity(copies * n),
        branches: Vec::new(),
        sources: Vec::new(),
        faults: Vec::new(),
    };
    for copy in 0..copies {
        net.buses.extend(base.buses.iter().map(|b| Bus {
            id: shift(copy, b.id),
            ..b.clone()
        }));
        net.branches.extend(base.branches.iter().map(|br| Branch {
            from: shift(copy, br.from),
            to: match br.to {
                Terminal::Bus(b) => Terminal::Bus(shift(copy, b)),
                Terminal::Ground => Terminal::Ground,
            },
            ..br.clone()
        }));
        net.sources.extend(base.sources.iter().map(|s| SourceWaveform {
            bus: shift(copy, s.bus),
            ..s.clone()
        }));
    }
    net.faults.extend(base.faults.iter().map(FaultEvent::clone));

    for r in 0..rows {
        for c in 0..cols {
            let here = r * cols + c;
            let mut neighbours = Vec::with_capacity(2);
            if c + 1 < cols {
                neighbours.push(here + 1);
            }
            if r + 1 < rows {
                neighbours.push(here + cols);
            }
            for there in neighbours {
                for &b in &tie_buses {
                    net.branches
                        .push(Branch::new(shift(here, b), shift(there, b), tie.element));
                }
            }
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> NetworkModel {
        let mut net = NetworkModel::with_buses("base", 10, 0.01);
        for i in 0..9 {
            net.branches.push(Branch::series_rl(i, i + 1, 1.0, 1e-3));
        }
        net.branches.push(Branch::capacitor(3, Terminal::Ground, 1e-6));
        net
    }

    fn tie() -> TieTemplate {
        TieTemplate::new(Element::SeriesRl { r: 5.0, l: 0.5 })
    }

    #[test]
    fn single_copy_is_identity() {
        let b = base();
        assert_eq!(generate_grid_array(&b, 1, 1, &tie()).unwrap(), b);
    }

    #[test]
    fn counts_scale_with_copies() {
        let b = base();
        let arr = generate_grid_array(&b, 2, 2, &tie()).unwrap();
        assert_eq!(arr.n_buses(), 40);
        // 4 copies of 10 branches + 4 tie sets of 3 branches.
        assert_eq!(arr.branches.len(), 4 * 10 + 4 * 3);
        arr.validate().unwrap();
        let arr = generate_grid_array(&b, 3, 4, &tie()).unwrap();
        assert_eq!(arr.n_buses(), 120);
        // 3 rows × 3 horizontal links + 2 × 4 vertical links.
        assert_eq!(arr.branches.len(), 12 * 10 + (9 + 8) * 3);
    }

    #[test]
    fn zero_rows_is_rejected() {
        assert!(generate_grid_array(&base(), 0, 2, &tie()).is_err());
    }
}
