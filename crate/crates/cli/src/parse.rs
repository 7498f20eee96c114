//! Flag value parsers.

use hinv_core::network::{FaultEvent, Terminal};

fn split_unit<'a>(s: &'a str, units: &[&'a str]) -> (&'a str, Option<&'a str>) {
    for &u in units {
        if let Some(num) = s.strip_suffix(u) {
            return (num, Some(u));
        }
    }
    (s, None)
}

/// Seconds from `10ms`, `20us`, `0.01s` or a bare number of seconds.
pub fn seconds(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, unit) = split_unit(s, &["ms", "us", "µs", "s"]);
    let value: f64 = num.parse().map_err(|_| format!("invalid time `{s}`"))?;
    let scale = match unit {
        Some("ms") => 1e-3,
        Some("us" | "µs") => 1e-6,
        _ => 1.0,
    };
    Ok(value * scale)
}

/// Ohms from `10ohm`, `10Ω` or a bare number.
pub fn ohms(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, _) = split_unit(s, &["ohm", "Ω"]);
    num.parse().map_err(|_| format!("invalid resistance `{s}`"))
}

/// `A:B:RESohm:TON:TOFF`, where `B` may be `gnd`.
pub fn fault(s: &str) -> Result<FaultEvent, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, r, on, off] = parts[..] else {
        return Err(format!("fault `{s}` must have the form A:B:RESohm:TON:TOFF"));
    };
    let bus = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("invalid bus `{x}` in fault `{s}`"));
    let bus_b = if b.trim().eq_ignore_ascii_case("gnd") {
        Terminal::Ground
    } else {
        Terminal::Bus(bus(b)?)
    };
    Ok(FaultEvent {
        bus_a: bus(a)?,
        bus_b,
        fault_resistance: ohms(r)?,
        t_on: seconds(on)?,
        t_off: seconds(off)?,
    })
}

/// `RxC`, e.g. `3x4`.
pub fn copies(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("`{s}` must have the form RxC"))?;
    let r: usize = r.parse().map_err(|_| format!("invalid row count in `{s}`"))?;
    let c: usize = c.parse().map_err(|_| format!("invalid column count in `{s}`"))?;
    if r == 0 || c == 0 {
        return Err(format!("`{s}`: rows and columns must be >= 1"));
    }
    Ok((r, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fault_with_units() {
        let f = fault("1:81:10ohm:10ms:30ms").unwrap();
        assert_eq!(f.bus_a, 1);
        assert_eq!(f.bus_b, Terminal::Bus(81));
        assert_eq!(f.fault_resistance, 10.0);
        assert!((f.t_on - 0.01).abs() < 1e-15);
        assert!((f.t_off - 0.03).abs() < 1e-15);
    }

    #[test]
    fn parses_ground_fault() {
        let f = fault("4:gnd:0.5:0.002s:0.004").unwrap();
        assert_eq!(f.bus_b, Terminal::Ground);
        assert_eq!(f.fault_resistance, 0.5);
        assert_eq!(f.t_off, 0.004);
    }

    #[test]
    fn rejects_malformed_fault() {
        assert!(fault("1:2:10ohm:10ms").is_err());
        assert!(fault("1:x:10ohm:10ms:20ms").is_err());
        assert!(fault("1:2:abc:10ms:20ms").is_err());
    }

    #[test]
    fn parses_copies() {
        assert_eq!(copies("3x4").unwrap(), (3, 4));
        assert!(copies("0x2").is_err());
        assert!(copies("3").is_err());
    }
}
