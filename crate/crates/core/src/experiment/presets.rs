//! Bundled scenarios and the reference array they share.

use crate::geometry::{ArrayGeometry, Position, SubarrayGeometry};

/// Reference-sensor positions of the twelve subarrays, half-wavelengths.
pub const REFERENCE_DISPLACEMENTS: [(f64, f64); 12] = [
    (0.0, 0.0),
    (17.3, 6.0),
    (-2.4, 6.2),
    (10.5, -2.0),
    (12.7, 2.1),
    (4.6, -2.4),
    (4.6, 4.5),
    (4.5, 5.3),
    (2.3, 9.0),
    (10.2, 8.1),
    (10.2, 4.0),
    (13.4, 6.0),
];

/// Second-sensor offsets along x.
pub const REFERENCE_SPACINGS: [f64; 12] = [6.5, 4.4, 3.5, 2.6, 2.6, 2.5, 1.9, 1.5, 1.4, 1.3, 1.0, 0.5];

/// Twelve two-sensor subarrays.
pub fn reference_array() -> ArrayGeometry {
    build(None)
}

/// Reference array with a third sensor at `third` in the first subarray.
pub fn s2_array(third: Position) -> ArrayGeometry {
    build(Some(third))
}

fn build(third: Option<Position>) -> ArrayGeometry {
    let subs = REFERENCE_DISPLACEMENTS
        .iter()
        .zip(REFERENCE_SPACINGS)
        .enumerate()
        .map(|(k, (&(x, y), d))| {
            let mut offs = vec![Position::zeros(), Position::new(d, 0.0)];
            if k == 0 {
                offs.extend(third);
            }
            SubarrayGeometry::new(offs, Position::new(x, y)).expect("reference geometry is valid")
        })
        .collect();
    ArrayGeometry::new(subs).expect("reference geometry is valid")
}

pub const PRESET_NAMES: [&str; 6] = ["fig2_s1", "fig2_s2", "fig4", "fig5", "fig6", "fig7"];

/// TOML text of a bundled scenario.
pub fn preset_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "fig2_s1" => include_str!("../../presets/fig2_s1.toml"),
        "fig2_s2" => include_str!("../../presets/fig2_s2.toml"),
        "fig4" => include_str!("../../presets/fig4.toml"),
        "fig5" => include_str!("../../presets/fig5.toml"),
        "fig6" => include_str!("../../presets/fig6.toml"),
        "fig7" => include_str!("../../presets/fig7.toml"),
        _ => return None,
    })
}
