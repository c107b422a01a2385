//! Physical constants in the crate's unit system (millimetres, hertz).

use std::f64::consts::PI;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Speed of light in mm/s.
pub const SPEED_OF_LIGHT_MM: f64 = SPEED_OF_LIGHT * 1e3;

/// Free-space wavenumber in rad/mm.
#[inline]
pub fn wavenumber(frequency_hz: f64) -> f64 {
    2.0 * PI * frequency_hz / SPEED_OF_LIGHT_MM
}

/// Free-space wavelength in mm.
#[inline]
pub fn wavelength(frequency_hz: f64) -> f64 {
    SPEED_OF_LIGHT_MM / frequency_hz
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_wavelength_at_77_ghz() {
        assert!((wavelength(77e9) / 2.0 - 1.946_704).abs() < 1e-6);
    }

    #[test]
    fn wavenumber_matches_wavelength() {
        let f = 73.5e9;
        assert!((wavenumber(f) * wavelength(f) - 2.0 * PI).abs() < 1e-12);
    }
}
