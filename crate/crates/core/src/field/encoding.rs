//! Multiresolution grid indexing.

use glam::DVec3;

/// Per-axis multipliers of the spatial hash; the x multiplier is 1.
pub const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

/// Layout of one resolution level inside the parameter blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Level {
    pub resolution: u32,
    /// Number of table rows; each row holds `features` floats.
    pub entries: u32,
    pub dense: bool,
    /// Offset of row 0 in the parameter blob.
    pub offset: usize,
}

impl Level {
    pub fn new(resolution: u32, table_size: u32, offset: usize) -> Self {
        let side = resolution as u64 + 1;
        let dense = side * side * side <= table_size as u64;
        let entries = if dense { (side * side * side) as u32 } else { table_size };
        Self { resolution, entries, dense, offset }
    }

    /// Table row of integer grid vertex `(i, j, k)`, each in `0..=resolution`.
    pub fn row(&self, i: u32, j: u32, k: u32) -> u32 {
        if self.dense {
            let side = self.resolution + 1;
            i + side * (j + side * k)
        } else {
            let h = i.wrapping_mul(HASH_PRIMES[0]) ^ j.wrapping_mul(HASH_PRIMES[1]) ^ k.wrapping_mul(HASH_PRIMES[2]);
            h & (self.entries - 1)
        }
    }

    /// The 8 corner rows around unit-cube point `x` and their trilinear weights.
    pub fn corners(&self, x: DVec3) -> [(u32, f64); 8] {
        let n = self.resolution as f64;
        let s = x * n;
        let cell = s.floor().min(DVec3::splat(n - 1.0)).max(DVec3::ZERO);
        let f = s - cell;
        let (ci, cj, ck) = (cell.x as u32, cell.y as u32, cell.z as u32);
        let mut out = [(0u32, 0f64); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (dx, dy, dz) = ((c & 1) as u32, ((c >> 1) & 1) as u32, ((c >> 2) & 1) as u32);
            let wx = if dx == 1 { f.x } else { 1.0 - f.x };
            let wy = if dy == 1 { f.y } else { 1.0 - f.y };
            let wz = if dz == 1 { f.z } else { 1.0 - f.z };
            *slot = (self.row(ci + dx, cj + dy, ck + dz), wx * wy * wz);
        }
        out
    }
}

/// `N_l = floor(N_base * b^l)` with `b = exp(ln(N_max / N_base) / (L - 1))`.
pub fn level_resolutions(levels: u32, base: u32, max: u32) -> Vec<u32> {
    if levels == 1 {
        return vec![base];
    }
    let b = ((max as f64 / base as f64).ln() / (levels - 1) as f64).exp();
    (0..levels).map(|l| (base as f64 * b.powi(l as i32)).floor() as u32).collect()
}
