//! Sub-seeds derived from the single run seed by fixed offsets.

pub const DATA: u64 = 0;
pub const BASE_INIT: u64 = 1;
pub const BASE_SHUFFLE: u64 = 2;
pub const PARTITION: u64 = 3;
pub const MEM_INIT: u64 = 4;
pub const MEM_SHUFFLE: u64 = 5;

pub fn derive(seed: u64, offset: u64) -> u64 {
    seed.wrapping_add(offset)
}
