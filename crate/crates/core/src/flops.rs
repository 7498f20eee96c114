use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Cost category a tally is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopCategory {
    Construction,
    Apply,
    Modify,
}

/// Atomic FLOP tallies, safe to bump from concurrent read-only applies.
#[derive(Debug, Default)]
pub struct FlopCounter {
    construction: AtomicU64,
    apply: AtomicU64,
    modify: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopSnapshot {
    pub construction: u64,
    pub apply: u64,
    pub modify: u64,
}

impl FlopCounter {
    pub fn add(&self, category: FlopCategory, flops: u64) {
        let slot = match category {
            FlopCategory::Construction => &self.construction,
            FlopCategory::Apply => &self.apply,
            FlopCategory::Modify => &self.modify,
        };
        slot.fetch_add(flops, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> FlopSnapshot {
        FlopSnapshot {
            construction: self.construction.load(Ordering::Relaxed),
            apply: self.apply.load(Ordering::Relaxed),
            modify: self.modify.load(Ordering::Relaxed),
        }
    }
}

impl Clone for FlopCounter {
    fn clone(&self) -> Self {
        let s = self.snapshot();
        Self {
            construction: AtomicU64::new(s.construction),
            apply: AtomicU64::new(s.apply),
            modify: AtomicU64::new(s.modify),
        }
    }
}

impl FlopSnapshot {
    pub fn total(&self) -> u64 {
        self.construction + self.apply + self.modify
    }

    /// Per-category difference `self - earlier`.
    pub fn since(&self, earlier: &FlopSnapshot) -> FlopSnapshot {
        FlopSnapshot {
            construction: self.construction - earlier.construction,
            apply: self.apply - earlier.apply,
            modify: self.modify - earlier.modify,
        }
    }
}
