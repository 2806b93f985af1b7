// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// A compute resource vector: cores, memory and storage.
///
/// Used both for requirements (what a deployment unit needs) and for totals
/// (PoP capacity, slice quotas, utilization).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Resources {
    pub cpu_cores: u64,
    pub memory_mb: u64,
    #[serde(default)]
    pub storage_gb: u64,
}

impl Resources {
    pub const ZERO: Resources = Resources { cpu_cores: 0, memory_mb: 0, storage_gb: 0 };

    pub const fn new(cpu_cores: u64, memory_mb: u64, storage_gb: u64) -> Self {
        Resources { cpu_cores, memory_mb, storage_gb }
    }

    /// A valid requirement needs at least one core and one MB of memory.
    pub fn is_valid_requirement(&self) -> bool {
        self.cpu_cores >= 1 && self.memory_mb >= 1
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    /// Componentwise `self <= other`.
    pub fn fits_within(&self, other: &Resources) -> bool {
        self.cpu_cores <= other.cpu_cores
            && self.memory_mb <= other.memory_mb
            && self.storage_gb <= other.storage_gb
    }

    /// How much `self` exceeds `available`, componentwise. `None` if it fits.
    pub fn deficit(&self, available: &Resources) -> Option<Resources> {
        let d = self.saturating_sub(available);
        if d.is_zero() {
            None
        } else {
            Some(d)
        }
    }

    pub fn saturating_sub(&self, other: &Resources) -> Resources {
        Resources {
            cpu_cores: self.cpu_cores.saturating_sub(other.cpu_cores),
            memory_mb: self.memory_mb.saturating_sub(other.memory_mb),
            storage_gb: self.storage_gb.saturating_sub(other.storage_gb),
        }
    }

    pub fn min_componentwise(&self, other: &Resources) -> Resources {
        Resources {
            cpu_cores: self.cpu_cores.min(other.cpu_cores),
            memory_mb: self.memory_mb.min(other.memory_mb),
            storage_gb: self.storage_gb.min(other.storage_gb),
        }
    }

    pub fn checked_sub(&self, other: &Resources) -> Option<Resources> {
        Some(Resources {
            cpu_cores: self.cpu_cores.checked_sub(other.cpu_cores)?,
            memory_mb: self.memory_mb.checked_sub(other.memory_mb)?,
            storage_gb: self.storage_gb.checked_sub(other.storage_gb)?,
        })
    }

    /// Names of the components that are non-zero, e.g. for deficit reports.
    pub fn nonzero_components(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.cpu_cores > 0 {
            out.push("cpu_cores");
        }
        if self.memory_mb > 0 {
            out.push("memory_mb");
        }
        if self.storage_gb > 0 {
            out.push("storage_gb");
        }
        out
    }
}

impl Add for Resources {
    type Output = Resources;
    fn add(self, rhs: Resources) -> Resources {
        Resources {
            cpu_cores: self.cpu_cores + rhs.cpu_cores,
            memory_mb: self.memory_mb + rhs.memory_mb,
            storage_gb: self.storage_gb + rhs.storage_gb,
        }
    }
}

impl AddAssign for Resources {
    fn add_assign(&mut self, rhs: Resources) {
        *self = *self + rhs;
    }
}

impl Sub for Resources {
    type Output = Resources;
    fn sub(self, rhs: Resources) -> Resources {
        self.checked_sub(&rhs).expect("resource subtraction underflow")
    }
}

impl SubAssign for Resources {
    fn sub_assign(&mut self, rhs: Resources) {
        *self = *self - rhs;
    }
}

impl Mul<u64> for Resources {
    type Output = Resources;
    fn mul(self, k: u64) -> Resources {
        Resources {
            cpu_cores: self.cpu_cores * k,
            memory_mb: self.memory_mb * k,
            storage_gb: self.storage_gb * k,
        }
    }
}

impl Sum for Resources {
    fn sum<I: Iterator<Item = Resources>>(iter: I) -> Resources {
        iter.fold(Resources::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a Resources> for Resources {
    fn sum<I: Iterator<Item = &'a Resources>>(iter: I) -> Resources {
        iter.fold(Resources::ZERO, |a, b| a + *b)
    }
}

impl fmt::Display for Resources {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} cores / {} MB / {} GB", self.cpu_cores, self.memory_mb, self.storage_gb)
    }
}
