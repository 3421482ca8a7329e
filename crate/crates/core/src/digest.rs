//! SHA-256 helpers for payload and observation fingerprints.

use alloc::string::String;
use core::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::domain::{Observation, Pose};

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

/// Incremental hash over observations using exact bit patterns.
pub struct ObsHasher(Sha256);

impl Default for ObsHasher {
    fn default() -> Self {
        Self::new()
    }
}

impl ObsHasher {
    pub fn new() -> Self {
        Self(Sha256::new())
    }

    fn pose(&mut self, p: &Pose) {
        for v in [p.x, p.y, p.z, p.yaw] {
            self.0.update(v.to_bits().to_le_bytes());
        }
    }

    fn str(&mut self, s: &str) {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
    }

    pub fn observation(&mut self, o: &Observation) {
        self.0.update(o.tick.to_le_bytes());
        self.pose(&o.gripper_pose);
        self.0.update([o.gripper_open as u8]);
        match &o.held_object {
            Some(id) => {
                self.0.update([1]);
                self.str(id);
            }
            None => self.0.update([0]),
        }
        self.pose(&o.goal);
        self.0.update((o.objects.len() as u64).to_le_bytes());
        for (id, p) in &o.objects {
            self.str(id);
            self.pose(p);
        }
    }

    pub fn finish_hex(self) -> String {
        hex(&self.0.finalize())
    }
}
