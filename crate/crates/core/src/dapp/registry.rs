use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hash::{hash_bytes, Digest256};
use crate::ids::DeviceId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enrollment {
    pub credential_digest: Digest256,
    pub enrolled: bool,
}

/// Permissioned device list holding digests of pre-shared keys.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRegistry {
    entries: BTreeMap<DeviceId, Enrollment>,
}

impl DeviceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enroll(&mut self, device: DeviceId, credential: &[u8]) {
        self.entries.insert(device, Enrollment { credential_digest: hash_bytes(credential), enrolled: true });
    }

    /// Keeps the entry but stops it from authenticating.
    pub fn revoke(&mut self, device: DeviceId) -> bool {
        match self.entries.get_mut(&device) {
            Some(e) => {
                e.enrolled = false;
                true
            }
            None => false,
        }
    }

    /// `true` iff `device` is enrolled and `credential` hashes to its digest.
    pub fn authenticate(&self, device: DeviceId, credential: &[u8]) -> bool {
        self.entries.get(&device).is_some_and(|e| e.enrolled && e.credential_digest == hash_bytes(credential))
    }

    pub fn enrolled(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.entries.iter().filter(|(_, e)| e.enrolled).map(|(d, _)| *d)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
