use std::collections::BTreeMap;

use super::{Endpoint, TransportError};
use crate::matching::ProviderAdvert;

/// Device directory and advert board for one confined area. Everyone sees
/// everyone, so discovery is a snapshot of the board.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    endpoints: BTreeMap<String, Endpoint>,
    adverts: BTreeMap<String, ProviderAdvert>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, endpoint: &Endpoint) -> Result<(), TransportError> {
        match self.endpoints.get(&endpoint.device_id) {
            Some(known) if known.address != endpoint.address => {
                Err(TransportError::DuplicateDevice(endpoint.device_id.clone()))
            }
            _ => {
                self.endpoints
                    .insert(endpoint.device_id.clone(), endpoint.clone());
                Ok(())
            }
        }
    }

    pub fn deregister(&mut self, device_id: &str) {
        self.endpoints.remove(device_id);
        self.adverts.remove(device_id);
    }

    pub fn advertise(
        &mut self,
        endpoint: &Endpoint,
        advert: ProviderAdvert,
    ) -> Result<(), TransportError> {
        match self.endpoints.get(&endpoint.device_id) {
            None => return Err(TransportError::NotRegistered(endpoint.device_id.clone())),
            Some(known) if known.address != endpoint.address => {
                return Err(TransportError::DuplicateDevice(endpoint.device_id.clone()))
            }
            Some(_) => {}
        }
        if advert.provider_id != endpoint.device_id {
            return Err(TransportError::DuplicateDevice(advert.provider_id));
        }
        self.adverts.insert(advert.provider_id.clone(), advert);
        Ok(())
    }

    /// Available adverts, ordered by provider id.
    pub fn discover(&self) -> Vec<ProviderAdvert> {
        self.adverts
            .values()
            .filter(|a| a.available)
            .cloned()
            .collect()
    }

    pub fn lookup(&self, device_id: &str) -> Result<Endpoint, TransportError> {
        self.endpoints
            .get(device_id)
            .cloned()
            .ok_or_else(|| TransportError::PeerUnreachable(device_id.to_string()))
    }

    pub fn is_registered(&self, device_id: &str) -> bool {
        self.endpoints.contains_key(device_id)
    }
}
