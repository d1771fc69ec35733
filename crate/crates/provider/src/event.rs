//! Webhook events and their signatures.

use farelens_core::activity::RideActivity;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

pub const SIGNATURE_HEADER: &str = "X-Provider-Signature";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventType {
    #[serde(rename = "account.connected")]
    AccountConnected,
    #[serde(rename = "gigs.added")]
    GigsAdded,
    #[serde(rename = "gigs.updated")]
    GigsUpdated,
    #[serde(rename = "account.removed")]
    AccountRemoved,
}

/// The JSON body of one delivery. The signature travels in
/// [`SIGNATURE_HEADER`] because it is computed over these exact bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebhookEvent {
    pub event_id: String,
    pub event_type: EventType,
    pub account_id: String,
    #[serde(default)]
    pub payload: Vec<RideActivity>,
}

impl WebhookEvent {
    pub fn body(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("event serializes")
    }
}

/// Hex HMAC-SHA256 of `body` under `secret`.
pub fn sign(secret: &[u8], body: &[u8]) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(secret).expect("HMAC accepts any key length");
    mac.update(body);
    hex::encode(mac.finalize().into_bytes())
}

/// Constant-time check of a hex signature.
pub fn verify(secret: &[u8], body: &[u8], signature_hex: &str) -> bool {
    let Ok(expected) = hex::decode(signature_hex.trim()) else {
        return false;
    };
    let mut mac = Hmac::<Sha256>::new_from_slice(secret).expect("HMAC accepts any key length");
    mac.update(body);
    mac.verify_slice(&expected).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vector() {
        // RFC 4231 test case 2
        assert_eq!(
            sign(b"Jefe", b"what do ya want for nothing?"),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
        );
    }

    #[test]
    fn verify_rejects_tampering() {
        let sig = sign(b"k", b"body");
        assert!(verify(b"k", b"body", &sig));
        assert!(!verify(b"k", b"body!", &sig));
        assert!(!verify(b"other", b"body", &sig));
        assert!(!verify(b"k", b"body", "zz"));
    }

    #[test]
    fn event_type_wire_names() {
        let e = WebhookEvent {
            event_id: "e".into(),
            event_type: EventType::GigsAdded,
            account_id: "a".into(),
            payload: vec![],
        };
        let v: serde_json::Value = serde_json::from_slice(&e.body()).unwrap();
        assert_eq!(v["event_type"], "gigs.added");
    }
}
