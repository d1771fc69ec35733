//! Outbound text messages. Carrier delivery is out of scope; these adapters
//! print, append to a transcript, or keep messages in memory.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmsMessage {
    pub phone: String,
    pub body: String,
    pub sent_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("sms delivery failed: {0}")]
pub struct SmsError(pub String);

pub trait SmsSender: Send + Sync {
    fn send(&self, phone: &str, body: &str) -> Result<(), SmsError>;
}

/// Prints each message to stdout.
#[derive(Debug, Default)]
pub struct ConsoleSms;

impl SmsSender for ConsoleSms {
    fn send(&self, phone: &str, body: &str) -> Result<(), SmsError> {
        println!("[sms to {phone}] {body}");
        Ok(())
    }
}

/// Appends `{phone, body, sent_at}` lines to a file.
#[derive(Debug)]
pub struct TranscriptSms {
    path: PathBuf,
    lock: Mutex<()>,
}

impl TranscriptSms {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        TranscriptSms {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn read(path: impl Into<PathBuf>) -> std::io::Result<Vec<SmsMessage>> {
        let text = match std::fs::read_to_string(path.into()) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(e),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
            .collect()
    }
}

impl SmsSender for TranscriptSms {
    fn send(&self, phone: &str, body: &str) -> Result<(), SmsError> {
        let msg = SmsMessage {
            phone: phone.into(),
            body: body.into(),
            sent_at: Utc::now(),
        };
        let mut line = serde_json::to_vec(&msg).map_err(|e| SmsError(e.to_string()))?;
        line.push(b'\n');
        let _g = self.lock.lock();
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| f.write_all(&line))
            .map_err(|e| SmsError(format!("{}: {e}", self.path.display())))
    }
}

/// Test double.
#[derive(Debug, Default)]
pub struct MemorySms {
    sent: Mutex<Vec<SmsMessage>>,
}

impl MemorySms {
    pub fn sent(&self) -> Vec<SmsMessage> {
        self.sent.lock().clone()
    }
}

impl SmsSender for MemorySms {
    fn send(&self, phone: &str, body: &str) -> Result<(), SmsError> {
        self.sent.lock().push(SmsMessage {
            phone: phone.into(),
            body: body.into(),
            sent_at: Utc::now(),
        });
        Ok(())
    }
}
