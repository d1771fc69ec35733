//! Take-rate survey: single-use links, one response per driver, and the
//! personal summary unlocked by answering.

pub mod sms;

use std::sync::Arc;

use chrono::Utc;
use farelens_core::clean::clean;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{hash_secret, Datastore, StoreError, SurveyResponse};
use sms::SmsSender;

const BUILTIN_DEFINITION: &str = include_str!("../../surveys/take_rate_v1.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnswerSpec {
    Percentage { min: f64, max: f64 },
    FreeText { max_chars: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub answer: AnswerSpec,
}

/// A versioned survey document. Answer keys are the question ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyDefinition {
    pub survey_id: String,
    pub version: String,
    pub intro: String,
    pub questions: Vec<Question>,
    /// `{link}` is replaced by the survey URL.
    pub invite_message: String,
}

impl SurveyDefinition {
    pub fn builtin() -> SurveyDefinition {
        serde_json::from_str(BUILTIN_DEFINITION).expect("bundled survey definition parses")
    }

    /// Checks every answer against its question; returns all problems.
    pub fn validate(&self, answers: &Answers) -> Result<(), Vec<String>> {
        let value = serde_json::to_value(answers).expect("answers serialize");
        let mut problems = Vec::new();
        for q in &self.questions {
            let v = value.get(&q.id);
            match &q.answer {
                AnswerSpec::Percentage { min, max } => match v.and_then(|v| v.as_f64()) {
                    Some(x) if x.is_finite() && *min <= x && x <= *max => {}
                    _ => problems.push(format!("{} must be a number from {min} to {max}", q.id)),
                },
                AnswerSpec::FreeText { max_chars } => match v.and_then(|v| v.as_str()) {
                    Some(s) if s.chars().count() <= *max_chars => {}
                    Some(_) => {
                        problems.push(format!("{} must be at most {max_chars} characters", q.id))
                    }
                    None => problems.push(format!("{} must be text", q.id)),
                },
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answers {
    pub estimated_take_rate_pct: f64,
    pub fair_take_rate_pct: f64,
    #[serde(default)]
    pub factors_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PersonalSummary {
    Ready {
        average_take_rate_pct: f64,
        highest_take_rate_pct: f64,
        lowest_take_rate_pct: f64,
        n_rides: usize,
    },
    /// Every ride was excluded by cleaning.
    NoAnalyzableRides,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IssuedInvite {
    pub driver_id: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurveyError {
    #[error("invite refused: {0}")]
    Refused(String),
    #[error("survey link is no longer valid")]
    Gone,
    #[error("survey already submitted")]
    Conflict,
    #[error("invalid answers: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("personal summary is available after the survey is submitted")]
    Locked,
    #[error("driver {0} not found")]
    NotFound(String),
    #[error(transparent)]
    Sms(#[from] sms::SmsError),
    #[error(transparent)]
    Store(StoreError),
}

pub struct SurveyService {
    store: Arc<Datastore>,
    sms: Arc<dyn SmsSender>,
    base_url: String,
    definition: SurveyDefinition,
}

impl SurveyService {
    pub fn new(store: Arc<Datastore>, sms: Arc<dyn SmsSender>, base_url: &str) -> Self {
        SurveyService {
            store,
            sms,
            base_url: base_url.trim_end_matches('/').to_string(),
            definition: SurveyDefinition::builtin(),
        }
    }

    pub fn with_definition(mut self, definition: SurveyDefinition) -> Self {
        self.definition = definition;
        self
    }

    pub fn definition(&self) -> &SurveyDefinition {
        &self.definition
    }

    /// Persists an invite and texts the link. At most one invite per driver;
    /// if the message cannot be sent the invite is withdrawn so a later
    /// attempt can retry.
    pub fn issue_invite(&self, driver_id: &str) -> Result<IssuedInvite, SurveyError> {
        if self.store.is_tombstoned(driver_id) {
            return Err(SurveyError::Refused(format!(
                "driver {driver_id} has been deleted"
            )));
        }
        if self.store.invite_for_driver(driver_id).is_some() {
            return Err(SurveyError::Refused(format!(
                "driver {driver_id} was already invited"
            )));
        }
        let profile = self
            .store
            .profile(driver_id)
            .ok_or_else(|| SurveyError::NotFound(driver_id.into()))?;
        let mut raw = [0u8; 16];
        rand::Rng::fill(&mut rand::rngs::OsRng, &mut raw);
        let token = hex::encode(raw);
        let hash = hash_secret(&token);
        self.store
            .create_invite(driver_id, &hash, Utc::now())
            .map_err(|e| match e {
                StoreError::Conflict(m) | StoreError::Gone(m) => SurveyError::Refused(m),
                other => SurveyError::Store(other),
            })?;
        let url = format!("{}/survey/{token}", self.base_url);
        let body = self.definition.invite_message.replace("{link}", &url);
        if let Err(e) = self.sms.send(&profile.phone, &body) {
            if let Err(revoke) = self.store.revoke_invite(&hash) {
                tracing::error!(error = %revoke, "could not withdraw unsent invite");
            }
            return Err(e.into());
        }
        tracing::info!(driver_id, "survey invite sent");
        Ok(IssuedInvite {
            driver_id: driver_id.into(),
            url,
        })
    }

    /// The questions, if the link is live. Lookup is by hash of the
    /// presented token, so timing does not depend on how much of it matches.
    pub fn fetch(&self, token: &str) -> Result<&SurveyDefinition, SurveyError> {
        match self.store.invite_by_hash(&hash_secret(token)) {
            Some(invite) if !invite.consumed => Ok(&self.definition),
            _ => Err(SurveyError::Gone),
        }
    }

    /// Validates first so a bad answer never burns the link.
    pub fn submit(&self, token: &str, answers: &Answers) -> Result<SurveyResponse, SurveyError> {
        self.definition
            .validate(answers)
            .map_err(SurveyError::Validation)?;
        let now = Utc::now();
        self.store
            .submit_response(&hash_secret(token), |driver_id| SurveyResponse {
                driver_id: driver_id.into(),
                estimated_take_rate_pct: answers.estimated_take_rate_pct,
                fair_take_rate_pct: answers.fair_take_rate_pct,
                factors_text: answers.factors_text.clone(),
                submitted_at: now,
            })
            .map_err(|e| match e {
                StoreError::NotFound(_) | StoreError::Gone(_) => SurveyError::Gone,
                StoreError::Conflict(_) => SurveyError::Conflict,
                other => SurveyError::Store(other),
            })
    }

    /// Average, highest and lowest take rate over the driver's retained rides.
    pub fn personal_summary(&self, driver_id: &str) -> Result<PersonalSummary, SurveyError> {
        if self.store.response_of(driver_id).is_none() {
            return Err(SurveyError::Locked);
        }
        let rows = self.store.activities_of(driver_id);
        let (retained, _) = clean(&rows);
        if retained.is_empty() {
            return Ok(PersonalSummary::NoAnalyzableRides);
        }
        let rates: Vec<f64> = retained.iter().map(|r| r.take_rate_pct).collect();
        let highest = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lowest = rates.iter().copied().fold(f64::INFINITY, f64::min);
        // rounding can push the mean of equal values just past them
        let average = (rates.iter().sum::<f64>() / rates.len() as f64).clamp(lowest, highest);
        Ok(PersonalSummary::Ready {
            average_take_rate_pct: average,
            highest_take_rate_pct: highest,
            lowest_take_rate_pct: lowest,
            n_rides: rates.len(),
        })
    }
}

#[cfg(test)]
mod tests;
