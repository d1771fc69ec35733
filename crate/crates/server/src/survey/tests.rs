use std::sync::Arc;

use farelens_core::ActivityStatus;
use farelens_testkit::{ride, t0};

use super::sms::{MemorySms, SmsError, SmsSender};
use super::*;
use crate::store::{AffiliationChoice, Enrollment};

fn setup() -> (Arc<Datastore>, Arc<MemorySms>, SurveyService, String) {
    let store = Arc::new(Datastore::in_memory());
    let sms = Arc::new(MemorySms::default());
    let svc = SurveyService::new(store.clone(), sms.clone(), "https://fl.example/");
    let d = store
        .enroll(
            Enrollment {
                display_name: "Ana".into(),
                phone: "+13035550100".into(),
                affiliation: AffiliationChoice::None,
                consented: true,
                consent_version: "v1".into(),
            },
            t0(),
        )
        .unwrap()
        .driver_id;
    (store, sms, svc, d)
}

fn token_of(url: &str) -> String {
    url.rsplit('/').next().unwrap().to_string()
}

fn answers(est: f64, fair: f64, text: &str) -> Answers {
    Answers {
        estimated_take_rate_pct: est,
        fair_take_rate_pct: fair,
        factors_text: text.into(),
    }
}

#[test]
fn definition_carries_the_three_questions() {
    let def = SurveyDefinition::builtin();
    let texts: Vec<&str> = def.questions.iter().map(|q| q.text.as_str()).collect();
    assert_eq!(
        texts,
        [
            "What is your estimate of Uber's average take rate for your fares? (percentage, 0 to 100%)",
            "What do you think is a fair take rate on your fares? (percentage, 0 to 100%)",
            "What factors do you think affect your take rate the most? (free text)",
        ]
    );
    let kinds: Vec<_> = def
        .questions
        .iter()
        .map(|q| matches!(q.answer, AnswerSpec::Percentage { .. }))
        .collect();
    assert_eq!(kinds, [true, true, false]);
}

#[test]
fn one_invite_one_message() {
    let (store, sms, svc, d) = setup();
    let invite = svc.issue_invite(&d).unwrap();
    assert!(invite.url.starts_with("https://fl.example/survey/"));
    assert_eq!(token_of(&invite.url).len(), 32);
    let sent = sms.sent();
    assert_eq!(sent.len(), 1);
    assert_eq!(sent[0].phone, "+13035550100");
    assert!(sent[0].body.contains(&invite.url));
    assert!(matches!(svc.issue_invite(&d), Err(SurveyError::Refused(_))));
    assert_eq!(sms.sent().len(), 1);
    // the stored invite never holds the raw token
    let stored = store.invite_for_driver(&d).unwrap();
    assert_ne!(stored.token_hash, token_of(&invite.url));
}

#[tokio::test]
async fn deleted_driver_gets_no_invite() {
    let (store, sms, svc, d) = setup();
    store.delete_driver(&d, t0()).await.unwrap();
    assert!(matches!(svc.issue_invite(&d), Err(SurveyError::Refused(_))));
    assert!(sms.sent().is_empty());
}

struct DownSms;
impl SmsSender for DownSms {
    fn send(&self, _: &str, _: &str) -> Result<(), SmsError> {
        Err(SmsError("carrier down".into()))
    }
}

#[test]
fn failed_send_withdraws_the_invite() {
    let (store, _, _, d) = setup();
    let down = SurveyService::new(store.clone(), Arc::new(DownSms), "http://x");
    assert!(matches!(down.issue_invite(&d), Err(SurveyError::Sms(_))));
    assert!(store.invite_for_driver(&d).is_none());
    let up = SurveyService::new(store.clone(), Arc::new(MemorySms::default()), "http://x");
    assert!(up.issue_invite(&d).is_ok());
}

#[test]
fn fetch_submit_and_consume() {
    let (store, _, svc, d) = setup();
    let token = token_of(&svc.issue_invite(&d).unwrap().url);
    assert_eq!(svc.fetch(&token).unwrap().questions.len(), 3);
    let mut tampered = token.clone();
    tampered.replace_range(0..1, if token.starts_with('a') { "b" } else { "a" });
    assert_eq!(svc.fetch(&tampered), Err(SurveyError::Gone));

    let bad = svc.submit(&token, &answers(101.0, 21.0, ""));
    assert!(matches!(bad, Err(SurveyError::Validation(ref v)) if v.len() == 1));
    assert!(
        matches!(svc.submit(&token, &answers(f64::NAN, -1.0, "")), Err(SurveyError::Validation(ref v)) if v.len() == 2)
    );
    assert!(matches!(
        svc.submit(&token, &answers(5.0, 5.0, &"x".repeat(2001))),
        Err(SurveyError::Validation(_))
    ));
    assert!(
        svc.fetch(&token).is_ok(),
        "validation failure must not consume the link"
    );
    assert_eq!(svc.personal_summary(&d), Err(SurveyError::Locked));

    let stored = svc
        .submit(&token, &answers(55.0, 21.0, "airport trips"))
        .unwrap();
    assert_eq!(
        (stored.estimated_take_rate_pct, stored.fair_take_rate_pct),
        (55.0, 21.0)
    );
    assert_eq!(stored.factors_text, "airport trips");
    assert_eq!(store.response_of(&d).unwrap(), stored);
    assert_eq!(svc.fetch(&token), Err(SurveyError::Gone));
    assert_eq!(
        svc.submit(&token, &answers(1.0, 1.0, "")),
        Err(SurveyError::Conflict)
    );
    assert_eq!(
        svc.submit(&tampered, &answers(1.0, 1.0, "")),
        Err(SurveyError::Gone)
    );
}

#[test]
fn racing_submissions_have_one_winner() {
    let (store, _, svc, d) = setup();
    let token = token_of(&svc.issue_invite(&d).unwrap().url);
    let svc = Arc::new(svc);
    let handles: Vec<_> = (0..16)
        .map(|i| {
            let svc = svc.clone();
            let token = token.clone();
            std::thread::spawn(move || svc.submit(&token, &answers(i as f64, 20.0, "")))
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
    assert!(results
        .iter()
        .filter(|r| r.is_err())
        .all(|r| r == &Err(SurveyError::Conflict)));
    assert!(store.response_of(&d).is_some());
}

fn submitted_with(rates: &[(i64, i64)], cancel_all: bool) -> PersonalSummary {
    let (store, _, svc, d) = setup();
    let rows = rates
        .iter()
        .enumerate()
        .map(|(i, (price, fees))| {
            let mut r = ride(&format!("r{i}"), &d, *price, *fees, 0);
            if cancel_all {
                r.status = ActivityStatus::Cancelled;
                r = r.seal();
            }
            r
        })
        .collect();
    store.put_activities(&d, rows).unwrap();
    let token = token_of(&svc.issue_invite(&d).unwrap().url);
    svc.submit(&token, &answers(30.0, 20.0, "")).unwrap();
    svc.personal_summary(&d).unwrap()
}

#[test]
fn personal_summary_examples() {
    assert_eq!(
        submitted_with(&[(10000, 1000), (10000, 2000), (10000, 3000)], false),
        PersonalSummary::Ready {
            average_take_rate_pct: 20.0,
            highest_take_rate_pct: 30.0,
            lowest_take_rate_pct: 10.0,
            n_rides: 3
        }
    );
    assert_eq!(
        submitted_with(&[(2000, 500)], false),
        PersonalSummary::Ready {
            average_take_rate_pct: 25.0,
            highest_take_rate_pct: 25.0,
            lowest_take_rate_pct: 25.0,
            n_rides: 1
        }
    );
    assert_eq!(
        submitted_with(&[(2000, 500), (3000, 600)], true),
        PersonalSummary::NoAnalyzableRides
    );
}
