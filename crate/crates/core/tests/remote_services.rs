mod common;

use std::sync::Arc;
use std::time::Duration;

use common::MockServer;
use facility_enum::cot::{enumerate_facility, PipelineConfig, PlanInput};
use facility_enum::detection::{fetch_detections, DetectorConfig};
use facility_enum::gateway::{
    Gateway, PromptTemplates, RemoteBackend, RemoteConfig, LLM_KEY_ENV, LLM_URL_ENV,
};
use facility_enum::model::{FacilityType, FloorPlanRef};
use facility_enum::synth::{generate, DoorsPerRoom, ScenarioSpec};
use facility_enum::{Error, RetryPolicy};

fn quick_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        initial_backoff: Duration::from_millis(5),
        timeout: Duration::from_secs(10),
    }
}

fn plan_on_disk() -> (tempfile::TempDir, FloorPlanRef) {
    let s = generate(&ScenarioSpec::random(2, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.png");
    std::fs::write(&path, &s.png).unwrap();
    let plan = FloorPlanRef::from_image_bytes("plan", &s.png, path.to_string_lossy()).unwrap();
    (dir, plan)
}

fn detector(url: &str) -> DetectorConfig {
    DetectorConfig {
        endpoint: Some(url.to_string()),
        retry: quick_retry(),
        ..Default::default()
    }
}

#[test]
fn detector_returns_two_doors() {
    let server = MockServer::start(|req, _| {
        assert_eq!(req.header("content-type"), Some("image/png"));
        assert!(req.body.starts_with(b"\x89PNG"));
        (
            200,
            r#"{"plan_id":"plan","detector":"mock","detections":[
                {"box":[10,10,30,30],"confidence":0.9},
                {"box":[100,40,120,60],"confidence":0.7}]}"#
                .to_string(),
        )
    });
    let (_dir, plan) = plan_on_disk();
    let set = fetch_detections(&plan, &detector(&server.url)).unwrap();
    assert_eq!(set.doors.len(), 2);
    assert_eq!(set.doors[1].door_id, 1);
    assert_eq!(server.hits(), 1);
}

#[test]
fn detector_5xx_reports_attempts() {
    let server = MockServer::start(|_, _| (503, "{}".to_string()));
    let (_dir, plan) = plan_on_disk();
    match fetch_detections(&plan, &detector(&server.url)) {
        Err(Error::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected transport error, got {other:?}"),
    }
    assert_eq!(server.hits(), 3);
}

#[test]
fn detector_recovers_after_one_failure() {
    let server = MockServer::start(|_, i| {
        if i == 0 {
            (500, "{}".into())
        } else {
            (
                200,
                r#"{"plan_id":"plan","detector":"m","detections":[]}"#.into(),
            )
        }
    });
    let (_dir, plan) = plan_on_disk();
    assert!(fetch_detections(&plan, &detector(&server.url))
        .unwrap()
        .doors
        .is_empty());
    assert_eq!(server.hits(), 2);
}

#[test]
fn detector_missing_confidence_is_protocol_error() {
    let server = MockServer::start(|_, _| {
        (
            200,
            r#"{"plan_id":"plan","detector":"m","detections":[{"box":[1,1,5,5]}]}"#.to_string(),
        )
    });
    let (_dir, plan) = plan_on_disk();
    let err = fetch_detections(&plan, &detector(&server.url)).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    assert!(err.to_string().contains("confidence"), "{err}");
}

#[test]
fn detector_4xx_is_not_retried() {
    let server = MockServer::start(|_, _| (400, r#"{"error":"bad image"}"#.to_string()));
    let (_dir, plan) = plan_on_disk();
    assert!(matches!(
        fetch_detections(&plan, &detector(&server.url)),
        Err(Error::Protocol(_))
    ));
    assert_eq!(server.hits(), 1);
}

fn remote(url: &str) -> RemoteBackend {
    let mut cfg = RemoteConfig::from_lookup(|n| match n {
        n if n == LLM_KEY_ENV => Some("test-key".into()),
        n if n == LLM_URL_ENV => Some(url.to_string()),
        _ => None,
    })
    .unwrap();
    cfg.retry = quick_retry();
    cfg.rate_limit.requests_per_second = 0.0;
    RemoteBackend::new(cfg)
}

fn chat(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}

/// Plays the model over HTTP using the scenario's ground truth.
#[test]
fn chat_completions_drive_the_pipeline() {
    let spec = ScenarioSpec {
        rooms: [(FacilityType::Toilet, 2)].into(),
        doors_per_room: DoorsPerRoom::Exact {
            two_door_rooms: [(FacilityType::Toilet, 1)].into(),
        },
        doorless_rooms: [(FacilityType::Toilet, 1)].into(),
        decoy_doors: 1,
        ..ScenarioSpec::empty(5)
    };
    let s = generate(&spec).unwrap();
    let fixture = s.fixture.clone();
    let doors = s.doors.clone();
    let server = MockServer::start(move |req, _| {
        assert_eq!(req.path, "/v1/chat/completions");
        assert_eq!(req.header("authorization"), Some("Bearer test-key"));
        let body = req.json();
        let content = &body["messages"][0]["content"];
        let text = content[0]["text"].as_str().unwrap().to_string();
        assert!(content[1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/png;base64,"));
        // prompts name boxes by coordinates, so map them back to ids
        let mentioned: Vec<u32> = doors
            .iter()
            .filter(|d| text.contains(&d.bbox.to_string()))
            .map(|d| d.door_id)
            .collect();
        let reply = if text.contains("NOT associated") {
            format!(
                "{}. Reason: an open area.",
                fixture.missing(FacilityType::Toilet)
            )
        } else if text.contains("Two doors") {
            let yes = fixture.same_room(mentioned[0], mentioned[1]);
            format!("{}, they share a room.", if yes { "Yes" } else { "No" })
        } else {
            let yes = fixture.connects(FacilityType::Toilet, mentioned[0]);
            format!(
                "{}. Reason: the door opens into it.",
                if yes { "Yes" } else { "No" }
            )
        };
        (200, chat(&reply))
    });

    let gateway = Gateway::new(
        Arc::new(remote(&format!("{}/v1", server.url))),
        PromptTemplates::builtin("v1").unwrap(),
    );
    let input = PlanInput::new(s.plan.clone(), &s.png, s.doors.clone()).unwrap();
    let run =
        enumerate_facility(&input, &gateway, &PipelineConfig::new(FacilityType::Toilet)).unwrap();
    assert_eq!(run.result.n_final(), s.truth[&FacilityType::Toilet]);
    assert_eq!(run.result.n_final(), 3);
    assert!(server.hits() >= 4);
}

#[test]
fn unparseable_reply_gets_one_strict_followup() {
    let server = MockServer::start(|req, i| {
        let body = req.json();
        if i == 0 {
            assert_eq!(body["messages"].as_array().unwrap().len(), 1);
            (200, chat("Hard to say from this drawing."))
        } else {
            let msgs = body["messages"].as_array().unwrap();
            assert_eq!(msgs.len(), 3);
            assert_eq!(msgs[1]["content"], "Hard to say from this drawing.");
            assert!(msgs[2]["content"].as_str().unwrap().contains("strictly"));
            (200, chat("yes"))
        }
    });
    let s = generate(&ScenarioSpec::random(11, 1)).unwrap();
    let gateway = Gateway::new(
        Arc::new(remote(&server.url)),
        PromptTemplates::builtin("v1").unwrap(),
    );
    let input = PlanInput::new(s.plan.clone(), &s.png, s.doors.clone()).unwrap();
    let s1 = facility_enum::cot::stage1_connection(
        &input,
        &gateway,
        &PipelineConfig::new(FacilityType::Kitchen),
    )
    .unwrap();
    assert_eq!(s1.connected, vec![0]);
    assert_eq!(server.hits(), 2);
}

#[test]
fn chat_5xx_surfaces_as_tagged_transport_error() {
    let server = MockServer::start(|_, _| (502, "{}".to_string()));
    let s = generate(&ScenarioSpec::random(12, 1)).unwrap();
    let gateway = Gateway::new(
        Arc::new(remote(&server.url)),
        PromptTemplates::builtin("v1").unwrap(),
    );
    let input = PlanInput::new(s.plan.clone(), &s.png, s.doors.clone()).unwrap();
    let err =
        enumerate_facility(&input, &gateway, &PipelineConfig::new(FacilityType::Exit)).unwrap_err();
    match &err {
        Error::Stage {
            facility, source, ..
        } => {
            assert_eq!(*facility, FacilityType::Exit);
            assert!(
                matches!(**source, Error::Transport { attempts: 3, .. }),
                "{source}"
            );
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn chat_reply_without_choices_is_protocol_error() {
    let server = MockServer::start(|_, _| (200, r#"{"choices":[]}"#.to_string()));
    let s = generate(&ScenarioSpec::random(13, 1)).unwrap();
    let gateway = Gateway::new(
        Arc::new(remote(&server.url)),
        PromptTemplates::builtin("v1").unwrap(),
    );
    let input = PlanInput::new(s.plan.clone(), &s.png, s.doors.clone()).unwrap();
    let err =
        enumerate_facility(&input, &gateway, &PipelineConfig::new(FacilityType::Exit)).unwrap_err();
    assert!(matches!(err.root(), Error::Protocol(_)), "{err}");
}

#[test]
fn missing_key_names_the_variable() {
    let err = RemoteConfig::from_lookup(|_| None).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains(LLM_KEY_ENV), "{err}");
}
