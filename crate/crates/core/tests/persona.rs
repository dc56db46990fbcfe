mod support;

use std::collections::HashMap;

use audiobook_core::backends::mock::VoiceProfile;
use audiobook_core::backends::{MockImage, ScriptTable, ScriptedLlm, SyntheticVoiceTts};
use audiobook_core::eval::{extract_pitch, PitchParams};
use audiobook_core::persona::{
    build_persona, build_personas, extract_speakers, face_filter, generate_face_persona, load_personas,
    write_persona, PersonaConfig, PersonaDraft, PersonaError,
};
use audiobook_core::story::{load_story, validate_persona_set, Story};
use serde_json::{json, Value};

fn scripted(tag: &str, answers: Vec<String>) -> ScriptedLlm {
    ScriptedLlm::new(ScriptTable::new(HashMap::from([(tag.to_string(), answers)])))
}

fn alice_and_bob() -> Story {
    Story::from_text(
        Some("alice-bob"),
        "Tea",
        "I put the kettle on. “Is it ready?” asked Alice. “Almost,” said Bob. We drank it on the step.",
    )
    .unwrap()
}

fn draft(id: &str, caption: &str) -> PersonaDraft {
    PersonaDraft {
        speaker_id: id.into(),
        name_or_role: id.into(),
        caption: caption.into(),
        is_narrator: id == "narrator",
    }
}

#[test]
fn dialogue_story_yields_narrator_plus_two() {
    let cast = json!({
        "narrator": {"name": "Me", "caption": "A young woman in a wool sweater."},
        "characters": [
            {"name": "Alice", "caption": "A girl with red braids."},
            {"name": "Bob", "caption": "A lanky man with a crooked nose."},
        ],
    });
    let llm = scripted("extract_speakers/alice-bob/0", vec![cast.to_string()]);
    let drafts = extract_speakers(&alice_and_bob(), &llm, &PersonaConfig::default()).unwrap();
    let ids: Vec<&str> = drafts.iter().map(|d| d.speaker_id.as_str()).collect();
    assert_eq!(ids, ["narrator", "alice", "bob"]);
    assert!(drafts[0].is_narrator && !drafts[1].is_narrator && !drafts[2].is_narrator);
}

#[test]
fn story_without_dialogue_yields_only_the_narrator() {
    let story = Story::from_text(Some("quiet"), "Quiet", "The snow fell. Nobody came.").unwrap();
    let cast = json!({"narrator": {"name": "Narrator", "caption": "An old storyteller."}, "characters": []});
    let llm = scripted("extract_speakers/quiet/0", vec![cast.to_string()]);
    let drafts = extract_speakers(&story, &llm, &PersonaConfig::default()).unwrap();
    assert_eq!(drafts.len(), 1);
    assert!(drafts[0].is_narrator);
}

#[test]
fn schema_violations_exhaust_into_extraction_error() {
    let llm = scripted("extract_speakers/alice-bob/0", vec![r#"{"characters": []}"#.into()]);
    let err = extract_speakers(&alice_and_bob(), &llm, &PersonaConfig::default()).unwrap_err();
    assert!(matches!(err, PersonaError::Extraction(_)));
    assert!(err.to_string().starts_with("speaker extraction failed"), "{err}");
}

#[test]
fn twelve_story_suite_averages_about_four_speakers() {
    let table = ScriptTable::from_file(&support::fixture("suite/cast.json")).unwrap();
    let llm = ScriptedLlm::new(table);
    let counts: Vec<usize> = (1..=12)
        .map(|i| {
            let id = format!("suite-{i:02}");
            let story = load_story(&support::fixture(&format!("suite/{id}.txt")), Some(&id)).unwrap();
            extract_speakers(&story, &llm, &PersonaConfig::default()).unwrap().len()
        })
        .collect();
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    assert!((mean - 4.3).abs() <= 1.5, "mean {mean} from {counts:?}");
}

#[test]
fn face_accepted_on_first_attempt() {
    let face = generate_face_persona(&draft("alice", "A girl with red braids."), &MockImage::new(), &PersonaConfig::default()).unwrap();
    assert_eq!(face.attempts.len(), 1);
    assert_eq!(face.attempts[0].outcome, "accepted");
    assert_eq!(face.face_caption, "portrait photo of a girl with red braids");
    assert!(face_filter(&face.face_image));
}

#[test]
fn face_accepted_after_three_rejections() {
    let image = MockImage::with_face_pattern(vec![false, false, false, true]);
    let face = generate_face_persona(&draft("bob", "A lanky man."), &image, &PersonaConfig::default()).unwrap();
    let outcomes: Vec<&str> = face.attempts.iter().map(|a| a.outcome.as_str()).collect();
    assert_eq!(outcomes, ["no face detected", "no face detected", "no face detected", "accepted"]);
    // Every attempt draws a fresh seed.
    let mut seeds: Vec<u64> = face.attempts.iter().map(|a| a.seed).collect();
    seeds.dedup();
    assert_eq!(seeds.len(), 4);
}

#[test]
fn face_exhaustion_reports_all_attempts() {
    let image = MockImage::with_face_pattern(vec![false]);
    match generate_face_persona(&draft("bob", "A lanky man."), &image, &PersonaConfig::default()) {
        Err(e @ PersonaError::NoFace { .. }) => {
            assert!(e.to_string().starts_with("no face obtained"), "{e}");
            let PersonaError::NoFace { attempts, .. } = e else { unreachable!() };
            assert_eq!(attempts.len(), 4);
        }
        other => panic!("expected NoFace, got {other:?}"),
    }
}

#[test]
fn bootstrap_voice_tracks_hash_f0() {
    let tts = SyntheticVoiceTts::new();
    let cfg = PersonaConfig::default();
    let (p, _) = build_persona(&draft("alice", "A girl with red braids."), &MockImage::new(), &tts, &cfg).unwrap();
    assert!((p.voice_sample.duration_s() - 3.0).abs() < 1e-9);
    let base = VoiceProfile::for_persona(&p.face_image, &p.face_caption).base_f0;
    let median = extract_pitch(&p.voice_sample, &PitchParams::default()).unwrap().median_f0().unwrap();
    assert!((median - base).abs() <= 3.0, "median {median} base {base}");

    let (again, _) = build_persona(&draft("alice", "A girl with red braids."), &MockImage::new(), &tts, &cfg).unwrap();
    assert_eq!(again.voice_wav(), p.voice_wav());
}

#[test]
fn personas_round_trip_through_the_store() {
    let drafts = vec![
        draft("narrator", "An old storyteller."),
        draft("alice", "A girl with red braids."),
        draft("bob", "A lanky man."),
    ];
    let personas = build_personas(&drafts, &MockImage::new(), &SyntheticVoiceTts::new(), &PersonaConfig::default()).unwrap();
    validate_persona_set(&personas).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("personas");
    for p in &personas {
        let r = write_persona(&root, p).unwrap();
        assert_eq!(r.voice_sample.path, format!("personas/{}/voice.wav", p.speaker_id));
    }
    let ids: Vec<String> = drafts.iter().map(|d| d.speaker_id.clone()).collect();
    let loaded = load_personas(&root, &ids).unwrap();
    assert_eq!(loaded, personas);

    // Tampering with a stored file is caught by the content hash.
    std::fs::write(root.join("bob/voice.wav"), b"RIFF").unwrap();
    assert!(load_personas(&root, &ids).is_err());
}

#[test]
fn stored_persona_json_is_readable() {
    let p = build_personas(&[draft("narrator", "An old storyteller.")], &MockImage::new(), &SyntheticVoiceTts::new(), &PersonaConfig::default())
        .unwrap()
        .remove(0);
    let dir = tempfile::tempdir().unwrap();
    write_persona(dir.path(), &p).unwrap();
    let json: Value = serde_json::from_slice(&std::fs::read(dir.path().join("narrator/persona.json")).unwrap()).unwrap();
    assert_eq!(json["face_caption"], "portrait photo of an old storyteller");
    assert_eq!(json["is_narrator"], true);
}
