//! On-disk persona store: `personas/<speaker_id>/{persona.json, face.png, voice.wav}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PersonaError;
use crate::audio::AudioBuffer;
use crate::hash::sha256_hex;
use crate::story::{FileRef, PersonaRef, SpeakerPersona};

/// Contents of `persona.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredPersona {
    pub speaker_id: String,
    pub name_or_role: String,
    pub caption: String,
    pub face_caption: String,
    pub face_format: String,
    pub is_narrator: bool,
    pub face_image: FileRef,
    pub voice_sample: FileRef,
}

fn io(path: &Path, e: impl std::fmt::Display) -> PersonaError {
    PersonaError::Store(format!("{}: {e}", path.display()))
}

/// Writes one persona under `root` (the `personas/` directory). Paths in the
/// returned reference are relative to `root`'s parent.
pub fn write_persona(root: &Path, persona: &SpeakerPersona) -> Result<PersonaRef, PersonaError> {
    let dir = root.join(&persona.speaker_id);
    std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    let rel = |name: &str| format!("personas/{}/{name}", persona.speaker_id);
    let face_name = format!("face.{}", persona.face_format);
    let voice = persona.voice_wav();
    let stored = StoredPersona {
        speaker_id: persona.speaker_id.clone(),
        name_or_role: persona.name_or_role.clone(),
        caption: persona.caption.clone(),
        face_caption: persona.face_caption.clone(),
        face_format: persona.face_format.clone(),
        is_narrator: persona.is_narrator,
        face_image: FileRef::of(rel(&face_name), &persona.face_image),
        voice_sample: FileRef::of(rel("voice.wav"), &voice),
    };
    let mut json = serde_json::to_vec_pretty(&stored).expect("persona serializes");
    json.push(b'\n');
    for (name, bytes) in [
        (face_name.as_str(), persona.face_image.as_slice()),
        ("voice.wav", voice.as_slice()),
        ("persona.json", json.as_slice()),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| io(&path, e))?;
    }
    Ok(PersonaRef {
        speaker_id: stored.speaker_id.clone(),
        name_or_role: stored.name_or_role.clone(),
        is_narrator: stored.is_narrator,
        persona: FileRef::of(rel("persona.json"), &json),
        face_image: stored.face_image,
        voice_sample: stored.voice_sample,
    })
}

fn read_checked(path: &Path, expected: &str) -> Result<Vec<u8>, PersonaError> {
    let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
    if sha256_hex(&bytes) != expected {
        return Err(io(path, "content hash mismatch"));
    }
    Ok(bytes)
}

/// Reads a persona directory, verifying the stored content hashes.
pub fn read_persona(dir: &Path) -> Result<SpeakerPersona, PersonaError> {
    let json_path = dir.join("persona.json");
    let text = std::fs::read_to_string(&json_path).map_err(|e| io(&json_path, e))?;
    let stored: StoredPersona = serde_json::from_str(&text).map_err(|e| io(&json_path, e))?;
    let file = |r: &FileRef| {
        let name = r.path.rsplit('/').next().unwrap_or_default();
        read_checked(&dir.join(name), &r.sha256)
    };
    let face_image = file(&stored.face_image)?;
    let voice_bytes = file(&stored.voice_sample)?;
    let voice_sample = AudioBuffer::from_wav_bytes(&voice_bytes).map_err(|e| io(dir, e))?;
    let persona = SpeakerPersona {
        speaker_id: stored.speaker_id,
        name_or_role: stored.name_or_role,
        caption: stored.caption,
        face_image,
        face_format: stored.face_format,
        face_caption: stored.face_caption,
        voice_sample,
        is_narrator: stored.is_narrator,
    };
    persona.validate().map_err(|e| io(dir, e))?;
    Ok(persona)
}

/// Reads the personas named by `ids`, in that order.
pub fn load_personas(root: &Path, ids: &[String]) -> Result<Vec<SpeakerPersona>, PersonaError> {
    ids.iter().map(|id| read_persona(&root.join(id))).collect()
}
