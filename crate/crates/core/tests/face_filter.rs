use std::path::PathBuf;

use audiobook_core::backends::{ImageBackend, ImageRequest, MockImage};
use audiobook_core::persona::{detect_faces, face_filter, DetectorParams};

fn fixture(name: &str) -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/images").join(name);
    std::fs::read(path).unwrap()
}

#[test]
fn real_photo_with_frontal_face_is_accepted() {
    let img = image::load_from_memory(&fixture("astronaut_256.png")).unwrap();
    let faces = detect_faces(&img, &DetectorParams::default());
    assert!(!faces.is_empty());
    // Golden region from the reference run: face near (85, 31), about 53 px wide.
    assert!(
        faces.iter().any(|r| r.x.abs_diff(85) <= 12 && r.y.abs_diff(31) <= 12 && r.w.abs_diff(53) <= 12),
        "{faces:?}"
    );
    assert!(face_filter(&fixture("astronaut_256.png")));
}

#[test]
fn uniform_gray_and_faceless_photo_are_rejected() {
    assert!(!face_filter(&fixture("gray_256.png")));
    assert!(!face_filter(&fixture("coffee_300x200.png")));
}

#[test]
fn mock_images_carry_their_face_marker() {
    let mock = MockImage::with_face_pattern(vec![false, true]);
    let req = ImageRequest {
        caption: "portrait photo of an old man with a gray beard".into(),
        seed: 7,
        width: 512,
        height: 512,
    };
    assert!(!face_filter(&mock.generate(&req).unwrap().bytes));
    assert!(face_filter(&mock.generate(&req).unwrap().bytes));
}
