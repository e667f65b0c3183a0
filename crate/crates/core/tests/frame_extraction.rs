use std::path::Path;

use rehab_vlm::ingest::{CropRect, ExternalExtractor, FrameRequest, FrameSource, IngestError, VideoRef};

/// A stand-in for ffmpeg that writes its time and filter arguments as the image.
fn fake_tool(cache: &Path) -> ExternalExtractor {
    let script = r#"printf 'frame t=%s vf=%s' "$1" "$2" > "$3""#;
    ExternalExtractor::with_template(
        cache,
        ["sh", "-c", script, "fake", "{time}", "{crop}", "{output}"].map(String::from).to_vec(),
    )
}

fn video(dir: &Path) -> VideoRef {
    let path = dir.join("clip.mp4");
    std::fs::write(&path, b"not really a video").unwrap();
    VideoRef::new("clip", path, 30.0, 120)
}

#[test]
fn extracts_and_caches_sampled_frames() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(dir.path());
    let ex = fake_tool(&dir.path().join("cache"));
    let reqs: Vec<FrameRequest> = (0..8).map(|i| FrameRequest::full(i * 15)).collect();

    let paths = ex.extract(&v, &reqs).unwrap();
    assert_eq!(paths.len(), 8);
    assert_eq!(ex.spawn_count(), 8);
    assert_eq!(std::fs::read_to_string(&paths[2]).unwrap(), "frame t=1.000000 vf=null");

    let again = ex.extract(&v, &reqs).unwrap();
    assert_eq!(again, paths);
    assert_eq!(ex.spawn_count(), 8, "cached frames are not re-extracted");

    let crop = CropRect { x: 73, y: 0, width: 224, height: 224 };
    let frames = ex.frames(&v, &[FrameRequest::cropped(30, crop)]).unwrap();
    assert_eq!(&*frames[0].bytes, b"frame t=1.000000 vf=crop=224:224:73:0");
    assert_eq!(frames[0].mime, "image/png");
}

#[test]
fn cache_survives_a_new_extractor() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(dir.path());
    let cache = dir.path().join("cache");
    fake_tool(&cache).extract(&v, &[FrameRequest::full(3)]).unwrap();
    let second = fake_tool(&cache);
    second.extract(&v, &[FrameRequest::full(3)]).unwrap();
    assert_eq!(second.spawn_count(), 0);
}

#[test]
fn out_of_range_index_is_rejected_before_spawning() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(dir.path());
    let ex = fake_tool(&dir.path().join("cache"));
    let err = ex.extract(&v, &[FrameRequest::full(0), FrameRequest::full(120)]).unwrap_err();
    assert!(matches!(err, IngestError::Extraction { index: 120, .. }), "{err}");
    assert_eq!(ex.spawn_count(), 0);
}

#[test]
fn tool_failure_reports_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(dir.path());
    let ex = ExternalExtractor::with_template(
        dir.path().join("cache"),
        ["sh", "-c", "echo decoder exploded >&2; exit 3"].map(String::from).to_vec(),
    );
    let err = ex.extract(&v, &[FrameRequest::full(1)]).unwrap_err().to_string();
    assert!(err.contains("decoder exploded"), "{err}");
}

#[test]
fn empty_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(dir.path());
    let ex = ExternalExtractor::with_template(
        dir.path().join("cache"),
        ["sh", "-c", ": > \"$1\"", "fake", "{output}"].map(String::from).to_vec(),
    );
    assert!(ex.extract(&v, &[FrameRequest::full(1)]).is_err());
}

#[test]
fn missing_video_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let v = VideoRef::new("gone", dir.path().join("gone.mp4"), 30.0, 10);
    let ex = fake_tool(&dir.path().join("cache"));
    assert!(matches!(ex.extract(&v, &[FrameRequest::full(1)]), Err(IngestError::Io { .. })));
}
